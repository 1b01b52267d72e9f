//! Dependency-free SVG line charts with deterministic output.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 45.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.into(), points }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Highlighted points with a label.
    pub markers: Vec<(f64, f64, String)>,
    /// Use the same scale on both axes (trajectory plots).
    pub equal_aspect: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter().copied());
    let pts = pts.chain(panel.markers.iter().map(|m| (m.0, m.1)));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let my = 0.05 * (y1 - y0);
    (x0, x1, y0 - my, y1 + my)
}

fn draw_panel(out: &mut String, panel: &Panel, top: f64, width: f64, height: f64) {
    let (mut x0, mut x1, mut y0, mut y1) = bounds(panel);
    let pw = width - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = height - MARGIN_TOP - MARGIN_BOTTOM;
    if panel.equal_aspect {
        let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        x0 = cx - 0.5 * scale * pw;
        x1 = cx + 0.5 * scale * pw;
        y0 = cy - 0.5 * scale * ph;
        y1 = cy + 0.5 * scale * ph;
    }
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##,
        MARGIN_LEFT,
        top + MARGIN_TOP
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        top + 20.0,
        escape(&panel.title)
    );
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let (xv, yv) = (x0 + u * (x1 - x0), y0 + u * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + height - MARGIN_BOTTOM + 14.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 4.0,
            sy(yv) + 3.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        top + height - 8.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        top + MARGIN_TOP + ph / 2.0,
        top + MARGIN_TOP + ph / 2.0,
        escape(&panel.y_label)
    );
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ =
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + MARGIN_TOP + 12.0 + 16.0 * i as f64;
        let lx = width - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 22.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    for (x, y, label) in &panel.markers {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="#000" stroke-width="2"/>"##,
            sx(*x),
            sy(*y)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            sx(*x) + 7.0,
            sy(*y) - 7.0,
            escape(label)
        );
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the panels stacked vertically.
pub fn render(panels: &[Panel], width: u32, panel_height: u32) -> String {
    let (w, h) = (width as f64, panel_height as f64);
    let total = h * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total:.0}" viewBox="0 0 {width} {total:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, i as f64 * h, w, h);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let panel = Panel {
            title: "a < b".into(),
            x_label: "k".into(),
            y_label: "RMSE (mm)".into(),
            series: vec![Series::new("sweep", vec![(5.0, 3.0), (10.0, 2.0), (15.0, 2.5)])],
            markers: vec![(10.0, 2.0, "best".into())],
            equal_aspect: false,
        };
        let svg = render(&[panel.clone(), panel], 600, 300);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn degenerate_data_still_renders() {
        let p = Panel { series: vec![Series::new("flat", vec![(1.0, 1.0)])], ..Default::default() };
        let svg = render(&[p], 400, 200);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
