//! GPR trace conditioning: anomaly screening, stacking, background removal,
//! polynomial dewow, spreading-and-exponential gain and wavelet denoising.
//!
//! A [`BScan`] is stored trace-major: `bscan.trace(j).samples[i]` is the
//! sample at depth index `i` of trace `j`. Row operations therefore walk the
//! same depth index across all traces.

mod config;
pub mod wavelet;

pub use config::{FilterConfig, FilterStage};
pub use wavelet::{ThresholdRule, Wavelet};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One A-scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<T> {
    pub samples: Vec<T>,
    /// Seconds on the sequence clock.
    pub timestamp: f64,
}

impl<T: Scalar> Trace<T> {
    pub fn new(samples: Vec<T>, timestamp: f64) -> Self {
        Self { samples, timestamp }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_abs(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Window of consecutive traces.
#[derive(Clone, Debug, PartialEq)]
pub struct BScan<T> {
    traces: Vec<Trace<T>>,
}

impl<T: Scalar> BScan<T> {
    /// Validates `k >= 1`, equal trace lengths and strictly increasing timestamps.
    pub fn new(traces: Vec<Trace<T>>) -> Result<Self> {
        let first = traces.first().ok_or_else(|| Error::input("a B-scan needs at least one trace"))?;
        let t = first.len();
        if t == 0 {
            return Err(Error::input("traces must contain at least one sample"));
        }
        for (j, pair) in traces.windows(2).enumerate() {
            if pair[1].len() != t {
                return Err(Error::input(format!("trace {} has {} samples, expected {t}", j + 1, pair[1].len())));
            }
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::input(format!(
                    "trace timestamps must strictly increase (trace {} at {} after {})",
                    j + 1,
                    pair[1].timestamp,
                    pair[0].timestamp
                )));
            }
        }
        Ok(Self { traces })
    }

    /// Builds a B-scan from raw columns, stamping traces `0, 1, 2, ...` seconds.
    pub fn from_columns(columns: Vec<Vec<T>>) -> Result<Self> {
        Self::new(columns.into_iter().enumerate().map(|(j, s)| Trace::new(s, j as f64)).collect())
    }

    /// Number of traces `k`.
    pub fn width(&self) -> usize {
        self.traces.len()
    }

    /// Samples per trace `t`.
    pub fn depth(&self) -> usize {
        self.traces[0].len()
    }

    pub fn traces(&self) -> &[Trace<T>] {
        &self.traces
    }

    pub fn trace(&self, j: usize) -> &Trace<T> {
        &self.traces[j]
    }

    pub fn into_traces(self) -> Vec<Trace<T>> {
        self.traces
    }

    /// Sample at depth `i` of trace `j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.traces[j].samples[i]
    }

    pub fn row_mean(&self, i: usize) -> T {
        let k = T::lit(self.width() as f64);
        self.traces.iter().map(|tr| tr.samples[i]).sum::<T>() / k
    }

    /// Applies `f` to every trace, keeping timestamps.
    pub fn map_traces<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Trace<T>) -> Result<Vec<T>>,
    {
        let traces =
            self.traces.iter().map(|tr| f(tr).map(|s| Trace::new(s, tr.timestamp))).collect::<Result<Vec<_>>>()?;
        Ok(Self { traces })
    }

    /// Row-major `k x t` copy (one row per trace).
    pub fn to_row_major(&self) -> Vec<T> {
        self.traces.iter().flat_map(|tr| tr.samples.iter().copied()).collect()
    }
}

/// Keeps only traces whose samples all satisfy `|s| <= limit`, in order.
pub fn screen_anomalies<T, I>(traces: I, limit: T) -> Vec<Trace<T>>
where
    T: Scalar,
    I: IntoIterator<Item = Trace<T>>,
{
    traces.into_iter().filter(|tr| tr.samples.iter().all(|s| s.abs() <= limit)).collect()
}

/// Averages consecutive groups of `n` traces; a trailing partial group is dropped.
pub fn stack<T: Scalar>(traces: &[Trace<T>], n: usize) -> Result<Vec<Trace<T>>> {
    if n == 0 {
        return Err(Error::config("stack size must be at least 1"));
    }
    let scale = T::lit(n as f64);
    traces
        .chunks_exact(n)
        .map(|group| {
            let t = group[0].len();
            if group.iter().any(|tr| tr.len() != t) {
                return Err(Error::input("cannot stack traces of different lengths"));
            }
            let samples = (0..t).map(|i| group.iter().map(|tr| tr.samples[i]).sum::<T>() / scale).collect();
            let timestamp = group.iter().map(|tr| tr.timestamp).sum::<f64>() / n as f64;
            Ok(Trace::new(samples, timestamp))
        })
        .collect()
}

/// Screens anomalous traces then stacks, in that order.
pub fn condition_stream<T: Scalar>(traces: Vec<Trace<T>>, cfg: &FilterConfig) -> Result<Vec<Trace<T>>> {
    if cfg.anomaly_limit <= 0.0 {
        return Err(Error::config("anomaly_limit must be positive"));
    }
    let kept = screen_anomalies(traces, T::lit(cfg.anomaly_limit));
    stack(&kept, cfg.stack_size)
}

/// Subtracts the across-trace mean from every depth row.
pub fn background_removal<T: Scalar>(b: &BScan<T>) -> BScan<T> {
    let means: Vec<T> = (0..b.depth()).map(|i| b.row_mean(i)).collect();
    let traces = b
        .traces
        .iter()
        .map(|tr| {
            let samples = tr.samples.iter().zip(&means).map(|(&v, &m)| v - m).collect();
            Trace::new(samples, tr.timestamp)
        })
        .collect();
    BScan { traces }
}

/// Orthonormal basis for polynomials of degree `<= degree` sampled on
/// `0..len`, built by modified Gram-Schmidt on monomials of the index mapped
/// to `[-1, 1]`.
fn polynomial_basis<T: Scalar>(len: usize, degree: usize) -> Result<Vec<Vec<T>>> {
    let span = if len > 1 { (len - 1) as f64 } else { 1.0 };
    let u: Vec<T> = (0..len).map(|i| T::lit(2.0 * i as f64 / span - 1.0)).collect();
    let rel_tol = T::epsilon().sqrt() * T::lit(1e-2);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(degree + 1);
    let mut mono = vec![T::one(); len];
    for p in 0..=degree {
        if p > 0 {
            for (m, &x) in mono.iter_mut().zip(&u) {
                *m *= x;
            }
        }
        let mut v = mono.clone();
        let raw_norm = norm(&v);
        // Two passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                for (vi, &qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let n = norm(&v);
        if !(n > rel_tol * raw_norm) || n == T::zero() {
            return Err(Error::numerical(format!(
                "dewow basis is rank deficient: degree {degree} needs at least {} samples, got {len}",
                degree + 1
            )));
        }
        for vi in v.iter_mut() {
            *vi /= n;
        }
        basis.push(v);
    }
    Ok(basis)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Removes the least-squares polynomial trend of the given degree.
pub fn dewow<T: Scalar>(g: &Trace<T>, degree: usize) -> Result<Trace<T>> {
    let basis = polynomial_basis::<T>(g.len(), degree)?;
    Ok(Trace::new(detrend_with(&g.samples, &basis), g.timestamp))
}

fn detrend_with<T: Scalar>(g: &[T], basis: &[Vec<T>]) -> Vec<T> {
    let mut r = g.to_vec();
    for q in basis {
        let c = dot(q, &r);
        for (ri, &qi) in r.iter_mut().zip(q) {
            *ri -= c * qi;
        }
    }
    r
}

/// Per-depth gain `i^b * exp(a * i)`, held constant from `threshold` on.
/// `0^0` is taken as 1.
pub fn sec_gain_curve<T: Scalar>(len: usize, a: f64, b: f64, threshold: usize) -> Vec<T> {
    let gamma = |i: usize| -> f64 {
        let i = i as f64;
        let power = if i == 0.0 && b == 0.0 { 1.0 } else { i.powf(b) };
        power * (a * i).exp()
    };
    let cap = gamma(threshold);
    (0..len).map(|i| T::lit(if i < threshold { gamma(i) } else { cap })).collect()
}

/// Spreading and exponential compensation gain applied to every depth row.
pub fn sec_gain<T: Scalar>(b: &BScan<T>, a: f64, bexp: f64, threshold: usize) -> Result<BScan<T>> {
    if threshold >= b.depth() {
        return Err(Error::config(format!("sec threshold {threshold} outside [0, {})", b.depth())));
    }
    let gamma = sec_gain_curve::<T>(b.depth(), a, bexp, threshold);
    b.map_traces(|tr| Ok(tr.samples.iter().zip(&gamma).map(|(&v, &g)| v * g).collect()))
}

/// Wavelet shrinkage of one trace.
pub fn wavelet_denoise<T: Scalar>(g: &Trace<T>, cfg: &FilterConfig) -> Result<Trace<T>> {
    let w = Wavelet::by_name(&cfg.wavelet)?;
    Ok(Trace::new(denoise_samples(&g.samples, &w, cfg)?, g.timestamp))
}

fn denoise_samples<T: Scalar>(x: &[T], w: &Wavelet, cfg: &FilterConfig) -> Result<Vec<T>> {
    let mut coeffs = wavelet::wavedec(x, w, cfg.wavelet_levels)?;
    let threshold = match cfg.wavelet_threshold {
        Some(v) => T::lit(v),
        None => wavelet::universal_threshold(coeffs.last().expect("at least one level"), x.len()),
    };
    for detail in coeffs.iter_mut().skip(1) {
        for c in detail.iter_mut() {
            *c = cfg.wavelet_threshold_rule.apply(*c, threshold);
        }
    }
    wavelet::waverec(&coeffs, w, x.len())
}

/// Applies one stage to a B-scan.
pub fn apply_stage<T: Scalar>(b: &BScan<T>, stage: FilterStage, cfg: &FilterConfig) -> Result<BScan<T>> {
    match stage {
        FilterStage::BackgroundRemoval => Ok(background_removal(b)),
        FilterStage::Dewow => {
            let basis = polynomial_basis::<T>(b.depth(), cfg.dewow_degree)?;
            b.map_traces(|tr| Ok(detrend_with(&tr.samples, &basis)))
        }
        FilterStage::SecGain => sec_gain(b, cfg.sec_a, cfg.sec_b, cfg.sec_threshold),
        FilterStage::WaveletDenoise => {
            let w = Wavelet::by_name(&cfg.wavelet)?;
            b.map_traces(|tr| denoise_samples(&tr.samples, &w, cfg))
        }
    }
}

/// Runs the configured stages in order (background removal, dewow, SEC
/// gain, wavelet denoising by default).
pub fn filter_pipeline<T: Scalar>(b: &BScan<T>, cfg: &FilterConfig) -> Result<BScan<T>> {
    cfg.validate(b.depth())?;
    cfg.stages.iter().try_fold(b.clone(), |acc, &stage| apply_stage(&acc, stage, cfg))
}
