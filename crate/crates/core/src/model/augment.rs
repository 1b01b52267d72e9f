use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label-preserving perturbations applied to training windows.
///
/// A trace-per-token encoder has no built-in equivariance along depth, and on
/// a few dozen scenes it readily memorizes where in a scene a window was
/// taken. Shifting, rescaling and reversing windows removes those shortcuts
/// while leaving the covered distance unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    /// Largest common shift (samples) of all traces along depth; vacated
    /// samples are zero.
    pub depth_shift: usize,
    /// Amplitude factor drawn log-uniformly from `[1/gain, gain]`.
    pub gain: f64,
    /// Negate the window with probability 1/2.
    pub polarity_flip: bool,
    /// Reverse the trace order with probability 1/2 (driving back over the
    /// same ground covers the same distance).
    pub reverse: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { depth_shift: 0, gain: 1.0, polarity_flip: false, reverse: false }
    }
}

impl Augmentation {
    /// Settings used for the synthetic experiments.
    pub fn standard() -> Self {
        Self { depth_shift: 40, gain: 2.0, polarity_flip: true, reverse: true }
    }

    pub fn is_identity(&self) -> bool {
        self.depth_shift == 0 && self.gain == 1.0 && !self.polarity_flip && !self.reverse
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 1.0 && self.gain.is_finite()) {
            return Err(Error::config("augment.gain must be a finite factor >= 1"));
        }
        Ok(())
    }

    /// Perturbed copy of a row-major `k x dim` window.
    pub(crate) fn apply<R: Rng>(&self, input: &[f64], k: usize, dim: usize, rng: &mut R) -> Vec<f64> {
        let max = self.depth_shift.min(dim.saturating_sub(1)) as i64;
        let shift = if max > 0 { rng.random_range(-max..=max) } else { 0 };
        let mut scale = if self.gain > 1.0 { self.gain.powf(rng.random_range(-1.0..=1.0)) } else { 1.0 };
        if self.polarity_flip && rng.random_bool(0.5) {
            scale = -scale;
        }
        let reverse = self.reverse && rng.random_bool(0.5);
        let mut out = vec![0.0; k * dim];
        for r in 0..k {
            let src = &input[(if reverse { k - 1 - r } else { r }) * dim..][..dim];
            let dst = &mut out[r * dim..][..dim];
            for (i, d) in dst.iter_mut().enumerate() {
                let j = i as i64 - shift;
                if (0..dim as i64).contains(&j) {
                    *d = src[j as usize] * scale;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_leaves_windows_alone() {
        let x: Vec<f64> = (0..30).map(|v| v as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Augmentation::default().apply(&x, 3, 10, &mut rng), x);
    }

    #[test]
    fn shift_moves_every_trace_together() {
        let x: Vec<f64> = (0..20).map(|v| 1.0 + (v % 10) as f64).collect();
        let aug = Augmentation { depth_shift: 3, ..Augmentation::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let y = aug.apply(&x, 2, 10, &mut rng);
            assert_eq!(y[..10], y[10..]);
            let lead = y.iter().take_while(|v| **v == 0.0).count();
            let s = if lead > 0 { lead as i64 } else { 1 - y[0] as i64 };
            assert!(s.abs() <= 3);
            let nonzero: Vec<f64> = y[..10].iter().copied().filter(|v| *v != 0.0).collect();
            assert!(nonzero.windows(2).all(|w| w[1] == w[0] + 1.0));
        }
    }

    #[test]
    fn reverse_and_flip_preserve_magnitudes() {
        let x: Vec<f64> = (0..12).map(|v| v as f64 - 5.5).collect();
        let aug = Augmentation { gain: 1.0, polarity_flip: true, reverse: true, depth_shift: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sorted_x: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        sorted_x.sort_by(f64::total_cmp);
        for _ in 0..10 {
            let mut y: Vec<f64> = aug.apply(&x, 3, 4, &mut rng).iter().map(|v| v.abs()).collect();
            y.sort_by(f64::total_cmp);
            assert_eq!(y, sorted_x);
        }
    }
}
