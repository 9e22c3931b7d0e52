//! Hard-decision detectors: ML over a likelihood table and one-bit ZF.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodTable;
use crate::signal::{CandidateSet, ChannelRealization, Constellation, Sign};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub k_star: usize,
    /// `ln P(y | s_k*)` for ML; `None` for detectors without a likelihood.
    pub log_score: Option<f64>,
    pub per_user_symbols: Vec<usize>,
    /// More than one candidate attained the maximum (including all `-inf`).
    pub tie: bool,
}

/// `argmax_k ln P(y | s_k)`, ties to the lowest index.
pub fn ml_detect(t: &LikelihoodTable, y: &[Sign], cs: &CandidateSet) -> Result<DetectionResult> {
    if t.k_count() != cs.k_count {
        return Err(Error::config(format!(
            "table has {} candidates, set has {}",
            t.k_count(),
            cs.k_count
        )));
    }
    if y.len() != t.dim() {
        return Err(Error::config(format!(
            "observation length {} != table dimension {}",
            y.len(),
            t.dim()
        )));
    }
    let (k_star, score, tie) = t.best_candidate(y);
    Ok(DetectionResult {
        k_star,
        log_score: Some(score),
        per_user_symbols: cs.symbols(k_star).iter().map(|&s| s as usize).collect(),
        tie,
    })
}

/// Zero-forcing on the quantized signal: `z = pinv(H_real) y`, then per-user
/// nearest-point slicing after scaling `z` to unit average energy per user.
#[derive(Debug, Clone)]
pub struct ZfDetector {
    nu: usize,
    pinv: DMatrix<f64>,
    constellation: Constellation,
}

/// Reported alongside results so readers know which ZF construction was used.
pub const ZF_VARIANT: &str = "pinv-slice";

impl ZfDetector {
    pub fn new(ch: &ChannelRealization, c: &Constellation) -> Result<Self> {
        let svd = ch.h_real.clone().svd(true, true);
        let sv = &svd.singular_values;
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min <= max * 1e-10 * sv.len() as f64 {
            return Err(Error::Detection(format!(
                "channel is rank deficient (singular values {min:e} .. {max:e})"
            )));
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| Error::Detection(e.to_string()))?;
        Ok(Self {
            nu: ch.nu,
            pinv,
            constellation: c.clone(),
        })
    }

    pub fn detect(&self, y: &[Sign]) -> DetectionResult {
        let soft: Vec<f64> = y.iter().map(|&s| s as f64).collect();
        self.detect_real(&soft)
    }

    /// ZF on an arbitrary real-composite vector.
    pub fn detect_real(&self, y: &[f64]) -> DetectionResult {
        let z = &self.pinv * DVector::from_column_slice(y);
        let mut zc: Vec<Complex64> = (0..self.nu)
            .map(|u| Complex64::new(z[u], z[u + self.nu]))
            .collect();
        let energy: f64 = zc.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.nu as f64;
        if energy > 0.0 {
            let g = energy.sqrt().recip();
            zc.iter_mut().for_each(|v| *v *= g);
        }
        let per_user_symbols: Vec<usize> =
            zc.iter().map(|&v| self.constellation.nearest(v)).collect();
        let order = self.constellation.order;
        let k_star = per_user_symbols
            .iter()
            .rev()
            .fold(0, |acc, &s| acc * order + s);
        DetectionResult {
            k_star,
            log_score: None,
            per_user_symbols,
            tie: false,
        }
    }
}

pub fn zf_detect(
    ch: &ChannelRealization,
    y: &[Sign],
    c: &Constellation,
) -> Result<DetectionResult> {
    if y.len() != ch.dim() {
        return Err(Error::config(format!(
            "observation length {} != {}",
            y.len(),
            ch.dim()
        )));
    }
    Ok(ZfDetector::new(ch, c)?.detect(y))
}
