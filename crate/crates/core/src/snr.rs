//! Zero-probability counting and the offline mapping from that count to SNR.
//!
//! Offline, dithered pilot phases are simulated over a grid of known SNRs and
//! the average number of zero-probability entries per candidate is recorded.
//! A least-squares polynomial from count to SNR (in dB) then turns the count
//! observed online into a noise-variance estimate.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{learn_likelihood_table, LikelihoodTable, PilotObservations};
use crate::rng::{Purpose, SeedTree};
use crate::signal::{build_constellation, draw_channel, enumerate_candidates, LinkParams};

/// Number of `(k, i)` entries whose learned likelihood is exactly 0 for one of
/// the two signs. Each such pair contributes one zero-probability value.
pub fn count_zero_prob(t: &LikelihoodTable) -> Result<usize> {
    if !t.is_learned() {
        return Err(Error::Domain(
            "zero-probability counts need a learned table".into(),
        ));
    }
    Ok(t.p_one_values()
        .iter()
        .filter(|&&p| p == 0.0 || p == 1.0)
        .count())
}

/// [`count_zero_prob`] averaged over candidates, a value in `[0, 2Nr]`.
pub fn mean_zero_count(t: &LikelihoodTable) -> Result<f64> {
    Ok(count_zero_prob(t)? as f64 / t.k_count() as f64)
}

/// Settings for the offline dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineMeta {
    pub nr: usize,
    pub nu: usize,
    pub order: usize,
    pub n_tr: usize,
    /// dither variance as a multiple of `rho`
    pub sigma2_ratio: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    /// `(gamma_db, n_zero_avg)`, strictly increasing in `gamma_db`
    pub rows: Vec<(f64, f64)>,
    pub meta: OfflineMeta,
}

impl OfflineDataset {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["gamma_db", "n_zero_avg"])?;
        for (g, n) in &self.rows {
            out.write_record(&[g.to_string(), n.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the two-column CSV back; `meta` is supplied by the caller.
    pub fn read_csv<R: Read>(r: R, meta: OfflineMeta) -> Result<Self> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(r).deserialize() {
            let (g, n): (f64, f64) = rec?;
            rows.push((g, n));
        }
        Ok(Self { rows, meta })
    }
}

/// Simulates the offline phase at every SNR in `grid_db` (with `rho = 1`).
///
/// Channel `t` comes from the `OfflineChannel` stream of trial `t`; pilot
/// noise and dither streams are shared across SNR points.
pub fn generate_offline_dataset(
    meta: &OfflineMeta,
    grid_db: &[f64],
    seeds: &SeedTree,
) -> Result<OfflineDataset> {
    if grid_db.is_empty() {
        return Err(Error::config("SNR grid is empty"));
    }
    if grid_db.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("SNR grid must be strictly increasing"));
    }
    if meta.trials == 0 || meta.n_tr == 0 {
        return Err(Error::config(
            "offline training needs at least one trial and one pilot repetition",
        ));
    }
    if !(meta.sigma2_ratio > 0.0) {
        return Err(Error::config(
            "offline training needs a positive dither variance",
        ));
    }
    let c = build_constellation(meta.order)?;
    let cs = enumerate_candidates(&c, meta.nu)?;
    let links = grid_db
        .iter()
        .map(|&g| LinkParams::from_snr_db(g, 1.0, meta.sigma2_ratio))
        .collect::<Result<Vec<_>>>()?;

    let per_trial = (0..meta.trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Vec<usize>> {
            let ch = draw_channel(
                meta.nr,
                meta.nu,
                &mut seeds.stream(Purpose::OfflineChannel, &[t]),
            )?;
            let proj = ch.candidate_projections(&cs);
            links
                .iter()
                .map(|lp| {
                    let mut noise = seeds.stream(Purpose::OfflineNoise, &[t]);
                    let mut dither = seeds.stream(Purpose::OfflineDither, &[t]);
                    let obs = PilotObservations::simulate(
                        &proj,
                        ch.dim(),
                        lp,
                        meta.n_tr,
                        &mut noise,
                        Some::<&mut ChaCha8Rng>(&mut dither),
                    )?;
                    count_zero_prob(&learn_likelihood_table(&obs)?)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let denom = (meta.trials * cs.k_count) as f64;
    let rows = grid_db
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            (
                g,
                per_trial.iter().map(|counts| counts[j]).sum::<usize>() as f64 / denom,
            )
        })
        .collect();
    Ok(OfflineDataset {
        rows,
        meta: meta.clone(),
    })
}

/// Polynomial `gamma_db = Σ coeffs[j] · n^j` over the fit domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    /// `[n_min, n_max]` of the fitted abscissae
    pub domain: [f64; 2],
    /// least-squares residual norm at fit time
    #[serde(default)]
    pub residual_norm: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

impl PolyModel {
    /// Horner evaluation.
    pub fn eval(&self, n: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * n + c)
    }

    /// Evaluation at `n` clamped to the fit domain.
    pub fn eval_clamped(&self, n: f64) -> f64 {
        self.eval(n.clamp(self.domain[0], self.domain[1]))
    }

    pub fn residuals(&self, ds: &OfflineDataset) -> Vec<f64> {
        ds.rows.iter().map(|&(g, n)| g - self.eval(n)).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let m: PolyModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.coeffs.len() != m.degree + 1 || !(m.domain[0] <= m.domain[1]) {
            return Err(Error::config(format!(
                "malformed polynomial model in {}",
                path.display()
            )));
        }
        Ok(m)
    }
}

/// Least-squares fit of `gamma_db` as a polynomial in `n_zero_avg`.
///
/// The abscissae are mapped to `[-1, 1]` and the Vandermonde columns scaled
/// to unit norm before solving the normal equations; the solution is then
/// expanded back into the monomial basis of the raw count.
pub fn fit_polynomial(ds: &OfflineDataset, degree: usize) -> Result<PolyModel> {
    let xs: Vec<f64> = ds.rows.iter().map(|r| r.1).collect();
    let ys: Vec<f64> = ds.rows.iter().map(|r| r.0).collect();
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::Fit(format!(
            "degree {degree} needs {} distinct abscissae, dataset has {}",
            degree + 1,
            distinct.len()
        )));
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let center = 0.5 * (lo + hi);
    let half = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };

    let cols = degree + 1;
    let mut a = DMatrix::from_fn(xs.len(), cols, |r, j| {
        ((xs[r] - center) / half).powi(j as i32)
    });
    let scale: Vec<f64> = (0..cols).map(|j| a.column(j).norm().recip()).collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(*s);
    }
    let y = DVector::from_vec(ys);
    let normal = a.transpose() * &a;
    let rhs = a.transpose() * &y;
    let chol = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Fit("normal equations are not positive definite".into()))?;
    let diag = chol.l().diagonal();
    if diag.min() <= diag.max() * 1e-7 {
        return Err(Error::Fit(
            "normal equations are numerically rank deficient".into(),
        ));
    }
    let b_scaled = chol.solve(&rhs);

    // p(x) = Σ_j b_j ((x - c)/h)^j  expanded into powers of x
    let mut coeffs = vec![0.0; cols];
    for j in 0..cols {
        let bj = b_scaled[j] * scale[j] / half.powi(j as i32);
        for (m, c) in coeffs.iter_mut().enumerate().take(j + 1) {
            *c += bj * binomial(j, m) * (-center).powi((j - m) as i32);
        }
    }
    let mut model = PolyModel {
        degree,
        coeffs,
        domain: [lo, hi],
        residual_norm: 0.0,
    };
    model.residual_norm = model
        .residuals(ds)
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    Ok(model)
}

/// `N0 = rho · 10^(-gamma/10)` with `gamma` read off the model at the
/// observed count (clamped to the fit domain).
pub fn estimate_noise_variance(m: &PolyModel, n_zero_obs: f64, rho: f64) -> f64 {
    rho * 10f64.powf(-m.eval_clamped(n_zero_obs) / 10.0)
}
