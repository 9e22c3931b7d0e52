//! Likelihood tables `p(y_i = +1 | s_k)` and the four ways to build them:
//! analytically from CSI, by counting pilot observations, by flooring
//! zero-probability entries, and by inverting dithered pilot statistics.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_log_cdf, std_normal_quantile};
use crate::signal::{add_gaussian, sign, CandidateSet, ChannelRealization, LinkParams, Sign};

/// `K x 2Nr` table of per-antenna likelihoods for each candidate vector.
///
/// Only `p_one` is stored; `p(y_i = -1) = 1 - p_one`. The log caches are the
/// natural logs of both values, with `-inf` for zero probabilities. Analytic
/// tables fill the caches from the Gaussian argument directly, so entries whose
/// probability rounds to 0 or 1 in `f64` still get a finite log.
///
/// `counts_total` is zero everywhere for analytic tables. For learned tables
/// `p_one = counts_one / counts_total` until bias repair touches an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    k_count: usize,
    dim: usize,
    p_one: Vec<f64>,
    counts_one: Vec<u32>,
    counts_total: Vec<u32>,
    log_p_one: Vec<f64>,
    log_p_minus_one: Vec<f64>,
    // antenna-major copies of the log caches for the argmax sweep
    log_p_one_t: Vec<f64>,
    log_p_minus_one_t: Vec<f64>,
}

fn ln(p: f64) -> f64 {
    if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

impl LikelihoodTable {
    fn check_shape(k_count: usize, dim: usize, len: usize) -> Result<()> {
        if k_count == 0 || dim == 0 || len != k_count * dim {
            return Err(Error::config(format!(
                "table shape {k_count} x {dim} does not match {len} entries"
            )));
        }
        Ok(())
    }

    /// Table with explicit probabilities and no observation counts.
    pub fn from_probabilities(k_count: usize, dim: usize, p_one: Vec<f64>) -> Result<Self> {
        Self::check_shape(k_count, dim, p_one.len())?;
        if let Some(bad) = p_one.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("probability {bad} outside [0, 1]")));
        }
        let n = p_one.len();
        Ok(Self::with_logs(k_count, dim, p_one, vec![0; n], vec![0; n]))
    }

    /// Empirical table `p_one = counts_one / counts_total`.
    pub fn from_counts(
        k_count: usize,
        dim: usize,
        counts_one: Vec<u32>,
        counts_total: Vec<u32>,
    ) -> Result<Self> {
        Self::check_shape(k_count, dim, counts_one.len())?;
        Self::check_shape(k_count, dim, counts_total.len())?;
        let mut p_one = Vec::with_capacity(counts_one.len());
        for (&c1, &ct) in counts_one.iter().zip(&counts_total) {
            if ct == 0 || c1 > ct {
                return Err(Error::Domain(format!(
                    "invalid observation counts {c1}/{ct}"
                )));
            }
            p_one.push(c1 as f64 / ct as f64);
        }
        Ok(Self::with_logs(
            k_count,
            dim,
            p_one,
            counts_one,
            counts_total,
        ))
    }

    /// Analytic table `p_one = Φ(z)` for per-entry standard scores `z`.
    pub fn from_standard_scores(k_count: usize, dim: usize, z: &[f64]) -> Result<Self> {
        Self::check_shape(k_count, dim, z.len())?;
        Ok(Self::from_parts(
            k_count,
            dim,
            z.iter().map(|&z| std_normal_cdf(z)).collect(),
            None,
            z.iter().map(|&z| std_normal_log_cdf(z)).collect(),
            z.iter().map(|&z| std_normal_log_cdf(-z)).collect(),
        ))
    }

    fn with_logs(
        k_count: usize,
        dim: usize,
        p_one: Vec<f64>,
        counts_one: Vec<u32>,
        counts_total: Vec<u32>,
    ) -> Self {
        let log_p_one = p_one.iter().map(|&p| ln(p)).collect();
        let log_p_minus_one = p_one.iter().map(|&p| ln(1.0 - p)).collect();
        Self::from_parts(
            k_count,
            dim,
            p_one,
            Some((counts_one, counts_total)),
            log_p_one,
            log_p_minus_one,
        )
    }

    /// Assembles a table from precomputed parts; the caller keeps the log
    /// caches consistent with `p_one`.
    pub(crate) fn from_parts(
        k_count: usize,
        dim: usize,
        p_one: Vec<f64>,
        counts: Option<(Vec<u32>, Vec<u32>)>,
        log_p_one: Vec<f64>,
        log_p_minus_one: Vec<f64>,
    ) -> Self {
        let n = p_one.len();
        let (counts_one, counts_total) = counts.unwrap_or_else(|| (vec![0; n], vec![0; n]));
        let mut t = Self {
            k_count,
            dim,
            p_one,
            counts_one,
            counts_total,
            log_p_one,
            log_p_minus_one,
            log_p_one_t: Vec::new(),
            log_p_minus_one_t: Vec::new(),
        };
        t.refresh_transposed();
        t
    }

    fn refresh_transposed(&mut self) {
        let transpose = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for k in 0..self.k_count {
                for i in 0..self.dim {
                    out[i * self.k_count + k] = v[k * self.dim + i];
                }
            }
            out
        };
        self.log_p_one_t = transpose(&self.log_p_one);
        self.log_p_minus_one_t = transpose(&self.log_p_minus_one);
    }

    pub fn k_count(&self) -> usize {
        self.k_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_one(&self, k: usize, i: usize) -> f64 {
        self.p_one[k * self.dim + i]
    }

    pub fn p_minus_one(&self, k: usize, i: usize) -> f64 {
        1.0 - self.p_one(k, i)
    }

    pub fn p_one_values(&self) -> &[f64] {
        &self.p_one
    }

    pub fn counts_one(&self) -> &[u32] {
        &self.counts_one
    }

    pub fn counts_total(&self) -> &[u32] {
        &self.counts_total
    }

    pub fn log_p_one_values(&self) -> &[f64] {
        &self.log_p_one
    }

    pub fn log_p_minus_one_values(&self) -> &[f64] {
        &self.log_p_minus_one
    }

    /// Whether the table carries observation counts.
    pub fn is_learned(&self) -> bool {
        self.counts_total.iter().any(|&c| c > 0)
    }

    /// `ln P(y | s_k)` under the independent-antenna product model.
    pub fn log_likelihood(&self, y: &[Sign], k: usize) -> f64 {
        debug_assert_eq!(y.len(), self.dim);
        let row = k * self.dim..(k + 1) * self.dim;
        let mut s = 0.0;
        for ((&yi, &a), &b) in y
            .iter()
            .zip(&self.log_p_one[row.clone()])
            .zip(&self.log_p_minus_one[row])
        {
            s += if yi > 0 { a } else { b };
        }
        s
    }

    /// Argmax over candidates: `(k, score, tie)`, lowest index wins ties.
    pub fn best_candidate(&self, y: &[Sign]) -> (usize, f64, bool) {
        debug_assert_eq!(y.len(), self.dim);
        // antenna-outer accumulation: each score sums in the same order as
        // `log_likelihood`, so the two agree bit for bit
        let kc = self.k_count;
        let mut scores = vec![0.0; kc];
        for (i, &yi) in y.iter().enumerate() {
            let col = if yi > 0 {
                &self.log_p_one_t
            } else {
                &self.log_p_minus_one_t
            };
            for (s, &l) in scores.iter_mut().zip(&col[i * kc..(i + 1) * kc]) {
                *s += l;
            }
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        let mut tie = false;
        for (k, &s) in scores.iter().enumerate() {
            if s > best_score {
                best = k;
                best_score = s;
                tie = false;
            } else if s == best_score {
                tie = true;
            }
        }
        // every score -inf: candidate 0 was never strictly beaten
        if best_score == f64::NEG_INFINITY && self.k_count > 1 {
            tie = true;
        }
        (best, best_score, tie)
    }

    /// Debug dump with columns `k,i,p_one,counts_one,counts_total`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "i", "p_one", "counts_one", "counts_total"])?;
        for k in 0..self.k_count {
            for i in 0..self.dim {
                let ix = k * self.dim + i;
                out.write_record(&[
                    k.to_string(),
                    i.to_string(),
                    format!("{:e}", self.p_one[ix]),
                    self.counts_one[ix].to_string(),
                    self.counts_total[ix].to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Quantized pilot outputs, candidate-major: all `n_tr` repetitions of
/// candidate 0, then candidate 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservations {
    pub k_count: usize,
    pub n_tr: usize,
    pub dim: usize,
    y: Vec<Sign>,
}

impl PilotObservations {
    pub fn new(k_count: usize, n_tr: usize, dim: usize, y: Vec<Sign>) -> Result<Self> {
        if n_tr == 0 {
            return Err(Error::config("training length must be at least 1"));
        }
        if y.len() != k_count * n_tr * dim {
            return Err(Error::config(format!(
                "expected {} pilot signs, got {}",
                k_count * n_tr * dim,
                y.len()
            )));
        }
        if y.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Domain("pilot observations must be +1 or -1".into()));
        }
        Ok(Self {
            k_count,
            n_tr,
            dim,
            y,
        })
    }

    /// Runs the pilot phase: every candidate is sent `n_tr` times through the
    /// channel with noise from `noise_rng`, plus dither of variance `sigma2/2`
    /// per entry when `dither_rng` is given.
    pub fn simulate<R: Rng + ?Sized, D: Rng + ?Sized>(
        projections: &[f64],
        dim: usize,
        lp: &LinkParams,
        n_tr: usize,
        noise_rng: &mut R,
        mut dither_rng: Option<&mut D>,
    ) -> Result<Self> {
        if dim == 0 || !projections.len().is_multiple_of(dim) {
            return Err(Error::config("projection matrix does not match dimension"));
        }
        let k_count = projections.len() / dim;
        let amp = lp.rho.sqrt();
        let mut y = Vec::with_capacity(k_count * n_tr * dim);
        let mut r = vec![0.0; dim];
        for mean in projections.chunks_exact(dim) {
            for _ in 0..n_tr {
                r.iter_mut().zip(mean).for_each(|(x, m)| *x = amp * m);
                add_gaussian(&mut r, lp.n0 / 2.0, noise_rng);
                if let Some(d) = dither_rng.as_deref_mut() {
                    add_gaussian(&mut r, lp.sigma2 / 2.0, d);
                }
                y.extend(r.iter().map(|&x| sign(x)));
            }
        }
        Self::new(k_count, n_tr, dim, y)
    }

    pub fn signs(&self) -> &[Sign] {
        &self.y
    }

    /// Observation `t` of candidate `k`.
    pub fn observation(&self, k: usize, t: usize) -> &[Sign] {
        let start = (k * self.n_tr + t) * self.dim;
        &self.y[start..start + self.dim]
    }
}

/// Exact table: `p_one[k, i] = Φ(sqrt(2ρ/N0) · f_i·s_k)`.
pub fn csi_likelihood_table(
    ch: &ChannelRealization,
    cs: &CandidateSet,
    lp: &LinkParams,
) -> Result<LikelihoodTable> {
    if ch.nu != cs.nu {
        return Err(Error::config(format!(
            "channel has {} users, candidate set {}",
            ch.nu, cs.nu
        )));
    }
    csi_table_from_projections(&ch.candidate_projections(cs), ch.dim(), lp)
}

/// Same as [`csi_likelihood_table`] from precomputed `f_i · s_k`.
pub fn csi_table_from_projections(
    projections: &[f64],
    dim: usize,
    lp: &LinkParams,
) -> Result<LikelihoodTable> {
    let scale = (2.0 * lp.rho / lp.n0).sqrt();
    let z: Vec<f64> = projections.iter().map(|v| scale * v).collect();
    LikelihoodTable::from_standard_scores(projections.len() / dim.max(1), dim, &z)
}

/// Relative frequency of `+1` per candidate and antenna.
pub fn learn_likelihood_table(obs: &PilotObservations) -> Result<LikelihoodTable> {
    let n = obs.k_count * obs.dim;
    let mut counts_one = vec![0u32; n];
    for k in 0..obs.k_count {
        let row = &mut counts_one[k * obs.dim..(k + 1) * obs.dim];
        for t in 0..obs.n_tr {
            for (c, &y) in row.iter_mut().zip(obs.observation(k, t)) {
                *c += (y > 0) as u32;
            }
        }
    }
    LikelihoodTable::from_counts(obs.k_count, obs.dim, counts_one, vec![obs.n_tr as u32; n])
}

/// Replaces exact zero likelihoods by `p_bias` (and their complements by
/// `1 - p_bias`). `p_bias` must stay below one observation's worth of
/// frequency, `1 / counts_total`, for every learned entry.
pub fn apply_bias(t: &LikelihoodTable, p_bias: f64) -> Result<LikelihoodTable> {
    let limit = t
        .counts_total
        .iter()
        .filter(|&&c| c > 0)
        .min()
        .map_or(0.5, |&n| 1.0 / n as f64);
    if !(p_bias > 0.0 && p_bias < limit) {
        return Err(Error::config(format!(
            "bias probability {p_bias} must lie in (0, {limit})"
        )));
    }
    let mut out = t.clone();
    let (lo, hi) = (p_bias.ln(), (1.0 - p_bias).ln());
    for ix in 0..out.p_one.len() {
        if out.p_one[ix] == 0.0 {
            out.p_one[ix] = p_bias;
            out.log_p_one[ix] = lo;
            out.log_p_minus_one[ix] = hi;
        } else if out.p_one[ix] == 1.0 {
            out.p_one[ix] = 1.0 - p_bias;
            out.log_p_one[ix] = hi;
            out.log_p_minus_one[ix] = lo;
        }
    }
    out.refresh_transposed();
    Ok(out)
}

/// Recovers the undithered table from frequencies learned with dither.
///
/// Each dithered frequency is clamped to `[p_clamp, 1 - p_clamp]`, mapped back
/// to the noiseless projection `ψ = sqrt((N0 + σ²)/2) · Φ⁻¹(p̃)`, and
/// re-evaluated at the undithered noise level as `Φ(sqrt(2/N0) · ψ)`.
/// The result carries no counts.
pub fn dither_invert(
    t_dithered: &LikelihoodTable,
    lp: &LinkParams,
    p_clamp: f64,
) -> Result<LikelihoodTable> {
    if !(p_clamp > 0.0 && p_clamp < 0.5) {
        return Err(Error::config(format!(
            "clamp probability {p_clamp} must lie in (0, 0.5)"
        )));
    }
    let psi_scale = ((lp.n0 + lp.sigma2) / 2.0).sqrt();
    let z_scale = (2.0 / lp.n0).sqrt();
    let z = t_dithered
        .p_one
        .iter()
        .map(|&p| {
            let p = p.clamp(p_clamp, 1.0 - p_clamp);
            std_normal_quantile(p).map(|q| z_scale * psi_scale * q)
        })
        .collect::<Result<Vec<_>>>()?;
    LikelihoodTable::from_standard_scores(t_dithered.k_count, t_dithered.dim, &z)
}

/// Free-function form of [`LikelihoodTable::log_likelihood`].
pub fn log_likelihood(t: &LikelihoodTable, y: &[Sign], k: usize) -> f64 {
    t.log_likelihood(y, k)
}
