//! Seeded Monte Carlo experiments: SER sweeps, zero-count sweeps, offline SNR
//! training and adaptive sessions.
//!
//! Trials are the unit of parallel work. Every trial draws its channel, pilot
//! noise, dither, data symbols and data noise from substreams keyed by the
//! trial index, and every detector in a trial sees the same draws. Results are
//! integer sums reduced in trial order, so output does not depend on the
//! number of worker threads.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    run_adaptive_session, AdaptiveConfig, AdaptiveKind, AlphaRule, FramePlan, SubframeRecord,
};
use crate::detect::ZfDetector;
use crate::error::{Error, Result};
use crate::likelihood::{
    apply_bias, csi_table_from_projections, dither_invert, learn_likelihood_table, LikelihoodTable,
    PilotObservations,
};
use crate::rng::{Purpose, SeedTree};
use crate::signal::{
    build_constellation, draw_channel, enumerate_candidates, sign, CandidateSet, LinkParams, Sign,
};
use crate::snr::{
    count_zero_prob, estimate_noise_variance, fit_polynomial, generate_offline_dataset,
    OfflineDataset, OfflineMeta, PolyModel,
};

/// Exact header of the SER / zero-count CSV.
pub const RESULT_CSV_HEADER: &str = "detector,snr_db,n_tr,symbols_tested,symbol_errors,ser,vector_errors,vser,mean_zero_count,wall_time_ms";

/// Exact header of the adaptive trace CSV.
pub const TRACE_CSV_HEADER: &str = "subframe_index,crc_pass,cumulative_v,subframe_ser";

/// Seed-tree tag separating offline training draws from the online run.
const OFFLINE_SEED_TAG: u64 = 0x000f_f11e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    /// ML with the exact CSI likelihoods
    CsiMl,
    /// ML on raw pilot frequencies
    NaiveMl,
    /// ML on pilot frequencies with zero entries floored at `p_bias`
    BiasedMl,
    /// ML on likelihoods recovered from dithered pilots with the true `N0`
    DitherMl,
    /// as `DitherMl`, with `N0` estimated from the zero-probability count
    DitherMlEstSnr,
    /// one-bit zero forcing with CSI
    Zf,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::CsiMl => "csi-ml",
            DetectorKind::NaiveMl => "naive-ml",
            DetectorKind::BiasedMl => "biased-ml",
            DetectorKind::DitherMl => "dither-ml",
            DetectorKind::DitherMlEstSnr => "dither-ml-est-snr",
            DetectorKind::Zf => "zf",
        }
    }

    fn uses_plain_pilots(&self) -> bool {
        matches!(self, DetectorKind::NaiveMl | DetectorKind::BiasedMl)
    }

    fn uses_dithered_pilots(&self) -> bool {
        matches!(self, DetectorKind::DitherMl | DetectorKind::DitherMlEstSnr)
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `sigma2 = ratio * rho`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sigma2Rule {
    pub ratio: f64,
}

/// `p_bias = scale / n_tr`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PBiasRule {
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveSettings {
    #[serde(flatten)]
    pub plan: FramePlan,
    pub snr_db: f64,
    /// declare a subframe decoded iff every symbol is correct
    pub genie_crc: bool,
    pub alpha_rule: AlphaRule,
    pub updates_enabled: bool,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        Self {
            plan: FramePlan::default(),
            snr_db: 25.0,
            genie_crc: true,
            alpha_rule: AlphaRule::CountsProportional,
            updates_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSettings {
    pub snr_db_grid: Vec<f64>,
    pub trials: usize,
    pub degree: usize,
    /// load this model instead of training one
    pub model_path: Option<PathBuf>,
}

impl Default for OfflineSettings {
    fn default() -> Self {
        Self {
            snr_db_grid: default_grid(),
            trials: 20,
            degree: 5,
            model_path: None,
        }
    }
}

fn default_grid() -> Vec<f64> {
    (0..=20).map(|j| -10.0 + 2.0 * j as f64).collect()
}

/// Experiment description, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub nr: usize,
    pub nu: usize,
    pub mod_order: usize,
    pub snr_db_grid: Vec<f64>,
    pub n_tr: usize,
    pub n_trials: usize,
    pub n_data_per_trial: usize,
    pub detectors: Vec<DetectorKind>,
    pub sigma2_rule: Sigma2Rule,
    pub p_bias_rule: PBiasRule,
    pub seed: u64,
    pub adaptive: Option<AdaptiveSettings>,
    pub offline: OfflineSettings,
    pub output_path: Option<PathBuf>,
    /// write measured wall time; when false the column is 0 so output is byte-reproducible
    pub record_wall_time: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nr: 32,
            nu: 4,
            mod_order: 4,
            snr_db_grid: default_grid(),
            n_tr: 50,
            n_trials: 50,
            n_data_per_trial: 2000,
            detectors: vec![
                DetectorKind::CsiMl,
                DetectorKind::NaiveMl,
                DetectorKind::BiasedMl,
                DetectorKind::DitherMl,
                DetectorKind::Zf,
            ],
            sigma2_rule: Sigma2Rule { ratio: 0.5 },
            p_bias_rule: PBiasRule { scale: 1e-2 },
            seed: 1,
            adaptive: None,
            offline: OfflineSettings::default(),
            output_path: None,
            record_wall_time: true,
        }
    }
}

fn check_grid(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(format!("{what} is empty")));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config(format!(
            "{what} must be finite and strictly increasing"
        )));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 || self.nr < self.nu {
            return Err(Error::config(format!(
                "need nr >= nu >= 1, got nr = {}, nu = {}",
                self.nr, self.nu
            )));
        }
        enumerate_candidates(&build_constellation(self.mod_order)?, self.nu)?;
        check_grid(&self.snr_db_grid, "snr_db_grid")?;
        if self.n_tr == 0 || self.n_trials == 0 || self.n_data_per_trial == 0 {
            return Err(Error::config(
                "n_tr, n_trials and n_data_per_trial must be positive",
            ));
        }
        if self.detectors.is_empty() {
            return Err(Error::config("detector list is empty"));
        }
        let mut seen = self.detectors.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.detectors.len() {
            return Err(Error::config("detector list has duplicates"));
        }
        if !(self.sigma2_rule.ratio >= 0.0 && self.sigma2_rule.ratio.is_finite()) {
            return Err(Error::config("sigma2_rule.ratio must be non-negative"));
        }
        if !(self.p_bias_rule.scale > 0.0 && self.p_bias_rule.scale < 1.0) {
            return Err(Error::config("p_bias_rule.scale must lie in (0, 1)"));
        }
        if self.detectors.contains(&DetectorKind::DitherMlEstSnr) {
            if self.sigma2_rule.ratio <= 0.0 {
                return Err(Error::config(
                    "SNR estimation needs a positive dither variance",
                ));
            }
            if self.offline.model_path.is_none() {
                check_grid(&self.offline.snr_db_grid, "offline.snr_db_grid")?;
                if self.offline.trials == 0 {
                    return Err(Error::config("offline.trials must be positive"));
                }
            }
        }
        if let Some(a) = &self.adaptive {
            a.plan.payload_bits(
                self.nu,
                build_constellation(self.mod_order)?.bits_per_symbol,
            )?;
            if let AlphaRule::Constant(x) = a.alpha_rule {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::config(
                        "adaptive.alpha_rule constant must lie in [0, 1]",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn p_bias(&self) -> f64 {
        self.p_bias_rule.scale / self.n_tr as f64
    }

    fn link(&self, gamma_db: f64) -> Result<LinkParams> {
        LinkParams::from_snr_db(gamma_db, 1.0, self.sigma2_rule.ratio)
    }

    pub fn offline_meta(&self) -> OfflineMeta {
        OfflineMeta {
            nr: self.nr,
            nu: self.nu,
            order: self.mod_order,
            n_tr: self.n_tr,
            sigma2_ratio: self.sigma2_rule.ratio,
            trials: self.offline.trials,
        }
    }
}

/// One `(detector, snr)` line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub detector: DetectorKind,
    pub snr_db: f64,
    pub n_tr: usize,
    pub symbols_tested: u64,
    pub symbol_errors: u64,
    pub vector_errors: u64,
    pub vectors_tested: u64,
    pub mean_zero_count: Option<f64>,
    pub wall_time_ms: f64,
}

impl ResultRow {
    pub fn ser(&self) -> Option<f64> {
        (self.symbols_tested > 0).then(|| self.symbol_errors as f64 / self.symbols_tested as f64)
    }

    pub fn vser(&self) -> Option<f64> {
        (self.vectors_tested > 0).then(|| self.vector_errors as f64 / self.vectors_tested as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// `N0` estimates are only meaningful with this model
    pub snr_model: Option<PolyModel>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    pub fn row(&self, detector: DetectorKind, snr_db: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.detector == detector && r.snr_db == snr_db)
    }

    /// SER of `detector` over the grid, in grid order.
    pub fn ser_curve(&self, detector: DetectorKind) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.detector == detector)
            .filter_map(|r| r.ser().map(|s| (r.snr_db, s)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, record_wall_time: bool) -> Result<()> {
        writeln!(w, "{RESULT_CSV_HEADER}")?;
        for r in &self.rows {
            let wall = if record_wall_time {
                format!("{:.3}", r.wall_time_ms)
            } else {
                "0".to_string()
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.detector,
                r.snr_db,
                r.n_tr,
                r.symbols_tested,
                r.symbol_errors,
                opt(r.ser()),
                r.vector_errors,
                opt(r.vser()),
                opt(r.mean_zero_count),
                wall
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    symbol_errors: u64,
    vector_errors: u64,
    zero_count: u64,
    nanos: u64,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.symbol_errors += o.symbol_errors;
        self.vector_errors += o.vector_errors;
        self.zero_count += o.zero_count;
        self.nanos += o.nanos;
    }
}

enum Decider<'a> {
    Table(LikelihoodTable),
    Zf(Option<&'a ZfDetector>),
}

impl Decider<'_> {
    fn decide(&self, y: &[Sign]) -> Option<usize> {
        match self {
            Decider::Table(t) => Some(t.best_candidate(y).0),
            Decider::Zf(Some(zf)) => Some(zf.detect(y).k_star),
            Decider::Zf(None) => None,
        }
    }
}

struct SweepContext<'a> {
    cfg: &'a SimConfig,
    cs: CandidateSet,
    constellation: crate::signal::Constellation,
    links: Vec<LinkParams>,
    seeds: SeedTree,
    model: Option<&'a PolyModel>,
}

fn elapsed(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

fn symbol_errors(cs: &CandidateSet, a: usize, b: usize) -> u64 {
    cs.symbols(a)
        .iter()
        .zip(cs.symbols(b))
        .filter(|(x, y)| x != y)
        .count() as u64
}

impl SweepContext<'_> {
    /// Per `(snr, detector)` tallies of one trial.
    fn run_trial(&self, t: u64) -> Result<Vec<Vec<Tally>>> {
        let cfg = self.cfg;
        let cs = &self.cs;
        let ch = draw_channel(
            cfg.nr,
            cfg.nu,
            &mut self.seeds.stream(Purpose::Channel, &[t]),
        )?;
        let dim = ch.dim();
        let proj = ch.candidate_projections(cs);
        let zf = if cfg.detectors.contains(&DetectorKind::Zf) {
            ZfDetector::new(&ch, &self.constellation).ok()
        } else {
            None
        };

        // data draws are shared by every SNR point and every detector
        let mut sym_rng = self.seeds.stream(Purpose::DataSymbols, &[t]);
        let sent: Vec<usize> = (0..cfg.n_data_per_trial)
            .map(|_| sym_rng.random_range(0..cs.k_count))
            .collect();
        let mut noise_rng = self.seeds.stream(Purpose::DataNoise, &[t]);
        let noise: Vec<f64> = (0..cfg.n_data_per_trial * dim)
            .map(|_| noise_rng.sample(StandardNormal))
            .collect();

        let need_plain = cfg.detectors.iter().any(|d| d.uses_plain_pilots());
        let need_dither = cfg.detectors.iter().any(|d| d.uses_dithered_pilots());
        let p_bias = cfg.p_bias();
        let mut out = Vec::with_capacity(self.links.len());
        let mut y = vec![0 as Sign; dim];
        for lp in &self.links {
            let mut tallies = vec![Tally::default(); cfg.detectors.len()];
            let start = Instant::now();
            let plain = if need_plain {
                let mut nrng = self.seeds.stream(Purpose::PilotNoise, &[t]);
                let obs = PilotObservations::simulate(
                    &proj,
                    dim,
                    lp,
                    cfg.n_tr,
                    &mut nrng,
                    None::<&mut ChaCha8Rng>,
                )?;
                Some(learn_likelihood_table(&obs)?)
            } else {
                None
            };
            let plain_ns = elapsed(start);
            let start = Instant::now();
            let dithered = if need_dither {
                let mut nrng = self.seeds.stream(Purpose::PilotNoise, &[t]);
                let mut drng = self.seeds.stream(Purpose::PilotDither, &[t]);
                let obs = PilotObservations::simulate(
                    &proj,
                    dim,
                    lp,
                    cfg.n_tr,
                    &mut nrng,
                    Some(&mut drng),
                )?;
                Some(learn_likelihood_table(&obs)?)
            } else {
                None
            };
            let dither_ns = elapsed(start);

            let mut deciders = Vec::with_capacity(cfg.detectors.len());
            for (tally, det) in tallies.iter_mut().zip(&cfg.detectors) {
                let start = Instant::now();
                let decider = match det {
                    DetectorKind::CsiMl => {
                        Decider::Table(csi_table_from_projections(&proj, dim, lp)?)
                    }
                    DetectorKind::NaiveMl | DetectorKind::BiasedMl => {
                        let table = plain.as_ref().expect("plain pilots simulated");
                        tally.zero_count = count_zero_prob(table)? as u64;
                        tally.nanos += plain_ns;
                        if *det == DetectorKind::NaiveMl {
                            Decider::Table(table.clone())
                        } else {
                            Decider::Table(apply_bias(table, p_bias)?)
                        }
                    }
                    DetectorKind::DitherMl | DetectorKind::DitherMlEstSnr => {
                        let table = dithered.as_ref().expect("dithered pilots simulated");
                        let zeros = count_zero_prob(table)?;
                        tally.zero_count = zeros as u64;
                        tally.nanos += dither_ns;
                        let link = if *det == DetectorKind::DitherMl {
                            *lp
                        } else {
                            let model = self.model.ok_or_else(|| {
                                Error::config("dither-ml-est-snr needs an SNR model")
                            })?;
                            let n0_hat = estimate_noise_variance(
                                model,
                                zeros as f64 / cs.k_count as f64,
                                lp.rho,
                            );
                            lp.with_n0(n0_hat)?
                        };
                        Decider::Table(dither_invert(table, &link, p_bias)?)
                    }
                    DetectorKind::Zf => Decider::Zf(zf.as_ref()),
                };
                tally.nanos += elapsed(start);
                deciders.push(decider);
            }

            let amp = lp.rho.sqrt();
            let std = (lp.n0 / 2.0).sqrt();
            for (n, &k) in sent.iter().enumerate() {
                let mean = &proj[k * dim..(k + 1) * dim];
                let z = &noise[n * dim..(n + 1) * dim];
                for ((yi, &m), &zi) in y.iter_mut().zip(mean).zip(z) {
                    *yi = sign(amp * m + std * zi);
                }
                for (tally, decider) in tallies.iter_mut().zip(&deciders) {
                    let start = Instant::now();
                    let errs = match decider.decide(&y) {
                        Some(k_hat) => symbol_errors(cs, k_hat, k),
                        None => cfg.nu as u64,
                    };
                    tally.nanos += elapsed(start);
                    tally.symbol_errors += errs;
                    tally.vector_errors += (errs > 0) as u64;
                }
            }
            out.push(tallies);
        }
        Ok(out)
    }
}

fn reduce(per_trial: Vec<Vec<Vec<Tally>>>, snrs: usize, dets: usize) -> Vec<Vec<Tally>> {
    let mut acc = vec![vec![Tally::default(); dets]; snrs];
    for trial in &per_trial {
        for (a, b) in acc.iter_mut().zip(trial) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add(y);
            }
        }
    }
    acc
}

/// Loads or trains the model needed by `dither-ml-est-snr`.
pub fn prepare_snr_model(cfg: &SimConfig) -> Result<Option<PolyModel>> {
    if !cfg.detectors.contains(&DetectorKind::DitherMlEstSnr) {
        return Ok(None);
    }
    match &cfg.offline.model_path {
        Some(path) => PolyModel::load_json(path).map(Some),
        None => run_offline_snr_training(cfg).map(|(_, m)| Some(m)),
    }
}

/// SER of every configured detector at every grid SNR.
pub fn run_ser_sweep(cfg: &SimConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let model = prepare_snr_model(cfg)?;
    run_ser_sweep_with_model(cfg, model.as_ref())
}

pub fn run_ser_sweep_with_model(
    cfg: &SimConfig,
    model: Option<&PolyModel>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let constellation = build_constellation(cfg.mod_order)?;
    let cs = enumerate_candidates(&constellation, cfg.nu)?;
    let links = cfg
        .snr_db_grid
        .iter()
        .map(|&g| cfg.link(g))
        .collect::<Result<Vec<_>>>()?;
    let ctx = SweepContext {
        cfg,
        cs,
        constellation,
        links,
        seeds: SeedTree::new(cfg.seed),
        model,
    };
    let per_trial = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|t| ctx.run_trial(t))
        .collect::<Result<Vec<_>>>()?;
    let acc = reduce(per_trial, cfg.snr_db_grid.len(), cfg.detectors.len());

    let vectors = (cfg.n_trials * cfg.n_data_per_trial) as u64;
    let tables = (cfg.n_trials * ctx.cs.k_count) as f64;
    let mut rows = Vec::new();
    for (j, &snr_db) in cfg.snr_db_grid.iter().enumerate() {
        for (d, &det) in cfg.detectors.iter().enumerate() {
            let t = &acc[j][d];
            rows.push(ResultRow {
                detector: det,
                snr_db,
                n_tr: cfg.n_tr,
                symbols_tested: vectors * cfg.nu as u64,
                symbol_errors: t.symbol_errors,
                vector_errors: t.vector_errors,
                vectors_tested: vectors,
                mean_zero_count: (det.uses_plain_pilots() || det.uses_dithered_pilots())
                    .then(|| t.zero_count as f64 / tables),
                wall_time_ms: t.nanos as f64 / 1e6,
            });
        }
    }
    Ok(ExperimentResult {
        rows,
        snr_model: model.cloned(),
    })
}

/// Mean per-candidate zero-probability counts of plain (`naive-ml` rows) and
/// dithered (`dither-ml` rows) pilot learning at every grid SNR.
pub fn run_zero_count_sweep(cfg: &SimConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let c = build_constellation(cfg.mod_order)?;
    let cs = enumerate_candidates(&c, cfg.nu)?;
    let seeds = SeedTree::new(cfg.seed);
    let links = cfg
        .snr_db_grid
        .iter()
        .map(|&g| cfg.link(g))
        .collect::<Result<Vec<_>>>()?;
    let per_trial = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Vec<Vec<Tally>>> {
            let ch = draw_channel(cfg.nr, cfg.nu, &mut seeds.stream(Purpose::Channel, &[t]))?;
            let proj = ch.candidate_projections(&cs);
            links
                .iter()
                .map(|lp| {
                    let mut pair = [Tally::default(); 2];
                    for (slot, dither) in pair.iter_mut().zip([false, true]) {
                        let start = Instant::now();
                        let mut nrng = seeds.stream(Purpose::PilotNoise, &[t]);
                        let mut drng = seeds.stream(Purpose::PilotDither, &[t]);
                        let obs = PilotObservations::simulate(
                            &proj,
                            ch.dim(),
                            lp,
                            cfg.n_tr,
                            &mut nrng,
                            dither.then_some(&mut drng),
                        )?;
                        slot.zero_count = count_zero_prob(&learn_likelihood_table(&obs)?)? as u64;
                        slot.nanos = elapsed(start);
                    }
                    Ok(pair.to_vec())
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let acc = reduce(per_trial, links.len(), 2);
    let tables = (cfg.n_trials * cs.k_count) as f64;
    let mut rows = Vec::new();
    for (j, &snr_db) in cfg.snr_db_grid.iter().enumerate() {
        for (d, det) in [DetectorKind::NaiveMl, DetectorKind::DitherMl]
            .into_iter()
            .enumerate()
        {
            rows.push(ResultRow {
                detector: det,
                snr_db,
                n_tr: cfg.n_tr,
                symbols_tested: 0,
                symbol_errors: 0,
                vector_errors: 0,
                vectors_tested: 0,
                mean_zero_count: Some(acc[j][d].zero_count as f64 / tables),
                wall_time_ms: acc[j][d].nanos as f64 / 1e6,
            });
        }
    }
    Ok(ExperimentResult {
        rows,
        snr_model: None,
    })
}

/// Offline dataset over `cfg.offline.snr_db_grid` and its polynomial fit.
/// Draws come from a seed tree derived from, but disjoint with, `cfg.seed`.
pub fn run_offline_snr_training(cfg: &SimConfig) -> Result<(OfflineDataset, PolyModel)> {
    check_grid(&cfg.offline.snr_db_grid, "offline.snr_db_grid")?;
    let seeds = SeedTree::new(cfg.seed).child(OFFLINE_SEED_TAG);
    let ds = generate_offline_dataset(&cfg.offline_meta(), &cfg.offline.snr_db_grid, &seeds)?;
    let model = fit_polynomial(&ds, cfg.offline.degree)?;
    Ok((ds, model))
}

/// Per-subframe statistics aggregated over sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTrace {
    pub detector: DetectorKind,
    pub sessions: usize,
    /// per subframe: sessions passing CRC, summed `v_j`, symbol errors, symbols
    pub subframes: Vec<(usize, usize, u64, u64)>,
}

impl AdaptiveTrace {
    pub fn subframe_ser(&self, j: usize) -> f64 {
        let (_, _, e, n) = self.subframes[j];
        e as f64 / n as f64
    }

    /// Pooled SER over a subframe range.
    pub fn window_ser(&self, range: std::ops::Range<usize>) -> f64 {
        let (e, n) = self.subframes[range]
            .iter()
            .fold((0, 0), |(e, n), s| (e + s.2, n + s.3));
        e as f64 / n as f64
    }

    /// `crc_pass` is the fraction of sessions whose subframe passed and
    /// `cumulative_v` the mean number of passed subframes so far; with one
    /// session these are the raw 0/1 flag and count.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        let s = self.sessions as f64;
        for (j, &(pass, v, e, n)) in self.subframes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                j,
                pass as f64 / s,
                v as f64 / s,
                e as f64 / n as f64
            )?;
        }
        Ok(())
    }
}

pub fn adaptive_config(cfg: &SimConfig) -> AdaptiveConfig {
    let a = cfg.adaptive.clone().unwrap_or_default();
    AdaptiveConfig {
        nr: cfg.nr,
        nu: cfg.nu,
        mod_order: cfg.mod_order,
        n_tr: cfg.n_tr,
        snr_db: a.snr_db,
        sigma2_ratio: cfg.sigma2_rule.ratio,
        p_bias_scale: cfg.p_bias_rule.scale,
        plan: a.plan,
        alpha_rule: a.alpha_rule,
        genie_crc: a.genie_crc,
        updates_enabled: a.updates_enabled,
    }
}

/// `n_trials` independent post-update sessions for each of `biased-ml` and
/// `dither-ml` found in the detector list.
pub fn run_adaptive(cfg: &SimConfig) -> Result<Vec<AdaptiveTrace>> {
    cfg.validate()?;
    let acfg = adaptive_config(cfg);
    acfg.plan
        .payload_bits(cfg.nu, build_constellation(cfg.mod_order)?.bits_per_symbol)?;
    let kinds: Vec<(DetectorKind, AdaptiveKind)> = cfg
        .detectors
        .iter()
        .filter_map(|d| match d {
            DetectorKind::BiasedMl => Some((*d, AdaptiveKind::BiasedMl)),
            DetectorKind::DitherMl => Some((*d, AdaptiveKind::DitherMl)),
            _ => None,
        })
        .collect();
    if kinds.is_empty() {
        return Err(Error::config(
            "adaptive runs need biased-ml or dither-ml in the detector list",
        ));
    }
    let seeds = SeedTree::new(cfg.seed);
    kinds
        .into_iter()
        .map(|(det, kind)| {
            let sessions = (0..cfg.n_trials as u64)
                .into_par_iter()
                .map(|s| run_adaptive_session(&acfg, kind, &seeds, s).map(|t| t.records))
                .collect::<Result<Vec<Vec<SubframeRecord>>>>()?;
            let mut subframes = vec![(0usize, 0usize, 0u64, 0u64); acfg.plan.d];
            for recs in &sessions {
                for (acc, r) in subframes.iter_mut().zip(recs) {
                    acc.0 += r.crc_pass as usize;
                    acc.1 += r.cumulative_v;
                    acc.2 += r.symbol_errors as u64;
                    acc.3 += r.symbols as u64;
                }
            }
            Ok(AdaptiveTrace {
                detector: det,
                sessions: sessions.len(),
                subframes,
            })
        })
        .collect()
}
