//! CRC-gated post update of likelihood tables during the data phase.
//!
//! Data is sent in `D` subframes. Whenever a subframe passes its CRC, the
//! detected symbol vectors and their quantized observations are fed back as
//! extra pilots: by merging counts (biased learning) or by blending an
//! empirical data-phase table into the initial table (dithered learning).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{
    apply_bias, dither_invert, learn_likelihood_table, LikelihoodTable, PilotObservations,
};
use crate::rng::{Purpose, SeedTree};
use crate::signal::{
    build_constellation, draw_channel, enumerate_candidates, sign, CandidateSet, Constellation,
    LinkParams, Sign,
};

pub const CRC_BITS: usize = 16;

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final
/// xor) over a bit string given one bit per byte, MSB first.
pub fn crc16(bits: &[u8]) -> u16 {
    bits.iter().fold(0xFFFF_u16, |crc, &b| {
        let feedback = ((crc >> 15) as u8 & 1) ^ (b & 1);
        let crc = crc << 1;
        if feedback == 1 {
            crc ^ 0x1021
        } else {
            crc
        }
    })
}

/// Payload followed by its 16-bit CRC, big-endian.
pub fn crc16_append(bits: &[u8]) -> Result<Vec<u8>> {
    if bits.is_empty() {
        return Err(Error::config("CRC payload must not be empty"));
    }
    let crc = crc16(bits);
    let mut out = bits.to_vec();
    out.extend((0..CRC_BITS).rev().map(|s| (crc >> s) as u8 & 1));
    Ok(out)
}

pub fn crc16_check(bits: &[u8]) -> bool {
    if bits.len() <= CRC_BITS {
        return false;
    }
    let (payload, tail) = bits.split_at(bits.len() - CRC_BITS);
    let got = tail
        .iter()
        .fold(0u16, |acc, &b| (acc << 1) | (b & 1) as u16);
    crc16(payload) == got
}

/// Subframe layout of the data phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePlan {
    /// number of subframes `D`
    pub d: usize,
    /// symbol vectors per subframe
    pub n_d_sub: usize,
    #[serde(default = "default_crc_bits")]
    pub crc_bits: usize,
}

fn default_crc_bits() -> usize {
    CRC_BITS
}

impl Default for FramePlan {
    fn default() -> Self {
        Self {
            d: 80,
            n_d_sub: 128,
            crc_bits: CRC_BITS,
        }
    }
}

impl FramePlan {
    pub fn n_data(&self) -> usize {
        self.d * self.n_d_sub
    }

    /// Information bits per subframe once the CRC is appended.
    pub fn payload_bits(&self, nu: usize, bits_per_symbol: usize) -> Result<usize> {
        let total = self.n_d_sub * nu * bits_per_symbol;
        if self.crc_bits != CRC_BITS {
            return Err(Error::config(format!(
                "only a {CRC_BITS}-bit CRC is supported, got {}",
                self.crc_bits
            )));
        }
        if self.d == 0 || total <= self.crc_bits {
            return Err(Error::config(format!(
                "subframe of {} symbol vectors cannot carry a payload and a {}-bit CRC",
                self.n_d_sub, self.crc_bits
            )));
        }
        Ok(total - self.crc_bits)
    }
}

/// Update rate `α_{k,i}(v_j)` for the blended update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRule {
    /// `N_tr / (N_tr + d_k)`: pilots and decoded data weighted by sample count.
    CountsProportional,
    /// Fixed rate for candidates with decoded data, 1 otherwise.
    Constant(f64),
}

impl AlphaRule {
    fn alpha(&self, n_tr: u32, d_k: u32) -> f64 {
        match *self {
            _ if d_k == 0 => 1.0,
            AlphaRule::CountsProportional => n_tr as f64 / (n_tr + d_k) as f64,
            AlphaRule::Constant(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UpdateKind {
    CountMerge { p_bias_bits: u64 },
    Blend,
}

/// Online state of one post-update session.
#[derive(Debug, Clone)]
pub struct UpdateState {
    /// subframes processed
    pub j: usize,
    /// subframes that passed CRC
    pub v: usize,
    /// decoded occurrences of each candidate in passing subframes
    pub d_k: Vec<u32>,
    /// initial table `p̂(0)`
    pub base_table: LikelihoodTable,
    pub alpha_rule: AlphaRule,
    n_tr: u32,
    data_ones: Vec<u32>,
    table: LikelihoodTable,
    kind: UpdateKind,
}

impl UpdateState {
    /// Count-merge updates on top of a learned pilot table.
    pub fn biased(pilot_table: LikelihoodTable, p_bias: f64) -> Result<Self> {
        if !pilot_table.is_learned() {
            return Err(Error::config(
                "count-merge update needs a learned pilot table",
            ));
        }
        let n_tr = pilot_table.counts_total()[0];
        let table = apply_bias(&pilot_table, p_bias)?;
        let n = pilot_table.k_count() * pilot_table.dim();
        Ok(Self {
            j: 0,
            v: 0,
            d_k: vec![0; pilot_table.k_count()],
            alpha_rule: AlphaRule::CountsProportional,
            n_tr,
            data_ones: vec![0; n],
            table,
            base_table: pilot_table,
            kind: UpdateKind::CountMerge {
                p_bias_bits: p_bias.to_bits(),
            },
        })
    }

    /// Blended updates on top of an initial table learned from `n_tr` pilots
    /// per candidate.
    pub fn dithered(
        base_table: LikelihoodTable,
        n_tr: usize,
        alpha_rule: AlphaRule,
    ) -> Result<Self> {
        if let AlphaRule::Constant(a) = alpha_rule {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(format!("update rate {a} outside [0, 1]")));
            }
        }
        if n_tr == 0 {
            return Err(Error::config("training length must be at least 1"));
        }
        let n = base_table.k_count() * base_table.dim();
        Ok(Self {
            j: 0,
            v: 0,
            d_k: vec![0; base_table.k_count()],
            alpha_rule,
            n_tr: n_tr as u32,
            data_ones: vec![0; n],
            table: base_table.clone(),
            base_table,
            kind: UpdateKind::Blend,
        })
    }

    /// Table to detect the next subframe with.
    pub fn table(&self) -> &LikelihoodTable {
        &self.table
    }

    /// Subframe failed its CRC: nothing is learned.
    pub fn skip_subframe(mut self) -> Self {
        self.j += 1;
        self
    }

    /// Count-merge update with a subframe that passed CRC.
    pub fn post_update_biased(self, decoded: &[usize], obs: &[Sign]) -> Result<Self> {
        if !matches!(self.kind, UpdateKind::CountMerge { .. }) {
            return Err(Error::config(
                "state was not created for count-merge updates",
            ));
        }
        self.post_update(decoded, obs)
    }

    /// Blended update with a subframe that passed CRC.
    pub fn post_update_dithered(self, decoded: &[usize], obs: &[Sign]) -> Result<Self> {
        if self.kind != UpdateKind::Blend {
            return Err(Error::config("state was not created for blended updates"));
        }
        self.post_update(decoded, obs)
    }

    /// Feeds one CRC-verified subframe: `decoded[n]` is the detected candidate
    /// for the `n`-th observation in `obs` (row-major, `2Nr` signs each).
    pub fn post_update(mut self, decoded: &[usize], obs: &[Sign]) -> Result<Self> {
        let dim = self.table.dim();
        if obs.len() != decoded.len() * dim {
            return Err(Error::config(format!(
                "{} decoded vectors but {} observation signs",
                decoded.len(),
                obs.len()
            )));
        }
        for (&k, y) in decoded.iter().zip(obs.chunks_exact(dim)) {
            if k >= self.d_k.len() {
                return Err(Error::config(format!("decoded candidate {k} out of range")));
            }
            self.d_k[k] += 1;
            for (c, &yi) in self.data_ones[k * dim..(k + 1) * dim].iter_mut().zip(y) {
                *c += (yi > 0) as u32;
            }
        }
        self.j += 1;
        self.v += 1;
        self.table = match self.kind {
            UpdateKind::CountMerge { p_bias_bits } => {
                self.merged_counts(f64::from_bits(p_bias_bits))?
            }
            UpdateKind::Blend => self.blended(),
        };
        Ok(self)
    }

    fn merged_counts(&self, p_bias: f64) -> Result<LikelihoodTable> {
        let dim = self.base_table.dim();
        let ones = self
            .base_table
            .counts_one()
            .iter()
            .zip(&self.data_ones)
            .map(|(a, b)| a + b)
            .collect();
        let total = (0..self.data_ones.len())
            .map(|ix| self.n_tr + self.d_k[ix / dim])
            .collect();
        let merged = LikelihoodTable::from_counts(self.base_table.k_count(), dim, ones, total)?;
        apply_bias(&merged, p_bias)
    }

    fn blended(&self) -> LikelihoodTable {
        let base = &self.base_table;
        let dim = base.dim();
        let n = self.data_ones.len();
        let mut p_one = Vec::with_capacity(n);
        let mut log_one = Vec::with_capacity(n);
        let mut log_minus = Vec::with_capacity(n);
        for ix in 0..n {
            let d = self.d_k[ix / dim];
            let alpha = self.alpha_rule.alpha(self.n_tr, d);
            let p0 = base.p_one_values()[ix];
            if alpha == 1.0 {
                p_one.push(p0);
                log_one.push(base.log_p_one_values()[ix]);
                log_minus.push(base.log_p_minus_one_values()[ix]);
                continue;
            }
            let pe = self.data_ones[ix] as f64 / d as f64;
            p_one.push(alpha * p0 + (1.0 - alpha) * pe);
            // mix in the log domain so tails of analytic base tables survive
            log_one.push(log_mix(alpha, base.log_p_one_values()[ix], pe));
            log_minus.push(log_mix(alpha, base.log_p_minus_one_values()[ix], 1.0 - pe));
        }
        LikelihoodTable::from_parts(base.k_count(), dim, p_one, None, log_one, log_minus)
    }
}

/// `ln(α·exp(log_a) + (1 − α)·b)`
fn log_mix(alpha: f64, log_a: f64, b: f64) -> f64 {
    let x = if alpha > 0.0 {
        alpha.ln() + log_a
    } else {
        f64::NEG_INFINITY
    };
    let y = if alpha < 1.0 && b > 0.0 {
        (1.0 - alpha).ln() + b.ln()
    } else {
        f64::NEG_INFINITY
    };
    let hi = x.max(y);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((x - hi).exp() + (y - hi).exp()).ln()
}

/// Which learned detector a session adapts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptiveKind {
    BiasedMl,
    DitherMl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub nr: usize,
    pub nu: usize,
    pub mod_order: usize,
    pub n_tr: usize,
    pub snr_db: f64,
    pub sigma2_ratio: f64,
    pub p_bias_scale: f64,
    pub plan: FramePlan,
    pub alpha_rule: AlphaRule,
    /// success = every symbol correct, instead of decoding the CRC bits
    pub genie_crc: bool,
    pub updates_enabled: bool,
}

impl AdaptiveConfig {
    pub fn p_bias(&self) -> f64 {
        self.p_bias_scale / self.n_tr as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubframeRecord {
    pub crc_pass: bool,
    pub cumulative_v: usize,
    pub symbol_errors: usize,
    pub symbols: usize,
}

impl SubframeRecord {
    pub fn ser(&self) -> f64 {
        self.symbol_errors as f64 / self.symbols as f64
    }
}

#[derive(Debug, Clone)]
pub struct SessionTrace {
    pub records: Vec<SubframeRecord>,
    pub final_table: LikelihoodTable,
}

fn symbol_errors(cs: &CandidateSet, a: usize, b: usize) -> usize {
    cs.symbols(a)
        .iter()
        .zip(cs.symbols(b))
        .filter(|(x, y)| x != y)
        .count()
}

fn bits_to_candidates(bits: &[u8], c: &Constellation, cs: &CandidateSet) -> Vec<usize> {
    let bps = c.bits_per_symbol;
    bits.chunks_exact(bps * cs.nu)
        .map(|vec_bits| {
            let syms: Vec<usize> = vec_bits
                .chunks_exact(bps)
                .map(|b| c.index_of_label(b.iter().fold(0u32, |acc, &x| (acc << 1) | x as u32)))
                .collect();
            cs.index_of(&syms)
        })
        .collect()
}

fn candidates_to_bits(ks: &[usize], c: &Constellation, cs: &CandidateSet) -> Vec<u8> {
    let bps = c.bits_per_symbol;
    let mut out = Vec::with_capacity(ks.len() * cs.nu * bps);
    for &k in ks {
        for &s in cs.symbols(k) {
            let label = c.bit_map[s as usize];
            out.extend((0..bps).rev().map(|b| (label >> b) as u8 & 1));
        }
    }
    out
}

/// Pilot phase followed by `D` subframes of detection, CRC check and update.
///
/// Session `session` draws its channel, pilots, payload and noise from
/// substreams keyed by the session index, so biased and dithered sessions
/// with the same index see identical channels and data.
pub fn run_adaptive_session(
    cfg: &AdaptiveConfig,
    kind: AdaptiveKind,
    seeds: &SeedTree,
    session: u64,
) -> Result<SessionTrace> {
    let c = build_constellation(cfg.mod_order)?;
    let cs = enumerate_candidates(&c, cfg.nu)?;
    let payload_bits = cfg.plan.payload_bits(cfg.nu, c.bits_per_symbol)?;
    let lp = LinkParams::from_snr_db(cfg.snr_db, 1.0, cfg.sigma2_ratio)?;
    let p_bias = cfg.p_bias();

    let ch = draw_channel(
        cfg.nr,
        cfg.nu,
        &mut seeds.stream(Purpose::Channel, &[session]),
    )?;
    let dim = ch.dim();
    let proj = ch.candidate_projections(&cs);
    let mut pilot_noise = seeds.stream(Purpose::PilotNoise, &[session]);
    let mut state = match kind {
        AdaptiveKind::BiasedMl => {
            let obs = PilotObservations::simulate(
                &proj,
                dim,
                &lp,
                cfg.n_tr,
                &mut pilot_noise,
                None::<&mut ChaCha8Rng>,
            )?;
            UpdateState::biased(learn_likelihood_table(&obs)?, p_bias)?
        }
        AdaptiveKind::DitherMl => {
            let mut dither = seeds.stream(Purpose::PilotDither, &[session]);
            let obs = PilotObservations::simulate(
                &proj,
                dim,
                &lp,
                cfg.n_tr,
                &mut pilot_noise,
                Some(&mut dither),
            )?;
            let base = dither_invert(&learn_likelihood_table(&obs)?, &lp, p_bias)?;
            UpdateState::dithered(base, cfg.n_tr, cfg.alpha_rule)?
        }
    };

    let mut payload_rng = seeds.stream(Purpose::Payload, &[session]);
    let mut noise_rng = seeds.stream(Purpose::DataNoise, &[session]);
    let amp = lp.rho.sqrt();
    let noise_std = (lp.n0 / 2.0).sqrt();
    let mut records = Vec::with_capacity(cfg.plan.d);
    let mut obs = vec![0 as Sign; cfg.plan.n_d_sub * dim];
    let mut detected = vec![0usize; cfg.plan.n_d_sub];
    for _ in 0..cfg.plan.d {
        let payload: Vec<u8> = (0..payload_bits)
            .map(|_| payload_rng.random::<bool>() as u8)
            .collect();
        let sent = bits_to_candidates(&crc16_append(&payload)?, &c, &cs);
        let mut errors = 0;
        for (n, &k) in sent.iter().enumerate() {
            let y = &mut obs[n * dim..(n + 1) * dim];
            for (yi, &m) in y.iter_mut().zip(&proj[k * dim..(k + 1) * dim]) {
                let z: f64 = noise_rng.sample(StandardNormal);
                *yi = sign(amp * m + noise_std * z);
            }
            detected[n] = state.table().best_candidate(y).0;
            errors += symbol_errors(&cs, detected[n], k);
        }
        let pass = if cfg.genie_crc {
            detected == sent
        } else {
            crc16_check(&candidates_to_bits(&detected, &c, &cs))
        };
        state = if pass && cfg.updates_enabled {
            match kind {
                AdaptiveKind::BiasedMl => state.post_update_biased(&detected, &obs)?,
                AdaptiveKind::DitherMl => state.post_update_dithered(&detected, &obs)?,
            }
        } else if pass {
            UpdateState {
                v: state.v + 1,
                ..state.skip_subframe()
            }
        } else {
            state.skip_subframe()
        };
        records.push(SubframeRecord {
            crc_pass: pass,
            cumulative_v: state.v,
            symbol_errors: errors,
            symbols: cfg.plan.n_d_sub * cfg.nu,
        });
    }
    Ok(SessionTrace {
        records,
        final_table: state.table,
    })
}
