//! Signal model: constellations, candidate vectors, channels, noise, dither
//! and the one-bit quantizer, all in real-composite form.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One quantizer output, always `+1` or `-1`.
pub type Sign = i8;

/// Largest candidate set we are willing to enumerate.
pub const MAX_CANDIDATES: usize = 1 << 24;

/// Square QAM with unit average energy and per-axis reflected Gray labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub order: usize,
    pub points: Vec<Complex64>,
    pub bits_per_symbol: usize,
    /// symbol index -> bit label (`bits_per_symbol` bits, MSB first)
    pub bit_map: Vec<u32>,
    label_to_index: Vec<usize>,
}

fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

impl Constellation {
    pub fn qam(order: usize) -> Result<Self> {
        let side = match order {
            4 => 2,
            16 => 4,
            64 => 8,
            _ => {
                return Err(Error::config(format!(
                    "unsupported constellation order {order}; expected 4, 16 or 64"
                )))
            }
        };
        let axis_bits = (side as u32).trailing_zeros();
        // mean |x|^2 of the integer grid {±1, ±3, ...}^2 is 2(M-1)/3
        let scale = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();
        let mut points = Vec::with_capacity(order);
        let mut bit_map = Vec::with_capacity(order);
        for a in 0..side {
            for b in 0..side {
                let re = (2 * a) as f64 - (side - 1) as f64;
                let im = (2 * b) as f64 - (side - 1) as f64;
                points.push(Complex64::new(re * scale, im * scale));
                bit_map.push((gray(a as u32) << axis_bits) | gray(b as u32));
            }
        }
        let mut label_to_index = vec![0; order];
        for (ix, &label) in bit_map.iter().enumerate() {
            label_to_index[label as usize] = ix;
        }
        Ok(Self {
            order,
            points,
            bits_per_symbol: order.trailing_zeros() as usize,
            bit_map,
            label_to_index,
        })
    }

    /// Inverse of `bit_map`.
    pub fn index_of_label(&self, label: u32) -> usize {
        self.label_to_index[label as usize]
    }

    /// Index of the point closest to `z`.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (ix, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = ix;
            }
        }
        best
    }
}

pub fn build_constellation(order: usize) -> Result<Constellation> {
    Constellation::qam(order)
}

/// All `order^nu` transmit hypotheses. Candidate `k` assigns user `u` the
/// symbol `(k / order^u) % order`, so user 0 varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub nu: usize,
    pub order: usize,
    pub k_count: usize,
    /// `k_count` rows of length `2 * nu`: `[Re s; Im s]`
    pub vectors_real: Vec<f64>,
    user_symbols: Vec<u8>,
}

impl CandidateSet {
    pub fn enumerate(c: &Constellation, nu: usize) -> Result<Self> {
        if nu == 0 {
            return Err(Error::config("number of users must be at least 1"));
        }
        let k_count = (0..nu)
            .try_fold(1usize, |acc, _| {
                acc.checked_mul(c.order).filter(|&k| k <= MAX_CANDIDATES)
            })
            .ok_or_else(|| {
                Error::config(format!(
                    "{}^{nu} candidates exceeds the limit of 2^24",
                    c.order
                ))
            })?;
        let mut vectors_real = Vec::with_capacity(k_count * 2 * nu);
        let mut user_symbols = Vec::with_capacity(k_count * nu);
        let mut s = vec![Complex64::new(0.0, 0.0); nu];
        for k in 0..k_count {
            let mut rest = k;
            for su in s.iter_mut() {
                let ix = rest % c.order;
                rest /= c.order;
                user_symbols.push(ix as u8);
                *su = c.points[ix];
            }
            vectors_real.extend(to_real_composite(&s));
        }
        Ok(Self {
            nu,
            order: c.order,
            k_count,
            vectors_real,
            user_symbols,
        })
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        let n = 2 * self.nu;
        &self.vectors_real[k * n..(k + 1) * n]
    }

    /// Per-user symbol indices of candidate `k`.
    pub fn symbols(&self, k: usize) -> &[u8] {
        &self.user_symbols[k * self.nu..(k + 1) * self.nu]
    }

    pub fn index_of(&self, symbols: &[usize]) -> usize {
        symbols
            .iter()
            .rev()
            .fold(0, |acc, &ix| acc * self.order + ix)
    }
}

pub fn enumerate_candidates(c: &Constellation, nu: usize) -> Result<CandidateSet> {
    CandidateSet::enumerate(c, nu)
}

/// Stacks `[Re v; Im v]`.
pub fn to_real_composite(v: &[Complex64]) -> Vec<f64> {
    v.iter()
        .map(|z| z.re)
        .chain(v.iter().map(|z| z.im))
        .collect()
}

/// `[[Re H, -Im H], [Im H, Re H]]`.
pub fn real_composite_matrix(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (nr, nu) = h.shape();
    DMatrix::from_fn(2 * nr, 2 * nu, |i, j| {
        let z = h[(i % nr, j % nu)];
        match (i < nr, j < nu) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub nr: usize,
    pub nu: usize,
    pub h_complex: DMatrix<Complex64>,
    pub h_real: DMatrix<f64>,
}

impl ChannelRealization {
    pub fn from_complex(h: DMatrix<Complex64>) -> Self {
        let (nr, nu) = h.shape();
        let h_real = real_composite_matrix(&h);
        Self {
            nr,
            nu,
            h_complex: h,
            h_real,
        }
    }

    /// Length of the real-composite received vector, `2 * nr`.
    pub fn dim(&self) -> usize {
        2 * self.nr
    }

    /// `H_real * s` for a real-composite transmit vector.
    pub fn apply(&self, s_real: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(s_real, &mut out);
        out
    }

    fn apply_into(&self, s_real: &[f64], out: &mut [f64]) {
        let h = &self.h_real;
        for (i, o) in out.iter_mut().enumerate() {
            *o = s_real.iter().enumerate().map(|(j, s)| h[(i, j)] * s).sum();
        }
    }

    /// Noiseless projections `f_i · s_k` for every candidate, row-major `K x 2Nr`.
    pub fn candidate_projections(&self, cs: &CandidateSet) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; cs.k_count * dim];
        for (k, row) in out.chunks_exact_mut(dim).enumerate() {
            self.apply_into(cs.vector(k), row);
        }
        out
    }
}

/// I.i.d. CN(0, 1) entries.
pub fn draw_channel<R: Rng + ?Sized>(
    nr: usize,
    nu: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if nu == 0 || nr < nu {
        return Err(Error::config(format!(
            "need nr >= nu >= 1, got nr = {nr}, nu = {nu}"
        )));
    }
    let std = std::f64::consts::FRAC_1_SQRT_2;
    // column-major fill, real part then imaginary part per entry
    let h = DMatrix::from_fn(nr, nu, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * std, im * std)
    });
    Ok(ChannelRealization::from_complex(h))
}

/// Average transmit power, complex noise variance and complex dither variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub rho: f64,
    pub n0: f64,
    pub sigma2: f64,
}

impl LinkParams {
    pub fn new(rho: f64, n0: f64, sigma2: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite())
            || !(n0 > 0.0 && n0.is_finite())
            || !(sigma2 >= 0.0 && sigma2.is_finite())
        {
            return Err(Error::config(format!(
                "invalid link parameters rho = {rho}, n0 = {n0}, sigma2 = {sigma2}"
            )));
        }
        Ok(Self { rho, n0, sigma2 })
    }

    /// `n0 = rho / 10^(gamma/10)` and `sigma2 = dither_ratio * rho`.
    pub fn from_snr_db(gamma_db: f64, rho: f64, dither_ratio: f64) -> Result<Self> {
        Self::new(rho, rho * 10f64.powf(-gamma_db / 10.0), dither_ratio * rho)
    }

    pub fn gamma_db(&self) -> f64 {
        10.0 * (self.rho / self.n0).log10()
    }

    pub fn with_n0(self, n0: f64) -> Result<Self> {
        Self::new(self.rho, n0, self.sigma2)
    }
}

/// Adds `N(0, variance)` to every entry.
pub(crate) fn add_gaussian<R: Rng + ?Sized>(r: &mut [f64], variance: f64, rng: &mut R) {
    if variance == 0.0 {
        return;
    }
    let std = variance.sqrt();
    for x in r.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += std * z;
    }
}

/// `sqrt(rho) * H_real * s_real + n`, with `n` i.i.d. `N(0, N0/2)`.
pub fn transmit<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    s_real: &[f64],
    lp: &LinkParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if s_real.len() != 2 * ch.nu {
        return Err(Error::config(format!(
            "transmit vector has length {}, expected {}",
            s_real.len(),
            2 * ch.nu
        )));
    }
    let mut r = ch.apply(s_real);
    let amp = lp.rho.sqrt();
    r.iter_mut().for_each(|x| *x *= amp);
    add_gaussian(&mut r, lp.n0 / 2.0, rng);
    Ok(r)
}

/// `+1` for `x >= 0`, `-1` otherwise.
#[inline]
pub fn sign(x: f64) -> Sign {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

pub fn quantize(r: &[f64]) -> Vec<Sign> {
    r.iter().map(|&x| sign(x)).collect()
}

/// `r + d` with `d` i.i.d. `N(0, sigma2/2)`.
pub fn add_dither<R: Rng + ?Sized>(r: &[f64], sigma2: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma2 >= 0.0) {
        return Err(Error::config(format!(
            "dither variance must be non-negative, got {sigma2}"
        )));
    }
    let mut out = r.to_vec();
    add_gaussian(&mut out, sigma2 / 2.0, rng);
    Ok(out)
}
