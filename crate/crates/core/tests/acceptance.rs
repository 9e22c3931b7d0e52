//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Every run uses Nr = 32, Nu = 4, 4-QAM and a fixed seed unless stated.
//! Monte Carlo sizes are fixed up front, not tuned to the outcome.

// oracle constants carry all the digits the reference produced
#![allow(clippy::excessive_precision)]

use std::process::ExitCode;
use std::time::Instant;

use onebit_core::adapt::{crc16, UpdateState};
use onebit_core::experiment::{
    run_adaptive, run_ser_sweep, run_zero_count_sweep, AdaptiveSettings, PBiasRule, Sigma2Rule,
};
use onebit_core::likelihood::{
    apply_bias, csi_likelihood_table, csi_table_from_projections, dither_invert,
    learn_likelihood_table,
};
use onebit_core::normal::{std_normal_cdf, std_normal_quantile};
use onebit_core::rng::{Purpose, SeedTree};
use onebit_core::signal::{build_constellation, draw_channel, enumerate_candidates, Sign};
use onebit_core::{
    DetectorKind, ExperimentResult, FramePlan, LikelihoodTable, LinkParams, PilotObservations,
    SimConfig,
};
use rand::Rng;

const SEED: u64 = 20_240_601;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn base(n_tr: usize, sigma2_ratio: f64) -> SimConfig {
    SimConfig {
        n_tr,
        seed: SEED,
        sigma2_rule: Sigma2Rule {
            ratio: sigma2_ratio,
        },
        p_bias_rule: PBiasRule { scale: 1e-2 },
        record_wall_time: false,
        ..SimConfig::default()
    }
}

fn ser(res: &ExperimentResult, d: DetectorKind, snr: f64) -> f64 {
    res.row(d, snr).and_then(|r| r.ser()).expect("row present")
}

fn criterion_1() -> Verdict {
    let cfg = SimConfig {
        snr_db_grid: vec![25.0, 27.5, 30.0],
        n_trials: 20,
        ..base(50, 1.0)
    };
    let res = run_zero_count_sweep(&cfg).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for &snr in &cfg.snr_db_grid {
        let plain = res
            .row(DetectorKind::NaiveMl, snr)
            .unwrap()
            .mean_zero_count
            .unwrap();
        let dith = res
            .row(DetectorKind::DitherMl, snr)
            .unwrap()
            .mean_zero_count
            .unwrap();
        pass &= plain > 50.0 && (14.0..=22.0).contains(&dith);
        detail.push(format!("{snr} dB: plain {plain:.1}, dithered {dith:.1}"));
    }
    verdict(pass, format!("zero counts of 64 ({})", detail.join("; ")))
}

fn criterion_2() -> Verdict {
    let cfg = SimConfig {
        detectors: vec![DetectorKind::NaiveMl],
        ..base(30, 0.5)
    };
    let res = run_ser_sweep(&cfg).unwrap();
    let curve = res.ser_curve(DetectorKind::NaiveMl);
    let (imin, &(snr_min, ser_min)) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .unwrap();
    let interior = imin > 0 && imin + 1 < curve.len();
    let last = curve.last().unwrap().1;
    let pass = interior && last >= 2.0 * ser_min;
    verdict(
        pass,
        format!(
            "naive N_tr=30: global min {ser_min:.3e} at {snr_min} dB (interior: {interior}), SER(30 dB) = {last:.3e}, ratio {:.2} (need >= 2)",
            last / ser_min
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut sers = Vec::new();
    for n_tr in [30, 50, 100, 1000] {
        let cfg = SimConfig {
            snr_db_grid: vec![10.0],
            detectors: vec![DetectorKind::NaiveMl],
            ..base(n_tr, 0.5)
        };
        sers.push((
            n_tr,
            ser(&run_ser_sweep(&cfg).unwrap(), DetectorKind::NaiveMl, 10.0),
        ));
    }
    let pass = sers.windows(2).all(|w| w[1].1 < w[0].1);
    let detail: Vec<String> = sers
        .iter()
        .map(|(n, s)| format!("N_tr={n}: {s:.3e}"))
        .collect();
    verdict(pass, format!("naive SER at 10 dB: {}", detail.join(", ")))
}

fn fig4_sweep() -> ExperimentResult {
    let cfg = SimConfig {
        detectors: vec![
            DetectorKind::CsiMl,
            DetectorKind::NaiveMl,
            DetectorKind::BiasedMl,
            DetectorKind::DitherMl,
            DetectorKind::Zf,
        ],
        ..base(50, 0.5)
    };
    run_ser_sweep(&cfg).unwrap()
}

fn criterion_4(res: &ExperimentResult) -> Verdict {
    let mut violations = Vec::new();
    let mut worst: f64 = 0.0;
    for (snr, csi) in res.ser_curve(DetectorKind::CsiMl) {
        if !(0.0..=30.0).contains(&snr) {
            continue;
        }
        let d = ser(res, DetectorKind::DitherMl, snr);
        if csi > 0.0 {
            worst = worst.max(d / csi);
        }
        if d > 3.0 * csi {
            violations.push(format!("{snr} dB dither {d:.2e} vs csi {csi:.2e}"));
        }
    }
    for (snr, naive) in res.ser_curve(DetectorKind::NaiveMl) {
        let b = ser(res, DetectorKind::BiasedMl, snr);
        if b > naive {
            violations.push(format!("{snr} dB biased {b:.2e} > naive {naive:.2e}"));
        }
    }
    let detail = if violations.is_empty() {
        format!("dither <= 3x CSI on 0..30 dB (worst finite ratio {worst:.2}), biased <= naive everywhere")
    } else {
        format!("violations: {}", violations.join("; "))
    };
    verdict(violations.is_empty(), detail)
}

fn criterion_5(res: &ExperimentResult) -> Verdict {
    let learned = [
        DetectorKind::NaiveMl,
        DetectorKind::BiasedMl,
        DetectorKind::DitherMl,
    ];
    let low: Vec<f64> = res
        .ser_curve(DetectorKind::Zf)
        .into_iter()
        .filter(|&(snr, zf)| snr < 0.0 && learned.iter().all(|&d| zf < ser(res, d, snr)))
        .map(|(snr, _)| snr)
        .collect();
    let high: Vec<(f64, f64, f64)> = res
        .ser_curve(DetectorKind::Zf)
        .into_iter()
        .filter(|&(snr, _)| snr >= 20.0)
        .map(|(snr, zf)| (snr, zf, ser(res, DetectorKind::DitherMl, snr)))
        .collect();
    let high_ok = high.iter().all(|&(_, zf, d)| zf > d);
    let pass = !low.is_empty() && high_ok;
    let (snr20, zf20, d20) = high[0];
    verdict(
        pass,
        format!(
            "ZF beats all learned ML at {low:?} dB; ZF > dither at every point >= 20 dB: {high_ok} (at {snr20} dB: {zf20:.2e} vs {d20:.2e})"
        ),
    )
}

fn criterion_6() -> Verdict {
    let cfg = SimConfig {
        n_trials: 200,
        detectors: vec![DetectorKind::DitherMl, DetectorKind::DitherMlEstSnr],
        ..base(50, 0.5)
    };
    let res = run_ser_sweep(&cfg).unwrap();
    let mut violations = Vec::new();
    let mut worst: f64 = 1.0;
    for (snr, perfect) in res.ser_curve(DetectorKind::DitherMl) {
        let est = ser(&res, DetectorKind::DitherMlEstSnr, snr);
        let (lo, hi) = (perfect.min(est), perfect.max(est));
        if hi > 2.0 * lo {
            violations.push(format!("{snr} dB est {est:.2e} vs perfect {perfect:.2e}"));
        } else if lo > 0.0 {
            worst = worst.max(hi / lo);
        }
    }
    let detail = if violations.is_empty() {
        format!("est-SNR within 2x of perfect-SNR at all 21 points (worst ratio {worst:.2})")
    } else {
        format!("violations: {}", violations.join("; "))
    };
    verdict(violations.is_empty(), detail)
}

fn criterion_7() -> Verdict {
    let cfg = SimConfig {
        n_trials: 50,
        detectors: vec![DetectorKind::BiasedMl, DetectorKind::DitherMl],
        adaptive: Some(AdaptiveSettings {
            plan: FramePlan {
                d: 80,
                n_d_sub: 128,
                crc_bits: 16,
            },
            snr_db: 25.0,
            genie_crc: false,
            ..Default::default()
        }),
        ..base(30, 0.5)
    };
    let traces = run_adaptive(&cfg).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for tr in &traces {
        let first = tr.window_ser(0..10);
        let last = tr.window_ser(70..80);
        let bound = if tr.detector == DetectorKind::BiasedMl {
            0.5
        } else {
            1.1
        };
        pass &= last <= bound * first;
        let passes: usize = tr.subframes.iter().map(|s| s.0).sum();
        detail.push(format!(
            "{}: first10 {first:.2e}, last10 {last:.2e} (need <= {bound}x{}), CRC pass rate {:.4}",
            tr.detector,
            if first == 0.0 {
                "; holds trivially, no errors in the first window"
            } else {
                ""
            },
            passes as f64 / (tr.sessions * tr.subframes.len()) as f64
        ));
    }
    verdict(pass, detail.join("; "))
}

// ---- criterion 8: exactness properties ----

fn prop_counting_oracle() -> bool {
    let mut rng = SeedTree::new(SEED).stream(Purpose::Test, &[1]);
    let (k, n_tr, dim) = (5, 7, 6);
    let y: Vec<Sign> = (0..k * n_tr * dim)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    let t =
        learn_likelihood_table(&PilotObservations::new(k, n_tr, dim, y.clone()).unwrap()).unwrap();
    (0..k).all(|kk| {
        (0..dim).all(|i| {
            // index arithmetic of the candidate-major pilot schedule
            let ones = (0..n_tr)
                .filter(|&t| y[(kk * n_tr + t) * dim + i] == 1)
                .count();
            t.p_one(kk, i) == ones as f64 / n_tr as f64
        })
    })
}

fn prop_dither_roundtrip() -> bool {
    let lp = LinkParams::new(1.0, 0.1, 0.5).unwrap();
    let psi: Vec<f64> = (0..41).map(|j| -1.0 + 0.05 * j as f64).collect();
    let dithered: Vec<f64> = psi
        .iter()
        .map(|&v| std_normal_cdf(v * (2.0 / (lp.n0 + lp.sigma2)).sqrt()))
        .collect();
    let t = LikelihoodTable::from_probabilities(psi.len(), 1, dithered).unwrap();
    let inv = dither_invert(&t, &lp, 1e-300).unwrap();
    psi.iter()
        .enumerate()
        .all(|(k, &v)| (inv.p_one(k, 0) - std_normal_cdf(v * (2.0 / lp.n0).sqrt())).abs() < 1e-8)
}

fn prop_normal_oracle() -> bool {
    // (x, Phi(x)) to 17 significant digits
    const CDF: [(f64, f64); 7] = [
        (-6.0, 9.8658764503769814e-10),
        (-3.0, 1.3498980316300946e-3),
        (-1.0, 0.15865525393145705),
        (0.0, 0.5),
        (0.5, 0.69146246127401310),
        (2.0, 0.97724986805182079),
        (4.0, 0.99996832875816688),
    ];
    const QUANTILE: [(f64, f64); 5] = [
        (1e-10, -6.3613409024040557),
        (1e-3, -3.0902323061678132),
        (0.025, -1.9599639845400542),
        (0.6, 0.25334710313579978),
        (0.999, 3.0902323061678132),
    ];
    CDF.iter().all(|&(x, p)| {
        let got = std_normal_cdf(x);
        (got - p).abs() < 1e-14 && (got - p).abs() <= 1e-12 * p
    }) && QUANTILE
        .iter()
        .all(|&(p, x)| (std_normal_quantile(p).unwrap() - x).abs() < 1e-9 * x.abs().max(1.0))
}

/// `log2 prod_i Phi(y_i z_i)` with a separately tracked binary exponent, so
/// the product never underflows before a factor itself does.
fn product_log2(z: &[f64], y: &[Sign]) -> f64 {
    let (mut m, mut e) = (1.0f64, 0i64);
    for (&zi, &yi) in z.iter().zip(y) {
        m *= std_normal_cdf(yi as f64 * zi);
        if m == 0.0 {
            return f64::NEG_INFINITY;
        }
        while m < 1.0 {
            m *= 2f64.powi(64);
            e -= 64;
        }
    }
    e as f64 + m.log2()
}

fn prop_ml_vs_direct_product() -> bool {
    let seeds = SeedTree::new(SEED);
    let c = build_constellation(4).unwrap();
    let cs = enumerate_candidates(&c, 2).unwrap();
    let mut rng = seeds.stream(Purpose::Test, &[2]);
    let mut checked = 0;
    let agree = (0..20u64).all(|trial| {
        let ch = draw_channel(8, 2, &mut seeds.stream(Purpose::Channel, &[trial])).unwrap();
        let dim = ch.dim();
        let lp = LinkParams::from_snr_db(-5.0 + trial as f64, 1.0, 0.0).unwrap();
        let t = csi_likelihood_table(&ch, &cs, &lp).unwrap();
        let scale = (2.0 * lp.rho / lp.n0).sqrt();
        let z: Vec<f64> = ch
            .candidate_projections(&cs)
            .iter()
            .map(|f| scale * f)
            .collect();
        (0..10).all(|_| {
            let y: Vec<Sign> = (0..dim)
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect();
            let (k_ml, _, _) = t.best_candidate(&y);
            let scores: Vec<f64> = (0..cs.k_count)
                .map(|k| product_log2(&z[k * dim..(k + 1) * dim], &y))
                .collect();
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // a factor below the f64 range leaves the oracle undefined, not wrong
            if scores.contains(&f64::NEG_INFINITY) {
                return true;
            }
            checked += 1;
            (scores[k_ml] - best).abs() <= 1e-9 * best.abs().max(1.0)
        })
    });
    agree && checked >= 150
}

fn prop_toy_optimality() -> bool {
    // Nr = 2, Nu = 1: four real outputs, sixteen observations
    let seeds = SeedTree::new(SEED);
    let c = build_constellation(4).unwrap();
    let cs = enumerate_candidates(&c, 1).unwrap();
    let patterns: Vec<Vec<Sign>> = (0..16u32)
        .map(|m| {
            (0..4)
                .map(|b| if m >> b & 1 == 1 { 1 } else { -1 })
                .collect()
        })
        .collect();
    (0..10u64).all(|trial| {
        let ch = draw_channel(2, 1, &mut seeds.stream(Purpose::Channel, &[trial])).unwrap();
        let lp = LinkParams::from_snr_db(-4.0 + 2.0 * trial as f64, 1.0, 0.0).unwrap();
        let full = csi_likelihood_table(&ch, &cs, &lp).unwrap();
        let prob = |t: &LikelihoodTable, y: &[Sign], k: usize| -> f64 {
            y.iter()
                .enumerate()
                .map(|(i, &yi)| {
                    if yi > 0 {
                        t.p_one(k, i)
                    } else {
                        t.p_minus_one(k, i)
                    }
                })
                .product()
        };
        // all four hypotheses: ML attains the per-observation maximum
        let per_obs = patterns.iter().all(|y| {
            let k = full.best_candidate(y).0;
            let best = (0..4).map(|kk| prob(&full, y, kk)).fold(0.0, f64::max);
            prob(&full, y, k) >= best * (1.0 - 1e-12)
        });
        // two hypotheses: exhaustive search over all 2^16 decision rules
        let proj: Vec<f64> = ch
            .apply(cs.vector(0))
            .into_iter()
            .chain(ch.apply(cs.vector(3)))
            .collect();
        let t = csi_table_from_projections(&proj, 4, &lp).unwrap();
        let error_of = |rule: &dyn Fn(usize) -> usize| -> f64 {
            1.0 - patterns
                .iter()
                .enumerate()
                .map(|(m, y)| 0.5 * prob(&t, y, rule(m)))
                .sum::<f64>()
        };
        let ml = error_of(&|m| t.best_candidate(&patterns[m]).0);
        let best = (0..1u32 << 16)
            .map(|r| error_of(&|m| (r >> m & 1) as usize))
            .fold(f64::INFINITY, f64::min);
        per_obs && (ml - best).abs() < 1e-15
    })
}

fn prop_crc_check_value() -> bool {
    let bits: Vec<u8> = b"123456789"
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |b| byte >> b & 1))
        .collect();
    crc16(&bits) == 0x29B1
}

fn prop_biased_update_is_batch_relearn() -> bool {
    let seeds = SeedTree::new(SEED);
    let mut rng = seeds.stream(Purpose::Test, &[3]);
    let (k, n_tr, dim, p_bias) = (6, 10, 8, 1e-3);
    let pilots: Vec<Sign> = (0..k * n_tr * dim)
        .map(|_| if rng.random_bool(0.8) { 1 } else { -1 })
        .collect();
    let table =
        learn_likelihood_table(&PilotObservations::new(k, n_tr, dim, pilots.clone()).unwrap())
            .unwrap();
    let mut st = UpdateState::biased(table, p_bias).unwrap();
    let mut extra: Vec<Vec<Sign>> = (0..k)
        .map(|kk| pilots[kk * n_tr * dim..(kk + 1) * n_tr * dim].to_vec())
        .collect();
    for _ in 0..4 {
        let decoded: Vec<usize> = (0..9).map(|_| rng.random_range(0..k)).collect();
        let obs: Vec<Sign> = (0..9 * dim)
            .map(|_| if rng.random_bool(0.7) { 1 } else { -1 })
            .collect();
        for (n, &kk) in decoded.iter().enumerate() {
            extra[kk].extend_from_slice(&obs[n * dim..(n + 1) * dim]);
        }
        st = st.post_update_biased(&decoded, &obs).unwrap();
    }
    (0..k).all(|kk| {
        let reps = extra[kk].len() / dim;
        let batch = learn_likelihood_table(
            &PilotObservations::new(1, reps, dim, extra[kk].clone()).unwrap(),
        )
        .unwrap();
        let batch = apply_bias(&batch, p_bias).unwrap();
        (0..dim).all(|i| st.table().p_one(kk, i) == batch.p_one(0, i))
    })
}

fn prop_thread_reproducibility() -> bool {
    let cfg = SimConfig {
        nr: 8,
        nu: 2,
        snr_db_grid: vec![-4.0, 4.0, 12.0],
        n_trials: 12,
        n_data_per_trial: 100,
        detectors: vec![
            DetectorKind::CsiMl,
            DetectorKind::NaiveMl,
            DetectorKind::BiasedMl,
            DetectorKind::DitherMl,
            DetectorKind::DitherMlEstSnr,
            DetectorKind::Zf,
        ],
        ..base(20, 0.5)
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut buf = Vec::new();
            run_ser_sweep(&cfg)
                .unwrap()
                .write_csv(&mut buf, false)
                .unwrap();
            buf
        })
    };
    run(1) == run(4)
}

type Property = (&'static str, fn() -> bool);

fn criterion_8() -> Verdict {
    let props: [Property; 8] = [
        ("counting oracle", prop_counting_oracle),
        ("dither roundtrip 1e-8", prop_dither_roundtrip),
        ("Phi/Phi^-1 oracle", prop_normal_oracle),
        ("ML vs direct product", prop_ml_vs_direct_product),
        ("toy ML optimality", prop_toy_optimality),
        ("CRC 0x29B1", prop_crc_check_value),
        (
            "biased update = batch relearn",
            prop_biased_update_is_batch_relearn,
        ),
        ("thread-count reproducibility", prop_thread_reproducibility),
    ];
    let results: Vec<(&str, bool)> = props.iter().map(|(name, f)| (*name, f())).collect();
    let pass = results.iter().all(|r| r.1);
    let detail: Vec<String> = results
        .iter()
        .map(|(n, ok)| format!("{n}: {}", if *ok { "ok" } else { "FAILED" }))
        .collect();
    verdict(pass, detail.join(", "))
}

fn main() -> ExitCode {
    // optional criterion numbers select a subset; libtest flags are ignored
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let selected = |id: u32| only.is_empty() || only.contains(&id);
    let (mut ran, mut failed) = (0, 0);
    let mut report = |id: u32, name: &str, run: &dyn Fn() -> Verdict| {
        if !selected(id) {
            return;
        }
        let start = Instant::now();
        let v = run();
        ran += 1;
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "zero-count reproduction", &criterion_1);
    report(2, "stochastic resonance", &criterion_2);
    report(3, "training-length ordering", &criterion_3);
    let fig4 = (selected(4) || selected(5)).then(|| {
        let start = Instant::now();
        let res = fig4_sweep();
        println!(
            "     shared SER sweep for criteria 4 and 5: {:.1} s",
            start.elapsed().as_secs_f64()
        );
        res
    });
    if let Some(res) = &fig4 {
        report(4, "proposed-method robustness", &|| criterion_4(res));
        report(5, "ZF crossover", &|| criterion_5(res));
    }
    report(6, "estimated-SNR parity", &criterion_6);
    report(7, "post-update gain", &criterion_7);
    report(8, "property suites", &criterion_8);
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
