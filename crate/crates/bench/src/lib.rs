//! Shared fixtures for the criterion benchmarks.

use onebit_core::likelihood::{learn_likelihood_table, PilotObservations};
use onebit_core::rng::{Purpose, SeedTree};
use onebit_core::signal::{
    build_constellation, draw_channel, enumerate_candidates, quantize, transmit, ChannelRealization,
};
use onebit_core::{CandidateSet, LikelihoodTable, LinkParams};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub channel: ChannelRealization,
    pub candidates: CandidateSet,
    pub link: LinkParams,
    pub pilots: PilotObservations,
    pub dithered_table: LikelihoodTable,
    pub observation: Vec<i8>,
}

/// Default-sized problem: Nr = 32, Nu = 4, 4-QAM (K = 256).
pub fn fixture(n_tr: usize, snr_db: f64) -> Fixture {
    let seeds = SeedTree::new(2024);
    let c = build_constellation(4).unwrap();
    let cs = enumerate_candidates(&c, 4).unwrap();
    let ch = draw_channel(32, 4, &mut seeds.stream(Purpose::Channel, &[0])).unwrap();
    let lp = LinkParams::from_snr_db(snr_db, 1.0, 1.0).unwrap();
    let proj = ch.candidate_projections(&cs);
    let pilots = PilotObservations::simulate(
        &proj,
        ch.dim(),
        &lp,
        n_tr,
        &mut seeds.stream(Purpose::PilotNoise, &[0]),
        None::<&mut ChaCha8Rng>,
    )
    .unwrap();
    let dithered = PilotObservations::simulate(
        &proj,
        ch.dim(),
        &lp,
        n_tr,
        &mut seeds.stream(Purpose::PilotNoise, &[0]),
        Some(&mut seeds.stream(Purpose::PilotDither, &[0])),
    )
    .unwrap();
    let r = transmit(
        &ch,
        cs.vector(17),
        &lp,
        &mut seeds.stream(Purpose::DataNoise, &[0]),
    )
    .unwrap();
    Fixture {
        observation: quantize(&r),
        dithered_table: learn_likelihood_table(&dithered).unwrap(),
        channel: ch,
        candidates: cs,
        link: lp,
        pilots,
    }
}
