use std::path::PathBuf;

use proptest::prelude::*;

use phaselink_core::config::ScenarioConfig;
use phaselink_core::harness;
use phaselink_core::optics;
use phaselink_core::protocol::{
    decode, ledger_commit, preprocess, DecodeError, Frame, FrameCommit, KeyPool, Masking, FRAME_BITS, FRAME_BYTES,
};
use phaselink_core::pulse_mc::{simulate_batch, PulseClass, PulsePlan};
use phaselink_core::rate::{self, DetectorConfig, MixRatio, SourceConfig, E0};
use phaselink_core::rng::SimRng;

fn config(name: &str) -> ScenarioConfig {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "configs", name].iter().collect();
    ScenarioConfig::load(p).unwrap()
}

fn source() -> SourceConfig {
    config("paper_tableS1.cfg").source
}

fn detector(visibility: f64, e_mis: f64) -> DetectorConfig {
    DetectorConfig {
        visibility,
        e_mis,
        ..config("paper_tableS1.cfg").detector
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn monte_carlo_tracks_closed_form(log_eta in -3.0f64..0.0, v in 0.9f64..1.0, seed in any::<u64>()) {
        let eta = 10f64.powf(log_eta);
        let src = source();
        let det = detector(v, 0.0);
        let plan = PulsePlan::new(400_000, &MixRatio::new(1, 1, 1), seed).unwrap();
        let stats = simulate_batch(&plan, eta, &src, &det);
        for class in [PulseClass::Signal, PulseClass::Decoy] {
            let c = stats.class(class);
            let (q, e) = rate::gain_and_qber(eta, class.intensity(&src), &det);
            // Model standard errors: the sample ones vanish when no error is seen.
            let q_se = (q * (1.0 - q) / c.sent as f64).sqrt();
            let e_se = (e * (1.0 - e) / c.clicked as f64).sqrt();
            prop_assert!(((c.gain() - q) / q_se).abs() < 5.0, "{} gain {} vs {q}", class.name(), c.gain());
            prop_assert!(((c.qber() - e) / e_se).abs() < 5.0, "{} qber {} vs {e}", class.name(), c.qber());
        }
    }
}

proptest! {
    #[test]
    fn decoy_estimate_is_a_bound(log_eta in -6.0f64..0.0, v in 0.9f64..=1.0) {
        let eta = 10f64.powf(log_eta);
        let src = source();
        let det = detector(v, 0.0);
        let est = rate::decoy_estimate(&rate::forward_gains(eta, &src, &det), &src).unwrap();
        let y0 = det.y0();
        let y1 = y0 + eta;
        let q1 = y1 * src.mu * (-src.mu).exp();
        let e1 = (E0 * y0 + det.e_optical() * eta) / y1;
        prop_assert!(est.q1 > 0.0);
        prop_assert!(est.q1 <= q1 * (1.0 + 1e-12), "q1 {} > {q1}", est.q1);
        prop_assert!(est.e1 >= e1 * (1.0 - 1e-12), "e1 {} < {e1}", est.e1);
    }

    #[test]
    fn recycling_fraction_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(rate::recycling_fraction(lo) >= rate::recycling_fraction(hi));
        prop_assert!((0.5..=1.0).contains(&rate::recycling_fraction(a)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pipeline_round_trips(
        payload in prop::collection::vec(any::<u8>(), FRAME_BYTES),
        frame_id in any::<u64>(),
        fec in 1u32..=3,
        spread in 1u32..=4,
        key_seed in any::<u64>(),
        mask_seed in prop::option::of(any::<u64>()),
    ) {
        let frame = Frame::new(&payload, frame_id, fec, spread).unwrap();
        let mut rng = SimRng::seed_from_u64(key_seed);
        let key: Vec<u8> = (0..frame.chip_count()).map(|_| rng.bit()).collect();
        let masking = mask_seed.map_or_else(Masking::none, Masking::keyed);
        let enc = preprocess(&frame, &key, &masking).unwrap();
        let received: Vec<Option<u8>> = enc.chips.iter().copied().map(Some).collect();
        let out = decode(&received, &frame.params(), &key, &masking, enc.integrity_tag).unwrap();
        prop_assert_eq!(&out[..], &payload[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ledger_conserves_bits(
        frames in prop::collection::vec((1usize..3000, 0.0f64..=1.0, 0u64..2000), 1..12),
        seed in any::<u64>(),
    ) {
        let mut pool = KeyPool::new(50_000, seed);
        let mut rng = SimRng::seed_from_u64(seed ^ 1);
        for (n, keep, fresh) in frames {
            let before = *pool.ledger();
            let key = pool.take(n as u64).unwrap();
            let retained: Vec<bool> = (0..n).map(|_| rng.bernoulli(keep)).collect();
            let after = ledger_commit(&mut pool, &FrameCommit { key_bits: &key, retained: &retained, fresh_bits: fresh })
                .unwrap();
            let kept = retained.iter().filter(|&&k| k).count() as u64;
            prop_assert!(after.is_conserved());
            prop_assert_eq!(after.pool_bits, before.pool_bits - kept + fresh);
            prop_assert_eq!(after.pool_bits, pool.available());
            prop_assert_eq!(after.consumed - before.consumed, n as u64);
            prop_assert_eq!(after.recycled - before.recycled, n as u64 - kept);
        }
    }
}

/// Erasure-only channel: every chip survives independently with probability
/// `p`, and a frame decodes iff each data bit keeps at least one chip.
#[test]
fn frame_survival_matches_binomial_oracle() {
    let (spread, p, trials) = (16u32, 0.4377f64, 400usize);
    let per_bit = 1.0 - (1.0 - p).powi(spread as i32);
    let expected = per_bit.powi(FRAME_BITS as i32);
    let masking = Masking::keyed(11);
    let mut rng = SimRng::seed_from_u64(2024);
    let mut ok = 0usize;
    for id in 0..trials as u64 {
        let payload: Vec<u8> = (0..FRAME_BYTES).map(|_| rng.next_u64() as u8).collect();
        let frame = Frame::new(&payload, id, 1, spread).unwrap();
        let key: Vec<u8> = (0..frame.chip_count()).map(|_| rng.bit()).collect();
        let enc = preprocess(&frame, &key, &masking).unwrap();
        let received: Vec<Option<u8>> = enc.chips.iter().map(|&c| rng.bernoulli(p).then_some(c)).collect();
        match decode(&received, &frame.params(), &key, &masking, enc.integrity_tag) {
            Ok(out) => {
                assert_eq!(&out[..], &payload[..]);
                ok += 1;
            }
            Err(DecodeError::FrameLost { .. }) => {}
            Err(e) => panic!("erasure-only channel produced {e}"),
        }
    }
    let mean = trials as f64 * expected;
    let sd = (trials as f64 * expected * (1.0 - expected)).sqrt();
    assert!(
        (ok as f64 - mean).abs() <= 4.0 * sd,
        "{ok} of {trials} frames decoded, expected {mean:.1} +- {sd:.1}"
    );
}

/// The bundled field scenario at full spreading: frames do not survive, but
/// the sampled error rate and the recycling fraction match the model.
#[test]
fn field_session_matches_model() {
    let cfg = config("paper_tableS1.cfg");
    let eta = optics::transmittance(&cfg.link, &cfg.atmosphere, &cfg.beam, cfg.detector.eta_b, cfg.detector.eta_d)
        .unwrap()
        .eta_total;
    let (r, _) = harness::run_scenario_session(&cfg).map_err(|(e, _)| e).unwrap();
    let (q_mu, e_mu) = rate::gain_and_qber(eta, cfg.source.mu, &cfg.detector);
    assert!(!r.aborted);
    assert_eq!(r.payload_mismatches, 0);
    assert!(r.samples > 1000, "{} samples", r.samples);
    assert!((r.qber - e_mu).abs() <= 3.0 * r.qber_se, "qber {} +- {} vs {e_mu}", r.qber, r.qber_se);
    assert!((r.p_rec_empirical - r.p_rec_expected).abs() <= 1e-4);
    assert!((r.p_rec_expected - rate::recycling_fraction(q_mu)).abs() <= 1e-4);
    assert!(r.ledger.is_conserved());
}
