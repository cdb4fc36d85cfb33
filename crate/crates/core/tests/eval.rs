mod common;

use common::test_engine;
use tv2tv::eval::{detect_action, intervention_eval, long_rollout_sprite_rate, InterventionEvalConfig, InterventionReport, VariantReport};
use tv2tv::inference::GenConfig;
use tv2tv::sequence::Variant;
use tv2tv::toyworld::{gen_episode, Policy, WorldConfig};

#[test]
fn oracle_reads_every_simulated_chunk() {
    let world = WorldConfig::default();
    let mut chunks = 0;
    for seed in 0..500 {
        let ep = gen_episode(10_000 + seed, 4, Policy::Random).unwrap();
        for (k, a) in ep.actions.iter().enumerate() {
            let before = &ep.frames[4 * k];
            let got = detect_action(before, ep.chunk_frames(k + 1), &world);
            assert_eq!(got, Some(*a), "episode {seed} chunk {}", k + 1);
            chunks += 1;
        }
    }
    assert_eq!(chunks, 2000);
}

#[test]
fn intervention_eval_reports_matched_controls() {
    let engine = test_engine(Variant::Tv2tv, 1, 1.0, -8.0);
    let cfg = InterventionEvalConfig {
        rollouts: 3,
        fork_after: 1,
        gen: GenConfig {
            ode_steps: 3,
            ..GenConfig::default()
        },
        ..InterventionEvalConfig::default()
    };
    let r = intervention_eval(&engine, &cfg).unwrap();
    assert_eq!(r.per_action.len(), 5);
    assert_eq!(r.rollouts, 3);
    for a in &r.per_action {
        for v in [a.accuracy, a.exact_accuracy, a.base_rate, a.detected_rate] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(a.exact_accuracy <= a.accuracy);
        // an untrained model paints noise, which the oracle cannot read
        assert_eq!(a.detected_rate, 0.0);
    }
    let json = serde_json::to_string(&r).unwrap();
    let back: InterventionReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.per_action, r.per_action);
    assert!(r.table().contains("(stay). jump."));
    assert!(r.svg().starts_with("<svg"));
    let both = VariantReport { variants: vec![r.clone(), r] };
    assert_eq!(both.table().lines().count(), 4);

    let bad = InterventionEvalConfig {
        interventions: vec!["(sideways).".into()],
        ..cfg
    };
    assert!(intervention_eval(&engine, &bad).is_err());
}

#[test]
fn long_rollout_slides_its_window() {
    let engine = test_engine(Variant::Tv2tv, 2, 8.0, -8.0);
    let (rate, chunks, finite) = long_rollout_sprite_rate(
        &engine,
        0,
        4,
        GenConfig {
            ode_steps: 2,
            ..GenConfig::default()
        },
    )
    .unwrap();
    assert_eq!(chunks, 10);
    assert!(finite);
    assert!((0.0..=1.0).contains(&rate));
}
