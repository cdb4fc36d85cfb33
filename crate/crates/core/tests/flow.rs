use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tv2tv::codec::{ChunkKind, ChunkSpan, LatentChunk};
use tv2tv::sequence::{interpolate_noise, sample_timestep, NoiseConfig};

fn chunk(data: Vec<f32>) -> LatentChunk {
    LatentChunk {
        tokens: 1,
        dim: data.len(),
        data,
        kind: ChunkKind::Clean,
        span: ChunkSpan::Group,
        chunk_index: 1,
        t: 1.0,
    }
}

#[test]
fn interpolation_endpoints_are_exact() {
    let x = chunk((0..64).map(|i| (i as f32 * 0.37).sin() * 3.0).collect());
    let eps: Vec<f32> = (0..64).map(|i| (i as f32 * 1.91).cos() * 1e3).collect();
    assert_eq!(interpolate_noise(&x, 0.0, &eps).unwrap().data, eps);
    assert_eq!(interpolate_noise(&x, 1.0, &eps).unwrap().data, x.data);
    assert!(interpolate_noise(&x, 1.5, &eps).is_err());
    assert!(interpolate_noise(&x, 0.5, &eps[1..]).is_err());
}

#[test]
fn logit_normal_timesteps_center_on_one_half() {
    let cfg = NoiseConfig::default();
    assert_eq!((cfg.mu, cfg.sigma), (0.0, 1.4));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ts: Vec<f64> = (0..100_000).map(|_| sample_timestep(&mut rng, &cfg)).collect();
    ts.sort_by(f64::total_cmp);
    let median = ts[ts.len() / 2];
    assert!((0.48..=0.52).contains(&median), "median {median}");
    // logit(t) should be N(0, 1.4²)
    let g: Vec<f64> = ts.iter().map(|t| (t / (1.0 - t)).ln()).collect();
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let sd = (g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g.len() as f64).sqrt();
    assert!(mean.abs() < 0.02 && (sd - 1.4).abs() < 0.02, "mean {mean} sd {sd}");
    assert!(ts.iter().all(|&t| t > 0.0 && t < 1.0));
}

proptest! {
    #[test]
    fn interpolation_is_the_straight_line(t in 0.0f64..=1.0, xs in prop::collection::vec(-10.0f32..10.0, 1..32), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = tv2tv::sequence::gaussian(&mut rng, xs.len());
        let x = chunk(xs.clone());
        let z = interpolate_noise(&x, t, &eps).unwrap();
        prop_assert_eq!(z.kind, ChunkKind::Noisy);
        prop_assert!((z.t - t as f32).abs() < 1e-7);
        for ((zi, xi), ei) in z.data.iter().zip(&xs).zip(&eps) {
            let want = t * *xi as f64 + (1.0 - t) * *ei as f64;
            prop_assert!((*zi as f64 - want).abs() <= 1e-5 * (1.0 + want.abs()));
        }
    }
}
