mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tv2tv::model::{backward, forward, loss, param_count, Batch, Params};

fn total_loss(p: &Params<f64>, batch: &Batch<f64>) -> f64 {
    let out = forward(p, batch, None).unwrap();
    loss(&p.cfg, batch, &out).0.total
}

#[test]
fn joint_loss_gradient_matches_central_differences() {
    let cfg = common::tiny_config();
    assert!(param_count(&cfg) <= 5_000, "{} weights", param_count(&cfg));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = Params::<f64>::init(&cfg, 1);
    // move every weight off its initial value so zero-initialised paths carry gradient
    for x in params.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += 0.3 * z;
    }
    let seqs: Vec<_> = (0..3)
        .map(|_| {
            let layout = common::random_layout(&mut rng, 40, cfg.tokens_per_chunk);
            common::random_input(&mut rng, &cfg, layout)
        })
        .collect();
    let refs: Vec<_> = seqs.iter().collect();
    let batch = Batch::<f64>::new(&cfg, &refs).unwrap();
    assert!(batch.n_noisy > 0 && batch.txt_targets.iter().any(Option::is_some));

    let out = forward(&params, &batch, None).unwrap();
    let (_, dl, dv) = loss(&cfg, &batch, &out);
    let grad = backward(&params, &batch, &out, &dl, &dv);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dir: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dir: Vec<f64> = dir.iter().map(|x| x / norm).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, u)| g * u).sum();
        let mut plus = params.clone();
        let mut minus = params.clone();
        for ((a, b), u) in plus.data.iter_mut().zip(minus.data.iter_mut()).zip(&dir) {
            *a += h * u;
            *b -= h * u;
        }
        let fd = (total_loss(&plus, &batch) - total_loss(&minus, &batch)) / (2.0 * h);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:.3e}");
    assert!(worst <= 1e-4, "worst relative error {worst:.3e}");
}
