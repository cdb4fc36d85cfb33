mod common;

use common::probes::{outputs, perturb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tv2tv::masking::Role;
use tv2tv::model::Params;

#[test]
fn later_and_noisy_elements_cannot_leak() {
    let cfg = common::tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut p = Params::<f64>::init(&cfg, 4);
    for x in p.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += 0.3 * z;
    }
    let (mut probes, mut moved) = (0, 0);
    let mut layouts = 0;
    while layouts < 50 {
        let layout = common::random_layout(&mut rng, 48, cfg.tokens_per_chunk);
        let n_el = layout.tokens.last().map_or(0, |t| t.element_index + 1);
        if n_el < 2 {
            continue;
        }
        layouts += 1;
        let base = common::random_input(&mut rng, &cfg, layout);
        let before = outputs(&p, &base);
        for _ in 0..10 {
            let e = rng.gen_range(0..n_el);
            let changed = perturb(&mut rng, &cfg, &base, e);
            let after = outputs(&p, &changed);
            let noisy = base.layout.tokens.iter().any(|t| t.element_index == e && t.role == Role::NoisyVid);
            for (q, tok) in base.layout.tokens.iter().enumerate() {
                let shielded = tok.element_index < e || (noisy && tok.element_index != e);
                if shielded {
                    assert_eq!(before[q], after[q], "element {e} leaked into position {q} ({:?})", tok.role);
                } else if tok.element_index == e && before[q] != after[q] {
                    moved += 1;
                }
            }
            probes += 1;
        }
    }
    assert_eq!(probes, 500);
    // the perturbations are not vacuous
    assert!(moved > 100, "{moved}");
}
