use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::codec::{BOS, EOF, PAD};
use crate::error::{Error, Result};

/// Tokens never drawn from the model: BOS only opens a sequence, PAD is
/// filler and EOF is appended deterministically after each chunk.
pub const UNSAMPLED: [u32; 3] = [BOS, PAD, EOF];

/// Draw the next token from `logits` at `temperature`; `0` is argmax with
/// the lowest id winning ties.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f32], temperature: f64, rng: &mut R) -> Result<u32> {
    let allowed = |i: usize| !UNSAMPLED.contains(&(i as u32)) && logits[i].is_finite();
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN in next-token logits".into()));
    }
    let best = (0..logits.len())
        .filter(|&i| allowed(i))
        .fold(None::<usize>, |b, i| match b {
            Some(j) if logits[j] >= logits[i] => Some(j),
            _ => Some(i),
        })
        .ok_or_else(|| Error::Session("no sampleable token".into()))?;
    if temperature == 0.0 {
        return Ok(best as u32);
    }
    let top = logits[best] as f64;
    let w: Vec<f64> = (0..logits.len())
        .map(|i| if allowed(i) { ((logits[i] as f64 - top) / temperature).exp() } else { 0.0 })
        .collect();
    let dist = WeightedIndex::new(&w).map_err(|e| Error::Session(format!("sampling weights: {e}")))?;
    Ok(dist.sample(rng) as u32)
}

/// Forward Euler on the uniform grid `t_k = k/m`, `k = 0..m`:
/// `x ← x + v(x, t_k)/m`. `field` also receives the step index.
pub fn euler_integrate(mut x: Vec<f32>, m: usize, mut field: impl FnMut(&[f32], f64, usize) -> Result<Vec<f32>>) -> Result<Vec<f32>> {
    if m == 0 {
        return Err(Error::Config("ode_steps must be at least 1".into()));
    }
    let h = 1.0 / m as f64;
    for k in 0..m {
        let v = field(&x, k as f64 * h, k)?;
        if v.len() != x.len() {
            return Err(Error::Shape(format!("velocity has {} values, state has {}", v.len(), x.len())));
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += (h * *vi as f64) as f32;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ODE state after step {k}")));
        }
    }
    Ok(x)
}

/// Classifier-free guidance `v_u + s·(v_c − v_u)`; `s = 1` and `s = 0`
/// return the corresponding branch unchanged.
pub fn guide(scale: f64, v_cond: Option<Vec<f32>>, v_uncond: Option<Vec<f32>>) -> Vec<f32> {
    match (v_cond, v_uncond) {
        (Some(c), _) if scale == 1.0 => c,
        (_, Some(u)) if scale == 0.0 => u,
        (Some(c), Some(u)) => {
            let s = scale as f32;
            c.iter().zip(&u).map(|(&c, &u)| u + s * (c - u)).collect()
        }
        _ => panic!("guidance scale {scale} needs both branches"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_at_zero_temperature_breaks_ties_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = vec![0.0f32; 10];
        l[7] = 3.0;
        l[8] = 3.0;
        l[EOF as usize] = 9.0;
        for _ in 0..20 {
            assert_eq!(sample_token(&l, 0.0, &mut rng).unwrap(), 7);
        }
    }

    #[test]
    fn never_samples_reserved_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = vec![0.0f32; 8];
        for t in UNSAMPLED {
            l[t as usize] = 5.0;
        }
        for _ in 0..500 {
            assert!(!UNSAMPLED.contains(&sample_token(&l, 1.0, &mut rng).unwrap()));
        }
    }

    #[test]
    fn euler_on_a_constant_field_is_exact() {
        let x0 = vec![0.25f32, -1.5, 3.0];
        let c = [0.5f32, -2.0, 0.125];
        let x = euler_integrate(x0.clone(), 8, |_, _, _| Ok(c.to_vec())).unwrap();
        for i in 0..3 {
            assert_eq!(x[i], x0[i] + c[i]);
        }
    }

    #[test]
    fn euler_visits_the_left_endpoints() {
        let mut seen = Vec::new();
        euler_integrate(vec![0.0], 4, |_, t, k| {
            seen.push((t, k));
            Ok(vec![0.0])
        })
        .unwrap();
        assert_eq!(seen, vec![(0.0, 0), (0.25, 1), (0.5, 2), (0.75, 3)]);
    }

    #[test]
    fn guidance_identities() {
        let c = vec![1.0f32, 2.0];
        let u = vec![-3.0f32, 0.5];
        assert_eq!(guide(1.0, Some(c.clone()), Some(u.clone())), c);
        assert_eq!(guide(0.0, Some(c.clone()), Some(u.clone())), u);
        assert_eq!(guide(2.0, Some(c), Some(u)), vec![5.0, 3.5]);
    }
}
