use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::kernels::Float;
use crate::masking::Modality;

/// Which modality tower a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tower {
    Txt,
    Vid,
}

impl Tower {
    pub fn of(m: Modality) -> Tower {
        match m {
            Modality::Text => Tower::Txt,
            Modality::Video => Tower::Vid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub tower: Tower,
    /// Weight decay applies (matrices only).
    pub decay: bool,
}

impl ParamEntry {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone)]
pub struct TowerBlock {
    pub attn_norm: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub ffn_norm: Range<usize>,
    pub w1: Range<usize>,
    pub w3: Range<usize>,
    pub w2: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct LayerIndex {
    pub txt: TowerBlock,
    pub vid: TowerBlock,
}

impl LayerIndex {
    pub fn tower(&self, t: Tower) -> &TowerBlock {
        match t {
            Tower::Txt => &self.txt,
            Tower::Vid => &self.vid,
        }
    }
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamIndex {
    pub embed: Range<usize>,
    pub down_w: Range<usize>,
    pub down_b: Range<usize>,
    pub time_w: Range<usize>,
    pub time_b: Range<usize>,
    pub ape: Range<usize>,
    pub layers: Vec<LayerIndex>,
    pub txt_norm: Range<usize>,
    pub vid_norm: Range<usize>,
    pub lm_head: Range<usize>,
    pub up_w1: Range<usize>,
    pub up_wt: Range<usize>,
    pub up_b1: Range<usize>,
    pub up_w2: Range<usize>,
    pub up_b2: Range<usize>,
    pub up_gate: Range<usize>,
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

struct Builder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], tower: Tower) -> Range<usize> {
        let len = shape.iter().product();
        let offset = self.total;
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            offset,
            len,
            tower,
            decay: shape.len() == 2,
        });
        self.total += len;
        offset..offset + len
    }

    fn tower_block(&mut self, cfg: &ModelConfig, l: usize, tower: Tower) -> TowerBlock {
        let (d, hd) = (cfg.d_model, cfg.head_dim());
        let p = format!("layers.{l}.{}", if tower == Tower::Txt { "txt" } else { "vid" });
        TowerBlock {
            attn_norm: self.add(format!("{p}.attn_norm"), &[d], tower),
            wq: self.add(format!("{p}.wq"), &[d, cfg.n_heads * hd], tower),
            wk: self.add(format!("{p}.wk"), &[d, cfg.n_kv_heads * hd], tower),
            wv: self.add(format!("{p}.wv"), &[d, cfg.n_kv_heads * hd], tower),
            wo: self.add(format!("{p}.wo"), &[cfg.n_heads * hd, d], tower),
            ffn_norm: self.add(format!("{p}.ffn_norm"), &[d], tower),
            w1: self.add(format!("{p}.w1"), &[d, cfg.d_ffn], tower),
            w3: self.add(format!("{p}.w3"), &[d, cfg.d_ffn], tower),
            w2: self.add(format!("{p}.w2"), &[cfg.d_ffn, d], tower),
        }
    }
}

impl ParamIndex {
    pub fn new(cfg: &ModelConfig) -> ParamIndex {
        let (d, v, dl, td, u) = (cfg.d_model, cfg.vocab_size, cfg.d_latent, cfg.time_dim, cfg.up_hidden);
        let mut b = Builder { entries: Vec::new(), total: 0 };
        let embed = b.add("txt.embed".into(), &[v, d], Tower::Txt);
        let down_w = b.add("vid.down.w".into(), &[dl, d], Tower::Vid);
        let down_b = b.add("vid.down.b".into(), &[d], Tower::Vid);
        let time_w = b.add("vid.time.w".into(), &[td, d], Tower::Vid);
        let time_b = b.add("vid.time.b".into(), &[d], Tower::Vid);
        let ape = b.add("vid.ape".into(), &[cfg.tokens_per_chunk, d], Tower::Vid);
        let layers = (0..cfg.layers)
            .map(|l| LayerIndex {
                txt: b.tower_block(cfg, l, Tower::Txt),
                vid: b.tower_block(cfg, l, Tower::Vid),
            })
            .collect();
        let txt_norm = b.add("txt.final_norm".into(), &[d], Tower::Txt);
        let vid_norm = b.add("vid.final_norm".into(), &[d], Tower::Vid);
        let lm_head = b.add("txt.lm_head".into(), &[d, v], Tower::Txt);
        let up_w1 = b.add("vid.up.w1".into(), &[d, u], Tower::Vid);
        let up_wt = b.add("vid.up.wt".into(), &[td, u], Tower::Vid);
        let up_b1 = b.add("vid.up.b1".into(), &[u], Tower::Vid);
        let up_w2 = b.add("vid.up.w2".into(), &[u, dl], Tower::Vid);
        let up_b2 = b.add("vid.up.b2".into(), &[dl], Tower::Vid);
        let up_gate = b.add("vid.up.gate".into(), &[1], Tower::Vid);
        ParamIndex {
            embed,
            down_w,
            down_b,
            time_w,
            time_b,
            ape,
            layers,
            txt_norm,
            vid_norm,
            lm_head,
            up_w1,
            up_wt,
            up_b1,
            up_w2,
            up_b2,
            up_gate,
            entries: b.entries,
            total: b.total,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Closed-form parameter count.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (d, v, dl, td, u) = (cfg.d_model, cfg.vocab_size, cfg.d_latent, cfg.time_dim, cfg.up_hidden);
    let (qd, kvd) = (cfg.n_heads * cfg.head_dim(), cfg.n_kv_heads * cfg.head_dim());
    let block = 2 * d + d * qd + 2 * d * kvd + qd * d + 3 * d * cfg.d_ffn;
    let txt = v * d + d + d * v;
    let vid = dl * d + d + td * d + d + cfg.tokens_per_chunk * d + d + d * u + td * u + u + u * dl + dl + 1;
    txt + vid + 2 * cfg.layers * block
}

/// Model weights as one flat vector plus a shared index.
#[derive(Debug, Clone)]
pub struct Params<F> {
    pub cfg: ModelConfig,
    pub index: Arc<ParamIndex>,
    pub data: Vec<F>,
}

impl<F: Float> Params<F> {
    pub fn zeros(cfg: &ModelConfig) -> Params<F> {
        let index = Arc::new(ParamIndex::new(cfg));
        Params {
            cfg: *cfg,
            data: vec![F::zero(); index.total],
            index,
        }
    }

    /// Truncated-normal (±2σ, σ = 0.02) weights, unit norm gains, zero
    /// biases; attention output projections and the velocity head's last
    /// layer and gate start at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Params<F> {
        let mut p = Params::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let index = p.index.clone();
        for e in &index.entries {
            let zero = e.name.ends_with(".wo") || e.name.starts_with("vid.up.w2") || e.name == "vid.up.gate";
            let slot = &mut p.data[e.range()];
            if e.name.ends_with("norm") {
                slot.iter_mut().for_each(|x| *x = F::one());
            } else if e.shape.len() == 2 && !zero {
                for x in slot.iter_mut() {
                    let z = loop {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if z.abs() <= 2.0 {
                            break z;
                        }
                    };
                    *x = F::of(0.02 * z);
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: &Range<usize>) -> &[F] {
        &self.data[r.clone()]
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.index.entry(name).map(|e| &self.data[e.range()])
    }

    pub fn cast<G: Float>(&self) -> Params<G> {
        Params {
            cfg: self.cfg,
            index: self.index.clone(),
            data: self.data.iter().map(|x| G::of(x.f64())).collect(),
        }
    }

    /// Index ranges belonging to `tower`.
    pub fn tower_ranges(&self, tower: Tower) -> Vec<Range<usize>> {
        self.index.entries.iter().filter(|e| e.tower == tower).map(|e| e.range()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_formula() {
        let cfg = ModelConfig::default();
        let p = Params::<f32>::init(&cfg, 0);
        assert_eq!(p.len(), param_count(&cfg));
        let tiny = ModelConfig {
            layers: 1,
            d_model: 8,
            n_heads: 2,
            n_kv_heads: 1,
            d_ffn: 12,
            d_latent: 10,
            tokens_per_chunk: 4,
            time_dim: 4,
            up_hidden: 6,
            ..cfg
        };
        assert_eq!(Params::<f64>::zeros(&tiny).len(), param_count(&tiny));
    }

    #[test]
    fn init_is_seeded_and_partitioned() {
        let cfg = ModelConfig::default();
        let a = Params::<f32>::init(&cfg, 5);
        assert_eq!(a.data, Params::<f32>::init(&cfg, 5).data);
        assert_ne!(a.data, Params::<f32>::init(&cfg, 6).data);
        assert!(a.tensor("vid.up.w2").unwrap().iter().all(|&x| x == 0.0));
        assert!(a.tensor("layers.0.txt.wo").unwrap().iter().all(|&x| x == 0.0));
        assert!(a.tensor("txt.embed").unwrap().iter().all(|x| x.abs() <= 0.04));
        let mut seen = vec![0u8; a.len()];
        for t in [Tower::Txt, Tower::Vid] {
            for r in a.tower_ranges(t) {
                seen[r].iter_mut().for_each(|s| *s += 1);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }
}
