use std::ops::Range;

use super::input::Batch;
use super::ops::{masked_softmax, rmsnorm, sigmoid_slice, sinusoidal_features, RopeTable};
use super::params::{Params, Tower, TowerBlock};
use crate::error::{Error, Result};
use crate::kernels::{gemm, mm, Float, View};

/// Per-layer keys and values (after RoPE) of committed tokens.
#[derive(Debug, Clone)]
pub struct KvCache<F> {
    pub k: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub len: usize,
    width: usize,
}

impl<F: Float> KvCache<F> {
    pub fn new(params: &Params<F>) -> KvCache<F> {
        let c = &params.cfg;
        KvCache {
            k: vec![Vec::new(); c.layers],
            v: vec![Vec::new(); c.layers],
            len: 0,
            width: c.n_kv_heads * c.head_dim(),
        }
    }

    /// Commit the new keys/values of a single-sequence forward pass.
    pub fn append(&mut self, fwd: &Forward<F>) -> Result<()> {
        if fwd.tape.layers.first().map_or(0, |l| l.seq.len()) != 1 {
            return Err(Error::Session("only single-sequence passes can be cached".into()));
        }
        let start = self.len * self.width;
        let mut added = 0;
        for (l, lt) in fwd.tape.layers.iter().enumerate() {
            let sa = &lt.seq[0];
            if sa.k.len() < start {
                return Err(Error::Session("cache does not match the pass it extends".into()));
            }
            self.k[l].extend_from_slice(&sa.k[start..]);
            self.v[l].extend_from_slice(&sa.v[start..]);
            added = (sa.k.len() - start) / self.width;
        }
        self.len += added;
        Ok(())
    }
}

pub(crate) struct SeqAttn<F> {
    /// Queries `[L, H·hd]`, positional order.
    pub q: Vec<F>,
    /// Keys/values `[P+L, KV·hd]` including any cached prefix.
    pub k: Vec<F>,
    pub v: Vec<F>,
    /// Attention probabilities `[H, L, P+L]`.
    pub probs: Vec<F>,
}

pub(crate) struct LayerTape<F> {
    pub x: Vec<F>,
    pub a: Vec<F>,
    pub inv1: Vec<F>,
    pub attn: Vec<F>,
    pub h1: Vec<F>,
    pub b: Vec<F>,
    pub inv2: Vec<F>,
    pub u1: Vec<F>,
    pub u3: Vec<F>,
    pub s: Vec<F>,
    pub seq: Vec<SeqAttn<F>>,
}

pub(crate) struct Tape<F> {
    pub layers: Vec<LayerTape<F>>,
    pub rope: RopeTable<F>,
    /// Time features of video rows.
    pub sf: Vec<F>,
    pub h_last: Vec<F>,
    pub hn: Vec<F>,
    pub inv_f: Vec<F>,
    pub z: Vec<F>,
    pub up_pre: Vec<F>,
    pub up_u: Vec<F>,
    pub resid: Vec<F>,
    pub den: Vec<F>,
}

/// Outputs of a forward pass.
pub struct Forward<F> {
    /// `[n_txt, vocab]`, one row per text row of the batch.
    pub logits: Vec<F>,
    /// `[n_noisy, d_latent]`, one row per noisy row.
    pub velocity: Vec<F>,
    pub(crate) tape: Tape<F>,
}

/// The two modality row blocks of a batch.
pub(crate) fn blocks<F: Float>(batch: &Batch<F>) -> [(Tower, Range<usize>); 2] {
    let r = batch.rows();
    [(Tower::Txt, 0..batch.n_txt), (Tower::Vid, batch.n_txt..r)]
}

/// `y[rows] = x[rows] · W_tower` for both towers.
pub(crate) fn routed_linear<F: Float>(
    p: &Params<F>,
    batch: &Batch<F>,
    layer: usize,
    w: fn(&TowerBlock) -> &Range<usize>,
    x: &[F],
    k: usize,
    n: usize,
    y: &mut [F],
) {
    for (tower, rows) in blocks(batch) {
        if rows.is_empty() {
            continue;
        }
        let wr = w(p.index.layers[layer].tower(tower));
        mm(
            &x[rows.start * k..rows.end * k],
            p.get(wr),
            &mut y[rows.start * n..rows.end * n],
            rows.len(),
            k,
            n,
            false,
        );
    }
}

fn routed_norm<F: Float>(p: &Params<F>, batch: &Batch<F>, g: [&Range<usize>; 2], x: &[F], y: &mut [F], inv: &mut [F]) {
    let d = p.cfg.d_model;
    let eps = F::of(p.cfg.norm_eps);
    for ((_, rows), gr) in blocks(batch).into_iter().zip(g) {
        rmsnorm(
            &x[rows.start * d..rows.end * d],
            p.get(gr),
            d,
            eps,
            &mut y[rows.start * d..rows.end * d],
            &mut inv[rows.clone()],
        );
    }
}

/// Run the model on `batch`. With `prefix`, the batch must hold a single
/// sequence whose queries also see every cached key.
pub fn forward<F: Float>(p: &Params<F>, batch: &Batch<F>, prefix: Option<&KvCache<F>>) -> Result<Forward<F>> {
    let c = &p.cfg;
    let ix = &p.index;
    let (d, hd, nh, nkv) = (c.d_model, c.head_dim(), c.n_heads, c.n_kv_heads);
    let (qd, kvd, f, dl, td) = (nh * hd, nkv * hd, c.d_ffn, c.d_latent, c.time_dim);
    let r = batch.rows();
    let (nt, nv, nn) = (batch.n_txt, batch.n_vid, batch.n_noisy);
    if let Some(cache) = prefix {
        if batch.seqs.len() != 1 || cache.k.len() != c.layers {
            return Err(Error::Session("cached forward needs exactly one sequence".into()));
        }
    }
    let plen = prefix.map_or(0, |k| k.len);
    crate::kernels::retain_freed_pages();

    // inputs
    let mut h = vec![F::zero(); r * d];
    let embed = p.get(&ix.embed);
    for (row, &id) in batch.txt_ids.iter().enumerate() {
        h[row * d..(row + 1) * d].copy_from_slice(&embed[id as usize * d..(id as usize + 1) * d]);
    }
    let mut sf = vec![F::zero(); nv * td];
    for (i, &t) in batch.vid_t.iter().enumerate() {
        for (dst, v) in sf[i * td..(i + 1) * td].iter_mut().zip(sinusoidal_features(t.f64(), td)) {
            *dst = F::of(v);
        }
    }
    let mut h_in = vec![F::zero(); nv * d];
    if nv > 0 {
        let (db, tb, ape) = (p.get(&ix.down_b), p.get(&ix.time_b), p.get(&ix.ape));
        for (i, row) in h_in.chunks_exact_mut(d).enumerate() {
            let sp = batch.vid_spatial[i] as usize;
            for j in 0..d {
                row[j] = db[j] + tb[j] + ape[sp * d + j];
            }
        }
        mm(&batch.vid_x, p.get(&ix.down_w), &mut h_in, nv, dl, d, true);
        mm(&sf, p.get(&ix.time_w), &mut h_in, nv, td, d, true);
        h[nt * d..].copy_from_slice(&h_in);
    }

    let rope = RopeTable::<F>::new(&batch.rope, hd, c.rope_base);
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let mut layers = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        let li = &ix.layers[l];
        let x = h;
        let mut a = vec![F::zero(); r * d];
        let mut inv1 = vec![F::zero(); r];
        routed_norm(p, batch, [&li.txt.attn_norm, &li.vid.attn_norm], &x, &mut a, &mut inv1);
        let mut q = vec![F::zero(); r * qd];
        let mut k = vec![F::zero(); r * kvd];
        let mut v = vec![F::zero(); r * kvd];
        routed_linear(p, batch, l, |t| &t.wq, &a, d, qd, &mut q);
        routed_linear(p, batch, l, |t| &t.wk, &a, d, kvd, &mut k);
        routed_linear(p, batch, l, |t| &t.wv, &a, d, kvd, &mut v);
        rope.apply(&mut q, qd, false);
        rope.apply(&mut k, kvd, false);

        let mut attn = vec![F::zero(); r * qd];
        let mut seq_tapes = Vec::with_capacity(batch.seqs.len());
        for s in &batch.seqs {
            let len = s.rows.len();
            let total = plen + len;
            let mut qs = vec![F::zero(); len * qd];
            let mut ks = Vec::with_capacity(total * kvd);
            let mut vs = Vec::with_capacity(total * kvd);
            if let Some(cache) = prefix {
                ks.extend_from_slice(&cache.k[l]);
                vs.extend_from_slice(&cache.v[l]);
            }
            for (i, &row) in s.rows.iter().enumerate() {
                qs[i * qd..(i + 1) * qd].copy_from_slice(&q[row * qd..(row + 1) * qd]);
                ks.extend_from_slice(&k[row * kvd..(row + 1) * kvd]);
                vs.extend_from_slice(&v[row * kvd..(row + 1) * kvd]);
            }
            let mut probs = vec![F::zero(); nh * len * total];
            let mut os = vec![F::zero(); len * qd];
            for head in 0..nh {
                let g = head / (nh / nkv);
                let sc = &mut probs[head * len * total..(head + 1) * len * total];
                gemm(
                    len,
                    hd,
                    total,
                    scale,
                    &qs,
                    View {
                        offset: head * hd,
                        rs: qd,
                        cs: 1,
                    },
                    &ks,
                    View {
                        offset: g * hd,
                        rs: 1,
                        cs: kvd,
                    },
                    F::zero(),
                    sc,
                    View::rows(total),
                );
                for (i, row) in sc.chunks_exact_mut(total).enumerate() {
                    masked_softmax(row, plen, &s.mask.rows[i]);
                }
                gemm(
                    len,
                    total,
                    hd,
                    F::one(),
                    sc,
                    View::rows(total),
                    &vs,
                    View {
                        offset: g * hd,
                        rs: kvd,
                        cs: 1,
                    },
                    F::zero(),
                    &mut os,
                    View {
                        offset: head * hd,
                        rs: qd,
                        cs: 1,
                    },
                );
            }
            for (i, &row) in s.rows.iter().enumerate() {
                attn[row * qd..(row + 1) * qd].copy_from_slice(&os[i * qd..(i + 1) * qd]);
            }
            seq_tapes.push(SeqAttn { q: qs, k: ks, v: vs, probs });
        }

        let mut h1 = x.clone();
        for (tower, rows) in blocks(batch) {
            if rows.is_empty() {
                continue;
            }
            let wo = p.get(&li.tower(tower).wo);
            mm(
                &attn[rows.start * qd..rows.end * qd],
                wo,
                &mut h1[rows.start * d..rows.end * d],
                rows.len(),
                qd,
                d,
                true,
            );
        }
        let mut b = vec![F::zero(); r * d];
        let mut inv2 = vec![F::zero(); r];
        routed_norm(p, batch, [&li.txt.ffn_norm, &li.vid.ffn_norm], &h1, &mut b, &mut inv2);
        let mut u1 = vec![F::zero(); r * f];
        let mut u3 = vec![F::zero(); r * f];
        routed_linear(p, batch, l, |t| &t.w1, &b, d, f, &mut u1);
        routed_linear(p, batch, l, |t| &t.w3, &b, d, f, &mut u3);
        let mut s = vec![F::zero(); r * f];
        sigmoid_slice(&u1, &mut s);
        for ((o, &g), &u) in s.iter_mut().zip(&u1).zip(&u3) {
            *o *= g * u;
        }
        let mut h2 = h1.clone();
        for (tower, rows) in blocks(batch) {
            if rows.is_empty() {
                continue;
            }
            let w2 = p.get(&li.tower(tower).w2);
            mm(
                &s[rows.start * f..rows.end * f],
                w2,
                &mut h2[rows.start * d..rows.end * d],
                rows.len(),
                f,
                d,
                true,
            );
        }
        h = h2;
        layers.push(LayerTape {
            x,
            a,
            inv1,
            attn,
            h1,
            b,
            inv2,
            u1,
            u3,
            s,
            seq: seq_tapes,
        });
    }

    let mut hn = vec![F::zero(); r * d];
    let mut inv_f = vec![F::zero(); r];
    routed_norm(p, batch, [&ix.txt_norm, &ix.vid_norm], &h, &mut hn, &mut inv_f);
    let vsz = c.vocab_size;
    let mut logits = vec![F::zero(); nt * vsz];
    if nt > 0 {
        mm(&hn[..nt * d], p.get(&ix.lm_head), &mut logits, nt, d, vsz, false);
    }

    // velocity head on noisy rows (the first `nn` video rows)
    let u = c.up_hidden;
    let z: Vec<F> = hn[nt * d..(nt + nn) * d].iter().zip(&h_in[..nn * d]).map(|(&a, &b)| a + b).collect();
    let mut up_pre = vec![F::zero(); nn * u];
    let b1 = p.get(&ix.up_b1);
    for row in up_pre.chunks_exact_mut(u) {
        row.copy_from_slice(b1);
    }
    let mut velocity = vec![F::zero(); nn * dl];
    let mut resid = vec![F::zero(); nn * dl];
    let mut den = vec![F::zero(); nn];
    let mut up_u = vec![F::zero(); nn * u];
    if nn > 0 {
        mm(&z, p.get(&ix.up_w1), &mut up_pre, nn, d, u, true);
        mm(&sf[..nn * td], p.get(&ix.up_wt), &mut up_pre, nn, td, u, true);
        sigmoid_slice(&up_pre, &mut up_u);
        for (o, &x) in up_u.iter_mut().zip(&up_pre) {
            *o *= x;
        }
        let b2 = p.get(&ix.up_b2);
        for row in resid.chunks_exact_mut(dl) {
            row.copy_from_slice(b2);
        }
        mm(&up_u, p.get(&ix.up_w2), &mut resid, nn, u, dl, true);
        let gate = p.get(&ix.up_gate)[0];
        let delta = F::of(c.velocity_eps);
        for i in 0..nn {
            den[i] = F::one() - batch.vid_t[i] + delta;
            let coef = gate / den[i];
            for j in 0..dl {
                let rj = resid[i * dl + j] - batch.vid_x[i * dl + j];
                resid[i * dl + j] = rj;
                velocity[i * dl + j] = coef * rj;
            }
        }
    }
    Ok(Forward {
        logits,
        velocity,
        tape: Tape {
            layers,
            rope,
            sf,
            h_last: h,
            hn,
            inv_f,
            z,
            up_pre,
            up_u,
            resid,
            den,
        },
    })
}
