use super::forward::{blocks, Forward};
use super::input::Batch;
use super::ops::{rmsnorm_backward, sigmoid_slice};
use super::params::Params;
use crate::kernels::{gemm, mm_nt, mm_tn, Float, View};

/// Reverse pass: gradients of the loss with respect to every parameter,
/// given the loss gradients on the logits and the velocities.
///
/// Panics if `fwd` came from a cached (prefixed) pass.
pub fn backward<F: Float>(p: &Params<F>, batch: &Batch<F>, fwd: &Forward<F>, dlogits: &[F], dvel: &[F]) -> Vec<F> {
    let c = &p.cfg;
    let ix = &p.index;
    let tape = &fwd.tape;
    let (d, hd, nh, nkv) = (c.d_model, c.head_dim(), c.n_heads, c.n_kv_heads);
    let (qd, kvd, f, dl, td, u) = (nh * hd, nkv * hd, c.d_ffn, c.d_latent, c.time_dim, c.up_hidden);
    let r = batch.rows();
    let (nt, nv, nn) = (batch.n_txt, batch.n_vid, batch.n_noisy);
    let mut g = vec![F::zero(); p.len()];
    let mut dhn = vec![F::zero(); r * d];

    if nt > 0 {
        mm_tn(&tape.hn[..nt * d], dlogits, &mut g[ix.lm_head.clone()], d, nt, c.vocab_size, true);
        mm_nt(dlogits, p.get(&ix.lm_head), &mut dhn[..nt * d], nt, c.vocab_size, d, false);
    }

    let mut dh_in = vec![F::zero(); nv * d];
    if nn > 0 {
        let gate = p.get(&ix.up_gate)[0];
        let mut dgate = F::zero();
        let mut dxh = vec![F::zero(); nn * dl];
        for i in 0..nn {
            let coef = gate / tape.den[i];
            for j in 0..dl {
                let dv = dvel[i * dl + j];
                dgate += dv * tape.resid[i * dl + j] / tape.den[i];
                dxh[i * dl + j] = dv * coef;
            }
        }
        g[ix.up_gate.start] += dgate;
        let gb2 = &mut g[ix.up_b2.clone()];
        for row in dxh.chunks_exact(dl) {
            gb2.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        mm_tn(&tape.up_u, &dxh, &mut g[ix.up_w2.clone()], u, nn, dl, true);
        let mut dpre = vec![F::zero(); nn * u];
        mm_nt(&dxh, p.get(&ix.up_w2), &mut dpre, nn, dl, u, false);
        let mut sig = vec![F::zero(); nn * u];
        sigmoid_slice(&tape.up_pre, &mut sig);
        for ((dp, &x), &sg) in dpre.iter_mut().zip(&tape.up_pre).zip(&sig) {
            *dp *= sg * (F::one() + x * (F::one() - sg));
        }
        let gb1 = &mut g[ix.up_b1.clone()];
        for row in dpre.chunks_exact(u) {
            gb1.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        mm_tn(&tape.z, &dpre, &mut g[ix.up_w1.clone()], d, nn, u, true);
        mm_tn(&tape.sf[..nn * td], &dpre, &mut g[ix.up_wt.clone()], td, nn, u, true);
        let mut dz = vec![F::zero(); nn * d];
        mm_nt(&dpre, p.get(&ix.up_w1), &mut dz, nn, u, d, false);
        for (i, &v) in dz.iter().enumerate() {
            dhn[nt * d + i] += v;
            dh_in[i] += v;
        }
    }

    let mut dh = vec![F::zero(); r * d];
    for ((_, rows), gr) in blocks(batch).into_iter().zip([&ix.txt_norm, &ix.vid_norm]) {
        let sl = rows.start * d..rows.end * d;
        rmsnorm_backward(
            &tape.h_last[sl.clone()],
            p.get(gr),
            &tape.inv_f[rows.clone()],
            &dhn[sl.clone()],
            d,
            &mut dh[sl],
            &mut g[gr.clone()],
        );
    }

    let scale = F::of(1.0 / (hd as f64).sqrt());
    for l in (0..c.layers).rev() {
        let lt = &tape.layers[l];
        let li = &ix.layers[l];

        // FFN
        let mut dh1 = dh.clone();
        let mut ds = vec![F::zero(); r * f];
        for (tower, rows) in blocks(batch) {
            if rows.is_empty() {
                continue;
            }
            let tb = li.tower(tower);
            let n = rows.len();
            mm_nt(
                &dh[rows.start * d..rows.end * d],
                p.get(&tb.w2),
                &mut ds[rows.start * f..rows.end * f],
                n,
                d,
                f,
                false,
            );
            mm_tn(
                &lt.s[rows.start * f..rows.end * f],
                &dh[rows.start * d..rows.end * d],
                &mut g[tb.w2.clone()],
                f,
                n,
                d,
                true,
            );
        }
        let mut du1 = vec![F::zero(); r * f];
        let mut du3 = vec![F::zero(); r * f];
        let mut sig = vec![F::zero(); r * f];
        sigmoid_slice(&lt.u1, &mut sig);
        for i in 0..r * f {
            let (a, b, sg) = (lt.u1[i], lt.u3[i], sig[i]);
            du1[i] = ds[i] * b * sg * (F::one() + a * (F::one() - sg));
            du3[i] = ds[i] * a * sg;
        }
        let mut db = vec![F::zero(); r * d];
        for (tower, rows) in blocks(batch) {
            if rows.is_empty() {
                continue;
            }
            let tb = li.tower(tower);
            let n = rows.len();
            let (bs, fs) = (rows.start * d..rows.end * d, rows.start * f..rows.end * f);
            mm_tn(&lt.b[bs.clone()], &du1[fs.clone()], &mut g[tb.w1.clone()], d, n, f, true);
            mm_tn(&lt.b[bs.clone()], &du3[fs.clone()], &mut g[tb.w3.clone()], d, n, f, true);
            mm_nt(&du1[fs.clone()], p.get(&tb.w1), &mut db[bs.clone()], n, f, d, false);
            mm_nt(&du3[fs], p.get(&tb.w3), &mut db[bs.clone()], n, f, d, true);
            rmsnorm_backward(
                &lt.h1[bs.clone()],
                p.get(&tb.ffn_norm),
                &lt.inv2[rows.clone()],
                &db[bs.clone()],
                d,
                &mut dh1[bs],
                &mut g[tb.ffn_norm.clone()],
            );
        }

        // attention output projection
        let mut dattn = vec![F::zero(); r * qd];
        for (tower, rows) in blocks(batch) {
            if rows.is_empty() {
                continue;
            }
            let tb = li.tower(tower);
            let n = rows.len();
            mm_nt(
                &dh1[rows.start * d..rows.end * d],
                p.get(&tb.wo),
                &mut dattn[rows.start * qd..rows.end * qd],
                n,
                d,
                qd,
                false,
            );
            mm_tn(
                &lt.attn[rows.start * qd..rows.end * qd],
                &dh1[rows.start * d..rows.end * d],
                &mut g[tb.wo.clone()],
                qd,
                n,
                d,
                true,
            );
        }

        // attention core
        let mut dq = vec![F::zero(); r * qd];
        let mut dk = vec![F::zero(); r * kvd];
        let mut dv = vec![F::zero(); r * kvd];
        for (s, sa) in batch.seqs.iter().zip(&lt.seq) {
            let len = s.rows.len();
            assert_eq!(sa.k.len(), len * kvd, "backward through a cached pass");
            let mut dos = vec![F::zero(); len * qd];
            for (i, &row) in s.rows.iter().enumerate() {
                dos[i * qd..(i + 1) * qd].copy_from_slice(&dattn[row * qd..(row + 1) * qd]);
            }
            let mut dqs = vec![F::zero(); len * qd];
            let mut dks = vec![F::zero(); len * kvd];
            let mut dvs = vec![F::zero(); len * kvd];
            let mut dp = vec![F::zero(); len * len];
            for head in 0..nh {
                let gi = head / (nh / nkv);
                let pr = &sa.probs[head * len * len..(head + 1) * len * len];
                let qv = View {
                    offset: head * hd,
                    rs: qd,
                    cs: 1,
                };
                let kv = View {
                    offset: gi * hd,
                    rs: kvd,
                    cs: 1,
                };
                gemm(
                    len,
                    hd,
                    len,
                    F::one(),
                    &dos,
                    qv,
                    &sa.v,
                    View {
                        offset: gi * hd,
                        rs: 1,
                        cs: kvd,
                    },
                    F::zero(),
                    &mut dp,
                    View::rows(len),
                );
                gemm(len, len, hd, F::one(), pr, View::transposed(len), &dos, qv, F::one(), &mut dvs, kv);
                for (prow, drow) in pr.chunks_exact(len).zip(dp.chunks_exact_mut(len)) {
                    let dot = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum::<F>();
                    for (dd, &pp) in drow.iter_mut().zip(prow) {
                        *dd = pp * (*dd - dot);
                    }
                }
                gemm(len, len, hd, scale, &dp, View::rows(len), &sa.k, kv, F::zero(), &mut dqs, qv);
                gemm(len, len, hd, scale, &dp, View::transposed(len), &sa.q, qv, F::one(), &mut dks, kv);
            }
            for (i, &row) in s.rows.iter().enumerate() {
                dq[row * qd..(row + 1) * qd].copy_from_slice(&dqs[i * qd..(i + 1) * qd]);
                dk[row * kvd..(row + 1) * kvd].copy_from_slice(&dks[i * kvd..(i + 1) * kvd]);
                dv[row * kvd..(row + 1) * kvd].copy_from_slice(&dvs[i * kvd..(i + 1) * kvd]);
            }
        }
        tape.rope.apply(&mut dq, qd, true);
        tape.rope.apply(&mut dk, kvd, true);

        let mut dx = dh1;
        let mut da = vec![F::zero(); r * d];
        for (tower, rows) in blocks(batch) {
            if rows.is_empty() {
                continue;
            }
            let tb = li.tower(tower);
            let n = rows.len();
            let asl = rows.start * d..rows.end * d;
            let a = &lt.a[asl.clone()];
            let (qs, ks) = (rows.start * qd..rows.end * qd, rows.start * kvd..rows.end * kvd);
            mm_tn(a, &dq[qs.clone()], &mut g[tb.wq.clone()], d, n, qd, true);
            mm_tn(a, &dk[ks.clone()], &mut g[tb.wk.clone()], d, n, kvd, true);
            mm_tn(a, &dv[ks.clone()], &mut g[tb.wv.clone()], d, n, kvd, true);
            mm_nt(&dq[qs], p.get(&tb.wq), &mut da[asl.clone()], n, qd, d, false);
            mm_nt(&dk[ks.clone()], p.get(&tb.wk), &mut da[asl.clone()], n, kvd, d, true);
            mm_nt(&dv[ks], p.get(&tb.wv), &mut da[asl.clone()], n, kvd, d, true);
            rmsnorm_backward(
                &lt.x[asl.clone()],
                p.get(&tb.attn_norm),
                &lt.inv1[rows.clone()],
                &da[asl.clone()],
                d,
                &mut dx[asl],
                &mut g[tb.attn_norm.clone()],
            );
        }
        dh = dx;
    }

    // inputs
    let ge = ix.embed.start;
    for (row, &id) in batch.txt_ids.iter().enumerate() {
        let off = ge + id as usize * d;
        for j in 0..d {
            g[off + j] += dh[row * d + j];
        }
    }
    if nv > 0 {
        let mut dhv = dh[nt * d..].to_vec();
        dhv.iter_mut().zip(&dh_in).for_each(|(a, &b)| *a += b);
        for (i, row) in dhv.chunks_exact(d).enumerate() {
            let sp = batch.vid_spatial[i] as usize;
            for j in 0..d {
                g[ix.down_b.start + j] += row[j];
                g[ix.time_b.start + j] += row[j];
                g[ix.ape.start + sp * d + j] += row[j];
            }
        }
        mm_tn(&batch.vid_x, &dhv, &mut g[ix.down_w.clone()], dl, nv, d, true);
        mm_tn(&tape.sf, &dhv, &mut g[ix.time_w.clone()], td, nv, d, true);
    }
    g
}
