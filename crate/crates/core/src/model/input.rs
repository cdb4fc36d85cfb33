use super::ModelConfig;
use crate::error::{Error, Result};
use crate::kernels::Float;
use crate::masking::{assign_positions, build_mask, CompiledMask, LayoutDescriptor, Modality, Role};
use crate::sequence::{Element, InterleavedSequence};

/// One sequence's model inputs, in positional order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInput {
    pub layout: LayoutDescriptor,
    pub mask: CompiledMask,
    pub rope: Vec<u32>,
    /// Row-major patch index inside the chunk (video tokens; 0 for text).
    pub spatial: Vec<u32>,
    /// Token id (text tokens; 0 for video).
    pub text_ids: Vec<u32>,
    /// Next text-stream token (text tokens only).
    pub text_targets: Vec<Option<u32>>,
    /// `d_latent` values per video token, in order.
    pub latents: Vec<f32>,
    /// Noise level per video token.
    pub t: Vec<f32>,
    /// `x − ε` per noisy token, in order.
    pub flow_targets: Vec<f32>,
}

impl SeqInput {
    /// Compile a training sequence: mask, positions, and both loss targets.
    pub fn from_sequence(seq: &InterleavedSequence) -> Result<SeqInput> {
        let layout = seq.layout();
        let n = layout.len();
        let mut text_ids = vec![0u32; n];
        let mut latents = Vec::new();
        let mut t = Vec::new();
        let mut flow_targets = Vec::new();
        let mut p = 0;
        for el in &seq.elements {
            match el {
                Element::Marker { marker, .. } => {
                    text_ids[p] = marker.token();
                    p += 1;
                }
                Element::Text(s) => {
                    text_ids[p..p + s.token_ids.len()].copy_from_slice(&s.token_ids);
                    p += s.token_ids.len();
                }
                Element::Noisy(c) => {
                    latents.extend_from_slice(&c.latent.data);
                    t.extend(std::iter::repeat(c.latent.t).take(c.latent.tokens));
                    flow_targets.extend_from_slice(&c.target);
                    p += c.latent.tokens;
                }
                Element::Clean(c) => {
                    latents.extend_from_slice(&c.latent.data);
                    t.extend(std::iter::repeat(c.latent.t).take(c.latent.tokens));
                    p += c.latent.tokens;
                }
            }
        }
        SeqInput::from_layout(layout, text_ids, latents, t, flow_targets)
    }

    /// Compile a layout with its payloads; rotary ids and text targets are
    /// derived from the layout.
    pub fn from_layout(layout: LayoutDescriptor, text_ids: Vec<u32>, latents: Vec<f32>, t: Vec<f32>, flow_targets: Vec<f32>) -> Result<SeqInput> {
        let mask = build_mask(&layout)?;
        let pos = assign_positions(&layout)?;
        if text_ids.len() != layout.len() {
            return Err(Error::Shape("one token id per position is required".into()));
        }
        let text_targets = next_text_targets(&layout, &text_ids);
        let spatial = spatial_index(&pos.spatial_ids);
        Ok(SeqInput {
            layout,
            mask,
            rope: pos.rope_ids,
            spatial,
            text_ids,
            text_targets,
            latents,
            t,
            flow_targets,
        })
    }

    /// Inputs for a layout fragment with explicit rotary ids and no targets.
    pub fn fragment(layout: LayoutDescriptor, rope: Vec<u32>, text_ids: Vec<u32>, latents: Vec<f32>, t: Vec<f32>) -> Result<SeqInput> {
        let mask = build_mask(&layout)?;
        let pos = assign_positions(&layout)?;
        let n = layout.len();
        if rope.len() != n || text_ids.len() != n {
            return Err(Error::Shape("fragment ids do not match its layout".into()));
        }
        Ok(SeqInput {
            mask,
            rope,
            spatial: spatial_index(&pos.spatial_ids),
            text_ids,
            text_targets: vec![None; n],
            latents,
            t,
            flow_targets: Vec::new(),
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }
}

fn spatial_index(ids: &[Option<(u32, u32)>]) -> Vec<u32> {
    // row-major index; the side is recovered from the largest column seen
    let side = ids.iter().flatten().map(|&(_, c)| c + 1).max().unwrap_or(1);
    ids.iter().map(|s| s.map_or(0, |(r, c)| r * side + c)).collect()
}

/// Each text token predicts the next token of the text stream; the last
/// text token has no target.
pub fn next_text_targets(layout: &LayoutDescriptor, ids: &[u32]) -> Vec<Option<u32>> {
    let text_pos: Vec<usize> = (0..layout.len()).filter(|&i| layout.tokens[i].modality == Modality::Text).collect();
    let mut targets = vec![None; layout.len()];
    for w in text_pos.windows(2) {
        if layout.tokens[w[0]].role != Role::Eos {
            targets[w[0]] = Some(ids[w[1]]);
        }
    }
    targets
}

/// Row bookkeeping of one sequence inside a [`Batch`].
#[derive(Debug, Clone)]
pub struct SeqRows {
    /// Batch row of each position.
    pub rows: Vec<usize>,
    pub mask: CompiledMask,
    /// Cached keys preceding this sequence (inference only).
    pub prefix: usize,
}

/// Sequences packed modality-major: text rows, then noisy video rows, then
/// clean video rows.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub n_txt: usize,
    pub n_noisy: usize,
    pub n_vid: usize,
    pub txt_ids: Vec<u32>,
    pub txt_targets: Vec<Option<u32>>,
    pub vid_x: Vec<F>,
    pub vid_t: Vec<F>,
    pub vid_spatial: Vec<u32>,
    pub flow_target: Vec<F>,
    /// Rotary id per batch row.
    pub rope: Vec<u32>,
    pub seqs: Vec<SeqRows>,
}

impl<F: Float> Batch<F> {
    pub fn new(cfg: &ModelConfig, seqs: &[&SeqInput]) -> Result<Batch<F>> {
        let dl = cfg.d_latent;
        let count = |role: Option<Role>, m: Modality| -> usize {
            seqs.iter()
                .flat_map(|s| &s.layout.tokens)
                .filter(|t| t.modality == m && role.map_or(true, |r| t.role == r))
                .count()
        };
        let n_txt = count(None, Modality::Text);
        let n_noisy = count(Some(Role::NoisyVid), Modality::Video);
        let n_vid = count(None, Modality::Video);
        let rows = n_txt + n_vid;
        let mut b = Batch {
            n_txt,
            n_noisy,
            n_vid,
            txt_ids: Vec::with_capacity(n_txt),
            txt_targets: Vec::with_capacity(n_txt),
            vid_x: vec![F::zero(); n_vid * dl],
            vid_t: vec![F::zero(); n_vid],
            vid_spatial: vec![0; n_vid],
            flow_target: Vec::with_capacity(n_noisy * dl),
            rope: vec![0; rows],
            seqs: Vec::with_capacity(seqs.len()),
        };
        let (mut next_noisy, mut next_clean) = (n_txt, n_txt + n_noisy);
        for s in seqs {
            let n_video = s.layout.tokens.iter().filter(|t| t.modality == Modality::Video).count();
            let n_noisy_s = s.layout.tokens.iter().filter(|t| t.role == Role::NoisyVid).count();
            if s.latents.len() != n_video * dl || s.t.len() != n_video {
                return Err(Error::Shape(format!(
                    "sequence has {n_video} video tokens but {} latent values and {} noise levels (d_latent {dl})",
                    s.latents.len(),
                    s.t.len()
                )));
            }
            if !s.flow_targets.is_empty() && s.flow_targets.len() != n_noisy_s * dl {
                return Err(Error::Shape("flow targets do not match the noisy tokens".into()));
            }
            if s.spatial.iter().any(|&sp| sp as usize >= cfg.tokens_per_chunk) {
                return Err(Error::Shape("chunk larger than tokens_per_chunk".into()));
            }
            if s.text_ids.iter().any(|&id| id as usize >= cfg.vocab_size) {
                return Err(Error::Shape("token id outside the vocabulary".into()));
            }
            let mut rows_of = Vec::with_capacity(s.len());
            let mut v = 0;
            let mut noisy_seen = 0;
            for (p, tok) in s.layout.tokens.iter().enumerate() {
                let row = match tok.modality {
                    Modality::Text => {
                        b.txt_ids.push(s.text_ids[p]);
                        b.txt_targets.push(s.text_targets[p]);
                        b.txt_ids.len() - 1
                    }
                    Modality::Video => {
                        let row = if tok.role == Role::NoisyVid {
                            if !s.flow_targets.is_empty() {
                                b.flow_target
                                    .extend(s.flow_targets[noisy_seen * dl..(noisy_seen + 1) * dl].iter().map(|&x| F::of(x as f64)));
                            }
                            noisy_seen += 1;
                            next_noisy += 1;
                            next_noisy - 1
                        } else {
                            next_clean += 1;
                            next_clean - 1
                        };
                        let vr = row - n_txt;
                        for (dst, &src) in b.vid_x[vr * dl..(vr + 1) * dl].iter_mut().zip(&s.latents[v * dl..(v + 1) * dl]) {
                            *dst = F::of(src as f64);
                        }
                        b.vid_t[vr] = F::of(s.t[v] as f64);
                        b.vid_spatial[vr] = s.spatial[p];
                        v += 1;
                        row
                    }
                };
                b.rope[row] = s.rope[p];
                rows_of.push(row);
            }
            b.seqs.push(SeqRows {
                rows: rows_of,
                mask: s.mask.clone(),
                prefix: 0,
            });
        }
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.n_txt + self.n_vid
    }
}
