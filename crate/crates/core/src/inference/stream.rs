use crate::codec::LatentChunk;
use crate::error::{Error, Result};
use crate::masking::{LayoutDescriptor, Role};
use crate::model::{forward, Batch, KvCache, Params, SeqInput};
use crate::sequence::{Element, Marker};

/// One piece of a committed fragment.
pub(crate) enum Piece<'a> {
    Marker(Marker),
    Text(&'a [u32]),
    Clean(&'a LatentChunk),
}

impl<'a> Piece<'a> {
    pub fn of(el: &'a Element) -> Option<Piece<'a>> {
        match el {
            Element::Marker { marker, .. } => Some(Piece::Marker(*marker)),
            Element::Text(s) if !s.token_ids.is_empty() => Some(Piece::Text(&s.token_ids)),
            Element::Text(_) | Element::Noisy(_) => None,
            Element::Clean(c) => Some(Piece::Clean(&c.latent)),
        }
    }
}

/// Payloads of a run of tokens, in positional order.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Tokens {
    pub layout: LayoutDescriptor,
    pub ids: Vec<u32>,
    pub latents: Vec<f32>,
    pub t: Vec<f32>,
    pub rope: Vec<u32>,
}

impl Tokens {
    fn push(&mut self, piece: &Piece, next_pos: u32) {
        let start = self.ids.len();
        match piece {
            Piece::Marker(m) => {
                self.layout.push_text(&[m.role()]);
                self.ids.push(m.token());
            }
            Piece::Text(ids) => {
                self.layout.push_text(&vec![Role::PlainText; ids.len()]);
                self.ids.extend_from_slice(ids);
            }
            Piece::Clean(c) => {
                self.layout.push_chunk(Role::CleanVid, c.chunk_index, c.tokens);
                self.ids.extend(std::iter::repeat(0).take(c.tokens));
                self.latents.extend_from_slice(&c.data);
                self.t.extend(std::iter::repeat(c.t).take(c.tokens));
            }
        }
        let n = (self.ids.len() - start) as u32;
        self.rope.extend(next_pos..next_pos + n);
    }

    fn input(&self) -> Result<SeqInput> {
        SeqInput::fragment(self.layout.clone(), self.rope.clone(), self.ids.clone(), self.latents.clone(), self.t.clone())
    }

    /// The first `n` tokens.
    fn prefix(&self, n: usize) -> Tokens {
        let mut layout = LayoutDescriptor::default();
        layout.tokens = self.layout.tokens[..n].to_vec();
        let n_vid = self.layout.tokens[..n]
            .iter()
            .filter(|t| t.role.modality() == crate::masking::Modality::Video)
            .count();
        let dl = if self.t.is_empty() { 0 } else { self.latents.len() / self.t.len() };
        Tokens {
            layout,
            ids: self.ids[..n].to_vec(),
            latents: self.latents[..n_vid * dl].to_vec(),
            t: self.t[..n_vid].to_vec(),
            rope: self.rope[..n].to_vec(),
        }
    }
}

/// A KV-cached token stream holding only committed (text and clean) tokens.
#[derive(Debug, Clone)]
pub(crate) struct Stream {
    pub cache: KvCache<f32>,
    pub record: Tokens,
    /// Next-token logits at the last committed text token.
    pub logits: Vec<f32>,
}

impl Stream {
    pub fn new(p: &Params<f32>) -> Stream {
        Stream {
            cache: KvCache::new(p),
            record: Tokens::default(),
            logits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.record.ids.len()
    }

    /// Run `pieces` through the model against the cache and commit them.
    pub fn commit(&mut self, p: &Params<f32>, pieces: &[Piece]) -> Result<()> {
        let mut frag = Tokens::default();
        for piece in pieces {
            frag.push(piece, self.len() as u32 + frag.ids.len() as u32);
        }
        if frag.ids.is_empty() {
            return Ok(());
        }
        let input = frag.input()?;
        let batch = Batch::<f32>::new(&p.cfg, &[&input])?;
        let out = forward(p, &batch, Some(&self.cache))?;
        self.cache.append(&out)?;
        if batch.n_txt > 0 {
            let v = p.cfg.vocab_size;
            self.logits = out.logits[(batch.n_txt - 1) * v..].to_vec();
        }
        // re-push so element indices continue the committed numbering
        for piece in pieces {
            let pos = self.len() as u32;
            self.record.push(piece, pos);
        }
        Ok(())
    }

    /// Velocity for a noisy chunk placed right after the committed tokens.
    pub fn velocity(&self, p: &Params<f32>, x: &[f32], t: f32, chunk_index: usize) -> Result<Vec<f32>> {
        let input = noisy_query(&self.record, p.cfg.tokens_per_chunk, x, t, chunk_index)?;
        let batch = Batch::<f32>::new(&p.cfg, &[&input])?;
        Ok(forward(p, &batch, Some(&self.cache))?.velocity)
    }
}

fn noisy_query(prefix: &Tokens, n: usize, x: &[f32], t: f32, chunk_index: usize) -> Result<SeqInput> {
    if x.is_empty() || x.len() % n != 0 {
        return Err(Error::Shape("noisy state does not split into chunk tokens".into()));
    }
    let mut layout = LayoutDescriptor::default();
    layout.push_chunk(Role::NoisyVid, chunk_index, n);
    let pos = prefix.ids.len() as u32;
    SeqInput::fragment(layout, (pos..pos + n as u32).collect(), vec![0; n], x.to_vec(), vec![t; n])
}

/// Logits of every text token of `record`, recomputed without a cache.
pub(crate) fn full_logits(p: &Params<f32>, record: &Tokens) -> Result<Vec<Vec<f32>>> {
    let input = record.input()?;
    let batch = Batch::<f32>::new(&p.cfg, &[&input])?;
    let out = forward(p, &batch, None)?;
    let v = p.cfg.vocab_size;
    Ok(out.logits.chunks_exact(v).map(<[f32]>::to_vec).collect())
}

/// Velocity of a noisy chunk placed after the first `prefix_len` tokens of
/// `record`, recomputed without a cache.
pub(crate) fn full_velocity(p: &Params<f32>, record: &Tokens, prefix_len: usize, x: &[f32], t: f32, chunk_index: usize) -> Result<Vec<f32>> {
    let n = p.cfg.tokens_per_chunk;
    let mut pre = record.prefix(prefix_len);
    let pos = pre.ids.len() as u32;
    pre.layout.push_chunk(Role::NoisyVid, chunk_index, n);
    pre.ids.extend(std::iter::repeat(0).take(n));
    pre.latents.extend_from_slice(x);
    pre.t.extend(std::iter::repeat(t).take(n));
    pre.rope.extend(pos..pos + n as u32);
    let input = pre.input()?;
    let batch = Batch::<f32>::new(&p.cfg, &[&input])?;
    Ok(forward(p, &batch, None)?.velocity)
}
