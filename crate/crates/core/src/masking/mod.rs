//! Hybrid attention mask and position ids for interleaved layouts.
//!
//! Visibility rules, for a query in element `e`:
//!
//! 1. text queries see their own element causally;
//! 2. video queries see their whole chunk copy;
//! 3. keys of a noisy chunk are visible only inside that chunk;
//! 4. clean chunk keys and text keys are visible to every later element;
//! 5. nothing sees a later element.
//!
//! [`build_mask`] compiles these rules into per-query interval lists.
//! [`oracle_mask`] evaluates them pairwise and exists as a test reference.

use std::fmt::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    PlainText,
    Bof,
    Eof,
    Eos,
    NoisyVid,
    CleanVid,
}

impl Role {
    pub fn modality(self) -> Modality {
        match self {
            Role::NoisyVid | Role::CleanVid => Modality::Video,
            _ => Modality::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub modality: Modality,
    pub role: Role,
    pub chunk_index: Option<usize>,
    pub element_index: usize,
}

/// Per-token metadata for one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDescriptor {
    pub tokens: Vec<TokenMeta>,
}

/// Contiguous run of tokens forming one element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSpan {
    pub range: Range<usize>,
    pub role: Role,
    pub chunk_index: Option<usize>,
}

impl LayoutDescriptor {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn next_element(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.element_index + 1)
    }

    /// Append a text element of `roles.len()` tokens.
    pub fn push_text(&mut self, roles: &[Role]) {
        let e = self.next_element();
        self.tokens.extend(roles.iter().map(|&role| TokenMeta {
            modality: Modality::Text,
            role,
            chunk_index: None,
            element_index: e,
        }));
    }

    /// Append a video element of `n` tokens.
    pub fn push_chunk(&mut self, role: Role, chunk_index: usize, n: usize) {
        let e = self.next_element();
        self.tokens.extend((0..n).map(|_| TokenMeta {
            modality: Modality::Video,
            role,
            chunk_index: Some(chunk_index),
            element_index: e,
        }));
    }

    /// Group tokens into elements and check the structural invariants.
    pub fn elements(&self) -> Result<Vec<ElementSpan>> {
        let mut out: Vec<ElementSpan> = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.role.modality() != t.modality {
                return Err(Error::Layout(format!("token {i}: role {:?} is not {:?}", t.role, t.modality)));
            }
            if (t.modality == Modality::Video) != t.chunk_index.is_some() {
                return Err(Error::Layout(format!("token {i}: chunk index must be set exactly on video tokens")));
            }
            let n = out.len();
            match out.last_mut() {
                Some(last) if t.element_index + 1 == n => {
                    let first = &self.tokens[last.range.start];
                    let same = match t.modality {
                        Modality::Text => first.modality == Modality::Text,
                        Modality::Video => first.role == t.role && first.chunk_index == t.chunk_index,
                    };
                    if !same {
                        return Err(Error::Layout(format!("token {i}: element {} mixes roles", t.element_index)));
                    }
                    last.range.end = i + 1;
                }
                _ if t.element_index == n => out.push(ElementSpan {
                    range: i..i + 1,
                    role: t.role,
                    chunk_index: t.chunk_index,
                }),
                _ => {
                    return Err(Error::Layout(format!(
                        "token {i}: element index {} breaks the contiguous numbering",
                        t.element_index
                    )))
                }
            }
        }
        for (e, span) in out.iter().enumerate() {
            if span.role == Role::NoisyVid {
                match out.get(e + 1) {
                    None => {}
                    Some(next) if next.role == Role::CleanVid && next.chunk_index == span.chunk_index => {
                        if next.range.len() != span.range.len() {
                            return Err(Error::Layout(format!("element {e}: twins differ in length")));
                        }
                    }
                    Some(_) => {
                        return Err(Error::Layout(format!(
                            "element {e}: noisy chunk {:?} is not followed by its clean twin",
                            span.chunk_index.unwrap_or_default()
                        )))
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Attention mask as sorted, disjoint half-open key intervals per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompiledMask {
    pub rows: Vec<Vec<(usize, usize)>>,
}

impl CompiledMask {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.rows[q].iter().any(|&(s, e)| (s..e).contains(&k))
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let n = self.rows.len();
        (0..n).map(|q| (0..n).map(|k| self.allows(q, k)).collect()).collect()
    }
}

fn push_interval(list: &mut Vec<(usize, usize)>, s: usize, e: usize) {
    if s >= e {
        return;
    }
    match list.last_mut() {
        Some(last) if last.1 == s => last.1 = e,
        _ => list.push((s, e)),
    }
}

pub fn build_mask(layout: &LayoutDescriptor) -> Result<CompiledMask> {
    let elements = layout.elements()?;
    let mut rows = Vec::with_capacity(layout.len());
    let mut visible: Vec<(usize, usize)> = Vec::new();
    for el in &elements {
        let r = el.range.clone();
        for q in r.clone() {
            let mut row = visible.clone();
            let end = if el.role.modality() == Modality::Text { q + 1 } else { r.end };
            push_interval(&mut row, r.start, end);
            rows.push(row);
        }
        if el.role != Role::NoisyVid {
            push_interval(&mut visible, r.start, r.end);
        }
    }
    Ok(CompiledMask { rows })
}

/// Dense pairwise evaluation of the visibility rules.
pub fn oracle_mask(layout: &LayoutDescriptor) -> Vec<Vec<bool>> {
    let t = &layout.tokens;
    let mut m = vec![vec![false; t.len()]; t.len()];
    for (q, tq) in t.iter().enumerate() {
        for (k, tk) in t.iter().enumerate() {
            m[q][k] = if tk.element_index > tq.element_index {
                false
            } else if tk.element_index == tq.element_index {
                tq.modality == Modality::Video || k <= q
            } else {
                tk.role != Role::NoisyVid
            };
        }
    }
    m
}

/// Render a dense mask as a plain PBM (`P1`) image, one row per query.
pub fn mask_to_pbm(mask: &[Vec<bool>]) -> String {
    let n = mask.len();
    let mut s = format!("P1\n{n} {n}\n");
    for row in mask {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        writeln!(s, "{}", line.join(" ")).expect("write to string");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionAssignment {
    /// Global 1-D rotary position per token.
    pub rope_ids: Vec<u32>,
    /// `(row, col)` on the chunk's patch grid, video tokens only.
    pub spatial_ids: Vec<Option<(u32, u32)>>,
}

/// Rotary ids advance by one per token; a clean chunk that directly follows
/// its noisy twin reuses the twin's ids. Spatial ids walk the square patch
/// grid of each chunk in row-major order.
pub fn assign_positions(layout: &LayoutDescriptor) -> Result<PositionAssignment> {
    let elements = layout.elements()?;
    let mut rope_ids = Vec::with_capacity(layout.len());
    let mut spatial_ids = Vec::with_capacity(layout.len());
    let mut next = 0u32;
    let mut twin_base: Option<(usize, u32)> = None;
    for el in &elements {
        let n = el.range.len();
        let base = match (el.role, twin_base) {
            (Role::CleanVid, Some((chunk, base))) if el.chunk_index == Some(chunk) => base,
            _ => {
                let b = next;
                next += n as u32;
                b
            }
        };
        twin_base = match el.role {
            Role::NoisyVid => Some((el.chunk_index.unwrap_or_default(), base)),
            _ => None,
        };
        let side = (n as f64).sqrt().ceil().max(1.0) as u32;
        for j in 0..n as u32 {
            rope_ids.push(base + j);
            spatial_ids.push((el.role.modality() == Modality::Video).then_some((j / side, j % side)));
        }
    }
    Ok(PositionAssignment { rope_ids, spatial_ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_noisy_clean() -> LayoutDescriptor {
        let mut l = LayoutDescriptor::default();
        l.push_text(&[Role::PlainText]);
        l.push_chunk(Role::NoisyVid, 1, 2);
        l.push_chunk(Role::CleanVid, 1, 2);
        l
    }

    #[test]
    fn clean_twin_does_not_see_noisy() {
        let m = build_mask(&text_noisy_clean()).unwrap();
        assert_eq!(m.rows[3], vec![(0, 1), (3, 5)]);
        assert_eq!(m.rows[1], vec![(0, 3)]);
        assert_eq!(m.to_dense(), oracle_mask(&text_noisy_clean()));
    }

    #[test]
    fn text_only_is_causal() {
        let mut l = LayoutDescriptor::default();
        l.push_text(&[Role::PlainText, Role::PlainText, Role::Bof]);
        l.push_text(&[Role::Eos]);
        let d = build_mask(&l).unwrap().to_dense();
        for (q, row) in d.iter().enumerate() {
            for (k, &b) in row.iter().enumerate() {
                assert_eq!(b, k <= q);
            }
        }
        assert_eq!(assign_positions(&l).unwrap().rope_ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_and_lone_chunk() {
        assert!(build_mask(&LayoutDescriptor::default()).unwrap().is_empty());
        let mut l = LayoutDescriptor::default();
        l.push_chunk(Role::CleanVid, 0, 4);
        assert!(build_mask(&l).unwrap().to_dense().iter().flatten().all(|&b| b));
    }

    #[test]
    fn missing_twin_is_rejected() {
        let mut l = LayoutDescriptor::default();
        l.push_chunk(Role::NoisyVid, 1, 2);
        l.push_text(&[Role::Eof]);
        assert!(matches!(build_mask(&l), Err(Error::Layout(_))));
        let mut l = LayoutDescriptor::default();
        l.push_chunk(Role::NoisyVid, 1, 2);
        l.push_chunk(Role::CleanVid, 2, 2);
        assert!(build_mask(&l).is_err());
        // a trailing noisy chunk is the inference-time query shape
        let mut l = LayoutDescriptor::default();
        l.push_text(&[Role::Bof]);
        l.push_chunk(Role::NoisyVid, 1, 2);
        assert!(build_mask(&l).is_ok());
    }

    #[test]
    fn twins_share_rope_ids() {
        let mut l = text_noisy_clean();
        l.push_text(&[Role::Eof]);
        l.push_chunk(Role::NoisyVid, 2, 4);
        l.push_chunk(Role::CleanVid, 2, 4);
        let p = assign_positions(&l).unwrap();
        assert_eq!(p.rope_ids, vec![0, 1, 2, 1, 2, 3, 4, 5, 6, 7, 4, 5, 6, 7]);
        assert_eq!(p.spatial_ids[6], Some((0, 0)));
        assert_eq!(p.spatial_ids[9], Some((1, 1)));
        assert_eq!(p.spatial_ids[0], None);
    }

    #[test]
    fn pbm_dump() {
        let d = build_mask(&text_noisy_clean()).unwrap().to_dense();
        let pbm = mask_to_pbm(&d);
        assert!(pbm.starts_with("P1\n5 5\n1 0 0 0 0\n1 1 1 0 0\n"));
    }
}
