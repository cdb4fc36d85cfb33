use tv2tv::masking::{LayoutDescriptor, Modality, Role};

/// Visibility written out pair by pair, independently of the library.
pub fn reference(layout: &LayoutDescriptor) -> Vec<Vec<bool>> {
    let t = &layout.tokens;
    (0..t.len())
        .map(|q| {
            (0..t.len())
                .map(|k| {
                    let (eq, ek) = (t[q].element_index, t[k].element_index);
                    if ek > eq {
                        false // nothing sees a later element
                    } else if ek == eq {
                        t[q].modality == Modality::Video || k <= q // video: bidirectional; text: causal
                    } else {
                        t[k].role != Role::NoisyVid // noisy keys are private to their chunk
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Item {
    Text(usize),
    Pair,
    Clean,
    TrailingNoisy,
}

fn build(items: &[Item], chunk_len: usize) -> LayoutDescriptor {
    let mut l = LayoutDescriptor::default();
    let mut chunk = 0;
    for it in items {
        match *it {
            Item::Text(n) => {
                let roles: Vec<Role> = (0..n).map(|i| [Role::PlainText, Role::Bof, Role::Eof][i % 3]).collect();
                l.push_text(&roles);
            }
            Item::Pair => {
                chunk += 1;
                l.push_chunk(Role::NoisyVid, chunk, chunk_len);
                l.push_chunk(Role::CleanVid, chunk, chunk_len);
            }
            Item::Clean => {
                chunk += 1;
                l.push_chunk(Role::CleanVid, chunk, chunk_len);
            }
            Item::TrailingNoisy => {
                chunk += 1;
                l.push_chunk(Role::NoisyVid, chunk, chunk_len);
            }
        }
    }
    l
}

/// Every ordering of up to 3 text segments (1 or 2 tokens) and up to 3
/// chunks (twin pair or lone clean), optionally ending in an unpaired
/// noisy chunk.
pub fn small_family() -> Vec<LayoutDescriptor> {
    fn rec(prefix: &mut Vec<Item>, texts: usize, chunks: usize, out: &mut Vec<Vec<Item>>) {
        out.push(prefix.clone());
        if chunks < 3 {
            let mut p = prefix.clone();
            p.push(Item::TrailingNoisy);
            out.push(p);
        }
        if texts < 3 {
            for n in [1, 2] {
                prefix.push(Item::Text(n));
                rec(prefix, texts + 1, chunks, out);
                prefix.pop();
            }
        }
        if chunks < 3 {
            for c in [Item::Pair, Item::Clean] {
                prefix.push(c);
                rec(prefix, texts, chunks + 1, out);
                prefix.pop();
            }
        }
    }
    let mut seqs = Vec::new();
    rec(&mut Vec::new(), 0, 0, &mut seqs);
    seqs.iter().flat_map(|s| [1, 3].map(|n| build(s, n))).collect()
}
