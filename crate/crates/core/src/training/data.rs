use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{LatentChunk, LatentCodec, Vocab};
use crate::error::{Error, Result};
use crate::model::SeqInput;
use crate::sequence::{assemble_encoded, encode_episode, InterleavedSequence, NoiseConfig, Variant};
use crate::toyworld::{list_episode_dirs, Episode};

/// Randomness for optimizer step `step`: independent of everything that
/// happened before it, so a resumed run sees the same batches.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Produces the training sequences for a given step.
pub trait BatchSource: Send + Sync {
    fn batch(&self, step: usize) -> Result<Vec<InterleavedSequence>>;
}

/// Episodes drawn uniformly with replacement, each assembled with fresh
/// noise levels, noise and dropout.
pub struct EpisodeSource {
    episodes: Vec<(Episode, Vec<LatentChunk>)>,
    vocab: Vocab,
    pub variant: Variant,
    pub noise: NoiseConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl EpisodeSource {
    pub fn new(episodes: Vec<Episode>, codec: &LatentCodec, variant: Variant, noise: NoiseConfig, batch_size: usize, seed: u64) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Config("no training episodes".into()));
        }
        noise.validate()?;
        let episodes = episodes
            .into_iter()
            .map(|ep| {
                let lat = encode_episode(&ep, codec)?;
                Ok((ep, lat))
            })
            .collect::<Result<_>>()?;
        Ok(EpisodeSource {
            episodes,
            vocab: Vocab::default(),
            variant,
            noise,
            batch_size,
            seed,
        })
    }

    /// Load every episode directory under `dir`.
    pub fn load(dir: &Path, codec: &LatentCodec, variant: Variant, noise: NoiseConfig, batch_size: usize, seed: u64) -> Result<Self> {
        let eps = list_episode_dirs(dir)?.iter().map(|d| Episode::load(d)).collect::<Result<Vec<_>>>()?;
        if eps.is_empty() {
            return Err(Error::format(dir, "contains no episodes"));
        }
        Self::new(eps, codec, variant, noise, batch_size, seed)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

impl BatchSource for EpisodeSource {
    fn batch(&self, step: usize) -> Result<Vec<InterleavedSequence>> {
        let mut rng = step_rng(self.seed, step);
        (0..self.batch_size)
            .map(|_| {
                let (ep, lat) = &self.episodes[rng.gen_range(0..self.episodes.len())];
                assemble_encoded(ep, lat, self.variant, &self.vocab, &mut rng, &self.noise)
            })
            .collect()
    }
}

/// The same sequences at every step (memorisation runs).
pub struct FixedSource(pub Vec<InterleavedSequence>);

impl BatchSource for FixedSource {
    fn batch(&self, _step: usize) -> Result<Vec<InterleavedSequence>> {
        Ok(self.0.clone())
    }
}

/// A batch with its model inputs already built.
pub struct Prepared {
    pub step: usize,
    pub seqs: Vec<InterleavedSequence>,
    pub inputs: Vec<SeqInput>,
}

pub fn prepare(source: &dyn BatchSource, step: usize) -> Result<Prepared> {
    let seqs = source.batch(step)?;
    let inputs = seqs.iter().map(SeqInput::from_sequence).collect::<Result<_>>()?;
    Ok(Prepared { step, seqs, inputs })
}

/// Run `consume` over steps `start..end` while a background thread
/// assembles up to `depth` batches ahead.
pub fn prefetch<T>(source: Arc<dyn BatchSource>, start: usize, end: usize, depth: usize, mut consume: impl FnMut(Prepared) -> Result<T>) -> Result<Vec<T>> {
    if depth == 0 {
        return (start..end).map(|s| consume(prepare(source.as_ref(), s)?)).collect();
    }
    let (tx, rx) = std::sync::mpsc::sync_channel::<Result<Prepared>>(depth);
    std::thread::scope(|scope| {
        scope.spawn(move || {
            for s in start..end {
                if tx.send(prepare(source.as_ref(), s)).is_err() {
                    break;
                }
            }
        });
        let mut out = Vec::with_capacity(end - start);
        let mut run = || {
            for item in rx.iter() {
                out.push(consume(item?)?);
            }
            Ok(())
        };
        let res = run();
        // closing the channel unblocks and stops the producer before the join
        drop(rx);
        res.map(|()| out)
    })
}
