//! The mode-switching generator.
//!
//! A [`Session`] samples text one token at a time from the conditional
//! stream. A sampled BOF switches to video: a chunk is denoised from
//! Gaussian noise with an Euler ODE solver (optionally guided by a
//! text-free stream), committed with a deterministic EOF, and decoded to
//! frames. Both streams are KV-cached; only text and clean chunks are ever
//! cached. User interventions are queued and enter the conditional stream
//! as plan text at the next chunk boundary.

mod sample;
mod stream;

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use sample::{euler_integrate, guide, sample_token, UNSAMPLED};

use self::stream::{full_logits, full_velocity, Piece, Stream};
use crate::codec::{checksum_f32, ChunkKind, ChunkSpan, LatentChunk, LatentCodec, Vocab, BOF, EOS};
use crate::error::{Error, Result};
use crate::masking::Modality;
use crate::model::{load_checkpoint, Params};
use crate::sequence::{gaussian, CleanChunk, Element, InterleavedSequence, Marker, SegmentRole, TextSegment, Variant};
use crate::toyworld::{chunk_timestamp, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub temperature: f64,
    pub ode_steps: usize,
    pub cfg_scale: f64,
    /// Budget of committed elements (each text token and each chunk counts one).
    pub max_elements: usize,
    pub seed: u64,
    /// Chunks per context window (the trained episode length).
    pub window_chunks: usize,
    /// Stop after this many generated chunks in total (`0`: no limit).
    pub max_chunks: usize,
    /// Slide the window instead of stopping when it fills up.
    pub auto_extend: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            temperature: 0.7,
            ode_steps: 50,
            cfg_scale: 1.0,
            max_elements: 512,
            seed: 0,
            window_chunks: 4,
            max_chunks: 0,
            auto_extend: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ode_steps == 0 {
            return Err(Error::Config("ode_steps must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be a finite value ≥ 0".into()));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::Config("cfg_scale must be finite".into()));
        }
        if self.window_chunks == 0 {
            return Err(Error::Config("window_chunks must be positive".into()));
        }
        Ok(())
    }
}

/// Weights, codec and vocabulary shared by any number of sessions.
#[derive(Clone)]
pub struct Engine {
    pub params: Arc<Params<f32>>,
    pub codec: Arc<LatentCodec>,
    pub vocab: Arc<Vocab>,
    /// Sequence variant the weights were trained on.
    pub variant: Variant,
}

impl Engine {
    pub fn new(params: Params<f32>, variant: Variant) -> Result<Engine> {
        let codec = LatentCodec::shared_default();
        let c = &params.cfg;
        if c.d_latent != codec.dim() || c.tokens_per_chunk != codec.tokens() {
            return Err(Error::Config(format!(
                "model expects {}×{} latents, codec produces {}×{}",
                c.tokens_per_chunk,
                c.d_latent,
                codec.tokens(),
                codec.dim()
            )));
        }
        let vocab = Vocab::default();
        if c.vocab_size != vocab.size() {
            return Err(Error::Config(format!("model vocabulary {} ≠ tokenizer {}", c.vocab_size, vocab.size())));
        }
        Ok(Engine {
            params: Arc::new(params),
            codec,
            vocab: Arc::new(vocab),
            variant,
        })
    }

    /// Load weights; the variant comes from the checkpoint metadata.
    pub fn load(path: &Path) -> Result<Engine> {
        let ck = load_checkpoint::<f32>(path)?;
        let variant = match ck.meta.get("variant") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::format(path, format!("variant: {e}")))?,
            None => Variant::Tv2tv,
        };
        Engine::new(ck.params, variant)
    }

    pub fn start(&self, prompt: &str, cond_frame: Option<&Frame>, cfg: GenConfig) -> Result<Session> {
        Session::start(self.clone(), prompt, cond_frame, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Model,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Text,
    Chunk,
}

/// One line of the exported transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(rename = "type")]
    pub kind: EntryKind,
    pub timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_checksums: Option<Vec<String>>,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Eos,
    MaxElements,
    MaxChunks,
    WindowFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    TextMode,
    Done,
}

#[derive(Debug, Clone)]
pub enum Event {
    /// A sampled token, or a whole user intervention.
    Text {
        token_ids: Vec<u32>,
        text: String,
        timestamp_s: f64,
        source: Source,
    },
    /// A committed chunk; `source` is `User` for a conditioning frame.
    Chunk {
        chunk_index: usize,
        timestamp_s: f64,
        frames: Vec<Frame>,
        latent: LatentChunk,
        source: Source,
    },
    Done {
        reason: DoneReason,
    },
}

#[derive(Debug, Clone)]
struct Pending {
    at_s: Option<f64>,
    text: String,
    ids: Vec<u32>,
}

/// Which stream a traced velocity came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Cond,
    Uncond,
}

/// Cached model outputs recorded for later no-cache verification.
#[derive(Debug, Clone)]
pub enum TraceRecord {
    Logits {
        stream_len: usize,
        logits: Vec<f32>,
    },
    Velocity {
        branch: Branch,
        prefix_len: usize,
        chunk_index: usize,
        t: f32,
        x: Vec<f32>,
        v: Vec<f32>,
    },
}

/// Largest disagreement between cached outputs and full recomputation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ReplayReport {
    pub n_logits: usize,
    pub n_velocities: usize,
    pub max_logit_diff: f64,
    pub max_velocity_diff: f64,
}

/// A live generation. Single-owner: mutate it from one thread at a time.
#[derive(Clone)]
pub struct Session {
    engine: Engine,
    pub cfg: GenConfig,
    history: InterleavedSequence,
    cond: Stream,
    uncond: Stream,
    pending: VecDeque<Pending>,
    status: Status,
    finish: Option<DoneReason>,
    transcript: Vec<TranscriptEntry>,
    text_rng: ChaCha8Rng,
    boundaries: u64,
    /// Chunks generated in the current window.
    local_chunks: usize,
    /// Chunks dropped by window extensions.
    base: usize,
    at_boundary: bool,
    /// Think2V: conditioning frame held back until the plans are written.
    deferred: Option<LatentChunk>,
    /// The model's last sampled token continues a text segment.
    open_text: bool,
    elements: usize,
    frames: Vec<Frame>,
    trace: Option<Vec<TraceRecord>>,
}

const NOISE_STREAM: u64 = 1 << 40;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Session {
    pub fn start(engine: Engine, prompt: &str, cond_frame: Option<&Frame>, cfg: GenConfig) -> Result<Session> {
        cfg.validate()?;
        let meta = engine.vocab.encode(prompt)?;
        let mut elements = vec![Element::marker(Marker::Bos, 0.0)];
        let mut transcript = Vec::new();
        if !meta.is_empty() {
            elements.push(Element::Text(TextSegment {
                token_ids: meta,
                timestamp_s: 0.0,
                role: SegmentRole::MetaPrompt,
            }));
            transcript.push(TranscriptEntry {
                kind: EntryKind::Text,
                timestamp_s: 0.0,
                text: Some(prompt.to_string()),
                frame_checksums: None,
                source: Source::User,
            });
        }
        let mut deferred = None;
        let mut frames = Vec::new();
        if let Some(f) = cond_frame {
            let c0 = engine.codec.encode_chunk(std::slice::from_ref(f), 0)?;
            frames.push(f.clone());
            if engine.variant == Variant::Think2v {
                deferred = Some(c0);
            } else {
                transcript.push(chunk_entry(0.0, std::slice::from_ref(f), Source::User));
                elements.extend(framed_chunk(c0, 0.0));
            }
        }
        let history = InterleavedSequence {
            elements,
            variant: engine.variant,
            n_latent_frames: 0,
        };
        let p = engine.params.clone();
        let mut s = Session {
            cond: Stream::new(&p),
            uncond: Stream::new(&p),
            engine,
            cfg,
            elements: 0,
            history,
            pending: VecDeque::new(),
            status: Status::TextMode,
            finish: None,
            transcript,
            text_rng: rng_for(cfg.seed, 0),
            boundaries: 0,
            local_chunks: 0,
            base: 0,
            at_boundary: true,
            deferred,
            open_text: false,
            frames,
            trace: None,
        };
        s.elements = s.count_elements();
        s.rebuild()?;
        Ok(s)
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn variant(&self) -> Variant {
        self.engine.variant
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// The conditional stream's elements.
    pub fn history(&self) -> &InterleavedSequence {
        &self.history
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// One JSON object per line.
    pub fn transcript_jsonl(&self) -> String {
        self.transcript
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    /// Every frame shown so far: the conditioning frame, then 4 per chunk.
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn element_count(&self) -> usize {
        self.elements
    }

    /// Chunks generated since the start, across windows.
    pub fn chunks_generated(&self) -> usize {
        self.base + self.local_chunks
    }

    /// Chunks currently in the context window (excluding the conditioning frame).
    pub fn window_len(&self) -> usize {
        self.local_chunks
    }

    pub fn pending_interventions(&self) -> usize {
        self.pending.len()
    }

    /// Record every cached output from now on (see [`Session::replay`]).
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn count_elements(&self) -> usize {
        self.history
            .elements
            .iter()
            .map(|e| match e {
                Element::Text(s) => s.token_ids.len(),
                _ => 1,
            })
            .sum::<usize>()
            + usize::from(self.deferred.is_some()) * 3
    }

    /// Recompute both streams (and their caches) from the history.
    fn rebuild(&mut self) -> Result<()> {
        let p = self.engine.params.clone();
        let all: Vec<Piece> = self.history.elements.iter().filter_map(Piece::of).collect();
        let markers: Vec<Piece> = self
            .history
            .elements
            .iter()
            .filter(|e| !matches!(e, Element::Text(_)))
            .filter_map(Piece::of)
            .collect();
        self.cond = Stream::new(&p);
        self.cond.commit(&p, &all)?;
        self.uncond = Stream::new(&p);
        self.uncond.commit(&p, &markers)?;
        if let Some(t) = &mut self.trace {
            t.clear();
        }
        Ok(())
    }

    /// Timestamp (within the window) of the chunk the model is heading for.
    fn local_ts(&self) -> f64 {
        if self.deferred.is_some() {
            0.0
        } else {
            chunk_timestamp(self.local_chunks + 1)
        }
    }

    fn global_ts(&self) -> f64 {
        if self.deferred.is_some() {
            0.0
        } else {
            chunk_timestamp(self.base + self.local_chunks + 1)
        }
    }

    /// When an intervention queued now would take effect.
    pub fn next_boundary_s(&self) -> f64 {
        if self.at_boundary || self.deferred.is_some() {
            chunk_timestamp(self.base + self.local_chunks + 1)
        } else {
            chunk_timestamp(self.base + self.local_chunks + 2)
        }
    }

    /// Queue user text for the next chunk boundary. Returns the timestamp
    /// it is expected to apply at; empty text is a no-op.
    pub fn intervene(&mut self, text: &str) -> Result<f64> {
        self.queue(None, text)
    }

    /// Queue user text for the first boundary at or after `at_s`.
    pub fn intervene_at(&mut self, at_s: f64, text: &str) -> Result<f64> {
        self.queue(Some(at_s), text)
    }

    fn queue(&mut self, at_s: Option<f64>, text: &str) -> Result<f64> {
        if self.status == Status::Done {
            return Err(Error::Session("session is done".into()));
        }
        let ids = self.engine.vocab.encode(text)?;
        let when = self.next_boundary_s().max(at_s.unwrap_or(0.0));
        if !ids.is_empty() {
            self.pending.push_back(Pending {
                at_s,
                text: text.to_string(),
                ids,
            });
        }
        Ok(when)
    }

    /// Advance by one event.
    pub fn step(&mut self) -> Result<Event> {
        if self.status == Status::Done {
            return Err(Error::Session("session is done".into()));
        }
        if let Some(reason) = self.finish.take() {
            return Ok(self.done(reason));
        }
        if self.at_boundary && self.deferred.is_none() {
            if let Some(ev) = self.apply_pending()? {
                return Ok(ev);
            }
        }
        if self.elements >= self.cfg.max_elements {
            return Ok(self.done(DoneReason::MaxElements));
        }
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord::Logits {
                stream_len: self.cond.len(),
                logits: self.cond.logits.clone(),
            });
        }
        let tok = sample_token(&self.cond.logits, self.cfg.temperature, &mut self.text_rng)?;
        match tok {
            EOS => {
                let ts = self.local_ts();
                let p = self.engine.params.clone();
                self.cond.commit(&p, &[Piece::Marker(Marker::Eos)])?;
                self.history.elements.push(Element::marker(Marker::Eos, ts));
                self.elements += 1;
                self.log_text("<eos>", Source::Model);
                Ok(self.done(DoneReason::Eos))
            }
            BOF => self.chunk_step(),
            _ => self.text_step(tok),
        }
    }

    /// Step until the session is done; returns every event.
    pub fn run_to_end(&mut self) -> Result<Vec<Event>> {
        let mut out = Vec::new();
        while self.status != Status::Done {
            out.push(self.step()?);
        }
        Ok(out)
    }

    fn done(&mut self, reason: DoneReason) -> Event {
        self.status = Status::Done;
        Event::Done { reason }
    }

    fn log_text(&mut self, text: &str, source: Source) {
        let ts = self.global_ts();
        self.transcript.push(TranscriptEntry {
            kind: EntryKind::Text,
            timestamp_s: ts,
            text: Some(text.to_string()),
            frame_checksums: None,
            source,
        });
    }

    fn text_step(&mut self, tok: u32) -> Result<Event> {
        let p = self.engine.params.clone();
        self.cond.commit(&p, &[Piece::Text(&[tok])])?;
        let ts = self.local_ts();
        match self.history.elements.last_mut() {
            Some(Element::Text(seg)) if self.open_text => seg.token_ids.push(tok),
            _ => self.history.elements.push(Element::Text(TextSegment {
                token_ids: vec![tok],
                timestamp_s: ts,
                role: SegmentRole::Plan,
            })),
        }
        self.open_text = true;
        self.at_boundary = false;
        self.elements += 1;
        let text = self.engine.vocab.symbol(tok).to_string();
        self.log_text(&text, Source::Model);
        Ok(Event::Text {
            token_ids: vec![tok],
            text,
            timestamp_s: self.global_ts(),
            source: Source::Model,
        })
    }

    fn reached_boundary(&mut self) {
        self.at_boundary = true;
        self.open_text = false;
        self.boundaries += 1;
        self.text_rng = rng_for(self.cfg.seed, self.boundaries);
    }

    fn chunk_step(&mut self) -> Result<Event> {
        let p = self.engine.params.clone();
        self.log_text("<bof>", Source::Model);
        if let Some(c0) = self.deferred.take() {
            let pieces = [Piece::Marker(Marker::Bof), Piece::Clean(&c0), Piece::Marker(Marker::Eof)];
            self.cond.commit(&p, &pieces)?;
            self.uncond.commit(&p, &pieces)?;
            let frames = vec![self.frames[0].clone()];
            self.transcript.push(chunk_entry(0.0, &frames, Source::User));
            self.history.elements.extend(framed_chunk(c0.clone(), 0.0));
            self.log_text("<eof>", Source::Model);
            self.reached_boundary();
            return Ok(Event::Chunk {
                chunk_index: 0,
                timestamp_s: 0.0,
                frames,
                latent: c0,
                source: Source::User,
            });
        }

        let local = self.local_chunks + 1;
        let global = self.base + local;
        let (ts, gts) = (chunk_timestamp(local), chunk_timestamp(global));
        self.cond.commit(&p, &[Piece::Marker(Marker::Bof)])?;
        self.uncond.commit(&p, &[Piece::Marker(Marker::Bof)])?;
        let latent = self.flow_generate_chunk(local, global)?;
        let tail = [Piece::Clean(&latent), Piece::Marker(Marker::Eof)];
        self.cond.commit(&p, &tail)?;
        self.uncond.commit(&p, &tail)?;
        let frames = self.engine.codec.decode_chunk(&latent)?;
        self.history.elements.push(Element::marker(Marker::Bof, ts));
        self.history.elements.extend(framed_chunk(latent.clone(), ts).into_iter().skip(1));
        self.frames.extend(frames.iter().cloned());
        self.transcript.push(chunk_entry(gts, &frames, Source::Model));
        self.transcript.push(TranscriptEntry {
            kind: EntryKind::Text,
            timestamp_s: gts,
            text: Some("<eof>".into()),
            frame_checksums: None,
            source: Source::Model,
        });
        self.local_chunks = local;
        self.elements += 3;
        self.reached_boundary();

        if self.cfg.max_chunks > 0 && global >= self.cfg.max_chunks {
            self.finish = Some(DoneReason::MaxChunks);
        } else if local >= self.cfg.window_chunks {
            if self.cfg.auto_extend && self.engine.variant != Variant::Think2v {
                self.extend_window()?;
            } else {
                self.finish = Some(DoneReason::WindowFull);
            }
        }
        Ok(Event::Chunk {
            chunk_index: global,
            timestamp_s: gts,
            frames,
            latent,
            source: Source::Model,
        })
    }

    /// Denoise one chunk against the current streams (BOF already committed).
    fn flow_generate_chunk(&mut self, local: usize, global: usize) -> Result<LatentChunk> {
        let p = self.engine.params.clone();
        let (n, dl) = (p.cfg.tokens_per_chunk, p.cfg.d_latent);
        let mut rng = rng_for(self.cfg.seed, NOISE_STREAM + global as u64);
        let x0 = gaussian(&mut rng, n * dl);
        let s = self.cfg.cfg_scale;
        let (cond, uncond) = (&self.cond, &self.uncond);
        let trace = &mut self.trace;
        let x = euler_integrate(x0, self.cfg.ode_steps, |x, t, _| {
            let t = t as f32;
            let vc = if s != 0.0 { Some(cond.velocity(&p, x, t, local)?) } else { None };
            let vu = if s != 1.0 { Some(uncond.velocity(&p, x, t, local)?) } else { None };
            if let Some(tr) = trace.as_mut() {
                for (branch, st, v) in [(Branch::Cond, cond, &vc), (Branch::Uncond, uncond, &vu)] {
                    if let Some(v) = v {
                        tr.push(TraceRecord::Velocity {
                            branch,
                            prefix_len: st.len(),
                            chunk_index: local,
                            t,
                            x: x.to_vec(),
                            v: v.clone(),
                        });
                    }
                }
            }
            Ok(guide(s, vc, vu))
        })
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("chunk {global}: {m}")),
            e => e,
        })?;
        Ok(LatentChunk {
            tokens: n,
            dim: dl,
            data: x,
            kind: ChunkKind::Clean,
            span: ChunkSpan::Group,
            chunk_index: local,
            t: 1.0,
        })
    }

    fn apply_pending(&mut self) -> Result<Option<Event>> {
        let ts = self.global_ts();
        let Some(i) = self.pending.iter().position(|q| q.at_s.map_or(true, |a| a <= ts + 1e-9)) else {
            return Ok(None);
        };
        let q = self.pending.remove(i).expect("index from position");
        if self.engine.variant == Variant::Think2v {
            self.splice_plan(&q.text)?;
        } else {
            let p = self.engine.params.clone();
            self.cond.commit(&p, &[Piece::Text(&q.ids)])?;
            self.history.elements.push(Element::Text(TextSegment {
                token_ids: q.ids.clone(),
                timestamp_s: self.local_ts(),
                role: SegmentRole::Plan,
            }));
            self.elements += q.ids.len();
        }
        self.open_text = false;
        self.log_text(&q.text, Source::User);
        Ok(Some(Event::Text {
            token_ids: q.ids,
            text: q.text,
            timestamp_s: ts,
            source: Source::User,
        }))
    }

    /// Think2V: replace the up-front plan of the next chunk with `text`,
    /// then recompute the streams.
    fn splice_plan(&mut self, text: &str) -> Result<()> {
        let els = &self.history.elements;
        let start = els
            .iter()
            .position(|e| matches!(e, Element::Text(s) if s.role == SegmentRole::Plan))
            .unwrap_or(els.len());
        let first_bof = els
            .iter()
            .position(|e| matches!(e, Element::Marker { marker: Marker::Bof, .. }))
            .unwrap_or(els.len());
        let start = start.min(first_bof);
        let ids: Vec<u32> = els[start..first_bof]
            .iter()
            .filter_map(|e| match e {
                Element::Text(s) => Some(s.token_ids.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        let written = self.engine.vocab.decode_plain(&ids);
        let mut plans: Vec<String> = Vec::new();
        let mut lead = String::new();
        for (i, part) in written.split('(').enumerate() {
            if i == 0 {
                lead = part.to_string();
            } else {
                plans.push(format!("({part}"));
            }
        }
        let k = self.local_chunks;
        if k < plans.len() {
            plans[k] = text.to_string();
        } else {
            plans.push(text.to_string());
        }
        let mut segs = Vec::new();
        for s in std::iter::once(&lead).chain(&plans).filter(|s| !s.is_empty()) {
            segs.push(Element::Text(TextSegment {
                token_ids: self.engine.vocab.encode(s)?,
                timestamp_s: 0.0,
                role: SegmentRole::Plan,
            }));
        }
        self.history.elements.splice(start..first_bof, segs);
        self.elements = self.count_elements();
        self.rebuild()
    }

    /// Keep the second half of the window (the last ⌈N/2⌉ chunks with
    /// their plan text) as the condition for the next window.
    pub fn extend_window(&mut self) -> Result<()> {
        if self.engine.variant == Variant::Think2v {
            return Err(Error::Session("think2v keeps its plans up front; the window cannot slide".into()));
        }
        let n = self.local_chunks;
        if n < 2 {
            return Err(Error::Session(format!("window extension needs at least 2 chunks, have {n}")));
        }
        let keep = n.div_ceil(2);
        let drop = n - keep;

        let mut head = Vec::new();
        let mut groups: Vec<(Vec<TextSegment>, LatentChunk)> = Vec::new();
        let mut texts = Vec::new();
        let mut seen_cond = false;
        for el in &self.history.elements {
            match el {
                Element::Marker { marker: Marker::Bos, .. } => {}
                Element::Text(s) if s.role == SegmentRole::MetaPrompt => head.push(el.clone()),
                Element::Text(s) => texts.push(s.clone()),
                Element::Clean(c) if c.latent.chunk_index == 0 && !seen_cond => seen_cond = true,
                Element::Clean(c) => groups.push((std::mem::take(&mut texts), c.latent.clone())),
                _ => {}
            }
        }
        if groups.len() != n {
            return Err(Error::Session(format!("history holds {} chunks, window says {n}", groups.len())));
        }
        let last = self.engine.codec.decode_chunk(&groups[drop - 1].1)?.pop().expect("a chunk has frames");
        let c0 = self.engine.codec.encode_chunk(std::slice::from_ref(&last), 0)?;

        let mut els = vec![Element::marker(Marker::Bos, 0.0)];
        els.extend(head);
        els.extend(framed_chunk(c0, 0.0));
        for (j, (segs, mut latent)) in groups.into_iter().skip(drop).enumerate() {
            let ts = chunk_timestamp(j + 1);
            latent.chunk_index = j + 1;
            for mut s in segs {
                s.timestamp_s = ts;
                els.push(Element::Text(s));
            }
            els.extend(framed_chunk(latent, ts));
        }
        for mut s in texts {
            s.timestamp_s = chunk_timestamp(keep + 1);
            els.push(Element::Text(s));
        }
        self.history.elements = els;
        self.base += drop;
        self.local_chunks = keep;
        if self.finish == Some(DoneReason::WindowFull) {
            self.finish = None;
        }
        self.elements = self.count_elements();
        self.rebuild()
    }

    /// Compare every traced cached output with a no-cache recomputation
    /// over the current streams.
    pub fn replay(&self) -> Result<ReplayReport> {
        let p = &self.engine.params;
        let mut rep = ReplayReport::default();
        let trace = self.trace();
        if trace.iter().any(|r| matches!(r, TraceRecord::Logits { .. })) {
            let full = full_logits(p, &self.cond.record)?;
            let text_pos: Vec<usize> = (0..self.cond.record.layout.len())
                .filter(|&i| self.cond.record.layout.tokens[i].modality == Modality::Text)
                .collect();
            for r in trace {
                if let TraceRecord::Logits { stream_len, logits } = r {
                    let row = text_pos
                        .iter()
                        .rposition(|&i| i < *stream_len)
                        .ok_or_else(|| Error::Session("trace precedes every text token".into()))?;
                    rep.max_logit_diff = rep.max_logit_diff.max(max_abs_diff(&full[row], logits));
                    rep.n_logits += 1;
                }
            }
        }
        for r in trace {
            if let TraceRecord::Velocity {
                branch,
                prefix_len,
                chunk_index,
                t,
                x,
                v,
            } = r
            {
                let rec = match branch {
                    Branch::Cond => &self.cond.record,
                    Branch::Uncond => &self.uncond.record,
                };
                let full = full_velocity(p, rec, *prefix_len, x, *t, *chunk_index)?;
                rep.max_velocity_diff = rep.max_velocity_diff.max(max_abs_diff(&full, v));
                rep.n_velocities += 1;
            }
        }
        Ok(rep)
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn framed_chunk(latent: LatentChunk, ts: f64) -> [Element; 3] {
    [
        Element::marker(Marker::Bof, ts),
        Element::Clean(CleanChunk {
            latent,
            flipped: false,
            timestamp_s: ts,
        }),
        Element::marker(Marker::Eof, ts),
    ]
}

fn chunk_entry(ts: f64, frames: &[Frame], source: Source) -> TranscriptEntry {
    TranscriptEntry {
        kind: EntryKind::Chunk,
        timestamp_s: ts,
        text: None,
        frame_checksums: Some(frames.iter().map(|f| checksum_f32(&f.data)).collect()),
        source,
    }
}
