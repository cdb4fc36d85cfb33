//! Joint optimisation of the text and flow-matching losses.
//!
//! A [`Trainer`] owns the weights and optimizer state; [`train`] drives it
//! over an episode directory with a background batch producer, periodic
//! checkpoints and a CSV metrics log. The sequence variant is the only
//! thing that distinguishes TV2TV, T2V and Think2V runs.

mod data;
mod optim;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use data::{prefetch, prepare, step_rng, BatchSource, EpisodeSource, FixedSource, Prepared};
pub use optim::AdamW;

use crate::codec::LatentCodec;
use crate::error::{Error, Result};
use crate::kernels::Float;
use crate::model::{backward, forward, load_checkpoint, loss, save_checkpoint, Batch, Checkpoint, ModelConfig, Params, SeqInput, TrainState};
use crate::sequence::{InterleavedSequence, NoiseConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    /// Fraction of `steps` spent in linear warmup before the cosine decay.
    pub warmup_frac: f64,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub variant: Variant,
    /// Save `step_XXXXXX.ckpt` every this many steps (`0`: final only).
    pub checkpoint_every: usize,
    /// Batches assembled ahead of the optimizer (`0`: inline).
    pub prefetch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 32,
            lr_max: 2e-3,
            warmup_frac: 0.02,
            seed: 0,
            noise: NoiseConfig::default(),
            variant: Variant::Tv2tv,
            checkpoint_every: 1000,
            prefetch: 2,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        if !(self.lr_max > 0.0) {
            return Err(Error::Config("lr_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must lie in [0, 1)".into()));
        }
        self.noise.validate()
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_frac * self.steps as f64).ceil() as usize).max(1)
    }

    /// Linear warmup from 0 to `lr_max`, then a half cosine reaching 0 at
    /// the last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            return self.lr_max * step as f64 / w as f64;
        }
        let span = (self.steps - 1).saturating_sub(w);
        let p = if span == 0 { 1.0 } else { ((step - w) as f64 / span as f64).min(1.0) };
        self.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub loss_txt: f64,
    pub loss_vid: f64,
    pub lr: f64,
    #[serde(skip)]
    pub grad_norm: f64,
}

pub const METRICS_HEADER: &str = "step,loss,loss_txt,loss_vid,lr";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.loss, self.loss_txt, self.loss_vid, self.lr)
    }
}

/// Parse a metrics CSV written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, "unexpected metrics header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| {
                f.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::format(path, format!("bad row {l:?}")))
            };
            Ok(StepMetrics {
                step: num(0)? as usize,
                loss: num(1)?,
                loss_txt: num(2)?,
                loss_vid: num(3)?,
                lr: num(4)?,
                grad_norm: f64::NAN,
            })
        })
        .collect()
}

/// Weights plus optimizer state, advanced one batch at a time.
pub struct Trainer<F: Float> {
    pub cfg: TrainConfig,
    pub params: Params<F>,
    pub opt: AdamW<F>,
    /// Completed optimizer steps.
    pub step: usize,
    /// Where to write the offending batch when the loss goes non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl<F: Float> Trainer<F> {
    pub fn new(model: &ModelConfig, cfg: TrainConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        let params = Params::init(model, cfg.seed);
        Ok(Self::with_params(params, cfg))
    }

    pub fn with_params(params: Params<F>, cfg: TrainConfig) -> Self {
        let opt = AdamW::new(&params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, cfg.grad_clip);
        Trainer {
            cfg,
            params,
            opt,
            step: 0,
            dump_dir: None,
        }
    }

    /// Continue from a checkpoint holding optimizer state.
    pub fn from_checkpoint(ck: Checkpoint<F>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let st = ck.train.ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        let mut t = Self::with_params(ck.params, cfg);
        if st.m.len() != t.params.len() || st.v.len() != t.params.len() {
            return Err(Error::Checkpoint("optimizer state does not match the weights".into()));
        }
        t.opt.m = st.m;
        t.opt.v = st.v;
        t.opt.t = st.step;
        t.step = st.step;
        Ok(t)
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint<F> {
        Checkpoint {
            params: self.params.clone(),
            train: Some(TrainState {
                step: self.step,
                m: self.opt.m.clone(),
                v: self.opt.v.clone(),
                config: serde_json::to_value(&self.cfg).expect("config serializes"),
            }),
            meta,
        }
    }

    /// One optimizer update on `seqs` at the scheduled learning rate.
    pub fn train_step(&mut self, seqs: &[InterleavedSequence]) -> Result<StepMetrics> {
        let inputs = seqs.iter().map(SeqInput::from_sequence).collect::<Result<Vec<_>>>()?;
        self.train_step_inputs(seqs, &inputs)
    }

    pub fn train_step_inputs(&mut self, seqs: &[InterleavedSequence], inputs: &[SeqInput]) -> Result<StepMetrics> {
        let refs: Vec<&SeqInput> = inputs.iter().collect();
        let batch = Batch::<F>::new(&self.params.cfg, &refs)?;
        let out = forward(&self.params, &batch, None)?;
        let (l, dl, dv) = loss(&self.params.cfg, &batch, &out);
        if !l.total.is_finite() {
            return Err(self.non_finite(seqs, &format!("loss {} (txt {}, vid {})", l.total, l.txt, l.vid)));
        }
        let grads = backward(&self.params, &batch, &out, &dl, &dv);
        let lr = self.cfg.lr_at(self.step);
        let grad_norm = self.opt.update(&mut self.params, &grads, lr);
        if !grad_norm.is_finite() {
            return Err(self.non_finite(seqs, &format!("gradient norm {grad_norm}")));
        }
        let m = StepMetrics {
            step: self.step,
            loss: l.total,
            loss_txt: l.txt,
            loss_vid: l.vid,
            lr,
            grad_norm,
        };
        self.step += 1;
        Ok(m)
    }

    fn non_finite(&self, seqs: &[InterleavedSequence], what: &str) -> Error {
        let mut msg = format!("step {}: {what}", self.step);
        if let Some(dir) = &self.dump_dir {
            let d = dir.join(format!("nonfinite_step_{:06}", self.step));
            let dumped = fs::create_dir_all(&d).map_err(|e| Error::io(&d, e)).and_then(|()| {
                seqs.iter()
                    .enumerate()
                    .try_for_each(|(i, s)| s.write_debug(&d.join(format!("seq_{i:03}.jsonl"))))
            });
            match dumped {
                Ok(()) => msg.push_str(&format!("; batch dumped to {}", d.display())),
                Err(e) => msg.push_str(&format!("; batch dump failed: {e}")),
            }
        }
        Error::NonFinite(msg)
    }
}

/// Files produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics: Vec<StepMetrics>,
}

fn run_meta(cfg: &TrainConfig, codec: &LatentCodec, data: &str) -> serde_json::Value {
    serde_json::json!({
        "variant": cfg.variant,
        "codec": codec.config(),
        "data": data,
        "train": cfg,
    })
}

/// Drive `trainer` to `cfg.steps`, checkpointing into `out_dir` and
/// appending to `out_dir/metrics.csv`.
pub fn run<F: Float>(trainer: &mut Trainer<F>, source: Arc<dyn BatchSource>, out_dir: &Path, meta: serde_json::Value) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    trainer.dump_dir.get_or_insert_with(|| out_dir.to_path_buf());
    let csv = out_dir.join("metrics.csv");
    let fresh = trainer.step == 0 || !csv.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&csv)
        .map_err(|e| Error::io(&csv, e))?;
    if fresh {
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(&csv, e))?;
    }
    let (start, end) = (trainer.step, trainer.cfg.steps);
    let every = trainer.cfg.checkpoint_every;
    let log_every = trainer.cfg.log_every.max(1);
    let depth = trainer.cfg.prefetch;
    let metrics = prefetch(source, start, end, depth, |prep| {
        debug_assert_eq!(prep.step, trainer.step);
        let m = trainer.train_step_inputs(&prep.seqs, &prep.inputs)?;
        writeln!(file, "{}", m.csv_row()).map_err(|e| Error::io(&csv, e))?;
        if m.step % log_every == 0 || m.step + 1 == end {
            tracing::info!(
                step = m.step,
                loss = m.loss,
                txt = m.loss_txt,
                vid = m.loss_vid,
                lr = m.lr,
                grad_norm = m.grad_norm,
                "train"
            );
        }
        if every > 0 && trainer.step % every == 0 && trainer.step < end {
            let p = out_dir.join(format!("step_{:06}.ckpt", trainer.step));
            save_checkpoint(&p, &trainer.checkpoint(meta.clone()))?;
        }
        Ok(m)
    })?;
    file.flush().map_err(|e| Error::io(&csv, e))?;
    let final_checkpoint = out_dir.join("final.ckpt");
    save_checkpoint(&final_checkpoint, &trainer.checkpoint(meta))?;
    Ok(TrainOutcome {
        final_checkpoint,
        metrics_csv: csv,
        metrics,
    })
}

/// Train from scratch on the episodes under `data_dir`.
pub fn train(model: &ModelConfig, cfg: &TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let codec = LatentCodec::shared_default();
    let source = EpisodeSource::load(data_dir, &codec, cfg.variant, cfg.noise, cfg.batch_size, cfg.seed)?;
    tracing::info!(episodes = source.len(), variant = %cfg.variant, steps = cfg.steps, "training");
    let mut trainer = Trainer::<f32>::new(model, cfg.clone())?;
    run(&mut trainer, Arc::new(source), out_dir, run_meta(cfg, &codec, &data_dir.display().to_string()))
}

/// Resume a run from `ckpt` with (possibly extended) `cfg`.
pub fn resume(ckpt: &Path, cfg: &TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let codec = LatentCodec::shared_default();
    let ck = load_checkpoint::<f32>(ckpt)?;
    let meta = ck.meta.clone();
    let source = EpisodeSource::load(data_dir, &codec, cfg.variant, cfg.noise, cfg.batch_size, cfg.seed)?;
    let mut trainer = Trainer::from_checkpoint(ck, cfg.clone())?;
    run(&mut trainer, Arc::new(source), out_dir, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            steps: 1000,
            lr_max: 3e-4,
            ..TrainConfig::default()
        };
        let w = cfg.warmup_steps();
        assert_eq!(w, 20);
        assert_eq!(cfg.lr_at(0), 0.0);
        assert!((cfg.lr_at(w) - 3e-4).abs() < 1e-15);
        assert!(cfg.lr_at(999) <= 0.01 * 3e-4);
        assert!((1..1000).all(|s| cfg.lr_at(s) <= 3e-4 + 1e-15));
        assert!((w..999).all(|s| cfg.lr_at(s + 1) <= cfg.lr_at(s)));
    }

    #[test]
    fn config_toml_roundtrip() {
        let cfg = TrainConfig {
            variant: Variant::Think2v,
            steps: 7,
            ..TrainConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<TrainConfig>("stepz = 3").is_err());
        assert!(TrainConfig { lr_max: 0.0, ..cfg }.validate().is_err());
    }
}
