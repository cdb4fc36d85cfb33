//! Pixel oracle and controllability experiments.
//!
//! Every controllability number is measured against a matched-seed
//! control: a rollout is played to a chunk boundary, then forked; one copy
//! receives the intervention, the other continues untouched. Both copies
//! share all sampling randomness, so the control's hit rate is the base
//! rate at which the model would have done the requested thing anyway.

mod oracle;
mod report;

pub use oracle::{detect_action, locate_sprite, satisfies, sprite_found_rate, COLOR_TOLERANCE};
pub use report::{bar_chart_svg, table};

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{Error, Result};
use crate::inference::{Engine, Event, GenConfig, Session, Status};
use crate::sequence::Variant;
use crate::toyworld::{gen_episode, ActionString, Frame, Policy, WorldConfig};

/// Episode seeds for evaluation start states; disjoint from the training
/// corpus seeds.
pub const EVAL_SEED_BASE: u64 = 1 << 32;

/// The five requests of the intervention grammar.
pub const DEFAULT_INTERVENTIONS: [&str; 5] = ["(left).", "(right).", "(up).", "(down).", "(stay). jump."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionEvalConfig {
    pub rollouts: usize,
    /// Chunks generated before the fork.
    pub fork_after: usize,
    pub interventions: Vec<String>,
    /// First start-state index (episode seed `EVAL_SEED_BASE + index`).
    pub first_state: u64,
    pub gen: GenConfig,
}

impl Default for InterventionEvalConfig {
    fn default() -> Self {
        InterventionEvalConfig {
            rollouts: 100,
            fork_after: 2,
            interventions: DEFAULT_INTERVENTIONS.iter().map(|s| s.to_string()).collect(),
            first_state: 0,
            gen: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub intervention: String,
    pub n: usize,
    /// Intervened rollouts whose next chunk satisfies the request.
    pub accuracy: f64,
    /// Intervened rollouts whose next chunk is exactly the requested action.
    pub exact_accuracy: f64,
    /// Matched no-op controls that satisfy the request anyway.
    pub base_rate: f64,
    pub base_exact_rate: f64,
    /// Intervened rollouts where the oracle could read an action at all.
    pub detected_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub variant: Variant,
    pub rollouts: usize,
    pub fork_after: usize,
    pub per_action: Vec<ActionResult>,
    pub accuracy: f64,
    pub exact_accuracy: f64,
    pub base_rate: f64,
    /// `accuracy / base_rate` (infinite when the base rate is zero).
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_inf")]
    pub lift: f64,
    /// Controls whose next chunk the oracle could read.
    pub control_detected_rate: f64,
    /// Frames of all controls in which exactly one sprite is visible.
    pub sprite_found_rate: f64,
}

fn finite_or_null<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Start state `i` of the evaluation set: meta prompt and first frame.
pub fn eval_start(i: u64) -> Result<(String, Frame)> {
    let ep = gen_episode(EVAL_SEED_BASE + i, 1, Policy::Random)?;
    Ok((ep.meta_prompt, ep.frames[0].clone()))
}

/// Step until `n` chunks exist and the session sits on the boundary right
/// after the last one. `false` if the session ended first.
pub fn advance_to_chunks(s: &mut Session, n: usize) -> Result<bool> {
    if n == 0 {
        return Ok(true);
    }
    while s.status() != Status::Done {
        if let Event::Chunk { .. } = s.step()? {
            if s.chunks_generated() == n {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Action read from chunk `k` (1-based, global) of a session without
/// window extensions.
pub fn chunk_action(s: &Session, k: usize, world: &WorldConfig) -> Option<ActionString> {
    let f = s.frames();
    if k == 0 || f.len() < 1 + 4 * k {
        return None;
    }
    detect_action(&f[4 * (k - 1)], &f[1 + 4 * (k - 1)..1 + 4 * k], world)
}

pub fn intervention_eval(engine: &Engine, cfg: &InterventionEvalConfig) -> Result<InterventionReport> {
    let requests: Vec<ActionString> = cfg.interventions.iter().map(|s| ActionString::parse(s)).collect::<Result<_>>()?;
    if cfg.rollouts == 0 || requests.is_empty() {
        return Err(Error::Config("need at least one rollout and one intervention".into()));
    }
    let world = WorldConfig::default();
    let k = cfg.fork_after;
    let gen = GenConfig {
        max_chunks: k + 1,
        auto_extend: false,
        window_chunks: cfg.gen.window_chunks.max(k + 1),
        ..cfg.gen
    };
    let n_req = requests.len();
    let mut hits = vec![[0usize; 5]; n_req]; // satisfied, exact, base, base exact, detected
    let mut control_detected = 0;
    let mut found = (0usize, 0usize);

    for r in 0..cfg.rollouts {
        let (prompt, frame) = eval_start(cfg.first_state + r as u64)?;
        let mut s = engine.start(
            &prompt,
            Some(&frame),
            GenConfig {
                seed: gen.seed.wrapping_add(r as u64),
                ..gen
            },
        )?;
        if !advance_to_chunks(&mut s, k)? {
            continue;
        }
        let mut control = s.clone();
        advance_to_chunks(&mut control, k + 1)?;
        let base = chunk_action(&control, k + 1, &world);
        control_detected += usize::from(base.is_some());
        let frames = &control.frames()[1..];
        found.0 += frames.iter().filter(|f| locate_sprite(f, &world).is_some()).count();
        found.1 += frames.len();

        for (i, (req, text)) in requests.iter().zip(&cfg.interventions).enumerate() {
            let mut fork = s.clone();
            fork.intervene(text)?;
            advance_to_chunks(&mut fork, k + 1)?;
            let got = chunk_action(&fork, k + 1, &world);
            let h = &mut hits[i];
            h[0] += usize::from(got.is_some_and(|g| satisfies(req, &g)));
            h[1] += usize::from(got == Some(*req));
            h[2] += usize::from(base.is_some_and(|b| satisfies(req, &b)));
            h[3] += usize::from(base == Some(*req));
            h[4] += usize::from(got.is_some());
        }
        if (r + 1) % 10 == 0 {
            info!(rollout = r + 1, of = cfg.rollouts, "intervention eval");
        }
    }

    let n = cfg.rollouts as f64;
    let per_action: Vec<ActionResult> = cfg
        .interventions
        .iter()
        .zip(&hits)
        .map(|(text, h)| ActionResult {
            intervention: text.clone(),
            n: cfg.rollouts,
            accuracy: h[0] as f64 / n,
            exact_accuracy: h[1] as f64 / n,
            base_rate: h[2] as f64 / n,
            base_exact_rate: h[3] as f64 / n,
            detected_rate: h[4] as f64 / n,
        })
        .collect();
    let mean = |f: fn(&ActionResult) -> f64| per_action.iter().map(f).sum::<f64>() / n_req as f64;
    let (accuracy, base_rate) = (mean(|a| a.accuracy), mean(|a| a.base_rate));
    Ok(InterventionReport {
        variant: engine.variant,
        rollouts: cfg.rollouts,
        fork_after: k,
        exact_accuracy: mean(|a| a.exact_accuracy),
        lift: if base_rate > 0.0 { accuracy / base_rate } else { f64::INFINITY },
        accuracy,
        base_rate,
        per_action,
        control_detected_rate: control_detected as f64 / n,
        sprite_found_rate: if found.1 == 0 { 0.0 } else { found.0 as f64 / found.1 as f64 },
    })
}

impl InterventionReport {
    pub fn table(&self) -> String {
        let pct = |x: f64| format!("{:.1}%", 100.0 * x);
        let mut rows: Vec<Vec<String>> = self
            .per_action
            .iter()
            .map(|a| {
                vec![
                    a.intervention.clone(),
                    pct(a.accuracy),
                    pct(a.exact_accuracy),
                    pct(a.base_rate),
                    pct(a.detected_rate),
                ]
            })
            .collect();
        rows.push(vec![
            "all".into(),
            pct(self.accuracy),
            pct(self.exact_accuracy),
            pct(self.base_rate),
            String::new(),
        ]);
        format!(
            "{} intervention eval: {} rollouts, fork after chunk {}, lift {:.2}×, sprite found {}\n{}",
            self.variant.name(),
            self.rollouts,
            self.fork_after,
            self.lift,
            pct(self.sprite_found_rate),
            table(&["intervention", "accuracy", "exact", "no-op base", "readable"], &rows)
        )
    }

    pub fn svg(&self) -> String {
        let groups: Vec<(String, Vec<f64>)> = self
            .per_action
            .iter()
            .map(|a| (a.intervention.clone(), vec![a.accuracy, a.base_rate]))
            .collect();
        bar_chart_svg(
            &format!("{}: intervention accuracy vs matched no-op", self.variant.name()),
            &["intervened", "no-op control"],
            &groups,
        )
    }
}

/// Side-by-side summary of several checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variants: Vec<InterventionReport>,
}

impl VariantReport {
    pub fn table(&self) -> String {
        let pct = |x: f64| format!("{:.1}%", 100.0 * x);
        let rows: Vec<Vec<String>> = self
            .variants
            .iter()
            .map(|r| {
                vec![
                    r.variant.name().into(),
                    pct(r.accuracy),
                    pct(r.exact_accuracy),
                    pct(r.base_rate),
                    format!("{:.2}×", r.lift),
                    pct(r.sprite_found_rate),
                ]
            })
            .collect();
        table(&["variant", "accuracy", "exact", "no-op base", "lift", "sprite found"], &rows)
    }

    pub fn svg(&self) -> String {
        let groups: Vec<(String, Vec<f64>)> = self
            .variants
            .iter()
            .map(|r| (r.variant.name().to_string(), vec![r.accuracy, r.base_rate, r.sprite_found_rate]))
            .collect();
        bar_chart_svg(
            "intervention accuracy by sequence variant",
            &["intervened", "no-op control", "sprite found"],
            &groups,
        )
    }
}

pub fn variant_eval(engines: &[Engine], cfg: &InterventionEvalConfig) -> Result<VariantReport> {
    let variants = engines.iter().map(|e| intervention_eval(e, cfg)).collect::<Result<_>>()?;
    Ok(VariantReport { variants })
}

/// Sprite-found rate over a long rollout that slides its window.
pub fn long_rollout_sprite_rate(engine: &Engine, start: u64, windows: usize, gen: GenConfig) -> Result<(f64, usize, bool)> {
    let w = gen.window_chunks;
    let keep = w.div_ceil(2);
    let total = w + windows.saturating_sub(1) * (w - keep);
    let (prompt, frame) = eval_start(start)?;
    let mut s = engine.start(
        &prompt,
        Some(&frame),
        GenConfig {
            auto_extend: true,
            max_chunks: total,
            max_elements: usize::MAX,
            ..gen
        },
    )?;
    let mut finite = true;
    while s.status() != Status::Done {
        if let Event::Chunk { latent, .. } = s.step()? {
            finite &= latent.is_finite();
        }
    }
    let world = WorldConfig::default();
    Ok((sprite_found_rate(&s.frames()[1..], &world), s.chunks_generated(), finite))
}
