use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tv2tv::config::RunConfig;
use tv2tv::eval::{intervention_eval, variant_eval, InterventionEvalConfig};
use tv2tv::inference::{Engine, GenConfig};
use tv2tv::sequence::Variant;
use tv2tv::service::{serve, BIND_ENV, DEFAULT_BIND};
use tv2tv::toyworld::{decode_png, gen_dataset, write_png, Policy};

/// Interleaved text/video generation on a toy sprite world.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a toy episode corpus.
    GenData {
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        chunks: usize,
        #[arg(long, value_enum, default_value_t = Policy::Random)]
        policy: Policy,
    },
    /// Train a model on a corpus.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out one session, optionally with timed interventions.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        /// 32×32 PNG used as the first frame.
        #[arg(long)]
        cond_frame: Option<PathBuf>,
        /// `t=SECONDS:TEXT` (or just `TEXT` for the first boundary); repeatable.
        #[arg(long)]
        intervene: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Controllability experiments.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Serve the session API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        /// Listen port (the host comes from the bind address).
        #[arg(long)]
        port: Option<u16>,
        /// Bind address; defaults to $TV2TV_BIND or 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Intervention accuracy against matched-seed no-op controls.
    Intervention {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// The same experiment over several checkpoints, side by side.
    Variants {
        /// One checkpoint per variant; repeat the flag.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Args)]
struct GenArgs {
    /// TOML run config; its `[generate]` section sets the defaults below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    ode_steps: Option<usize>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long)]
    max_elements: Option<usize>,
    #[arg(long)]
    max_chunks: Option<usize>,
    /// Slide the context window instead of stopping when it is full.
    #[arg(long)]
    auto_extend: bool,
}

impl GenArgs {
    fn resolve(&self) -> Result<GenConfig> {
        let mut g = match &self.config {
            Some(p) => RunConfig::load(p)?.generate,
            None => GenConfig::default(),
        };
        g.seed = self.seed.unwrap_or(g.seed);
        g.temperature = self.temperature.unwrap_or(g.temperature);
        g.ode_steps = self.ode_steps.unwrap_or(g.ode_steps);
        g.cfg_scale = self.cfg_scale.unwrap_or(g.cfg_scale);
        g.max_elements = self.max_elements.unwrap_or(g.max_elements);
        g.max_chunks = self.max_chunks.unwrap_or(g.max_chunks);
        g.auto_extend |= self.auto_extend;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    #[arg(long, default_value_t = 2)]
    fork_after: usize,
    #[command(flatten)]
    gen: GenArgs,
}

impl EvalArgs {
    fn config(&self) -> Result<InterventionEvalConfig> {
        Ok(InterventionEvalConfig {
            rollouts: self.rollouts,
            fork_after: self.fork_after,
            gen: self.gen.resolve()?,
            ..InterventionEvalConfig::default()
        })
    }
}

/// `t=1.5:(left).` → `(Some(1.5), "(left).")`.
fn parse_intervention(s: &str) -> Result<(Option<f64>, String)> {
    match s.strip_prefix("t=") {
        Some(rest) => {
            let (t, text) = rest.split_once(':').context("expected t=SECONDS:TEXT")?;
            let t: f64 = t.trim().parse().with_context(|| format!("bad time {t:?}"))?;
            if !(t >= 0.0) {
                bail!("intervention time must be ≥ 0");
            }
            Ok((Some(t), text.to_string()))
        }
        None => Ok((None, s.to_string())),
    }
}

fn write_reports(out: &Path, json: &impl serde::Serialize, table: &str, svg: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(json)?)?;
    std::fs::write(out.join("report.txt"), table)?;
    std::fs::write(out.join("report.svg"), svg)?;
    print!("{table}");
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            episodes,
            seed,
            out,
            chunks,
            policy,
        } => {
            let dirs = gen_dataset(&out, episodes, seed, chunks, policy)?;
            println!("wrote {} episodes to {}", dirs.len(), out.display());
        }
        Cmd::Train {
            config,
            variant,
            data,
            out,
            resume,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(v) = variant {
                cfg.train.variant = v;
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml())?;
            let outcome = match resume {
                Some(ck) => tv2tv::training::resume(&ck, &cfg.train, &data, &out)?,
                None => tv2tv::training::train(&cfg.model, &cfg.train, &data, &out)?,
            };
            if let Some(last) = outcome.metrics.last() {
                println!("step {} loss {:.4} (txt {:.4}, vid {:.4})", last.step, last.loss, last.loss_txt, last.loss_vid);
            }
            println!("checkpoint: {}", outcome.final_checkpoint.display());
        }
        Cmd::Generate {
            ckpt,
            prompt,
            cond_frame,
            intervene,
            out,
            gen,
        } => {
            let engine = Engine::load(&ckpt)?;
            let frame = match &cond_frame {
                Some(p) => Some(decode_png(&std::fs::read(p).with_context(|| p.display().to_string())?)?),
                None => None,
            };
            let mut s = engine.start(&prompt, frame.as_ref(), gen.resolve()?)?;
            for spec in &intervene {
                match parse_intervention(spec)? {
                    (Some(t), text) => s.intervene_at(t, &text)?,
                    (None, text) => s.intervene(&text)?,
                };
            }
            let events = s.run_to_end()?;
            let frames_dir = out.join("frames");
            std::fs::create_dir_all(&frames_dir)?;
            for (i, f) in s.frames().iter().enumerate() {
                write_png(&frames_dir.join(format!("frame_{i:04}.png")), f)?;
            }
            std::fs::write(out.join("transcript.jsonl"), s.transcript_jsonl())?;
            let reason = match events.last() {
                Some(tv2tv::inference::Event::Done { reason }) => serde_json::to_value(reason)?,
                _ => serde_json::Value::Null,
            };
            let summary = serde_json::json!({
                "variant": engine.variant,
                "chunks": s.chunks_generated(),
                "frames": s.frames().len(),
                "elements": s.element_count(),
                "done": reason,
                "config": s.cfg,
            });
            std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            println!("{} chunks, {} frames → {}", s.chunks_generated(), s.frames().len(), out.display());
        }
        Cmd::Eval(EvalCmd::Intervention { ckpt, eval }) => {
            let engine = Engine::load(&ckpt)?;
            let r = intervention_eval(&engine, &eval.config()?)?;
            write_reports(&eval.out, &r, &r.table(), &r.svg())?;
        }
        Cmd::Eval(EvalCmd::Variants { ckpt, eval }) => {
            let engines = ckpt
                .iter()
                .map(|p| Engine::load(p).with_context(|| p.display().to_string()))
                .collect::<Result<Vec<_>>>()?;
            let r = variant_eval(&engines, &eval.config()?)?;
            write_reports(&eval.out, &r, &r.table(), &r.svg())?;
        }
        Cmd::Serve { ckpt, port, bind } => {
            let engine = Engine::load(&ckpt)?;
            let mut addr = match bind {
                Some(a) => a,
                None => std::env::var(BIND_ENV)
                    .unwrap_or_else(|_| DEFAULT_BIND.to_string())
                    .parse()
                    .with_context(|| format!("${BIND_ENV} is not a socket address"))?,
            };
            if let Some(p) = port {
                addr.set_port(p);
            }
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(serve(engine, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
