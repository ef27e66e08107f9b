//! Argument parsing and subcommand handlers.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ptzact_core::codec::{decode, encode_action, ActionDelta, DecodeMode, TokenSeq};
use ptzact_core::grpo::{train, ToyPolicy};
use ptzact_core::pseudolabel::{generate, select_smallest, GenerateOptions, GroundingRecord};
use ptzact_core::regress;
use ptzact_core::scene::{generate_scene, Range};
use ptzact_core::selftrain::{
    build_samples, evaluate, iterate, policy_features, split, with_noisy_labels, LabelPolicy, MetricsReport,
    NoisyOraclePolicy, OraclePolicy, PolicyAdapter, RegressorPolicy, SampleEnv, SampleTuple, SelfTrainError,
    ToyPolicyAdapter, ZeroPolicy,
};
use serde::{Deserialize, Serialize};

use crate::config::{KindName, RunConfig};
use crate::error::CliError;
use crate::formats::{self, GroundingLine, LabelLine, ModelFile, PolicyCheckpoint, StepLine};

pub const SCENE_FILE: &str = "scene.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const SKIPPED_FILE: &str = "skipped.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const REFINED_FILE: &str = "refined.jsonl";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const POLICY_FILE: &str = "policy.json";
pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Parser)]
#[command(
    name = "ptzact",
    version,
    about = "Pan/tilt/zoom action tokens, simulation, pseudo-labels and self-training"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config value).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Suppress summary lines.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the canonical token sequence for an action.
    Encode {
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        pan: i64,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        tilt: i64,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        zoom: i64,
        /// Print token ids instead of symbols.
        #[arg(long)]
        ids: bool,
    },
    /// Decode symbols or ids back to `pan tilt zoom`.
    Decode {
        /// Accept any marker order and ignore tokens after the end token.
        #[arg(long)]
        lenient: bool,
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true)]
        tokens: Vec<String>,
    },
    /// Sample a synthetic target layout.
    SceneGen(SceneArgs),
    /// Build labelled tuples from a scene or from grounding records.
    Synth(SynthArgs),
    /// Fit the action regressor on a label file.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Run the multi-round filter and refit loop.
    Iterate(IterateArgs),
    /// Train the toy policy with the clipped group objective.
    GrpoTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score a policy on a label file.
    Eval(EvalArgs),
    /// Render a round report or training log as a table.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Ols,
    Rf,
}

impl From<Kind> for KindName {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Ols => KindName::Ols,
            Kind::Rf => KindName::Rf,
        }
    }
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long)]
    pub count: usize,
    /// `lo,hi` in degrees.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub azimuth: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub elevation: Option<[f64; 2]>,
    /// `lo,hi` in metres.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub distance: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub width: Option<[f64; 2]>,
    /// `lo,hi` of height over width.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub aspect: Option<[f64; 2]>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene file; labels come from the geometric oracle.
    #[arg(long, required_unless_present = "records", conflicts_with = "records")]
    pub scene: Option<PathBuf>,
    /// Grounding records; labels come from a fitted model.
    #[arg(long, requires = "model")]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Perturb oracle actions with the configured label noise.
    #[arg(long, requires = "scene")]
    pub noisy: bool,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Comma-separated IoU thresholds for rounds 2, 3, ...
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Keep predicted boxes on kept samples instead of the originals.
    #[arg(long)]
    pub no_replace: bool,
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Oracle,
    Zero,
    Labels,
    NoisyOracle,
    Model,
    Toy,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub policy: PolicyName,
    /// Regressor model file for `--policy model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Policy checkpoint for `--policy toy`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi`, got `{s}`"));
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([lo, hi])
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    match execute(cli) {
        Ok(lines) => {
            for l in lines {
                let _ = writeln!(stdout, "{l}");
            }
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; returns the lines to print.
pub fn execute(cli: Cli) -> Result<Vec<String>, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = Ctx {
        cfg,
        out: cli.out,
        quiet: cli.quiet,
    };
    let lines = match cli.command {
        Command::Encode { pan, tilt, zoom, ids } => return cmd_encode(&ctx, pan, tilt, zoom, ids),
        Command::Decode { lenient, tokens } => return cmd_decode(&ctx, lenient, &tokens),
        Command::SceneGen(a) => cmd_scene_gen(&ctx, &a)?,
        Command::Synth(a) => cmd_synth(&ctx, &a)?,
        Command::Fit { input, kind } => cmd_fit(&ctx, &input, kind)?,
        Command::Iterate(a) => cmd_iterate(&ctx, &a)?,
        Command::GrpoTrain { input, steps } => cmd_grpo(&ctx, &input, steps)?,
        Command::Eval(a) => cmd_eval(&ctx, &a)?,
        Command::Report { input } => cmd_report(&ctx, &input)?,
    };
    Ok(if ctx.quiet { Vec::new() } else { lines })
}

fn to_i32(name: &str, v: i64) -> Result<i32, CliError> {
    i32::try_from(v).map_err(|_| CliError::Usage(format!("{name} {v} is out of range")))
}

fn cmd_encode(ctx: &Ctx, pan: i64, tilt: i64, zoom: i64, ids: bool) -> Result<Vec<String>, CliError> {
    let vocab = ctx.cfg.vocab()?;
    let a = ActionDelta::new(to_i32("pan", pan)?, to_i32("tilt", tilt)?, to_i32("zoom", zoom)?);
    let seq = encode_action(&a, &vocab).map_err(|e| CliError::Usage(e.to_string()))?;
    let line = if ids {
        seq.ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
    } else {
        seq.to_symbols(&vocab).map_err(|e| CliError::Usage(e.to_string()))?
    };
    Ok(vec![line])
}

fn cmd_decode(ctx: &Ctx, lenient: bool, tokens: &[String]) -> Result<Vec<String>, CliError> {
    let vocab = ctx.cfg.vocab()?;
    let text = tokens.join(" ");
    let words: Vec<&str> = text.split_whitespace().collect();
    let ids: Vec<u32> = if words.iter().all(|w| w.parse::<u32>().is_ok()) {
        words.iter().map(|w| w.parse::<u32>().unwrap_or_default()).collect()
    } else {
        TokenSeq::parse_symbols(&text, &vocab)
            .map_err(|e| CliError::Usage(e.to_string()))?
            .ids
    };
    let mode = if lenient || !ctx.cfg.codec.strict {
        DecodeMode::Lenient
    } else {
        DecodeMode::Strict
    };
    let a = decode(&ids, &vocab, mode).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(vec![format!("{} {} {}", a.pan, a.tilt, a.zoom)])
}

fn cmd_scene_gen(ctx: &Ctx, a: &SceneArgs) -> Result<Vec<String>, CliError> {
    let mut ranges = ctx.cfg.scene_ranges()?;
    let set = |r: &mut Range, v: Option<[f64; 2]>| {
        if let Some([lo, hi]) = v {
            *r = Range::new(lo, hi);
        }
    };
    set(&mut ranges.azimuth, a.azimuth);
    set(&mut ranges.elevation, a.elevation);
    set(&mut ranges.distance, a.distance);
    set(&mut ranges.width, a.width);
    set(&mut ranges.aspect, a.aspect);
    let scene = generate_scene(a.count, &ranges, ctx.cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = ctx.path(SCENE_FILE);
    formats::write_jsonl(&path, &scene)?;
    Ok(vec![format!("wrote {} targets to {}", scene.len(), path.display())])
}

#[derive(Debug, Serialize)]
struct SkipLine<'a> {
    id: &'a str,
    reason: &'a str,
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<Vec<String>, CliError> {
    let cfg = &ctx.cfg;
    let sim = cfg.sim_context()?;
    let vocab = cfg.vocab()?;
    let (lines, skipped): (Vec<LabelLine>, Vec<(String, String)>) = if let Some(scene) = &a.scene {
        let targets: Vec<ptzact_core::geometry::TargetSpec> = formats::read_jsonl(scene)?;
        let built = build_samples(&targets, &cfg.camera(), &sim, cfg.seed);
        let samples = if a.noisy {
            with_noisy_labels(&built.samples, cfg.selftrain.noise, cfg.seed, sim.levels)
        } else {
            built.samples
        };
        let lines = samples
            .iter()
            .map(|s| LabelLine::from_sample(s, &sim, &vocab))
            .collect::<Result<_, _>>()?;
        (lines, built.skipped)
    } else {
        let records_path = a
            .records
            .as_ref()
            .ok_or_else(|| CliError::Usage("--records or --scene required".into()))?;
        let model_path = a
            .model
            .as_ref()
            .ok_or_else(|| CliError::Usage("--records needs --model".into()))?;
        let model = ModelFile::load(model_path)?;
        let mut records: Vec<GroundingRecord> = formats::read_jsonl::<GroundingLine>(records_path)?
            .into_iter()
            .map(Into::into)
            .collect();
        if let Some(k) = cfg.pseudolabel.k {
            records = select_smallest(&records, k).map_err(|e| CliError::Data(e.to_string()))?;
        }
        let opts = GenerateOptions {
            zoom_source: cfg.zoom_source(),
            seed: cfg.seed,
            levels: cfg.codec.levels,
        };
        let g = generate(&records, &model.model, &cfg.pseudolabel.templates, &opts);
        let mut lines = Vec::with_capacity(g.labels.len());
        for p in &g.labels {
            let r = records
                .iter()
                .find(|r| r.id == p.record_id)
                .ok_or_else(|| CliError::Data(format!("record {} vanished", p.record_id)))?;
            lines.push(LabelLine::from_pseudo(p, r, &vocab)?);
        }
        (lines, g.skipped.into_iter().map(|s| (s.id, s.reason)).collect())
    };
    let skip_lines: Vec<SkipLine> = skipped.iter().map(|(id, reason)| SkipLine { id, reason }).collect();
    let labels_path = ctx.path(LABELS_FILE);
    formats::write_jsonl(&labels_path, &lines)?;
    formats::write_jsonl(&ctx.path(SKIPPED_FILE), &skip_lines)?;
    Ok(vec![format!(
        "labelled {} records, skipped {} -> {}",
        lines.len(),
        skipped.len(),
        labels_path.display()
    )])
}

fn read_samples(ctx: &Ctx, path: &Path) -> Result<Vec<SampleTuple>, CliError> {
    let samples = formats::read_samples(path, &ctx.cfg.sim_context()?, ctx.cfg.camera())?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{}: no samples", path.display())));
    }
    Ok(samples)
}

fn cmd_fit(ctx: &Ctx, input: &Path, kind: Option<Kind>) -> Result<Vec<String>, CliError> {
    let samples = read_samples(ctx, input)?;
    let rc = ctx.cfg.regressor_config(kind.map(Into::into));
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.features.inputs()).collect();
    let y: Vec<[f64; 3]> = samples
        .iter()
        .map(|s| s.gt_action.as_array().map(|v| v as f64))
        .collect();
    let (model, report) = regress::fit(&x, &y, &rc).map_err(|e| CliError::Data(e.to_string()))?;
    let path = ctx.path(MODEL_FILE);
    formats::write_json(&path, &ModelFile::new(ctx.cfg.seed, rc, report, model))?;
    let name = match kind.map(Into::into).unwrap_or(ctx.cfg.pseudolabel.regressor) {
        KindName::Ols => "ols",
        KindName::Rf => "rf",
    };
    Ok(vec![format!(
        "fit {name} on {} samples: R2 pan={:.6} tilt={:.6} zoom={:.6} -> {}",
        report.n_samples,
        report.r2[0],
        report.r2[1],
        report.r2[2],
        path.display()
    )])
}

fn map_selftrain(e: SelfTrainError) -> CliError {
    match e {
        SelfTrainError::EmptyAfterFilter { .. } => CliError::EmptyAfterFilter(e.to_string()),
        SelfTrainError::InvalidConfig(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn cmd_iterate(ctx: &Ctx, a: &IterateArgs) -> Result<Vec<String>, CliError> {
    let mut cfg = ctx.cfg.clone();
    if let Some(r) = a.rounds {
        cfg.selftrain.rounds = r;
    }
    if let Some(t) = &a.thresholds {
        cfg.selftrain.thresholds = t.clone();
    }
    if a.no_replace {
        cfg.selftrain.replace_bbox = false;
    }
    let it = cfg.iteration_config()?;
    let sim = cfg.sim_context()?;
    let samples = read_samples(ctx, &a.input)?;
    let (train_set, test_set) = split(&samples, cfg.selftrain.test_fraction, cfg.seed);
    let rc = cfg.regressor_config(a.kind.map(Into::into));
    let mut factory = |d: &[SampleTuple]| -> Result<Box<dyn PolicyAdapter>, SelfTrainError> {
        Ok(Box::new(RegressorPolicy::fit(d, &rc)?))
    };
    let outcome = iterate(&train_set, &test_set, &it, &mut factory, &sim, &cfg.completion()).map_err(map_selftrain)?;
    let rounds_path = ctx.path(ROUNDS_FILE);
    formats::write_jsonl(&rounds_path, &outcome.reports)?;
    formats::write_samples(&ctx.path(REFINED_FILE), &outcome.refined, &sim, &cfg.vocab()?)?;
    let mut lines: Vec<String> = outcome
        .reports
        .iter()
        .map(|r| {
            format!(
                "round {} threshold {} kept {:.3} n_train {} mean_iou {:.4} mae {:.3}/{:.3}/{:.3} cr {:.3}",
                r.round,
                r.threshold.map_or("-".to_string(), |t| t.to_string()),
                r.kept_fraction,
                r.n_train,
                r.mean_iou,
                r.mae_theta1,
                r.mae_theta2,
                r.mae_zoom,
                r.cr
            )
        })
        .collect();
    lines.push(format!("wrote {}", rounds_path.display()));
    Ok(lines)
}

fn cmd_grpo(ctx: &Ctx, input: &Path, steps: Option<usize>) -> Result<Vec<String>, CliError> {
    let cfg = &ctx.cfg;
    let samples = read_samples(ctx, input)?;
    let gcfg = cfg.grpo_config()?;
    let mut tc = cfg.train_config();
    if let Some(s) = steps {
        tc.steps = s;
    }
    let env = SampleEnv::new(&samples, cfg.sim_context()?, cfg.reward_config()?);
    let n_features = policy_features(&samples[0].features).len();
    let mut policy = ToyPolicy::with_default_grids(n_features);
    let reference = policy.clone();
    let logs = train(&mut policy, &reference, &env, &gcfg, &tc).map_err(|e| CliError::Data(e.to_string()))?;
    let log_lines: Vec<StepLine> = logs.iter().map(StepLine::from).collect();
    let log_path = ctx.path(TRAIN_LOG_FILE);
    formats::write_jsonl(&log_path, &log_lines)?;
    formats::write_json(&ctx.path(POLICY_FILE), &PolicyCheckpoint::new(cfg.seed, policy))?;
    let window = logs.len().clamp(1, 20);
    let mean = |s: &[ptzact_core::grpo::StepLog]| s.iter().map(|l| l.mean_reward).sum::<f64>() / s.len().max(1) as f64;
    Ok(vec![format!(
        "trained {} steps: mean reward first {window} {:.4}, last {window} {:.4} -> {}",
        logs.len(),
        mean(&logs[..window.min(logs.len())]),
        mean(&logs[logs.len().saturating_sub(window)..]),
        log_path.display()
    )])
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalFile {
    policy: PolicyName,
    metrics: MetricsReport,
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<Vec<String>, CliError> {
    let cfg = &ctx.cfg;
    let samples = read_samples(ctx, &a.input)?;
    let noise = cfg.selftrain.noise;
    let policy: Box<dyn PolicyAdapter> = match a.policy {
        PolicyName::Oracle => Box::new(OraclePolicy),
        PolicyName::Zero => Box::new(ZeroPolicy),
        PolicyName::Labels => Box::new(LabelPolicy),
        PolicyName::NoisyOracle => Box::new(NoisyOraclePolicy {
            sigma: noise,
            seed: cfg.seed,
        }),
        PolicyName::Model => {
            let p = a
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("--policy model needs --model".into()))?;
            Box::new(RegressorPolicy {
                model: ModelFile::load(p)?.model,
            })
        }
        PolicyName::Toy => {
            let p = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--policy toy needs --checkpoint".into()))?;
            Box::new(ToyPolicyAdapter {
                policy: PolicyCheckpoint::load(p)?.policy,
            })
        }
    };
    let m = evaluate(policy.as_ref(), &samples, &cfg.sim_context()?, &cfg.completion()).map_err(map_selftrain)?;
    formats::write_json(
        &ctx.path(EVAL_FILE),
        &EvalFile {
            policy: a.policy,
            metrics: m,
        },
    )?;
    Ok(vec![format!(
        "policy {}: n {} mae {:.3}/{:.3}/{:.3} mean_iou {:.4} cr {:.3}",
        policy.name(),
        m.n_samples,
        m.mae_theta1,
        m.mae_theta2,
        m.mae_zoom,
        m.mean_iou,
        m.completion_rate
    )])
}

fn cmd_report(ctx: &Ctx, input: &Path) -> Result<Vec<String>, CliError> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> = formats::read_jsonl(input)?;
    let Some(first) = rows.first() else {
        return Err(CliError::Data(format!("{}: empty report", input.display())));
    };
    let columns: Vec<String> = first.keys().cloned().collect();
    let mut table = format!("| {} |\n|{}\n", columns.join(" | "), " --- |".repeat(columns.len()));
    for row in &rows {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| match row.get(c) {
                Some(serde_json::Value::Number(n)) if n.is_f64() => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
                Some(serde_json::Value::Null) | None => "-".to_string(),
                Some(v) => v.to_string(),
            })
            .collect();
        table.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    formats::write_atomic(&ctx.path(REPORT_FILE), table.as_bytes())?;
    Ok(table.lines().map(str::to_string).collect())
}
