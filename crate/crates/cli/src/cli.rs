//! Subcommand definitions and dispatch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use nmfseg::explain::component_spectrum;
use nmfseg::neural::{encode_model, read_model, SegModel};
use nmfseg::nmf::{encode_dictionary, read_dictionary, DictionaryMeta};

use crate::config::Config;
use crate::corpus::{class_names, generate_corpus, CLASS_NAMES};
use crate::pipeline::{self, F};
use crate::runlog::{Outputs, RunLog, RUN_LOG};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "nmfseg", version, about = "Explainable NMF-tied multilabel audio segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// key = value config file, or a run log to re-run
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its manifest
    GenData(Common),
    /// Learn the sparse NMF dictionary on the training split
    PretrainDict(Common),
    /// Train the segmentation model
    Train(Common),
    /// Write segments for one split
    Segment(Common),
    /// Frame-level F1 report for one split
    Eval(Common),
    /// Component relevance, modularity and compactness report
    Explain(Common),
    /// Linear probes on frozen activations
    Probe(Common),
    /// Train with beta in {0, 1, 5} and compare reconstruction and F1
    AblateBeta(Common),
    /// Collect run logs below the output directory
    Report(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::PretrainDict(_) => "pretrain-dict",
            Command::Train(_) => "train",
            Command::Segment(_) => "segment",
            Command::Eval(_) => "eval",
            Command::Explain(_) => "explain",
            Command::Probe(_) => "probe",
            Command::AblateBeta(_) => "ablate-beta",
            Command::Report(_) => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::PretrainDict(c)
            | Command::Train(c)
            | Command::Segment(c)
            | Command::Eval(c)
            | Command::Explain(c)
            | Command::Probe(c)
            | Command::AblateBeta(c)
            | Command::Report(c) => c,
        }
    }
}

/// Worker cap from `NMFSEG_THREADS`; unset or invalid means rayon's default.
pub fn init_threads() {
    if let Some(n) = std::env::var("NMFSEG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn resolve_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn default_out(cmd: &Command, cfg: &Config) -> PathBuf {
    let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    match cmd {
        Command::GenData(_) => cfg.data_dir.clone(),
        Command::PretrainDict(_) => parent(&cfg.dictionary),
        Command::Train(_) => parent(&cfg.checkpoint),
        other => PathBuf::from("runs").join(other.name()),
    }
}

pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let cmd = &cli.command;
    let common = cmd.common();
    let mut cfg = resolve_config(common)?;
    let out_dir = common.out.clone().unwrap_or_else(|| default_out(cmd, &cfg));
    // Outputs of the producing stages become the resolved inputs downstream.
    match cmd {
        Command::GenData(_) => cfg.data_dir = out_dir.clone(),
        Command::PretrainDict(_) => cfg.dictionary = out_dir.join("dictionary.nsd"),
        Command::Train(_) => cfg.checkpoint = out_dir.join("model.nsm"),
        _ => {}
    }
    check_inputs(cmd, &cfg)?;
    let mut out = Outputs::create(&out_dir)?;
    let (metrics, artifacts) = match cmd {
        Command::GenData(_) => gen_data(&cfg, &mut out)?,
        Command::PretrainDict(_) => pretrain_dict(&cfg, &mut out)?,
        Command::Train(_) => train(&cfg, &mut out)?,
        Command::Segment(_) => segment(&cfg, &mut out)?,
        Command::Eval(_) => eval(&cfg, &mut out)?,
        Command::Explain(_) => explain(&cfg, &mut out)?,
        Command::Probe(_) => probe(&cfg, &mut out)?,
        Command::AblateBeta(_) => ablate_beta(&cfg, &mut out)?,
        Command::Report(_) => report(&mut out)?,
    };
    let log = RunLog::new(cmd.name(), &cfg, metrics, artifacts);
    out.write(RUN_LOG, log.to_json())?;
    out.commit();
    Ok(out_dir)
}

/// Fails before any output is created when a declared input is absent.
fn check_inputs(cmd: &Command, cfg: &Config) -> Result<(), CliError> {
    let manifest = cfg.data_dir.join("manifest.csv");
    let needs: Vec<&Path> = match cmd {
        Command::GenData(_) | Command::Report(_) => vec![],
        Command::PretrainDict(_) => vec![&manifest],
        Command::Train(_) | Command::AblateBeta(_) => vec![&manifest, &cfg.dictionary],
        Command::Probe(_) => vec![&cfg.checkpoint],
        _ => vec![&manifest, &cfg.checkpoint],
    };
    needs.into_iter().try_for_each(pipeline::ensure_file)
}

type Produced = (Value, Vec<String>);

fn gen_data(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let spec = pipeline::corpus_spec(cfg);
    spec.validate()?;
    out.dir("audio")?;
    out.dir("labels")?;
    out.file("manifest.csv");
    let manifest = generate_corpus(&spec, out.root())?;
    let mut fractions = serde_json::Map::new();
    let expected = spec.expected_label_fractions();
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        fractions.insert(name.to_string(), json!(expected[c]));
    }
    let metrics = json!({
        "clips": manifest.rows.len(),
        "train_clips": manifest.split(crate::manifest::Split::Train).count(),
        "dev_clips": manifest.split(crate::manifest::Split::Dev).count(),
        "test_clips": manifest.split(crate::manifest::Split::Test).count(),
        "expected_label_fraction": fractions,
    });
    Ok((metrics, vec!["manifest.csv".into(), "audio/".into(), "labels/".into()]))
}

fn pretrain_dict(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let manifest = pipeline::load_manifest(cfg)?;
    let train = pipeline::load_split(&manifest, crate::manifest::Split::Train, cfg)?;
    let result = pipeline::pretrain_dictionary(&train, cfg)?;
    let meta = DictionaryMeta {
        mu: cfg.mu,
        seed: cfg.seed,
    };
    let bytes = encode_dictionary(&result.dictionary, meta).map_err(|e| CliError::stage("dictionary", e))?;
    out.write("dictionary.nsd", bytes)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{v}");
    }
    out.write("objective.csv", trace)?;
    let metrics = json!({
        "iterations": result.iterations(),
        "initial_objective": result.objective_trace.first(),
        "final_objective": result.objective_trace.last(),
        "skipped_w_steps": result.skipped_w_steps,
        "frames": result.activations.values.ncols(),
    });
    Ok((metrics, vec!["dictionary.nsd".into(), "objective.csv".into()]))
}

fn load_dictionary(cfg: &Config) -> Result<(nmfseg::nmf::Dictionary<F>, DictionaryMeta), CliError> {
    pipeline::ensure_file(&cfg.dictionary)?;
    read_dictionary::<F>(&cfg.dictionary).map_err(|e| CliError::format(&cfg.dictionary, e.to_string()))
}

fn load_checkpoint(cfg: &Config) -> Result<SegModel<F>, CliError> {
    pipeline::ensure_file(&cfg.checkpoint)?;
    read_model::<F>(&cfg.checkpoint).map_err(|e| CliError::format(&cfg.checkpoint, e.to_string()))
}

fn epochs_csv(epochs: &[nmfseg::neural::EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_total,train_bce,train_nmf,train_l1,dev_total,dev_bce,dev_nmf,dev_l1,dev_macro_f1\n");
    for e in epochs {
        let d = e.dev.unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.train.total,
            e.train.bce,
            e.train.nmf,
            e.train.l1,
            d.total,
            d.bce,
            d.nmf,
            d.l1,
            e.dev_macro_f1.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    s
}

fn train(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let (dict, meta) = load_dictionary(cfg)?;
    let manifest = pipeline::load_manifest(cfg)?;
    let train_set = pipeline::load_split(&manifest, crate::manifest::Split::Train, cfg)?;
    let dev_set = pipeline::load_split(&manifest, crate::manifest::Split::Dev, cfg)?;
    let outcome = pipeline::train_model(dict, meta, &train_set, &dev_set, cfg)?;
    let bytes = encode_model(&outcome.best).map_err(|e| CliError::stage("checkpoint", e))?;
    out.write("model.nsm", bytes)?;
    out.write("epochs.csv", epochs_csv(&outcome.epochs))?;
    let metrics = json!({
        "best_epoch": outcome.best_epoch,
        "parameters": outcome.best.parameter_count(),
        "epochs": outcome.epochs,
    });
    Ok((metrics, vec!["model.nsm".into(), "epochs.csv".into()]))
}

fn split_examples(cfg: &Config) -> Result<Vec<nmfseg::neural::Example<F>>, CliError> {
    let manifest = pipeline::load_manifest(cfg)?;
    pipeline::load_split(&manifest, pipeline::parse_split(cfg)?, cfg)
}

fn segment(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let model = load_checkpoint(cfg)?;
    let examples = split_examples(cfg)?;
    let (lines, report) = pipeline::segment_and_score(&model, &examples, cfg)?;
    let file = format!("{}.seg", cfg.split);
    out.write(&file, lines)?;
    let metrics = json!({ "split": cfg.split, "f1": report.f1_values(), "macro_f1": report.macro_f1() });
    Ok((metrics, vec![file]))
}

fn eval(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let model = load_checkpoint(cfg)?;
    let examples = split_examples(cfg)?;
    let ev = pipeline::evaluate(&model, &examples, cfg)?;
    out.write("eval.csv", ev.report.to_csv(&class_names()))?;
    let metrics = json!({
        "split": cfg.split,
        "f1": ev.report.f1_values(),
        "macro_f1": ev.report.macro_f1(),
        "loss": ev.loss,
        "h_l1_per_frame": ev.h_l1_per_frame,
        "scores": ev.report,
    });
    Ok((metrics, vec!["eval.csv".into()]))
}

const EXPLAIN_SAMPLES_PER_CLASS: usize = 5;
const EXPLAIN_MIN_FRAMES: usize = 25;

fn explain(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let model = load_checkpoint(cfg)?;
    let examples = split_examples(cfg)?;
    let records = pipeline::explain_records(&model, &examples, EXPLAIN_SAMPLES_PER_CLASS, EXPLAIN_MIN_FRAMES, cfg.tau)?;
    let report = pipeline::explain_report(&records, EXPLAIN_SAMPLES_PER_CLASS, cfg)?;
    out.write("components.csv", report.components_csv())?;
    out.write("samples.csv", report.samples_csv(&records, &class_names()))?;
    out.dir("spectra")?;
    let mut artifacts = vec!["components.csv".into(), "samples.csv".into(), "summary.json".into()];
    let mut peaks = Vec::new();
    for k in 0..model.arch.components {
        let spec = component_spectrum(&model.dictionary, k, cfg.n_fft, nmfseg::signal::SAMPLE_RATE)
            .map_err(|e| CliError::stage("explain", e))?;
        let rel = format!("spectra/component_{k:03}.csv");
        out.write(&rel, spec.to_csv())?;
        peaks.push(spec.peak_hz);
        artifacts.push(rel);
    }
    let summary = json!({
        "samples_per_class": EXPLAIN_SAMPLES_PER_CLASS,
        "samples": records.len(),
        "tau": cfg.tau,
        "band": cfg.band,
        "compact_limit": cfg.compact_limit,
        "inactive": report.inactive_ids.len(),
        "modular": report.modular_ids.len(),
        "compact_fraction": report.compact_fraction,
        "inactive_ids": report.inactive_ids,
        "modular_ids": report.modular_ids,
        "peak_hz": peaks,
    });
    out.write("summary.json", format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()))?;
    Ok((summary, artifacts))
}

fn probe(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let model = load_checkpoint(cfg)?;
    let outcomes = pipeline::run_probes(&model, cfg)?;
    let mut csv = String::from("task,classes,train_items,test_items,accuracy,uar,majority_accuracy\n");
    for o in &outcomes {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            o.task, o.classes, o.train_items, o.test_items, o.probe.accuracy, o.probe.uar, o.majority.accuracy
        );
    }
    out.write("probes.csv", csv)?;
    Ok((json!({ "tasks": outcomes }), vec!["probes.csv".into()]))
}

pub const ABLATION_BETAS: [f64; 3] = [0.0, 1.0, 5.0];

fn ablate_beta(cfg: &Config, out: &mut Outputs) -> Result<Produced, CliError> {
    let (dict, meta) = load_dictionary(cfg)?;
    let manifest = pipeline::load_manifest(cfg)?;
    let train_set = pipeline::load_split(&manifest, crate::manifest::Split::Train, cfg)?;
    let dev_set = pipeline::load_split(&manifest, crate::manifest::Split::Dev, cfg)?;
    let test_set = pipeline::load_split(&manifest, crate::manifest::Split::Test, cfg)?;
    let mut csv = String::from("alpha,beta,gamma,test_nmf,test_bce,test_l1,macro_f1");
    for name in CLASS_NAMES {
        let _ = write!(csv, ",f1_{name}");
    }
    csv.push('\n');
    let mut rows = Vec::new();
    let mut artifacts = vec!["ablation.csv".to_string()];
    for beta in ABLATION_BETAS {
        let run_cfg = Config {
            alpha: 10.0,
            beta,
            gamma: 0.1,
            ..cfg.clone()
        };
        let outcome = pipeline::train_model(dict.clone(), meta, &train_set, &dev_set, &run_cfg)?;
        // Reconstruction is scored on the last parameters: best-dev selection
        // optimizes F1 only.
        let ev = pipeline::evaluate(&outcome.last, &test_set, &run_cfg)?;
        let rel = format!("model_beta{beta}.nsm");
        out.write(&rel, encode_model(&outcome.last).map_err(|e| CliError::stage("checkpoint", e))?)?;
        artifacts.push(rel);
        let f1 = ev.report.f1_values();
        let _ = write!(
            csv,
            "10,{beta},0.1,{},{},{},{}",
            ev.loss.nmf,
            ev.loss.bce,
            ev.loss.l1,
            ev.report.macro_f1().map(|v| v.to_string()).unwrap_or_default()
        );
        for v in &f1 {
            let _ = write!(csv, ",{}", v.map(|v| v.to_string()).unwrap_or_default());
        }
        csv.push('\n');
        rows.push(json!({ "beta": beta, "test_loss": ev.loss, "f1": f1, "macro_f1": ev.report.macro_f1() }));
    }
    out.write("ablation.csv", csv)?;
    let recon: Vec<f64> = rows.iter().map(|r| r["test_loss"]["nmf"].as_f64().unwrap_or(f64::NAN)).collect();
    let monotone = recon.windows(2).all(|w| w[1] <= w[0]);
    Ok((json!({ "runs": rows, "recon_non_increasing_in_beta": monotone }), artifacts))
}

fn report(out: &mut Outputs) -> Result<Produced, CliError> {
    let root = out.root().to_path_buf();
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| CliError::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUN_LOG).is_file())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    let mut md = String::from("| run | command | config hash | seed |\n|---|---|---|---|\n");
    for d in &dirs {
        let path = d.join(RUN_LOG);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))?;
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {} |",
            v["command"].as_str().unwrap_or("?"),
            &v["config_hash"].as_str().unwrap_or("?")[..12.min(v["config_hash"].as_str().unwrap_or("?").len())],
            v["seed"]
        );
        runs.push(json!({ "run": name, "command": v["command"], "config_hash": v["config_hash"], "metrics": v["metrics"] }));
    }
    out.write("report.md", md)?;
    let body = json!({ "runs": runs });
    out.write("report.json", format!("{}\n", serde_json::to_string_pretty(&body).unwrap()))?;
    Ok((json!({ "runs": dirs.len() }), vec!["report.md".into(), "report.json".into()]))
}
