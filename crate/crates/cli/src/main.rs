//! `absa-rank` command-line driver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absa_rank::alternating::{finetune_lm, init_models, resume_schedule, run_schedule, warm_up, StepRecord};
use absa_rank::checkpoint::{load_retriever, load_scorer, save_retriever, save_scorer};
use absa_rank::contrastive::train_retriever;
use absa_rank::corpus::{generate_synthetic, load_dataset, write_dataset, Dataset, Split};
use absa_rank::eval::{k_sweep, schedule_config, InferenceReport, Metrics, SweepRow, TrainedModels};
use absa_rank::retriever::{retrieve, CandidateIndex};
use absa_rank::template::candidate_text;
use absa_rank::{Config, Retriever64, Scorer, Scorer64};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "absa-rank", version, about = "Retrieval-ranked in-context examples for aspect-based sentiment analysis")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Write a synthetic train/test corpus as JSON lines.
    GenData(GenData),
    /// Train the retriever against a scorer's likelihood labels.
    TrainRetriever(TrainRetrieverCmd),
    /// Fine-tune the scorer with top-1 retrieved examples.
    FinetuneLm(FinetuneLm),
    /// Run the alternating schedule.
    Alternate(Alternate),
    /// Print the top-m candidates for one query.
    Retrieve(RetrieveCmd),
    /// Print total and per-token log-likelihoods of a target.
    Score(ScoreCmd),
    /// Evaluate one ablation mode.
    Evaluate(Evaluate),
    /// Evaluate k = 0..=k-max in full mode.
    Sweep(Evaluate),
    /// Re-execute the run recorded in a run.json manifest.
    Replay(Replay),
}

/// Every config key as an optional flag. Unset flags fall back to the config
/// file, then to the defaults.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct ConfigFlags {
    /// `key = value` file or a run.json manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lm_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, alias = "epochs")]
    epochs_retriever: Option<usize>,
    #[arg(long)]
    epochs_lm: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_r: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_gen_len: Option<usize>,
    #[arg(long)]
    positions: Option<usize>,
    #[arg(long)]
    recency: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reinit_per_step: Option<bool>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    template_dir: Option<PathBuf>,
    #[arg(long)]
    definition: Option<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn put<V: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<V>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut out = Vec::new();
        put(&mut out, "task", &self.task);
        put(&mut out, "k", &self.k);
        put(&mut out, "m", &self.m);
        put(&mut out, "ratio", &self.ratio);
        put(&mut out, "batch-size", &self.batch_size);
        put(&mut out, "lr", &self.lr);
        put(&mut out, "lm-lr", &self.lm_lr);
        put(&mut out, "weight-decay", &self.weight_decay);
        put(&mut out, "epochs-retriever", &self.epochs_retriever);
        put(&mut out, "epochs-lm", &self.epochs_lm);
        put(&mut out, "warmup-epochs", &self.warmup_epochs);
        put(&mut out, "grad-accum", &self.grad_accum);
        put(&mut out, "t", &self.t);
        put(&mut out, "d", &self.d);
        put(&mut out, "d-r", &self.d_r);
        put(&mut out, "max-len", &self.max_len);
        put(&mut out, "max-gen-len", &self.max_gen_len);
        put(&mut out, "positions", &self.positions);
        put(&mut out, "recency", &self.recency);
        put(&mut out, "k-max", &self.k_max);
        put(&mut out, "init-scale", &self.init_scale);
        put(&mut out, "seed", &self.seed);
        put(&mut out, "reinit-per-step", &self.reinit_per_step);
        put(&mut out, "mode", &self.mode);
        put(&mut out, "template-dir", &self.template_dir.as_ref().map(|p| p.display().to_string()));
        put(&mut out, "definition", &self.definition);
        out
    }

    /// Flag > config file > default.
    fn resolve(&self) -> Result<Config, UsageError> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?;
            apply_config_file(&mut cfg, &text).map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?;
        }
        for (key, value) in self.overrides() {
            cfg.set(key, &value).map_err(|e| UsageError(e.to_string()))?;
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

fn apply_config_file(cfg: &mut Config, text: &str) -> anyhow::Result<()> {
    if text.trim_start().starts_with('{') {
        let manifest: Manifest = serde_json::from_str(text)?;
        for (key, value) in &manifest.config {
            cfg.set(key, value)?;
        }
    } else {
        cfg.apply_kv(text)?;
    }
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Common {
    #[command(flatten)]
    #[serde(default)]
    config: ConfigFlags,
    /// Directory holding train.jsonl, test.jsonl and optionally dev.jsonl.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Output directory; receives run.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct GenData {
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainRetrieverCmd {
    #[command(flatten)]
    common: Common,
    /// Labeling scorer; a freshly warmed-up scorer when absent.
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// Retriever to continue from; a fresh one with a random-candidate
    /// first epoch when absent.
    #[arg(long)]
    retriever: Option<PathBuf>,
    /// Alternating step index used to derive random streams.
    #[arg(long, default_value_t = 1)]
    step: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FinetuneLm {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    retriever: PathBuf,
    /// Scorer to continue from; a freshly warmed-up scorer when absent.
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    step: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Alternate {
    #[command(flatten)]
    common: Common,
    /// Resume after this step, reading checkpoints from `--from`.
    #[arg(long, requires = "from")]
    resume_step: Option<usize>,
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct RetrieveCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    retriever: PathBuf,
    #[arg(long)]
    query_id: usize,
    /// Split the query comes from; the pool is always the training set.
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ScoreCmd {
    #[arg(long)]
    scorer: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Evaluate {
    #[command(flatten)]
    common: Common,
    /// Directory written by `alternate`; its last step's checkpoints are
    /// evaluated instead of training.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Replay {
    manifest: PathBuf,
    /// Output directory; defaults to the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Record of one invocation, sufficient to re-execute it.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: Command,
    config: BTreeMap<String, String>,
    seed: u64,
    inputs: BTreeMap<String, String>,
    checkpoints: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn hashes<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> anyhow::Result<BTreeMap<String, String>> {
    paths
        .into_iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

/// Files produced by a run, split by kind for the manifest.
#[derive(Default)]
struct Produced {
    inputs: Vec<PathBuf>,
    checkpoints: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn write_manifest(dir: &Path, command: &Command, cfg: &Config, produced: &Produced) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        command: command.clone(),
        config: cfg.pairs().into_iter().collect(),
        seed: cfg.seed,
        inputs: hashes(&produced.inputs)?,
        checkpoints: hashes(&produced.checkpoints)?,
        outputs: hashes(&produced.outputs)?,
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

struct Data {
    train: Dataset,
    dev: Dataset,
    test: Dataset,
    files: Vec<PathBuf>,
}

fn load_data(dir: &Path, cfg: &Config) -> anyhow::Result<Data> {
    let train_path = dir.join("train.jsonl");
    let test_path = dir.join("test.jsonl");
    let dev_path = dir.join("dev.jsonl");
    let train = load_dataset(&train_path, cfg.task, Split::Train).with_context(|| format!("loading {}", train_path.display()))?;
    let test = load_dataset(&test_path, cfg.task, Split::Test).with_context(|| format!("loading {}", test_path.display()))?;
    let mut files = vec![train_path, test_path];
    let dev = if dev_path.exists() {
        let dev = load_dataset(&dev_path, cfg.task, Split::Test)?;
        files.push(dev_path);
        dev
    } else {
        test.clone()
    };
    Ok(Data { train, dev, test, files })
}

fn warmed_scorer(train: &Dataset, cfg: &Config) -> anyhow::Result<(Scorer64, Retriever64)> {
    let template = cfg.template()?;
    let (mut scorer, retriever) = init_models::<f64>(train, &template, cfg)?;
    warm_up(&mut scorer, train, &template, cfg)?;
    Ok((scorer, retriever))
}

fn metrics_row(m: &Metrics) -> String {
    format!(
        "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
        m.precision, m.recall, m.f1, m.accuracy, m.parse_failures
    )
}

fn write_report(out: &Path, report: &InferenceReport, produced: &mut Produced) -> anyhow::Result<()> {
    let metrics = out.join("metrics.tsv");
    fs::write(
        &metrics,
        format!(
            "mode\ttask\tk\tprecision\trecall\tf1\taccuracy\tparse_failures\n{}\t{}\t{}\t{}\n",
            report.mode,
            report.task,
            report.k,
            metrics_row(&report.metrics)
        ),
    )?;
    let predictions = out.join("predictions.jsonl");
    let mut w = std::io::BufWriter::new(fs::File::create(&predictions)?);
    for p in &report.predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    produced.outputs.extend([metrics, predictions]);
    Ok(())
}

fn write_sweep(out: &Path, rows: &[SweepRow], produced: &mut Produced) -> anyhow::Result<()> {
    let mut text = String::from("k\tprecision\trecall\tf1\taccuracy\tparse_failures\tover_budget\n");
    for r in rows {
        writeln!(text, "{}\t{}\t{}", r.k, metrics_row(&r.metrics), r.over_budget)?;
    }
    let path = out.join("sweep.tsv");
    fs::write(&path, text)?;
    produced.outputs.push(path);
    Ok(())
}

fn schedule_tsv(records: &[StepRecord]) -> String {
    let mut text = String::from("step\tstage\tepoch\tloss\tseparation\n");
    for r in records {
        for e in &r.retriever {
            let _ = writeln!(text, "{}\tretriever\t{}\t{:.6}\t{:.6}", r.step, e.epoch, e.mean_loss, e.separation);
        }
        for (epoch, loss) in r.lm.epoch_losses.iter().enumerate() {
            let _ = writeln!(text, "{}\tlm\t{epoch}\t{loss:.6}\t", r.step);
        }
    }
    text
}

/// Final models for `evaluate`/`sweep`: loaded from `--models` or trained.
fn models_for(cmd: &Evaluate, cfg: &Config, data: &Data, produced: &mut Produced) -> anyhow::Result<TrainedModels<f64>> {
    match &cmd.models {
        Some(dir) => {
            let step = (0..=cfg.t)
                .rev()
                .find(|s| absa_rank::alternating::scorer_checkpoint(dir, *s).exists())
                .with_context(|| format!("no scorer checkpoints in {}", dir.display()))?;
            let s_path = absa_rank::alternating::scorer_checkpoint(dir, step);
            let r_path = absa_rank::alternating::retriever_checkpoint(dir, step);
            let scorer = load_scorer(&s_path)?;
            let retriever = load_retriever(&r_path)?;
            produced.inputs.extend([s_path, r_path]);
            Ok(TrainedModels::from_models(scorer, retriever, &data.train, cfg, Vec::new())?)
        }
        None => {
            let dir = cmd.common.out.join("models");
            let models = TrainedModels::train(&data.train, &data.dev, cfg, cfg.mode, Some(&dir))?;
            let sched = schedule_config(cfg, cfg.mode);
            for s in 0..=sched.t {
                produced.checkpoints.push(absa_rank::alternating::retriever_checkpoint(&dir, s));
                produced.checkpoints.push(absa_rank::alternating::scorer_checkpoint(&dir, s));
            }
            Ok(models)
        }
    }
}

fn execute(command: &Command, forced: Option<Config>) -> anyhow::Result<()> {
    let resolve = |flags: &ConfigFlags| -> anyhow::Result<Config> {
        Ok(match &forced {
            Some(cfg) => cfg.clone(),
            None => flags.resolve()?,
        })
    };
    let mut produced = Produced::default();
    let (out, cfg) = match command {
        Command::GenData(g) => {
            fs::create_dir_all(&g.out)?;
            let (train, test) = generate_synthetic(g.train.max(20), g.test, g.seed);
            let (tp, sp) = (g.out.join("train.jsonl"), g.out.join("test.jsonl"));
            write_dataset(&tp, &train)?;
            write_dataset(&sp, &test)?;
            produced.outputs.extend([tp, sp]);
            let cfg = Config {
                seed: g.seed,
                ..Config::default()
            };
            (g.out.clone(), cfg)
        }
        Command::TrainRetriever(c) => {
            let cfg = resolve(&c.common.config)?;
            let data = load_data(&c.common.data, &cfg)?;
            produced.inputs.extend(data.files.iter().cloned());
            let template = cfg.template()?;
            let (warm, fresh) = warmed_scorer(&data.train, &cfg)?;
            let scorer = match &c.scorer {
                Some(p) => {
                    produced.inputs.push(p.clone());
                    load_scorer::<f64>(p)?
                }
                None => warm,
            };
            let (mut retriever, bootstrap) = match &c.retriever {
                Some(p) => {
                    produced.inputs.push(p.clone());
                    (load_retriever::<f64>(p)?, false)
                }
                None => (fresh, true),
            };
            let epochs = train_retriever(&mut retriever, &data.train, &scorer, &template, &cfg, c.step, bootstrap)?;
            let mut text = String::from("step\tepoch\tloss\tseparation\tqueries\tbootstrap\n");
            for e in &epochs {
                writeln!(text, "{}\t{}\t{:.6}\t{:.6}\t{}\t{}", e.step, e.epoch, e.mean_loss, e.separation, e.queries, e.bootstrap)?;
            }
            print!("{text}");
            fs::create_dir_all(&c.common.out)?;
            let ckpt = c.common.out.join("retriever.ckpt");
            save_retriever(&ckpt, &retriever)?;
            let report = c.common.out.join("retriever.tsv");
            fs::write(&report, text)?;
            produced.checkpoints.push(ckpt);
            produced.outputs.push(report);
            (c.common.out.clone(), cfg)
        }
        Command::FinetuneLm(c) => {
            let cfg = resolve(&c.common.config)?;
            let data = load_data(&c.common.data, &cfg)?;
            produced.inputs.extend(data.files.iter().cloned());
            let template = cfg.template()?;
            let retriever = load_retriever::<f64>(&c.retriever)?;
            produced.inputs.push(c.retriever.clone());
            let mut scorer = match &c.scorer {
                Some(p) => {
                    produced.inputs.push(p.clone());
                    load_scorer::<f64>(p)?
                }
                None => warmed_scorer(&data.train, &cfg)?.0,
            };
            if scorer.vocab() != retriever.vocab().as_ref() {
                bail!("scorer and retriever vocabularies differ");
            }
            let report = finetune_lm(&mut scorer, &retriever, &data.train, &template, &cfg, c.step)?;
            let mut text = String::from("step\tepoch\tnll\n");
            for (e, loss) in report.epoch_losses.iter().enumerate() {
                writeln!(text, "{}\t{e}\t{loss:.6}", report.step)?;
            }
            print!("{text}");
            fs::create_dir_all(&c.common.out)?;
            let ckpt = c.common.out.join("scorer.ckpt");
            save_scorer(&ckpt, &scorer)?;
            let tsv = c.common.out.join("lm.tsv");
            fs::write(&tsv, text)?;
            produced.checkpoints.push(ckpt);
            produced.outputs.push(tsv);
            (c.common.out.clone(), cfg)
        }
        Command::Alternate(c) => {
            let cfg = resolve(&c.common.config)?;
            let data = load_data(&c.common.data, &cfg)?;
            produced.inputs.extend(data.files.iter().cloned());
            let out = &c.common.out;
            let state = match (c.resume_step, &c.from) {
                (Some(step), Some(from)) => {
                    for s in 0..=step {
                        produced.inputs.push(absa_rank::alternating::retriever_checkpoint(from, s));
                        produced.inputs.push(absa_rank::alternating::scorer_checkpoint(from, s));
                    }
                    resume_schedule::<f64>(from, step, &data.train, &data.dev, &cfg, Some(out))?
                }
                _ => run_schedule::<f64>(&data.train, &data.dev, &cfg, Some(out))?,
            };
            let log = out.join("schedule.tsv");
            fs::write(&log, schedule_tsv(&state.records))?;
            for (r, s) in &state.checkpoints {
                produced.checkpoints.extend([r.clone(), s.clone()]);
            }
            produced.outputs.extend([out.join("metrics.tsv"), log]);
            for r in &state.records {
                println!("step {}\tdev f1 {:.4}\taccuracy {:.4}", r.step, r.dev.f1, r.dev.accuracy);
            }
            (out.clone(), cfg)
        }
        Command::Retrieve(c) => {
            let cfg = resolve(&c.common.config)?;
            let data = load_data(&c.common.data, &cfg)?;
            produced.inputs.extend(data.files.iter().cloned());
            let retriever = load_retriever::<f64>(&c.retriever)?;
            produced.inputs.push(c.retriever.clone());
            let (queries, exclude) = match c.split.as_str() {
                "train" => (&data.train, true),
                "test" => (&data.test, false),
                other => return Err(UsageError(format!("unknown split `{other}`")).into()),
            };
            let sample = queries
                .get(c.query_id)
                .ok_or_else(|| UsageError(format!("query id {} out of range (split has {})", c.query_id, queries.len())))?;
            let pool = data.train.candidates()?;
            let index = CandidateIndex::from_candidates(&retriever, &pool);
            let input = sample.input(cfg.task)?;
            let hits = retrieve(&retriever, &index, &input, exclude.then_some(sample.id), cfg.m)?;
            let mut text = String::from("id\tsimilarity\tcandidate\n");
            for h in &hits.hits {
                writeln!(text, "{}\t{:.6}\t{}", h.id, h.similarity, candidate_text(&pool[h.id]))?;
            }
            print!("{text}");
            fs::create_dir_all(&c.common.out)?;
            let path = c.common.out.join("retrieve.tsv");
            fs::write(&path, text)?;
            produced.outputs.push(path);
            (c.common.out.clone(), cfg)
        }
        Command::Score(c) => {
            let scorer = load_scorer::<f64>(&c.scorer)?;
            produced.inputs.push(c.scorer.clone());
            let ll = scorer.score(&c.prompt, &c.target);
            let vocab = scorer.vocab();
            let mut ids = vocab.encode(&c.target);
            ids.push(absa_rank::vocab::EOS);
            let mut text = String::from("position\ttoken\tlog_likelihood\n");
            for (i, (id, lp)) in ids.iter().zip(&ll.per_token).enumerate() {
                writeln!(text, "{i}\t{}\t{lp:.6}", vocab.token(*id))?;
            }
            writeln!(text, "total\t\t{:.6}", ll.total)?;
            print!("{text}");
            fs::create_dir_all(&c.out)?;
            let path = c.out.join("score.tsv");
            fs::write(&path, text)?;
            produced.outputs.push(path);
            (c.out.clone(), Config::default())
        }
        Command::Evaluate(c) => {
            let cfg = resolve(&c.common.config)?;
            let data = load_data(&c.common.data, &cfg)?;
            produced.inputs.extend(data.files.iter().cloned());
            fs::create_dir_all(&c.common.out)?;
            let models = models_for(c, &cfg, &data, &mut produced)?;
            let report = models.evaluate(&data.test, cfg.mode)?;
            println!("{}\t{}\tk={}\tf1 {:.4}\taccuracy {:.4}", report.mode, report.task, report.k, report.metrics.f1, report.metrics.accuracy);
            write_report(&c.common.out, &report, &mut produced)?;
            (c.common.out.clone(), cfg)
        }
        Command::Sweep(c) => {
            let cfg = resolve(&c.common.config)?;
            let data = load_data(&c.common.data, &cfg)?;
            produced.inputs.extend(data.files.iter().cloned());
            fs::create_dir_all(&c.common.out)?;
            let models = models_for(c, &cfg, &data, &mut produced)?;
            let test = if data.test.task == cfg.task { data.test.clone() } else { data.test.for_task(cfg.task) };
            let rows = k_sweep(&models.context(), &test, cfg.k_max)?;
            for r in &rows {
                println!("k={}\tf1 {:.4}\taccuracy {:.4}", r.k, r.metrics.f1, r.metrics.accuracy);
            }
            write_sweep(&c.common.out, &rows, &mut produced)?;
            (c.common.out.clone(), cfg)
        }
        Command::Replay(r) => {
            let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&r.manifest)?)
                .with_context(|| format!("parsing {}", r.manifest.display()))?;
            let mut cfg = Config::default();
            for (key, value) in &manifest.config {
                cfg.set(key, value)?;
            }
            let mut cmd = manifest.command;
            if let Some(out) = &r.out {
                set_out(&mut cmd, out.clone());
            }
            return execute(&cmd, Some(cfg));
        }
    };
    write_manifest(&out, command, &cfg, &produced)
}

fn set_out(cmd: &mut Command, out: PathBuf) {
    match cmd {
        Command::GenData(c) => c.out = out,
        Command::Score(c) => c.out = out,
        Command::TrainRetriever(TrainRetrieverCmd { common, .. })
        | Command::FinetuneLm(FinetuneLm { common, .. })
        | Command::Alternate(Alternate { common, .. })
        | Command::Retrieve(RetrieveCmd { common, .. })
        | Command::Evaluate(Evaluate { common, .. })
        | Command::Sweep(Evaluate { common, .. }) => common.out = out,
        Command::Replay(_) => {}
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let Some(command) = cli.command else {
        let _ = <Cli as clap::CommandFactory>::command().write_help(&mut std::io::stderr());
        return ExitCode::from(1);
    };
    match execute(&command, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
