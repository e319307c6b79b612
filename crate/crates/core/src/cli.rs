//! Batch command-line interface.
//!
//! Every subcommand writes its outputs atomically and leaves a
//! `*.manifest.json` next to them recording the resolved configuration,
//! seeds, inputs, wall time and SHA-256 of every output.

use crate::cluster::{kmeans, project_2d, KMeansConfig};
use crate::data::{
    gen_synthetic, load_aliases, load_corpus, load_kb, read_jsonl, read_text, split, to_jsonl, DataError,
    SynthConfig, SynthPaths,
};
use crate::encoder::{encode_all, train, EncoderParams, TrainConfig};
use crate::hierarchy::{build_hierarchy, parse_edges};
use crate::instance::Partition;
use crate::intervene::{build_groups, from_records, to_records, InterveneConfig, InterveneRecord, Mode};
use crate::metrics::score;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "openre", version, about = "Open relation extraction with element intervention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (results do not depend on this).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic taxonomy, KB, alias table and labeled corpus.
    GenData(GenDataArgs),
    /// Build Hyber and Gcc groups from a corpus and KB.
    Intervene(InterveneArgs),
    /// Train the encoder on intervened groups.
    Train(TrainArgs),
    /// Encode a corpus into representations.
    Encode(EncodeArgs),
    /// K-means over representations.
    Cluster(ClusterArgs),
    /// Score a predicted partition against gold labels.
    Eval(EvalArgs),
    /// 2-D PCA projection of representations as CSV.
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_relations: usize,
    #[arg(long, default_value_t = 6)]
    pub n_grandparents: usize,
    #[arg(long, default_value_t = 4)]
    pub n_parents_per: usize,
    #[arg(long, default_value_t = 8)]
    pub n_entities_per: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_instances: usize,
    #[arg(long, default_value_t = 3)]
    pub aliases_per_relation: usize,
    #[arg(long, default_value_t = 3)]
    pub context_noise_tokens: usize,
    #[arg(long, default_value_t = 40)]
    pub facts_per_relation: usize,
    #[arg(long, default_value_t = 0.6)]
    pub shared_pair_prob: f64,
    /// Fraction of the corpus written to valid.jsonl.
    #[arg(long, default_value_t = 0.2)]
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Hyber,
    Gcc,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Hyber => Mode::Hyber,
            ModeArg::Gcc => Mode::Gcc,
        }
    }
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub aliases: PathBuf,
    /// Intervened-corpus output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k_pos: usize,
    #[arg(long, default_value_t = 1)]
    pub k_neg: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    /// Independent sampling rounds; training epoch e uses round e mod rounds.
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Intervened corpus from `intervene`.
    #[arg(long)]
    pub groups: PathBuf,
    /// Model file output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 3e-6)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 32)]
    pub d_e: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 0.2)]
    pub margin_entity: f64,
    #[arg(long, default_value_t = 0.2)]
    pub margin_context: f64,
    #[arg(long, default_value_t = 1.0)]
    pub weight_entity: f64,
    #[arg(long, default_value_t = 1.0)]
    pub weight_context: f64,
    #[arg(long, default_value_t = 0.85)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 1000)]
    pub decay_interval: usize,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Representations output (JSON lines `{"id", "vec"}`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub reps: PathBuf,
    /// Partition output (JSON lines `{"id", "label"}`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predicted partition file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold labels: a partition file or a corpus file with `relation` set.
    #[arg(long)]
    pub gold: PathBuf,
    /// Scores output; printed to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub reps: PathBuf,
    /// Optional predicted partition for the `cluster` column.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Optional gold labels (partition or corpus file) for the `gold` column.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// CSV output `id,x,y,cluster,gold`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or malformed input; exit code 2.
    Validation(String),
    /// Everything else; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn invalid(m: impl ToString) -> CliError {
    CliError::Validation(m.to_string())
}

fn runtime(m: impl ToString) -> CliError {
    CliError::Runtime(m.to_string())
}

fn require(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.is_file() {
            return Err(invalid(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| runtime(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub artifact_hashes: BTreeMap<String, String>,
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

struct Run {
    name: &'static str,
    started: Instant,
    seed: u64,
}

impl Run {
    fn start(name: &'static str, common: &Common) -> Result<Self, CliError> {
        if common.threads == 0 {
            return Err(invalid("--threads must be >= 1"));
        }
        // a second call in the same process fails; the first pool stays in effect
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global();
        Ok(Run {
            name,
            started: Instant::now(),
            seed: common.seed,
        })
    }

    fn finish(self, anchor: &Path, config: Value, inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
        let mut hashes = BTreeMap::new();
        for o in outputs {
            hashes.insert(o.display().to_string(), sha256_file(o)?);
        }
        let m = RunManifest {
            subcommand: self.name.to_string(),
            config,
            seeds: BTreeMap::from([("seed".to_string(), self.seed)]),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            artifact_hashes: hashes,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        write_atomic(&manifest_path(anchor), text.as_bytes())
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let run = Run::start("gen-data", &a.common)?;
    let cfg = SynthConfig {
        n_relations: a.n_relations,
        n_grandparents: a.n_grandparents,
        n_parents_per: a.n_parents_per,
        n_entities_per: a.n_entities_per,
        n_instances: a.n_instances,
        aliases_per_relation: a.aliases_per_relation,
        context_noise_tokens: a.context_noise_tokens,
        facts_per_relation: a.facts_per_relation,
        shared_pair_prob: a.shared_pair_prob,
        seed: a.common.seed,
    };
    let data = gen_synthetic(&cfg)?;
    let (train_set, valid_set) = split(&data.corpus, a.valid_fraction, a.common.seed)?;
    let paths = SynthPaths::in_dir(&a.out);
    let mut edges = Vec::new();
    crate::hierarchy::write_edges(&mut edges, &data.edges).map_err(runtime)?;
    write_atomic(&paths.hierarchy, &edges)?;
    write_atomic(&paths.kb, to_jsonl(&data.kb).as_bytes())?;
    write_atomic(&paths.aliases, to_jsonl(&data.aliases).as_bytes())?;
    write_atomic(&paths.corpus, to_jsonl(&data.corpus).as_bytes())?;
    let train_path = a.out.join("train.jsonl");
    let valid_path = a.out.join("valid.jsonl");
    write_atomic(&train_path, to_jsonl(&train_set).as_bytes())?;
    write_atomic(&valid_path, to_jsonl(&valid_set).as_bytes())?;
    let mut outputs: Vec<&Path> = paths.all().to_vec();
    outputs.push(&train_path);
    outputs.push(&valid_path);
    let config = json!({
        "synth": cfg,
        "valid_fraction": a.valid_fraction,
        "alternative_fraction": data.alternative_fraction(),
    });
    eprintln!(
        "wrote {} instances ({} train / {} valid), {} KB triplets to {}",
        data.corpus.len(),
        train_set.len(),
        valid_set.len(),
        data.kb.len(),
        a.out.display()
    );
    run.finish(&a.out, config, &[], &outputs)
}

pub fn cmd_intervene(a: &InterveneArgs) -> Result<(), CliError> {
    let run = Run::start("intervene", &a.common)?;
    require(&[&a.corpus, &a.hierarchy, &a.kb, &a.aliases])?;
    if a.rounds == 0 {
        return Err(invalid("--rounds must be >= 1"));
    }
    let corpus = load_corpus(&a.corpus)?;
    let edges = parse_edges(&read_text(&a.hierarchy)?)
        .map_err(|e| invalid(format!("{}: {e}", a.hierarchy.display())))?;
    let hierarchy = build_hierarchy(&edges).map_err(|e| invalid(format!("{}: {e}", a.hierarchy.display())))?;
    let kb = load_kb(&a.kb)?;
    let aliases = load_aliases(&a.aliases)?;
    let icfg = InterveneConfig {
        k_pos: a.k_pos,
        k_neg: a.k_neg,
        mode: a.mode.into(),
    };
    if icfg.k_pos == 0 || icfg.k_neg == 0 {
        return Err(invalid("--k-pos and --k-neg must be >= 1"));
    }
    let corpus: Vec<_> = corpus.iter().map(|x| x.without_gold()).collect();
    let mut records = Vec::new();
    let mut stats = Vec::new();
    for round in 0..a.rounds {
        let (groups, st) = build_groups(&corpus, &hierarchy, &kb, &aliases, &icfg, a.common.seed, round)
            .map_err(invalid)?;
        eprintln!(
            "round {round}: {} hyber groups ({} skipped), {} gcc groups ({} skipped)",
            st.hyber_groups, st.hyber_skipped, st.gcc_groups, st.gcc_skipped
        );
        records.extend(to_records(&groups, round));
        stats.push(st);
    }
    write_atomic(&a.out, to_jsonl(&records).as_bytes())?;
    let config = json!({"intervene": icfg, "rounds": a.rounds, "stats": stats});
    run.finish(&a.out, config, &[&a.corpus, &a.hierarchy, &a.kb, &a.aliases], &[&a.out])
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let run = Run::start("train", &a.common)?;
    require(&[&a.groups])?;
    let cfg = TrainConfig {
        d_e: a.d_e,
        d: a.d,
        margin_entity: a.margin_entity,
        margin_context: a.margin_context,
        weight_entity: a.weight_entity,
        weight_context: a.weight_context,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        decay_factor: a.decay_factor,
        decay_interval: a.decay_interval,
        seed: a.common.seed,
        ..Default::default()
    };
    cfg.validate().map_err(invalid)?;
    let records: Vec<InterveneRecord> = read_jsonl(&a.groups)?;
    let rounds = from_records(records).map_err(|e| invalid(format!("{}: {e}", a.groups.display())))?;
    if rounds.iter().all(Vec::is_empty) {
        return Err(invalid(format!("{}: no groups", a.groups.display())));
    }
    let (params, logs) = train(&rounds, &cfg).map_err(runtime)?;
    for l in &logs {
        eprintln!("epoch {:>3}  loss {:.6}  lr {:.3e}", l.epoch, l.mean_loss, l.learning_rate);
    }
    write_atomic(&a.out, params.to_json().as_bytes())?;
    let config = json!({"train": cfg, "epoch_log": logs});
    run.finish(&a.out, config, &[&a.groups], &[&a.out])
}

#[derive(Debug, Serialize, Deserialize)]
struct RepRecord {
    id: String,
    vec: Vec<f64>,
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<(), CliError> {
    let run = Run::start("encode", &a.common)?;
    require(&[&a.model, &a.corpus])?;
    let params = EncoderParams::from_json(&read_text(&a.model)?)
        .map_err(|e| invalid(format!("{}: {e}", a.model.display())))?;
    let corpus = load_corpus(&a.corpus)?;
    let reps = encode_all(&corpus, &params);
    let recs: Vec<RepRecord> = corpus
        .iter()
        .zip(reps)
        .map(|(x, r)| RepRecord {
            id: x.id.clone(),
            vec: r.0,
        })
        .collect();
    write_atomic(&a.out, to_jsonl(&recs).as_bytes())?;
    run.finish(&a.out, json!({}), &[&a.model, &a.corpus], &[&a.out])
}

fn load_reps(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let recs: Vec<RepRecord> = read_jsonl(path)?;
    Ok(recs.into_iter().map(|r| (r.id, r.vec)).unzip())
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionRecord {
    id: String,
    label: Value,
}

pub fn cmd_cluster(a: &ClusterArgs) -> Result<(), CliError> {
    let run = Run::start("cluster", &a.common)?;
    require(&[&a.reps])?;
    let (ids, reps) = load_reps(&a.reps)?;
    let kcfg = KMeansConfig {
        k: a.k,
        max_iter: a.max_iter,
        tol: a.tol,
        seed: a.common.seed,
    };
    let (model, labels) = kmeans(&reps, &kcfg).map_err(invalid)?;
    let recs: Vec<PartitionRecord> = ids
        .into_iter()
        .zip(labels)
        .map(|(id, l)| PartitionRecord { id, label: json!(l) })
        .collect();
    write_atomic(&a.out, to_jsonl(&recs).as_bytes())?;
    let config = json!({
        "k": kcfg.k, "max_iter": kcfg.max_iter, "tol": kcfg.tol,
        "iterations": model.iterations, "inertia": model.inertia, "inertia_trace": model.inertia_trace,
    });
    run.finish(&a.out, config, &[&a.reps], &[&a.out])
}

fn label_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads `(id, label)` pairs from a partition file or a labeled corpus file.
fn load_labels(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let rows: Vec<Value> = read_jsonl(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let id = row.get("id").and_then(Value::as_str);
            let label = row.get("label").or_else(|| row.get("relation")).filter(|v| !v.is_null());
            match (id, label) {
                (Some(id), Some(l)) => Ok((id.to_string(), label_string(l))),
                _ => Err(invalid(format!(
                    "{}:{}: need \"id\" and a non-null \"label\" or \"relation\"",
                    path.display(),
                    i + 1
                ))),
            }
        })
        .collect()
}

fn aligned(pred: &[(String, String)], gold: &[(String, String)]) -> Result<(Partition, Partition), CliError> {
    let gold_map: HashMap<&str, &str> = gold.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
    if gold_map.len() != gold.len() {
        return Err(invalid("duplicate id in gold labels"));
    }
    let mut g = Vec::with_capacity(pred.len());
    for (id, _) in pred {
        let l = gold_map
            .get(id.as_str())
            .ok_or_else(|| invalid(format!("id {id} has no gold label")))?;
        g.push(*l);
    }
    let ids: Vec<String> = pred.iter().map(|(i, _)| i.clone()).collect();
    Ok((
        Partition::with_ids(ids.clone(), pred.iter().map(|(_, l)| l.as_str()).collect()),
        Partition::with_ids(ids, g),
    ))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String, CliError> {
    let run = Run::start("eval", &a.common)?;
    require(&[&a.pred, &a.gold])?;
    let pred = load_labels(&a.pred)?;
    let gold = load_labels(&a.gold)?;
    let (p, g) = aligned(&pred, &gold)?;
    let scores = score(&p, &g).map_err(invalid)?;
    let line = scores.to_json_line();
    if let Some(out) = &a.out {
        write_atomic(out, format!("{line}\n").as_bytes())?;
        run.finish(out, json!({}), &[&a.pred, &a.gold], &[out])?;
    }
    Ok(line)
}

pub fn cmd_project(a: &ProjectArgs) -> Result<(), CliError> {
    let run = Run::start("project", &a.common)?;
    require(&[&a.reps])?;
    let (ids, reps) = load_reps(&a.reps)?;
    let xy = project_2d(&reps).map_err(invalid)?;
    let lookup = |p: &Option<PathBuf>| -> Result<HashMap<String, String>, CliError> {
        match p {
            Some(p) => {
                require(&[p])?;
                Ok(load_labels(p)?.into_iter().collect())
            }
            None => Ok(HashMap::new()),
        }
    };
    let clusters = lookup(&a.partition)?;
    let gold = lookup(&a.gold)?;
    let mut csv = String::from("id,x,y,cluster,gold\n");
    for (id, p) in ids.iter().zip(&xy) {
        let c = clusters.get(id).map_or("", String::as_str);
        let g = gold.get(id).map_or("", String::as_str);
        writeln!(csv, "{},{},{},{},{}", csv_field(id), p[0], p[1], csv_field(c), csv_field(g)).expect("string write");
    }
    write_atomic(&a.out, csv.as_bytes())?;
    let mut inputs: Vec<&Path> = vec![&a.reps];
    inputs.extend(a.partition.as_deref());
    inputs.extend(a.gold.as_deref());
    run.finish(&a.out, json!({}), &inputs, &[&a.out])
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Intervene(a) => cmd_intervene(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Eval(a) => cmd_eval(a).map(|line| println!("{line}")),
        Command::Project(a) => cmd_project(a),
    }
}
