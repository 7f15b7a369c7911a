//! Command-line front end.
//!
//! Settings resolve as flag, then `--config` JSON, then `CLONEFORGE_SEED` (for
//! the seed only), then built-in defaults. Each command that writes an output
//! directory leaves a `run_manifest.json` there from which `replay` can rerun
//! it.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{load_cifar10_bin, load_image_dir, Corpus};
use crate::encoder::MarginMode;
use crate::error::{Error, Result};
use crate::harness::{run_ablation_grid, run_benchmark, TrialSpec, Variant};
use crate::service_api::{serve, AppState, ServiceConfig};
use crate::trainer::{score_corpus, train_anchor, TrainConfig, DEFAULT_SCORE_BATCH};

pub const SEED_ENV: &str = "CLONEFORGE_SEED";
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "cloneforge", version, about = "Per-anchor clone retrieval with PU-trained encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize CIFAR-10 batches or an image directory into a corpus store.
    Ingest(IngestArgs),
    /// Train on one anchor and rank the whole corpus.
    FindSimilar(FindArgs),
    /// Multi-anchor benchmark.
    Bench(BenchArgs),
    /// The five-row ablation grid on shared anchors.
    Ablate(BenchArgs),
    /// δ sweep per anchor plus the aggregate.
    Calibrate(BenchArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file supplying any flag by its snake_case name.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Falls back to the config file, then CLONEFORGE_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Use a fixed margin instead of learning it.
    #[arg(long)]
    pub fixed_margin: Option<f32>,
    #[arg(long)]
    pub lambda_var: Option<f32>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// CIFAR-10 binary batch files.
    #[arg(long, num_args = 1.., conflicts_with = "dir")]
    pub cifar: Vec<PathBuf>,
    /// Directory of PNG/JPEG/PPM images.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Store file to write; its manifest goes to `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FindArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Corpus index or image id.
    #[arg(long)]
    pub anchor: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    PuL2,
    PuCosine,
    Svdd,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::PuL2 => Variant::PuL2,
            VariantArg::PuCosine => Variant::PuCosine,
            VariantArg::Svdd => Variant::Svdd,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Anchor-level parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub n_test_pos: Option<usize>,
    #[arg(long)]
    pub n_test_neg: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<SocketAddr>,
    #[arg(long)]
    pub n_test_pos: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a `--config` file. Any flag may appear, plus a full `train`
/// tree.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub cifar: Option<Vec<PathBuf>>,
    pub dir: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub anchor: Option<String>,
    pub anchors: Option<usize>,
    pub k: Option<usize>,
    pub jobs: Option<usize>,
    pub variant: Option<VariantArg>,
    pub n_test_pos: Option<usize>,
    pub n_test_neg: Option<usize>,
    pub state_dir: Option<PathBuf>,
    pub addr: Option<SocketAddr>,
    pub epochs: Option<usize>,
    pub embed_dim: Option<usize>,
    pub fixed_margin: Option<f32>,
    pub lambda_var: Option<f32>,
    pub weight_decay: Option<f32>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    if let Some(s) = flag.or(file.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not a u64"))),
        Err(_) => Ok(0),
    }
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("--{name} is required")))
}

fn resolve_train(flags: &TrainFlags, file: &FileConfig, seed: u64) -> Result<TrainConfig> {
    let mut t = file.train.unwrap_or_default();
    t.seed = seed;
    if let Some(e) = flags.epochs.or(file.epochs) {
        t.epochs = e;
    }
    if let Some(d) = flags.embed_dim.or(file.embed_dim) {
        t.encoder.embed_dim = d;
    }
    if let Some(m) = flags.fixed_margin.or(file.fixed_margin) {
        t.encoder.margin = MarginMode::Fixed { value: m };
    }
    if let Some(l) = flags.lambda_var.or(file.lambda_var) {
        t.loss.lambda_var = l;
    }
    if let Some(w) = flags.weight_decay.or(file.weight_decay) {
        t.weight_decay = w;
    }
    t.validate()?;
    Ok(t)
}

/// A fully resolved command, as recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Ingest {
        cifar: Vec<PathBuf>,
        dir: Option<PathBuf>,
        out: PathBuf,
    },
    FindSimilar {
        store: PathBuf,
        anchor: usize,
        k: usize,
        out: PathBuf,
        train: TrainConfig,
    },
    Bench {
        store: PathBuf,
        anchors: usize,
        out: PathBuf,
        jobs: usize,
        spec: TrialSpec,
    },
    Ablate {
        store: PathBuf,
        anchors: usize,
        out: PathBuf,
        jobs: usize,
        spec: TrialSpec,
    },
    Calibrate {
        store: PathBuf,
        anchors: usize,
        out: PathBuf,
        jobs: usize,
        spec: TrialSpec,
    },
}

impl Invocation {
    pub fn out(&self) -> &Path {
        match self {
            Invocation::Ingest { out, .. }
            | Invocation::FindSimilar { out, .. }
            | Invocation::Bench { out, .. }
            | Invocation::Ablate { out, .. }
            | Invocation::Calibrate { out, .. } => out,
        }
    }

    fn set_out(&mut self, new: PathBuf) {
        match self {
            Invocation::Ingest { out, .. }
            | Invocation::FindSimilar { out, .. }
            | Invocation::Bench { out, .. }
            | Invocation::Ablate { out, .. }
            | Invocation::Calibrate { out, .. } => *out = new,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Ingest { .. } => None,
            Invocation::FindSimilar { train, .. } => Some(train.seed),
            Invocation::Bench { spec, .. } | Invocation::Ablate { spec, .. } | Invocation::Calibrate { spec, .. } => {
                Some(spec.train.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub corpus_checksum: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_csv(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create_file(path)?;
    f(&mut w).and_then(|_| std::io::Write::flush(&mut w)).map_err(|e| Error::io(path, e))
}

fn load_store(path: &Path) -> Result<Corpus> {
    let corpus = Corpus::load_store(path)?;
    log::info!("loaded {} images from {}", corpus.len(), path.display());
    Ok(corpus)
}

fn resolve_anchor(corpus: &Corpus, anchor: &str) -> Result<usize> {
    if let Ok(i) = anchor.parse::<usize>() {
        if i < corpus.len() {
            return Ok(i);
        }
        return Err(Error::OutOfRange {
            index: i,
            len: corpus.len(),
        });
    }
    corpus
        .index_of(anchor)
        .ok_or_else(|| Error::InvalidArgument(format!("no image with id {anchor:?}")))
}

fn bench_invocation(args: &BenchArgs, kind: &str) -> Result<Invocation> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_seed(args.common.seed, &file)?;
    let train = resolve_train(&args.train, &file, seed)?;
    let defaults = TrialSpec::default();
    let spec = TrialSpec {
        anchor_id: 0,
        n_test_pos: args.n_test_pos.or(file.n_test_pos).unwrap_or(defaults.n_test_pos),
        n_test_neg: args.n_test_neg.or(file.n_test_neg).unwrap_or(defaults.n_test_neg),
        train,
        variant: args.variant.or(file.variant).map(Variant::from).unwrap_or(Variant::PuL2),
    };
    let store = required(args.store.clone().or(file.store.clone()), "store")?;
    let anchors = args.anchors.or(file.anchors).unwrap_or(25);
    let out = required(args.out.clone().or(file.out.clone()), "out")?;
    let jobs = args.jobs.or(file.jobs).unwrap_or(1).max(1);
    Ok(match kind {
        "bench" => Invocation::Bench {
            store,
            anchors,
            out,
            jobs,
            spec,
        },
        "ablate" => Invocation::Ablate {
            store,
            anchors,
            out,
            jobs,
            spec,
        },
        _ => Invocation::Calibrate {
            store,
            anchors,
            out,
            jobs,
            spec,
        },
    })
}

/// Executes a resolved command and writes its manifest.
pub fn execute(inv: &Invocation) -> Result<()> {
    let started_at = now();
    let out = inv.out().to_path_buf();
    let checksum = match inv {
        Invocation::Ingest { cifar, dir, out } => {
            let corpus = match dir {
                Some(d) => load_image_dir(d),
                None if !cifar.is_empty() => load_cifar10_bin(cifar),
                None => Err(Error::InvalidArgument("give --cifar files or --dir".into())),
            }?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            corpus.save_store(out)?;
            let m = corpus.manifest();
            println!(
                "ingested {} images from {} files ({} skipped) into {}",
                m.count,
                m.files_scanned,
                m.skipped.len(),
                out.display()
            );
            for s in &m.skipped {
                println!("  skipped {}: {}", s.path, s.reason);
            }
            println!("checksum {}", m.checksum);
            m.checksum.clone()
        }
        other => {
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            run_report_command(other)?
        }
    };
    let manifest = RunManifest {
        invocation: inv.clone(),
        seed: inv.seed(),
        corpus_checksum: checksum,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: now(),
    };
    let path = match inv {
        Invocation::Ingest { out, .. } => {
            let mut s = out.as_os_str().to_owned();
            s.push(".run.json");
            PathBuf::from(s)
        }
        _ => out.join(MANIFEST_FILE),
    };
    write_json(&path, &manifest)
}

fn run_report_command(inv: &Invocation) -> Result<String> {
    match inv {
        Invocation::FindSimilar {
            store,
            anchor,
            k,
            out,
            train,
        } => {
            let corpus = load_store(store)?;
            if *anchor >= corpus.len() {
                return Err(Error::OutOfRange {
                    index: *anchor,
                    len: corpus.len(),
                });
            }
            let model = train_anchor(&corpus, *anchor, train)?;
            let table = score_corpus(&model, &corpus, DEFAULT_SCORE_BATCH)?;
            model.save(&out.join("model.cfe"))?;
            with_csv(&out.join("loss.csv"), |w| model.write_loss_csv(w))?;
            let top = table.top_k(*k);
            with_csv(&out.join("ranked.csv"), |w| {
                use std::io::Write;
                writeln!(w, "rank,candidate_id,name,score,is_clone")?;
                for (r, &(i, s)) in top.iter().enumerate() {
                    writeln!(w, "{},{i},{},{s},{}", r + 1, corpus.ids()[i], table.is_clone[i])?;
                }
                if let Some((i, s)) = table.least_similar() {
                    writeln!(w, "least,{i},{},{s},{}", corpus.ids()[i], table.is_clone[i])?;
                }
                Ok(())
            })?;
            let clones = table.is_clone.iter().filter(|&&c| c).count();
            println!(
                "anchor {anchor} ({}): mu={:.4} m={:.4} tau={:.4}; {clones} of {} images flagged as clones",
                corpus.ids()[*anchor],
                model.mu,
                model.m,
                model.tau,
                corpus.len()
            );
            for (r, &(i, s)) in top.iter().enumerate() {
                println!("  {:>3}. {:<24} s={s:.4}{}", r + 1, corpus.ids()[i], if table.is_clone[i] { "  clone" } else { "" });
            }
            Ok(corpus.checksum().to_string())
        }
        Invocation::Bench {
            store,
            anchors,
            out,
            jobs,
            spec,
        }
        | Invocation::Calibrate {
            store,
            anchors,
            out,
            jobs,
            spec,
        } => {
            let corpus = load_store(store)?;
            let (report, timings) = run_benchmark(&corpus, *anchors, spec, *jobs)?;
            with_csv(&out.join("calibration.csv"), |w| report.write_calibration_csv(w))?;
            if matches!(inv, Invocation::Bench { .. }) {
                write_json(&out.join("report.json"), &report)?;
                write_json(&out.join("timings.json"), &timings)?;
                with_csv(&out.join("trials.csv"), |w| report.write_trials_csv(w))?;
                with_csv(&out.join("mu_m.csv"), |w| report.write_mu_m_csv(w))?;
                let a = report.aggregate;
                let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "--".into());
                println!(
                    "{} anchors [{}]: P={} R={} F1={} AUROC={:.2} AUPRC={:.2} F1_best={:.2}",
                    report.anchors.len(),
                    spec.variant,
                    pct(a.precision),
                    pct(a.recall),
                    pct(a.f1),
                    100.0 * a.auroc,
                    100.0 * a.auprc,
                    100.0 * a.f1_best
                );
                if report.m_stats.mean != 0.0 || report.mu_stats.mean != 0.0 {
                    println!(
                        "mu {:.4} ± {:.4}, m {:.4} ± {:.4}; wall {:.1}s",
                        report.mu_stats.mean, report.mu_stats.std, report.m_stats.mean, report.m_stats.std, timings.wall_secs
                    );
                }
            } else {
                write_json(&out.join("calibration.json"), &report.calibration)?;
                println!("delta      P       R       F1");
                for r in &report.calibration {
                    println!("{:+.2}  {:.4}  {:.4}  {:.4}", r.delta, r.precision, r.recall, r.f1);
                }
            }
            Ok(report.corpus_checksum)
        }
        Invocation::Ablate {
            store,
            anchors,
            out,
            jobs,
            spec,
        } => {
            let corpus = load_store(store)?;
            let table = run_ablation_grid(&corpus, *anchors, spec, *jobs)?;
            with_csv(&out.join("ablation.csv"), |w| table.write_csv(w))?;
            write_json(&out.join("ablation.json"), &table)?;
            let mut text = Vec::new();
            table.write_csv(&mut text).map_err(|e| Error::io(out, e))?;
            print!("{}", String::from_utf8_lossy(&text));
            Ok(corpus.checksum().to_string())
        }
        Invocation::Ingest { .. } => unreachable!("handled by execute"),
    }
}

fn resolve(command: Command) -> Result<Option<Invocation>> {
    Ok(Some(match command {
        Command::Ingest(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let cifar = if a.cifar.is_empty() {
                file.cifar.clone().unwrap_or_default()
            } else {
                a.cifar
            };
            Invocation::Ingest {
                dir: a.dir.or(file.dir),
                cifar,
                out: required(a.out.or(file.out), "out")?,
            }
        }
        Command::FindSimilar(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = resolve_seed(a.common.seed, &file)?;
            let train = resolve_train(&a.train, &file, seed)?;
            let store = required(a.store.or(file.store.clone()), "store")?;
            let anchor = required(a.anchor.or(file.anchor.clone()), "anchor")?;
            let corpus = load_store(&store)?;
            Invocation::FindSimilar {
                anchor: resolve_anchor(&corpus, &anchor)?,
                store,
                k: a.k.or(file.k).unwrap_or(20),
                out: required(a.out.or(file.out), "out")?,
                train,
            }
        }
        Command::Bench(a) => bench_invocation(&a, "bench")?,
        Command::Ablate(a) => bench_invocation(&a, "ablate")?,
        Command::Calibrate(a) => bench_invocation(&a, "calibrate")?,
        Command::Serve(a) => {
            let file = FileConfig::load(a.common.config.as_deref())?;
            let seed = resolve_seed(a.common.seed, &file)?;
            let mut config = ServiceConfig::new(required(a.state_dir.or(file.state_dir), "state-dir")?);
            config.train = file.train.unwrap_or_default();
            config.train.seed = seed;
            if let Some(n) = a.n_test_pos.or(file.n_test_pos) {
                config.n_test_pos = n;
            }
            let store = required(a.store.or(file.store), "store")?;
            let addr = a
                .addr
                .or(file.addr)
                .unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
            let corpus = Arc::new(load_store(&store)?);
            let state = AppState::open(corpus, config)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new("<runtime>"), e))?;
            rt.block_on(serve(state, addr))?;
            return Ok(None);
        }
        Command::Replay(a) => {
            let mut inv = RunManifest::load(&a.manifest)?.invocation;
            if let Some(out) = a.out {
                inv.set_out(out);
            }
            inv
        }
    }))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match resolve(cli.command).and_then(|inv| inv.map_or(Ok(()), |i| execute(&i))) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
