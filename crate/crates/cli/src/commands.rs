use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use eqlab_core::bench::{latency_vs_rmps, BenchConfig};
use eqlab_core::complexity::{rmps_model, ModelSpec};
use eqlab_core::neural::{Architecture, Equalizer, Family, TrainConfig, DEFAULT_MEMORY};
use eqlab_core::search::{baseline_eval, sweep as run_sweep, Budget, SweepConfig};
use eqlab_core::txrx::metrics::{improvement_z, EvalResult};
use eqlab_core::txrx::{make_dataset, Dataset, LinkConfig};
use eqlab_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{sibling, RunManifest};

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} {} not found", path.display()),
        )))
    }
}

/// Reads a JSON config, reporting parse failures as `path:line:column`.
fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    require(path, what)?;
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

/// Writes to stdout; a reader that went away (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_list<T>(text: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(s.trim()))
        .collect()
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Output {
    Table,
    Json,
    Both,
}

#[derive(Args)]
pub struct RmpsArgs {
    /// Model config (JSON `ModelSpec`).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    format: Output,
    /// Also write the JSON report here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn rmps(a: RmpsArgs) -> Result<()> {
    let spec: ModelSpec = read_json(&a.config, "model config")?;
    let report =
        rmps_model(&spec).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    if matches!(a.format, Output::Table | Output::Both) {
        emit(&report.table())?;
    }
    if matches!(a.format, Output::Json | Output::Both) {
        print_json(&report)?;
    }
    if let Some(out) = &a.out {
        let m = RunManifest::new("rmps", &spec, &[&a.config], &[out], &[]);
        write_json(out, &json!({ "manifest_hash": m.hash(), "report": report }))?;
        m.write(out)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Ssmf,
    Twc,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Built-in link preset; `--config` replaces it.
    #[arg(long, visible_alias = "fiber", value_enum, default_value = "twc")]
    link: Preset,
    /// Link config (JSON `LinkConfig`).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, visible_alias = "power-dbm")]
    launch_power_dbm: Option<f64>,
    /// Override the span count (0 is back-to-back).
    #[arg(long)]
    spans: Option<usize>,
    /// Turn amplifier noise off.
    #[arg(long)]
    noise_off: bool,
    /// Set the nonlinear coefficient to zero.
    #[arg(long)]
    linear: bool,
    #[arg(long, visible_alias = "train-syms", default_value_t = 1 << 16)]
    train_symbols: usize,
    #[arg(long, visible_alias = "test-syms", default_value_t = 1 << 16)]
    test_symbols: usize,
    /// Train-frame PRBS seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Test-frame PRBS seed; defaults to `seed + 1`.
    #[arg(long)]
    test_seed: Option<u64>,
    /// Equalizer window recorded in the dataset.
    #[arg(long, default_value_t = DEFAULT_MEMORY)]
    memory: usize,
    #[arg(long, short)]
    out: PathBuf,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut link = match &a.config {
        Some(p) => read_json::<LinkConfig>(p, "link config")?,
        None => match a.link {
            Preset::Ssmf => LinkConfig::ssmf(),
            Preset::Twc => LinkConfig::twc(),
        },
    };
    if let Some(p) = a.launch_power_dbm {
        link.launch_power_dbm = p;
    }
    if let Some(n) = a.spans {
        link.fiber.span_count = n;
    }
    if a.noise_off {
        link = link.with_noise_off();
    }
    if a.linear {
        link = link.with_linear_fiber();
    }
    let test_seed = a.test_seed.unwrap_or(a.seed.wrapping_add(1));
    let resolved = json!({
        "link": link,
        "train_symbols": a.train_symbols,
        "test_symbols": a.test_symbols,
        "memory": a.memory,
    });
    let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
    let m = RunManifest::new(
        "simulate",
        &resolved,
        &inputs,
        &[&a.out],
        &[a.seed, test_seed],
    );
    let mut ds = make_dataset(
        &link,
        a.train_symbols,
        a.test_symbols,
        (a.seed, test_seed),
        a.memory,
    )?;
    ds.header.manifest_hash = Some(m.hash());
    ds.write(&a.out)?;
    m.write(&a.out)?;
    let test_cdc = EvalResult::new(ds.test.evaluate()?, None);
    print_json(&json!({
        "dataset": a.out.display().to_string(),
        "config_hash": ds.header.config_hash,
        "xcorr_max": ds.header.xcorr_max,
        "xcorr_threshold": ds.header.xcorr_threshold,
        "test_cdc": test_cdc,
    }))
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    family: Family,
    /// Hyperparameters in family order (mlp: n1,n2,n3; cnn-mlp:
    /// filters,kernel,n1,n2; bilstm: hidden; cnn-bilstm: filters,kernel,hidden).
    #[arg(long)]
    hyper: String,
    /// Window length; defaults to the dataset's.
    #[arg(long)]
    memory: Option<usize>,
    /// Training config (JSON `TrainConfig`); flags below override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

fn train_config(
    config: &Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => read_json::<TrainConfig>(p, "training config")?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(l) = lr {
        cfg.learning_rate = l;
    }
    if let Some(b) = batch {
        cfg.batch_size = b;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    require(&a.dataset, "dataset")?;
    let ds = Dataset::read(&a.dataset)?;
    let memory = a.memory.unwrap_or(ds.header.train.window.memory);
    let values = parse_list(&a.hyper, |s| {
        s.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad hyperparameter {s:?}")))
    })?;
    let arch = Architecture::from_values(a.family, &values)?;
    let cfg = train_config(&a.config, a.epochs, a.lr, a.batch, a.seed)?;
    let mut inputs: Vec<&Path> = vec![&a.dataset];
    inputs.extend(a.config.iter().map(|p| p.as_path()));
    let resolved = json!({ "architecture": arch, "memory": memory, "train": cfg });
    let m = RunManifest::new("train", &resolved, &inputs, &[&a.out], &[cfg.seed]);
    let (mut eq, reports) = Equalizer::fit(arch, memory, &ds.train, &cfg)?;
    eq.header.manifest_hash = Some(m.hash());
    eq.save(&a.out)?;
    let report_path = sibling(&a.out, ".losses.json");
    write_json(
        &report_path,
        &json!({ "manifest_hash": m.hash(), "x": reports[0], "y": reports[1] }),
    )?;
    m.write(&a.out)?;
    print_json(&json!({
        "model": a.out.display().to_string(),
        "architecture": arch.to_string(),
        "rmps": eq.rmps(),
        "params": eq.params(),
        "best_epoch": [reports[0].best_epoch, reports[1].best_epoch],
        "loss_curves": report_path.display().to_string(),
    }))
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    require(&a.dataset, "dataset")?;
    require(&a.model, "model")?;
    let ds = Dataset::read(&a.dataset)?;
    let eq = Equalizer::load(&a.model)?;
    let out = eq.equalize(&ds.test)?;
    let base = baseline_eval(&ds, eq.memory())?;
    let eval = EvalResult::new(out.count()?, Some(base.q_db));
    let report = json!({
        "architecture": eq.header.architecture.to_string(),
        "rmps": eq.rmps(),
        "equalized": eval,
        "unequalized": base,
        "improvement_z": improvement_z(base.count(), eval.count()),
    });
    if let Some(o) = &a.out {
        let m = RunManifest::new("evaluate", &json!({}), &[&a.dataset, &a.model], &[o], &[]);
        write_json(o, &json!({ "manifest_hash": m.hash(), "result": report }))?;
        m.write(o)?;
    }
    print_json(&report)
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated families.
    #[arg(long, default_value = "mlp,cnn-mlp,bilstm,cnn-bilstm")]
    families: String,
    /// Comma-separated RMpS budgets, e.g. `1e3,1e4`.
    #[arg(long, default_value = "1e3,1e4,1e5,1e6")]
    budgets: String,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    memory: Option<usize>,
    /// Training config used for every trial.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    require(&a.dataset, "dataset")?;
    let ds = Dataset::read(&a.dataset)?;
    let families = parse_list(&a.families, |s| s.parse::<Family>())?;
    let budgets = parse_list(&a.budgets, |s| s.parse::<Budget>().map(|b| b.max_rmps))?;
    let memory = a.memory.unwrap_or(ds.header.train.window.memory);
    let mut cfg = SweepConfig::new(families, budgets, a.trials, a.seed, memory);
    cfg.train = train_config(&a.config, a.epochs, None, None, None)?;
    if cfg
        .budgets
        .iter()
        .any(|&b| b >= eqlab_core::search::LONG_RUNNING_BUDGET)
    {
        eprintln!("eqlab: budgets of 1e7 and above take a long time to search");
    }
    let json_path = sibling(&a.out, ".json");
    let mut inputs: Vec<&Path> = vec![&a.dataset];
    inputs.extend(a.config.iter().map(|p| p.as_path()));
    let m = RunManifest::new("sweep", &cfg, &inputs, &[&a.out, &json_path], &[a.seed]);
    let result = run_sweep(&ds, &cfg)?;
    let hash = m.hash();
    std::fs::write(&a.out, result.to_csv(Some(&hash)))?;
    write_json(
        &json_path,
        &json!({ "manifest_hash": hash, "result": result }),
    )?;
    m.write(&a.out)?;
    emit(&result.to_csv(Some(&hash)))
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "mlp,cnn-mlp,bilstm,cnn-bilstm")]
    families: String,
    #[arg(long, default_value = "1e4,1e5,1e6,1e7")]
    decades: String,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Windows per forward pass.
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = DEFAULT_MEMORY)]
    memory: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bench config (JSON `BenchConfig`); replaces the flags above.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => read_json::<BenchConfig>(p, "bench config")?,
        None => BenchConfig {
            families: parse_list(&a.families, |s| s.parse::<Family>())?,
            decades: parse_list(&a.decades, |s| s.parse::<Budget>().map(|b| b.max_rmps))?,
            memory: a.memory,
            batch: a.batch,
            warmup: a.warmup,
            iters: a.iters,
            seed: a.seed,
        },
    };
    if cfg.iters < eqlab_core::bench::MIN_ITERS {
        eprintln!(
            "eqlab: fewer than {} iterations; treat the statistics as rough",
            eqlab_core::bench::MIN_ITERS
        );
    }
    let json_path = sibling(&a.out, ".json");
    let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
    let m = RunManifest::new("bench", &cfg, &inputs, &[&a.out, &json_path], &[cfg.seed]);
    let table = latency_vs_rmps(&cfg)?;
    let hash = m.hash();
    std::fs::write(&a.out, table.to_csv(Some(&hash)))?;
    write_json(
        &json_path,
        &json!({ "manifest_hash": hash, "result": table }),
    )?;
    m.write(&a.out)?;
    emit(&table.to_csv(Some(&hash)))?;
    for (family, rho) in &table.spearman {
        match rho {
            Some(r) => emit(&format!("spearman {family}: {r:.3}\n"))?,
            None => emit(&format!("spearman {family}: n/a\n"))?,
        }
    }
    Ok(())
}
