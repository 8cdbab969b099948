//! `axfi`: command-line front end for LUT emulation, fault-injection and
//! approximate-computing campaigns.

mod run_dir;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use axfi_core::campaign::{
    accuracy, compare_campaigns, histogram, measure_metric_overhead, run_campaign, threshold_for_top_k, with_workers,
    CampaignConfig, CampaignInputs, CampaignMode, CampaignReport, LutRef, RecordMetric, TrainConfig,
};
use axfi_core::faults::required_sample_size;
use axfi_core::qnn::{load_model, save_model};
use axfi_core::{characterize, load_mnist_idx, ExecPath, FaultClass};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::run_dir::{run_dir, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "axfi",
    version,
    about = "Approximate multiplier emulation and fault-injection workbench"
)]
struct Cli {
    /// Master seed; overrides the seed in configs and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Error statistics of a multiplier over all operand pairs.
    Characterize {
        /// "exact", a fixture such as "operand_truncate(3)", or a LUT file.
        lut: String,
        #[arg(long)]
        json: bool,
    },
    /// Train, calibrate and save the fixture CNN.
    TrainFixture(TrainArgs),
    /// Accuracy of a model on an IDX dataset.
    Infer(InferArgs),
    /// Run a fault-injection campaign from a JSON config.
    FiRun(RunArgs),
    /// Run an approximate-computing campaign from a JSON config.
    AxcRun(RunArgs),
    /// Compare the protection sets of an FI and an AxC report.
    Compare(CompareArgs),
    /// Statistical fault-injection sample size.
    SampleSize {
        /// Population size (number of fault sites).
        #[arg(long = "N")]
        population: u64,
        /// Margin of error.
        #[arg(long = "e")]
        margin: f64,
        /// Confidence level: 0.90, 0.95 or 0.99.
        #[arg(long = "conf")]
        confidence: f64,
        /// Expected proportion.
        #[arg(long = "p", default_value_t = 0.5)]
        p: f64,
    },
    /// Summarize a campaign report or histogram one of its metrics.
    Report(ReportArgs),
    /// Per-layer cost of the metrics relative to the layer itself.
    Overhead(OverheadArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PathArg {
    Float,
    Quant,
}

impl From<PathArg> for ExecPath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Float => ExecPath::Float,
            PathArg::Quant => ExecPath::Quant,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Model manifest to write; the weights go to a sibling `.bin`.
    #[arg(long, default_value = "fixture-cnn.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, default_value = "quant")]
    path: PathArg,
    /// Multiplier for the quantized path.
    #[arg(long)]
    lut: Option<String>,
    /// Deploy the multiplier only in this layer instead of every layer.
    #[arg(long, requires = "lut")]
    layer: Option<usize>,
    /// Use only the first N images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    /// Rerun even if the run directory already holds a report.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("cut").required(true).args(["threshold", "top_k"]))]
struct CompareArgs {
    fi: PathBuf,
    axc: PathBuf,
    /// Peak normalized error above which a neuron is protected.
    #[arg(long)]
    threshold: Option<f64>,
    /// Choose the threshold so the FI set holds the K most critical neurons.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A report.json or a run directory.
    run: PathBuf,
    /// Histogram of max_difference, psnr, ssim, depth or neuron_peak.
    #[arg(long)]
    hist: Option<String>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Histogram range as `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    range: Option<(f64, f64)>,
    /// Only records of this class.
    #[arg(long, value_parser = parse_class)]
    class: Option<FaultClass>,
}

#[derive(Debug, Args)]
struct OverheadArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum, default_value = "float")]
    path: PathArg,
    #[arg(long, default_value_t = 20)]
    limit: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    json: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn parse_class(s: &str) -> Result<FaultClass, String> {
    FaultClass::ALL
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| format!("unknown class '{s}' (critical, non_critical, masked)"))
}

/// Misuse detected after argument parsing; exits 1 like a clap error.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let workers = cli.workers;
    let outcome = match with_workers(workers, move || dispatch(cli)) {
        Ok(r) => r,
        Err(e) => Err(e.into()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for usage errors, 2 for bad input data.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<axfi_core::Error>() {
            return if core.is_data_error() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Characterize { lut, json } => cmd_characterize(&lut, json),
        Command::TrainFixture(a) => cmd_train(a, seed),
        Command::Infer(a) => cmd_infer(a),
        Command::FiRun(a) => cmd_run("fi-run", a, seed, cli.workers),
        Command::AxcRun(a) => cmd_run("axc-run", a, seed, cli.workers),
        Command::Compare(a) => cmd_compare(a),
        Command::SampleSize {
            population,
            margin,
            confidence,
            p,
        } => {
            println!("{}", required_sample_size(population, margin, confidence, p)?);
            Ok(())
        }
        Command::Report(a) => cmd_report(a),
        Command::Overhead(a) => cmd_overhead(a),
    }
}

fn cmd_characterize(lut: &str, json: bool) -> Result<()> {
    let lut = LutRef(lut.to_owned()).resolve(Path::new("."))?;
    let r = characterize(&lut);
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("multiplier  {}", r.name);
    println!("pairs       {}", r.pairs);
    for (name, v) in [
        ("MAE", r.mae),
        ("MAE%", r.mae_pct),
        ("AWCE", r.awce),
        ("AWCE%", r.awce_pct),
        ("MRE%", r.mre_pct),
        ("mean-ED", r.mean_ed),
        ("Var-ED", r.var_ed),
        ("RMS-ED", r.rms_ed),
    ] {
        println!("{name:<11} {v:.6}");
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let train = load_mnist_idx(&a.train_images, &a.train_labels)?;
    let test = load_mnist_idx(&a.test_images, &a.test_labels)?;
    let mut cfg = TrainConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    let start = Instant::now();
    let (model, summary) = axfi_core::campaign::train_fixture_model(&train, &test, &cfg)?;
    save_model(&model, &a.out)?;
    for (i, l) in summary.epoch_loss.iter().enumerate() {
        println!("epoch {:>2}  loss {l:.5}", i + 1);
    }
    println!("train accuracy       {:.4}", summary.train_accuracy);
    println!("test accuracy        {:.4}", summary.test_accuracy);
    println!("quant test accuracy  {:.4}", summary.quant_test_accuracy);
    println!("seconds              {:.1}", start.elapsed().as_secs_f64());
    println!("model                {}", a.out.display());
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut data = load_mnist_idx(&a.images, &a.labels)?;
    if let Some(n) = a.limit {
        data = data.slice(0..n.min(data.len()));
    }
    data.check_labels(model.num_classes)?;
    let path = ExecPath::from(a.path);
    let acc = match &a.lut {
        None => accuracy(&model, &data, path)?,
        Some(lut) => {
            if path != ExecPath::Quant {
                return Err(usage("--lut needs --path quant"));
            }
            let lut = LutRef(lut.clone()).resolve(Path::new("."))?;
            let plan = match a.layer {
                Some(l) => axfi_core::MultPlan::exact().with_layer(l, lut),
                None => axfi_core::MultPlan::uniform(&model, lut),
            };
            let taps = axfi_core::qnn::Taps::none();
            let mut correct = 0usize;
            for (img, &label) in data.images.iter().zip(&data.labels) {
                let t = axfi_core::qnn::forward(&model, img, path, &plan, &taps)?;
                correct += usize::from(t.prediction == label);
            }
            correct as f64 / data.len().max(1) as f64
        }
    };
    println!("images    {}", data.len());
    println!("accuracy  {acc:.4}");
    Ok(())
}

fn cmd_run(command: &str, a: RunArgs, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let config_raw = std::fs::read(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = CampaignConfig::load(&a.config)?;
    let fi = command == "fi-run";
    if cfg.mode.is_fi() != fi {
        return Err(usage(format!(
            "mode '{}' belongs to {}",
            cfg.mode.tag(),
            if fi { "axc-run" } else { "fi-run" }
        )));
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let dir = match cfg.output_dir.take() {
        Some(d) => d,
        None => run_dir(command, &serde_json::to_string(&cfg)?, cfg.master_seed),
    };
    let report_path = dir.join("report.json");
    if report_path.exists() && !a.force {
        eprintln!("{} already holds a report; pass --force to rerun", dir.display());
        println!("{}", report_path.display());
        return Ok(());
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    if a.force {
        for f in ["report.json", "faults.json", "checkpoint.jsonl"] {
            let p = dir.join(f);
            if p.exists() {
                std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    cfg.output_dir = Some(dir.clone());

    let mut manifest = RunManifest::new(command);
    manifest.config_path = Some(a.config.clone());
    manifest.config_sha256 = Some(axfi_core::dataset::sha256_hex(&config_raw));
    manifest.seeds.insert("master_seed".into(), cfg.master_seed);
    manifest.seeds.insert("subset_seed".into(), cfg.dataset.subset_seed);
    if let CampaignMode::AxMultPlus { suppressor, .. } | CampaignMode::SuppressorOnly { suppressor } = &cfg.mode {
        manifest.seeds.insert("suppressor_seed".into(), suppressor.seed);
    }
    manifest.workers = workers;
    manifest.add_input(&cfg.model)?;
    manifest.add_input(&cfg.model.with_extension("bin"))?;
    manifest.add_input(&cfg.dataset.images)?;
    manifest.add_input(&cfg.dataset.labels)?;
    if let CampaignMode::AxMult { lut } | CampaignMode::AxMultPlus { lut, .. } = &cfg.mode {
        let p = Path::new(lut.0.trim());
        if p.is_file() {
            manifest.add_input(p)?;
        }
    }

    let inputs = CampaignInputs::load(&cfg)?;
    let report = run_campaign(&cfg, &inputs, None)?;
    report.save(&report_path)?;
    let csv_path = dir.join("records.csv");
    std::fs::write(&csv_path, report.records_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    manifest.outputs = vec![report_path.clone(), csv_path];
    let manifest_path = manifest.write(&dir)?;
    manifest.outputs.push(manifest_path);

    print_summary(&report);
    println!("run directory     {}", dir.display());
    Ok(())
}

fn print_summary(r: &CampaignReport) {
    println!("mode              {}", r.mode_tag);
    println!("path              {:?}", r.path);
    println!("images            {}", r.dataset.images);
    println!("records           {}", r.records.len());
    println!("compromised layer {}", r.compromised_layer);
    println!("measured layer    {}", r.measured_layer);
    println!("golden accuracy   {:.4}", r.golden_accuracy);
    println!("mode accuracy     {:.4}", r.mode_accuracy);
    println!("accuracy drop     {:.4}", r.accuracy_drop);
    for c in FaultClass::ALL {
        println!("{:<17} {}", c.as_str(), r.class_counts.get(c));
    }
    let frac = |f: Option<f64>| f.map_or("-".to_owned(), |v| format!("{v:.4}"));
    println!(
        "masked depth <=0  {}  <=1  {}",
        frac(r.masked_depth.fraction_le_0),
        frac(r.masked_depth.fraction_le_1)
    );
}

fn load_report(path: &Path) -> Result<CampaignReport> {
    let path = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    Ok(CampaignReport::load(&path)?)
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let fi = load_report(&a.fi)?;
    let axc = load_report(&a.axc)?;
    let threshold = match (a.threshold, a.top_k) {
        (Some(t), _) => t,
        (None, Some(k)) => threshold_for_top_k(&fi.neuron_peak_error, k)
            .ok_or_else(|| usage(format!("no threshold isolates the top {k} FI neurons")))?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let c = compare_campaigns(&fi, &axc, threshold)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&c)?);
        return Ok(());
    }
    println!("layer      {}", c.layer);
    println!("threshold  {}", c.threshold);
    println!("neurons    {}", c.reference_peaks.len());
    println!("fi set     {}", c.reference.len());
    println!("axc set    {}", c.candidate.len());
    println!("recall {:.3}", c.recall);
    println!("jaccard {:.3}", c.jaccard);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let r = load_report(&a.run)?;
    let Some(metric) = a.hist else {
        print_summary(&r);
        let mut out = String::from("layer  name          numel  mean_err      max_err       changed  bitflip%\n");
        for l in &r.layers {
            let flips = l.mean_bitflip_ratio.map_or("-".to_owned(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "{:>5}  {:<12} {:>6}  {:<12.6e}  {:<12.6e}  {:>7.4}  {flips}",
                l.layer, l.name, l.numel, l.mean_normalized_error, l.max_normalized_error, l.changed_fraction
            );
        }
        print!("{out}");
        return Ok(());
    };
    let metric: RecordMetric = metric.parse()?;
    if metric == RecordMetric::NeuronPeak && a.class.is_some() {
        return Err(usage("--class does not apply to neuron_peak"));
    }
    let values = r.metric_values(metric, a.class);
    let h = histogram(&values, a.bins, a.range)?;
    print!("{}", h.to_csv());
    eprintln!(
        "values {}  below {}  above {}  non-finite {}",
        values.len(),
        h.below,
        h.above,
        h.sentinel
    );
    Ok(())
}

fn cmd_overhead(a: OverheadArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_mnist_idx(&a.images, &a.labels)?;
    let n = a.limit.min(data.len());
    if n == 0 {
        bail!(anyhow!(axfi_core::Error::EmptyDataset));
    }
    let rows = measure_metric_overhead(&model, &data.images[..n], a.path.into(), a.repeats)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("layer  name          numel  forward_us  maxdiff%   psnr%      ssim%");
    for r in &rows {
        println!(
            "{:>5}  {:<12} {:>6}  {:>10.2}  {:>8.2}  {:>8.2}  {:>8.2}",
            r.layer,
            r.name,
            r.numel,
            r.forward_seconds * 1e6,
            r.max_difference.mean_pct,
            r.psnr.mean_pct,
            r.ssim.mean_pct
        );
    }
    Ok(())
}
