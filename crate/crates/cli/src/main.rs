use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tabimpute::bench::{
    default_factory, emit_report, generate_preset, merge_reports, post_table, results_table, run_imputation_on,
    run_post_imputation_on, series_table, ExperimentConfig, MetricsReport, SyntheticPreset,
};
use tabimpute::imputers::{build_imputer, ImputationResult, MethodParams};
use tabimpute::metrics::AurocAverage;
use tabimpute::missingness::{inject_mcar_excluding, MissSpec};
use tabimpute::tabular::{load_csv, Mask, Schema};

#[derive(Parser)]
#[command(name = "tabimpute", version, about = "Mixed-type imputation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Remove cells completely at random and write the data and its mask.
    Inject(InjectArgs),
    /// Fill the missing cells of a CSV with one method.
    Impute(ImputeArgs),
    /// Cross-validated imputation benchmark across methods and rates.
    Bench(BenchArgs),
    /// Downstream prediction benchmark on imputed datasets.
    Predict(PredictArgs),
    /// Render tables and series from a saved report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct SchemaArgs {
    /// Schema TOML; the Framingham schema when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Text marking a missing cell.
    #[arg(long, default_value = "")]
    missing_token: String,
}

impl SchemaArgs {
    fn schema(&self) -> Result<Schema> {
        match &self.schema {
            Some(p) => Schema::load(p).with_context(|| format!("loading schema {}", p.display())),
            None => Ok(Schema::framingham()),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "framingham-like")]
    preset: SyntheticPreset,
    #[arg(long, default_value_t = 9310)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
    /// Also write the dataset's schema here.
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Columns to leave intact (the schema's label is always kept).
    #[arg(long, value_delimiter = ',')]
    keep: Vec<String>,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    mask_out: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long, short)]
    method: String,
    #[arg(long, short)]
    input: PathBuf,
    /// Observed-cell mask (1 observed, 0 missing) applied on top of the input.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Method overrides as TOML, e.g. `k = 7` or `epochs = 50`.
    #[arg(long)]
    params: Option<String>,
    #[arg(long, short)]
    output: PathBuf,
    /// Write categorical scores (probability of 1) here.
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    auroc_average: Option<AurocAverage>,
    #[arg(long)]
    missing_token: Option<String>,
    /// Directory for result files.
    #[arg(long, short, default_value = "results")]
    output: PathBuf,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(r) = &self.rates {
            c.rates = r.clone();
        }
        if let Some(m) = &self.methods {
            c.methods = m.clone();
        }
        if let Some(f) = self.folds {
            c.folds = f;
        }
        if let Some(r) = self.repeats {
            c.repeats = r;
        }
        if let Some(a) = self.auroc_average {
            c.auroc_average = a;
        }
        if let Some(t) = &self.missing_token {
            c.missing_token = t.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Also run the prediction benchmark at the configured rate.
    #[arg(long)]
    with_predict: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Missing rate; the config's `post_rate` when omitted.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Rewrite the CSV files here instead of printing.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn synth(a: SynthArgs) -> Result<()> {
    let table = generate_preset(a.preset, a.rows, a.seed)?;
    table.write_csv(&a.output, "")?;
    if let Some(p) = a.schema_out {
        table.schema().save(&p)?;
    }
    log::info!("wrote {} rows to {}", table.n_rows(), a.output.display());
    Ok(())
}

fn inject(a: InjectArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let table = load_csv(&a.input, &schema, &a.schema.missing_token)?;
    let mut keep = Vec::new();
    for name in &a.keep {
        keep.push(schema.index_of(name).with_context(|| format!("no column `{name}`"))?);
    }
    keep.extend(schema.label_index());
    let (corrupted, mask) = inject_mcar_excluding(&table, MissSpec::new(a.rate, a.seed)?, &keep)?;
    corrupted.write_csv(&a.output, &a.schema.missing_token)?;
    mask.write_csv(&schema, &a.mask_out)?;
    log::info!("removed {} cells", corrupted.missing_count() - table.missing_count());
    Ok(())
}

fn impute(a: ImputeArgs) -> Result<()> {
    let schema = a.schema.schema()?;
    let mut table = load_csv(&a.input, &schema, &a.schema.missing_token)?;
    if let Some(p) = &a.mask {
        let mask = Mask::read_csv(&schema, p)?;
        table = table.apply_mask(&mask)?;
    }
    let params: MethodParams = match &a.params {
        Some(text) => MethodParams::from_toml(text).context("parsing --params")?,
        None => MethodParams::default(),
    };
    let mut imputer = build_imputer(&a.method, &params, a.seed)?;
    imputer.fit(&table)?;
    let out = imputer.impute(&table)?;
    out.table.write_csv(&a.output, &a.schema.missing_token)?;
    if let Some(p) = &a.scores_out {
        write_scores(p, &schema, &out)?;
    }
    if out.fallbacks > 0 {
        log::warn!("{} cells fell back to column statistics", out.fallbacks);
    }
    Ok(())
}

/// Categorical columns only, one probability per cell.
fn write_scores(path: &Path, schema: &Schema, out: &ImputationResult) -> Result<()> {
    let cols = schema.categorical_indices();
    let mut text = cols.iter().map(|&j| schema.columns[j].name.as_str()).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..out.table.n_rows() {
        let row: Vec<String> = cols.iter().map(|&j| out.score(i, j).map(|s| s.to_string()).unwrap_or_default()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_summary(report: &MetricsReport) {
    if !report.aggregates.is_empty() {
        println!("{}", results_table(report).lines().filter(|l| !l.starts_with("run,")).collect::<Vec<_>>().join("\n"));
    }
    if !report.post.is_empty() {
        print!("{}", post_table(report));
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let config = a.experiment.config()?;
    let table = config.load_dataset()?;
    let factory = default_factory(&config);
    let mut report = run_imputation_on(&config, &table, &factory)?;
    if a.with_predict {
        let post = run_post_imputation_on(&config, &table, config.post_rate, &factory)?;
        report = merge_reports(report, post);
    }
    emit_report(&report, &a.experiment.output)?;
    print_summary(&report);
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let config = a.experiment.config()?;
    let rate = a.rate.unwrap_or(config.post_rate);
    let table = config.load_dataset()?;
    let report = run_post_imputation_on(&config, &table, rate, &default_factory(&config))?;
    emit_report(&report, &a.experiment.output)?;
    print_summary(&report);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let report = MetricsReport::load_json(&a.input)?;
    match &a.output {
        Some(dir) => {
            for f in emit_report(&report, dir)? {
                println!("{}", f.display());
            }
        }
        None => {
            if report.runs.is_empty() && report.post.is_empty() {
                bail!("{} holds no results", a.input.display());
            }
            if !report.runs.is_empty() {
                print!("{}", series_table(&report, "nrmse"));
                print!("{}", series_table(&report, "auroc"));
            }
            print_summary(&report);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Inject(a) => inject(a),
        Command::Impute(a) => impute(a),
        Command::Bench(a) => bench(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
