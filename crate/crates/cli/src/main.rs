//! `vlmbias`: drives corpus construction, probe runs, classification,
//! scoring, and report emission from one JSON config.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 when a
//! run completed but some endpoint calls failed (partial results are kept).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use vlmbias_core::config::Config;
use vlmbias_core::corpus::{
    build_image_set, load_professions_file, read_entries_file, write_entries_file, ImageSource,
    TextChat,
};
use vlmbias_core::modelgate::{
    classify_synthetic, DataStore, ModelGateway, ReqwestTransport, Simulator, SystemClock,
};
use vlmbias_core::outcome::{read_outcomes_file, write_outcomes_file};
use vlmbias_core::pipeline::{
    read_actions_file, run_corpus_filter, run_corpus_generate, run_pipeline, Backend, GatewayChat,
    GatewayImageSource, SimImageSource,
};
use vlmbias_core::report::{
    build_heatmap, build_report, ingest_census, write_heatmap_csv, write_report_csv,
    write_report_json, AgDenominator, HeatmapMetric,
};
use vlmbias_core::{CultureSet, Dimension, Direction, InfoMode, Outcome, ProbeSpec, Style};

const HTTP_TIMEOUT_SECS: u64 = 120;

#[derive(Parser)]
#[command(
    name = "vlmbias",
    version,
    about = "Bias evaluation harness for vision-language models"
)]
struct Cli {
    /// JSON config file driving the run.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Answer probes with the deterministic simulator instead of live
    /// endpoints.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus construction stages.
    #[command(subcommand)]
    Corpus(CorpusStage),
    /// Probe execution.
    #[command(subcommand)]
    Probe(ProbeAction),
    /// Re-runs attribute classification over stored output images.
    Classify(ClassifyArgs),
    /// Prints scored metrics for collected outcomes.
    Score(ScoreArgs),
    /// Writes the metric report files.
    Report(ReportArgs),
    /// Writes a profession-by-model heatmap matrix.
    Heatmap(HeatmapArgs),
}

#[derive(Subcommand)]
enum CorpusStage {
    /// Asks the generator endpoint for action templates per profession.
    Generate,
    /// Scores templates with the predictor endpoints and builds the corpus.
    Filter,
    /// Generates the input image for every rendering of every entry.
    Images,
}

#[derive(Subcommand)]
enum ProbeAction {
    /// Runs the configured probe matrix over the corpus.
    Run(FilterArgs),
}

#[derive(Args, Default, Clone)]
struct FilterArgs {
    /// Probe direction, e.g. image_to_text.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    /// Bias dimension: gender, race, or age.
    #[arg(long, value_parser = parse_dimension)]
    dimension: Option<Dimension>,
    /// Information mode: blind or informed.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<InfoMode>,
    /// Probing style: direct or indirect.
    #[arg(long, value_parser = parse_style)]
    style: Option<Style>,
    /// Culture set for indirect probes: us, in, or ko.
    #[arg(long, value_parser = parse_culture)]
    culture: Option<CultureSet>,
    /// Only this model.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Only outcomes of this model.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    filter: FilterArgs,
    /// Attribute-gap denominator: pair (the two pole counts) or total.
    #[arg(long, value_parser = parse_ag_denominator, default_value = "pair")]
    ag_denominator: AgDenominator,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    filter: FilterArgs,
    /// Attribute-gap denominator: pair (the two pole counts) or total.
    #[arg(long, value_parser = parse_ag_denominator, default_value = "pair")]
    ag_denominator: AgDenominator,
    /// Output format: csv, json, or both.
    #[arg(long, value_parser = ["csv", "json", "both"], default_value = "both")]
    format: String,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Bias dimension of the matrix.
    #[arg(long, value_parser = parse_dimension)]
    dimension: Dimension,
    /// Cell metric: ag (binary dimensions only), delta_ag, or delta_n.
    #[arg(long, value_parser = parse_heatmap_metric)]
    metric: Option<HeatmapMetric>,
    /// Census CSV (`profession,female_share`) appended as a reference
    /// column on gender heatmaps.
    #[arg(long)]
    census: Option<PathBuf>,
    /// Output path; defaults to `<out_dir>/heatmap_<dimension>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only outcomes of this model.
    #[arg(long)]
    model: Option<String>,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    Direction::ALL
        .into_iter()
        .find(|d| d.id() == s)
        .ok_or_else(|| format!("unknown direction \"{s}\""))
}

fn parse_dimension(s: &str) -> Result<Dimension, String> {
    Dimension::ALL
        .into_iter()
        .find(|d| d.id() == s)
        .ok_or_else(|| format!("unknown dimension \"{s}\""))
}

fn parse_mode(s: &str) -> Result<InfoMode, String> {
    match s {
        "blind" => Ok(InfoMode::Blind),
        "informed" => Ok(InfoMode::Informed),
        _ => Err(format!("unknown info mode \"{s}\"")),
    }
}

fn parse_style(s: &str) -> Result<Style, String> {
    match s {
        "direct" => Ok(Style::Direct),
        "indirect" => Ok(Style::Indirect),
        _ => Err(format!("unknown style \"{s}\"")),
    }
}

fn parse_culture(s: &str) -> Result<CultureSet, String> {
    match s {
        "us" => Ok(CultureSet::Us),
        "in" => Ok(CultureSet::In),
        "ko" => Ok(CultureSet::Ko),
        _ => Err(format!("unknown culture set \"{s}\"")),
    }
}

fn parse_ag_denominator(s: &str) -> Result<AgDenominator, String> {
    match s {
        "pair" => Ok(AgDenominator::PairSum),
        "total" => Ok(AgDenominator::Total),
        _ => Err(format!(
            "unknown denominator \"{s}\", expected pair or total"
        )),
    }
}

fn parse_heatmap_metric(s: &str) -> Result<HeatmapMetric, String> {
    match s {
        "ag" => Ok(HeatmapMetric::Ag),
        "delta_ag" => Ok(HeatmapMetric::DeltaAg),
        "delta_n" => Ok(HeatmapMetric::DeltaN),
        _ => Err(format!("unknown metric \"{s}\"")),
    }
}

impl FilterArgs {
    fn matches_spec(&self, spec: &ProbeSpec) -> bool {
        self.direction.is_none_or(|d| spec.direction == d)
            && self.dimension.is_none_or(|d| spec.dimension == d)
            && self.mode.is_none_or(|m| spec.info_mode == m)
            && self.style.is_none_or(|s| spec.style == s)
            && self.culture.is_none_or(|c| spec.culture_set == Some(c))
    }

    fn matches_outcome(&self, outcome: &Outcome) -> bool {
        self.matches_spec(&outcome.spec) && self.model.as_deref().is_none_or(|m| outcome.model == m)
    }

    /// A spec built from the flags alone, when all the required coordinates
    /// were given.
    fn to_spec(&self) -> Option<Result<ProbeSpec, vlmbias_core::probekit::ProbeError>> {
        match (self.direction, self.dimension, self.mode, self.style) {
            (Some(direction), Some(dimension), Some(mode), Some(style)) => Some(ProbeSpec::new(
                direction,
                dimension,
                mode,
                style,
                self.culture,
            )),
            _ => None,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Corpus(CorpusStage::Generate) => cmd_corpus_generate(&config),
        Command::Corpus(CorpusStage::Filter) => cmd_corpus_filter(&config),
        Command::Corpus(CorpusStage::Images) => cmd_corpus_images(&config),
        Command::Probe(ProbeAction::Run(filter)) => cmd_probe_run(config, &filter),
        Command::Classify(args) => cmd_classify(&config, &args),
        Command::Score(args) => cmd_score(&config, &args),
        Command::Report(args) => cmd_report(&config, &args),
        Command::Heatmap(args) => cmd_heatmap(&config, &args),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading config {}", cli.config.display()))?;
    let mut config: Config =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.offline {
        config.offline = true;
    }
    config.validate().context("invalid config")?;
    Ok(config)
}

fn open_store(config: &Config) -> anyhow::Result<DataStore> {
    DataStore::open(&config.data_dir, config.cache_dir.as_deref())
        .with_context(|| format!("opening data store {}", config.data_dir.display()))
}

fn make_gateway(config: &Config) -> anyhow::Result<ModelGateway> {
    let transport = ReqwestTransport::new(HTTP_TIMEOUT_SECS)
        .map_err(|e| anyhow::anyhow!("building http client: {e}"))?;
    Ok(ModelGateway::new(
        Box::new(transport),
        Arc::new(SystemClock::new()),
        open_store(config)?,
        config.retry.base_delay_ms,
    ))
}

fn cmd_probe_run(mut config: Config, filter: &FilterArgs) -> anyhow::Result<ExitCode> {
    let mut probes: Vec<ProbeSpec> = config
        .probes
        .iter()
        .filter(|s| filter.matches_spec(s))
        .cloned()
        .collect();
    if probes.is_empty() {
        match filter.to_spec() {
            Some(spec) => probes.push(spec.context("building probe from flags")?),
            None => bail!(
                "no configured probe matches the filters; pass --direction, \
                 --dimension, --mode, and --style to construct one"
            ),
        }
    }
    if let Some(model) = &filter.model {
        if !config.models.contains(model) {
            bail!("model \"{model}\" is not listed in the config");
        }
        config.models = vec![model.clone()];
    }
    config.probes = probes;
    config.validate().context("invalid probe selection")?;

    let manifest = if config.offline {
        let simulator = Simulator::new(config.seed, &config.simulator)?;
        let store = open_store(&config)?;
        run_pipeline(
            &config,
            &Backend::Sim {
                simulator: &simulator,
                store: &store,
            },
        )?
    } else {
        let gateway = make_gateway(&config)?;
        run_pipeline(&config, &Backend::Live { gateway: &gateway })?
    };

    let manifest_path = config.out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    println!(
        "run {}: {} probes, {} outcomes, {} files, manifest {}",
        manifest.run_id,
        manifest.probes_attempted,
        manifest.outcomes_written,
        manifest.outcome_files.len(),
        manifest_path.display()
    );
    if !manifest.is_complete() {
        for failure in &manifest.failures {
            eprintln!(
                "failed: {} {} {} [{}]: {}",
                failure.model, failure.spec, failure.entry_id, failure.input_key, failure.error
            );
        }
        eprintln!(
            "{} probe calls failed; partial results kept",
            manifest.failures.len()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_corpus_generate(config: &Config) -> anyhow::Result<ExitCode> {
    if config.offline {
        bail!("corpus generate needs a live generator endpoint; the simulator only answers probes");
    }
    let name = config
        .generator
        .as_deref()
        .context("config sets no generator endpoint")?;
    let endpoint = config
        .endpoint(name)
        .context("generator endpoint missing")?;
    let professions_path = config
        .professions
        .as_deref()
        .context("config sets no professions file")?;
    let professions = load_professions_file(professions_path)?;

    let gateway = make_gateway(config)?;
    let mut generator = GatewayChat {
        gateway: &gateway,
        endpoint,
    };
    let actions = run_corpus_generate(config, &mut generator, &professions)?;
    println!(
        "generated {} action templates for {} professions into {}",
        actions.len(),
        professions.len(),
        config.actions_path().display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_corpus_filter(config: &Config) -> anyhow::Result<ExitCode> {
    if config.offline {
        bail!("corpus filter needs live predictor endpoints; the simulator only answers probes");
    }
    if config.predictors.is_empty() {
        bail!("config lists no predictor endpoints");
    }
    let professions_path = config
        .professions
        .as_deref()
        .context("config sets no professions file")?;
    let professions = load_professions_file(professions_path)?;
    let actions = read_actions_file(&config.actions_path())
        .context("reading generated actions; run `corpus generate` first")?;

    let gateway = make_gateway(config)?;
    let mut predictors: Vec<Box<dyn TextChat>> = Vec::new();
    for name in &config.predictors {
        let endpoint = config
            .endpoint(name)
            .context("predictor endpoint missing")?;
        predictors.push(Box::new(GatewayChat {
            gateway: &gateway,
            endpoint,
        }));
    }
    let entries = run_corpus_filter(config, &mut predictors, &professions, actions)?;
    println!(
        "built {} corpus entries into {}",
        entries.len(),
        config.corpus.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_corpus_images(config: &Config) -> anyhow::Result<ExitCode> {
    let mut entries = read_entries_file(&config.corpus)
        .with_context(|| format!("reading corpus {}", config.corpus.display()))?;

    let report = if config.offline {
        let store = open_store(config)?;
        let mut source = SimImageSource { store: &store };
        build_image_set(&mut entries, &mut source)
    } else {
        let name = config
            .imagegen
            .as_deref()
            .context("config sets no imagegen endpoint")?;
        let endpoint = config.endpoint(name).context("imagegen endpoint missing")?;
        let gateway = make_gateway(config)?;
        let mut source: Box<dyn ImageSource> = Box::new(GatewayImageSource {
            gateway: &gateway,
            endpoint,
        });
        build_image_set(&mut entries, source.as_mut())
    };

    write_entries_file(&config.corpus, &entries)?;
    println!(
        "images: {} generated, {} already present, {} failed",
        report.generated,
        report.skipped,
        report.failures.len()
    );
    if !report.is_complete() {
        for failure in &report.failures {
            eprintln!(
                "failed: {} [{}]: {}",
                failure.entry_id, failure.subject, failure.error
            );
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_classify(config: &Config, args: &ClassifyArgs) -> anyhow::Result<ExitCode> {
    let files = outcome_files(config)?;
    if files.is_empty() {
        bail!(
            "no outcome files under {}; run `probe run` first",
            config.out_dir.display()
        );
    }

    let store = open_store(config)?;
    let live = if config.offline {
        None
    } else {
        let name = config
            .vqa_endpoint
            .as_deref()
            .context("config sets no vqa_endpoint")?;
        let endpoint = config
            .endpoint(name)
            .context("vqa endpoint missing")?
            .clone();
        Some((make_gateway(config)?, endpoint))
    };

    let mut reclassified = 0usize;
    for file in files {
        let mut outcomes = read_outcomes_file(&file)?;
        let mut changed = false;
        for outcome in &mut outcomes {
            let Some(image) = &outcome.output_image else {
                continue;
            };
            if args.model.as_deref().is_some_and(|m| outcome.model != m) {
                continue;
            }
            let (predicted, raw) = match &live {
                Some((gateway, endpoint)) => {
                    gateway.classify_attribute(endpoint, image, outcome.spec.dimension)
                }
                None => {
                    let bytes = store.read_image(image)?;
                    let label = classify_synthetic(&bytes);
                    let raw = label.as_wire().to_string();
                    (label, raw)
                }
            };
            if predicted != outcome.predicted || raw != outcome.raw_text {
                changed = true;
            }
            outcome.predicted = predicted;
            outcome.raw_text = raw;
            reclassified += 1;
        }
        if changed {
            write_outcomes_file(&file, &outcomes)?;
        }
    }
    println!("reclassified {reclassified} outcomes with stored images");
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(config: &Config, args: &ScoreArgs) -> anyhow::Result<ExitCode> {
    let outcomes = load_outcomes(config, &args.filter)?;
    let rows = build_report(&outcomes, args.ag_denominator)?;
    for row in &rows {
        let coordinate = match &row.culture {
            Some(c) => format!(
                "{}.{}.{}.{}.{}",
                row.direction, row.dimension, row.info_mode, row.style, c
            ),
            None => format!(
                "{}.{}.{}.{}",
                row.direction, row.dimension, row.info_mode, row.style
            ),
        };
        let counts = row
            .counts
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "{} {} n={} neutral={} {} no_preference={} na={} ag={} delta_ag={} delta_n={} acc={}",
            row.model,
            coordinate,
            row.n_total,
            row.n_neutral,
            counts,
            row.no_preference,
            row.na,
            opt(row.ag),
            opt(row.delta_ag),
            opt(row.delta_n),
            opt(row.accuracy_overall),
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

fn cmd_report(config: &Config, args: &ReportArgs) -> anyhow::Result<ExitCode> {
    let outcomes = load_outcomes(config, &args.filter)?;
    let rows = build_report(&outcomes, args.ag_denominator)?;
    if args.format == "csv" || args.format == "both" {
        let path = config.out_dir.join("report.csv");
        write_report_csv(&path, &rows)?;
        println!("wrote {}", path.display());
    }
    if args.format == "json" || args.format == "both" {
        let path = config.out_dir.join("report.json");
        write_report_json(&path, &rows)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_heatmap(config: &Config, args: &HeatmapArgs) -> anyhow::Result<ExitCode> {
    let filter = FilterArgs {
        model: args.model.clone(),
        ..FilterArgs::default()
    };
    let outcomes = load_outcomes(config, &filter)?;
    let census = match &args.census {
        Some(path) => Some(ingest_census(path)?),
        None => None,
    };
    let metric = args
        .metric
        .unwrap_or_else(|| HeatmapMetric::default_for(args.dimension));
    let heatmap = build_heatmap(&outcomes, args.dimension, metric, census.as_ref())?;
    if heatmap.professions.is_empty() || heatmap.models.is_empty() {
        bail!("no {} outcomes to map", args.dimension.id());
    }
    let path = args.out.clone().unwrap_or_else(|| {
        config
            .out_dir
            .join(format!("heatmap_{}.csv", args.dimension.id()))
    });
    write_heatmap_csv(&path, &heatmap)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// Every outcome file a previous probe run wrote, in path order.
fn outcome_files(config: &Config) -> anyhow::Result<Vec<PathBuf>> {
    let root = config.out_dir.join("outcomes");
    let mut files = Vec::new();
    if root.is_dir() {
        collect_jsonl(&root, &mut files)?;
    }
    files.sort();
    Ok(files)
}

fn collect_jsonl(dir: &Path, files: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_jsonl(&path, files)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    Ok(())
}

fn load_outcomes(config: &Config, filter: &FilterArgs) -> anyhow::Result<Vec<Outcome>> {
    let files = outcome_files(config)?;
    let mut outcomes = Vec::new();
    for file in &files {
        outcomes.extend(read_outcomes_file(file)?);
    }
    outcomes.retain(|o| filter.matches_outcome(o));
    if outcomes.is_empty() {
        bail!(
            "no matching outcomes under {}; run `probe run` first",
            config.out_dir.join("outcomes").display()
        );
    }
    Ok(outcomes)
}
