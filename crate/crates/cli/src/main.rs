mod data;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spikecca::inference::{estimate_ccc_pipeline, PipelineOptions, PipelineResult};
use spikecca::montecarlo::{preset, replicate_spectrum, Engine, Scenario, StudyKind, PRESETS};
use spikecca::refdist::GoeGapQuantileTable;
use spikecca::sampling::sample_spiked;
use spikecca::{cca_eigenvalues, Error, ModelConfig, Ratios, SampleSeed, SampleSpectrum, StudyConfig};

use data::{parse_columns, read_table, DataError};

/// Version of every JSON document this tool prints.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "spikecca", version, about = "Spiked canonical correlation analysis in high dimensions")]
struct Cli {
    /// Seed for anything random (overrides a study's own seed).
    #[arg(long, global = true, env = "SPIKECCA_SEED")]
    seed: Option<u64>,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Edges, threshold and density of the limiting null spectrum.
    Lsd(LsdArgs),
    /// Almost-sure limits and fluctuation scales of outlier eigenvalues.
    Outlier(OutlierArgs),
    /// Invert the outlier map for observed eigenvalues.
    Invert(InvertArgs),
    /// Test, count and estimate canonical correlations of a dataset.
    Estimate(EstimateArgs),
    /// Draw one dataset from the spiked Gaussian model.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study from a preset or a TOML config.
    Study(StudyArgs),
}

#[derive(Args)]
struct RatioArgs {
    /// p / n.
    #[arg(long)]
    c1: f64,
    /// q / n.
    #[arg(long)]
    c2: f64,
}

impl RatioArgs {
    fn ratios(&self) -> Result<Ratios, CliError> {
        Ok(Ratios::new(self.c1, self.c2)?)
    }
}

#[derive(Args)]
struct LsdArgs {
    #[command(flatten)]
    ratios: RatioArgs,
    /// Evaluate the density at this many equally spaced points of [d-, d+].
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct OutlierArgs {
    #[command(flatten)]
    ratios: RatioArgs,
    /// Population squared correlations, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    r: Vec<f64>,
}

#[derive(Args)]
struct InvertArgs {
    #[command(flatten)]
    ratios: RatioArgs,
    /// Sample eigenvalues, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Delimited file, observations in rows unless --transpose.
    data: Option<PathBuf>,
    /// The first P columns are x, the rest y.
    #[arg(long)]
    p: Option<usize>,
    /// One-based x columns, e.g. `1-8`.
    #[arg(long, conflicts_with = "p")]
    x_cols: Option<String>,
    /// One-based y columns, e.g. `9-14`.
    #[arg(long, conflicts_with = "p")]
    y_cols: Option<String>,
    /// Read y from a second file; all columns of DATA are then x.
    #[arg(long, conflicts_with_all = ["p", "x_cols", "y_cols"])]
    y_file: Option<PathBuf>,
    /// Files hold variables in rows and observations in columns.
    #[arg(long)]
    transpose: bool,
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// The first line holds data, not column names.
    #[arg(long)]
    no_header: bool,
    /// Skip the data and use these eigenvalues (needs --p, --q, --n).
    #[arg(long, value_delimiter = ',', conflicts_with = "data")]
    eigenvalues: Option<Vec<f64>>,
    /// Dimension of y with --eigenvalues.
    #[arg(long, requires = "eigenvalues")]
    q: Option<usize>,
    /// Sample size with --eigenvalues, used as given.
    #[arg(long, requires = "eigenvalues")]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Outlier margin above d+ (default log(log n) / n^(2/3)).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Entry-variance scale of the GOE gap reference.
    #[arg(long, default_value_t = 0.5)]
    gap_scale: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Full,
    Reduced,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Full => Engine::Full,
            EngineArg::Reduced => Engine::Reduced,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    n: usize,
    /// Population squared correlations, descending, comma separated.
    #[arg(long, value_delimiter = ',')]
    spikes: Vec<f64>,
    /// Write the data here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the sample eigenvalues instead of the data.
    #[arg(long)]
    eigenvalues_only: bool,
    /// Spectrum sampler for --eigenvalues-only.
    #[arg(long, value_enum, default_value = "full")]
    engine: EngineArg,
}

#[derive(Args)]
struct StudyArgs {
    /// A named study; see --list.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML study configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// List the presets and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Write `<name>.csv`, `<name>.summary.txt`, `<name>.histograms.csv`
    /// (and `<name>.samples.csv` for fluctuation studies) here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Core(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.0)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                Error::Domain(_) | Error::Parameter(_) => 2,
                Error::Shape(_) => 3,
                Error::RankDeficient(_) | Error::Numerical(_) => 4,
                Error::Config(_) => 5,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: T,
}

fn print_json<T: Serialize>(command: &str, body: T) -> Result<(), CliError> {
    let doc = Envelope { schema_version: SCHEMA_VERSION, command, body };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spikecca: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Lsd(a) => cmd_lsd(&cli, a),
        Command::Outlier(a) => cmd_outlier(&cli, a),
        Command::Invert(a) => cmd_invert(&cli, a),
        Command::Estimate(a) => cmd_estimate(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Study(a) => cmd_study(&cli, a),
    }
}

#[derive(Serialize)]
struct Constants {
    c1: f64,
    c2: f64,
    d_minus: f64,
    d_plus: f64,
    r_c: f64,
    xi_tw: f64,
}

impl Constants {
    fn of(r: &Ratios) -> Self {
        let e = r.edges();
        Self { c1: r.c1(), c2: r.c2(), d_minus: e.d_minus, d_plus: e.d_plus, r_c: e.r_c, xi_tw: r.xi_tracy_widom() }
    }

    fn print(&self) {
        println!("c1 = {}", self.c1);
        println!("c2 = {}", self.c2);
        println!("d_minus = {:.6}", self.d_minus);
        println!("d_plus = {:.6}", self.d_plus);
        println!("r_c = {:.6}", self.r_c);
        println!("xi_tw = {:.6}", self.xi_tw);
    }
}

#[derive(Serialize)]
struct DensityPoint {
    x: f64,
    density: f64,
}

fn cmd_lsd(cli: &Cli, a: &LsdArgs) -> Result<(), CliError> {
    let ratios = a.ratios.ratios()?;
    let constants = Constants::of(&ratios);
    let mut density = Vec::new();
    if let Some(points) = a.grid {
        if points < 2 {
            return Err(CliError::Usage("--grid needs at least 2 points".into()));
        }
        let (lo, hi) = (constants.d_minus, constants.d_plus);
        for i in 0..points {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            // With d- = 0 the density has a pole at the origin; skip it.
            if let Ok(f) = ratios.lsd_density(x) {
                density.push(DensityPoint { x, density: f });
            }
        }
    }
    if cli.json {
        #[derive(Serialize)]
        struct Out {
            #[serde(flatten)]
            constants: Constants,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            density: Vec<DensityPoint>,
        }
        return print_json("lsd", Out { constants, density });
    }
    constants.print();
    if !density.is_empty() {
        println!("\nx,density");
        for p in &density {
            println!("{},{}", p.x, p.density);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OutlierRow {
    r: f64,
    /// `None` when the spike sticks to the bulk edge.
    gamma: Option<f64>,
    xi: Option<f64>,
    sticking: bool,
}

fn cmd_outlier(cli: &Cli, a: &OutlierArgs) -> Result<(), CliError> {
    let ratios = a.ratios.ratios()?;
    let rows = a
        .r
        .iter()
        .map(|&r| {
            let gamma = ratios.gamma_outlier(r)?;
            let xi = match gamma {
                Some(_) => Some(ratios.xi_outlier(r)?),
                None => None,
            };
            Ok(OutlierRow { r, gamma, xi, sticking: gamma.is_none() })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    if cli.json {
        #[derive(Serialize)]
        struct Out {
            #[serde(flatten)]
            constants: Constants,
            outliers: Vec<OutlierRow>,
        }
        return print_json("outlier", Out { constants: Constants::of(&ratios), outliers: rows });
    }
    for row in rows {
        match (row.gamma, row.xi) {
            (Some(g), Some(x)) => println!("r = {}: gamma = {g:.6}, xi = {x:.6}", row.r),
            _ => println!("r = {}: sticks to d+ = {:.6} (r_c = {:.6})", row.r, ratios.edges().d_plus, ratios.threshold()),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct InvertRow {
    lambda: f64,
    r_hat: f64,
    rho_hat: f64,
    /// The eigenvalue was below `d+` and the inversion clamped.
    clamped: bool,
}

fn cmd_invert(cli: &Cli, a: &InvertArgs) -> Result<(), CliError> {
    let ratios = a.ratios.ratios()?;
    let rows = a
        .lambda
        .iter()
        .map(|&l| {
            let inv = ratios.phi_invert(l)?;
            Ok(InvertRow { lambda: l, r_hat: inv.r_hat, rho_hat: inv.r_hat.sqrt(), clamped: inv.clamped })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    if cli.json {
        #[derive(Serialize)]
        struct Out {
            #[serde(flatten)]
            constants: Constants,
            estimates: Vec<InvertRow>,
        }
        return print_json("invert", Out { constants: Constants::of(&ratios), estimates: rows });
    }
    for row in rows {
        let flag = if row.clamped { "  (below d+, clamped)" } else { "" };
        println!("lambda = {}: r_hat = {:.6}, rho_hat = {:.6}{flag}", row.lambda, row.r_hat, row.rho_hat);
    }
    Ok(())
}

fn delimiter_byte(c: char) -> Result<u8, CliError> {
    if c.is_ascii() {
        Ok(c as u8)
    } else {
        Err(CliError::Usage(format!("delimiter '{c}' is not ASCII")))
    }
}

fn load_spectrum(a: &EstimateArgs) -> Result<(SampleSpectrum, Option<usize>), CliError> {
    if let Some(lambdas) = &a.eigenvalues {
        let (Some(p), Some(q), Some(n)) = (a.p, a.q, a.n) else {
            return Err(CliError::Usage("--eigenvalues needs --p, --q and --n".into()));
        };
        let config = ModelConfig::new(p, q, n).map_err(|e| CliError::Core(Error::Shape(e.to_string())))?;
        return Ok((SampleSpectrum::from_eigenvalues(lambdas.clone(), config)?, None));
    }
    let path = a.data.as_ref().ok_or_else(|| CliError::Usage("give a data file or --eigenvalues".into()))?;
    let delim = delimiter_byte(a.delimiter)?;
    let load = |p: &Path| -> Result<data::Table, CliError> {
        let t = read_table(p, delim, !a.no_header)?;
        Ok(if a.transpose { t.transposed() } else { t })
    };
    let table = load(path)?;
    let ncols = table.ncols();
    if table.rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Data("rows have differing numbers of fields".into()));
    }
    let (x, y) = if let Some(yf) = &a.y_file {
        let other = load(yf)?;
        if other.rows.len() != table.rows.len() {
            return Err(CliError::Data(format!(
                "x has {} observations but y has {}",
                table.rows.len(),
                other.rows.len()
            )));
        }
        let all = |t: &data::Table| (0..t.ncols()).collect::<Vec<_>>();
        (table.block(&all(&table)), other.block(&all(&other)))
    } else if let Some(p) = a.p {
        if p == 0 || p >= ncols {
            return Err(CliError::Data(format!("--p {p} leaves no columns for one block ({ncols} columns)")));
        }
        (table.block(&(0..p).collect::<Vec<_>>()), table.block(&(p..ncols).collect::<Vec<_>>()))
    } else if let (Some(xs), Some(ys)) = (&a.x_cols, &a.y_cols) {
        let xc = parse_columns(xs, ncols)?;
        let yc = parse_columns(ys, ncols)?;
        if xc.iter().any(|c| yc.contains(c)) {
            return Err(CliError::Data("x and y column sets overlap".into()));
        }
        (table.block(&xc), table.block(&yc))
    } else {
        return Err(CliError::Usage("say how to split the columns: --p, --x-cols/--y-cols or --y-file".into()));
    };
    let observations = x.ncols();
    Ok((cca_eigenvalues(&x, &y, false)?, Some(observations)))
}

#[derive(Serialize)]
struct EstimateOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    observations: Option<usize>,
    p: usize,
    q: usize,
    effective_n: usize,
    #[serde(flatten)]
    constants: Constants,
    epsilon_n: f64,
    alpha: f64,
    gap_variance_scale: f64,
    eigenvalues: Vec<f64>,
    k_hat: usize,
    #[serde(flatten)]
    result: PipelineResult,
    message: String,
}

fn cmd_estimate(cli: &Cli, a: &EstimateArgs) -> Result<(), CliError> {
    let (spectrum, observations) = load_spectrum(a)?;
    if a.gap_scale.is_nan() || a.gap_scale <= 0.0 {
        return Err(CliError::Usage("--gap-scale must be positive".into()));
    }
    let options = PipelineOptions {
        alpha: a.alpha,
        epsilon: a.epsilon,
        gap_table: GoeGapQuantileTable::published().rescaled(a.gap_scale),
    };
    let result = estimate_ccc_pipeline(&spectrum, &options)?;
    let message = if result.stopped_at_independence {
        "no evidence of correlation: independence retained".to_string()
    } else {
        format!("independence rejected; {} canonical correlation(s) detected", result.estimate.k_hat)
    };
    let out = EstimateOut {
        observations,
        p: spectrum.config.p(),
        q: spectrum.config.q(),
        effective_n: spectrum.effective_n,
        constants: Constants::of(&spectrum.ratios()),
        epsilon_n: result.estimate.epsilon_n,
        alpha: a.alpha,
        gap_variance_scale: a.gap_scale,
        eigenvalues: spectrum.lambdas.clone(),
        k_hat: result.estimate.k_hat,
        result,
        message,
    };
    if cli.json {
        return print_json("estimate", out);
    }
    println!("p = {}, q = {}, effective n = {}", out.p, out.q, out.effective_n);
    out.constants.print();
    println!("epsilon_n = {:.6}", out.epsilon_n);
    let ev: Vec<String> = out.eigenvalues.iter().map(|l| format!("{l:.4}")).collect();
    println!("eigenvalues: {}", ev.join(", "));
    for t in &out.result.tests {
        let p = t.p_value.map_or(String::new(), |p| format!(", p-value {p:.3e}"));
        let group = t.inputs.group.map_or(String::new(), |(j0, j1)| format!(" (j0 = {j0}, j1 = {j1})"));
        println!(
            "{} test{group}: statistic {:.4}, critical {:.4}{p} -> {:?}",
            t.test, t.statistic, t.critical_value, t.decision
        );
        if let Some(n) = &t.note {
            println!("  note: {n}");
        }
    }
    println!("{}", out.message);
    let e = &out.result.estimate;
    for i in 0..e.k_hat {
        println!("rho_hat_{} = {:.4} (r_hat = {:.4})", i + 1, e.rho_hat[i], e.r_hat[i]);
    }
    for g in &e.groups {
        println!("pooled indices {}..{}: r = {:.4}", g.start, g.start + g.size - 1, g.pooled_r);
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    ModelConfig::new(a.p, a.q, a.n).map_err(|e| CliError::Core(Error::Shape(e.to_string())))?;
    let scenario = Scenario::new(a.p, a.q, a.n, &a.spikes)?;
    let seed = cli.seed.unwrap_or(0);
    if a.eigenvalues_only {
        let mut config = StudyConfig::new("simulate", StudyKind::K0, vec![scenario], 1, seed);
        config.engine = a.engine.into();
        let spectrum = replicate_spectrum(&config, 0, 0)?;
        if cli.json {
            #[derive(Serialize)]
            struct Out {
                p: usize,
                q: usize,
                n: usize,
                seed: u64,
                eigenvalues: Vec<f64>,
            }
            return print_json("simulate", Out { p: a.p, q: a.q, n: a.n, seed, eigenvalues: spectrum.lambdas });
        }
        for l in spectrum.lambdas {
            println!("{l}");
        }
        return Ok(());
    }
    let model = scenario.config()?;
    let data = sample_spiked(model, &scenario.spikes, SampleSeed::new(seed, 0))?;
    let sink: Box<dyn std::io::Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let header: Vec<String> =
        (1..=a.p).map(|i| format!("x{i}")).chain((1..=a.q).map(|i| format!("y{i}"))).collect();
    w.write_record(&header).map_err(io)?;
    for j in 0..a.n {
        let row: Vec<String> =
            data.x.column(j).iter().chain(data.y.column(j).iter()).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    if cli.json {
        if let Some(p) = &a.out {
            #[derive(Serialize)]
            struct Out<'a> {
                path: &'a Path,
                p: usize,
                q: usize,
                n: usize,
                seed: u64,
            }
            return print_json("simulate", Out { path: p, p: a.p, q: a.q, n: a.n, seed });
        }
    }
    Ok(())
}

fn cmd_study(cli: &Cli, a: &StudyArgs) -> Result<(), CliError> {
    if a.list {
        if cli.json {
            #[derive(Serialize)]
            struct Out<'a> {
                presets: &'a [&'a str],
            }
            return print_json("study", Out { presets: PRESETS });
        }
        for p in PRESETS {
            println!("{p}");
        }
        return Ok(());
    }
    let mut config = match (&a.preset, &a.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => StudyConfig::from_path(path)?,
        _ => return Err(CliError::Usage("give --preset or --config (or --list)".into())),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(reps) = a.reps {
        config.reps = reps;
    }
    if let Some(t) = a.threads {
        config.threads = Some(t);
    }
    if let Some(e) = a.engine {
        config.engine = e.into();
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let file = |suffix: &str| Some(dir.join(format!("{}{suffix}", config.name)));
        config.output.csv = file(".csv");
        config.output.summary = file(".summary.txt");
        config.output.histograms = file(".histograms.csv");
        config.output.samples = (config.kind == StudyKind::Fluctuation).then(|| dir.join(format!("{}.samples.csv", config.name)));
    }
    config.validate()?;
    let result = spikecca::run_study(&config)?;
    result.write_outputs(&config.output)?;
    eprintln!("spikecca: {} finished in {:.1} s", config.name, result.runtime.elapsed_secs);
    if cli.json {
        return print_json("study", &result);
    }
    let mut out = std::io::stdout().lock();
    out.write_all(result.summary().as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}
