//! Seeded replication studies: spike counting, spike estimation, outlier and
//! edge fluctuations, null spectra and GOE gap quantiles.
//!
//! Replication `i` of scenario `s` draws from stream `i` of a root derived
//! from `(seed, s)`, so results do not depend on the number of threads.
//! Aggregation runs serially in replication order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{cca_eigenvalues, ks_distance, ks_distance_to_lsd, SampleSpectrum};
use crate::error::{Error, Result};
use crate::inference::{estimate_k0, estimate_spikes, model_selection_counts, test_independence};
use crate::refdist::{GoeGapQuantileTable, TracyWidomTable, DEFAULT_VARIANCE_SCALE, PUBLISHED_GAP_QUANTILES_5PCT};
use crate::rmt::{ModelConfig, SpikeSpec};
use crate::sampling::{sample_spiked, sample_spiked_spectrum, SampleSeed};

/// How each replication's spectrum is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Generate `X`, `Y` and run the principal-angle CCA.
    Full,
    /// Draw the eigenvalues from the equivalent `min(p, q)`-sized pencil.
    #[default]
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    K0,
    Spikes,
    Fluctuation,
    NullEsd,
    GapQuantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    #[serde(default)]
    pub spikes: SpikeSpec,
}

impl Scenario {
    pub fn new(p: usize, q: usize, n: usize, spikes: &[f64]) -> Result<Self> {
        let s = Self { p, q, n, spikes: SpikeSpec::new(spikes.to_vec())? };
        s.config()?;
        Ok(s)
    }

    pub fn config(&self) -> Result<ModelConfig> {
        let config = ModelConfig::new(self.p, self.q, self.n)?;
        self.spikes.check_against(&config)?;
        Ok(config)
    }

    pub fn label(&self) -> String {
        format!("p={} q={} n={}", self.p, self.q, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputPaths {
    /// Aggregated results, long format.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// Histogram bins.
    #[serde(default)]
    pub histograms: Option<PathBuf>,
    /// Per-replication leading eigenvalues (fluctuation studies).
    #[serde(default)]
    pub samples: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_variance_scale() -> f64 {
    DEFAULT_VARIANCE_SCALE
}

fn default_bins() -> usize {
    30
}

fn default_j1_max() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub kind: StudyKind,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Outlier margin above `d+`; `None` means `log(log n) / n^{2/3}`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Entry-variance multiplier for the GOE gap study.
    #[serde(default = "default_variance_scale")]
    pub variance_scale: f64,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Largest group size in the GOE gap study.
    #[serde(default = "default_j1_max")]
    pub j1_max: usize,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputPaths,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl StudyConfig {
    pub fn new(name: &str, kind: StudyKind, scenarios: Vec<Scenario>, reps: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            scenarios,
            reps,
            seed,
            alpha: default_alpha(),
            epsilon: None,
            variance_scale: default_variance_scale(),
            engine: Engine::default(),
            bins: default_bins(),
            j1_max: default_j1_max(),
            threads: None,
            output: OutputPaths::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(config_err("replication count must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(config_err(format!("epsilon must be positive, got {e}")));
            }
        }
        if !(self.variance_scale > 0.0 && self.variance_scale.is_finite()) {
            return Err(config_err("variance_scale must be positive"));
        }
        if self.bins == 0 {
            return Err(config_err("bins must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads must be at least 1"));
        }
        if self.kind == StudyKind::GapQuantiles {
            if self.j1_max < 2 {
                return Err(config_err("j1_max must be at least 2"));
            }
            if self.reps < 10_000 {
                return Err(config_err("gap quantiles need at least 10^4 replications"));
            }
        } else if self.scenarios.is_empty() {
            return Err(config_err("at least one scenario is required"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.config().map_err(|e| config_err(format!("scenario {} ({}): {e}", i + 1, s.label())))?;
        }
        Ok(())
    }

    /// Seed of replication `rep` in scenario `scenario`.
    pub fn replication_seed(&self, scenario: usize, rep: usize) -> SampleSeed {
        let root = SampleSeed::new(self.seed, 0).child(scenario as u64 + 1);
        SampleSeed::new(root.root_seed, rep as u64)
    }
}

const TABLE_SPIKES: [f64; 4] = [0.8, 0.6, 0.4, 0.2];
const TABLE_SPIKES_TIED: [f64; 4] = [0.8, 0.6, 0.4, 0.4];
const FIGURE1_SPIKES: [f64; 4] = [0.5, 0.4, 0.3, 0.16];
const FIGURE2_SPIKES: [f64; 4] = [0.5, 0.4, 0.4, 0.16];
const DESK_REPS: usize = 200;
const FULL_REPS: usize = 1000;

/// Names accepted by [`preset`]. Presets without `-full` run at desk scale.
pub const PRESETS: &[&str] = &[
    "table1",
    "table1-full",
    "table2",
    "table2-small",
    "table2-full",
    "table3_1",
    "table3_1-full",
    "table3_2",
    "table3_2-full",
    "table4",
    "figure1",
    "figure1-full",
    "figure2",
    "figure2-full",
    "null-esd",
];

fn scenarios(dims: &[(usize, usize, usize)], spikes: &[f64]) -> Vec<Scenario> {
    dims.iter()
        .map(|&(p, q, n)| Scenario::new(p, q, n, spikes).expect("preset scenario is valid"))
        .collect()
}

const TABLE1_DIMS: [(usize, usize, usize); 6] =
    [(10, 5, 1000), (60, 30, 1000), (110, 55, 1000), (160, 80, 1000), (210, 105, 1000), (260, 130, 1000)];
const TABLE2_DIMS: [(usize, usize, usize); 6] =
    [(10, 5, 100), (60, 30, 600), (110, 55, 1100), (160, 80, 1600), (210, 105, 2100), (260, 130, 2600)];

/// Study configurations matching the simulation tables and figures.
pub fn preset(name: &str) -> Result<StudyConfig> {
    let (base, full) = match name.strip_suffix("-full") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let reps = if full { FULL_REPS } else { DESK_REPS };
    let desk = |dims: &[(usize, usize, usize)]| if full { dims.to_vec() } else { dims[..3].to_vec() };
    let config = match (base, full) {
        ("table1", _) => StudyConfig::new(name, StudyKind::K0, scenarios(&desk(&TABLE1_DIMS), &TABLE_SPIKES), reps, 0),
        ("table2", _) => StudyConfig::new(name, StudyKind::K0, scenarios(&desk(&TABLE2_DIMS), &TABLE_SPIKES), reps, 0),
        ("table2-small", false) => {
            StudyConfig::new(name, StudyKind::K0, scenarios(&[(60, 30, 600)], &TABLE_SPIKES), DESK_REPS, 0)
        }
        ("table3_1", _) => {
            StudyConfig::new(name, StudyKind::Spikes, scenarios(&desk(&TABLE2_DIMS), &TABLE_SPIKES), reps, 0)
        }
        ("table3_2", _) => {
            StudyConfig::new(name, StudyKind::Spikes, scenarios(&desk(&TABLE2_DIMS), &TABLE_SPIKES_TIED), reps, 0)
        }
        ("table4", false) => StudyConfig::new(name, StudyKind::GapQuantiles, Vec::new(), 100_000, 0),
        ("figure1", _) => {
            StudyConfig::new(name, StudyKind::Fluctuation, scenarios(&[(500, 1000, 5000)], &FIGURE1_SPIKES), reps, 0)
        }
        ("figure2", _) => {
            StudyConfig::new(name, StudyKind::Fluctuation, scenarios(&[(500, 1000, 5000)], &FIGURE2_SPIKES), reps, 0)
        }
        ("null-esd", false) => StudyConfig::new(name, StudyKind::NullEsd, scenarios(&[(200, 100, 1000)], &[]), 100, 0),
        _ => {
            return Err(config_err(format!("unknown preset '{name}'; available: {}", PRESETS.join(", "))));
        }
    };
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (`count - 1` divisor); zero below two values.
    pub sd: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { count, mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        };
        Self { count, mean, sd }
    }

    pub fn standard_error(&self) -> f64 {
        self.sd / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    /// `counts.len() + 1` increasing bin edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(label: &str, values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { label: label.to_string(), edges, counts }
    }

    /// Midpoint of the most populated bin.
    pub fn mode(&self) -> f64 {
        let b = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i);
        0.5 * (self.edges[b] + self.edges[b + 1])
    }
}

/// Frequency of each estimated count `k = 0..counts.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub estimator: String,
    pub counts: Vec<usize>,
}

impl CountTable {
    fn new(estimator: &str, values: &[usize], rank: usize) -> Self {
        let mut counts = vec![0; rank + 1];
        for &k in values {
            counts[k] += 1;
        }
        Self { estimator: estimator.to_string(), counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn fraction(&self, k: usize) -> f64 {
        self.counts.get(k).copied().unwrap_or(0) as f64 / self.total() as f64
    }

    /// Fraction of replications with estimate at most `k`.
    pub fn fraction_at_most(&self, k: usize) -> f64 {
        self.counts.iter().take(k + 1).sum::<usize>() as f64 / self.total() as f64
    }
}

/// Spike estimates at one index, over replications where that index was
/// counted as an outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeMoments {
    /// One-based.
    pub index: usize,
    pub truth: Option<f64>,
    pub r_hat: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFluctuation {
    pub index: usize,
    pub r: f64,
    pub gamma: f64,
    pub xi: f64,
    /// `sqrt(n) (lambda_i - gamma_i)`.
    pub centred: Moments,
    /// `centred / xi`.
    pub standardised: Moments,
    /// `sd(centred) / xi`.
    pub sd_ratio: f64,
    /// Entry-variance scale implied by `sd_ratio`, `sd_ratio^2 / 2`.
    pub implied_variance_scale: f64,
    /// `|mean| / standard error` of the centred statistic.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFluctuation {
    pub index: usize,
    /// `n^{2/3} (lambda_i - d+) / xi_tw`.
    pub statistic: Moments,
    pub ks_to_tw1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSummary {
    pub outliers: Vec<OutlierFluctuation>,
    pub edge: Option<EdgeFluctuation>,
    /// Modes of the histograms of `lambda_1, ..., lambda_k`.
    pub modes: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullEsdSummary {
    pub ks_to_lsd: Moments,
    pub lambda1: Moments,
    /// Fraction of replications with `lambda_1 <= d+ + 0.05`.
    pub edge_fraction: f64,
    pub independence_rejections: usize,
    pub independence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub d_plus: f64,
    pub r_c: f64,
    /// Spikes above `r_c`.
    pub k0: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counts: Vec<CountTable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<SpikeMoments>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluctuation: Option<FluctuationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_esd: Option<NullEsdSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub histograms: Vec<Histogram>,
    /// Leading `k + 1` eigenvalues per replication (fluctuation studies).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Vec<f64>>,
}

impl ScenarioResult {
    fn new(scenario: &Scenario, config: &ModelConfig) -> Self {
        let ratios = config.ratios();
        Self {
            scenario: scenario.clone(),
            d_plus: ratios.edges().d_plus,
            r_c: ratios.threshold(),
            k0: scenario.spikes.k0(ratios),
            counts: Vec::new(),
            spikes: Vec::new(),
            fluctuation: None,
            null_esd: None,
            histograms: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn count_table(&self, estimator: &str) -> Option<&CountTable> {
        self.counts.iter().find(|c| c.estimator == estimator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapQuantileRow {
    pub j1: usize,
    pub quantile: f64,
    /// Published 5% value rescaled to the study's variance scale.
    pub published: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub elapsed_secs: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub name: String,
    pub kind: StudyKind,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub engine: Engine,
    pub scenarios: Vec<ScenarioResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gap_quantiles: Vec<GapQuantileRow>,
    /// Not part of the deterministic output.
    pub runtime: Runtime,
}

fn replicate<T, F>(config: &StudyConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let run = || (0..config.reps).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Numerical(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// One replication's spectrum for scenario `index`.
pub fn replicate_spectrum(config: &StudyConfig, index: usize, rep: usize) -> Result<SampleSpectrum> {
    let scenario = &config.scenarios[index];
    let model = scenario.config()?;
    let seed = config.replication_seed(index, rep);
    match config.engine {
        Engine::Full => {
            let data = sample_spiked(model, &scenario.spikes, seed)?;
            cca_eigenvalues(&data.x, &data.y, true)
        }
        Engine::Reduced => SampleSpectrum::from_eigenvalues(sample_spiked_spectrum(model, &scenario.spikes, seed)?, model),
    }
}

fn run_scenarios<F>(config: &StudyConfig, mut per_scenario: F) -> Result<StudyResult>
where
    F: FnMut(usize, &Scenario, &ModelConfig) -> Result<ScenarioResult>,
{
    config.validate()?;
    let start = Instant::now();
    let mut results = Vec::with_capacity(config.scenarios.len());
    for (i, s) in config.scenarios.iter().enumerate() {
        let model = s.config()?;
        results.push(per_scenario(i, s, &model)?);
    }
    Ok(finish(config, results, Vec::new(), start))
}

fn finish(config: &StudyConfig, scenarios: Vec<ScenarioResult>, gap: Vec<GapQuantileRow>, start: Instant) -> StudyResult {
    StudyResult {
        name: config.name.clone(),
        kind: config.kind,
        reps: config.reps,
        seed: config.seed,
        alpha: config.alpha,
        engine: config.engine,
        scenarios,
        gap_quantiles: gap,
        runtime: Runtime {
            elapsed_secs: start.elapsed().as_secs_f64(),
            threads: config.threads.unwrap_or_else(rayon::current_num_threads),
        },
    }
}

/// Run whichever study `config.kind` names.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    match config.kind {
        StudyKind::K0 => run_k0_study(config),
        StudyKind::Spikes => run_spike_study(config),
        StudyKind::Fluctuation => run_fluctuation_study(config),
        StudyKind::NullEsd => run_null_esd_study(config),
        StudyKind::GapQuantiles => run_gap_quantile_study(config),
    }
}

/// Distribution of the outlier count `k0_hat` and the AIC, BIC and C_p
/// counts over replications.
pub fn run_k0_study(config: &StudyConfig) -> Result<StudyResult> {
    run_scenarios(config, |i, s, model| {
        let rows = replicate(config, |rep| {
            let spectrum = replicate_spectrum(config, i, rep)?;
            let k0 = estimate_k0(&spectrum, config.epsilon)?;
            let ms = model_selection_counts(&spectrum, s.p, s.q, s.n);
            Ok([k0, ms.aic, ms.bic, ms.cp])
        })?;
        let mut out = ScenarioResult::new(s, model);
        for (j, name) in ["k0", "aic", "bic", "cp"].iter().enumerate() {
            let values: Vec<usize> = rows.iter().map(|r| r[j]).collect();
            out.counts.push(CountTable::new(name, &values, model.rank()));
        }
        Ok(out)
    })
}

/// Means and standard deviations of `r_hat_i`, recorded only in replications
/// with `i <= k0_hat`.
pub fn run_spike_study(config: &StudyConfig) -> Result<StudyResult> {
    run_scenarios(config, |i, s, model| {
        let rows = replicate(config, |rep| {
            let spectrum = replicate_spectrum(config, i, rep)?;
            let k0 = estimate_k0(&spectrum, config.epsilon)?;
            Ok(estimate_spikes(&spectrum, k0)?.r_hat_unpooled)
        })?;
        let mut out = ScenarioResult::new(s, model);
        let k_hats: Vec<usize> = rows.iter().map(Vec::len).collect();
        out.counts.push(CountTable::new("k0", &k_hats, model.rank()));
        let width = rows.iter().map(Vec::len).max().unwrap_or(0).max(s.spikes.len());
        for idx in 0..width {
            let values: Vec<f64> = rows.iter().filter_map(|r| r.get(idx).copied()).collect();
            out.spikes.push(SpikeMoments {
                index: idx + 1,
                truth: s.spikes.values().get(idx).copied(),
                r_hat: Moments::of(&values),
            });
        }
        Ok(out)
    })
}

/// Drift, in standard errors, above which a centred outlier statistic is
/// flagged.
const DRIFT_FLAG: f64 = 4.0;

/// Histograms of the leading eigenvalues, the outlier statistics
/// `sqrt(n)(lambda_i - gamma_i) / xi(r_i)` and the edge statistic at the
/// first non-outlier index, plus the empirical scale of the outlier
/// fluctuations.
pub fn run_fluctuation_study(config: &StudyConfig) -> Result<StudyResult> {
    run_scenarios(config, |i, s, model| {
        let ratios = model.ratios();
        let spikes = s.spikes.values();
        let leading = (spikes.len() + 1).min(model.rank());
        let samples = replicate(config, |rep| {
            let spectrum = replicate_spectrum(config, i, rep)?;
            Ok(spectrum.lambdas[..leading].to_vec())
        })?;
        let mut out = ScenarioResult::new(s, model);
        let n = model.n() as f64;
        let mut warnings = Vec::new();
        let mut outliers = Vec::new();
        let mut modes = Vec::new();

        for j in 0..leading {
            let lambdas: Vec<f64> = samples.iter().map(|row| row[j]).collect();
            let h = Histogram::new(&format!("lambda_{}", j + 1), &lambdas, config.bins);
            if j < spikes.len() {
                modes.push(h.mode());
            }
            out.histograms.push(h);
        }

        for (j, &r) in spikes.iter().enumerate() {
            let Some(gamma) = ratios.gamma_outlier(r)? else {
                warnings.push(format!(
                    "spike {} (r = {r}) is at or below r_c = {:.4}; its eigenvalue sticks to d+ and is not centred at an outlier limit",
                    j + 1,
                    ratios.threshold()
                ));
                continue;
            };
            let xi = ratios.xi_outlier(r)?;
            let centred: Vec<f64> = samples.iter().map(|row| n.sqrt() * (row[j] - gamma)).collect();
            let standardised: Vec<f64> = centred.iter().map(|c| c / xi).collect();
            let cm = Moments::of(&centred);
            let drift = cm.mean.abs() / cm.standard_error();
            let tied = spikes.iter().enumerate().any(|(o, &v)| o != j && v == r);
            if drift > DRIFT_FLAG && !tied {
                warnings.push(format!(
                    "centred statistic for index {} drifts by {drift:.1} standard errors; r = {r} may be too close to r_c = {:.4} for outlier asymptotics",
                    j + 1,
                    ratios.threshold()
                ));
            }
            out.histograms.push(Histogram::new(&format!("outlier_{}", j + 1), &standardised, config.bins));
            let sd_ratio = cm.sd / xi;
            outliers.push(OutlierFluctuation {
                index: j + 1,
                r,
                gamma,
                xi,
                centred: cm,
                standardised: Moments::of(&standardised),
                sd_ratio,
                implied_variance_scale: sd_ratio * sd_ratio / 2.0,
                drift,
            });
        }

        let k0 = out.k0;
        let edge = if k0 < leading {
            let d_plus = ratios.edges().d_plus;
            let scale = n.powf(2.0 / 3.0) / ratios.xi_tracy_widom();
            let stats: Vec<f64> = samples.iter().map(|row| scale * (row[k0] - d_plus)).collect();
            out.histograms.push(Histogram::new(&format!("edge_{}", k0 + 1), &stats, config.bins));
            Some(EdgeFluctuation { index: k0 + 1, statistic: Moments::of(&stats), ks_to_tw1: ks_to_tw1(&stats) })
        } else {
            None
        };

        out.fluctuation = Some(FluctuationSummary { outliers, edge, modes, warnings });
        out.samples = samples;
        Ok(out)
    })
}

/// Kolmogorov distance between a sample and the Tracy-Widom F1 law.
pub fn ks_to_tw1(values: &[f64]) -> f64 {
    let table = TracyWidomTable::embedded();
    let (lo, hi) = table.range();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ks_distance(&sorted, |x| if x <= lo { 0.0 } else if x >= hi { 1.0 } else { table.cdf(x).unwrap_or(f64::NAN) })
}

/// Distance of the sample spectra to the limiting law, edge exceedances and
/// the rejection rate of the independence test.
pub fn run_null_esd_study(config: &StudyConfig) -> Result<StudyResult> {
    run_scenarios(config, |i, s, model| {
        let ratios = model.ratios();
        let rows = replicate(config, |rep| {
            let spectrum = replicate_spectrum(config, i, rep)?;
            let ks = ks_distance_to_lsd(&spectrum, ratios)?;
            let rejected = test_independence(&spectrum, config.alpha)?.rejected();
            Ok((ks, spectrum.lambdas[0], rejected))
        })?;
        let mut out = ScenarioResult::new(s, model);
        let ks: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let l1: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let rejections = rows.iter().filter(|r| r.2).count();
        let reps = rows.len() as f64;
        out.null_esd = Some(NullEsdSummary {
            ks_to_lsd: Moments::of(&ks),
            lambda1: Moments::of(&l1),
            edge_fraction: l1.iter().filter(|&&l| l <= out.d_plus + 0.05).count() as f64 / reps,
            independence_rejections: rejections,
            independence_rate: rejections as f64 / reps,
        });
        out.histograms.push(Histogram::new("ks_to_lsd", &ks, config.bins));
        Ok(out)
    })
}

/// Upper-`alpha` quantiles of the GOE gap `lambda_1 - lambda_{j1}` for
/// `j1 = 2..=j1_max`, compared with the published 5% values.
pub fn run_gap_quantile_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let start = Instant::now();
    let compute = || {
        GoeGapQuantileTable::simulate(
            config.j1_max,
            config.alpha,
            config.variance_scale,
            config.reps,
            SampleSeed::new(config.seed, 0),
        )
    };
    let table = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Numerical(e.to_string()))?
            .install(compute)?,
        None => compute()?,
    };
    let factor = (config.variance_scale / DEFAULT_VARIANCE_SCALE).sqrt();
    let rows = table
        .quantiles
        .iter()
        .map(|(&j1, &quantile)| {
            let published = (config.alpha == 0.05)
                .then(|| PUBLISHED_GAP_QUANTILES_5PCT.get(j1 - 2).map(|q| q * factor))
                .flatten();
            GapQuantileRow { j1, quantile, published, relative_error: published.map(|p| quantile / p - 1.0) }
        })
        .collect();
    Ok(finish(config, Vec::new(), rows, start))
}

fn spikes_label(s: &Scenario) -> String {
    s.spikes.values().iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
}

impl StudyResult {
    /// Long-format table `study,p,q,n,spikes,metric,index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("study,p,q,n,spikes,metric,index,value\n");
        let mut row = |s: Option<&Scenario>, metric: &str, index: usize, value: f64| {
            let (p, q, n, spikes) = match s {
                Some(s) => (s.p.to_string(), s.q.to_string(), s.n.to_string(), spikes_label(s)),
                None => Default::default(),
            };
            let _ = writeln!(out, "{},{p},{q},{n},{spikes},{metric},{index},{value}", self.name);
        };
        for sr in &self.scenarios {
            let s = Some(&sr.scenario);
            row(s, "d_plus", 0, sr.d_plus);
            row(s, "r_c", 0, sr.r_c);
            row(s, "k0_true", 0, sr.k0 as f64);
            for table in &sr.counts {
                for (k, &c) in table.counts.iter().enumerate() {
                    row(s, &format!("count_{}", table.estimator), k, c as f64);
                }
            }
            for m in &sr.spikes {
                row(s, "r_hat_count", m.index, m.r_hat.count as f64);
                row(s, "r_hat_mean", m.index, m.r_hat.mean);
                row(s, "r_hat_sd", m.index, m.r_hat.sd);
            }
            if let Some(f) = &sr.fluctuation {
                for (j, mode) in f.modes.iter().enumerate() {
                    row(s, "lambda_mode", j + 1, *mode);
                }
                for o in &f.outliers {
                    row(s, "gamma", o.index, o.gamma);
                    row(s, "xi", o.index, o.xi);
                    row(s, "centred_mean", o.index, o.centred.mean);
                    row(s, "centred_sd", o.index, o.centred.sd);
                    row(s, "sd_ratio", o.index, o.sd_ratio);
                    row(s, "implied_variance_scale", o.index, o.implied_variance_scale);
                    row(s, "drift_se", o.index, o.drift);
                }
                if let Some(e) = &f.edge {
                    row(s, "edge_mean", e.index, e.statistic.mean);
                    row(s, "edge_sd", e.index, e.statistic.sd);
                    row(s, "edge_ks_tw1", e.index, e.ks_to_tw1);
                }
            }
            if let Some(e) = &sr.null_esd {
                row(s, "ks_mean", 0, e.ks_to_lsd.mean);
                row(s, "ks_sd", 0, e.ks_to_lsd.sd);
                row(s, "lambda1_mean", 0, e.lambda1.mean);
                row(s, "edge_fraction", 0, e.edge_fraction);
                row(s, "independence_rate", 0, e.independence_rate);
            }
        }
        for g in &self.gap_quantiles {
            row(None, "gap_quantile", g.j1, g.quantile);
            if let Some(p) = g.published {
                row(None, "gap_published", g.j1, p);
            }
        }
        out
    }

    /// `study,p,q,n,label,bin_lo,bin_hi,count`.
    pub fn histograms_csv(&self) -> String {
        let mut out = String::from("study,p,q,n,label,bin_lo,bin_hi,count\n");
        for sr in &self.scenarios {
            let s = &sr.scenario;
            for h in &sr.histograms {
                for (b, c) in h.counts.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{c}",
                        self.name,
                        s.p,
                        s.q,
                        s.n,
                        h.label,
                        h.edges[b],
                        h.edges[b + 1]
                    );
                }
            }
        }
        out
    }

    /// `study,p,q,n,rep,lambda_1,...` with one row per replication.
    pub fn samples_csv(&self) -> String {
        let width = self.scenarios.iter().flat_map(|s| s.samples.first()).map(Vec::len).max().unwrap_or(0);
        let mut out = String::from("study,p,q,n,rep");
        for j in 1..=width {
            let _ = write!(out, ",lambda_{j}");
        }
        out.push('\n');
        for sr in &self.scenarios {
            let s = &sr.scenario;
            for (rep, row) in sr.samples.iter().enumerate() {
                let _ = write!(out, "{},{},{},{},{rep}", self.name, s.p, s.q, s.n);
                for v in row {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Human-readable report; deterministic (no timing).
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "study {} ({:?}), {} replications, seed {}, engine {:?}",
            self.name, self.kind, self.reps, self.seed, self.engine
        );
        for sr in &self.scenarios {
            let s = &sr.scenario;
            let _ = writeln!(
                out,
                "\n{}  spikes [{}]  d+ = {:.4}  r_c = {:.4}  k0 = {}",
                s.label(),
                spikes_label(s).replace(';', ", "),
                sr.d_plus,
                sr.r_c,
                sr.k0
            );
            for t in &sr.counts {
                let cells: Vec<String> = t
                    .counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(k, c)| format!("{k}:{c}"))
                    .collect();
                let _ = writeln!(out, "  {:<4} {}", t.estimator, cells.join("  "));
            }
            for m in &sr.spikes {
                let truth = m.truth.map_or("-".to_string(), |t| format!("{t}"));
                let _ = writeln!(
                    out,
                    "  r_hat_{} (truth {truth}): mean {:.3}  sd {:.3}  over {}",
                    m.index, m.r_hat.mean, m.r_hat.sd, m.r_hat.count
                );
            }
            if let Some(f) = &sr.fluctuation {
                let modes: Vec<String> = f.modes.iter().map(|m| format!("{m:.3}")).collect();
                let _ = writeln!(out, "  histogram modes: {}", modes.join(", "));
                for o in &f.outliers {
                    let _ = writeln!(
                        out,
                        "  outlier {}: gamma {:.4}  xi {:.4}  mean {:.4} (se {:.4})  sd/xi {:.3}  implied scale {:.3}",
                        o.index,
                        o.gamma,
                        o.xi,
                        o.centred.mean,
                        o.centred.standard_error(),
                        o.sd_ratio,
                        o.implied_variance_scale
                    );
                }
                if let Some(e) = &f.edge {
                    let _ = writeln!(
                        out,
                        "  edge {}: mean {:.3}  sd {:.3}  KS to F1 {:.4}",
                        e.index, e.statistic.mean, e.statistic.sd, e.ks_to_tw1
                    );
                }
                for w in &f.warnings {
                    let _ = writeln!(out, "  warning: {w}");
                }
            }
            if let Some(e) = &sr.null_esd {
                let _ = writeln!(
                    out,
                    "  KS to limit: mean {:.4} sd {:.4}; lambda_1 <= d+ + 0.05 in {:.3}; independence rejections {} ({:.3})",
                    e.ks_to_lsd.mean,
                    e.ks_to_lsd.sd,
                    e.edge_fraction,
                    e.independence_rejections,
                    e.independence_rate
                );
            }
        }
        if !self.gap_quantiles.is_empty() {
            let _ = writeln!(out, "\nGOE gap upper-{} quantiles", self.alpha);
            for g in &self.gap_quantiles {
                match (g.published, g.relative_error) {
                    (Some(p), Some(e)) => {
                        let _ = writeln!(out, "  j1 = {:>2}: {:.4}  published {:.3}  ({:+.2}%)", g.j1, g.quantile, p, 100.0 * e);
                    }
                    _ => {
                        let _ = writeln!(out, "  j1 = {:>2}: {:.4}", g.j1, g.quantile);
                    }
                }
            }
        }
        out
    }

    /// Write whichever outputs `paths` names.
    pub fn write_outputs(&self, paths: &OutputPaths) -> Result<()> {
        let write = |path: &Option<PathBuf>, body: String| -> Result<()> {
            if let Some(p) = path {
                std::fs::write(p, body).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            }
            Ok(())
        };
        write(&paths.csv, self.to_csv())?;
        write(&paths.summary, self.summary())?;
        write(&paths.histograms, self.histograms_csv())?;
        if paths.samples.is_some() {
            write(&paths.samples, self.samples_csv())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: StudyKind, spikes: &[f64], reps: usize) -> StudyConfig {
        StudyConfig::new("t", kind, vec![Scenario::new(20, 10, 200, spikes).unwrap()], reps, 11)
    }

    #[test]
    fn zero_replications_rejected() {
        let c = small(StudyKind::K0, &[0.8], 0);
        assert!(matches!(run_k0_study(&c), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_scenario_rejected() {
        let mut c = small(StudyKind::K0, &[0.8], 5);
        c.scenarios[0].n = 25;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn counts_sum_to_reps() {
        let r = run_k0_study(&small(StudyKind::K0, &[0.8, 0.5], 40)).unwrap();
        for t in &r.scenarios[0].counts {
            assert_eq!(t.total(), 40);
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let mut c = small(StudyKind::Spikes, &[0.8, 0.5], 24);
        c.threads = Some(1);
        let a = run_spike_study(&c).unwrap();
        c.threads = Some(3);
        let b = run_spike_study(&c).unwrap();
        assert_eq!(a.scenarios, b.scenarios);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary(), b.summary());
    }

    #[test]
    fn seed_changes_output() {
        let mut c = small(StudyKind::K0, &[0.3], 30);
        let a = run_k0_study(&c).unwrap();
        c.seed += 1;
        let b = run_k0_study(&c).unwrap();
        assert_ne!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn empty_spikes_concentrate_at_zero() {
        let r = run_spike_study(&small(StudyKind::Spikes, &[], 30)).unwrap();
        let t = r.scenarios[0].count_table("k0").unwrap();
        assert!(t.fraction(0) >= 0.9);
    }

    #[test]
    fn strong_spikes_estimated_consistently() {
        let c = StudyConfig::new("t", StudyKind::Spikes, vec![Scenario::new(10, 5, 100_000, &[0.6, 0.3]).unwrap()], 40, 3);
        let r = run_spike_study(&c).unwrap();
        for m in &r.scenarios[0].spikes {
            let t = m.truth.unwrap();
            assert_eq!(m.r_hat.count, 40);
            assert!((m.r_hat.mean - t).abs() < 2.0 * m.r_hat.sd, "{m:?}");
        }
    }

    #[test]
    fn sticking_spike_is_flagged() {
        // r_c = sqrt(c1 c2 / ((1 - c1)(1 - c2))) is about 0.077 here.
        let c = small(StudyKind::Fluctuation, &[0.7, 0.05], 20);
        let r = run_fluctuation_study(&c).unwrap();
        let f = r.scenarios[0].fluctuation.as_ref().unwrap();
        assert_eq!(f.outliers.len(), 1);
        assert!(f.warnings.iter().any(|w| w.contains("spike 2")));
        assert_eq!(f.edge.as_ref().unwrap().index, 2);
        assert_eq!(r.scenarios[0].samples.len(), 20);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = Histogram::new("x", &[0.0, 0.5, 1.0, 1.0], 4);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts, vec![1, 0, 1, 2]);
        assert!((h.mode() - 0.875).abs() < 1e-12);
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            let back = StudyConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, c);
        }
        let err = preset("table9").unwrap_err().to_string();
        assert!(err.contains("table2-small"));
    }

    #[test]
    fn toml_config_parses() {
        let text = r#"
            name = "custom"
            kind = "k0"
            reps = 10
            seed = 5
            engine = "full"

            [[scenarios]]
            p = 20
            q = 10
            n = 200
            spikes = [0.8, 0.4]
        "#;
        let c = StudyConfig::from_toml_str(text).unwrap();
        assert_eq!(c.engine, Engine::Full);
        assert_eq!(c.scenarios[0].spikes.values(), &[0.8, 0.4]);
        assert_eq!(c.alpha, 0.05);
        assert!(StudyConfig::from_toml_str("name = 'x'\nkind = 'k0'\nreps = 0\n").is_err());
    }

    #[test]
    fn full_and_reduced_engines_agree_in_distribution() {
        let mut c = small(StudyKind::Spikes, &[0.7], 150);
        let reduced = run_spike_study(&c).unwrap();
        c.engine = Engine::Full;
        let full = run_spike_study(&c).unwrap();
        let a = &reduced.scenarios[0].spikes[0].r_hat;
        let b = &full.scenarios[0].spikes[0].r_hat;
        let se = (a.sd.powi(2) / a.count as f64 + b.sd.powi(2) / b.count as f64).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * se, "{a:?} vs {b:?}");
        assert!((a.sd / b.sd - 1.0).abs() < 0.3);
    }

    #[test]
    fn null_study_reports_rates() {
        let c = StudyConfig::new("t", StudyKind::NullEsd, vec![Scenario::new(40, 20, 400, &[]).unwrap()], 20, 1);
        let r = run_null_esd_study(&c).unwrap();
        let e = r.scenarios[0].null_esd.as_ref().unwrap();
        assert!(e.ks_to_lsd.mean < 0.15);
        assert!((0.0..=1.0).contains(&e.independence_rate));
    }

    #[test]
    fn gap_quantile_study_compares_with_published() {
        let mut c = StudyConfig::new("t", StudyKind::GapQuantiles, Vec::new(), 20_000, 2);
        c.j1_max = 3;
        let r = run_study(&c).unwrap();
        assert_eq!(r.gap_quantiles.len(), 2);
        for g in &r.gap_quantiles {
            assert!(g.relative_error.unwrap().abs() < 0.03, "{g:?}");
        }
    }
}
