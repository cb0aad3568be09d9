//! Spike counting, spike estimation and the two tests built on the edge and
//! outlier limit laws, plus the classical model-selection baselines.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{cca_eigenvalues, SampleSpectrum};
use crate::error::{param, Error, Result};
use crate::refdist::{GoeGapQuantileTable, TracyWidomTable};
use crate::rmt::ModelConfig;

/// `log(log n) / n^{2/3}`, the default gap between the bulk edge and the
/// smallest eigenvalue counted as an outlier.
pub fn default_epsilon(n: usize) -> Result<f64> {
    if n < 16 {
        return Err(param(format!("default epsilon needs n >= 16, got {n}")));
    }
    let n = n as f64;
    Ok(n.ln().ln() / n.powf(2.0 / 3.0))
}

fn resolve_epsilon(spectrum: &SampleSpectrum, epsilon: Option<f64>) -> Result<f64> {
    match epsilon {
        Some(e) if e > 0.0 && e.is_finite() => Ok(e),
        Some(e) => Err(param(format!("epsilon must be positive, got {e}"))),
        None => default_epsilon(spectrum.effective_n),
    }
}

/// Number of eigenvalues at or above `d+ + epsilon`.
pub fn estimate_k0(spectrum: &SampleSpectrum, epsilon: Option<f64>) -> Result<usize> {
    let eps = resolve_epsilon(spectrum, epsilon)?;
    let cut = spectrum.config.constants().d_plus + eps;
    Ok(spectrum.lambdas.iter().take_while(|&&l| l >= cut).count())
}

/// A run of consecutive outliers judged to share one population spike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityGroup {
    /// One-based index of the first eigenvalue in the run.
    pub start: usize,
    pub size: usize,
    pub pooled_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeEstimate {
    pub k_hat: usize,
    pub epsilon_n: f64,
    /// Estimates after pooling within multiplicity groups.
    pub r_hat: Vec<f64>,
    pub rho_hat: Vec<f64>,
    /// Per-eigenvalue inversions before pooling.
    pub r_hat_unpooled: Vec<f64>,
    pub groups: Vec<MultiplicityGroup>,
    /// `true` where the eigenvalue sat below `d+` and the inversion clamped.
    pub clamped: Vec<bool>,
}

impl SpikeEstimate {
    fn empty(epsilon_n: f64) -> Self {
        Self {
            k_hat: 0,
            epsilon_n,
            r_hat: Vec::new(),
            rho_hat: Vec::new(),
            r_hat_unpooled: Vec::new(),
            groups: Vec::new(),
            clamped: Vec::new(),
        }
    }

    fn apply_groups(&mut self, groups: Vec<MultiplicityGroup>) {
        for g in &groups {
            for i in g.start - 1..g.start - 1 + g.size {
                self.r_hat[i] = g.pooled_r;
                self.rho_hat[i] = g.pooled_r.sqrt();
            }
        }
        self.groups = groups;
    }
}

/// Invert the outlier map for the `k_hat` largest eigenvalues.
pub fn estimate_spikes(spectrum: &SampleSpectrum, k_hat: usize) -> Result<SpikeEstimate> {
    if k_hat > spectrum.lambdas.len() {
        return Err(param(format!(
            "k_hat = {k_hat} exceeds the {} available eigenvalues",
            spectrum.lambdas.len()
        )));
    }
    let ratios = spectrum.ratios();
    let inv = spectrum.lambdas[..k_hat]
        .iter()
        .map(|&l| ratios.phi_invert(l))
        .collect::<Result<Vec<_>>>()?;
    let r_hat: Vec<f64> = inv.iter().map(|v| v.r_hat).collect();
    let epsilon_n = default_epsilon(spectrum.effective_n).unwrap_or(f64::NAN);
    Ok(SpikeEstimate {
        k_hat,
        epsilon_n,
        rho_hat: r_hat.iter().map(|r| r.sqrt()).collect(),
        r_hat_unpooled: r_hat.clone(),
        r_hat,
        groups: Vec::new(),
        clamped: inv.iter().map(|v| v.clamped).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Retain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInputs {
    pub lambdas: Vec<f64>,
    pub config: ModelConfig,
    pub effective_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    /// Rejection threshold for the statistic at level `alpha`.
    pub critical_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub alpha: f64,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub inputs: TestInputs,
}

impl TestReport {
    pub fn rejected(&self) -> bool {
        self.decision == Decision::Reject
    }
}

fn inputs(spectrum: &SampleSpectrum) -> TestInputs {
    TestInputs {
        lambdas: spectrum.lambdas.clone(),
        config: spectrum.config,
        effective_n: spectrum.effective_n,
        group: None,
        variance_scale: None,
    }
}

/// Test of `r_1 = 0` from the largest eigenvalue's Tracy-Widom edge law.
///
/// Statistic `n^{2/3} (lambda_1 - d+) / xi_tw`; the hypothesis is rejected
/// when `lambda_1 > n^{-2/3} q xi_tw + d+`, `q` the `1 - alpha` quantile of F1.
pub fn test_independence(spectrum: &SampleSpectrum, alpha: f64) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(param(format!("alpha {alpha} outside (0, 1)")));
    }
    let lambda1 = *spectrum
        .lambdas
        .first()
        .ok_or_else(|| Error::Shape("empty spectrum".into()))?;
    let ratios = spectrum.ratios();
    let d_plus = ratios.edges().d_plus;
    let xi_tw = ratios.xi_tracy_widom();
    let n23 = (spectrum.effective_n as f64).powf(2.0 / 3.0);
    let statistic = n23 * (lambda1 - d_plus) / xi_tw;
    let table = TracyWidomTable::embedded();
    let q = table.quantile(1.0 - alpha)?;
    let threshold = q * xi_tw / n23 + d_plus;
    let decision = if lambda1 > threshold { Decision::Reject } else { Decision::Retain };

    let (lo, hi) = table.range();
    let (p_value, note) = if statistic > hi {
        let bound = table.sf(hi)?;
        (bound, Some(format!("statistic beyond tabulated range; p-value < {bound:.3e}")))
    } else if statistic < lo {
        (1.0, Some("statistic below tabulated range; p-value > 1 - 1e-12".to_string()))
    } else {
        (table.sf(statistic)?, None)
    };
    Ok(TestReport {
        test: "independence".into(),
        statistic,
        critical_value: q,
        p_value: Some(p_value),
        alpha,
        decision,
        note,
        inputs: inputs(spectrum),
    })
}

/// Test that eigenvalues `j0 ..= j0 + j1 - 1` (one-based) come from one
/// population spike, against the GOE gap reference `table`.
pub fn test_multiplicity(
    spectrum: &SampleSpectrum,
    j0: usize,
    j1: usize,
    alpha: f64,
    table: &GoeGapQuantileTable,
) -> Result<TestReport> {
    let k_hat = estimate_k0(spectrum, None)?;
    test_multiplicity_within(spectrum, j0, j1, alpha, table, k_hat)
}

/// As [`test_multiplicity`] with an explicit outlier count.
pub fn test_multiplicity_within(
    spectrum: &SampleSpectrum,
    j0: usize,
    j1: usize,
    alpha: f64,
    table: &GoeGapQuantileTable,
    k_hat: usize,
) -> Result<TestReport> {
    if j0 < 1 || j1 < 2 {
        return Err(param(format!("need j0 >= 1 and j1 >= 2, got ({j0}, {j1})")));
    }
    let last = j0 + j1 - 1;
    if last > k_hat {
        return Err(param(format!(
            "group {j0}..={last} extends beyond the {k_hat} detected outliers"
        )));
    }
    if (alpha - table.alpha).abs() > 1e-12 {
        return Err(param(format!(
            "critical values are tabulated at alpha = {}, requested {alpha}",
            table.alpha
        )));
    }
    let ratios = spectrum.ratios();
    let group = &spectrum.lambdas[j0 - 1..last];
    let pooled = group
        .iter()
        .map(|&l| ratios.phi_invert(l).map(|v| v.r_hat))
        .sum::<Result<f64>>()?
        / j1 as f64;
    if pooled <= ratios.threshold() {
        return Err(Error::Domain(format!(
            "pooled spike {pooled} is not above r_c = {}; scale undefined",
            ratios.threshold()
        )));
    }
    let xi = ratios.xi_outlier(pooled)?;
    let spread = group[0] - group[j1 - 1];
    let statistic = (spectrum.effective_n as f64).sqrt() * spread / xi;
    let q = table.quantile(j1)?;
    let decision = if statistic > q { Decision::Reject } else { Decision::Retain };
    let mut inputs = inputs(spectrum);
    inputs.group = Some((j0, j1));
    inputs.variance_scale = Some(table.variance_scale);
    Ok(TestReport {
        test: "multiplicity".into(),
        statistic,
        critical_value: q,
        p_value: None,
        alpha,
        decision,
        note: Some(format!("pooled r = {pooled}")),
        inputs,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub alpha: f64,
    pub epsilon: Option<f64>,
    /// Critical values for the multiplicity scan (5% level).
    pub gap_table: GoeGapQuantileTable,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { alpha: 0.05, epsilon: None, gap_table: GoeGapQuantileTable::published() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub estimate: SpikeEstimate,
    pub tests: Vec<TestReport>,
    /// `true` when the independence test retained and nothing was estimated.
    pub stopped_at_independence: bool,
}

/// Full estimation procedure: independence test, outlier count, inversion,
/// greedy multiplicity pooling and square roots.
///
/// Multiplicity groups are formed scanning downward from the largest
/// outlier. Each group grows one eigenvalue at a time while the enlarged run
/// is not rejected; groups are disjoint.
pub fn estimate_ccc_pipeline(spectrum: &SampleSpectrum, options: &PipelineOptions) -> Result<PipelineResult> {
    let epsilon = resolve_epsilon(spectrum, options.epsilon)?;
    let independence = test_independence(spectrum, options.alpha)?;
    let mut tests = vec![independence];
    if !tests[0].rejected() {
        return Ok(PipelineResult { estimate: SpikeEstimate::empty(epsilon), tests, stopped_at_independence: true });
    }
    let k_hat = estimate_k0(spectrum, Some(epsilon))?;
    let mut estimate = estimate_spikes(spectrum, k_hat)?;
    estimate.epsilon_n = epsilon;

    let table = &options.gap_table;
    let mut groups = Vec::new();
    let mut start = 1;
    while start < k_hat {
        let mut size = 1;
        let mut j1 = 2;
        while start + j1 - 1 <= k_hat && table.quantiles.contains_key(&j1) {
            match test_multiplicity_within(spectrum, start, j1, table.alpha, table, k_hat) {
                Ok(report) => {
                    let keep = !report.rejected();
                    tests.push(report);
                    if !keep {
                        break;
                    }
                    size = j1;
                    j1 += 1;
                }
                Err(Error::Domain(_)) => break,
                Err(e) => return Err(e),
            }
        }
        if size >= 2 {
            let pooled = estimate.r_hat_unpooled[start - 1..start - 1 + size].iter().sum::<f64>() / size as f64;
            groups.push(MultiplicityGroup { start, size, pooled_r: pooled });
        }
        start += size;
    }
    estimate.apply_groups(groups);
    Ok(PipelineResult { estimate, tests, stopped_at_independence: false })
}

/// Run the pipeline on raw data (`X` is `p x n`, `Y` is `q x n`), centring
/// first so that `n - 1` is used throughout.
pub fn estimate_ccc_from_data(
    x: &nalgebra::DMatrix<f64>,
    y: &nalgebra::DMatrix<f64>,
    options: &PipelineOptions,
) -> Result<(SampleSpectrum, PipelineResult)> {
    let spectrum = cca_eigenvalues(x, y, false)?;
    let result = estimate_ccc_pipeline(&spectrum, options)?;
    Ok((spectrum, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub aic: usize,
    pub bic: usize,
    pub cp: usize,
}

/// Values of the three criteria at `j = 0..=len`, with the `j = 0` entries
/// fixed at zero. Eigenvalues at 1 (within 1e-12) make the criteria `+inf`
/// for every `j` below them.
pub fn model_selection_criteria(lambdas: &[f64], p: usize, q: usize, n: usize) -> [Vec<f64>; 3] {
    let len = lambdas.len();
    let nf = n as f64;
    let log_n = nf.ln();
    let mut aic = vec![0.0; len + 1];
    let mut bic = vec![0.0; len + 1];
    let mut cp = vec![0.0; len + 1];
    // Suffix sums over i > j.
    let mut log_tail = 0.0;
    let mut ratio_tail = 0.0;
    let mut suffix_log = vec![0.0; len + 1];
    let mut suffix_ratio = vec![0.0; len + 1];
    for i in (0..len).rev() {
        let l = lambdas[i];
        if l >= 1.0 - 1e-12 {
            log_tail = f64::NEG_INFINITY;
            ratio_tail = f64::INFINITY;
        } else {
            log_tail += (1.0 - l).ln();
            ratio_tail += l / (1.0 - l);
        }
        suffix_log[i] = log_tail;
        suffix_ratio[i] = ratio_tail;
    }
    for j in 1..=len {
        let dof = (p as f64 - j as f64) * (q as f64 - j as f64);
        let fit = -nf * suffix_log[j];
        aic[j] = fit - 2.0 * dof;
        bic[j] = fit - log_n * dof;
        cp[j] = nf * suffix_ratio[j] - 2.0 * dof;
    }
    [aic, bic, cp]
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = j;
        }
    }
    best
}

/// AIC, BIC and C_p estimates of the number of nonzero canonical
/// correlations. Ties go to the smallest `j`.
pub fn model_selection_counts(spectrum: &SampleSpectrum, p: usize, q: usize, n: usize) -> ModelSelection {
    let [aic, bic, cp] = model_selection_criteria(&spectrum.lambdas, p, q, n);
    ModelSelection { aic: argmin(&aic), bic: argmin(&bic), cp: argmin(&cp) }
}

/// Plug-in power of the independence test against a single spike `r1`,
/// replacing `sqrt(n)(lambda_1 - gamma_1) / xi(r_1)` by its Gaussian limit
/// with variance `2 * variance_scale`. This is a finite-`n` approximation.
pub fn asymptotic_power(r1: f64, config: &ModelConfig, alpha: f64, variance_scale: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(param(format!("alpha {alpha} outside (0, 1)")));
    }
    if variance_scale.is_nan() || variance_scale <= 0.0 {
        return Err(param("variance scale must be positive"));
    }
    let ratios = config.ratios();
    let gamma = ratios
        .gamma_outlier(r1)?
        .ok_or_else(|| Error::Domain(format!("r1 = {r1} is not above r_c = {}", ratios.threshold())))?;
    if r1 >= 1.0 {
        return Ok(1.0);
    }
    let xi = ratios.xi_outlier(r1)?;
    let n = config.n() as f64;
    let q = TracyWidomTable::embedded().quantile(1.0 - alpha)?;
    let d_plus = ratios.edges().d_plus;
    let cut = (n.powf(-1.0 / 6.0) * q * ratios.xi_tracy_widom() + n.sqrt() * (d_plus - gamma)) / xi;
    let normal = Normal::new(0.0, (2.0 * variance_scale).sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(normal.sf(cut))
}
