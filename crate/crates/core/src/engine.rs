//! Sample canonical correlations from data.
//!
//! The squared canonical correlations are the squared cosines of the
//! principal angles between the row spaces of `X` and `Y`: with thin QR
//! factorisations `X' = Qx Rx`, `Y' = Qy Ry`, they are the squared singular
//! values of `Qx' Qy`. This never forms `Sxx^{-1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::LsdCdf;
use crate::rmt::{ModelConfig, Ratios};

/// Eigenvalues within this distance outside `[0, 1]` are rounding noise.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

/// Diagonal entries of `R` below this fraction of the largest one mark a
/// rank-deficient block.
const RANK_TOLERANCE: f64 = 1e-10;

/// A pair of canonical directions `(a_i, b_i)`, scaled so that the canonical
/// variates `a_i' X` and `b_i' Y` have unit sample variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpectrum {
    /// Descending, each in `[0, 1]`, length `min(p, q)`.
    pub lambdas: Vec<f64>,
    /// Sample size used in the asymptotic formulas (`n - 1` after centring).
    pub effective_n: usize,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<CanonicalPair>>,
}

impl SampleSpectrum {
    /// Wrap a known list of eigenvalues, e.g. published ones.
    pub fn from_eigenvalues(mut lambdas: Vec<f64>, config: ModelConfig) -> Result<Self> {
        if lambdas.len() != config.rank() {
            return Err(Error::Shape(format!(
                "expected min(p, q) = {} eigenvalues, got {}",
                config.rank(),
                lambdas.len()
            )));
        }
        for l in lambdas.iter_mut() {
            *l = clamp_unit(*l)?;
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { lambdas, effective_n: config.n(), config, directions: None })
    }

    pub fn ratios(&self) -> Ratios {
        self.config.ratios()
    }

    pub fn esd(&self) -> EmpiricalSpectralDistribution {
        EmpiricalSpectralDistribution::new(self.lambdas.clone())
    }
}

fn clamp_unit(l: f64) -> Result<f64> {
    if !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&l) {
        return Err(Error::Numerical(format!("eigenvalue {l} outside [0, 1]")));
    }
    Ok(l.clamp(0.0, 1.0))
}

/// Subtract each row's mean. Returns the centred matrix and `n - 1`.
pub fn center_observations(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let n = data.ncols();
    if n < 2 {
        return Err(Error::Shape(format!("need at least 2 observations, got {n}")));
    }
    let mut out = data.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    Ok((out, n - 1))
}

struct Basis {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn row_space_basis(block: &DMatrix<f64>, name: &str) -> Result<Basis> {
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape(format!("{name} has non-finite entries")));
    }
    let qr = block.transpose().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let largest = diag.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 || diag.iter().any(|&d| d <= RANK_TOLERANCE * largest) {
        return Err(Error::RankDeficient(format!(
            "{name} ({} x {}) does not have full row rank",
            block.nrows(),
            block.ncols()
        )));
    }
    Ok(Basis { q: qr.q(), r })
}

/// Squared sample canonical correlations of `X` (`p x n`) and `Y` (`q x n`).
///
/// With `centered = false` the rows are centred first and `effective_n`
/// becomes `n - 1`; with `centered = true` the data are used as given.
pub fn cca_eigenvalues(x: &DMatrix<f64>, y: &DMatrix<f64>, centered: bool) -> Result<SampleSpectrum> {
    cca(x, y, centered, false)
}

/// As [`cca_eigenvalues`], also returning the canonical direction pairs.
pub fn cca_with_directions(x: &DMatrix<f64>, y: &DMatrix<f64>, centered: bool) -> Result<SampleSpectrum> {
    cca(x, y, centered, true)
}

fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>, centered: bool, directions: bool) -> Result<SampleSpectrum> {
    if x.ncols() != y.ncols() {
        return Err(Error::Shape(format!(
            "X has {} observations but Y has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let (p, q, n) = (x.nrows(), y.nrows(), x.ncols());
    let (xc, yc, effective_n) = if centered {
        (x.clone(), y.clone(), n)
    } else {
        let (xc, ne) = center_observations(x)?;
        let (yc, _) = center_observations(y)?;
        (xc, yc, ne)
    };
    let config = ModelConfig::new(p, q, effective_n).map_err(|e| match e {
        Error::Domain(m) => Error::Shape(m),
        other => other,
    })?;
    let bx = row_space_basis(&xc, "X")?;
    let by = row_space_basis(&yc, "Y")?;
    let inner = bx.q.transpose() * &by.q;
    let rank = p.min(q);

    let (sigma, pairs) = if directions {
        let svd = inner.svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V'");
        let scale = (effective_n as f64).sqrt();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut pairs = Vec::with_capacity(rank);
        for &i in order.iter().take(rank) {
            let ui: DVector<f64> = u.column(i).into_owned();
            let vi: DVector<f64> = vt.row(i).transpose();
            let a = bx.r.solve_upper_triangular(&ui).ok_or_else(|| Error::RankDeficient("X".into()))?;
            let b = by.r.solve_upper_triangular(&vi).ok_or_else(|| Error::RankDeficient("Y".into()))?;
            pairs.push(CanonicalPair {
                a: (a * scale).iter().copied().collect(),
                b: (b * scale).iter().copied().collect(),
            });
        }
        let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        (sv, Some(pairs))
    } else {
        (inner.singular_values().iter().copied().collect::<Vec<_>>(), None)
    };

    let mut lambdas = sigma
        .iter()
        .map(|s| clamp_unit(s * s))
        .collect::<Result<Vec<_>>>()?;
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.truncate(rank);
    Ok(SampleSpectrum { lambdas, effective_n, config, directions: pairs })
}

/// Empirical spectral distribution `F_n(x) = #{lambda_i <= x} / len`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectralDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalSpectralDistribution {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { sorted: values }
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return if x >= 1.0 { 1.0 } else { 0.0 };
        }
        if x >= 1.0 {
            return 1.0;
        }
        let count = self.sorted.partition_point(|&v| v <= x);
        count as f64 / self.sorted.len() as f64
    }
}

pub fn esd(spectrum: &SampleSpectrum, x: f64) -> f64 {
    spectrum.esd().eval(x)
}

/// Kolmogorov distance between an empirical CDF and a continuous CDF,
/// checked on both sides of every jump.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let len = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            let above = (i + 1) as f64 / len - f;
            let below = f - i as f64 / len;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov distance between the spectrum's ESD and the Wachter law.
pub fn ks_distance_to_lsd(spectrum: &SampleSpectrum, ratios: Ratios) -> Result<f64> {
    let cdf = LsdCdf::new(ratios);
    let mass = cdf.total_mass();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical(format!("limiting CDF has mass {mass}")));
    }
    let esd = spectrum.esd();
    Ok(ks_distance(esd.values(), |x| cdf.eval(x)))
}
