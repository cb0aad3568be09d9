//! Reference distributions for the edge and multiplicity tests.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::sampling::{fill_goe, SampleSeed};

const TW1_DATA: &str = include_str!("../data/tw1.txt");

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Self { x, y, slopes }
    }

    fn eval(&self, t: f64) -> f64 {
        let i = self.x.partition_point(|&v| v <= t).clamp(1, self.x.len() - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.slopes[i] + h01 * self.y[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Tabulated Tracy-Widom (beta = 1) distribution.
///
/// The CDF is interpolated monotonically in `F1` itself; the upper tail is
/// interpolated in `log(1 - F1)`, which is close to a `-x^{3/2}` curve and
/// keeps small p-values accurate.
#[derive(Debug, Clone)]
pub struct TracyWidomTable {
    grid: Vec<f64>,
    cdf: Pchip,
    log_sf: Pchip,
    /// Where interpolation switches from `F1` to `log(1 - F1)`.
    tail_start: f64,
}

impl TracyWidomTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
                return Err(Error::Config(format!("bad table line: {line}")));
            };
            let x: f64 = a.parse().map_err(|_| Error::Config(format!("bad x: {a}")))?;
            let f: f64 = b.parse().map_err(|_| Error::Config(format!("bad F1: {b}")))?;
            xs.push(x);
            fs.push(f);
        }
        if xs.len() < 4 {
            return Err(Error::Config("table too short".into()));
        }
        let sf: Vec<f64> = fs.iter().map(|f| (1.0 - f).ln()).collect();
        Ok(Self {
            cdf: Pchip::new(xs.clone(), fs),
            log_sf: Pchip::new(xs.clone(), sf),
            grid: xs,
            tail_start: 0.0,
        })
    }

    /// The table shipped with the crate.
    pub fn embedded() -> &'static Self {
        static TABLE: OnceLock<TracyWidomTable> = OnceLock::new();
        TABLE.get_or_init(|| Self::parse(TW1_DATA).expect("embedded TW1 table is well formed"))
    }

    pub fn range(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().unwrap())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn check_range(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&x) {
            return Err(Error::Domain(format!("x = {x} outside tabulated range [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.check_range(x)?;
        if x > self.tail_start {
            return Ok(1.0 - self.log_sf.eval(x).exp());
        }
        Ok(self.cdf.eval(x).clamp(0.0, 1.0))
    }

    /// Upper tail `1 - F1(x)`.
    pub fn sf(&self, x: f64) -> Result<f64> {
        self.check_range(x)?;
        if x > self.tail_start {
            return Ok(self.log_sf.eval(x).exp());
        }
        Ok((1.0 - self.cdf.eval(x)).clamp(0.0, 1.0))
    }

    /// `alpha`-quantile: the `x` with `F1(x) = alpha`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(param(format!("quantile level {alpha} outside (0, 1)")));
        }
        let (mut lo, mut hi) = self.range();
        if self.cdf(lo)? > alpha || self.cdf(hi)? < alpha {
            return Err(Error::Domain(format!("level {alpha} beyond tabulated range")));
        }
        // Bisect on the side of the distribution that keeps precision.
        let upper = alpha > 0.5;
        let target = if upper { (1.0 - alpha).ln() } else { alpha };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let below = if upper {
                self.sf(mid)?.ln() > target
            } else {
                self.cdf(mid)? < target
            };
            if below {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn tw1_cdf(x: f64) -> Result<f64> {
    TracyWidomTable::embedded().cdf(x)
}

pub fn tw1_sf(x: f64) -> Result<f64> {
    TracyWidomTable::embedded().sf(x)
}

pub fn tw1_quantile(alpha: f64) -> Result<f64> {
    TracyWidomTable::embedded().quantile(alpha)
}

/// Type-7 sample quantile (linear interpolation between order statistics)
/// of an ascending slice.
pub fn quantile_type7(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replications per parallel block in the GOE gap simulation.
const GAP_BLOCK: usize = 10_000;

/// Monte Carlo draws of `lambda_1(G) - lambda_{j1}(G)` for `j1 x j1`
/// symmetric Gaussian `G` with entry variance `variance_scale (1 + delta_ij)`.
/// Block `b` uses stream `seed.child(j1).stream(b)`; output is in draw order.
pub fn goe_gap_draws(j1: usize, variance_scale: f64, reps: usize, seed: SampleSeed) -> Result<Vec<f64>> {
    if j1 < 2 {
        return Err(param(format!("group size j1 must be at least 2, got {j1}")));
    }
    if !(variance_scale > 0.0 && variance_scale.is_finite()) {
        return Err(param(format!("variance scale must be positive, got {variance_scale}")));
    }
    let base = seed.child(j1 as u64);
    let blocks = reps.div_ceil(GAP_BLOCK);
    let chunks: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = GAP_BLOCK.min(reps - b * GAP_BLOCK);
            let mut rng = SampleSeed::new(base.root_seed, b as u64).rng();
            let mut g = DMatrix::zeros(j1, j1);
            (0..count)
                .map(|_| {
                    fill_goe(&mut rng, variance_scale, &mut g);
                    let ev = g.symmetric_eigenvalues();
                    ev.max() - ev.min()
                })
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

/// Upper-`alpha` quantile of the GOE gap, i.e. the `1 - alpha` quantile.
pub fn goe_gap_quantile(j1: usize, alpha: f64, variance_scale: f64, reps: usize, seed: SampleSeed) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(param(format!("alpha {alpha} outside (0, 1)")));
    }
    if reps < 10_000 {
        return Err(param(format!("need at least 10^4 replications, got {reps}")));
    }
    let mut draws = goe_gap_draws(j1, variance_scale, reps, seed)?;
    draws.sort_by(f64::total_cmp);
    Ok(quantile_type7(&draws, 1.0 - alpha))
}

/// The published 5% critical values for group sizes 2..=10 under the
/// `(1 + delta_ij) / 2` normalisation.
pub const PUBLISHED_GAP_QUANTILES_5PCT: [f64; 9] = [3.462, 4.593, 5.459, 6.191, 6.838, 7.424, 7.964, 8.468, 8.942];

/// Default entry-variance multiplier for the GOE reference, matching the
/// published critical values.
pub const DEFAULT_VARIANCE_SCALE: f64 = 0.5;

/// Entry-variance multiplier under which a single isolated outlier satisfies
/// `sd(sqrt(n)(lambda_1 - gamma_1)) = sqrt(2 * scale) * xi(r_1)`, as measured
/// by the fluctuation study (ratio 1.44 to 1.45 at the Figure-1 setup).
pub const CALIBRATED_VARIANCE_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoeGapQuantileTable {
    pub alpha: f64,
    pub variance_scale: f64,
    /// Replications behind each entry; zero for the published table.
    pub reps: usize,
    pub seed: Option<SampleSeed>,
    pub quantiles: BTreeMap<usize, f64>,
}

impl GoeGapQuantileTable {
    /// Published 5% values for `j1 = 2..=10`, `variance_scale = 1/2`.
    pub fn published() -> Self {
        let quantiles = PUBLISHED_GAP_QUANTILES_5PCT
            .iter()
            .enumerate()
            .map(|(i, &q)| (i + 2, q))
            .collect();
        Self { alpha: 0.05, variance_scale: DEFAULT_VARIANCE_SCALE, reps: 0, seed: None, quantiles }
    }

    pub fn simulate(j1_max: usize, alpha: f64, variance_scale: f64, reps: usize, seed: SampleSeed) -> Result<Self> {
        let quantiles = (2..=j1_max)
            .map(|j| goe_gap_quantile(j, alpha, variance_scale, reps, seed).map(|q| (j, q)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { alpha, variance_scale, reps, seed: Some(seed), quantiles })
    }

    /// Same table under another variance scale (quantiles scale as the
    /// square root of the entry variance).
    pub fn rescaled(&self, variance_scale: f64) -> Self {
        let f = (variance_scale / self.variance_scale).sqrt();
        Self {
            variance_scale,
            quantiles: self.quantiles.iter().map(|(&j, &q)| (j, q * f)).collect(),
            ..self.clone()
        }
    }

    pub fn quantile(&self, j1: usize) -> Result<f64> {
        self.quantiles
            .get(&j1)
            .copied()
            .ok_or_else(|| param(format!("no critical value tabulated for j1 = {j1}")))
    }
}
