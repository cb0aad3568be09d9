//! Closed-form limiting quantities for the spiked CCA ensemble.
//!
//! Everything here is a pure function of the dimension ratios `c1 = p/n`,
//! `c2 = q/n` and, where relevant, a population spike `r` (a squared
//! population canonical correlation). The formulas are symmetric in
//! `(c1, c2)` except where noted; the asymmetric ones (the LSD density and
//! its Stieltjes transforms) are oriented so that the density describes the
//! `min(p, q)` nonzero eigenvalues.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Problem dimensions: `p` variables in x, `q` in y, `n` observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    p: usize,
    q: usize,
    n: usize,
}

impl ModelConfig {
    pub fn new(p: usize, q: usize, n: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(domain(format!("dimensions must be positive (p={p}, q={q})")));
        }
        if n <= p + q {
            return Err(domain(format!("need n > p + q, got p={p}, q={q}, n={n}")));
        }
        Ok(Self { p, q, n })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of nonzero sample canonical correlations.
    pub fn rank(&self) -> usize {
        self.p.min(self.q)
    }

    pub fn c1(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn c2(&self) -> f64 {
        self.q as f64 / self.n as f64
    }

    pub fn ratios(&self) -> Ratios {
        // n > p + q already guarantees the ratio constraints.
        Ratios { c1: self.c1(), c2: self.c2() }
    }

    pub fn constants(&self) -> SpectralConstants {
        self.ratios().edges()
    }
}

/// Bulk edges `d-`, `d+` and the phase-transition threshold `r_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    pub d_minus: f64,
    pub d_plus: f64,
    pub r_c: f64,
}

/// Ordered population spikes `r_1 >= ... >= r_k`, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SpikeSpec(Vec<f64>);

impl SpikeSpec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &r in &values {
            if !(r > 0.0 && r <= 1.0) {
                return Err(domain(format!("spike {r} outside (0, 1]")));
            }
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(domain("spikes must be in descending order"));
        }
        Ok(Self(values))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of spikes strictly above the threshold (the detectable ones).
    pub fn k0(&self, ratios: Ratios) -> usize {
        let rc = ratios.threshold();
        self.0.iter().filter(|&&r| r > rc).count()
    }

    /// Check the spike count against a model's dimensions.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        if self.len() > config.rank() {
            return Err(Error::Shape(format!(
                "{} spikes but min(p, q) = {}",
                self.len(),
                config.rank()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for SpikeSpec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SpikeSpec> for Vec<f64> {
    fn from(s: SpikeSpec) -> Self {
        s.0
    }
}

/// A validated pair of dimension ratios with `0 < c1, c2` and `c1 + c2 < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    c1: f64,
    c2: f64,
}

/// Outcome of inverting the outlier map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiInverse {
    pub r_hat: f64,
    /// The input sat below `d+` and the discriminant was clamped to zero.
    pub clamped: bool,
}

impl Ratios {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c1 < 1.0 && c2 > 0.0 && c2 < 1.0) {
            return Err(domain(format!("ratios must lie in (0, 1): c1={c1}, c2={c2}")));
        }
        if c1 + c2 >= 1.0 {
            return Err(domain(format!("need c1 + c2 < 1, got {}", c1 + c2)));
        }
        Ok(Self { c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// `(larger, smaller)` ratio, i.e. the `p > q` labelling.
    fn oriented(&self) -> (f64, f64) {
        if self.c1 >= self.c2 {
            (self.c1, self.c2)
        } else {
            (self.c2, self.c1)
        }
    }

    pub fn edges(&self) -> SpectralConstants {
        let a = (self.c1 * (1.0 - self.c2)).sqrt();
        let b = (self.c2 * (1.0 - self.c1)).sqrt();
        SpectralConstants {
            d_minus: (a - b) * (a - b),
            d_plus: ((a + b) * (a + b)).min(1.0),
            r_c: self.threshold(),
        }
    }

    pub fn threshold(&self) -> f64 {
        (self.c1 * self.c2 / ((1.0 - self.c1) * (1.0 - self.c2))).sqrt()
    }

    /// Wachter density of the limiting spectrum of the `min(p, q)` nonzero
    /// eigenvalues. Zero outside `[d-, d+]`. When `d- = 0` the density has an
    /// inverse square-root pole at the origin, so `x = 0` is rejected.
    pub fn lsd_density(&self, x: f64) -> Result<f64> {
        let SpectralConstants { d_minus, d_plus, .. } = self.edges();
        let (_, c_min) = self.oriented();
        if x == 0.0 && d_minus == 0.0 {
            return Err(domain("density is unbounded at x = 0 when d- = 0"));
        }
        if x <= d_minus || x >= d_plus {
            return Ok(0.0);
        }
        let root = ((d_plus - x) * (x - d_minus)).sqrt();
        Ok(root / (2.0 * std::f64::consts::PI * c_min * x * (1.0 - x)))
    }

    /// `sqrt((z - d-)(z - d+))` on the branch analytic off `[d-, d+]` that
    /// behaves like `z` at infinity.
    fn edge_root(&self, z: Complex64) -> Complex64 {
        let SpectralConstants { d_minus, d_plus, .. } = self.edges();
        (z - d_minus).sqrt() * (z - d_plus).sqrt()
    }

    fn check_off_support(&self, z: Complex64) -> Result<()> {
        let SpectralConstants { d_minus, d_plus, .. } = self.edges();
        if z.im == 0.0 && z.re >= d_minus && z.re <= d_plus {
            return Err(domain(format!("z = {} lies on the support [{d_minus}, {d_plus}]", z.re)));
        }
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(domain("z must be finite"));
        }
        Ok(())
    }

    /// The auxiliary transform `s(z)`, root of
    /// `(z-1) s^2 + (c1 + c2 - z) s - c1 c2 = 0` with `Im s > 0` on the
    /// upper half-plane.
    ///
    /// Evaluated as `-2 c1 c2 / (z - c1 - c2 + R(z))`, the conjugate form of
    /// the quadratic-formula root, which stays finite at `z = 1`.
    pub fn stieltjes_s(&self, z: Complex64) -> Result<Complex64> {
        self.check_off_support(z)?;
        let root = self.edge_root(z);
        let denom = z - self.c1 - self.c2 + root;
        if denom.norm() == 0.0 {
            return Err(Error::Numerical(format!("s(z) undefined at z = {z}")));
        }
        Ok(-2.0 * self.c1 * self.c2 / denom)
    }

    /// `(s_check, s_tilde)`: Stieltjes transforms of the limiting spectra of the
    /// larger and the smaller of the two CCA matrices. `s_tilde` is the
    /// transform of [`Ratios::lsd_density`], i.e. `int f(x) / (x - z) dx`.
    pub fn stieltjes_lsd(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        self.check_off_support(z)?;
        if z.norm() == 0.0 || (z - 1.0).norm() == 0.0 {
            return Err(domain("z = 0 and z = 1 are excluded"));
        }
        let s = self.stieltjes_s(z)?;
        let (c_max, c_min) = self.oriented();
        let inv = z.inv();
        Ok((s / (c_max * z) - inv, s / (c_min * z) - inv))
    }

    /// The limiting secular function whose zero in `(d+, 1]` is the outlier
    /// location `gamma(r)`.
    pub fn m_function(&self, z: Complex64, r: f64) -> Result<Complex64> {
        if !(0.0..=1.0).contains(&r) {
            return Err(domain(format!("r = {r} outside [0, 1]")));
        }
        let (c1, c2) = (self.c1, self.c2);
        let one_minus = Complex64::new(1.0, 0.0) - z;
        let s = if z == Complex64::new(1.0, 0.0) {
            Complex64::new(-c1 * c2 / (1.0 - c1 - c2), 0.0)
        } else {
            self.stieltjes_s(z)?
        };
        let bulk = (c2 - (1.0 - c1) * z - one_minus * s) * (1.0 - r);
        let spike = one_minus * (1.0 - one_minus * s / c2) * r;
        Ok(bulk + spike)
    }

    /// Almost-sure limit of the sample eigenvalue driven by spike `r`, or
    /// `None` when `r <= r_c` (the eigenvalue sticks to `d+`).
    pub fn gamma_outlier(&self, r: f64) -> Result<Option<f64>> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(domain(format!("spike {r} outside (0, 1]")));
        }
        if r <= self.threshold() {
            return Ok(None);
        }
        Ok(Some(self.gamma_unchecked(r)))
    }

    fn gamma_unchecked(&self, r: f64) -> f64 {
        r * (1.0 - self.c1 + self.c1 / r) * (1.0 - self.c2 + self.c2 / r)
    }

    /// Inverse of the outlier map: the larger root of `gamma(r) = lambda`.
    ///
    /// For `lambda` below `d+` the discriminant is clamped at zero and the
    /// result is flagged.
    pub fn phi_invert(&self, lambda: f64) -> Result<PhiInverse> {
        if !(lambda.is_finite() && lambda <= 1.0) {
            return Err(domain(format!("lambda = {lambda} must be at most 1")));
        }
        let SpectralConstants { d_minus, d_plus, .. } = self.edges();
        let (c1, c2) = (self.c1, self.c2);
        let disc = (lambda - d_minus) * (lambda - d_plus);
        let clamped = lambda < d_plus;
        let root = if clamped { 0.0 } else { disc.max(0.0).sqrt() };
        let r_hat =
            (2.0 * c1 * c2 - c1 - c2 + lambda + root) / (2.0 * (c1 * c2 - c1 - c2 + 1.0));
        Ok(PhiInverse { r_hat, clamped })
    }

    /// Both roots of `gamma(r) = lambda` as `(larger, smaller)`; meaningful for
    /// `lambda >= d+`.
    pub fn phi_roots(&self, lambda: f64) -> Result<(f64, f64)> {
        let SpectralConstants { d_minus, d_plus, .. } = self.edges();
        if lambda < d_plus || lambda > 1.0 {
            return Err(domain(format!("lambda = {lambda} outside [d+, 1]")));
        }
        let (c1, c2) = (self.c1, self.c2);
        let root = ((lambda - d_minus) * (lambda - d_plus)).sqrt();
        let base = 2.0 * c1 * c2 - c1 - c2 + lambda;
        let denom = 2.0 * (c1 * c2 - c1 - c2 + 1.0);
        Ok(((base + root) / denom, (base - root) / denom))
    }

    /// Squared outlier fluctuation scale `xi^2(r)`.
    pub fn xi_outlier_sq(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(domain(format!("spike {r} outside (0, 1]")));
        }
        let (c1, c2) = (self.c1, self.c2);
        let a = (1.0 - c1) * (1.0 - c2);
        let below = a * r * r - c1 * c2;
        let value = (1.0 - r).powi(2) * (2.0 * a * r + c1 + c2 - 2.0 * c1 * c2) * below / (r * r);
        if value < 0.0 {
            return Err(domain(format!("xi^2 negative at r = {r} (below r_c)")));
        }
        Ok(value)
    }

    /// Outlier fluctuation scale `xi(r)`: `sqrt(n) (lambda - gamma) / xi`
    /// has an `O(1)` Gaussian limit.
    pub fn xi_outlier(&self, r: f64) -> Result<f64> {
        self.xi_outlier_sq(r).map(f64::sqrt)
    }

    /// Tracy-Widom scale for the edge: `n^{2/3} (lambda - d+) / xi_tw => F1`.
    pub fn xi_tracy_widom(&self) -> f64 {
        self.xi_tracy_widom_cubed().cbrt()
    }

    pub fn xi_tracy_widom_cubed(&self) -> f64 {
        let d = self.edges().d_plus;
        let (c1, c2) = (self.c1, self.c2);
        d * d * (1.0 - d).powi(2) / (c1 * c2 * (1.0 - c1) * (1.0 - c2)).sqrt()
    }
}
