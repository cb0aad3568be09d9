//! Gauss-Legendre quadrature and the limiting spectral CDF built on it.

use std::f64::consts::PI;

use crate::rmt::Ratios;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Limiting spectral CDF `F(x)` of the Wachter law.
///
/// Uses the angle substitution `x = a + (b - a)(1 - cos t)/2`, which absorbs
/// both square-root edges and leaves a smooth integrand on `[0, pi]`.
#[derive(Debug, Clone)]
pub struct LsdCdf {
    ratios: Ratios,
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LsdCdf {
    pub fn new(ratios: Ratios) -> Self {
        let e = ratios.edges();
        let (nodes, weights) = gauss_legendre(96);
        Self { ratios, lo: e.d_minus, hi: e.d_plus, nodes, weights }
    }

    fn integrand(&self, theta: f64) -> f64 {
        let half = 0.5 * (self.hi - self.lo);
        let x = self.lo + half * (1.0 - theta.cos());
        let sin = theta.sin();
        let c_min = self.ratios.c1().min(self.ratios.c2());
        // sqrt((b-x)(x-a)) dx = half^2 sin^2 dt
        if x <= 0.0 {
            // d- = 0 endpoint: x ~ half t^2 / 2 and sin^2 / x -> 2 / half.
            return half * half * 2.0 / half / (2.0 * PI * c_min);
        }
        half * half * sin * sin / (2.0 * PI * c_min * x * (1.0 - x))
    }

    /// Composite Gauss-Legendre over `[0, theta]` split into panels.
    fn integrate_to(&self, theta: f64) -> f64 {
        const PANELS: usize = 4;
        let h = theta / PANELS as f64;
        let mut total = 0.0;
        for k in 0..PANELS {
            let a = k as f64 * h;
            let mid = a + 0.5 * h;
            for (t, w) in self.nodes.iter().zip(&self.weights) {
                total += w * 0.5 * h * self.integrand(mid + 0.5 * h * t);
            }
        }
        total
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let half = 0.5 * (self.hi - self.lo);
        let cos = (1.0 - (x - self.lo) / half).clamp(-1.0, 1.0);
        self.integrate_to(cos.acos()).clamp(0.0, 1.0)
    }

    /// Total mass; equals one up to quadrature error.
    pub fn total_mass(&self) -> f64 {
        self.integrate_to(PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(10);
        let sum: f64 = w.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
        let x18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((x18 - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn cdf_is_a_distribution() {
        for (c1, c2) in [(0.1, 0.2), (0.3, 0.3), (0.05, 0.6)] {
            let cdf = LsdCdf::new(Ratios::new(c1, c2).unwrap());
            assert!((cdf.total_mass() - 1.0).abs() < 1e-10, "mass at ({c1},{c2})");
            let mut prev = 0.0;
            for i in 0..=100 {
                let v = cdf.eval(i as f64 / 100.0);
                assert!(v >= prev);
                prev = v;
            }
        }
    }
}
