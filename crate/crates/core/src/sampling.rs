//! Seeded generation of the spiked Gaussian CCA model and GOE-type matrices.
//!
//! Random streams come from ChaCha20 keyed by `root_seed`, with `stream_id`
//! selecting the 64-bit ChaCha stream. Streams with distinct ids never
//! overlap. Gaussian variates use the ziggurat sampler of `rand_distr`
//! (`StandardNormal`); chi-square variates use `rand_distr::ChiSquared`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rmt::{ModelConfig, SpikeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSeed {
    pub root_seed: u64,
    pub stream_id: u64,
}

impl SampleSeed {
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        Self { root_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.root_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Seed for a sub-experiment, keyed off a distinct root.
    pub fn child(&self, tag: u64) -> Self {
        // splitmix64 finaliser keeps nearby tags far apart.
        let mut z = self.root_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Self { root_seed: z ^ (z >> 31), stream_id: self.stream_id }
    }
}

/// Observations in columns: `x` is `p x n`, `y` is `q x n`.
#[derive(Debug, Clone)]
pub struct DataMatrixPair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub config: ModelConfig,
    pub spikes: SpikeSpec,
    pub seed: SampleSeed,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn chi<R: Rng>(rng: &mut R, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").sample(rng).sqrt()
}

/// Draw `n` centred observations of `z = (x', y')'` with `Sxx = I`, `Syy = I`
/// and `Sxy = diag(sqrt(r_1), ..., sqrt(r_k)) (+) 0`.
///
/// Built as `X = W + T Y`: `Y` has i.i.d. `N(0, 1)` entries and row `i` of `W`
/// has variance `1 - r_i` (one beyond the spikes). `Y` is drawn first, row by
/// row, then `W`.
pub fn sample_spiked(config: ModelConfig, spikes: &SpikeSpec, seed: SampleSeed) -> Result<DataMatrixPair> {
    spikes.check_against(&config)?;
    let (p, q, n) = (config.p(), config.q(), config.n());
    let mut rng = seed.rng();
    let mut y = DMatrix::<f64>::zeros(q, n);
    for i in 0..q {
        for j in 0..n {
            y[(i, j)] = normal(&mut rng);
        }
    }
    let mut x = DMatrix::<f64>::zeros(p, n);
    let r = spikes.values();
    for i in 0..p {
        let (noise, signal) = match r.get(i) {
            Some(&ri) => ((1.0 - ri).sqrt(), ri.sqrt()),
            None => (1.0, 0.0),
        };
        for j in 0..n {
            let w = normal(&mut rng);
            x[(i, j)] = noise * w + if signal != 0.0 { signal * y[(i, j)] } else { 0.0 };
        }
    }
    Ok(DataMatrixPair { x, y, config, spikes: spikes.clone(), seed })
}

/// Sample CCA eigenvalues of the spiked model without forming the data.
///
/// Rotating the observation space so the regressor block's row space becomes
/// coordinate-aligned reduces the problem to the `m x m` pencil
/// `(H, H + E)`, `m = min(p, q)`, with `H = Z Z'`, `Z` an `m x max(p, q)`
/// Gaussian matrix shifted by the Bartlett factor of the regressor block, and
/// `E` a Wishart matrix with `n - max(p, q)` degrees of freedom. The eigenvalues
/// have exactly the law of [`crate::engine::cca_eigenvalues`] applied to
/// [`sample_spiked`] output; individual draws differ.
pub fn sample_spiked_spectrum(config: ModelConfig, spikes: &SpikeSpec, seed: SampleSeed) -> Result<Vec<f64>> {
    spikes.check_against(&config)?;
    let mut rng = seed.rng();
    let n = config.n();
    let m = config.p().min(config.q());
    let big = config.p().max(config.q());
    let r = spikes.values();
    let k = r.len();
    let scale: Vec<f64> = (0..m).map(|i| r.get(i).map_or(1.0, |ri| (1.0 - ri).sqrt())).collect();

    let mut z = DMatrix::<f64>::zeros(m, big);
    for i in 0..m {
        for j in 0..big {
            z[(i, j)] = scale[i] * normal(&mut rng);
        }
    }
    for (i, &ri) in r.iter().enumerate().take(k) {
        let s = ri.sqrt();
        for j in 0..i {
            z[(i, j)] += s * normal(&mut rng);
        }
        z[(i, i)] += s * chi(&mut rng, n - i);
    }

    // E = D^{1/2} B B' D^{1/2}, B lower-triangular Bartlett factor.
    let mut b = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..i {
            b[(i, j)] = scale[i] * normal(&mut rng);
        }
        b[(i, i)] = scale[i] * chi(&mut rng, n - big - i);
    }
    let h = &z * z.transpose();
    let total = &h + &b * b.transpose();
    let chol = total
        .cholesky()
        .ok_or_else(|| Error::Numerical("H + E not positive definite".into()))?;
    let l = chol.l();
    let left = l
        .solve_lower_triangular(&h)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let both = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let sym = (&both + both.transpose()) * 0.5;
    let mut lambdas: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok(lambdas)
}

/// Fill `g` with a symmetric Gaussian matrix: entry `(i, j)`, `i <= j`, is
/// `N(0, scale (1 + delta_ij))`. Entries are drawn row-major over the upper
/// triangle.
pub(crate) fn fill_goe<R: Rng>(rng: &mut R, variance_scale: f64, g: &mut DMatrix<f64>) {
    let k = g.nrows();
    let off = variance_scale.sqrt();
    let diag = (2.0 * variance_scale).sqrt();
    for i in 0..k {
        for j in i..k {
            let v = normal(rng) * if i == j { diag } else { off };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
}

pub fn sample_goe(k: usize, variance_scale: f64, seed: SampleSeed) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(param("GOE dimension must be at least 1"));
    }
    if !(variance_scale > 0.0 && variance_scale.is_finite()) {
        return Err(param(format!("variance scale must be positive, got {variance_scale}")));
    }
    let mut g = DMatrix::zeros(k, k);
    fill_goe(&mut seed.rng(), variance_scale, &mut g);
    Ok(g)
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn descending_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}
