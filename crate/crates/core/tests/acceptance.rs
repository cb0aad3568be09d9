//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (bypassing output capture) before asserting.

use std::io::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use spikecca::inference::{estimate_ccc_pipeline, PipelineOptions};
use spikecca::montecarlo::{run_study, Scenario, StudyConfig, StudyKind};
use spikecca::quad::LsdCdf;
use spikecca::refdist::{CALIBRATED_VARIANCE_SCALE, PUBLISHED_GAP_QUANTILES_5PCT};
use spikecca::{cca_eigenvalues, ModelConfig, Ratios, SampleSeed, SampleSpectrum};

const SEED: u64 = 2017;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance criterion {id:>2} [{name}]: {verdict} -- {detail}");
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[test]
fn criterion_01_formula_fidelity() {
    let start = Instant::now();
    let fig = Ratios::new(0.1, 0.2).unwrap();
    let data = Ratios::new(8.0 / 44.0, 6.0 / 44.0).unwrap();
    let (d1, rc) = (fig.edges().d_plus, fig.threshold());
    let (d2, xi3) = (data.edges().d_plus, data.xi_tracy_widom_cubed());
    let elapsed = start.elapsed().as_secs_f64();
    let pass = round3(d1) == 0.5
        && round3(rc) == 0.167
        && round3(d2) == 0.533
        && round3(xi3) == 0.468
        && elapsed < 1.0;
    report(
        1,
        "formula fidelity",
        pass,
        &format!("d+ = {d1:.4}, r_c = {rc:.4}; (8/44, 6/44) d+ = {d2:.4}, xi_tw^3 = {xi3:.4}; {elapsed:.2e} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_outlier_map() {
    let r = Ratios::new(0.1, 0.2).unwrap();
    let g = |x: f64| r.gamma_outlier(x).unwrap().unwrap();
    let (g5, g4, g3) = (g(0.5), g(0.4), g(0.3));
    let values_ok = (g5 - 0.66).abs() < 1e-12 && (g4 - 0.598).abs() < 1e-12 && (g3 - 0.5427).abs() < 5e-5;
    let sticks = r.gamma_outlier(0.16).unwrap().is_none();
    let mut rng = SampleSeed::new(SEED, 2).rng();
    let rc = r.threshold();
    let worst = (0..100)
        .map(|_| {
            let spike = rc + (1.0 - rc) * rng.random::<f64>();
            (r.phi_invert(g(spike)).unwrap().r_hat - spike).abs()
        })
        .fold(0.0, f64::max);
    let pass = values_ok && sticks && worst <= 1e-10;
    report(
        2,
        "outlier map",
        pass,
        &format!("gamma = ({g5:.4}, {g4:.4}, {g3:.4}); r = 0.16 sticks: {sticks}; max round-trip error {worst:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_analytic_oracles() {
    let start = Instant::now();
    let mut rng = SampleSeed::new(SEED, 3).rng();
    let mut worst_s = 0.0f64;
    let mut worst_identity = 0.0f64;
    for _ in 0..1000 {
        let c1 = 0.01 + 0.5 * rng.random::<f64>();
        let c2 = 0.01 + (0.97 - c1) * rng.random::<f64>();
        let r = Ratios::new(c1, c2).unwrap();
        let z = Complex64::new(-0.5 + 2.0 * rng.random::<f64>(), (0.001 + rng.random::<f64>()) * if rng.random() { 1.0 } else { -1.0 });
        let s = r.stieltjes_s(z).unwrap();
        let terms = [(z - 1.0) * s * s, (c1 + c2 - z) * s, Complex64::new(c1 * c2, 0.0)];
        let scale = terms.iter().map(|t| t.norm()).fold(0.0, f64::max);
        worst_s = worst_s.max((terms[0] + terms[1] - terms[2]).norm() / scale);
        let (check, tilde) = r.stieltjes_lsd(z).unwrap();
        let (hi, lo) = (c1.max(c2), c1.min(c2));
        let a = (check - (s / (hi * z) - 1.0 / z)).norm() / check.norm().max(1.0);
        let b = (tilde - (s / (lo * z) - 1.0 / z)).norm() / tilde.norm().max(1.0);
        worst_identity = worst_identity.max(a).max(b);
    }
    let fig = Ratios::new(0.1, 0.2).unwrap();
    let rc = fig.threshold();
    let worst_m = (0..100)
        .map(|_| {
            let spike = rc + 0.01 + (0.99 - rc - 0.01) * rng.random::<f64>();
            let gamma = fig.gamma_outlier(spike).unwrap().unwrap();
            fig.m_function(Complex64::new(gamma, 0.0), spike).unwrap().norm()
        })
        .fold(0.0, f64::max);
    let mass_error = [(0.1, 0.2), (8.0 / 44.0, 6.0 / 44.0), (0.3, 0.4)]
        .iter()
        .map(|&(a, b)| (LsdCdf::new(Ratios::new(a, b).unwrap()).total_mass() - 1.0).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_s <= 1e-12 && worst_m <= 1e-10 && mass_error <= 1e-8 && worst_identity <= 1e-12 && elapsed < 5.0;
    report(
        3,
        "analytic oracles",
        pass,
        &format!(
            "s residual {worst_s:.1e}, m(gamma) {worst_m:.1e}, mass error {mass_error:.1e}, Stieltjes identity {worst_identity:.1e}; {elapsed:.2} s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_worked_example() {
    let config = ModelConfig::new(8, 6, 44).unwrap();
    let spectrum = SampleSpectrum::from_eigenvalues(vec![0.829, 0.520, 0.359, 0.107, 0.094, 0.038], config).unwrap();
    let out = estimate_ccc_pipeline(&spectrum, &PipelineOptions::default()).unwrap();
    let t = &out.tests[0];
    let p = t.p_value.unwrap();
    let ratio = p / 3.71e-5;
    let rho = out.estimate.rho_hat.first().copied().unwrap_or(f64::NAN);
    let pass = (t.statistic - 4.75).abs() < 0.01
        && (0.8..=1.25).contains(&ratio)
        && out.estimate.k_hat == 1
        && (rho - 0.864).abs() <= 0.001;
    report(
        4,
        "worked example",
        pass,
        &format!(
            "statistic {:.3}, p-value {p:.3e} (ratio {ratio:.3}), k0_hat = {}, rho_1 = {rho:.4}",
            t.statistic, out.estimate.k_hat
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_gap_quantile_table() {
    let mut config = StudyConfig::new("table4", StudyKind::GapQuantiles, Vec::new(), 1_000_000, SEED);
    config.variance_scale = 0.5;
    config.j1_max = 10;
    let result = run_study(&config).unwrap();
    let rows = &result.gap_quantiles;
    let worst = rows.iter().map(|g| g.relative_error.unwrap().abs()).fold(0.0, f64::max);
    let all_within = rows.len() == 9
        && rows.iter().zip(PUBLISHED_GAP_QUANTILES_5PCT).all(|(g, q)| (g.quantile / q - 1.0).abs() <= 0.005);
    // P(gap > t) = exp(-t^2 / 4) for j1 = 2.
    let closed = (4.0 * 20f64.ln()).sqrt();
    let density = closed / 2.0 * (-closed * closed / 4.0).exp();
    let mc_sd = (0.05 * 0.95 / config.reps as f64).sqrt() / density;
    let q2 = rows[0].quantile;
    let closed_ok = (q2 - closed).abs() <= 3.0 * mc_sd;
    let pass = all_within && closed_ok;
    let list: Vec<String> = rows.iter().map(|g| format!("{:.3}", g.quantile)).collect();
    report(
        5,
        "GOE gap quantiles",
        pass,
        &format!(
            "[{}], max rel. error {:.3}%; j1 = 2: {q2:.4} vs sqrt(4 ln 20) = {closed:.4} (3 MC sd = {:.4}); {:.0} s",
            list.join(", "),
            100.0 * worst,
            3.0 * mc_sd,
            result.runtime.elapsed_secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_spike_count_table() {
    let scenario = Scenario::new(60, 30, 600, &[0.8, 0.6, 0.4, 0.2]).unwrap();
    let config = StudyConfig::new("table2-desk", StudyKind::K0, vec![scenario], 200, SEED);
    let result = run_study(&config).unwrap();
    let sc = &result.scenarios[0];
    let k0 = sc.count_table("k0").unwrap();
    let bic = sc.count_table("bic").unwrap();
    let frac = k0.fraction(4);
    let half = 2.576 * (0.814 * 0.186 / 200.0f64).sqrt();
    let bic_low = bic.fraction_at_most(2);
    let pass = (frac - 0.814).abs() <= half && bic_low >= 0.99;
    report(
        6,
        "spike count table",
        pass,
        &format!(
            "k0_hat = 4 in {frac:.3} (band {:.3}..{:.3}); BIC <= 2 in {bic_low:.3}; k0 counts {:?}",
            0.814 - half,
            0.814 + half,
            &k0.counts[..7]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_spike_estimates() {
    let scenario = Scenario::new(110, 55, 1100, &[0.8, 0.6, 0.4, 0.2]).unwrap();
    let config = StudyConfig::new("table3_1-desk", StudyKind::Spikes, vec![scenario], 200, SEED);
    let result = run_study(&config).unwrap();
    let spikes = &result.scenarios[0].spikes;
    let target = [0.799, 0.599, 0.397, 0.189];
    let reference_sd = [0.012, 0.020, 0.025, 0.026];
    let mut pass = spikes.len() >= 4;
    let mut cells = Vec::new();
    for i in 0..4 {
        let m = &spikes[i].r_hat;
        let tol = 3.0 * reference_sd[i] / 200f64.sqrt();
        let ok = (m.mean - target[i]).abs() <= tol;
        pass &= ok;
        cells.push(format!("r{}: {:.4} vs {} +- {tol:.4} (n = {}){}", i + 1, m.mean, target[i], m.count, if ok { "" } else { " x" }));
    }
    report(7, "spike estimates", pass, &cells.join("; "));
    assert!(pass);
}

#[test]
fn criterion_08_fluctuations() {
    let scenario = Scenario::new(500, 1000, 5000, &[0.5, 0.4, 0.3, 0.16]).unwrap();
    let config = StudyConfig::new("figure1", StudyKind::Fluctuation, vec![scenario], 500, SEED);
    let result = run_study(&config).unwrap();
    let f = result.scenarios[0].fluctuation.as_ref().unwrap();
    let edge = f.edge.as_ref().unwrap();
    let first = &f.outliers[0];
    let c = (2.0 * CALIBRATED_VARIANCE_SCALE).sqrt();
    let target_sd = c * first.xi;
    let se = first.centred.standard_error();
    let centred_ok = first.centred.mean.abs() <= 3.0 * se;
    let sd_ok = (first.centred.sd / target_sd - 1.0).abs() <= 0.15;
    let ks_ok = edge.index == 4 && edge.ks_to_tw1 < 0.08;
    let pass = centred_ok && sd_ok && ks_ok;
    report(
        8,
        "fluctuations",
        pass,
        &format!(
            "edge KS to F1 {:.4} (index {}); sqrt(n)(l1 - g1) mean {:.4} = {:.2} se; sd {:.4} vs c xi = {target_sd:.4} (c = {c:.4}, ratio {:.3}); {:.0} s",
            edge.ks_to_tw1,
            edge.index,
            first.centred.mean,
            first.centred.mean / se,
            first.centred.sd,
            first.centred.sd / target_sd,
            result.runtime.elapsed_secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_null_case() {
    let scenario = Scenario::new(200, 100, 1000, &[]).unwrap();
    let short = StudyConfig::new("null-esd", StudyKind::NullEsd, vec![scenario.clone()], 100, SEED);
    let a = run_study(&short).unwrap();
    let ea = a.scenarios[0].null_esd.clone().unwrap();
    let long = StudyConfig::new("null-size", StudyKind::NullEsd, vec![scenario], 2000, SEED + 1);
    let b = run_study(&long).unwrap();
    let eb = b.scenarios[0].null_esd.clone().unwrap();
    let pass = ea.ks_to_lsd.mean < 0.04 && ea.edge_fraction >= 0.99 && (eb.independence_rate - 0.05).abs() <= 0.02;
    report(
        9,
        "null case",
        pass,
        &format!(
            "mean KS {:.4} (100 reps); lambda_1 <= d+ + 0.05 in {:.3}; size {:.4} over 2000 reps",
            ea.ks_to_lsd.mean, ea.edge_fraction, eb.independence_rate
        ),
    );
    assert!(pass);
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SampleSeed::new(SEED, seed).rng();
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

#[test]
fn criterion_10_engine_invariants() {
    let mut worst_invariance = 0.0f64;
    for seed in 0..50u64 {
        let (p, q, n) = (3 + (seed % 5) as usize, 2 + (seed % 4) as usize, 40);
        let x = random_matrix(p, n, 4 * seed);
        let y = random_matrix(q, n, 4 * seed + 1) + 0.4 * random_matrix(q, p, 4 * seed + 2) * &x;
        let base = cca_eigenvalues(&x, &y, false).unwrap().lambdas;
        let a = random_matrix(p, p, 4 * seed + 3) + DMatrix::identity(p, p) * 3.0;
        let b = random_matrix(q, q, 4 * seed + 3) + DMatrix::identity(q, q) * 3.0;
        let moved = cca_eigenvalues(&(&a * &x), &(&b * &y), false).unwrap().lambdas;
        let swapped = cca_eigenvalues(&y, &x, false).unwrap().lambdas;
        for i in 0..base.len() {
            worst_invariance = worst_invariance.max((base[i] - moved[i]).abs()).max((base[i] - swapped[i]).abs());
        }
    }

    // p = q = 2, n = 5 integers, used as given (centring would leave
    // n - 1 = p + q).
    let x = DMatrix::from_row_slice(2, 5, &[1.0, 3.0, 2.0, 5.0, 4.0, 2.0, 1.0, 4.0, 3.0, 7.0]);
    let y = DMatrix::from_row_slice(2, 5, &[3.0, 1.0, 4.0, 1.0, 5.0, 2.0, 6.0, 5.0, 3.0, 5.0]);
    let sxx = &x * x.transpose();
    let syy = &y * y.transpose();
    let sxy = &x * y.transpose();
    let m = sxx.try_inverse().unwrap() * &sxy * syy.try_inverse().unwrap() * sxy.transpose();
    let (tr, det): (f64, f64) = (m.trace(), m.determinant());
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let want = [(tr + disc) / 2.0, (tr - disc) / 2.0];
    let got = cca_eigenvalues(&x, &y, true).unwrap().lambdas;
    let brute = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let pass = worst_invariance <= 1e-9 && brute <= 1e-10;
    report(
        10,
        "engine invariants",
        pass,
        &format!("max invariance deviation {worst_invariance:.1e}; brute-force 2x2 deviation {brute:.1e}"),
    );
    assert!(pass);
}
