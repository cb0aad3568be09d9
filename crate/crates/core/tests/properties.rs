use num_complex::Complex64;
use proptest::prelude::*;

use spikecca::inference::{
    estimate_k0, model_selection_counts, model_selection_criteria, test_independence, Decision,
};
use spikecca::refdist::{quantile_type7, tw1_cdf, tw1_quantile};
use spikecca::{ModelConfig, Ratios, SampleSpectrum, SpikeSpec};

fn ratios() -> impl Strategy<Value = Ratios> {
    (0.01f64..0.6).prop_flat_map(|c1| (Just(c1), 0.01f64..(0.98 - c1))).prop_map(|(c1, c2)| Ratios::new(c1, c2).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn edges_are_ordered_and_symmetric(r in ratios()) {
        let e = r.edges();
        let swapped = Ratios::new(r.c2(), r.c1()).unwrap().edges();
        prop_assert!(0.0 <= e.d_minus && e.d_minus < e.d_plus && e.d_plus <= 1.0);
        prop_assert!(e.r_c > 0.0 && e.r_c < 1.0);
        prop_assert!((e.d_plus - swapped.d_plus).abs() < 1e-15);
        prop_assert!((e.d_minus - swapped.d_minus).abs() < 1e-15);
        prop_assert!((e.r_c - swapped.r_c).abs() < 1e-15);
        let width = 4.0 * (r.c1() * r.c2() * (1.0 - r.c1()) * (1.0 - r.c2())).sqrt();
        prop_assert!((e.d_plus - e.d_minus - width).abs() < 1e-14);
        prop_assert!((r.xi_tracy_widom() - Ratios::new(r.c2(), r.c1()).unwrap().xi_tracy_widom()).abs() < 1e-14);
    }

    #[test]
    fn s_solves_its_quadratic(r in ratios(), re in -1.0f64..2.0, im in 1e-3f64..1.0, lower in any::<bool>()) {
        let z = Complex64::new(re, if lower { -im } else { im });
        let s = r.stieltjes_s(z).unwrap();
        let (c1, c2) = (r.c1(), r.c2());
        let terms = [(z - 1.0) * s * s, (c1 + c2 - z) * s, Complex64::new(c1 * c2, 0.0)];
        let residual = (terms[0] + terms[1] - terms[2]).norm();
        let scale = terms.iter().map(|t| t.norm()).fold(0.0, f64::max);
        prop_assert!(residual <= 1e-12 * scale, "residual {residual:e} at {z}");
        if lower {
            prop_assert!(s.im < 0.0);
        } else {
            prop_assert!(s.im > 0.0);
        }
    }

    #[test]
    fn stieltjes_identity(r in ratios(), re in -0.5f64..1.5, im in 1e-3f64..1.0) {
        let z = Complex64::new(re, im);
        let s = r.stieltjes_s(z).unwrap();
        let (check, tilde) = r.stieltjes_lsd(z).unwrap();
        let (hi, lo) = (r.c1().max(r.c2()), r.c1().min(r.c2()));
        let want_check = s / (hi * z) - 1.0 / z;
        let want_tilde = s / (lo * z) - 1.0 / z;
        prop_assert!((check - want_check).norm() <= 1e-12 * want_check.norm().max(1.0));
        prop_assert!((tilde - want_tilde).norm() <= 1e-12 * want_tilde.norm().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn phi_inverts_gamma(r in ratios(), u in 0.0f64..1.0) {
        let rc = r.threshold();
        let spike = rc + 1e-9 + u * (1.0 - rc - 1e-9);
        let gamma = r.gamma_outlier(spike).unwrap().unwrap();
        let back = r.phi_invert(gamma).unwrap().r_hat;
        // gamma - d+ = a (r - r_c)^2 / r with a = (1 - c1)(1 - c2), so one
        // rounding of gamma moves r by about sqrt(ulp r / a).
        let a = (1.0 - r.c1()) * (1.0 - r.c2());
        let conditioning = 4.0 * (f64::EPSILON * spike / a).sqrt();
        let tol = if spike - rc > 1e-5 { 1e-10 } else { 1e-10 + conditioning };
        prop_assert!((back - spike).abs() <= tol, "r = {spike}, back = {back}");
    }

    #[test]
    fn gamma_inverts_phi(r in ratios(), u in 0.0f64..1.0) {
        let d_plus = r.edges().d_plus;
        let lambda = d_plus + 1e-9 + u * (1.0 - d_plus - 1e-9);
        let spike = r.phi_invert(lambda).unwrap();
        prop_assert!(!spike.clamped);
        let back = r.gamma_outlier(spike.r_hat).unwrap().unwrap();
        prop_assert!((back - lambda).abs() <= 1e-10);
    }

    #[test]
    fn roots_multiply_to_threshold_squared(r in ratios(), u in 0.0f64..1.0) {
        let d_plus = r.edges().d_plus;
        let lambda = d_plus + u * (1.0 - d_plus);
        let (plus, minus) = r.phi_roots(lambda).unwrap();
        prop_assert!((plus * minus - r.threshold().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn m_vanishes_at_gamma(r in ratios(), u in 0.0f64..1.0) {
        let rc = r.threshold();
        prop_assume!(rc + 0.01 < 0.99);
        let spike = rc + 0.01 + u * (0.99 - rc - 0.01);
        let gamma = r.gamma_outlier(spike).unwrap().unwrap();
        let m = r.m_function(Complex64::new(gamma, 0.0), spike).unwrap();
        prop_assert!(m.norm() < 1e-10, "m = {m}");
    }

    #[test]
    fn gamma_is_increasing_above_threshold(r in ratios()) {
        let rc = r.threshold();
        let d_plus = r.edges().d_plus;
        let mut prev = d_plus;
        for i in 1..=2000 {
            let spike = rc + (1.0 - rc) * i as f64 / 2000.0;
            let g = r.gamma_outlier(spike).unwrap().unwrap();
            prop_assert!(g > prev && g <= 1.0 + 1e-15);
            prev = g;
        }
        prop_assert!(r.gamma_outlier(rc * 0.999).unwrap().is_none());
        prop_assert!((r.gamma_outlier(1.0).unwrap().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn xi_vanishes_at_both_ends(r in ratios()) {
        prop_assert!(r.xi_outlier(1.0).unwrap().abs() < 1e-15);
        prop_assert!(r.xi_outlier(r.threshold() * (1.0 + 1e-12)).unwrap().abs() < 1e-5);
        let mid = 0.5 * (r.threshold() + 1.0);
        prop_assert!(r.xi_outlier(mid).unwrap() > 0.0);
    }

    #[test]
    fn k0_is_monotone_in_epsilon(mut lambdas in prop::collection::vec(0.0f64..1.0, 10), e1 in 1e-4f64..0.3, e2 in 1e-4f64..0.3) {
        lambdas.sort_by(|a, b| b.total_cmp(a));
        let s = SampleSpectrum::from_eigenvalues(lambdas, ModelConfig::new(20, 10, 200).unwrap()).unwrap();
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(estimate_k0(&s, Some(lo)).unwrap() >= estimate_k0(&s, Some(hi)).unwrap());
    }

    #[test]
    fn independence_decision_matches_statistic_form(l1 in 0.0f64..1.0, alpha in 0.01f64..0.2) {
        let config = ModelConfig::new(30, 20, 400).unwrap();
        let s = SampleSpectrum::from_eigenvalues(
            std::iter::once(l1).chain(std::iter::repeat_n(0.0, 19)).collect(),
            config,
        )
        .unwrap();
        let report = test_independence(&s, alpha).unwrap();
        let q = tw1_quantile(1.0 - alpha).unwrap();
        prop_assume!((report.statistic - q).abs() > 1e-9);
        let expected = if report.statistic > q { Decision::Reject } else { Decision::Retain };
        prop_assert_eq!(report.decision, expected);
        prop_assert!((report.critical_value - q).abs() < 1e-12);
    }

    #[test]
    fn tw_quantile_inverts_cdf(level in 0.001f64..0.999) {
        let x = tw1_quantile(level).unwrap();
        prop_assert!((tw1_cdf(x).unwrap() - level).abs() < 1e-9);
    }

    #[test]
    fn descending_spike_specs_only(values in prop::collection::vec(0.01f64..1.0, 1..6)) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(SpikeSpec::new(sorted.clone()).is_ok());
        let ascending = sorted.windows(2).any(|w| w[0] > w[1]);
        if ascending {
            let mut rev = sorted;
            rev.reverse();
            prop_assert!(SpikeSpec::new(rev).is_err());
        }
    }
}

/// Direct evaluation of AIC, BIC and C_p for every candidate `j`.
fn brute_force(lambdas: &[f64], p: usize, q: usize, n: usize) -> [usize; 3] {
    let nf = n as f64;
    let mut best = [(0usize, 0.0f64); 3];
    for j in 1..=lambdas.len() {
        let dof = ((p - j) * (q - j)) as f64;
        let tail = &lambdas[j..];
        let fit: f64 = -nf * tail.iter().map(|l| (1.0 - l).ln()).sum::<f64>();
        let values = [
            fit - 2.0 * dof,
            fit - nf.ln() * dof,
            nf * tail.iter().map(|l| l / (1.0 - l)).sum::<f64>() - 2.0 * dof,
        ];
        for (b, v) in best.iter_mut().zip(values) {
            if v < b.1 {
                *b = (j, v);
            }
        }
    }
    best.map(|b| b.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn model_selection_matches_brute_force(
        mut lambdas in prop::collection::vec(0.0f64..0.95, 1..12),
        extra in 1usize..20,
        n_extra in 5usize..400,
    ) {
        lambdas.sort_by(|a, b| b.total_cmp(a));
        let q = lambdas.len();
        let p = q + extra;
        let n = p + q + n_extra;
        let s = SampleSpectrum::from_eigenvalues(lambdas.clone(), ModelConfig::new(p, q, n).unwrap()).unwrap();
        let got = model_selection_counts(&s, p, q, n);
        let [aic, bic, cp] = brute_force(&lambdas, p, q, n);
        // Guard against exact floating ties between the two evaluations.
        let [va, vb, vc] = model_selection_criteria(&lambdas, p, q, n);
        let near_tie = |v: &[f64], a: usize, b: usize| (v[a] - v[b]).abs() < 1e-9 * (1.0 + v[a].abs());
        prop_assert!(got.aic == aic || near_tie(&va, got.aic, aic));
        prop_assert!(got.bic == bic || near_tie(&vb, got.bic, bic));
        prop_assert!(got.cp == cp || near_tie(&vc, got.cp, cp));
    }
}

#[test]
fn all_zero_spectrum_selects_one() {
    let s = SampleSpectrum::from_eigenvalues(vec![0.0; 5], ModelConfig::new(10, 5, 100).unwrap()).unwrap();
    let m = model_selection_counts(&s, 10, 5, 100);
    assert_eq!((m.aic, m.bic, m.cp), (1, 1, 1));
}

#[test]
fn type7_quantile_matches_definition() {
    let v: Vec<f64> = (0..11).map(f64::from).collect();
    assert_eq!(quantile_type7(&v, 0.95), 9.5);
    assert_eq!(quantile_type7(&v, 0.0), 0.0);
    assert_eq!(quantile_type7(&v, 1.0), 10.0);
    assert_eq!(quantile_type7(&[3.0], 0.3), 3.0);
}
