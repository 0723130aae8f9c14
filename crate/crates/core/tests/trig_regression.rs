mod common;

use common::{gaussian_matrix, harmonic_model, max_abs_diff, panel};
use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use stforecast::trig::{
    design_matrix, empirical_risk, fit, harmonic_frequencies, projection_risk, regression_times,
    render_risk_grid, select_n, selection_ratio,
};
use stforecast::FrequencyRule;

fn orthogonal_ratio(t: usize, m: usize) -> f64 {
    let t = t as f64;
    let m = m as f64;
    (1.0 + m * (2.0 / t) / t) / (1.0 - m / t)
}

#[test]
fn noiseless_panel_recovers_coefficients() {
    let truth = harmonic_model(6, 17, 265);
    let times = regression_times(265);
    let fitted = fit(&panel(truth.predict(&times)), &truth.frequencies, false).unwrap();
    assert!(max_abs_diff(&fitted.a, &truth.a) <= 1e-8);
    assert!(max_abs_diff(&fitted.b, &truth.b) <= 1e-8);
}

#[test]
fn recovered_model_has_no_residual_risk() {
    let truth = harmonic_model(6, 17, 265);
    let p = panel(truth.predict(&regression_times(265)));
    let fitted = fit(&p, &truth.frequencies, false).unwrap();
    for r in empirical_risk(&fitted, &p).unwrap() {
        assert!(r <= 1e-15, "{r}");
    }
}

#[test]
fn orthogonal_design_ratio_matches_closed_form() {
    let phi = design_matrix(&harmonic_frequencies(6, 265.0), &regression_times(265), false);
    let gram = phi.transpose() * &phi;
    let half = DMatrix::<f64>::identity(12, 12) * 132.5;
    assert!((gram - half).abs().max() < 1e-8);
    let r = selection_ratio(265, &phi).unwrap();
    assert!((r - orthogonal_ratio(265, 12)).abs() < 1e-12);
    assert!((r - 1.0478).abs() < 1e-4, "{r}");
}

#[test]
fn ratio_is_one_without_parameters() {
    assert_eq!(selection_ratio(265, &DMatrix::zeros(265, 0)).unwrap(), 1.0);
}

#[test]
fn selection_follows_the_ratio_formula() {
    let truth = harmonic_model(8, 3, 265);
    let p = panel(truth.predict(&regression_times(265)) + gaussian_matrix(265, 3, 5) * 0.1);
    let rep = select_n(&p, &[2, 4, 6, 8], 1.14, &FrequencyRule::default(), false).unwrap();
    let expected = [2usize, 4, 6, 8]
        .into_iter()
        .filter(|&n| orthogonal_ratio(265, 2 * n) <= 1.14)
        .max()
        .unwrap();
    assert_eq!(rep.chosen_n, expected);
    for c in &rep.candidates {
        assert!((c.ratio - orthogonal_ratio(265, 2 * c.n)).abs() < 1e-9);
        assert!(c.ratio >= 1.0);
    }
}

#[test]
fn white_noise_risk_follows_chi_square() {
    // Minimized risk of a 12-column fit to unit noise is chi2(T - 12) / T.
    let t = 265;
    let freqs = harmonic_frequencies(6, t as f64);
    let seeds = 1000;
    let mut inside = 0usize;
    let mut mean = 0.0;
    for s in 0..seeds {
        let p = panel(harmonic_model(6, 1, t).predict(&regression_times(t)) + gaussian_matrix(t, 1, s));
        let r = empirical_risk(&fit(&p, &freqs, false).unwrap(), &p).unwrap()[0];
        mean += r / seeds as f64;
        if (0.8..=1.2).contains(&r) {
            inside += 1;
        }
    }
    let chi = ChiSquared::new((t - 12) as f64).unwrap();
    let exact = chi.cdf(1.2 * t as f64) - chi.cdf(0.8 * t as f64);
    let frac = inside as f64 / seeds as f64;
    let se = (exact * (1.0 - exact) / seeds as f64).sqrt();
    println!("risk in [0.8, 1.2]: observed {frac:.4}, chi-square {exact:.4}");
    assert!((frac - exact).abs() < 4.0 * se + 1e-3);
    assert!((mean - (t - 12) as f64 / t as f64).abs() < 0.01);
}

#[test]
fn risk_grid_layout() {
    let risks = [
        0.0155, 0.0259, 0.0668, 0.0408, 0.0927, 0.0623, 0.1642, 0.0883, 0.2174, 0.0313, 0.0559, 0.1904, 0.0054,
        0.1602, 0.1640, 0.0003, 0.1238,
    ];
    let text = render_risk_grid(&risks, 5);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("0.0155  0.0259"));
    assert_eq!(lines[3], "0.0003  0.1238");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projection_risk_identity(seed in any::<u64>(), n in 1usize..8, p in 1usize..5) {
        let t = 60;
        let values = gaussian_matrix(t, p, seed);
        let freqs = harmonic_frequencies(n, t as f64);
        let pn = panel(values.clone());
        let via_fit = empirical_risk(&fit(&pn, &freqs, false).unwrap(), &pn).unwrap();
        let phi = design_matrix(&freqs, &regression_times(t), false);
        let via_form = projection_risk(&phi, &values).unwrap();
        for (a, b) in via_fit.iter().zip(&via_form) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn ratio_is_permutation_invariant_and_at_least_one(seed in any::<u64>(), m in 1usize..10) {
        let t = 40;
        let phi = gaussian_matrix(t, m, seed);
        let r = selection_ratio(t, &phi).unwrap();
        prop_assert!(r >= 1.0);
        let mut perm = phi.clone();
        for j in 0..m {
            perm.set_column(j, &phi.column(m - 1 - j));
        }
        let rp = selection_ratio(t, &perm).unwrap();
        prop_assert!((r - rp).abs() <= 1e-10 * r);
    }

    #[test]
    fn harmonic_frequencies_increase(n in 1usize..30, t in 10usize..400) {
        let f = harmonic_frequencies(n, t as f64);
        prop_assert_eq!(f.len(), n);
        prop_assert!(f[0] > 0.0);
        prop_assert!(f.windows(2).all(|w| w[1] > w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn residuals_are_orthogonal_to_the_design(seed in any::<u64>(), n in 1usize..7) {
        let t = 80;
        let values = gaussian_matrix(t, 3, seed);
        let freqs = harmonic_frequencies(n, t as f64);
        let model = fit(&panel(values.clone()), &freqs, false).unwrap();
        let times = regression_times(t);
        let phi = design_matrix(&freqs, &times, false);
        let r = &values - model.predict(&times);
        for p in 0..3 {
            let rp = r.column(p);
            let proj = phi.transpose() * rp;
            prop_assert!(proj.norm() <= 1e-8 * phi.norm() * rp.norm().max(1e-300));
        }
    }

    #[test]
    fn least_squares_beats_perturbations(seed in any::<u64>()) {
        let t = 50;
        let values = gaussian_matrix(t, 2, seed);
        let freqs = harmonic_frequencies(3, t as f64);
        let pn = panel(values.clone());
        let best = fit(&pn, &freqs, false).unwrap();
        let base = empirical_risk(&best, &pn).unwrap();
        let noise = gaussian_matrix(100, 12, seed ^ 0xabc);
        for i in 0..100 {
            let mut m = best.clone();
            for k in 0..3 {
                for p in 0..2 {
                    m.a[k][p] += 0.1 * noise[(i, 2 * k + p)];
                    m.b[k][p] += 0.1 * noise[(i, 6 + 2 * k + p)];
                }
            }
            let r = empirical_risk(&m, &pn).unwrap();
            for p in 0..2 {
                prop_assert!(r[p] >= base[p] - 1e-14);
            }
        }
    }

    #[test]
    fn extra_harmonics_never_raise_risk(seed in any::<u64>()) {
        let t = 70;
        let pn = panel(gaussian_matrix(t, 2, seed));
        let mut last = vec![f64::INFINITY; 2];
        for n in 1..8 {
            let m = fit(&pn, &harmonic_frequencies(n, t as f64), false).unwrap();
            let r = empirical_risk(&m, &pn).unwrap();
            for p in 0..2 {
                prop_assert!(r[p] <= last[p] + 1e-12);
            }
            last = r;
        }
    }
}
