mod common;

use common::as_mcnm;
use mcnm::mcnm::{e_step, observed_mcn_log_likelihood};
use mcnm::simulate::{ampute, generate_scenario, AmputationConfig, Family, ScenarioConfig};
use mcnm::{fit_mcnm, Dataset, FitConfig};
use proptest::prelude::*;

fn incomplete(seed: u64, n: usize, d: usize, prop: f64) -> Dataset {
    let ld = generate_scenario(&ScenarioConfig {
        family: Family::Mcn,
        n,
        d,
        seed,
        ..ScenarioConfig::default()
    })
    .unwrap();
    if prop > 0.0 {
        ampute(&ld.data, &AmputationConfig::default_for(d, prop, seed)).unwrap()
    } else {
        ld.data
    }
}

#[test]
fn row_permutation_permutes_posteriors() {
    let ds = incomplete(5, 80, 2, 0.3);
    let cfg = FitConfig {
        n_starts: 3,
        seed: 2,
        ..FitConfig::default()
    };
    let base = fit_mcnm(&ds, &cfg).unwrap();
    let perm: Vec<usize> = (0..ds.n()).rev().collect();
    let shuffled = ds.select_rows(&perm).unwrap();
    let fit = fit_mcnm(&shuffled, &cfg).unwrap();
    assert!((fit.loglik - base.loglik).abs() < 1e-8 * base.loglik.abs());
    let (a, b) = (as_mcnm(&base.model), as_mcnm(&fit.model));
    for g in 0..2 {
        assert!((&a.components[g].mu - &b.components[g].mu).amax() < 1e-7);
    }
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(fit.labels[k], base.labels[i]);
        assert_eq!(fit.outlier_flag[k], base.outlier_flag[i]);
        for g in 0..2 {
            assert!((fit.z_tilde()[(k, g)] - base.z_tilde()[(i, g)]).abs() < 1e-7);
        }
    }
}

#[test]
fn component_order_does_not_change_likelihood() {
    let ds = incomplete(9, 60, 3, 0.5);
    let fit = fit_mcnm(&ds, &FitConfig { g: 3, n_starts: 1, ..FitConfig::default() }).unwrap();
    let m = as_mcnm(&fit.model);
    let base = observed_mcn_log_likelihood(&ds, m).unwrap();
    for order in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
        let swapped = m.permuted(&order);
        let ll = observed_mcn_log_likelihood(&ds, &swapped).unwrap();
        assert!((ll - base).abs() < 1e-9 * base.abs());
        let (s0, s1) = (e_step(&ds, m).unwrap(), e_step(&ds, &swapped).unwrap());
        for i in 0..ds.n() {
            for (k, &g) in order.iter().enumerate() {
                assert!((s1.z_tilde[(i, k)] - s0.z_tilde[(i, g)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn complete_data_has_no_conditional_moments() {
    let ds = incomplete(1, 40, 2, 0.0);
    let fit = fit_mcnm(&ds, &FitConfig { n_starts: 1, ..FitConfig::default() }).unwrap();
    let s = e_step(&ds, as_mcnm(&fit.model)).unwrap();
    assert!(s.x_tilde.iter().all(|x| x.is_empty()));
    assert!(s.xx_tilde.iter().all(|x| x.is_empty()));
    assert_eq!(fit.imputed, ds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn complete_data_trace_ascends(seed in 0u64..10_000, n in 30usize..120, d in 2usize..4) {
        let ds = incomplete(seed, n, d, 0.0);
        let fit = fit_mcnm(&ds, &FitConfig { n_starts: 2, seed, ..FitConfig::default() }).unwrap();
        for w in fit.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn posteriors_are_probabilities(seed in 0u64..10_000, prop in 0.0f64..0.6) {
        let ds = incomplete(seed, 60, 2, prop);
        let fit = fit_mcnm(&ds, &FitConfig { n_starts: 1, max_iter: 30, seed, ..FitConfig::default() }).unwrap();
        let z = fit.z_tilde();
        let v = fit.v_tilde().unwrap();
        for i in 0..ds.n() {
            prop_assert!((z.row(i).sum() - 1.0).abs() < 1e-12);
            for g in 0..2 {
                prop_assert!((0.0..=1.0).contains(&v[(i, g)]));
            }
        }
        let m = as_mcnm(&fit.model);
        prop_assert!((m.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in &m.components {
            prop_assert!(c.alpha >= 0.5 && c.alpha < 1.0 && c.eta >= 1.001);
        }
        for i in 0..ds.n() {
            for j in 0..ds.d() {
                if let Some(x) = ds.get(i, j) {
                    prop_assert_eq!(fit.imputed.get(i, j), Some(x));
                }
                prop_assert!(fit.imputed.get(i, j).unwrap().is_finite());
            }
        }
    }
}
