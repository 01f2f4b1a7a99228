use solitonlab_core::limit::LimitSolver;
use solitonlab_core::thresholds::{beta_ground_estimate, cstar, separation_scan, theta_of_beta, ScanInputs};
use solitonlab_core::ProblemParams;

fn params(n: usize, p: f64) -> ProblemParams {
    ProblemParams::new(n, p, 0.0).unwrap()
}

#[test]
fn cstar_equal_minima_is_twice_the_coupled_scalar_energy() {
    let s = LimitSolver::for_range(1, 1.0, 1.0, 0.01).unwrap();
    let c = cstar(1.0, 1.0, 0.5, &params(1, 2.0), &s).unwrap();
    assert!((c.value - 16.0 / 9.0).abs() < 1e-3, "{}", c.value);
    assert!((c.t - 1.0).abs() < 1e-6 && (c.s - 1.0).abs() < 1e-6);
}

#[test]
fn cstar_sandwich_and_small_coupling_limit() {
    let s = LimitSolver::for_range(1, 1.0, 2.0, 0.01).unwrap();
    let p = params(1, 2.0);
    for beta in [0.02, 0.1, 0.3] {
        let c = cstar(1.0, 2.0, beta, &p, &s).unwrap();
        assert!(c.lower <= c.value + 1e-12 && c.value < c.upper, "{c:?}");
    }
    let c = cstar(1.0, 2.0, 1e-6, &p, &s).unwrap();
    assert!((c.upper - c.value) / c.upper < 1e-4 && c.value < c.upper);
}

#[test]
fn separation_fails_past_beta_tilde() {
    let s = LimitSolver::for_range(1, 1.0, 4.0, 0.01).unwrap();
    let p = params(1, 2.0);
    let c10 = s.ground_energy(1.0, 0.0, &p).unwrap();
    let c = cstar(1.0, 4.0, 0.2, &p, &s).unwrap();
    let inp = ScanInputs {
        m1: 1.0,
        m2: 4.0,
        beta: 0.2,
        theta: 0.0,
        c10,
        cstar: c.value,
    };
    let r = separation_scan(&inp, &p, 10, 200).unwrap();
    assert!(!r.pass, "{r:?}");
    let beta = 0.05;
    let c = cstar(1.0, 4.0, beta, &p, &s).unwrap();
    let theta = theta_of_beta(1.0, 4.0, beta, &p).unwrap();
    let inp = ScanInputs {
        m1: 1.0,
        m2: 4.0,
        beta,
        theta,
        c10,
        cstar: c.value,
    };
    let r = separation_scan(&inp, &p, 12, 400).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn ground_coupling_threshold_classification() {
    let s = LimitSolver::for_range(1, 1.0, 2.0, 0.02).unwrap();
    let flat = vec![(1.0, 1.0); 9];
    let e = beta_ground_estimate(&flat, &params(1, 2.0), &s).unwrap();
    assert!((e.estimate - 1.0).abs() <= 0.02, "{e:?}");
    let e = beta_ground_estimate(&flat, &params(1, 1.5), &s).unwrap();
    assert!(e.estimate <= 0.02, "{e:?}");
    let tilted: Vec<(f64, f64)> = (0..9).map(|k| (1.0 + 0.05 * k as f64, 1.5 + 0.05 * k as f64)).collect();
    let e = beta_ground_estimate(&tilted, &params(1, 3.0), &s).unwrap();
    assert!(e.estimate > 3.0, "{e:?}");
}
