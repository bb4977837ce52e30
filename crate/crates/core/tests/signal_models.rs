//! Signal models against independent references: a hand-written
//! longitudinal recursion for SPGR, the isochromat simulator for DESS and
//! central differences for gradients and Fisher information.

use ndarray::Array2;
use perk::analysis::fisher;
use perk::oracle::{simulate_steady_state, IsochromatConfig};
use perk::signal::{
    dess_signals, signal_gradient, spgr_gradient, spgr_signal, Acquisition, KnownParams, LatentParams, MonoExp,
    NoiseModel, ScanKind, ScanSpec, SignalModel,
};
use proptest::prelude::*;

/// Ideal-spoiling steady state by iterating `Mz ← 1 − (1 − Mz cos α)E1`.
fn spgr_by_recursion(x: &LatentParams, kappa: f64, scan: &ScanSpec) -> f64 {
    let a = kappa * scan.flip_deg.to_radians();
    let e1 = (-scan.tr_ms / x.t1).exp();
    let mut mz = 1.0;
    for _ in 0..200_000 {
        let next = 1.0 - (1.0 - mz * a.cos()) * e1;
        if (next - mz).abs() < 1e-16 {
            break;
        }
        mz = next;
    }
    x.m0 * mz * a.sin().abs() * (-scan.te_ms / x.t2).exp()
}

fn central_diff<F: Fn(&LatentParams) -> Vec<f64>>(f: F, x: &LatentParams) -> Array2<f64> {
    let v = x.to_array();
    let d = f(x).len();
    let mut g = Array2::zeros((d, 3));
    for l in 0..3 {
        let h = 1e-6 * v[l];
        let (mut up, mut dn) = (v, v);
        up[l] += h;
        dn[l] -= h;
        let (fu, fd) = (f(&LatentParams::from_slice(&up).unwrap()), f(&LatentParams::from_slice(&dn).unwrap()));
        for i in 0..d {
            g[[i, l]] = (fu[i] - fd[i]) / (2.0 * h);
        }
    }
    g
}

fn latent() -> impl Strategy<Value = LatentParams> {
    (0.1f64..2.0, 200.0f64..3000.0, 20.0f64..300.0).prop_map(|(m0, t1, t2)| LatentParams::new(m0, t1, t2).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spgr_matches_recursion(x in latent(), kappa in 0.5f64..2.0, flip in 2.0f64..60.0) {
        let scan = ScanSpec::new(ScanKind::Spgr, flip, 12.2, 4.67).unwrap();
        let s = spgr_signal(&x, &KnownParams::new(kappa).unwrap(), &scan).unwrap();
        let r = spgr_by_recursion(&x, kappa, &scan);
        prop_assert!((s - r).abs() <= 1e-12 * r.max(1e-12), "{s} vs {r}");
    }

    #[test]
    fn spgr_gradient_matches_differences(x in latent(), kappa in 0.5f64..1.5) {
        let scan = ScanSpec::new(ScanKind::Spgr, 15.0, 12.2, 4.67).unwrap();
        let nu = KnownParams::new(kappa).unwrap();
        let g = spgr_gradient(&x, &nu, &scan).unwrap();
        let fd = central_diff(|y| vec![spgr_signal(y, &nu, &scan).unwrap()], &x);
        for l in 0..3 {
            let tol = 1e-6 * fd[[0, l]].abs().max(1e-9);
            prop_assert!((g[l] - fd[[0, l]]).abs() <= tol, "l = {l}: {} vs {}", g[l], fd[[0, l]]);
        }
    }

    #[test]
    fn acquisition_gradient_matches_differences(x in latent(), kappa in 0.5f64..1.5) {
        let acq = Acquisition::brain_relaxometry();
        let nu = KnownParams::new(kappa).unwrap();
        let g = signal_gradient(&acq, &x, &nu).unwrap();
        let fd = central_diff(|y| acq.signals(y, &nu).unwrap(), &x);
        for (a, b) in g.iter().zip(fd.iter()) {
            prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn signals_scale_with_m0(x in latent(), c in 0.1f64..10.0) {
        let acq = Acquisition::brain_relaxometry();
        let nu = KnownParams::new(1.0).unwrap();
        let a = acq.signals(&x, &nu).unwrap();
        let b = acq.signals(&LatentParams::new(c * x.m0, x.t1, x.t2).unwrap(), &nu).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((c * u - v).abs() <= 1e-13 * v.abs().max(1e-300));
        }
    }
}

#[test]
fn dess_matches_isochromat_simulation() {
    let scan = ScanSpec::new(ScanKind::Dess, 30.0, 17.5, 4.67).unwrap();
    let cfg = IsochromatConfig::default();
    for &(t1, t2, kappa) in &[(832.0, 79.6, 1.0), (1331.0, 110.0, 0.8), (400.0, 40.0, 1.3), (2000.0, 200.0, 0.6)] {
        let x = LatentParams::new(1.0, t1, t2).unwrap();
        let nu = KnownParams::new(kappa).unwrap();
        let (e1, e2) = dess_signals(&x, &nu, &scan).unwrap();
        let sim = simulate_steady_state(&x, &nu, &scan, &cfg, 9).unwrap();
        assert!((e1 / sim[0] - 1.0).abs() < 1e-3, "echo 1 at {t1}/{t2}/{kappa}: {e1} vs {}", sim[0]);
        assert!((e2 / sim[1] - 1.0).abs() < 1e-3, "echo 2 at {t1}/{t2}/{kappa}: {e2} vs {}", sim[1]);
    }
}

#[test]
fn fisher_is_gradient_gram() {
    let acq = Acquisition::brain_relaxometry();
    let x = LatentParams::new(0.77, 832.0, 79.6).unwrap();
    let nu = KnownParams::new(1.0).unwrap();
    let sigmas = vec![1e-3, 2e-3, 1.5e-3, 1e-3];
    let f = fisher(&acq, &x, &nu, &NoiseModel::new(sigmas.clone()).unwrap()).unwrap();
    let g = central_diff(|y| acq.signals(y, &nu).unwrap(), &x);
    for i in 0..3 {
        for j in 0..3 {
            let want: f64 = (0..4).map(|d| g[[d, i]] * g[[d, j]] / (sigmas[d] * sigmas[d])).sum();
            assert!((f.f[[i, j]] - want).abs() <= 1e-5 * want.abs().max(f.f[[i, i]].abs() * 1e-6), "F[{i},{j}]");
        }
    }
    assert!(!f.is_singular());
    assert!(f.crlb_std().iter().all(|s| s.is_finite() && *s > 0.0));
}

#[test]
fn fisher_flags_unidentifiable_parameters() {
    // T1 does not enter a mono-exponential decay
    let model = MonoExp { echo_times_ms: vec![5.0, 20.0, 60.0] };
    let x = LatentParams::new(1.0, 1000.0, 50.0).unwrap();
    let f = fisher(&model, &x, &KnownParams::new(1.0).unwrap(), &NoiseModel::isotropic(3, 0.01).unwrap()).unwrap();
    assert!(f.is_singular());
    assert!(f.crlb_std().iter().all(|s| s.is_infinite()));
}
