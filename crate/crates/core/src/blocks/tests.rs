use super::*;
use crate::quadrature::{d1, d2, fit_slope};
use crate::verify::fd_mean_curvature;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

fn unit_theta(n: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n).map(|k| 1.0 + 0.37 * k as f64).collect();
    let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    t.iter_mut().for_each(|v| *v /= nt);
    t
}

/// Local chart of `S^m` around `p0`: `normalize(p0 + Σ u_k e_k)`.
fn sphere_chart(p0: &DVector<f64>, frame: &[DVector<f64>], u: &[f64]) -> DVector<f64> {
    let mut p = p0.clone();
    for (k, e) in frame.iter().enumerate() {
        p += e * u[k];
    }
    let np = p.norm();
    p / np
}

fn axisymmetric_grad_hess(n: usize, mu: f64, df: f64, d2f: f64) -> (Vec<f64>, DMatrix<f64>) {
    let mut grad = vec![0.0; n];
    grad[0] = df;
    let mut hess = DMatrix::identity(n, n) * (df / mu.tan());
    hess[(0, 0)] = d2f;
    (grad, hess)
}

/// Mean curvature of `(cos(α+F), sin(α+F) p)` for axisymmetric `F(μ)` by FD.
fn graph_fd_mean_curvature<F: Fn(f64) -> f64>(n: usize, alpha: f64, f: F, mu: f64, theta: &[f64]) -> f64 {
    let (p0, frame) = sphere_frame(mu, theta);
    let embed = |u: &[f64]| {
        let p = sphere_chart(&p0, &frame, u);
        let m = p[0].clamp(-1.0, 1.0).acos();
        let (s, c) = (alpha + f(m)).sin_cos();
        let mut x = DVector::zeros(n + 2);
        x[0] = c;
        x.rows_mut(1, n + 1).copy_from(&(p * s));
        x
    };
    let df = d1(&f, mu, 1e-4);
    let d2f = d2(&f, mu, 1e-4);
    let (grad, hess) = axisymmetric_grad_hess(n, mu, df, d2f);
    let hint = normal_graph_geometry(n, alpha, f(mu), &grad, &hess, mu, theta).unwrap().normal;
    fd_mean_curvature(embed, &vec![0.0; n], 1e-4, true, &hint).unwrap()
}

#[test]
fn sphere_point_examples() {
    let th = unit_theta(3);
    let x = sphere_point(0.4, 0.0, &th);
    assert!((x[0] - 0.4f64.cos()).abs() < 1e-15 && (x[1] - 0.4f64.sin()).abs() < 1e-15);
    assert!(x.rows(2, 3).amax() < 1e-15);
    let x = sphere_point(FRAC_PI_2, FRAC_PI_2, &th);
    assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15);
    assert!((x.rows(2, 3) - DVector::from_column_slice(&th)).amax() < 1e-15);
}

#[test]
fn sphere_mean_curvature_examples() {
    assert!((sphere_mean_curvature(2, FRAC_PI_4).unwrap() - 2.0).abs() < 1e-14);
    assert!(sphere_mean_curvature(2, FRAC_PI_2).unwrap().abs() < 1e-15);
    assert!((sphere_mean_curvature(3, FRAC_PI_3).unwrap() - 3f64.sqrt()).abs() < 1e-14);
    assert!(matches!(sphere_mean_curvature(3, 1e-9), Err(Error::Divergence(_))));
}

#[test]
fn frame_is_orthonormal_and_tangent() {
    let th = unit_theta(4);
    let (p, frame) = sphere_frame(0.8, &th);
    assert_eq!(frame.len(), 4);
    assert!((p.norm() - 1.0).abs() < 1e-15);
    for (i, a) in frame.iter().enumerate() {
        assert!(a.dot(&p).abs() < 1e-14);
        for (j, b) in frame.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((a.dot(b) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn flat_graph_reproduces_sphere() {
    let (n, alpha, mu) = (3, 0.7, 1.1);
    let th = unit_theta(n);
    let zero = DMatrix::zeros(n, n);
    let geo = normal_graph_geometry(n, alpha, 0.0, &[0.0; 3], &zero, mu, &th).unwrap();
    let (s, c) = alpha.sin_cos();
    let id = DMatrix::<f64>::identity(n, n);
    assert!((geo.metric - &id * (s * s)).amax() < 1e-14);
    assert!((geo.second_form - &id * (s * c)).amax() < 1e-14);
    assert!((geo.mean_curvature - 3.0 / alpha.tan()).abs() < 1e-14);
    let want = DVector::from_vec(vec![s, -c * mu.cos(), -c * mu.sin() * th[0], -c * mu.sin() * th[1], -c * mu.sin() * th[2]]);
    assert!((geo.normal - want).amax() < 1e-14);

    let geo = normal_graph_geometry(n, alpha, 0.2, &[0.0; 3], &zero, mu, &th).unwrap();
    assert!((geo.mean_curvature - 3.0 / 0.9f64.tan()).abs() < 1e-13);
    assert!(normal_graph_geometry(n, 0.5, -0.6, &[0.0; 3], &zero, mu, &th).is_err());
}

#[test]
fn graph_of_green_function_matches_fd_oracle() {
    let (n, alpha, eps, mu) = (3usize, 0.6, 1e-2f64, FRAC_PI_3);
    let th = unit_theta(n);
    let scale = eps.powi(n as i32 - 1);
    let f = |m: f64| scale * green_function(n, m).unwrap();
    let (g, dg) = green_with_derivative(n, mu).unwrap();
    let d2g = -((n - 1) as f64) / mu.tan() * dg - n as f64 * g;
    let (grad, hess) = axisymmetric_grad_hess(n, mu, scale * dg, scale * d2g);
    let geo = normal_graph_geometry(n, alpha, scale * g, &grad, &hess, mu, &th).unwrap();
    let fd = graph_fd_mean_curvature(n, alpha, f, mu, &th);
    assert!((geo.mean_curvature - fd).abs() < 1e-5, "{} vs {fd}", geo.mean_curvature);
}

#[test]
fn large_graph_mean_curvature_matches_trace_and_fd() {
    let (n, alpha, mu) = (2usize, 0.6, 0.9f64);
    let th = unit_theta(n);
    let f = |m: f64| 0.3 * m.cos().powi(2) + 0.1 * (3.0 * m).sin();
    let df = -0.6 * mu.cos() * mu.sin() + 0.3 * (3.0 * mu).cos();
    let d2f = -0.6 * (2.0 * mu).cos() - 0.9 * (3.0 * mu).sin();
    let (grad, hess) = axisymmetric_grad_hess(n, mu, df, d2f);
    let geo = normal_graph_geometry(n, alpha, f(mu), &grad, &hess, mu, &th).unwrap();
    let tr = crate::ambient::trace_against(&geo.second_form, &geo.metric).unwrap();
    assert!((tr - geo.mean_curvature).abs() < 1e-10);
    let fd = graph_fd_mean_curvature(n, alpha, f, mu, &th);
    assert!((geo.mean_curvature - fd).abs() < 1e-5, "{} vs {fd}", geo.mean_curvature);
}

#[test]
fn green_function_examples() {
    for n in 2..=6 {
        assert!((green_function(n, FRAC_PI_2).unwrap() + 1.0).abs() < 1e-15);
    }
    let g = green_function(3, 1e-2).unwrap();
    assert!((g - 100.0).abs() / 100.0 < 1e-3);
    assert!(green_function(3, 1e-7).is_err());
    assert!(green_function(3, PI).is_err());
}

#[test]
fn green_derivative_matches_fd() {
    for n in 2..=5 {
        for &mu in &[0.2, 0.9, 1.5, FRAC_PI_2, 2.3] {
            let (_, dg) = green_with_derivative(n, mu).unwrap();
            let fd = d1(|m| green_function(n, m).unwrap(), mu, 1e-4);
            assert!((dg - fd).abs() < 1e-8 * (1.0 + dg.abs()), "n={n} mu={mu}: {dg} vs {fd}");
        }
    }
}

#[test]
fn green_ode_residual() {
    for n in 2..=5 {
        for k in 0..200 {
            let mu = 0.1 + (PI - 0.2) * k as f64 / 199.0;
            let g = |m: f64| green_function(n, m).unwrap();
            let (u, du, d2u) = (g(mu), d1(g, mu, 1e-4), d2(g, mu, 1e-4));
            let res = sphere_linearized_apply(n, FRAC_PI_2, mu, u, du, d2u);
            let scale = d2u.abs() + ((n - 1) as f64 / mu.tan() * du).abs() + n as f64 * u.abs();
            assert!(res.abs() / scale < 1e-6, "n={n} mu={mu} res={res} scale={scale}");
        }
    }
}

#[test]
fn green_asymptotics_examples_and_remainder_slopes() {
    assert!(green_asymptotics(2, 2.0 / 1f64.exp()).abs() < 1e-15);
    assert!((green_asymptotics(4, 0.1) - 50.0).abs() < 1e-12);
    for n in 2..=6 {
        let mus: Vec<f64> = (0..9).map(|k| 10f64.powf(-3.0 + k as f64 / 8.0)).collect();
        let xs: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
        let ys: Vec<f64> = mus
            .iter()
            .map(|&m| (green_function(n, m).unwrap() - green_asymptotics(n, m)).abs().ln())
            .collect();
        let slope = fit_slope(&xs, &ys);
        assert!((slope - green_remainder_order(n)).abs() <= 0.2, "n={n} slope={slope}");
    }
}

#[test]
fn sphere_operator_examples() {
    let (n, alpha) = (3, 0.8);
    for &mu in &[0.3, 1.0, 2.5] {
        let r = sphere_linearized_apply(n, alpha, mu, mu.cos(), -mu.sin(), -mu.cos());
        assert!(r.abs() < 1e-14);
    }
    let r = sphere_linearized_apply(n, alpha, 1.0, 1.0, 0.0, 0.0);
    assert!((r - 3.0 / alpha.sin().powi(2)).abs() < 1e-13);
}

#[test]
fn catenoid_profile_examples() {
    for n in 2..=5 {
        let p = catenoid_profile(n, 0.0);
        assert_eq!((p.phi, p.psi, p.dphi, p.dpsi), (1.0, 0.0, 0.0, 1.0));
    }
    let p = catenoid_profile(2, 1.3);
    assert!((p.phi - 1.3f64.cosh()).abs() < 1e-15 && p.psi == 1.3);
    // Independent trapezoid oracle with Richardson extrapolation.
    let trap = |m: usize| {
        let h = 1.0 / m as f64;
        let f = |t: f64| (2.0 * t).cosh().powf(-0.5);
        h * (0.5 * (f(0.0) + f(1.0)) + (1..m).map(|k| f(k as f64 * h)).sum::<f64>())
    };
    let oracle = (4.0 * trap(20000) - trap(10000)) / 3.0;
    assert!((catenoid_profile(3, 1.0).psi - oracle).abs() < 1e-10);
    assert!((oracle - 0.791_714_375_645_342_1).abs() < 1e-12);
}

#[test]
fn catenoid_graph_examples() {
    for n in 2..=5 {
        assert_eq!(catenoid_graph(n, 1.0).unwrap(), 0.0);
    }
    assert!(catenoid_graph(3, 0.5).is_err());
    // The quadrature used for n >= 3 reproduces the closed form at n = 2.
    for k in 0..=20 {
        let x = 1.0 + 0.05 * k as f64;
        assert!((graph_near_waist(2, x) - x.acosh()).abs() < 1e-10, "x={x}");
    }
    for s in [0.0, 0.3, 2.0, 7.5] {
        assert!((catenoid_graph(2, catenoid_profile(2, s).phi).unwrap() - s).abs() < 1e-12, "s={s}");
    }
}

#[test]
fn catenoid_constant_matches_beta_function() {
    // c_n = B(1/2 − 1/(2n−2), 1/2) / (2n−2), evaluated independently to 20 digits.
    let oracle = [(3, 1.311_028_777_146_059_9), (4, 0.701_091_052_662_727_1), (5, 0.481_975_824_075_188_7)];
    for (n, c) in oracle {
        assert!((catenoid_constant(n) - c).abs() < 1e-12, "n={n}");
        assert!((catenoid_graph(n, 2.0).unwrap() - catenoid_graph(n, 1.999_999_999).unwrap()).abs() < 1e-8);
    }
}

#[test]
fn catenoid_graph_tail_follows_leading_decay() {
    let n = 3;
    let xs: Vec<f64> = (0..6).map(|k| 10f64.powf(1.0 + 0.4 * k as f64)).collect();
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = xs.iter().map(|&x| (catenoid_constant(n) - catenoid_graph(n, x).unwrap()).ln()).collect();
    assert!((fit_slope(&lx, &ly) + (n as f64 - 2.0)).abs() < 1e-3);
    let x = 1e3;
    let gap = catenoid_constant(n) - catenoid_graph(n, x).unwrap();
    assert!((gap * x - 1.0).abs() < 1e-5);
}

#[test]
fn catenoid_geometry_examples() {
    let g = catenoid_geometry(2, 1.0, 0.0).unwrap();
    assert!((g.norm_b - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(g.norm_grad_b, 0.0);
    for n in 2..=5 {
        for k in 0..=100 {
            let s = -5.0 + 0.1 * k as f64;
            let g = catenoid_geometry(n, 0.3, s).unwrap();
            assert!(g.mean_curvature.abs() <= 1e-9);
            let trace_sq = (g.b_ss.powi(2) + (n - 1) as f64 * g.b_angular.powi(2)) / g.metric_factor.powi(2);
            assert!((trace_sq.sqrt() - g.norm_b).abs() < 1e-10 * g.norm_b);
        }
    }
    assert!(catenoid_geometry(3, 0.0, 0.1).is_err());
}

#[test]
fn catenoid_is_minimal_under_fd_oracle() {
    for n in 2..=5 {
        let th0 = unit_theta(n);
        let base = DVector::from_column_slice(&th0);
        let mut tangents: Vec<DVector<f64>> = Vec::new();
        for k in 0..n {
            let mut v = DVector::zeros(n);
            v[k] = 1.0;
            let c = v.dot(&base);
            v -= &base * c;
            for t in &tangents {
                let c = v.dot(t);
                v -= t * c;
            }
            if v.norm() > 1e-6 && tangents.len() < n - 1 {
                let nv = v.norm();
                tangents.push(v / nv);
            }
        }
        for &s in &[-2.0, -0.4, 0.0, 1.3, 3.0] {
            let embed = |u: &[f64]| {
                let th = sphere_chart(&base, &tangents, &u[1..]);
                catenoid_point(n, 1.0, u[0], th.as_slice())
            };
            let mut u = vec![0.0; n];
            u[0] = s;
            let hint = catenoid_normal(n, s, &th0);
            let h = fd_mean_curvature(embed, &u, 1e-3, false, &hint).unwrap();
            assert!(h.abs() <= 1e-5, "n={n} s={s} H={h}");
        }
    }
}

#[test]
fn catenoid_metric_factor_matches_embedding() {
    for n in 2..=4 {
        let th = unit_theta(n);
        let s = 0.7;
        let dx = (catenoid_point(n, 1.0, s + 1e-5, &th) - catenoid_point(n, 1.0, s - 1e-5, &th)) / 2e-5;
        let g = catenoid_geometry(n, 1.0, s).unwrap();
        assert!((dx.norm_squared() - g.metric_factor).abs() < 1e-8);
        assert!(dx.dot(&catenoid_normal(n, s, &th)).abs() < 1e-9);
    }
}

#[test]
fn jacobi_examples() {
    for n in 2..=5 {
        assert_eq!(catenoid_jacobi(n, JacobiKind::J1, 0.0, 1.0), 0.0);
        assert_eq!(catenoid_jacobi(n, JacobiKind::J0, 0.0, 1.0), -1.0);
    }
}

#[test]
fn jacobi_fields_are_in_the_kernel() {
    for n in 2..=5 {
        for kind in JacobiKind::ALL {
            for k in 0..=30 {
                let s = -3.0 + 0.2 * k as f64;
                let u = |t: f64| catenoid_jacobi(n, kind, t, 1.0);
                let r = catenoid_linearized_apply(
                    n, s, u(s), d1(u, s, 1e-3), d2(u, s, 1e-3), kind.angular_mode() as i64,
                )
                .unwrap();
                assert!(r.abs() <= 1e-6, "n={n} {kind:?} s={s} r={r}");
            }
        }
    }
}

#[test]
fn catenoid_operator_examples() {
    for n in 2..=4 {
        let s = 0.8;
        let phi = catenoid_profile(n, s).phi;
        let r = catenoid_linearized_apply(n, s, 1.0, 0.0, 0.0, 0).unwrap();
        assert!((r - (n * (n - 1)) as f64 / phi.powi(2 * n as i32)).abs() < 1e-14);
    }
    assert!(catenoid_linearized_apply(3, 0.0, 1.0, 0.0, 0.0, -1).is_err());
}

#[test]
fn clifford_examples() {
    assert!(clifford_mean_curvature(1, 1, FRAC_PI_4).abs() < 1e-15);
    assert!((clifford_mean_curvature(1, 2, FRAC_PI_4) - 1.0).abs() < 1e-15);
    for (n1, n2) in [(1, 1), (1, 2), (2, 3), (4, 1)] {
        let a = minimal_clifford_alpha(n1, n2);
        assert!(clifford_mean_curvature(n1, n2, a).abs() < 1e-14);
        assert!((matched_sphere_alpha(n1, n2, a) - FRAC_PI_2).abs() < 1e-7);
        assert!((opposite_alpha(n1, n2, a).unwrap() - a).abs() < 1e-14);
    }
    assert!((matched_sphere_alpha(1, 2, FRAC_PI_4) - 3f64.atan()).abs() < 1e-15);
    for a in [0.2, 0.5, 1.1] {
        assert!((opposite_alpha(2, 2, a).unwrap() - (FRAC_PI_2 - a)).abs() < 1e-14);
    }
    let u = 1.0;
    let r = clifford_linearized_apply(1, 2, 0.6, u, 0.0, 0.0);
    assert!((r - 1.0 / 0.6f64.cos().powi(2) - 2.0 / 0.6f64.sin().powi(2)).abs() < 1e-13);
    assert!(opposite_alpha(1, 1, 0.0).is_err());
}

proptest! {
    #[test]
    fn catenoid_parities(n in 2usize..6, s in 0.0f64..3.0) {
        let p = catenoid_profile(n, s);
        let q = catenoid_profile(n, -s);
        prop_assert!((p.phi - q.phi).abs() <= 1e-14 * p.phi);
        prop_assert!((p.psi + q.psi).abs() <= 1e-13);
        for kind in JacobiKind::ALL {
            let a = catenoid_jacobi(n, kind, s, 1.0);
            let b = catenoid_jacobi(n, kind, -s, 1.0);
            prop_assert!((a - kind.parity() * b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn green_is_symmetric(n in 2usize..6, mu in 0.01f64..FRAC_PI_2) {
        let a = green_function(n, mu).unwrap();
        let b = green_function(n, PI - mu).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn matched_alpha_identity(n1 in 1usize..4, n2 in 1usize..4, a in 0.05f64..1.52) {
        let n = (n1 + n2) as f64;
        let hat = matched_sphere_alpha(n1, n2, a);
        prop_assert!((n / hat.tan() - clifford_mean_curvature(n1, n2, a).abs()).abs() <= 1e-12 * (1.0 + n / hat.tan()));
    }

    #[test]
    fn opposite_alpha_identity(n1 in 1usize..4, n2 in 1usize..4, a in 0.05f64..1.52) {
        let bar = opposite_alpha(n1, n2, a).unwrap();
        let h = clifford_mean_curvature(n1, n2, a);
        prop_assert!((clifford_mean_curvature(n1, n2, bar) + h).abs() <= 1e-12 * (1.0 + h.abs()));
        let star = minimal_clifford_alpha(n1, n2);
        if a < star - 1e-9 {
            prop_assert!(bar > star);
        }
    }
}
