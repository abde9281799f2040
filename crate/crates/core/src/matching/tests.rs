use super::*;
use crate::ambient::{conformal_geometry, rotation_matrix, stereo_project};
use crate::blocks::{catenoid_graph, clifford_mean_curvature, sphere_point};
use crate::quadrature::fit_slope;
use nalgebra::SVD;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

fn unit_theta(m: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..m).map(|k| 0.6 + 0.3 * k as f64).collect();
    let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    t.iter_mut().for_each(|v| *v /= nt);
    t
}

#[test]
fn zero_gap_gives_touching_circle() {
    for alpha in [0.2, 0.7, 1.3] {
        let p = neck_geometry_params(alpha, 0.0).unwrap();
        assert!((p.r - 0.5 * alpha.tan()).abs() < 1e-14);
        assert!((p.d - p.r).abs() < 1e-14);
    }
}

#[test]
fn params_match_direct_formula() {
    let (a, t) = (FRAC_PI_3, 0.1);
    let p = neck_geometry_params(a, t).unwrap();
    let den = a.cos() + (a + t / 2.0).cos();
    assert!((p.r - a.sin() / den).abs() < 1e-15);
    assert!((p.d - (a + t / 2.0).sin() / den).abs() < 1e-15);
}

#[test]
fn params_reject_bad_input() {
    assert!(neck_geometry_params(0.0, 0.1).is_err());
    assert!(neck_geometry_params(0.5, -0.1).is_err());
    assert!(matches!(neck_geometry_params(1.5, 3.0), Err(Error::Singular(_))));
}

#[test]
fn sphere_image_matches_stereographic_projection() {
    let theta = unit_theta(3);
    for (a, t) in [(0.4, 0.05), (FRAC_PI_4, 0.3), (1.2, 0.01)] {
        let b = a + 0.5 * t;
        let rot = rotation_matrix(0, 1, -b, 5);
        let p = neck_geometry_params(a, t).unwrap();
        for mu in [0.01, 0.5, 1.5, 2.5, 3.1] {
            let y = stereo_project(&(&rot * sphere_point(a, mu, &theta))).unwrap();
            let z = sphere_image(a, b, mu, &theta);
            assert!((y.y1 - z.y1).abs() < 1e-14);
            for (u, v) in y.yhat.iter().zip(&z.yhat) {
                assert!((u - v).abs() < 1e-14);
            }
            assert!(((z.y1 + p.d).powi(2) + z.yhat_norm_sq() - p.r * p.r).abs() < 1e-12);
            assert!((z.yhat_norm() - sphere_image_radius(a, b, mu)).abs() < 1e-14);
        }
    }
}

#[test]
fn chart_circle_has_sphere_mean_curvature() {
    // The Euclidean round sphere of radius r centred at (−d, 0) is the image of S_α.
    let n = 3;
    let (a, t) = (0.9, 0.2);
    let p = neck_geometry_params(a, t).unwrap();
    let theta = unit_theta(n - 1);
    for mu in [0.1, 1.0, 2.0] {
        let z = sphere_image(a, a + 0.5 * t, mu, &theta);
        let mut normal = vec![(z.y1 + p.d) / p.r];
        normal.extend(z.yhat.iter().map(|v| v / p.r));
        let g = DMatrix::identity(n, n);
        let b0 = DMatrix::identity(n, n) / p.r;
        let geo = conformal_geometry(n as f64 / p.r, &normal, &b0, &g, &z).unwrap();
        assert!((geo.mean_curvature.abs() - n as f64 / a.tan()).abs() < 1e-12, "{}", geo.mean_curvature);
    }
}

#[test]
fn unperturbed_graph_is_the_circle() {
    let (a, t) = (0.8, 0.1);
    let p = neck_geometry_params(a, t).unwrap();
    for y in [1e-3, 0.05, 0.2] {
        let g = perturbed_sphere_graph(3, a, t, 0.0, 0.0, y).unwrap();
        assert!((g - (-p.d + (p.r * p.r - y * y).sqrt())).abs() < 1e-13);
    }
}

#[test]
fn inversion_slope_at_the_pole() {
    for (a, t) in [(0.5, 0.1), (1.0, 0.4)] {
        let y = 1e-4;
        let mu = invert_sphere_radius(3, a, t, 0.0, 0.0, y).unwrap();
        let want = 2.0 / a.sin() * (0.25 * t).cos().powi(2);
        assert!((mu / y - want).abs() < 1e-6);
    }
}

#[test]
fn unperturbed_expansion_remainder_is_quartic() {
    let (a, t) = (0.7, 0.2);
    let ys: Vec<f64> = (0..8).map(|k| 1e-3 * 10f64.powf(k as f64 / 7.0)).collect();
    let rem: Vec<f64> = ys
        .iter()
        .map(|&y| {
            let g = perturbed_sphere_graph(3, a, t, 0.0, 0.0, y).unwrap();
            (g - sphere_expansion(3, a, t, 0.0, 0.0, y).unwrap()).abs().ln()
        })
        .collect();
    let lx: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    assert!((fit_slope(&lx, &rem) - 4.0).abs() < 0.1);
}

/// `(G_ε − G_0)/ε^{n−1}`: the perturbation part of the near-face graph.
fn graph_excess(n: usize, a: f64, t: f64, eps: f64, y: f64) -> f64 {
    let g = perturbed_sphere_graph(n, a, t, eps, 0.0, y).unwrap();
    let g0 = perturbed_sphere_graph(n, a, t, 0.0, 0.0, y).unwrap();
    (g - g0) / eps.powi(n as i32 - 1)
}

#[test]
fn corrected_constant_matches_finite_inversion() {
    for n in [3usize, 4] {
        for (a, t) in [(0.5, 0.1), (1.1, 0.3), (FRAC_PI_4, 0.05)] {
            let y = 1e-3;
            let eps = 1e-5;
            let measured = graph_excess(n, a, t, eps, y) * (n - 2) as f64 * y.powi(n as i32 - 2);
            let k = expansion_constants(n, a, t).unwrap();
            assert!((measured / k.big_c - 1.0).abs() < 2e-2, "n={n} a={a} t={t}: {measured} vs {}", k.big_c);
            let printed = (2.0 * a + 0.5 * t).cos() / (2.0 * (0.25 * t).cos().powi(2))
                / (2.0 / a.sin() * (0.25 * t).cos().powi(2)).powi(n as i32 - 2);
            assert!((measured - printed).abs() > 0.1 * measured.abs());
        }
    }
}

#[test]
fn n2_constants_match_finite_inversion() {
    let (a, t) = (0.9, 0.15);
    let eps = 1e-7;
    let (y1, y2) = (1e-3, 2e-3);
    let (e1, e2) = (graph_excess(2, a, t, eps, y1), graph_excess(2, a, t, eps, y2));
    let k = expansion_constants(2, a, t).unwrap();
    let c_meas = -(e2 - e1) / (y2.ln() - y1.ln());
    let c2_meas = e1 + c_meas * y1.ln();
    assert!((c_meas - k.big_c).abs() < 1e-3 * k.big_c);
    assert!((c2_meas - k.small_c2.unwrap()).abs() < 1e-3);
}

#[test]
fn translation_moves_near_face_by_b() {
    let (n, a, t, eps) = (3, 0.8, 0.2, 1e-3);
    for y in [1e-3, 1e-2] {
        let g0 = perturbed_sphere_graph(n, a, t, eps, 0.0, y).unwrap();
        let g1 = perturbed_sphere_graph(n, a, t, eps, 0.7, y).unwrap();
        assert!(((g1 - g0) / eps.powi(2) + 0.7).abs() < 1e-2);
    }
}

#[test]
fn inversion_outside_region_errors() {
    assert!(perturbed_sphere_graph(3, 0.5, 0.1, 0.0, 0.0, 10.0).is_err());
}

#[test]
fn catenoid_expansion_tracks_scaled_graph() {
    for n in [2usize, 3, 4] {
        let eb = 1e-3;
        for y in [2e-2, 5e-2] {
            let x = y / eb;
            let exact = eb * catenoid_graph(n, x).unwrap();
            let approx = catenoid_expansion(n, eb, y);
            // First omitted term is O(x^{−4}) for n = 2 and O(x^{6−5n}) otherwise.
            let next = if n == 2 { x.powi(-4) } else { x.powi(6 - 5 * n as i32) };
            assert!((exact - approx).abs() < eb * next, "n={n} y={y}: {exact} vs {approx}");
        }
    }
}

#[test]
fn truncation_radius_values() {
    assert!((truncation_radius(2, 1e-4) - 1e-3).abs() < 1e-15);
    assert_eq!(truncation_radius(3, 0.0), 0.0);
    for n in 2..6 {
        let eps: Vec<f64> = (1..12).map(|k| 10f64.powi(-k)).collect();
        let rho: Vec<f64> = eps.iter().map(|&e| truncation_radius(n, e)).collect();
        for k in 1..eps.len() {
            assert!(rho[k] < rho[k - 1]);
            assert!(rho[k] / eps[k] > rho[k - 1] / eps[k - 1]);
        }
    }
}

#[test]
fn scale_equation_residuals() {
    let (a, t) = (0.9, 0.05);
    let e3 = solve_scale(3, a, t).unwrap();
    let k3 = expansion_constants(3, a, t).unwrap();
    assert!((e3 * catenoid_constant(3) * k3.big_c.sqrt() - (0.25 * t).tan()).abs() < 1e-14);
    let e2 = solve_scale(2, a, t).unwrap();
    let k2 = expansion_constants(2, a, t).unwrap();
    let eb = e2 * k2.big_c;
    // Constant terms of the two expansions agree: −tan(τ/4) + ε c₂ = −ε̄ log(2/ε̄).
    let res = eb * (2.0 / eb).ln() - (0.25 * t).tan() + e2 * k2.small_c2.unwrap();
    assert!(res.abs() < 1e-12, "{res:e} eps={e2}");
    assert!(eb < 2.0 * (-2.0 - ((0.25 * t).cos().powi(2) / a.sin()).ln()).exp());
}

#[test]
fn scale_vanishes_with_gap() {
    for n in [2usize, 3, 4] {
        let mut last = f64::INFINITY;
        for k in 1..12 {
            let t = 0.3 * 0.5f64.powi(k);
            let e = solve_scale(n, 0.8, t).unwrap();
            assert!(e < last && e > 0.0);
            last = e;
        }
        assert!(last < 1e-3);
    }
}

#[test]
fn scale_rejects_large_n2_gap_and_bad_tau() {
    assert!(solve_scale(2, 0.3, 0.0).is_err());
    assert!(matches!(solve_scale(2, 0.05, 2.0), Err(Error::Infeasible(_))));
}

#[test]
fn zero_displacement_is_homogeneous() {
    for n in [2usize, 3, 4] {
        let s = solve_neck_system(n, 0.9, 0.05, &[0.0; 6]).unwrap();
        assert!((s.eps - solve_scale(n, 0.9, 0.05).unwrap()).abs() < 1e-12 * s.eps.max(1.0));
        assert!(s.b_k.iter().chain(&s.b_bar_k).all(|v| v.abs() < 1e-12));
        assert!(s.residual < 1e-12);
    }
}

fn random_sigma(rng: &mut ChaCha8Rng, n_spheres: usize, size: f64) -> Vec<f64> {
    let nf = (n_spheres - 2) / 4;
    let free: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = symmetric_sigma(n_spheres, &free).unwrap();
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    s.iter().map(|v| v * size / norm).collect()
}

#[test]
fn displaced_system_matches_least_squares_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n_spheres in [6usize, 8, 10] {
        let sigma = random_sigma(&mut rng, n_spheres, 1e-3);
        let s = solve_neck_system(3, 0.9, 0.05, &sigma).unwrap();
        assert!(s.residual <= 1e-10);
        let a = neck_system_matrix(3, s.eps, n_spheres);
        let rhs = neck_system_rhs(&s.defect_k);
        let x = SVD::new(a.clone(), true, true).solve(&rhs, 1e-12).unwrap();
        // Oracle picks the minimum-norm solution; shift it into the b_0 = 0 gauge.
        let t = x[0] * s.eps.powi(2);
        for k in 0..n_spheres {
            let bk = x[k] - t / s.eps.powi(2);
            let bbk = x[n_spheres + k] + t;
            assert!((bk - s.b_k[k]).abs() < 1e-8 * (1.0 + bk.abs()));
            assert!((bbk - s.b_bar_k[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn kernel_direction_leaves_residual_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sigma = random_sigma(&mut rng, 8, 1e-3);
    let s = solve_neck_system(3, 0.9, 0.05, &sigma).unwrap();
    for t in [-3.0, 0.5, 10.0] {
        let b: Vec<f64> = s.b_k.iter().map(|v| v + t * s.eps.powi(-2)).collect();
        let bb: Vec<f64> = s.b_bar_k.iter().map(|v| v - t).collect();
        let r = neck_system_residual(3, s.eps, &b, &bb, &s.defect_k);
        assert!((r - s.residual).abs() < 1e-12);
    }
}

#[test]
fn neck_system_has_corank_one() {
    for n in [2usize, 3] {
        let a = neck_system_matrix(n, 0.03, 8);
        let mut sv: Vec<f64> = SVD::new(a, false, false).singular_values.iter().copied().collect();
        sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let top = sv[sv.len() - 1];
        assert!(sv[0] <= 1e-10 * top);
        assert!(sv[1] > 1e-6 * top);
    }
}

#[test]
fn displaced_solution_symmetry_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n_spheres in [6usize, 8, 10, 12] {
        let sigma = random_sigma(&mut rng, n_spheres, 1e-3);
        let s = solve_neck_system(3, 0.7, 0.08, &sigma).unwrap();
        let (m, h) = (n_spheres, n_spheres / 2);
        let scale = s.b_k.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for k in 0..m {
            let b = |i: usize| s.b_k[i % m];
            assert!((b(k) + b(h + m - k)).abs() < 1e-9 * scale, "N={m} k={k}");
            assert!((b(k) - b(h + k)).abs() < 1e-9 * scale);
            let e = |i: usize| s.eps_bar_k[i % m];
            for j in [h + m - 1 - k, h + k, 2 * m - 1 - k] {
                assert!((e(k) - e(j)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn displaced_solution_is_order_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let free: Vec<f64> = (0..1).map(|_| rng.gen_range(0.2..1.0)).collect();
    let base = symmetric_sigma(8, &free).unwrap();
    let ratios: Vec<f64> = [0.02, 0.04, 0.08, 0.16]
        .iter()
        .map(|&t| {
            let sigma: Vec<f64> = base.iter().map(|v| v * 0.05 * t).collect();
            let s = solve_neck_system(3, 0.9, t, &sigma).unwrap();
            let size = (0..8).map(|k| s.eps.powi(2) * s.b_k[k].abs() + s.b_bar_k[k].abs()).fold(0.0, f64::max);
            size / s.eps
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    assert!(hi < 5.0 * lo && hi < 1.0, "{ratios:?}");
}

#[test]
fn neck_system_rejects_bad_sigma() {
    assert!(solve_neck_system(3, 0.9, 0.05, &[0.0, 1e-3, 0.0, 0.0, 0.0, 0.0]).is_err());
    let s = symmetric_sigma(6, &[0.1]).unwrap();
    assert!(matches!(solve_neck_system(3, 0.9, 0.05, &s), Err(Error::Infeasible(_))));
    assert!(symmetric_sigma(7, &[]).is_err());
    assert!(symmetric_sigma(8, &[0.1, 0.2]).is_err());
}

#[test]
fn closure_examples() {
    let c = closure_check(PI / 5.0, 0.0, 1e-12, 10_000);
    assert_eq!((c.n_spheres, c.m, c.exact), (Some(5), Some(1), true));
    let c = closure_check(0.5, 4.0 * PI / 5.0 - 1.0, 1e-12, 10_000);
    assert_eq!((c.n_spheres, c.m), (Some(5), Some(2)));
    let c = closure_check(0.5, 2f64.sqrt() - 1.0, 1e-12, 10_000);
    assert_eq!(c.n_spheres, None);
    // Continued-fraction convergent 41/29 of √2 gives N = 29·2π/√2-ish only with loose tolerance.
    let c = closure_check(0.5, 2f64.sqrt() - 1.0, 1e-3, 10_000);
    let (n, m) = (c.n_spheres.unwrap(), c.m.unwrap());
    assert_eq!(gcd(n, m), 1);
    assert!((2f64.sqrt() - 2.0 * PI * m as f64 / n as f64).abs() <= 1e-3);
    assert!(!c.exact);
}

#[test]
fn handle_alpha_solve_is_consistent() {
    for mode in [HandleMode::Handle, HandleMode::Doubling] {
        let p = handle_parameters(1, 2, HandleTarget::Tau(0.02), 6, 1, mode);
        if let Ok(p) = p {
            assert!(p.residual.abs() <= 1e-12, "{mode:?}: {}", p.residual);
            let q = handle_parameters(1, 2, HandleTarget::Alpha(p.alpha), 6, 1, mode).unwrap();
            assert!((q.tau - p.tau).abs() < 1e-10);
        }
    }
    let p = handle_parameters(1, 1, HandleTarget::Tau(0.02), 5, 1, HandleMode::Handle).unwrap();
    assert!(p.residual.abs() <= 1e-12);
}

#[test]
fn alpha_over_alpha_hat_grows_near_right_angle() {
    // Nα̂(α) − α changes sign on a grid for some N.
    let grid: Vec<f64> = (1..1000).map(|i| FRAC_PI_2 * i as f64 / 1000.0).collect();
    let found = (1..50).any(|n| {
        let f = |a: f64| n as f64 * matched_sphere_alpha(1, 1, a) - a;
        grid.windows(2).any(|w| f(w[0]).signum() != f(w[1]).signum())
    });
    assert!(found);
}

#[test]
fn symmetric_doubling_reduces_to_winding_equation() {
    let a = minimal_clifford_alpha_for_test();
    assert!(clifford_mean_curvature(2, 2, a).abs() < 1e-14);
    assert!((matched_sphere_alpha(2, 2, a) - FRAC_PI_2).abs() < 1e-14);
    assert!((opposite_alpha(2, 2, a).unwrap() - a).abs() < 1e-12);
    // N π + (N+1) τ = 2 m π: N = 1, m = 1 forces τ = π/2.
    let p = handle_parameters(2, 2, HandleTarget::Alpha(a), 1, 1, HandleMode::Doubling).unwrap();
    assert!((p.tau - FRAC_PI_2).abs() < 1e-12);
    assert!(matches!(
        handle_parameters(2, 2, HandleTarget::Alpha(a), 2, 1, HandleMode::Doubling),
        Err(Error::Infeasible(_))
    ));
}

fn minimal_clifford_alpha_for_test() -> f64 {
    crate::blocks::minimal_clifford_alpha(2, 2)
}

proptest! {
    #[test]
    fn displacement_is_tan_quarter_gap(a in 0.05f64..1.5, t in 0.0f64..0.5) {
        prop_assume!(a.cos() + (a + 0.5 * t).cos() > 0.05);
        let p = neck_geometry_params(a, t).unwrap();
        prop_assert!((p.d - p.r - (0.25 * t).tan()).abs() < 1e-12);
    }

    #[test]
    fn expansion_constants_are_positive(n in 2usize..7, a in 0.05f64..1.5, t in 0.0f64..0.5) {
        prop_assume!(a.cos() + (a + 0.5 * t).cos() > 0.05);
        prop_assert!(expansion_constants(n, a, t).unwrap().big_c > 0.0);
    }

    #[test]
    fn symmetric_sigma_is_symmetric(free in proptest::collection::vec(-1.0f64..1.0, 2)) {
        let s = symmetric_sigma(10, &free).unwrap();
        prop_assert!(sigma_is_symmetric(&s, 0.0));
        prop_assert!(s.iter().sum::<f64>().abs() < 1e-14);
    }
}

#[test]
fn zero_offsets_reproduce_the_plain_system() {
    let sigma = symmetric_sigma(10, &[1e-3, -2e-3]).unwrap();
    let a = solve_neck_system(3, 0.9, 0.05, &sigma).unwrap();
    let b = solve_neck_system_with_offsets(3, 0.9, 0.05, &sigma, &[(0.0, 0.0); 10]).unwrap();
    assert_eq!(a.eps, b.eps);
    assert_eq!(a.b_k, b.b_k);
    assert_eq!(a.b_bar_k, b.b_bar_k);
}

#[test]
fn shared_sphere_offsets_widen_and_recentre() {
    for n in [2, 3] {
        let (alpha, tau, big_n) = (0.9, 0.01, 10);
        let mut offsets = vec![(0.0, 0.0); big_n];
        for s in [0, big_n / 2] {
            offsets[s].0 = 1.0;
            offsets[(s + big_n - 1) % big_n].1 = 1.0;
        }
        let plain = solve_neck_system(n, alpha, tau, &[0.0; 10]).unwrap();
        let s = solve_neck_system_with_offsets(n, alpha, tau, &[0.0; 10], &offsets).unwrap();
        assert!(s.residual <= 1e-10);
        // The necks must bridge wider gaps, so the scale grows.
        assert!(s.eps > plain.eps);
        // The chain symmetry keeps the shared spheres in place.
        assert!(s.b_k[0] == 0.0 && s.b_k[big_n / 2].abs() < 1e-9 * s.b_k[1].abs());
        // Independent recomputation of the defects from the matched faces.
        let w = 0.5 * s.eps.powi(n as i32 - 1);
        let push = |v: f64, t: f64| v * s.eps.powi(n as i32 - 1) / (2.0 * (0.25 * t).cos().powi(2));
        for k in 0..big_n {
            let (lo, up) = offsets[k];
            let t = s.tau_k[k];
            let gap = neck_defect(n, alpha, t, s.eps).unwrap() + 0.5 * (push(lo, t) + push(up, t));
            let k1 = (k + 1) % big_n;
            assert!((w * (s.b_k[k1] - s.b_k[k]) - gap).abs() < 1e-12, "n = {n}, neck {k}");
            let centre = 0.5 * (push(up, t) - push(lo, t));
            assert!((s.b_bar_k[k] + w * (s.b_k[k1] + s.b_k[k]) - centre).abs() < 1e-12);
        }
    }
}
