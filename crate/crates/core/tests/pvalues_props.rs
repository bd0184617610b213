use eminp::numcore::linalg::Matrix;
use eminp::numcore::{mvn_sample, CovarianceModel, RngStream};
use eminp::orthant::chi_bar_stat;
use eminp::pvalues::*;
use proptest::prelude::*;

fn ks_uniform(mut p: Vec<f64>, top: f64) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| {
            let u = v / top;
            ((i + 1) as f64 / n - u).abs().max((u - i as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn null_pvalues_are_uniform() {
    let sigma = CovarianceModel::equicorrelation(0.5, 3).unwrap();
    let x = mvn_sample(&sigma, 100_000, RngStream::new(41)).unwrap();
    let rows = |f: &dyn Fn(&[f64]) -> f64| (0..x.rows()).map(|d| f(x.row(d))).collect::<Vec<_>>();
    for kind in [GlobalTestKind::LrChisq, GlobalTestKind::joint_t(), GlobalTestKind::Sum] {
        let p = rows(&|r| p_global(r, &sigma, &kind).unwrap());
        let d = ks_uniform(p, 1.0);
        assert!(d <= 0.01, "{}: KS {d}", kind.name());
    }
    assert!(ks_uniform(rows(&|r| p_indiv_two_sided(r[0])), 1.0) <= 0.01);
    assert!(ks_uniform(rows(&|r| p_indiv_one_sided(r[1])), 1.0) <= 0.01);

    // Chi-bar: the χ²₀ atom puts mass w₀ at p = 1; below that p is uniform on (0, 1 − w₀).
    let kind = GlobalTestKind::chi_bar().resolve(&sigma, RngStream::new(42)).unwrap();
    let GlobalTestKind::ChiBar { weights: Some(w) } = &kind else { unreachable!() };
    let p: Vec<f64> = rows(&|r| p_global(r, &sigma, &kind).unwrap()).into_iter().filter(|&v| v < 1.0).collect();
    let atom = 1.0 - p.len() as f64 / 100_000.0;
    assert!((atom - w.weights[0]).abs() < 0.005, "atom {atom} vs w0 {}", w.weights[0]);
    assert!(ks_uniform(p, 1.0 - w.weights[0]) <= 0.01);
}

fn statistic(x: &[f64], sigma: &CovarianceModel, kind: &GlobalTestKind) -> f64 {
    let k = x.len();
    match kind {
        GlobalTestKind::LrChisq => sigma.quad_form(x).unwrap(),
        GlobalTestKind::Sum => x.iter().sum::<f64>().abs(),
        GlobalTestKind::JointT { .. } => {
            let b = default_joint_t_direction(sigma);
            let s = sigma.solve(x);
            b.iter().zip(&s).map(|(a, c)| a * c).sum()
        }
        GlobalTestKind::ChiBar { .. } => chi_bar_stat(x, sigma).unwrap(),
        GlobalTestKind::HotellingTwoSample => unreachable!("{k}"),
    }
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..5).prop_flat_map(|k| {
        (
            proptest::collection::vec(-4.0f64..4.0, k),
            proptest::collection::vec(-4.0f64..4.0, k),
            -0.2f64..0.9,
        )
    })
}

proptest! {
    #[test]
    fn global_pvalues_decrease_in_statistic((a, b, rho) in pair()) {
        let sigma = CovarianceModel::equicorrelation(rho, a.len()).unwrap();
        let chi = GlobalTestKind::ChiBar {
            weights: Some(eminp::orthant::ChiBarWeights::exact(
                (0..=a.len()).map(|j| {
                    let c = (0..j).fold(1.0, |acc, i| acc * (a.len() - i) as f64 / (i + 1) as f64);
                    c / 2f64.powi(a.len() as i32)
                }).collect()
            ).unwrap()),
        };
        for kind in [GlobalTestKind::LrChisq, GlobalTestKind::Sum, GlobalTestKind::joint_t(), chi] {
            let (sa, sb) = (statistic(&a, &sigma, &kind), statistic(&b, &sigma, &kind));
            let (pa, pb) = (p_global(&a, &sigma, &kind).unwrap(), p_global(&b, &sigma, &kind).unwrap());
            if sa < sb - 1e-12 {
                prop_assert!(pa >= pb - 1e-15, "{}: s {sa} < {sb} but p {pa} < {pb}", kind.name());
            }
        }
    }

    #[test]
    fn individual_pvalues_even_and_monotone(a in -8.0f64..8.0, b in -8.0f64..8.0) {
        prop_assert_eq!(p_indiv_two_sided(a), p_indiv_two_sided(-a));
        if a.abs() <= b.abs() {
            prop_assert!(p_indiv_two_sided(a) >= p_indiv_two_sided(b));
        }
        if a <= b {
            prop_assert!(p_indiv_one_sided(a) >= p_indiv_one_sided(b));
        }
    }

    #[test]
    fn bundle_ordering((x, _, rho) in pair(), one_sided in any::<bool>()) {
        let sigma = CovarianceModel::equicorrelation(rho, x.len()).unwrap();
        let spec = if one_sided {
            TestSpec::new(GlobalTestKind::joint_t(), Sidedness::OneSided)
        } else {
            TestSpec::from_global(GlobalTestKind::LrChisq)
        };
        let b = spec.bundle(&x, &sigma).unwrap();
        prop_assert!(b.eminp <= b.minp && b.eminp <= b.global);
        for &p in &b.individual {
            prop_assert!(b.minp <= p && (0.0..=1.0).contains(&p));
        }
    }
}

fn group(rows: &[[f64; 3]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// `n₁ DᵀS⁻¹D` by Cramer's rule on the 3×3 pooled matrix.
fn hotelling_oracle(a: &Matrix, b: &Matrix) -> (f64, Vec<f64>) {
    let mean = |m: &Matrix| (0..3).map(|j| (0..m.rows()).map(|i| m[(i, j)]).sum::<f64>() / m.rows() as f64).collect::<Vec<_>>();
    let cov = |m: &Matrix| {
        let mu = mean(m);
        let n = m.rows() as f64;
        let mut c = [[0.0; 3]; 3];
        for i in 0..m.rows() {
            for r in 0..3 {
                for s in 0..3 {
                    c[r][s] += (m[(i, r)] - mu[r]) * (m[(i, s)] - mu[s]) / (n - 1.0);
                }
            }
        }
        c
    };
    let (n1, n2) = (a.rows() as f64, b.rows() as f64);
    let (c1, c2) = (cov(a), cov(b));
    let mut s = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            s[r][c] = c1[r][c] + n1 / n2 * c2[r][c];
        }
    }
    let d: Vec<f64> = mean(a).iter().zip(mean(b)).map(|(x, y)| x - y).collect();
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(s);
    let sol: Vec<f64> = (0..3)
        .map(|j| {
            let mut m = s;
            for r in 0..3 {
                m[r][j] = d[r];
            }
            det3(m) / det
        })
        .collect();
    let t = n1 * d.iter().zip(&sol).map(|(x, y)| x * y).sum::<f64>();
    let z = (0..3).map(|i| n1.sqrt() * d[i] / s[i][i].sqrt()).collect();
    (t, z)
}

#[test]
fn hotelling_matches_direct_formula() {
    let g1 = group(&[[1.0, 2.0, 0.5], [2.0, 1.0, 1.5], [0.0, 0.5, 2.0], [1.5, 2.5, 0.0], [3.0, 1.0, 1.0]]);
    let g2 = group(&[[0.5, 1.0, 1.0], [1.0, 0.0, 0.5], [0.0, 1.5, 1.5], [2.0, 0.5, 0.0], [0.5, 0.5, 2.5], [1.0, 2.0, 1.0]]);
    let h = hotelling_two_sample(&TwoSampleData::new(g1.clone(), g2.clone()).unwrap()).unwrap();
    let (t, z) = hotelling_oracle(&g1, &g2);
    assert!((h.t_g - t).abs() < 1e-10 * t.max(1.0), "{} vs {t}", h.t_g);
    for i in 0..3 {
        assert!((h.signed_stats[i] - z[i]).abs() < 1e-10);
        assert!((h.std_errors[i] - h.differences[i] / z[i]).abs() < 1e-10);
    }
    // n₁(Σ̂₁ + (n₁/n₂)Σ̂₂)⁻¹ = (Σ̂₁/n₁ + Σ̂₂/n₂)⁻¹: swapping the groups keeps T_g
    // and the standard errors and flips the sign of every difference.
    let swapped = hotelling_two_sample(&TwoSampleData::new(g2.clone(), g1.clone()).unwrap()).unwrap();
    let (ts, zs) = hotelling_oracle(&g2, &g1);
    assert!((swapped.t_g - ts).abs() < 1e-10 * ts.max(1.0));
    assert!((swapped.t_g - h.t_g).abs() < 1e-10 * ts.max(1.0));
    for i in 0..3 {
        assert!((swapped.signed_stats[i] - zs[i]).abs() < 1e-10);
        assert!((swapped.signed_stats[i] + h.signed_stats[i]).abs() < 1e-10);
        assert!((swapped.std_errors[i] - h.std_errors[i]).abs() < 1e-12);
    }
}
