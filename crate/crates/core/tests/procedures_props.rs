use eminp::numcore::{chisq_sf, mvn_sample, CorrelationSpec, CovarianceModel, RngStream};
use eminp::procedures::*;
use eminp::pvalues::*;
use eminp::resample::*;
use eminp::simlab::{run_design, SimDesign};
use rand::Rng;

const ALPHA: f64 = 0.05;

fn all_kinds() -> Vec<ProcedureKind> {
    vec![
        ProcedureKind::EminpE1,
        ProcedureKind::EminpE2,
        ProcedureKind::EminpE3,
        ProcedureKind::MinpSingle,
        ProcedureKind::MinpStepdown,
        ProcedureKind::Closed {
            global_kind: GlobalTestKind::LrChisq,
        },
        ProcedureKind::ClosedMinp,
    ]
}

fn setup(k: usize) -> (CovarianceModel, TestSpec, ReferenceDistribution) {
    let sigma = CovarianceModel::equicorrelation(0.3, k).unwrap();
    let spec = TestSpec::from_global(GlobalTestKind::LrChisq);
    let plan = ResamplingPlan::new(ResampleMethod::ParametricMc, 2000, 17);
    let r = gen_reference(ReferenceInput::Model(&sigma), &spec, &plan).unwrap();
    (sigma, spec, r)
}

/// Statistic vectors ranging from null to strongly shifted.
fn cases(k: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let sigma = CovarianceModel::equicorrelation(0.3, k).unwrap();
    let z = mvn_sample(&sigma, count, RngStream::new(seed)).unwrap();
    let mut rng = RngStream::new(seed + 1).rng();
    (0..count)
        .map(|d| {
            z.row(d)
                .iter()
                .map(|v| v + if rng.random::<f64>() < 0.5 { rng.random::<f64>() * 4.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[test]
fn reports_are_coherent_and_dual() {
    let (sigma, spec, r) = setup(4);
    let subsets = KnownSigmaSubsets::new(&sigma, &GlobalTestKind::LrChisq, RngStream::new(0)).unwrap();
    for (c, x) in cases(4, 300, 1).iter().enumerate() {
        let b = spec.bundle(x, &sigma).unwrap();
        for kind in all_kinds() {
            // A known-Σ reference has no observed sample to calibrate against,
            // so the closed LR test runs on plug-in subset p-values.
            let rep = match kind {
                ProcedureKind::Closed { .. } => run_closed(&subsets.with_stats(x).unwrap(), ALPHA).unwrap(),
                _ => run_procedure(&kind, &b, Some(&r), ALPHA, false, RngStream::new(c as u64)).unwrap(),
            };
            assert!(rep.is_coherent(), "{} case {c}", kind.name());
            // The intersection is rejected exactly when its adjusted p-value is below α.
            let g = rep.global_adjusted.unwrap();
            assert_eq!(rep.reject_global, g < ALPHA, "{} case {c}: global adjusted {g}", kind.name());
            let adj = rep.adjusted.as_ref().unwrap();
            if kind != ProcedureKind::MinpSingle {
                // Rejected exactly when the adjusted p-value is below α.
                let from_adj: Vec<usize> = (0..4).filter(|&i| adj[i] < ALPHA).collect();
                assert_eq!(rep.rejected, from_adj, "{} case {c}: adjusted {adj:?}", kind.name());
            }
            // Adjusted p-values follow the order of the raw ones.
            for i in 0..4 {
                for j in 0..4 {
                    if b.individual[i] < b.individual[j] && !kind.is_closed() {
                        assert!(adj[i] <= adj[j], "{} case {c}", kind.name());
                    }
                }
            }
        }
    }
}

#[test]
fn stepdown_contains_single_step() {
    let (sigma, spec, r) = setup(5);
    let ce = r.critical_value(ALPHA);
    for x in cases(5, 500, 2) {
        let b = spec.bundle(&x, &sigma).unwrap();
        let single = run_minp(&b, &r, ALPHA, false).unwrap().rejected;
        let step = run_minp(&b, &r, ALPHA, true).unwrap().rejected;
        assert!(single.iter().all(|i| step.contains(i)));
        let e1 = run_stepdown(&b, Some(&r), &ProcedureKind::EminpE1, ALPHA, false).unwrap().rejected;
        assert!(single_step_rejections(&b, ce).iter().all(|i| e1.contains(i)));
    }
}

#[test]
fn e1_and_minp_agree_after_a_shared_first_rejection() {
    let (sigma, spec, r) = setup(4);
    let mut shared = 0;
    for x in cases(4, 1000, 3) {
        let b = spec.bundle(&x, &sigma).unwrap();
        let e1 = run_stepdown(&b, Some(&r), &ProcedureKind::EminpE1, ALPHA, false).unwrap();
        let mp = run_minp(&b, &r, ALPHA, true).unwrap();
        if e1.stepdown_trace[0].rejected && mp.stepdown_trace[0].rejected {
            shared += 1;
            assert_eq!(e1.rejected, mp.rejected);
            assert_eq!(e1.stepdown_trace[1..], mp.stepdown_trace[1..]);
        }
    }
    assert!(shared > 100, "only {shared} cases exercised the property");
}

/// Closed LR test by enumeration with p_J from a direct inverse of Σ_J.
fn closed_oracle(x: &[f64], sigma: &CovarianceModel) -> (Vec<f64>, f64) {
    let k = x.len();
    let mut closed = vec![0.0f64; k];
    let mut full = 0.0;
    for mask in 1u32..1 << k {
        let idx: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let m = idx.len();
        let mut a: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| sigma.matrix()[(i, j)]).collect()).collect();
        let mut y: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let orig = y.clone();
        for c in 0..m {
            for r in c + 1..m {
                let f = a[r][c] / a[c][c];
                for cc in c..m {
                    a[r][cc] -= f * a[c][cc];
                }
                y[r] -= f * y[c];
            }
        }
        let mut s = vec![0.0; m];
        for i in (0..m).rev() {
            s[i] = (y[i] - (i + 1..m).map(|j| a[i][j] * s[j]).sum::<f64>()) / a[i][i];
        }
        let q: f64 = orig.iter().zip(&s).map(|(u, v)| u * v).sum();
        let p = chisq_sf(q, m);
        for &i in &idx {
            closed[i] = closed[i].max(p);
        }
        if m == k {
            full = p;
        }
    }
    (closed, full)
}

#[test]
fn closed_lr_matches_enumeration_and_dominates_the_intersection() {
    let sigma = CovarianceModel::equicorrelation(0.3, 5).unwrap();
    let subsets = KnownSigmaSubsets::new(&sigma, &GlobalTestKind::LrChisq, RngStream::new(0)).unwrap();
    for x in cases(5, 200, 4) {
        let rep = run_closed(&subsets.with_stats(&x).unwrap(), ALPHA).unwrap();
        let (closed, full) = closed_oracle(&x, &sigma);
        let got = rep.closed.as_ref().unwrap();
        for i in 0..5 {
            assert!((got[i] - closed[i]).abs() < 1e-10, "{got:?} vs {closed:?}");
            assert!(got[i] >= rep.global_adjusted.unwrap());
        }
        assert!((rep.global_adjusted.unwrap() - full).abs() < 1e-10);
        assert!(rep.is_coherent());
    }
}

#[test]
fn calibrated_closed_pvalues_dominate_the_intersection() {
    let x = mvn_sample(&CovarianceModel::identity(4).unwrap(), 50, RngStream::new(8)).unwrap();
    let spec = TestSpec::from_global(GlobalTestKind::LrChisq);
    for method in [ResampleMethod::Bootstrap, ResampleMethod::ParametricMc] {
        let r = gen_reference(ReferenceInput::OneSample(&x), &spec, &ResamplingPlan::new(method, 400, 2)).unwrap();
        let b = r.observed().unwrap().clone();
        for kind in [ProcedureKind::Closed { global_kind: GlobalTestKind::LrChisq }, ProcedureKind::ClosedMinp] {
            let rep = run_procedure(&kind, &b, Some(&r), ALPHA, false, RngStream::new(1)).unwrap();
            let g = rep.global_adjusted.unwrap();
            assert!(rep.closed.unwrap().iter().all(|&c| c >= g));
        }
    }
}

#[test]
fn fwer_is_controlled_under_the_full_null() {
    let design = SimDesign {
        label: "null".into(),
        k: 4,
        n: None,
        scale: 0.0,
        m: 0,
        correlation: CorrelationSpec::Equicorrelation { rho: 0.5 },
        reps: 2000,
        alpha: ALPHA,
        plan: ResamplingPlan::new(ResampleMethod::ParametricMc, 4000, 0),
        procedures: all_kinds(),
        global_kind: GlobalTestKind::LrChisq,
        bonferroni_tail: false,
    };
    let report = run_design(&design, RngStream::new(2024)).unwrap();
    let bound = 100.0 * (ALPHA + 3.0 * (ALPHA * (1.0 - ALPHA) / 2000.0).sqrt());
    for row in &report.rows {
        assert!(row.fwer <= bound, "{}: FWER {}% > {bound}%", row.procedure, row.fwer);
        assert_eq!(row.ancr, 0.0);
    }
}

#[test]
fn closed_guard_rejects_large_k() {
    let sigma = CovarianceModel::identity(13).unwrap();
    assert!(matches!(
        KnownSigmaSubsets::new(&sigma, &GlobalTestKind::LrChisq, RngStream::new(0)),
        Err(eminp::Error::TooManyHypotheses { k: 13, max: 12 })
    ));
}
