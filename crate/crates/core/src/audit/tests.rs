use super::*;
use crate::pde::{Grid1D, Interval};
use crate::probability::NoiseTree;
use crate::weights::{build_spatial_weight, calibrate_lambda};

struct Fixture {
    solver: Solver,
    beta: SpatialWeight,
    params: WeightParams,
}

impl Fixture {
    fn new(n: usize, depth: usize, range: f64) -> Self {
        let d0 = Interval::new(0.3, 0.7);
        let grid = Grid1D::new(n, d0).unwrap();
        let beta = build_spatial_weight(d0, Interval::new(0.4, 0.6), &grid).unwrap();
        let times = cell_midpoints(0.5, depth);
        let lambda = calibrate_lambda(
            range,
            0.3,
            1.0,
            0.5,
            Variant::ForwardControl,
            &beta,
            &grid,
            &times,
        )
        .unwrap();
        let params = WeightParams::new(lambda, 0.3, 1.0, 0.5, Variant::ForwardControl).unwrap();
        let solver = Solver::new(NoiseTree::new(depth, 0.5).unwrap(), grid, 1).unwrap();
        Self {
            solver,
            beta,
            params,
        }
    }

    fn setup(&self) -> AuditSetup<'_> {
        AuditSetup {
            solver: &self.solver,
            beta: &self.beta,
            params: self.params,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// (name, lhs?, λ, μ, ξ, e^{2μ(6m+1)}?, trace?, gradient?, observation?)
type Row = (&'static str, bool, f64, f64, f64, bool, bool, bool, bool);

const BACKWARD: [Row; 7] = [
    ("trace_grad_z", true, 0.0, 0.0, 0.0, false, true, true, false),
    ("trace_z", true, 2.0, 3.0, 0.0, true, true, false, false),
    ("grad_z", true, 1.0, 2.0, 1.0, false, false, true, false),
    ("z", true, 3.0, 4.0, 3.0, false, false, false, false),
    ("z_d0", false, 3.0, 4.0, 3.0, false, false, false, true),
    ("source", false, 0.0, 0.0, 0.0, false, false, false, false),
    ("zbar", false, 2.0, 2.0, 3.0, false, false, false, false),
];

const DETERMINISTIC: [Row; 6] = [
    ("grad_q", true, 1.0, 2.0, 1.0, false, false, true, false),
    ("q", true, 3.0, 4.0, 3.0, false, false, false, false),
    ("trace_grad_q", true, 0.0, 0.0, 0.0, false, true, true, false),
    ("trace_q", true, 2.0, 3.0, 0.0, true, true, false, false),
    ("source", false, 0.0, 0.0, 0.0, false, false, false, false),
    ("q_d0", false, 3.0, 4.0, 3.0, false, false, false, true),
];

const FORWARD: [Row; 6] = [
    ("grad_q", true, 1.0, 2.0, 1.0, false, false, true, false),
    ("q", true, 3.0, 4.0, 3.0, false, false, false, false),
    ("trace_q", true, 2.0, 2.0, 0.0, false, true, false, false),
    ("drift_source", false, 0.0, 0.0, 0.0, false, false, false, false),
    ("diffusion_source", false, 2.0, 2.0, 2.0, false, false, false, false),
    ("q_d0", false, 3.0, 4.0, 3.0, false, false, false, true),
];

#[test]
fn term_tables_match_transcription() {
    for (ineq, table) in [
        (Inequality::BackwardStochastic, &BACKWARD[..]),
        (Inequality::DeterministicForward, &DETERMINISTIC[..]),
        (Inequality::RandomForward, &DETERMINISTIC[..]),
        (Inequality::ForwardStochastic, &FORWARD[..]),
    ] {
        let terms = ineq.terms();
        assert_eq!(terms.len(), table.len(), "{ineq:?}");
        for (t, &(name, lhs, l, m, x, c, trace, grad, obs)) in terms.iter().zip(table) {
            assert_eq!(t.name, name);
            assert_eq!(t.side == Side::Lhs, lhs, "{name}");
            assert_eq!(t.powers, [l, m, x], "{name}");
            assert_eq!(t.trace_const, c, "{name}");
            assert_eq!(t.span == Span::Trace, trace, "{name}");
            assert_eq!(t.quantity == Quantity::Gradient, grad, "{name}");
            assert_eq!(t.region == Region::Observation, obs, "{name}");
        }
    }
}

#[test]
fn twenty_samples_give_finite_ratios() {
    let fx = Fixture::new(31, 6, 20.0);
    for ineq in Inequality::ALL {
        let r = audit(ineq, &fx.setup(), &AuditOptions::default()).unwrap();
        assert_eq!(r.records.len(), 20);
        assert_eq!(r.ratios.len(), 20, "{ineq:?}");
        assert!(r.ratios.iter().all(|q| q.is_finite() && *q > 0.0));
        assert!(r.max_ratio.unwrap().is_finite());
        assert!(r.median_ratio.unwrap() <= r.max_ratio.unwrap());
        assert_eq!(r.counterexamples, 0);
    }
}

#[test]
fn ratios_do_not_depend_on_normalization() {
    let fx = Fixture::new(31, 6, 20.0);
    for ineq in Inequality::ALL {
        let opts = AuditOptions {
            samples: 5,
            ..Default::default()
        };
        let a = audit(ineq, &fx.setup(), &opts).unwrap();
        for shift in [-3.0, 7.5] {
            let b = audit(
                ineq,
                &fx.setup(),
                &AuditOptions {
                    kappa_shift: shift,
                    ..opts.clone()
                },
            )
            .unwrap();
            for (x, y) in a.ratios.iter().zip(&b.ratios) {
                assert!(rel(*x, *y) <= 1e-12, "{ineq:?} {x} {y}");
            }
            let factor = (-2.0 * shift).exp();
            let (l0, l1) = (a.records[0].lhs[0], b.records[0].lhs[0]);
            assert!(rel(l0 * factor, l1) <= 1e-12);
        }
    }
}

#[test]
fn terms_are_quadratic_in_the_data() {
    let fx = Fixture::new(31, 6, 20.0);
    for ineq in Inequality::ALL {
        let opts = AuditOptions {
            samples: 3,
            ..Default::default()
        };
        let a = audit(ineq, &fx.setup(), &opts).unwrap();
        let t = 3.7;
        let b = audit(
            ineq,
            &fx.setup(),
            &AuditOptions {
                data_scale: t,
                ..opts
            },
        )
        .unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            for (x, y) in ra.lhs.iter().chain(&ra.rhs).zip(rb.lhs.iter().chain(&rb.rhs)) {
                assert!(rel(t * t * x, *y) <= 1e-12, "{ineq:?}");
            }
        }
    }
}

#[test]
fn zero_data_gives_zero_records() {
    let fx = Fixture::new(15, 4, 20.0);
    for ineq in Inequality::ALL {
        let r = audit(
            ineq,
            &fx.setup(),
            &AuditOptions {
                samples: 2,
                data_scale: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.zero_records, 2);
        assert!(r.ratios.is_empty() && r.max_ratio.is_none());
        assert!(r.records.iter().all(|s| s.ratio.is_none()));
    }
}

#[test]
fn dropping_the_diffusion_source_reduces_to_the_random_forward_terms() {
    let fx = Fixture::new(31, 6, 20.0);
    let opts = AuditOptions {
        samples: 4,
        no_diffusion_source: true,
        ..Default::default()
    };
    let fwd = audit(Inequality::ForwardStochastic, &fx.setup(), &opts).unwrap();
    let rnd = audit(Inequality::RandomForward, &fx.setup(), &opts).unwrap();
    for (a, b) in fwd.records.iter().zip(&rnd.records) {
        // grad_q, q shared on the left; source and q_d0 on the right
        assert_eq!(a.lhs[..2], b.lhs[..2]);
        assert_eq!(a.rhs[0], b.rhs[0]);
        assert_eq!(a.rhs[1], 0.0);
        assert_eq!(a.rhs[2], b.rhs[1]);
    }
}

#[test]
fn state_term_matches_direct_weight_formula() {
    // E ∬ λ³μ⁴ξ³θ²|q|² for the random forward audit from φ and ξ directly
    let fx = Fixture::new(15, 4, 8.0);
    let opts = AuditOptions {
        samples: 1,
        ..Default::default()
    };
    let r = audit(Inequality::RandomForward, &fx.setup(), &opts).unwrap();
    let s = &fx.solver;
    let p = fx.params.with_variant(Variant::BackwardControl);
    let times = cell_midpoints(0.5, 4);
    let grid = &s.grid;
    let q0 = smooth_vector(opts.seed, Role::InitialDatum, 0, grid, opts.modes);
    let g = smooth_field(opts.seed, Role::Drift, 0, &s.control_shape(), grid, opts.modes);
    let q = s.forward_core(&q0, Some(&g), None).unwrap();
    let mut max_ell = f64::NEG_INFINITY;
    let mut w = vec![vec![0.0; grid.n]; 4];
    for (k, &t) in times.iter().enumerate() {
        let gamma = crate::weights::temporal_gamma(t, &p).unwrap();
        for i in 0..grid.n {
            let b = fx.beta.beta[i];
            let e = (p.mu * (b + 6.0 * p.m)).exp();
            let phi = gamma * (e - p.mu * (6.0 * p.mu * (p.m + 1.0)).exp());
            let xi = gamma * e;
            max_ell = max_ell.max(p.lambda * phi);
            // log of λ³μ⁴ξ³θ² before normalization
            w[k][i] = (p.lambda.powi(3) * p.mu.powi(4) * xi.powi(3)).ln() + 2.0 * p.lambda * phi;
        }
    }
    let mut total = 0.0;
    for k in 0..4 {
        let level = q.level(k + 1);
        let nodes = 1 << (k + 1);
        for j in 0..nodes {
            for i in 0..grid.n {
                let v = level[j * grid.n + i];
                total += (w[k][i] - 2.0 * max_ell).exp() * v * v / nodes as f64;
            }
        }
    }
    total *= grid.h * s.tree.dt;
    assert!(rel(total, r.records[0].lhs[1]) <= 1e-12, "{total} {}", r.records[0].lhs[1]);
}

#[test]
fn sine_datum_without_source_has_finite_terms() {
    let fx = Fixture::new(31, 6, 20.0);
    let s = &fx.solver;
    let dense = DenseHeat::new(&s.grid, s.tree.dt, 1).unwrap();
    let q0: Vec<f64> = s.grid.x.iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
    let q = dense.forward_steps(&q0, None, 6);
    let fields = SampleFields {
        state: q[1..].to_vec(),
        trace: q[6].clone(),
        martingale: None,
        source: vec![vec![0.0; s.grid.n]; 6],
        diffusion: None,
    };
    let params = fx.params.with_variant(Variant::BackwardControl);
    let times = cell_midpoints(0.5, 6);
    let interior = carleman_fields(&params, &fx.beta, &s.grid, &times, 0.0).unwrap();
    let trace = carleman_fields(&params, &fx.beta, &s.grid, &[0.5], 0.0)
        .unwrap()
        .with_kappa(interior.kappa);
    let weights = Weights { interior, trace };
    let rec = evaluate_sample(
        0,
        &Inequality::DeterministicForward.terms(),
        &fields,
        &weights,
        s,
        &params,
        &AuditOptions::default(),
    )
    .unwrap();
    assert!(rec.lhs.iter().all(|v| v.is_finite() && *v > 0.0));
    assert_eq!(rec.rhs[0], 0.0);
    assert_eq!(rec.kind, SampleKind::Regular);
}

#[test]
fn vanishing_right_side_is_a_counterexample_record() {
    let fx = Fixture::new(15, 4, 20.0);
    let s = &fx.solver;
    let n = s.grid.n;
    let zero = |k: usize| vec![0.0; n << k];
    let fields = SampleFields {
        state: (0..4).map(zero).collect(),
        trace: vec![1.0; n],
        martingale: Some((0..4).map(zero).collect()),
        source: (0..4).map(zero).collect(),
        diffusion: None,
    };
    let params = fx.params;
    let times = cell_midpoints(0.5, 4);
    let interior = carleman_fields(&params, &fx.beta, &s.grid, &times, 0.0).unwrap();
    let trace = carleman_fields(&params, &fx.beta, &s.grid, &[0.0], 0.0).unwrap();
    let weights = Weights { interior, trace };
    let rec = evaluate_sample(
        3,
        &Inequality::BackwardStochastic.terms(),
        &fields,
        &weights,
        s,
        &params,
        &AuditOptions::default(),
    )
    .unwrap();
    assert_eq!(rec.kind, SampleKind::Counterexample);
    assert!(rec.ratio.is_none());
}

#[test]
fn martingale_power_override_changes_only_that_term() {
    let fx = Fixture::new(15, 4, 20.0);
    let opts = AuditOptions {
        samples: 2,
        ..Default::default()
    };
    let a = audit(Inequality::BackwardStochastic, &fx.setup(), &opts).unwrap();
    let b = audit(
        Inequality::BackwardStochastic,
        &fx.setup(),
        &AuditOptions {
            martingale_xi_power: Some(2.0),
            ..opts
        },
    )
    .unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.lhs, y.lhs);
        assert_eq!(x.rhs[..2], y.rhs[..2]);
        assert_ne!(x.rhs[2], y.rhs[2]);
    }
}

#[test]
fn csv_lists_every_term() {
    let fx = Fixture::new(15, 4, 20.0);
    let r = audit(
        Inequality::ForwardStochastic,
        &fx.setup(),
        &AuditOptions {
            samples: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,lhs_grad_q,lhs_q,lhs_trace_q,rhs_drift_source,rhs_diffusion_source,rhs_q_d0,ratio"
    );
    assert_eq!(lines.count(), 3);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["inequality"], "ForwardStochastic");
}

#[test]
fn lambda_sweep_reports_each_point() {
    let fx = Fixture::new(15, 4, 20.0);
    let pts = lambda_sweep(
        Inequality::DeterministicForward,
        &fx.setup(),
        &AuditOptions {
            samples: 4,
            ..Default::default()
        },
        &[1.0, 2.0, 4.0],
    )
    .unwrap();
    assert_eq!(pts.len(), 3);
    assert!((pts[2].lambda / pts[0].lambda - 4.0).abs() < 1e-12);
    assert!(pts.iter().all(|p| p.max_ratio.unwrap().is_finite()));
}
