use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wflow::cycleopt::{cycle_objective, cycle_refine, refine, CycleConfig, CycleProblem, CycleState};
use wflow::flowfield::mean_endpoint_error;
use wflow::synthdata::{make_pair, FramePair, Pose, PuppetSpec, Texture};
use wflow::{FlowField, Image, Mask};

fn spec() -> PuppetSpec {
    PuppetSpec {
        texture: Texture::Noise { period: 12.0 },
        seed: 3,
        ..Default::default()
    }
}

fn pairs() -> (FramePair<f64>, FramePair<f64>) {
    let a = Pose::default();
    let b = Pose::default().translated(3.0, 2.0);
    (make_pair(&spec(), &a, &b).unwrap(), make_pair(&spec(), &b, &a).unwrap())
}

fn state_at(ab: &FramePair<f64>, ba: &FramePair<f64>, offset: (f64, f64), cfg: &CycleConfig) -> CycleState<f64> {
    CycleState::new(
        ab.gt_flow.offset(offset.0, offset.1),
        ba.gt_flow.offset(offset.0, offset.1),
        &ab.target.bundle.foreground,
        &ab.source.bundle.foreground,
        cfg,
    )
    .unwrap()
}

#[test]
fn exact_correspondence_has_tiny_objective_and_no_gradient() {
    let (ab, ba) = pairs();
    let cfg = CycleConfig::default();
    let state = state_at(&ab, &ba, (0.0, 0.0), &cfg);
    let (value, g) = cycle_objective(&state, &ab.source.bundle, &ab.target.bundle, &cfg).unwrap();
    assert!(value < 1e-3, "objective {value}");
    let problem = CycleProblem::from_bundles(&ab.source.bundle, &ab.target.bundle, &cfg).unwrap();
    let (sym, gs) = problem.symmetric_objective(&state).unwrap();
    assert!(sym < 1e-3);
    for grads in [&g, &gs] {
        let inf = grads
            .flow_fwd
            .0
            .iter()
            .chain(&grads.flow_fwd.1)
            .chain(&grads.flow_bwd.0)
            .chain(&grads.flow_bwd.1)
            .chain(&grads.logits_fwd)
            .chain(&grads.logits_bwd)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(inf < 1e-6, "gradient norm {inf}");
    }
}

#[test]
fn identity_cycle_reconstructs_the_input() {
    let (ab, _) = pairs();
    let b = &ab.source.bundle;
    let cfg = CycleConfig::default();
    let (w, h) = b.image.dims();
    let state = CycleState::new(FlowField::zeros(w, h), FlowField::zeros(w, h), &b.foreground, &b.foreground, &cfg).unwrap();
    let (value, _) = cycle_objective(&state, b, b, &cfg).unwrap();
    assert!(value < 1e-3, "objective {value}");
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 8;
    let img = |rng: &mut ChaCha8Rng| Image::from_fn(n, n, 3, |_, _, _| rng.gen::<f64>());
    let flow = |rng: &mut ChaCha8Rng| {
        FlowField::from_fn(n, n, |x, y| {
            let tx = rng.gen_range(0..n - 1) as f64 + rng.gen_range(0.05..0.95);
            let ty = rng.gen_range(0..n - 1) as f64 + rng.gen_range(0.05..0.95);
            Some((tx - x as f64, ty - y as f64))
        })
    };
    let problem = CycleProblem {
        source: img(&mut rng),
        query: img(&mut rng),
        source_background: img(&mut rng),
        query_background: img(&mut rng),
        tv_weight: 0.1,
    };
    let anchor = |rng: &mut ChaCha8Rng| Mask::from_fn(n, n, |_, _| rng.gen::<f64>());
    let cfg = CycleConfig::default();
    let mut state = CycleState::new(flow(&mut rng), flow(&mut rng), &anchor(&mut rng), &anchor(&mut rng), &cfg).unwrap();
    state.mask_logits_fwd = Image::from_fn(n, n, 1, |_, _, _| rng.gen_range(-2.0..2.0));
    state.mask_logits_bwd = Image::from_fn(n, n, 1, |_, _, _| rng.gen_range(-2.0..2.0));

    let (_, g) = problem.objective(&state).unwrap();
    let h = 1e-3;
    let value = |s: &CycleState<f64>| problem.objective(s).unwrap().0;
    let mut checked = 0;
    let mut check = |analytic: f64, plus: CycleState<f64>, minus: CycleState<f64>| {
        let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-9 {
            return;
        }
        assert!((analytic - numeric).abs() / scale < 1e-3, "{analytic} vs {numeric}");
        checked += 1;
    };
    for i in 0..n * n {
        let (x, y) = (i % n, i / n);
        for fwd in [true, false] {
            for axis in 0..2 {
                let shift = |s: f64| {
                    let mut st = state.clone();
                    let f = if fwd { &mut st.flow_fwd } else { &mut st.flow_bwd };
                    let (u, v) = f.get(x, y);
                    f.set(x, y, Some(if axis == 0 { (u + s, v) } else { (u, v + s) }));
                    st
                };
                let grads = if fwd { &g.flow_fwd } else { &g.flow_bwd };
                let a = if axis == 0 { grads.0[i] } else { grads.1[i] };
                check(a, shift(h), shift(-h));
            }
            let shift = |s: f64| {
                let mut st = state.clone();
                let l = if fwd { &mut st.mask_logits_fwd } else { &mut st.mask_logits_bwd };
                let v = l.get(x, y, 0);
                l.set(x, y, 0, v + s);
                st
            };
            let a = if fwd { g.logits_fwd[i] } else { g.logits_bwd[i] };
            check(a, shift(h), shift(-h));
        }
    }
    assert!(checked > 4 * n * n);
}

#[test]
fn refinement_from_ground_truth_stays_put() {
    let (ab, ba) = pairs();
    let cfg = CycleConfig::default();
    let out = cycle_refine(&ab.source.bundle, &ab.target.bundle, &ab.gt_flow, &ba.gt_flow, &cfg).unwrap();
    let first = out.initial_objective.unwrap();
    assert_eq!(out.loss_trace.len(), cfg.k);
    assert!(out.loss_trace.iter().all(|v| (v - first).abs() < 1e-6));
}

#[test]
fn refinement_removes_a_uniform_perturbation() {
    let (ab, ba) = pairs();
    let cfg = CycleConfig::default();
    let problem = CycleProblem::from_bundles(&ab.source.bundle, &ab.target.bundle, &cfg).unwrap();
    let init = state_at(&ab, &ba, (2.0, 0.0), &cfg);
    let before = mean_endpoint_error(&init.flow_fwd, &ab.gt_flow, None).unwrap().unwrap();
    let out = refine(&problem, init, &cfg).unwrap();
    let after = mean_endpoint_error(&out.flow_fwd, &ab.gt_flow, None).unwrap().unwrap();
    let initial = out.initial_objective.unwrap();
    let last = *out.loss_trace.last().unwrap();
    assert!(out.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(out.loss_trace[0] <= initial);
    assert!(last < 0.5 * initial, "{last} vs {initial}");
    assert!(after < before, "{after} vs {before}");
    assert!(out.query_composite.is_some() && out.source_reconstruction.is_some());
}

#[test]
fn doubling_passes_never_hurts() {
    let (ab, ba) = pairs();
    let problem = CycleProblem::from_bundles(&ab.source.bundle, &ab.target.bundle, &CycleConfig::default()).unwrap();
    for k in [1usize, 3, 6] {
        let run = |k: usize| {
            let cfg = CycleConfig { k, ..Default::default() };
            let out = refine(&problem, state_at(&ab, &ba, (1.5, 0.5), &cfg), &cfg).unwrap();
            *out.loss_trace.last().unwrap()
        };
        assert!(run(2 * k) <= run(k));
    }
}

#[test]
fn single_pass_records_one_entry() {
    let (ab, ba) = pairs();
    let cfg = CycleConfig { k: 1, ..Default::default() };
    let out = cycle_refine(&ab.source.bundle, &ab.target.bundle, &ab.gt_flow.offset(1.0, 0.0), &ba.gt_flow, &cfg).unwrap();
    assert_eq!(out.loss_trace.len(), 1);
    assert_eq!(out.trace.len(), 1);
}

#[test]
fn bad_configs_and_shapes_are_rejected() {
    let (ab, ba) = pairs();
    let cfg = CycleConfig { k: 0, ..Default::default() };
    assert!(cycle_refine(&ab.source.bundle, &ab.target.bundle, &ab.gt_flow, &ba.gt_flow, &cfg).is_err());
    let cfg = CycleConfig { step_size: 0.0, ..Default::default() };
    assert!(cfg.validate().is_err());
    let small = FlowField::zeros(4, 4);
    assert!(cycle_refine(&ab.source.bundle, &ab.target.bundle, &small, &small, &CycleConfig::default()).is_err());
}
