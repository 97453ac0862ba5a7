//! End-to-end acceptance checks, run in sequence so the grid timing is not
//! shared with other work. Each check prints one PASS/FAIL line.

use std::time::Instant;

use backup_cbf::barrier::{
    constraint_enclosures, select_points, AffineConstraint, BackupFlow, ConstraintKind, ConstraintTag, SafetySpec,
};
use backup_cbf::dynamics::{ControlAffine, LinearModel, PreFeedback, Zoh};
use backup_cbf::harness::{
    build_system, desired_input, run_grid, run_scenario, HarnessConfig, SegwaySystem, Variant, Verdict,
};
use backup_cbf::safety_filter::{
    certifies_infeasibility, delay_steps, delayed_filter_step, kkt_report, solve_filter_qp, ConstraintMode,
    FilterConfig, FilterProblem, InputBuffer, QpStatus, SafetyFilter,
};
use backup_cbf::sensitivity::{compose_sensitivities, flow_with_sensitivity, SensitivityConfig};
use backup_cbf::setops::{reachable_box, reachable_box_from, IntervalBox};
use backup_cbf::synthesis::{availability_radius, linearize_at_vertices, verify_decrease, GainCertificate};
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn shipped() -> (HarnessConfig, SegwaySystem) {
    let cfg = HarnessConfig::shipped();
    let sys = build_system(&cfg).expect("shipped system builds");
    (cfg, sys)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform_ball(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let d = DVector::from_fn(n, |_, _| normal(rng));
    let r = rng.random::<f64>().powf(1.0 / n as f64);
    d.normalize() * r
}

/// Uniform sample of `{xᵀPx ≤ level}`.
fn ellipsoid_sample(rng: &mut ChaCha8Rng, p: &DMatrix<f64>, level: f64) -> DVector<f64> {
    let l = p.clone().cholesky().expect("P positive definite").l();
    let z = uniform_ball(rng, p.nrows()) * level.sqrt();
    l.transpose().solve_upper_triangular(&z).expect("invertible factor")
}

fn quad(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * p * x)[(0, 0)]
}

fn grid() -> Outcome {
    let (cfg, _) = shipped();
    let started = Instant::now();
    let (rows, _) = run_grid(&cfg, None).expect("grid runs");
    let elapsed = started.elapsed().as_secs_f64();
    let mut pass = elapsed < 60.0;
    let mut parts = Vec::new();
    for r in &rows {
        let ok = r.matches_expectation()
            && match r.variant {
                Variant::Robust => r.max_abs_position <= cfg.safety.position_limit - 0.01,
                _ => true,
            };
        pass &= ok;
        parts.push(format!(
            "{} {} max|p| {:.4}{}",
            r.name,
            r.verdict.map_or_else(|| "error".to_owned(), |v| format!("{v:?}")),
            r.max_abs_position,
            if ok { "" } else { " (!)" }
        ));
    }
    outcome(
        "rate and delay verdict grid",
        pass,
        format!("{}; {elapsed:.1} s", parts.join(", ")),
    )
}

fn closed_loop_linear() -> PreFeedback<f64, LinearModel<f64>> {
    let a = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; 0.5, -1.0, 0.2];
    let b = dmatrix![0.0; 0.0; 1.0];
    let k = dmatrix![-4.0, -6.0, -4.5];
    PreFeedback::new(LinearModel::new(a, b, DVector::from_element(1, 50.0)), k, DVector::zeros(3))
}

fn one_shot_jacobian<M: ControlAffine<f64>>(model: &M, zoh: &Zoh, x: &DVector<f64>, inputs: &[DVector<f64>], dt: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let e = 1e-6 * (1.0 + x.amax());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += e;
        xm[c] -= e;
        let fp = zoh.rollout(model, &xp, inputs, dt).unwrap();
        let fm = zoh.rollout(model, &xm, inputs, dt).unwrap();
        j.set_column(c, &((fp - fm) / (2.0 * e)));
    }
    j
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

fn sensitivity() -> Outcome {
    let cfg = SensitivityConfig::default();
    let zoh = Zoh::new(4);
    let dt = 0.05;
    let mut chain_err = 0.0f64;

    let lin = closed_loop_linear();
    let outer = dmatrix![0.3, -0.2, 0.1];
    let x0 = DVector::from_column_slice(&[0.4, -0.3, 0.2]);
    let s = flow_with_sensitivity(&lin, &zoh, &x0, |x| &outer * x, dt, 40, &cfg).unwrap();
    for k in [1, 7, 20, 40] {
        let composed = compose_sensitivities(&s.step_jacobians[..k]).unwrap();
        let direct = one_shot_jacobian(&lin, &zoh, &x0, &s.base.held_inputs[..k], dt);
        chain_err = chain_err.max(relative(&composed, &direct));
    }

    let (shipped_cfg, sys) = shipped();
    let xs = DVector::from_column_slice(&[0.2, 0.3, 0.05, -0.2]);
    let seg = flow_with_sensitivity(&sys.model, &Zoh::new(shipped_cfg.backup.substeps), &xs, |x| {
        DVector::from_element(1, 2.0 * x[1].sin())
    }, 0.025, 60, &shipped_cfg.sensitivity)
    .unwrap();
    for k in [1, 15, 60] {
        let composed = compose_sensitivities(&seg.step_jacobians[..k]).unwrap();
        let direct = one_shot_jacobian(&sys.model, &Zoh::new(shipped_cfg.backup.substeps), &xs, &seg.base.held_inputs[..k], 0.025);
        chain_err = chain_err.max(relative(&composed, &direct));
    }

    let acl = &lin.inner.a + &lin.inner.b * &lin.gain;
    let free = flow_with_sensitivity(&lin, &zoh, &x0, |_| DVector::zeros(1), dt, 40, &cfg).unwrap();
    let exp_err = (0..=40)
        .map(|i| (&free.cumulative[i] - (&acl * (i as f64 * dt)).exp()).amax())
        .fold(0.0, f64::max);
    outcome(
        "sensitivity chain rule and closed form",
        chain_err < 1e-3 && exp_err < 1e-4,
        format!("chain-rule relative error {chain_err:.2e} (< 1e-3), closed-form error {exp_err:.2e} (< 1e-4)"),
    )
}

/// `∇h(y_g) Φ (f(x) + g(x) u) + λ h(y_h)` at one realization.
fn realized_lhs(
    sys: &SegwaySystem,
    spec: &SafetySpec<f64>,
    kind: ConstraintKind,
    phi: &DMatrix<f64>,
    y_g: &DVector<f64>,
    y_h: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let (h, grad) = match kind {
        ConstraintKind::Safety => (&spec.h, &spec.grad_h),
        ConstraintKind::Backup => (&spec.h_backup, &spec.grad_h_backup),
    };
    let g = DVector::from_iterator(grad.len(), grad.iter().map(|e| e.eval_vec(y_g)));
    let field = sys.model.drift(x) + sys.model.input_matrix(x) * u;
    (g.transpose() * phi * field)[(0, 0)] + spec.alpha_gain * h.eval_vec(y_h)
}

fn robust_soundness() -> Outcome {
    let (cfg, sys) = shipped();
    let mut snap_cfg = cfg.clone();
    snap_cfg.scenario.variant = Variant::Nominal;
    snap_cfg.scenario.frequency = 40.0;
    snap_cfg.scenario.duration = 6.0;
    let run = run_scenario(&snap_cfg, &sys).expect("snapshot run");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = &sys.model;
    let u_max = model.input_bound();
    let flow = BackupFlow {
        model,
        backup: &sys.backup,
        zoh: Zoh::new(cfg.backup.substeps),
        sensitivity: cfg.sensitivity,
    };
    let r_max = [0.005, 0.02, 0.005, 0.05];
    let (mut rows, mut implied, mut violations) = (0usize, 0usize, 0usize);
    for _ in 0..20 {
        let x0 = run.records[rng.random_range(0..run.records.len())].state.clone();
        let dt = if rng.random::<bool>() { 1.0 / 40.0 } else { 1.0 / 20.0 };
        let radius = DVector::from_iterator(4, r_max.iter().map(|r| r * rng.random::<f64>()));
        let delta = IntervalBox::centered(&radius);
        let initial = reachable_box_from(model, &delta.translate(&x0).unwrap(), dt, &model.input_box(), &cfg.reach)
            .expect("reach box");
        let traj = flow.rollout(&x0, dt, sys.spec.horizon_steps(dt).unwrap()).unwrap();
        let sel = select_points(&traj, &sys.spec, cfg.safety.points);
        let enclosures = constraint_enclosures(model, &delta, &initial, &traj, &sys.spec, &sel).unwrap();
        for enc in &enclosures {
            rows += 1;
            let row = enc.affinize(&u_max);
            let around = delta.translate(&traj.base.states[enc.tag.step]).unwrap();
            let phi = &traj.cumulative[enc.tag.step];
            // Half the inputs are drawn from the part of the input range the row admits.
            let (lo, hi) = admitted_range(&row, u_max[0]);
            for s in 0..1000 {
                let u = if s % 2 == 0 || lo > hi {
                    DVector::from_element(1, u_max[0] * (2.0 * rng.random::<f64>() - 1.0))
                } else {
                    DVector::from_element(1, lo + (hi - lo) * rng.random::<f64>())
                };
                if row.value(&u) < 0.0 {
                    continue;
                }
                implied += 1;
                let lhs = realized_lhs(
                    &sys,
                    &sys.spec,
                    enc.tag.kind,
                    phi,
                    &around.sample(&mut rng),
                    &around.sample(&mut rng),
                    &initial.sample(&mut rng),
                    &u,
                );
                if lhs < 0.0 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        "robust constraint soundness",
        violations == 0 && implied > 0,
        format!("{rows} rows, {implied} implied realizations, {violations} violations"),
    )
}

/// Scalar inputs in `[-u_max, u_max]` with `a u + b ≥ 0`.
fn admitted_range(row: &AffineConstraint<f64>, u_max: f64) -> (f64, f64) {
    let (a, b) = (row.a[0], row.b);
    if a > 0.0 {
        ((-b / a).max(-u_max), u_max)
    } else if a < 0.0 {
        (-u_max, (-b / a).min(u_max))
    } else if b >= 0.0 {
        (-u_max, u_max)
    } else {
        (1.0, -1.0)
    }
}

fn reachability() -> Outcome {
    let (cfg, sys) = shipped();
    let model = &sys.model;
    let u_max = model.input_bound()[0];
    let dt = 1.0 / 20.0;
    let region = IntervalBox::from_center_radius(&DVector::zeros(4), &DVector::from_column_slice(&[0.45, 1.0, 0.1, 1.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut failures, mut violations, mut checked) = (0usize, 0usize, 0usize);
    let fine = Zoh::new(1);
    for _ in 0..50 {
        let x0 = region.sample(&mut rng);
        let bx = match reachable_box(model, &x0, dt, &model.input_box(), &cfg.reach) {
            Ok(b) => b,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        for _ in 0..1000 {
            let tau = dt * (1.0 - rng.random::<f64>());
            let h = tau / 40.0;
            let mut x = x0.clone();
            for _ in 0..40 {
                let u = if rng.random::<bool>() {
                    if rng.random::<bool>() { u_max } else { -u_max }
                } else {
                    u_max * (2.0 * rng.random::<f64>() - 1.0)
                };
                x = fine.step(model, &x, &DVector::from_element(1, u), h).unwrap();
                checked += 1;
                if !bx.contains(&x) {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        "reachable box soundness",
        failures == 0 && violations == 0,
        format!("50 states, {checked} checked points, {violations} outside, {failures} enclosure failures"),
    )
}

fn random_problem(rng: &mut ChaCha8Rng) -> FilterProblem<f64> {
    let m = rng.random_range(1..=2);
    let count = rng.random_range(0..=12);
    let u_max = DVector::from_fn(m, |_, _| 0.5 + 1.5 * rng.random::<f64>());
    let u_des = DVector::from_fn(m, |i, _| 3.0 * u_max[i] * (2.0 * rng.random::<f64>() - 1.0));
    let constraints = (0..count)
        .map(|step| AffineConstraint {
            a: DVector::from_fn(m, |_, _| normal(rng)),
            b: 0.5 + normal(rng),
            tag: ConstraintTag {
                step,
                kind: ConstraintKind::Safety,
            },
        })
        .collect();
    FilterProblem { u_des, constraints, u_max }
}

fn feasible(p: &FilterProblem<f64>, u: &DVector<f64>) -> bool {
    p.constraints.iter().all(|c| c.value(u) >= 0.0)
}

fn cost(p: &FilterProblem<f64>, u: &DVector<f64>) -> f64 {
    (u - &p.u_des).norm_squared()
}

/// Best feasible point of the grid with spacing `step` anchored at `-u_max`,
/// restricted to first coordinates within `radius` of `center`.
///
/// For two inputs each column of the grid is searched in closed form: the
/// feasible second coordinates form an interval and the cost is convex in
/// them, so the best grid point of the column is the one nearest the
/// desired value after clamping.
fn grid_level(p: &FilterProblem<f64>, step: f64, center: f64, radius: f64) -> Option<DVector<f64>> {
    let m = p.dim();
    let lo0 = -p.u_max[0];
    let first = (((center - radius) - lo0) / step).floor().max(0.0) as i64;
    let last = (((center + radius) - lo0) / step).ceil().min(2.0 * p.u_max[0] / step) as i64;
    let mut best: Option<DVector<f64>> = None;
    let keep = |u: DVector<f64>, best: &mut Option<DVector<f64>>| {
        if feasible(p, &u) && best.as_ref().is_none_or(|b| cost(p, &u) < cost(p, b)) {
            *best = Some(u);
        }
    };
    for i in first..=last {
        let u0 = (lo0 + i as f64 * step).min(p.u_max[0]);
        if m == 1 {
            keep(DVector::from_element(1, u0), &mut best);
            continue;
        }
        let (mut lo, mut hi) = (-p.u_max[1], p.u_max[1]);
        let mut empty = false;
        for c in &p.constraints {
            let rest = c.a[0] * u0 + c.b;
            if c.a[1] > 0.0 {
                lo = lo.max(-rest / c.a[1]);
            } else if c.a[1] < 0.0 {
                hi = hi.min(-rest / c.a[1]);
            } else if rest < 0.0 {
                empty = true;
            }
        }
        if empty || lo > hi {
            continue;
        }
        let lo1 = -p.u_max[1];
        let k_lo = ((lo - lo1) / step).ceil();
        let k_hi = ((hi - lo1) / step).floor();
        if k_lo > k_hi {
            continue;
        }
        let k = ((p.u_des[1] - lo1) / step).round().clamp(k_lo, k_hi);
        // rounding at the interval ends is settled by the exact feasibility check
        for kk in [k, k - 1.0, k + 1.0] {
            if kk >= k_lo && kk <= k_hi {
                keep(DVector::from_column_slice(&[u0, (lo1 + kk * step).min(p.u_max[1])]), &mut best);
            }
        }
    }
    best
}

/// Exhaustive grid at spacing 1e-3, refined three times by a factor of ten
/// around the incumbent. The window at each refinement covers every point
/// whose cost could still beat the incumbent by the previous resolution.
fn grid_oracle(p: &FilterProblem<f64>) -> Option<DVector<f64>> {
    let mut step = 1e-3;
    let mut best = grid_level(p, step, 0.0, p.u_max[0])?;
    for _ in 0..3 {
        let slope = 1.0 + 2.0 * (&best - &p.u_des).amax();
        let radius = 2.0 * (step * slope).sqrt();
        step /= 10.0;
        if let Some(b) = grid_level(p, step, best[0], radius) {
            if cost(p, &b) < cost(p, &best) {
                best = b;
            }
        }
    }
    Some(best)
}

fn qp_certification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut optimal, mut infeasible, mut uncertified, mut disagree, mut thin) = (0, 0, 0, 0, 0);
    let mut worst_gap = 0.0f64;
    for _ in 0..10_000 {
        let p = random_problem(&mut rng);
        let sol = solve_filter_qp(&p).expect("valid problem");
        let oracle = grid_oracle(&p);
        match &sol.status {
            QpStatus::Optimal { multipliers } => {
                if !kkt_report(&p, &sol.u, multipliers).passes() {
                    uncertified += 1;
                }
                optimal += 1;
                match oracle {
                    Some(g) => {
                        let gap = (&g - &sol.u).amax();
                        worst_gap = worst_gap.max(gap);
                        if gap > 2e-3 || cost(&p, &sol.u) > cost(&p, &g) + 1e-9 {
                            disagree += 1;
                        }
                    }
                    None => thin += 1,
                }
            }
            QpStatus::Infeasible { certificate } => {
                if !certifies_infeasibility(&p, certificate) {
                    uncertified += 1;
                }
                infeasible += 1;
                if oracle.is_some() {
                    disagree += 1;
                }
            }
        }
    }
    outcome(
        "QP certification and grid oracle",
        uncertified == 0 && disagree == 0,
        format!(
            "{optimal} optimal, {infeasible} infeasible, {uncertified} uncertified, {disagree} oracle disagreements \
             (worst gap {worst_gap:.1e}), {thin} feasible sets missed by the grid"
        ),
    )
}

/// Near-uniform points of the unit 3-sphere modulo `±`, in Hopf coordinates.
fn sphere_grid(target: usize) -> Vec<DVector<f64>> {
    let pi = std::f64::consts::PI;
    let mut delta = (pi * pi / target as f64).cbrt();
    loop {
        let mut pts = Vec::new();
        let levels = ((pi / 2.0) / delta).ceil() as usize;
        for i in 0..levels {
            let eta = (i as f64 + 0.5) * (pi / 2.0) / levels as f64;
            // ξ₁ over half a turn covers the sphere modulo the antipodal map.
            let n1 = ((pi * eta.cos()) / delta).ceil().max(1.0) as usize;
            let n2 = ((2.0 * pi * eta.sin()) / delta).ceil().max(1.0) as usize;
            for a in 0..n1 {
                let x1 = (a as f64 + 0.5) * pi / n1 as f64;
                for b in 0..n2 {
                    let x2 = (b as f64 + 0.5) * 2.0 * pi / n2 as f64;
                    pts.push(DVector::from_column_slice(&[
                        eta.cos() * x1.cos(),
                        eta.cos() * x1.sin(),
                        eta.sin() * x2.cos(),
                        eta.sin() * x2.sin(),
                    ]));
                }
            }
        }
        if pts.len() <= target {
            return pts;
        }
        delta *= 1.01;
    }
}

fn gain_certificate() -> Outcome {
    let (cfg, sys) = shipped();
    let cert: &GainCertificate = &sys.certificate;
    let segway = &sys.model.inner;
    let u_max = segway.input_bound();
    let bx = IntervalBox::from_center_radius(&DVector::zeros(4), &DVector::from_column_slice(&cfg.synthesis.half_widths));
    let family = linearize_at_vertices(segway, &bx).unwrap();
    let max_margin = verify_decrease(cert, &family).into_iter().fold(f64::MIN, f64::max);

    // max |Kx| over {xᵀPx ≤ 1} equals u_max / ρ(K, P, u_max).
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sphere = sphere_grid(100_000);
    let (mut above, mut short) = (0, 0);
    let mut worst_ratio = f64::INFINITY;
    for _ in 0..100 {
        let q = DMatrix::from_fn(4, 4, |_, _| normal(&mut rng));
        let p = &q * q.transpose() + DMatrix::identity(4, 4) * 0.1;
        let k = DMatrix::from_fn(1, 4, |_, _| normal(&mut rng) * 10.0);
        let bound = u_max[0] / availability_radius(&k, &p, &u_max).unwrap();
        let lt = p.clone().cholesky().unwrap().l().transpose();
        let best = sphere
            .iter()
            .map(|z| (&k * lt.solve_upper_triangular(z).unwrap())[(0, 0)].abs())
            .fold(0.0, f64::max);
        if best > bound * (1.0 + 1e-12) {
            above += 1;
        }
        if best < 0.999 * bound {
            short += 1;
        }
        worst_ratio = worst_ratio.min(best / bound);
    }

    // S_B inside the safe set and the availability set, and invariant under the backup.
    let level = sys.backup_level;
    let mut outside = 0;
    let mut escaped = 0;
    let flow = BackupFlow {
        model: &sys.model,
        backup: &sys.backup,
        zoh: Zoh::new(cfg.backup.substeps),
        sensitivity: cfg.sensitivity,
    };
    for s in 0..1000 {
        let mut x = ellipsoid_sample(&mut rng, &cert.p, level);
        if s % 4 == 0 {
            // boundary points
            x *= (level / quad(&cert.p, &x)).sqrt();
        }
        if sys.spec.h(&x) < 0.0 || (&cert.k * &x).amax() > u_max[0] {
            outside += 1;
        }
        let states = flow.states(&x, 0.025, 120).unwrap();
        if states.iter().any(|y| quad(&cert.p, y) > level * (1.0 + 1e-9)) {
            escaped += 1;
        }
    }
    let pass = max_margin <= 1e-9
        && above == 0
        && short == 0
        && cert.rho > 0.0
        && level <= cert.rho * cert.rho
        && outside == 0
        && escaped == 0;
    outcome(
        "gain certificate",
        pass,
        format!(
            "max margin {max_margin:.3e}, identity: {above} above bound, {short} below 0.999 (worst ratio {worst_ratio:.5}), \
             rho {:.4}, level {level:.5}, {outside} of 1000 S_B samples outside, {escaped} escaped under backup",
            cert.rho
        ),
    )
}

fn delay_bookkeeping() -> Outcome {
    let (cfg, sys) = shipped();
    let dt = 0.01;
    let (n, residual) = delay_steps(0.03, dt);
    let flow = BackupFlow {
        model: &sys.model,
        backup: &sys.backup,
        zoh: Zoh::new(cfg.backup.substeps),
        sensitivity: cfg.sensitivity,
    };
    let zoh = flow.zoh;
    let mut filter = SafetyFilter::new(
        flow,
        &sys.spec,
        FilterConfig {
            mode: ConstraintMode::Robust,
            points: cfg.safety.points,
            reach: cfg.reach,
            ..FilterConfig::default()
        },
    );
    let mut buffer = InputBuffer::new(n, 1);
    let zero = IntervalBox::point(&DVector::zeros(4));
    let margin = DVector::zeros(4);
    let mut x = DVector::from_column_slice(&cfg.scenario.initial_state);
    let steps = (20.0 / dt) as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut predicted = Vec::with_capacity(steps);
    let mut fallbacks = 0;
    for _ in 0..steps {
        states.push(x.clone());
        let u_des = desired_input(&cfg.desired, &sys.certificate.k, &x);
        let out = delayed_filter_step(&mut filter, &x, &mut buffer, &zero, &margin, &u_des, dt);
        fallbacks += out.output.diagnostics.fallback as usize;
        predicted.push(out.predicted);
        x = zoh.step(&sys.model, &x, &out.released, dt).unwrap();
    }
    states.push(x);
    let worst = (0..=steps - n)
        .map(|k| (&predicted[k] - &states[k + n]).amax())
        .fold(0.0, f64::max);
    let min_h = states.iter().map(|s| sys.spec.h(s)).fold(f64::INFINITY, f64::min);
    outcome(
        "delay prediction bookkeeping",
        n == 3 && residual == 0.0 && worst <= 1e-8,
        format!("n = {n}, worst prediction error {worst:.2e} over {steps} samples, {fallbacks} fallbacks, min h {min_h:.4}"),
    )
}

fn incremental_contraction() -> Outcome {
    let (cfg, sys) = shipped();
    let cert = &sys.certificate;
    let segway = &sys.model.inner;
    let u_max = segway.input_bound()[0];
    let half = DVector::from_column_slice(&cfg.synthesis.half_widths);
    let bx = IntervalBox::from_center_radius(&DVector::zeros(4), &half);
    let family = linearize_at_vertices(segway, &bx).unwrap();
    let avail = cert.rho * cert.rho;
    let mut rng = ChaCha8Rng::seed_from_u64(17);

    // Polytopic linear flows, exact discretization of each held interval.
    let dt = 0.01;
    let mut worst_lin = f64::NEG_INFINITY;
    let mut lin_increases = 0;
    for _ in 0..100 {
        let mut x1 = ellipsoid_sample(&mut rng, &cert.p, avail);
        let mut x2 = ellipsoid_sample(&mut rng, &cert.p, avail);
        let mut v = quad(&cert.p, &(&x1 - &x2));
        let v0 = v;
        for _ in 0..300 {
            let w: Vec<f64> = (0..family.len()).map(|_| rng.random::<f64>()).collect();
            let total: f64 = w.iter().sum();
            let a = family.a_list.iter().zip(&w).fold(DMatrix::zeros(4, 4), |acc, (a, wi)| acc + a * (*wi / total));
            let b = family.b_list.iter().zip(&w).fold(DMatrix::zeros(4, 1), |acc, (b, wi)| acc + b * (*wi / total));
            let u = u_max * (2.0 * rng.random::<f64>() - 1.0);
            let mut aug = DMatrix::zeros(5, 5);
            aug.view_mut((0, 0), (4, 4)).copy_from(&(&a + &b * &cert.k));
            aug.view_mut((0, 4), (4, 1)).copy_from(&(&b * u));
            let e = (aug * dt).exp();
            let step = |x: &DVector<f64>| e.view((0, 0), (4, 4)) * x + e.view((0, 4), (4, 1)).column(0);
            x1 = step(&x1);
            x2 = step(&x2);
            let next = quad(&cert.p, &(&x1 - &x2));
            let rise = (next - v) / v0;
            worst_lin = worst_lin.max(rise);
            if rise > 1e-12 {
                lin_increases += 1;
            }
            v = next;
        }
    }

    // Nonlinear Segway under the pre-feedback, while both copies stay in the box.
    let fine = Zoh::new(1);
    let h = 1e-3;
    let mut worst_nl = f64::NEG_INFINITY;
    let mut nl_increases = 0;
    let mut nl_steps = 0;
    let mut pairs = 0;
    while pairs < 100 {
        let x1 = ellipsoid_sample(&mut rng, &cert.p, avail);
        let x2 = ellipsoid_sample(&mut rng, &cert.p, avail);
        if !bx.contains(&x1) || !bx.contains(&x2) {
            continue;
        }
        pairs += 1;
        let (mut x1, mut x2) = (x1, x2);
        let mut v = quad(&cert.p, &(&x1 - &x2));
        let mut u = DVector::zeros(1);
        for k in 0..2000 {
            if k % 10 == 0 {
                u[0] = u_max * (2.0 * rng.random::<f64>() - 1.0);
            }
            x1 = fine.step(&sys.model, &x1, &u, h).unwrap();
            x2 = fine.step(&sys.model, &x2, &u, h).unwrap();
            if !bx.contains(&x1) || !bx.contains(&x2) {
                break;
            }
            nl_steps += 1;
            let next = quad(&cert.p, &(&x1 - &x2));
            worst_nl = worst_nl.max(next - v);
            if next - v > 1e-6 {
                nl_increases += 1;
            }
            v = next;
        }
    }
    outcome(
        "incremental contraction",
        lin_increases == 0 && nl_increases == 0,
        format!(
            "vertex-linear: {lin_increases} increases (worst relative change {worst_lin:.1e}); \
             Segway: {nl_increases} increases > 1e-6 over {nl_steps} steps (worst change {worst_nl:.1e})"
        ),
    )
}

fn noisy_robust_regression() -> Outcome {
    let (mut cfg, sys) = shipped();
    cfg.scenario.variant = Variant::Robust;
    cfg.scenario.frequency = 20.0;
    cfg.scenario.noise = true;
    let mut min_h = f64::INFINITY;
    let mut unsafe_runs = 0;
    for seed in 0..50 {
        cfg.scenario.seed = seed;
        let run = run_scenario(&cfg, &sys).expect("run");
        min_h = min_h.min(run.summary.min_h_continuous);
        if run.summary.verdict != Verdict::Safe {
            unsafe_runs += 1;
        }
    }
    outcome(
        "noisy robust 20 Hz over 50 seeds",
        min_h >= 0.0,
        format!("min h {min_h:.5}, {unsafe_runs} unsafe runs"),
    )
}

fn main() {
    let outcomes = [
        grid(),
        sensitivity(),
        robust_soundness(),
        reachability(),
        qp_certification(),
        gain_certificate(),
        delay_bookkeeping(),
        incremental_contraction(),
        noisy_robust_regression(),
    ];
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    println!("acceptance: {} of {} passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        for o in outcomes.iter().filter(|o| !o.pass) {
            eprintln!("failed {}: {}", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
