//! Dense dual active-set solver for `min ½|u - u_des|²` under affine rows and a box.
//!
//! Goldfarb–Idnani iteration with identity Hessian. Every returned point is
//! checked against the KKT conditions; infeasible problems come with a Farkas
//! certificate.

use log::debug;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::barrier::AffineConstraint;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("empty input box on axis {0}")]
    EmptyBounds(usize),
    #[error("active-set iteration did not terminate within {0} steps")]
    CycleGuard(usize),
    #[error("solution failed its KKT check: {0}")]
    Uncertified(String),
}

/// `min ½|u - u_des|²` s.t. `aᵢᵀu + bᵢ >= 0` and `|u_j| <= u_max_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterProblem<T: Scalar> {
    pub u_des: DVector<T>,
    pub constraints: Vec<AffineConstraint<T>>,
    pub u_max: DVector<T>,
}

/// Row `nᵀu + c >= 0` after the box has been appended.
#[derive(Clone, Debug)]
struct Row<T: Scalar> {
    n: DVector<T>,
    c: T,
}

impl<T: Scalar> FilterProblem<T> {
    pub fn dim(&self) -> usize {
        self.u_des.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let m = self.dim();
        if self.u_max.len() != m {
            return Err(QpError::Dimension {
                expected: m,
                found: self.u_max.len(),
            });
        }
        if let Some(c) = self.constraints.iter().find(|c| c.a.len() != m) {
            return Err(QpError::Dimension {
                expected: m,
                found: c.a.len(),
            });
        }
        if let Some(j) = (0..m).find(|&j| !(self.u_max[j] >= T::zero())) {
            return Err(QpError::EmptyBounds(j));
        }
        Ok(())
    }

    /// Constraint rows followed by the `2m` box rows (`+e_j` then `-e_j` per axis).
    fn rows(&self) -> Vec<Row<T>> {
        let m = self.dim();
        let mut rows: Vec<Row<T>> = self
            .constraints
            .iter()
            .map(|c| Row { n: c.a.clone(), c: c.b })
            .collect();
        for j in 0..m {
            for s in [T::one(), -T::one()] {
                let mut n = DVector::zeros(m);
                n[j] = s;
                rows.push(Row { n, c: self.u_max[j] });
            }
        }
        rows
    }

    /// Index of the first box row in the combined row list.
    pub fn box_offset(&self) -> usize {
        self.constraints.len()
    }

    /// Value `nᵀu + c` of every row, box rows included.
    pub fn slacks(&self, u: &DVector<T>) -> Vec<T> {
        self.rows().iter().map(|r| r.n.dot(u) + r.c).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QpStatus<T: Scalar> {
    /// `multipliers` has one entry per row, box rows last.
    Optimal { multipliers: Vec<T> },
    /// Nonnegative `y` with `Σ yᵢnᵢ = 0` and `Σ yᵢcᵢ < 0`.
    Infeasible { certificate: Vec<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T: Scalar> {
    /// Optimum, or the last iterate when infeasible.
    pub u: DVector<T>,
    pub status: QpStatus<T>,
    /// Rows active at the optimum (indices into constraints then box rows).
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl<T: Scalar> QpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        matches!(self.status, QpStatus::Optimal { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_violation: f64,
    pub min_multiplier: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn passes(&self) -> bool {
        self.stationarity < 1e-8
            && self.primal_violation < 1e-10
            && self.min_multiplier >= -1e-12
            && self.complementarity < 1e-8
    }
}

/// Residuals of the first-order conditions at `u` with the given multipliers.
pub fn kkt_report<T: Scalar>(problem: &FilterProblem<T>, u: &DVector<T>, multipliers: &[T]) -> KktReport {
    let rows = problem.rows();
    let mut grad = u - &problem.u_des;
    let mut primal = 0.0f64;
    let mut min_mult = f64::INFINITY;
    let mut comp = 0.0f64;
    for (r, l) in rows.iter().zip(multipliers) {
        grad -= &r.n * *l;
        let s = (r.n.dot(u) + r.c).to_f64_lossy();
        primal = primal.max(-s);
        let l = l.to_f64_lossy();
        min_mult = min_mult.min(l);
        comp = comp.max((l * s).abs());
    }
    KktReport {
        stationarity: grad.amax().to_f64_lossy(),
        primal_violation: primal.max(0.0),
        min_multiplier: if min_mult.is_finite() { min_mult } else { 0.0 },
        complementarity: comp,
    }
}

/// Checks a Farkas certificate: `y >= 0` and `max over the box of Σ yᵢ(nᵢᵀu + cᵢ) < 0`.
///
/// The maximum is taken over the input box, so rounding in `Σ yᵢnᵢ` cannot
/// produce a false certificate.
pub fn certifies_infeasibility<T: Scalar>(problem: &FilterProblem<T>, y: &[T]) -> bool {
    let rows = problem.rows();
    if y.len() != rows.len() || y.iter().any(|v| *v < T::zero() || !v.finite()) {
        return false;
    }
    let m = problem.dim();
    let mut normal = DVector::zeros(m);
    let mut offset = T::zero();
    for (r, yi) in rows.iter().zip(y) {
        normal += &r.n * *yi;
        offset += r.c * *yi;
    }
    let worst = (0..m).fold(offset, |acc, j| acc + normal[j].abs() * problem.u_max[j]);
    worst < T::zero()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QpSettings {
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iterations: 200 }
    }
}

/// Solves without warm start.
pub fn solve_filter_qp<T: Scalar>(problem: &FilterProblem<T>) -> Result<QpSolution<T>, QpError> {
    solve_filter_qp_warm(problem, &[], &QpSettings::default())
}

/// Solves, preferring to add violated rows from `warm` (a previous active set) first.
///
/// A result that fails its own KKT or infeasibility check (nearly dependent
/// rows) is recomputed by enumerating active sets, which is exact for the
/// small problems the filter produces.
pub fn solve_filter_qp_warm<T: Scalar>(
    problem: &FilterProblem<T>,
    warm: &[usize],
    settings: &QpSettings,
) -> Result<QpSolution<T>, QpError> {
    problem.validate()?;
    let rows = problem.rows();
    let primary = dual_active_set(problem, &rows, warm, settings);
    if let Ok(sol) = &primary {
        if is_certified(problem, sol) {
            return primary;
        }
    }
    let iterations = primary.as_ref().map_or(settings.max_iterations, |s| s.iterations);
    debug!("dual active set uncertified after {iterations} iterations, enumerating active sets");
    match enumerate_active_sets(problem, &rows).or_else(|| enumerate_certificate(problem, &rows)) {
        Some(mut sol) => {
            sol.iterations = iterations;
            Ok(sol)
        }
        None => primary,
    }
}

fn is_certified<T: Scalar>(problem: &FilterProblem<T>, sol: &QpSolution<T>) -> bool {
    match &sol.status {
        QpStatus::Optimal { multipliers } => kkt_report(problem, &sol.u, multipliers).passes(),
        QpStatus::Infeasible { certificate } => certifies_infeasibility(problem, certificate),
    }
}

/// Goldfarb–Idnani iteration.
fn dual_active_set<T: Scalar>(
    problem: &FilterProblem<T>,
    rows: &[Row<T>],
    warm: &[usize],
    settings: &QpSettings,
) -> Result<QpSolution<T>, QpError> {
    let m = problem.dim();
    let tol = T::lit(1e-13);
    let scale = |r: &Row<T>, u: &DVector<T>| T::one() + r.n.amax() * u.amax() + r.c.abs();

    let mut u = problem.u_des.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<T> = Vec::new();
    let mut iterations = 0;

    loop {
        // pick the row to add
        let violated = |i: usize, u: &DVector<T>| {
            let s = rows[i].n.dot(u) + rows[i].c;
            (s < -tol * scale(&rows[i], u)).then_some(s)
        };
        let pick = |cands: &mut dyn Iterator<Item = usize>, u: &DVector<T>| {
            cands
                .filter(|i| !active.contains(i))
                .filter_map(|i| violated(i, u).map(|s| (i, s / (T::one() + rows[i].n.norm()))))
                .fold(None, |best: Option<(usize, T)>, (i, s)| match best {
                    Some((_, bs)) if bs <= s => best,
                    _ => Some((i, s)),
                })
        };
        let chosen = pick(&mut warm.iter().copied().filter(|&i| i < rows.len()), &u)
            .or_else(|| pick(&mut (0..rows.len()), &u));
        let Some((p, _)) = chosen else {
            let mut multipliers = vec![T::zero(); rows.len()];
            for (k, &i) in active.iter().enumerate() {
                multipliers[i] = lambda[k];
            }
            let sol = QpSolution {
                u,
                status: QpStatus::Optimal { multipliers },
                active,
                iterations,
            };
            return Ok(sol);
        };
        let np = &rows[p].n;
        let mut lambda_p = T::zero();

        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                return Err(QpError::CycleGuard(settings.max_iterations));
            }
            let (z, r) = directions(rows, &active, np, m);
            let r_pos: Vec<(usize, T)> = r
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > T::lit(1e-14))
                .map(|(k, v)| (k, lambda[k] / *v))
                .collect();
            let partial = r_pos
                .iter()
                .copied()
                .fold(None, |best: Option<(usize, T)>, (k, t)| match best {
                    Some((_, bt)) if bt <= t => best,
                    _ => Some((k, t)),
                });
            let z_small = z.amax() <= T::lit(1e-10) * np.amax();
            if z_small {
                match partial {
                    None => {
                        // Farkas: y_p = 1, y_j = -r_j on the active rows
                        let mut certificate = vec![T::zero(); rows.len()];
                        certificate[p] = T::one();
                        for (k, &i) in active.iter().enumerate() {
                            certificate[i] = (-r[k]).max(T::zero());
                        }
                        return Ok(QpSolution {
                            u,
                            status: QpStatus::Infeasible { certificate },
                            active,
                            iterations,
                        });
                    }
                    Some((k, t)) => {
                        for (j, l) in lambda.iter_mut().enumerate() {
                            *l -= t * r[j];
                        }
                        lambda_p += t;
                        active.remove(k);
                        lambda.remove(k);
                        continue;
                    }
                }
            }
            let sp = np.dot(&u) + rows[p].c;
            let full = -sp / z.dot(np);
            let (t, drop) = match partial {
                Some((k, t2)) if t2 < full => (t2, Some(k)),
                _ => (full, None),
            };
            u += &z * t;
            for (j, l) in lambda.iter_mut().enumerate() {
                *l -= t * r[j];
            }
            lambda_p += t;
            match drop {
                None => {
                    active.push(p);
                    lambda.push(lambda_p);
                    break;
                }
                Some(k) => {
                    active.remove(k);
                    lambda.remove(k);
                }
            }
        }
    }
}

/// Primal direction `z = (I - N N⁺) n_p` and dual direction `r = N⁺ n_p`.
fn directions<T: Scalar>(rows: &[Row<T>], active: &[usize], np: &DVector<T>, m: usize) -> (DVector<T>, DVector<T>) {
    if active.is_empty() {
        return (np.clone(), DVector::zeros(0));
    }
    let n = DMatrix::from_fn(m, active.len(), |i, k| rows[active[k]].n[i]);
    // least squares on N itself; the normal equations square its conditioning
    let r = n
        .clone()
        .svd(true, true)
        .solve(np, T::EPS)
        .unwrap_or_else(|_| DVector::zeros(active.len()));
    let z = np - &n * &r;
    (z, r)
}

/// Subsets of `0..n` with at most `k` elements, smallest first.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k.min(n) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| l + 1);
            for i in start..n {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn subset_count(n: usize, k: usize) -> usize {
    let mut total = 1usize;
    let mut c = 1usize;
    for i in 0..k.min(n) {
        c = c.saturating_mul(n - i) / (i + 1);
        total = total.saturating_add(c);
    }
    total
}

const ENUMERATION_LIMIT: usize = 200_000;

/// Projects `u_des` onto every face spanned by at most `m` rows and keeps the
/// cheapest point that is feasible with nonnegative multipliers.
fn enumerate_active_sets<T: Scalar>(problem: &FilterProblem<T>, rows: &[Row<T>]) -> Option<QpSolution<T>> {
    let m = problem.dim();
    if subset_count(rows.len(), m) > ENUMERATION_LIMIT {
        return None;
    }
    let tol = T::EPS * T::lit(4096.0);
    let mut best: Option<(T, DVector<T>, Vec<usize>, DVector<T>)> = None;
    for set in subsets(rows.len(), m) {
        let n = DMatrix::from_fn(m, set.len(), |i, k| rows[set[k]].n[i]);
        let c = DVector::from_iterator(set.len(), set.iter().map(|&i| rows[i].c));
        let lambda = if set.is_empty() {
            DVector::zeros(0)
        } else {
            let rhs = -(n.transpose() * &problem.u_des + &c);
            match (n.transpose() * &n).lu().solve(&rhs) {
                Some(l) => l,
                None => continue,
            }
        };
        if lambda.iter().any(|l| !l.finite() || *l < -tol) {
            continue;
        }
        let u = &problem.u_des + &n * &lambda;
        let scale = |r: &Row<T>| T::one() + r.n.amax() * u.amax() + r.c.abs();
        if set.iter().any(|&i| (rows[i].n.dot(&u) + rows[i].c).abs() > tol * scale(&rows[i])) {
            continue;
        }
        if rows.iter().any(|r| r.n.dot(&u) + r.c < -tol * scale(r)) {
            continue;
        }
        let cost = (&u - &problem.u_des).norm_squared();
        if best.as_ref().is_none_or(|(bc, ..)| cost < *bc) {
            best = Some((cost, u, set, lambda));
        }
    }
    let (_, u, active, lambda) = best?;
    let mut multipliers = vec![T::zero(); rows.len()];
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = lambda[k].max(T::zero());
    }
    let sol = QpSolution {
        u,
        status: QpStatus::Optimal { multipliers },
        active,
        iterations: 0,
    };
    is_certified(problem, &sol).then_some(sol)
}

/// Minimizes `Σ yᵢbᵢ + Σⱼ u_maxⱼ |Σ yᵢaᵢⱼ|` over the simplex of constraint
/// weights by visiting the vertices of its linear pieces; a negative minimum
/// is a Farkas certificate against the box.
fn enumerate_certificate<T: Scalar>(problem: &FilterProblem<T>, rows: &[Row<T>]) -> Option<QpSolution<T>> {
    let m = problem.dim();
    let k = problem.constraints.len();
    if subset_count(k, m + 1).saturating_mul(subset_count(m, m)) > ENUMERATION_LIMIT {
        return None;
    }
    let axes = subsets(m, m);
    let value = |support: &[usize], y: &DVector<T>| {
        let mut v = T::zero();
        for (w, &i) in y.iter().zip(support) {
            v += *w * rows[i].c;
        }
        for j in 0..m {
            let s = y.iter().zip(support).fold(T::zero(), |acc, (w, &i)| acc + *w * rows[i].n[j]);
            v += s.abs() * problem.u_max[j];
        }
        v
    };
    let mut best: Option<(T, Vec<usize>, DVector<T>)> = None;
    for support in subsets(k, m + 1).into_iter().filter(|s| !s.is_empty()) {
        let size = support.len();
        for zeroed in axes.iter().filter(|a| a.len() == size - 1) {
            let mut mat = DMatrix::zeros(size, size);
            let mut rhs = DVector::zeros(size);
            for (col, &i) in support.iter().enumerate() {
                mat[(0, col)] = T::one();
                for (row, &j) in zeroed.iter().enumerate() {
                    mat[(row + 1, col)] = rows[i].n[j];
                }
            }
            rhs[0] = T::one();
            let Some(y) = mat.lu().solve(&rhs) else { continue };
            if y.iter().any(|w| !w.finite() || *w < T::zero()) {
                continue;
            }
            let v = value(&support, &y);
            if best.as_ref().is_none_or(|(bv, ..)| v < *bv) {
                best = Some((v, support.clone(), y));
            }
        }
    }
    let (v, support, y) = best?;
    if v >= T::zero() {
        return None;
    }
    let mut certificate = vec![T::zero(); rows.len()];
    for (w, &i) in y.iter().zip(&support) {
        certificate[i] = *w;
    }
    let sol = QpSolution {
        u: problem.u_des.clone(),
        status: QpStatus::Infeasible { certificate },
        active: Vec::new(),
        iterations: 0,
    };
    is_certified(problem, &sol).then_some(sol)
}

/// Solves and verifies; an uncertified result is an error.
pub fn solve_certified<T: Scalar>(
    problem: &FilterProblem<T>,
    warm: &[usize],
    settings: &QpSettings,
) -> Result<QpSolution<T>, QpError> {
    let sol = solve_filter_qp_warm(problem, warm, settings)?;
    match &sol.status {
        QpStatus::Optimal { multipliers } => {
            let rep = kkt_report(problem, &sol.u, multipliers);
            if !rep.passes() {
                return Err(QpError::Uncertified(format!("{rep:?}")));
            }
        }
        QpStatus::Infeasible { certificate } => {
            if !certifies_infeasibility(problem, certificate) {
                return Err(QpError::Uncertified("invalid infeasibility certificate".into()));
            }
        }
    }
    Ok(sol)
}
