//! Pre-feedback gain search on a polytope of linearizations.
//!
//! The deliverable is a [`GainCertificate`]: a gain `K` and a Lyapunov matrix
//! `P` such that `P(Aᵢ + BᵢK) + (Aᵢ + BᵢK)ᵀP ⪯ 0` at every vertex. The
//! search seeds from LQR on the averaged model and, when some vertex fails,
//! runs eigenvalue subgradient steps on `P`. Whatever the path, the result is
//! re-checked by [`verify_decrease`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ControlAffine;
use crate::setops::IntervalBox;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no feasible gain; best worst-vertex margin {worst_margin:.3e} at vertex {vertex}")]
    Infeasible { worst_margin: f64, vertex: usize },
    #[error("non-finite linearization at vertex {0}")]
    NonFinite(usize),
    #[error("empty vertex family")]
    Empty,
    #[error("Lyapunov matrix is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexFamily {
    pub a_list: Vec<DMatrix<f64>>,
    pub b_list: Vec<DMatrix<f64>>,
    /// State each `(A, B)` pair was linearized at.
    pub points: Vec<DVector<f64>>,
}

impl VertexFamily {
    pub fn len(&self) -> usize {
        self.a_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_list.is_empty()
    }

    pub fn from_pairs(pairs: Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Self {
        let n = pairs.first().map_or(0, |p| p.0.nrows());
        let points = vec![DVector::zeros(n); pairs.len()];
        let (a_list, b_list) = pairs.into_iter().unzip();
        Self {
            a_list,
            b_list,
            points,
        }
    }

    fn check(&self) -> Result<(usize, usize), SynthesisError> {
        let a0 = self.a_list.first().ok_or(SynthesisError::Empty)?;
        let n = a0.nrows();
        let m = self.b_list.first().map_or(0, |b| b.ncols());
        for (a, b) in self.a_list.iter().zip(&self.b_list) {
            if a.shape() != (n, n) || b.shape() != (n, m) {
                return Err(SynthesisError::Dimension(format!(
                    "vertex pair shapes {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok((n, m))
    }
}

/// Finite-difference linearization at every corner of `x_box` and at its
/// center, deduplicated.
///
/// The center is included because the Jacobian of a model that is even in
/// some coordinate takes the same value at mirrored corners, so the corners
/// alone would not span the linearization at the middle of the box.
pub fn linearize_at_vertices<M: ControlAffine<f64> + ?Sized>(
    model: &M,
    x_box: &IntervalBox<f64>,
) -> Result<VertexFamily, SynthesisError> {
    let n = model.state_dim();
    let mut fam = VertexFamily {
        a_list: Vec::new(),
        b_list: Vec::new(),
        points: Vec::new(),
    };
    for (idx, v) in x_box.vertices().chain(std::iter::once(x_box.midpoint())).enumerate() {
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + v[j].abs());
            let mut xp = v.clone();
            let mut xm = v.clone();
            xp[j] += h;
            xm[j] -= h;
            a.set_column(j, &((model.drift(&xp) - model.drift(&xm)) / (2.0 * h)));
        }
        let b = model.input_matrix(&v);
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(SynthesisError::NonFinite(idx));
        }
        let dup = fam
            .a_list
            .iter()
            .zip(&fam.b_list)
            .any(|(a2, b2)| (&a - a2).amax() < 1e-9 && (&b - b2).amax() < 1e-9);
        if !dup {
            fam.a_list.push(a);
            fam.b_list.push(b);
            fam.points.push(v);
        }
    }
    Ok(fam)
}

/// Gain, Lyapunov matrix and the checks that back them.
#[derive(Clone, Debug, PartialEq)]
pub struct GainCertificate {
    /// `m x n`; the pre-feedback is `u_total = u + K x`.
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Largest eigenvalue of `P(Aᵢ + BᵢK) + (Aᵢ + BᵢK)ᵀP` per vertex.
    pub margins: Vec<f64>,
    pub rho: f64,
}

/// Serialized layout: matrices row-major with explicit shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub n: usize,
    pub m: usize,
    pub k: Vec<f64>,
    pub p: Vec<f64>,
    pub margins: Vec<f64>,
    /// `null` when the gain is zero (unbounded radius).
    pub rho: Option<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl GainCertificate {
    pub fn to_file(&self) -> CertificateFile {
        CertificateFile {
            n: self.p.nrows(),
            m: self.k.nrows(),
            k: row_major(&self.k),
            p: row_major(&self.p),
            margins: self.margins.clone(),
            rho: self.rho.is_finite().then_some(self.rho),
        }
    }

    pub fn from_file(f: &CertificateFile) -> Result<Self, SynthesisError> {
        if f.k.len() != f.m * f.n || f.p.len() != f.n * f.n {
            return Err(SynthesisError::Dimension("certificate matrix sizes".into()));
        }
        Ok(Self {
            k: DMatrix::from_row_slice(f.m, f.n, &f.k),
            p: DMatrix::from_row_slice(f.n, f.n, &f.p),
            margins: f.margins.clone(),
            rho: f.rho.unwrap_or(f64::INFINITY),
        })
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let sym = (&self.p - self.p.transpose()).amax() <= 1e-12 * (1.0 + self.p.amax());
        let pd = SymmetricEigen::new(self.p.clone()).eigenvalues.min() > 0.0;
        sym && pd && self.margins.iter().all(|m| *m <= tol)
    }
}

/// `min_i u_max_i / sqrt(K_i P⁻¹ K_iᵀ)`; `+∞` for a zero gain.
pub fn availability_radius(k: &DMatrix<f64>, p: &DMatrix<f64>, u_max: &DVector<f64>) -> Result<f64, SynthesisError> {
    let pinv = p.clone().try_inverse().ok_or(SynthesisError::Singular)?;
    let mut rho = f64::INFINITY;
    for i in 0..k.nrows() {
        let row = k.row(i);
        let q = (row * &pinv * row.transpose())[(0, 0)];
        if q > 0.0 {
            rho = rho.min(u_max[i] / q.sqrt());
        }
    }
    Ok(rho)
}

/// Largest eigenvalue of `P Acl + Aclᵀ P` at every vertex.
pub fn verify_decrease(cert: &GainCertificate, family: &VertexFamily) -> Vec<f64> {
    decrease_margins(&cert.k, &cert.p, family, 0.0)
}

fn decrease_margins(k: &DMatrix<f64>, p: &DMatrix<f64>, family: &VertexFamily, gamma: f64) -> Vec<f64> {
    family
        .a_list
        .iter()
        .zip(&family.b_list)
        .map(|(a, b)| {
            let acl = a + b * k;
            let m = p * &acl + acl.transpose() * p + p * (2.0 * gamma);
            SymmetricEigen::new(symmetrize(&m)).eigenvalues.max()
        })
        .collect()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `Aᵀ P + P A = -Q` by vectorization.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = id.kronecker(&at) + at.kronecker(&id);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let sol = op.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Stabilizing solution of `AᵀP + PA - PBR⁻¹BᵀP + Q = 0` via the matrix sign function.
pub fn care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let rinv = r.clone().try_inverse()?;
    let g = b * rinv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut z = h;
    for _ in 0..100 {
        let det = z.determinant().abs();
        if !(det.is_finite() && det > 0.0) {
            return None;
        }
        let c = det.powf(-1.0 / (2.0 * n as f64));
        let zinv = z.clone().try_inverse()?;
        let next = (&z * c + zinv / c) * 0.5;
        let diff = (&next - &z).amax() / (1.0 + next.amax());
        z = next;
        if diff < 1e-13 {
            break;
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + &id));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let normal = lhs.transpose() * &lhs;
    let p = normal.cholesky()?.solve(&(lhs.transpose() * rhs));
    let p = symmetrize(&p);
    p.iter().all(|v| v.is_finite()).then_some(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    /// Diagonal LQR state weight for the seed.
    pub state_weights: Vec<f64>,
    /// Input weights tried in turn; the feasible candidate with largest radius wins.
    pub input_weights: Vec<f64>,
    /// Decay margin required during the search.
    pub gamma: f64,
    pub max_iter: usize,
    pub step: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            state_weights: Vec::new(),
            input_weights: vec![0.01, 0.1, 1.0],
            gamma: 1e-3,
            max_iter: 2000,
            step: 0.05,
        }
    }
}

/// Searches a certified pre-feedback gain for `family` under the input bound `u_max`.
pub fn synthesize_gain(
    family: &VertexFamily,
    u_max: &DVector<f64>,
    cfg: &SynthesisConfig,
) -> Result<GainCertificate, SynthesisError> {
    let (n, m) = family.check()?;
    let count = family.len() as f64;
    let a_avg = family.a_list.iter().fold(DMatrix::zeros(n, n), |acc, a| acc + a) / count;
    let b_avg = family.b_list.iter().fold(DMatrix::zeros(n, m), |acc, b| acc + b) / count;
    let q = if cfg.state_weights.len() == n {
        DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.state_weights))
    } else {
        DMatrix::identity(n, n)
    };

    let mut candidates: Vec<DMatrix<f64>> = vec![DMatrix::zeros(m, n)];
    if b_avg.amax() > 0.0 {
        for &w in &cfg.input_weights {
            let r = DMatrix::identity(m, m) * w;
            if let Some(p) = care(&a_avg, &b_avg, &q, &r) {
                candidates.push(-(b_avg.transpose() * &p) / w);
            }
        }
    }

    let mut best: Option<GainCertificate> = None;
    let mut worst_seen = (f64::INFINITY, 0usize);
    for k in candidates {
        let Some(p) = common_lyapunov(&k, family, cfg) else {
            let (margin, vertex) = worst_vertex(&k, family);
            if margin < worst_seen.0 {
                worst_seen = (margin, vertex);
            }
            continue;
        };
        let margins = decrease_margins(&k, &p, family, 0.0);
        let rho = availability_radius(&k, &p, u_max)?;
        let cert = GainCertificate { k, p, margins, rho };
        if cert.is_valid(0.0) && best.as_ref().is_none_or(|b| cert.rho > b.rho) {
            best = Some(cert);
        }
    }
    best.ok_or(SynthesisError::Infeasible {
        worst_margin: worst_seen.0,
        vertex: worst_seen.1,
    })
}

/// Worst spectral abscissa over the vertex closed loops, for error reporting.
fn worst_vertex(k: &DMatrix<f64>, family: &VertexFamily) -> (f64, usize) {
    family
        .a_list
        .iter()
        .zip(&family.b_list)
        .enumerate()
        .map(|(i, (a, b))| {
            let re = (a + b * k).complex_eigenvalues().iter().map(|e| e.re).fold(f64::MIN, f64::max);
            (re, i)
        })
        .fold((f64::MIN, 0), |acc, v| if v.0 > acc.0 { v } else { acc })
}

/// Finds `P ≻ 0` with every vertex margin (including `2γP`) negative, for fixed `K`.
fn common_lyapunov(k: &DMatrix<f64>, family: &VertexFamily, cfg: &SynthesisConfig) -> Option<DMatrix<f64>> {
    let n = k.ncols();
    let acl: Vec<DMatrix<f64>> = family.a_list.iter().zip(&family.b_list).map(|(a, b)| a + b * k).collect();
    let avg = acl.iter().fold(DMatrix::zeros(n, n), |acc, a| acc + a) / acl.len() as f64;
    // seeds: Lyapunov solutions of the average and of each vertex
    let mut seeds: Vec<DMatrix<f64>> = Vec::new();
    seeds.extend(lyapunov(&avg, &DMatrix::identity(n, n)));
    seeds.extend(acl.iter().filter_map(|a| lyapunov(a, &DMatrix::identity(n, n))));
    let feasible = |p: &DMatrix<f64>| {
        SymmetricEigen::new(p.clone()).eigenvalues.min() > 0.0
            && decrease_margins(k, p, family, cfg.gamma).iter().all(|m| *m < 0.0)
    };
    for seed in seeds {
        if !seed.iter().all(|v| v.is_finite()) {
            continue;
        }
        if feasible(&seed) {
            return Some(normalize(&seed));
        }
        if let Some(p) = subgradient(&acl, &seed, cfg) {
            if feasible(&p) {
                return Some(p);
            }
        }
    }
    None
}

fn normalize(p: &DMatrix<f64>) -> DMatrix<f64> {
    let t = p.trace();
    if t > 0.0 {
        p * (p.nrows() as f64 / t)
    } else {
        p.clone()
    }
}

/// Minimizes `max_i λmax(P Aᵢ + AᵢᵀP + 2γP)` over `{P ⪰ εI, tr P = n}`.
fn subgradient(acl: &[DMatrix<f64>], seed: &DMatrix<f64>, cfg: &SynthesisConfig) -> Option<DMatrix<f64>> {
    let n = seed.nrows();
    let project = |p: &DMatrix<f64>| {
        let eig = SymmetricEigen::new(symmetrize(p));
        let clamped = eig.eigenvalues.map(|v| v.max(1e-3));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        normalize(&symmetrize(&rebuilt))
    };
    let mut p = project(seed);
    let mut best = (f64::INFINITY, p.clone());
    for it in 0..cfg.max_iter {
        let mut worst = (f64::MIN, 0usize, DVector::zeros(n));
        for (i, a) in acl.iter().enumerate() {
            let mm = &p * a + a.transpose() * &p + &p * (2.0 * cfg.gamma);
            let eig = SymmetricEigen::new(symmetrize(&mm));
            let (j, v) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (j, v)| if *v > acc.1 { (j, *v) } else { acc });
            if v > worst.0 {
                worst = (v, i, eig.eigenvectors.column(j).into_owned());
            }
        }
        if worst.0 < best.0 {
            best = (worst.0, p.clone());
        }
        if worst.0 < 0.0 {
            return Some(p);
        }
        let a = &acl[worst.1];
        let v = &worst.2;
        let vvt = v * v.transpose();
        let g = a * &vvt + &vvt * a.transpose() + &vvt * (2.0 * cfg.gamma);
        let gn = g.norm().max(1e-12);
        let eta = cfg.step / (1.0 + it as f64).sqrt();
        p = project(&(&p - g * (eta / gn)));
    }
    (best.0 < 0.0).then_some(best.1)
}
