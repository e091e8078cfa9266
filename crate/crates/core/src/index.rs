//! Conley-Zehnder-Long index pairs of periodic orbits, their iterates, and
//! the mean index.
//!
//! ι is the spectral flow of the graph of the (rotation-perturbed) path
//! through the diagonal: the eigen-angles of W_Δ⁻¹·W(t), where W is the
//! Souriau map of a Lagrangian subspace, are followed sample to sample and
//! their passages through angle 0 are counted with sign. The start, where
//! the graph equals the diagonal, contributes half the signs of the first
//! step.
//!
//! ῑ is the total change of arg ρ(Γ(t)) divided by π, where ρ is the
//! rotation function of Salamon and Zehnder. ρ is continuous and satisfies
//! ρ(Mᵏ) = ρ(M)ᵏ, so this lift is exactly homogeneous under iteration and
//! equals lim ι(γⁿ)/n.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::broken::{hessian_inertia, CriticalPointReport};
use crate::error::{Error, Result};
use crate::flow::{integrate_linearized, integrate_with_variation, standard_j, SymplecticPath};
use crate::lagrangian::LagrangianSpec;

type C64 = Complex<f64>;

/// Perturbation sizes tried in turn until ι repeats.
const EPSILONS: [f64; 3] = [1e-3, 1e-4, 1e-5];
/// Largest eigen-angle move between samples before a crossing is ambiguous.
const MAX_STEP: f64 = 0.5;
/// ῑ comes from an integrated path, so the margin of γⁿ carries n times its error.
const MARGIN_TOL: f64 = 1e-8;

fn margin_ok(n: usize, (a, b): (f64, f64)) -> bool {
    let tol = MARGIN_TOL * n as f64;
    a >= -tol && b >= -tol
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexPair {
    pub iota: i64,
    pub nu: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationProfile {
    pub base_pair: IndexPair,
    pub pairs: BTreeMap<usize, IndexPair>,
    pub mean_index: f64,
    /// Per n: (ι(γⁿ) − nῑ + N, nῑ + N − ι(γⁿ) − ν(γⁿ)); both must be ≥ 0.
    pub inequality_margins: BTreeMap<usize, (f64, f64)>,
}

impl IterationProfile {
    pub fn holds(&self) -> bool {
        self.inequality_margins.iter().all(|(&n, &m)| margin_ok(n, m))
    }

    pub fn to_report(&self) -> IndexReport {
        IndexReport {
            iota: self.base_pair.iota,
            nu: self.base_pair.nu,
            mean_index: self.mean_index,
            per_n: self.pairs.clone(),
            margins: self.inequality_margins.clone(),
        }
    }
}

/// JSON shape of an index report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexReport {
    pub iota: i64,
    pub nu: usize,
    pub mean_index: f64,
    pub per_n: BTreeMap<usize, IndexPair>,
    pub margins: BTreeMap<usize, (f64, f64)>,
}

/// e^{−θJ} = cos θ·I − sin θ·J.
fn negative_rotation(n: usize, theta: f64) -> DMatrix<f64> {
    DMatrix::identity(2 * n, 2 * n) * theta.cos() - standard_j(n) * theta.sin()
}

/// Unitary U = A + iB of an orthonormal frame of span [x; y] ⊂ (R^{2N}, −ω) ⊕ (R^{2N}, ω),
/// in the symplectic coordinates Q = (x_q, y_q), P = (−x_p, y_p).
fn souriau(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<C64> {
    let m = x.nrows();
    let n = m / 2;
    let mut z = DMatrix::zeros(2 * m, m);
    z.view_mut((0, 0), (m, m)).copy_from(x);
    z.view_mut((m, 0), (m, m)).copy_from(y);
    let q = z.qr().q();
    let mut u = DMatrix::from_element(m, m, C64::new(0.0, 0.0));
    for c in 0..m {
        for r in 0..n {
            u[(r, c)] = C64::new(q[(r, c)], -q[(n + r, c)]);
            u[(n + r, c)] = C64::new(q[(m + r, c)], q[(m + n + r, c)]);
        }
    }
    &u * u.transpose()
}

fn eigen_angles(m: &DMatrix<C64>) -> Result<Vec<f64>> {
    let eig = m.clone().schur().eigenvalues().ok_or(Error::Singular("complex Schur form"))?;
    let mut a: Vec<f64> = eig.iter().map(|z| z.arg()).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(a)
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Sampled Lagrangian path t ↦ span[x(t); y(t)], starting on the diagonal.
struct GraphPath {
    times: Vec<f64>,
    frames: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Orientation making a positive-definite Hamiltonian generate positive crossings.
const ORIENTATION: f64 = -1.0;

/// Spectral flow through angle 0 along the path; the start counts half.
fn spectral_flow(path: &GraphPath) -> Result<i64> {
    let m = path.frames[0].0.nrows();
    let eye = DMatrix::<f64>::identity(m, m);
    let w_delta_inv = souriau(&eye, &eye).map(|z| z.conj());
    let mut prev: Option<Vec<f64>> = None;
    let mut twice = 0i64;
    for (i, (x, y)) in path.frames.iter().enumerate() {
        let angles = eigen_angles(&(&w_delta_inv * souriau(x, y)))?;
        if let Some(p) = &prev {
            // Cyclic shift of the sorted lists that minimizes the total move.
            let k = angles.len();
            let (shift, _) = (0..k)
                .map(|s| (s, (0..k).map(|j| circle_dist(p[j], angles[(j + s) % k])).sum::<f64>()))
                .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
            for j in 0..k {
                let (a, b) = (p[j], angles[(j + shift) % k]);
                let step = wrap(b - a);
                if step.abs() > MAX_STEP {
                    return Err(Error::CrossingCluster { t: path.times[i] });
                }
                if i == 1 {
                    // Leaving the diagonal: each angle contributes half its direction.
                    twice += step.signum() as i64;
                    continue;
                }
                let end = a + step;
                if a.abs() < PI / 2.0 {
                    if a < 0.0 && end > 0.0 {
                        twice += 2;
                    } else if a > 0.0 && end < 0.0 {
                        twice -= 2;
                    }
                }
            }
        }
        prev = Some(angles);
    }
    let signed = ORIENTATION as i64 * twice;
    if signed % 2 != 0 {
        return Err(Error::CrossingCluster { t: *path.times.last().unwrap() });
    }
    Ok(signed / 2)
}

/// dim ker(M − I) by a singular-value threshold.
fn nullity_at_one(m: &DMatrix<f64>) -> usize {
    let d = m - DMatrix::identity(m.nrows(), m.ncols());
    let tol = 1e-6 * m.amax().max(1.0);
    d.svd(false, false).singular_values.iter().filter(|&&s| s < tol).count()
}

/// Σ over n-th roots of unity ω of dim_C ker(M − ω·I).
fn nullity_of_power(m: &DMatrix<f64>, n: usize) -> usize {
    let size = m.nrows();
    let mc = m.map(|x| C64::new(x, 0.0));
    let tol = 1e-6 * m.amax().max(1.0);
    (0..n)
        .map(|k| {
            let w = C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
            let d = &mc - DMatrix::<C64>::identity(size, size) * w;
            d.svd(false, false).singular_values.iter().filter(|&&s| s < tol).count()
        })
        .sum()
}

/// Graph path of e^{−(ε t/T)J}·Γ(s)·M^j over j = 0..n, with the frames of
/// Graph(M^j) kept orthonormal so hyperbolic growth does not overflow.
fn iterated_graph_path(path: &SymplecticPath, n: usize, eps: f64) -> GraphPath {
    let dim = path.dim;
    let half = dim / 2;
    let t_start = path.samples[0].0;
    let tau = path.duration();
    let total = tau * n as f64;
    let monodromy = path.endpoint();
    let mut x = DMatrix::<f64>::identity(dim, dim);
    let mut y = DMatrix::<f64>::identity(dim, dim);
    let mut times = Vec::new();
    let mut frames = Vec::new();
    for j in 0..n {
        for (i, (t, g)) in path.samples.iter().enumerate() {
            if j > 0 && i == 0 {
                continue;
            }
            let s = (t - t_start) + tau * j as f64;
            let r = negative_rotation(half, eps * s / total);
            times.push(s);
            frames.push((x.clone(), r * g * &y));
        }
        // Re-orthonormalize the frame of Graph(M^{j+1}).
        let y_next = monodromy * &y;
        let mut z = DMatrix::zeros(2 * dim, dim);
        z.view_mut((0, 0), (dim, dim)).copy_from(&x);
        z.view_mut((dim, 0), (dim, dim)).copy_from(&y_next);
        let q = z.qr().q();
        x = q.rows(0, dim).into_owned();
        y = q.rows(dim, dim).into_owned();
    }
    GraphPath { times, frames }
}

fn iterated_index(path: &SymplecticPath, n: usize) -> Result<IndexPair> {
    let nu = nullity_of_power(path.endpoint(), n);
    let mut last: Option<i64> = None;
    for eps in EPSILONS {
        let iota = spectral_flow(&iterated_graph_path(path, n, eps))?;
        if last == Some(iota) {
            return Ok(IndexPair { iota, nu });
        }
        last = Some(iota);
    }
    Err(Error::NoConvergence { what: "index under vanishing perturbation", iterations: EPSILONS.len(), residual: f64::NAN })
}

/// (ι, ν) of a symplectic path starting at the identity.
pub fn cz_index(path: &SymplecticPath) -> Result<IndexPair> {
    let mut pair = iterated_index(path, 1)?;
    pair.nu = nullity_at_one(path.endpoint());
    Ok(pair)
}

/// Linearized flow along the glued critical loop, resampled until the
/// crossing analysis resolves.
fn orbit_path(spec: &LagrangianSpec, report: &CriticalPointReport) -> Result<SymplecticPath> {
    let traj = report.loop_.glued_trajectory();
    let base = integrate_linearized(spec, &traj)?;
    if cz_index(&base).is_ok() {
        return Ok(base);
    }
    let steps = traj.samples.len() - 1;
    let mut last_err = None;
    for factor in [2, 4, 8] {
        let (_, path) = integrate_with_variation(spec, &traj.samples[0].1, traj.t0, traj.t1, steps * factor)?;
        match cz_index(&path) {
            Ok(_) => return Ok(path),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// ι and ν of the orbit of a critical loop, cross-checked against its Hessian inertia.
pub fn index_of_orbit(spec: &LagrangianSpec, report: &CriticalPointReport) -> Result<IndexPair> {
    let path = orbit_path(spec, report)?;
    let pair = cz_index(&path)?;
    if pair.iota != report.morse_index as i64 || pair.nu != report.nullity {
        return Err(Error::IndexMismatch {
            cz_iota: pair.iota,
            cz_nu: pair.nu,
            morse: report.morse_index,
            nullity: report.nullity,
        });
    }
    Ok(pair)
}

/// ρ(M): the product of the elliptic eigenvalues of positive Krein sign,
/// times (−1)^{m/2} for the m eigenvalues on the negative real axis.
fn rotation_function(m: &DMatrix<f64>) -> Result<C64> {
    let size = m.nrows();
    let j = standard_j(size / 2).map(|x| C64::new(x, 0.0));
    let mc = m.map(|x| C64::new(x, 0.0));
    let eig = m.complex_eigenvalues();
    let mut rho = C64::new(1.0, 0.0);
    let mut negative = 0;
    for lambda in eig.iter() {
        if lambda.im.abs() < 1e-9 {
            if lambda.re < 0.0 {
                negative += 1;
            }
            continue;
        }
        if (lambda.norm() - 1.0).abs() > 1e-7 {
            continue;
        }
        let d = &mc - DMatrix::<C64>::identity(size, size) * *lambda;
        let svd = d.svd(false, true);
        let v_t = svd.v_t.ok_or(Error::Singular("eigenvector"))?;
        let (i, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &x)| if x < b.1 { (i, x) } else { b });
        let z = v_t.row(i).adjoint();
        let krein = (z.adjoint() * &j * &z)[(0, 0)].im;
        if ORIENTATION * krein < 0.0 {
            rho *= lambda / lambda.norm();
        }
    }
    if negative % 2 != 0 {
        return Err(Error::Singular("odd count of negative real eigenvalues"));
    }
    if (negative / 2) % 2 == 1 {
        rho = -rho;
    }
    Ok(rho)
}

/// ῑ = (arg ρ(Γ(T)) − arg ρ(I))/π along the sampled path.
pub fn rotation_mean_index(path: &SymplecticPath) -> Result<f64> {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for (t, g) in &path.samples {
        let a = rotation_function(g)?.arg();
        if let Some(p) = prev {
            let step = wrap(a - p);
            if step.abs() > MAX_STEP {
                return Err(Error::CrossingCluster { t: *t });
            }
            total += step;
        }
        prev = Some(a);
    }
    Ok(total / PI)
}

/// Index pairs of the iterates γⁿ for n in `n_list`, the mean index and the
/// iteration-inequality margins.
///
/// ῑ comes from [`rotation_mean_index`] and is checked against the
/// Richardson extrapolation 2s(m)/m − s(m/2)/(m/2) of s(n) = ι(γⁿ) + ν(γⁿ)/2
/// at the largest even m in the list (or its double). Since
/// |s(n) − nῑ| ≤ N, the two must agree within 4N/m.
pub fn iteration_profile(spec: &LagrangianSpec, report: &CriticalPointReport, n_list: &[usize]) -> Result<IterationProfile> {
    let path = orbit_path(spec, report)?;
    profile_of_path(&path, n_list)
}

pub fn profile_of_path(path: &SymplecticPath, n_list: &[usize]) -> Result<IterationProfile> {
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidParams("n_list must be non-empty with positive entries".into()));
    }
    let half_dim = (path.dim / 2) as f64;
    let mut pairs = BTreeMap::new();
    for &n in n_list {
        pairs.insert(n, iterated_index(path, n)?);
    }
    let n_max = *n_list.iter().max().unwrap();
    let m = if n_max % 2 == 0 { n_max } else { 2 * n_max };
    for n in [m, m / 2] {
        if let std::collections::btree_map::Entry::Vacant(e) = pairs.entry(n) {
            e.insert(iterated_index(path, n)?);
        }
    }
    let s = |n: usize| pairs[&n].iota as f64 + 0.5 * pairs[&n].nu as f64;
    let richardson = 2.0 * s(m) / m as f64 - s(m / 2) / (m / 2) as f64;
    let mean_index = rotation_mean_index(path)?;
    if (richardson - mean_index).abs() > 4.0 * half_dim / m as f64 + 1e-9 {
        return Err(Error::Inequality {
            n: m,
            detail: format!("rotation mean index {mean_index} disagrees with the Richardson estimate {richardson}"),
        });
    }
    let inequality_margins = pairs
        .iter()
        .map(|(&n, p)| {
            let nm = n as f64 * mean_index;
            (n, (p.iota as f64 - nm + half_dim, nm + half_dim - p.iota as f64 - p.nu as f64))
        })
        .collect();
    let base_pair = match pairs.get(&1) {
        Some(p) => *p,
        None => cz_index(path)?,
    };
    let profile = IterationProfile { base_pair, pairs, mean_index, inequality_margins };
    if let Some((n, (a, b))) = profile.inequality_margins.iter().find(|(&n, &m)| !margin_ok(n, m)) {
        return Err(Error::Inequality { n: *n, detail: format!("margins ({a}, {b}) with mean index {mean_index}") });
    }
    Ok(profile)
}

/// Hessian nullity of the n-th iterate of the critical loop.
pub fn iterate_nullity(report: &CriticalPointReport, n: usize, null_tol_rel: f64) -> Result<usize> {
    let it = report.loop_.iterate(n)?;
    Ok(hessian_inertia(&it.discrete_hessian()?, null_tol_rel).1)
}

/// Sample a path t ↦ exp(t·J·S) for constant symmetric S on [0, T].
pub fn constant_hamiltonian_path(s: &DMatrix<f64>, duration: f64, samples: usize) -> SymplecticPath {
    let n = s.nrows() / 2;
    let a = standard_j(n) * s;
    let out = (0..=samples)
        .map(|i| {
            let t = duration * i as f64 / samples as f64;
            (t, (&a * t).exp())
        })
        .collect();
    SymplecticPath { dim: 2 * n, samples: out }
}

/// Symplectic Cayley transform (I − JS/2)⁻¹(I + JS/2) of a symmetric S.
pub fn cayley(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows() / 2;
    let a = standard_j(n) * s * 0.5;
    let eye = DMatrix::identity(2 * n, 2 * n);
    (&eye - &a).try_inverse().expect("small perturbation") * (&eye + &a)
}
