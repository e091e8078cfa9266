//! Euler-Lagrange flow, its linearization in Hamiltonian coordinates, and
//! trajectory quality metrics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{Derivs, LagrangianSpec};

/// Speeds beyond this are treated as finite-time blow-up.
pub const BLOW_UP_GUARD: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl PhaseState {
    pub fn new(q: &[f64], v: &[f64]) -> Self {
        PhaseState { q: DVector::from_column_slice(q), v: DVector::from_column_slice(v) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub t1: f64,
    pub samples: Vec<(f64, PhaseState)>,
    pub step_count: usize,
}

impl Trajectory {
    pub fn last(&self) -> &PhaseState {
        &self.samples.last().expect("trajectory has samples").1
    }

    pub fn max_speed(&self) -> f64 {
        self.samples.iter().map(|(_, s)| s.v.norm()).fold(0.0, f64::max)
    }

    /// Columns t, q_1..q_N, v_1..v_N.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.samples.first().map_or(0, |(_, s)| s.q.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q_{i}")));
        header.extend((1..=n).map(|i| format!("v_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, s) in &self.samples {
            let mut row = vec![format!("{t}")];
            row.extend(s.q.iter().map(|x| format!("{x}")));
            row.extend(s.v.iter().map(|x| format!("{x}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Sampled path t ↦ Γ(t) in Sp(2N), starting at the identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymplecticPath {
    pub dim: usize,
    pub samples: Vec<(f64, DMatrix<f64>)>,
}

impl SymplecticPath {
    pub fn endpoint(&self) -> &DMatrix<f64> {
        &self.samples.last().expect("path has samples").1
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0) - self.samples.first().map_or(0.0, |s| s.0)
    }

    pub fn max_defect(&self) -> f64 {
        self.samples.iter().map(|(_, m)| symplectic_defect(m)).fold(0.0, f64::max)
    }

    /// Follow this path by `next`, right-multiplying by this endpoint.
    pub fn concat(&self, next: &SymplecticPath) -> SymplecticPath {
        let end = self.endpoint().clone();
        let offset = self.samples.last().map_or(0.0, |s| s.0) - next.samples.first().map_or(0.0, |s| s.0);
        let mut samples = self.samples.clone();
        samples.extend(next.samples.iter().skip(1).map(|(t, m)| (t + offset, m * &end)));
        SymplecticPath { dim: self.dim, samples }
    }
}

/// Standard symplectic matrix [[0, I], [-I, 0]] on R^{2N}.
pub fn standard_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// ‖ΓᵀJΓ − J‖ in the max-entry norm.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = standard_j(m.nrows() / 2);
    (m.transpose() * &j * m - &j).amax()
}

/// Right-hand side of the first-order Euler-Lagrange system.
fn acceleration(d: &Derivs, v: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = &d.d_q - &d.d_vq * v - &d.d_vt;
    let chol = d.d_vv.clone().cholesky().ok_or(Error::Singular("d_vv solve in the Euler-Lagrange flow"))?;
    Ok(chol.solve(&rhs))
}

/// J·∇²H along the Legendre lift of (t, q, v), from second derivatives of L.
fn hamiltonian_generator(d: &Derivs) -> Result<DMatrix<f64>> {
    let n = d.d_v.len();
    let a_inv = d.d_vv.clone().try_inverse().ok_or(Error::Singular("d_vv inverse"))?;
    let h_pp = a_inv.clone();
    let h_pq = -(&a_inv * &d.d_vq);
    let h_qq = -&d.d_qq + d.d_vq.transpose() * &a_inv * &d.d_vq;
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).copy_from(&h_pq);
    g.view_mut((0, n), (n, n)).copy_from(&h_pp);
    g.view_mut((n, 0), (n, n)).copy_from(&(-h_qq));
    g.view_mut((n, n), (n, n)).copy_from(&(-h_pq.transpose()));
    Ok(g)
}

fn guard(t: f64, v: &DVector<f64>) -> Result<()> {
    let s = v.norm();
    if !s.is_finite() || s > BLOW_UP_GUARD {
        return Err(Error::BlowUp { t, speed: s });
    }
    Ok(())
}

struct Stage {
    dq: DVector<f64>,
    dv: DVector<f64>,
    dpsi: Option<DMatrix<f64>>,
}

fn stage(
    spec: &LagrangianSpec,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    psi: Option<&DMatrix<f64>>,
) -> Result<Stage> {
    guard(t, v)?;
    let d = spec.derivs(t, q.as_slice(), v.as_slice());
    let dv = acceleration(&d, v)?;
    let dpsi = match psi {
        Some(p) => Some(hamiltonian_generator(&d)? * p),
        None => None,
    };
    Ok(Stage { dq: v.clone(), dv, dpsi })
}

/// One classical RK4 step; the variational matrix rides along when given.
fn rk4_step(
    spec: &LagrangianSpec,
    t: f64,
    h: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    psi: Option<&DMatrix<f64>>,
) -> Result<(DVector<f64>, DVector<f64>, Option<DMatrix<f64>>)> {
    let k1 = stage(spec, t, q, v, psi)?;
    let p2 = psi.map(|p| p + k1.dpsi.as_ref().unwrap() * (0.5 * h));
    let k2 = stage(spec, t + 0.5 * h, &(q + &k1.dq * (0.5 * h)), &(v + &k1.dv * (0.5 * h)), p2.as_ref())?;
    let p3 = psi.map(|p| p + k2.dpsi.as_ref().unwrap() * (0.5 * h));
    let k3 = stage(spec, t + 0.5 * h, &(q + &k2.dq * (0.5 * h)), &(v + &k2.dv * (0.5 * h)), p3.as_ref())?;
    let p4 = psi.map(|p| p + k3.dpsi.as_ref().unwrap() * h);
    let k4 = stage(spec, t + h, &(q + &k3.dq * h), &(v + &k3.dv * h), p4.as_ref())?;
    let w = h / 6.0;
    let qn = q + (&k1.dq + &k2.dq * 2.0 + &k3.dq * 2.0 + &k4.dq) * w;
    let vn = v + (&k1.dv + &k2.dv * 2.0 + &k3.dv * 2.0 + &k4.dv) * w;
    let pn = psi.map(|p| {
        p + (k1.dpsi.unwrap() + k2.dpsi.unwrap() * 2.0 + k3.dpsi.unwrap() * 2.0 + k4.dpsi.unwrap()) * w
    });
    Ok((qn, vn, pn))
}

/// Fixed-step RK4 for the Euler-Lagrange flow on [t0, t1] (t1 < t0 integrates backwards).
pub fn integrate_el(spec: &LagrangianSpec, state: &PhaseState, t0: f64, t1: f64, steps: usize) -> Result<Trajectory> {
    Ok(integrate(spec, state, t0, t1, steps, false)?.0)
}

/// Flow and its linearization dΦ_H in (δq, δp) coordinates, integrated together.
pub fn integrate_with_variation(
    spec: &LagrangianSpec,
    state: &PhaseState,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<(Trajectory, SymplecticPath)> {
    let (traj, path) = integrate(spec, state, t0, t1, steps, true)?;
    Ok((traj, path.expect("variation requested")))
}

fn integrate(
    spec: &LagrangianSpec,
    state: &PhaseState,
    t0: f64,
    t1: f64,
    steps: usize,
    variation: bool,
) -> Result<(Trajectory, Option<SymplecticPath>)> {
    if steps == 0 {
        return Err(Error::InvalidParams("at least one step required".into()));
    }
    let n = spec.dim();
    let h = (t1 - t0) / steps as f64;
    let mut q = state.q.clone();
    let mut v = state.v.clone();
    let mut psi = variation.then(|| DMatrix::identity(2 * n, 2 * n));
    let mut samples = Vec::with_capacity(steps + 1);
    let mut mats = Vec::with_capacity(if variation { steps + 1 } else { 0 });
    samples.push((t0, state.clone()));
    if let Some(p) = &psi {
        mats.push((t0, p.clone()));
    }
    for i in 0..steps {
        let t = t0 + h * i as f64;
        let (qn, vn, pn) = rk4_step(spec, t, h, &q, &v, psi.as_ref())?;
        q = qn;
        v = vn;
        let tn = if i + 1 == steps { t1 } else { t0 + h * (i + 1) as f64 };
        guard(tn, &v)?;
        samples.push((tn, PhaseState { q: q.clone(), v: v.clone() }));
        if let Some(p) = pn {
            mats.push((tn, p.clone()));
            psi = Some(p);
        }
    }
    let traj = Trajectory { t0, t1, samples, step_count: steps };
    let path = variation.then(|| SymplecticPath { dim: 2 * n, samples: mats });
    Ok((traj, path))
}

/// Linearized Hamiltonian flow along a sampled orbit; each step restarts the
/// augmented RK4 from the orbit sample, so errors do not compound along
/// unstable orbits.
pub fn integrate_linearized(spec: &LagrangianSpec, orbit: &Trajectory) -> Result<SymplecticPath> {
    let n = spec.dim();
    let mut psi = DMatrix::identity(2 * n, 2 * n);
    let mut samples = vec![(orbit.samples[0].0, psi.clone())];
    for w in orbit.samples.windows(2) {
        let (t, s) = (&w[0].0, &w[0].1);
        let h = w[1].0 - t;
        let (_, _, pn) = rk4_step(spec, *t, h, &s.q, &s.v, Some(&psi))?;
        psi = pn.expect("variation requested");
        let scale = psi.amax().powi(2).max(1.0);
        let drift = symplectic_defect(&psi);
        if drift > 1e-5 * scale {
            return Err(Error::SymplecticDrift { t: w[1].0, drift });
        }
        samples.push((w[1].0, psi.clone()));
    }
    Ok(SymplecticPath { dim: 2 * n, samples })
}

/// Max over samples of |d/dt ∂_vL − ∂_qL|, with d/dt from five-point
/// differences of the sampled momenta (one-sided near the ends).
pub fn el_residual(spec: &LagrangianSpec, trajectory: &Trajectory) -> f64 {
    residual_impl(spec, &trajectory.samples, false)
}

/// As [`el_residual`] for a closed orbit whose last sample repeats the first
/// (up to a deck translation); stencils wrap around.
pub fn el_residual_periodic(spec: &LagrangianSpec, trajectory: &Trajectory) -> f64 {
    residual_impl(spec, &trajectory.samples, true)
}

// Fourth-order first-derivative weights (×1/12h) for a sample at position
// 0, 1 or 2 of a five-point uniform window.
const WEIGHTS: [[f64; 5]; 3] =
    [[-25.0, 48.0, -36.0, 16.0, -3.0], [-3.0, -10.0, 18.0, -6.0, 1.0], [1.0, -8.0, 0.0, 8.0, -1.0]];

fn residual_impl(spec: &LagrangianSpec, samples: &[(f64, PhaseState)], cyclic: bool) -> f64 {
    let m = if cyclic { samples.len() - 1 } else { samples.len() };
    if m < 3 {
        return 0.0;
    }
    let period = samples[samples.len() - 1].0 - samples[0].0;
    let momenta: Vec<DVector<f64>> =
        samples[..m].iter().map(|(t, s)| spec.d_v(*t, s.q.as_slice(), s.v.as_slice())).collect();
    let time = |i: isize| -> f64 {
        if cyclic {
            let k = i.rem_euclid(m as isize) as usize;
            samples[k].0 + period * i.div_euclid(m as isize) as f64
        } else {
            samples[i as usize].0
        }
    };
    let mom = |i: isize| -> &DVector<f64> {
        let k = if cyclic { i.rem_euclid(m as isize) as usize } else { i as usize };
        &momenta[k]
    };
    let mut worst: f64 = 0.0;
    for i in 0..m as isize {
        let dp = if cyclic || m >= 5 {
            // Window start and the sample's position inside it.
            let (start, pos) = if cyclic {
                (i - 2, 2)
            } else if i < 2 {
                (0, i as usize)
            } else if i + 2 >= m as isize {
                (m as isize - 5, (i - (m as isize - 5)) as usize)
            } else {
                (i - 2, 2)
            };
            let h = (time(start + 4) - time(start)) / 4.0;
            let (w, sign) = if pos <= 2 { (WEIGHTS[pos], 1.0) } else { (WEIGHTS[4 - pos], -1.0) };
            let mut acc = DVector::zeros(momenta[0].len());
            for (j, wj) in w.iter().enumerate() {
                // Mirrored windows reverse the node order and flip the sign.
                let node = if sign > 0.0 { start + j as isize } else { start + 4 - j as isize };
                acc += mom(node) * *wj;
            }
            acc * (sign / (12.0 * h))
        } else if i == 0 || i + 1 == m as isize {
            continue;
        } else {
            (mom(i + 1) - mom(i - 1)) / (time(i + 1) - time(i - 1))
        };
        let (t, s) = (&samples[i as usize].0, &samples[i as usize].1);
        let lq = spec.d_q(*t, s.q.as_slice(), s.v.as_slice());
        worst = worst.max((dp - lq).norm());
    }
    worst
}

/// Energy ∂_vL·v − L, conserved by autonomous flows.
pub fn energy(spec: &LagrangianSpec, t: f64, state: &PhaseState) -> f64 {
    let p = spec.d_v(t, state.q.as_slice(), state.v.as_slice());
    p.dot(&state.v) - spec.value(t, state.q.as_slice(), state.v.as_slice())
}

/// Observed order of convergence of the endpoint from runs at steps, 2·steps, 4·steps.
pub fn measured_order(spec: &LagrangianSpec, state: &PhaseState, t0: f64, t1: f64, steps: usize) -> Result<f64> {
    let end = |s: usize| -> Result<DVector<f64>> {
        let tr = integrate_el(spec, state, t0, t1, s)?;
        let last = tr.last();
        Ok(DVector::from_iterator(2 * spec.dim(), last.q.iter().chain(last.v.iter()).cloned()))
    };
    let (a, b, c) = (end(steps)?, end(2 * steps)?, end(4 * steps)?);
    Ok(((&a - &b).norm() / (&b - &c).norm()).log2())
}
