//! Short action minimizers between nearby endpoints and the radii inside
//! which they are unique.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate_with_variation, PhaseState, SymplecticPath, Trajectory};
use crate::lagrangian::{verify_class, ClassReport, GridSpec, LagrangianSpec};

/// Integration steps per segment; even, for Simpson's rule.
pub const SEGMENT_STEPS: usize = 16;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_ITERS: usize = 40;
const FALLBACK_NODES: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiiConstants {
    pub ell0: f64,
    pub ell1: f64,
    pub lower: f64,
    pub upper: f64,
    /// C = ℓ̄ on the flat torus.
    pub c: f64,
    /// Constant added to L for the quadratic sandwich.
    pub shift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessRadii {
    pub eps0: f64,
    pub rho0: f64,
    /// F at the corner of the box, which is its minimum there.
    pub margin: f64,
    pub constants_used: Option<RadiiConstants>,
    /// False for radii chosen by hand and checked only by the multi-start probe.
    pub certified: bool,
}

impl RadiiConstants {
    pub fn from_class(class: &ClassReport) -> Self {
        RadiiConstants {
            ell0: class.q1_lower_bound,
            ell1: class.ell1(),
            lower: class.lower_quadratic,
            upper: class.upper_quadratic,
            c: class.upper_quadratic,
            shift: class.normalization_shift,
        }
    }

    /// F(ρ, ε) = ℓ0 − 2ℓ1(√(C/ℓ̲) + 1)(ρ + ε) − ℓ1(C/ℓ̲ + 1)(ρ² + ε²).
    pub fn f(&self, rho: f64, eps: f64) -> f64 {
        let ratio = self.c / self.lower;
        self.ell0 - 2.0 * self.ell1 * (ratio.sqrt() + 1.0) * (rho + eps) - self.ell1 * (ratio + 1.0) * (rho * rho + eps * eps)
    }
}

impl UniquenessRadii {
    /// Radii supplied by the caller, not backed by the F criterion.
    pub fn working(eps0: f64, rho0: f64) -> Self {
        UniquenessRadii { eps0, rho0, margin: f64::NAN, constants_used: None, certified: false }
    }

    /// Nodes per unit time guaranteeing spacing below ρ0 for loops of period
    /// `period` and total action below c: the inverse of ε̄ = ρ0²ℓ̲/c, with c
    /// taken after the normalization shift.
    pub fn required_k(&self, c: f64, period: usize) -> Option<usize> {
        let k = self.constants_used.as_ref()?;
        let c = c + k.shift * period as f64;
        Some((c / (self.rho0 * self.rho0 * k.lower)).ceil().max(self.min_k() as f64) as usize)
    }

    /// Smallest number of nodes per unit time allowed by ε0.
    pub fn min_k(&self) -> usize {
        (1.0 / self.eps0 - 1e-9).ceil().max(1.0) as usize
    }
}

/// Radii from the positivity of F on the grid-estimated constants.
pub fn estimate_radii(spec: &LagrangianSpec) -> Result<UniquenessRadii> {
    let class = verify_class(spec, &GridSpec::default_for(spec.dim()))?;
    radii_from_class(&class)
}

pub fn radii_from_class(class: &ClassReport) -> Result<UniquenessRadii> {
    if !class.is_convex_quadratic_growth() {
        return Err(Error::Radii("Lagrangian is not convex quadratic-growth on the sample grid; modify it first".into()));
    }
    let k = RadiiConstants::from_class(class);
    if !(k.f(1e-9, 1e-9) > 0.0) {
        return Err(Error::Radii("F is not positive near the origin; rescale L".into()));
    }
    // F decreases in both arguments, so the square box is set by its diagonal zero.
    let (mut lo, mut hi) = (0.0, 1.0);
    while k.f(hi, hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if k.f(mid, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps0 = 0.5 * lo;
    let rho0 = (0.5 * lo).min(0.25);
    Ok(UniquenessRadii { eps0, rho0, margin: k.f(rho0, eps0), constants_used: Some(k), certified: true })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentMethod {
    Shooting,
    DirectFallback,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    /// Lifted endpoints in R^N.
    pub q0: DVector<f64>,
    pub q1: DVector<f64>,
    pub v0: DVector<f64>,
    pub action: f64,
    pub trajectory: Trajectory,
    /// Linearized Hamiltonian flow along the segment, in (δq, δp).
    pub variation: SymplecticPath,
    pub method: SegmentMethod,
}

impl Segment {
    pub fn v1(&self) -> &DVector<f64> {
        &self.trajectory.last().v
    }

    /// Blocks (a, b, c, d) of the endpoint variational matrix.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.q0.len();
        let m = self.variation.endpoint();
        (
            m.view((0, 0), (n, n)).into_owned(),
            m.view((0, n), (n, n)).into_owned(),
            m.view((n, 0), (n, n)).into_owned(),
            m.view((n, n), (n, n)).into_owned(),
        )
    }
}

/// Composite Simpson rule for ∫L along the samples (falls back to the
/// trapezoid rule on an odd number of intervals).
pub fn trajectory_action(spec: &LagrangianSpec, trajectory: &Trajectory) -> f64 {
    let vals: Vec<f64> =
        trajectory.samples.iter().map(|(t, s)| spec.value(*t, s.q.as_slice(), s.v.as_slice())).collect();
    let m = vals.len() - 1;
    if m == 0 {
        return 0.0;
    }
    let h = (trajectory.t1 - trajectory.t0) / m as f64;
    if m % 2 == 1 {
        return h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m]));
    }
    let mut s = vals[0] + vals[m];
    for (i, v) in vals.iter().enumerate().take(m).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

fn check_admissible(t0: f64, t1: f64, q0: &DVector<f64>, q1: &DVector<f64>, radii: &UniquenessRadii) -> Result<()> {
    let dt = t1 - t0;
    if !(dt > 0.0) || dt > radii.eps0 * (1.0 + 1e-12) {
        return Err(Error::OutsideRadii(format!("duration {dt} not in (0, eps0 = {}]", radii.eps0)));
    }
    let dist = (q1 - q0).norm();
    if dist >= radii.rho0 {
        return Err(Error::OutsideRadii(format!("endpoint distance {dist} >= rho0 = {}", radii.rho0)));
    }
    Ok(())
}

/// The unique short minimizer from (t0, q0) to (t1, q1), with q1 already the
/// chosen lift.
pub fn minimize_segment(
    spec: &LagrangianSpec,
    t0: f64,
    t1: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    radii: &UniquenessRadii,
) -> Result<Segment> {
    minimize_segment_from(spec, t0, t1, q0, q1, radii, None)
}

/// As [`minimize_segment`], starting the shooting from `guess` when given.
pub fn minimize_segment_from(
    spec: &LagrangianSpec,
    t0: f64,
    t1: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    radii: &UniquenessRadii,
    guess: Option<&DVector<f64>>,
) -> Result<Segment> {
    check_admissible(t0, t1, q0, q1, radii)?;
    let straight = (q1 - q0) / (t1 - t0);
    let first = guess.cloned().unwrap_or_else(|| straight.clone());
    let shot = match shoot(spec, t0, t1, q0, q1, &first) {
        Ok(s) => Ok(s),
        Err(e) if guess.is_some() => shoot(spec, t0, t1, q0, q1, &straight).map_err(|_| e),
        Err(e) => Err(e),
    };
    let segment = match shot {
        Ok(s) => s,
        Err(shoot_err) => {
            let v_start = direct_minimization(spec, t0, t1, q0, q1)
                .map_err(|e| Error::SegmentFailed(format!("shooting: {shoot_err}; direct minimization: {e}")))?;
            let mut s = shoot(spec, t0, t1, q0, q1, &v_start)
                .map_err(|e| Error::SegmentFailed(format!("shooting: {shoot_err}; polish after direct minimization: {e}")))?;
            s.method = SegmentMethod::DirectFallback;
            s
        }
    };
    if !is_strict_minimizer(&segment) {
        return Err(Error::SegmentFailed("conjugate point inside the segment; not a strict minimizer".into()));
    }
    Ok(segment)
}

/// Damped Newton on v0 for Q^{t1}(q0, v0) = q1.
pub fn shoot(
    spec: &LagrangianSpec,
    t0: f64,
    t1: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    guess: &DVector<f64>,
) -> Result<Segment> {
    let n = spec.dim();
    let run = |v0: &DVector<f64>| -> Result<(Trajectory, SymplecticPath, DVector<f64>)> {
        let start = PhaseState { q: q0.clone(), v: v0.clone() };
        let (tr, path) = integrate_with_variation(spec, &start, t0, t1, SEGMENT_STEPS)?;
        let r = &tr.last().q - q1;
        Ok((tr, path, r))
    };
    let tol = NEWTON_TOL * (1.0 + q1.amax());
    let mut v0 = guess.clone();
    let (mut tr, mut path, mut r) = run(&v0)?;
    for _ in 0..NEWTON_ITERS {
        if r.norm() < tol {
            let action = trajectory_action(spec, &tr);
            return Ok(Segment {
                t0,
                t1,
                q0: q0.clone(),
                q1: q1.clone(),
                v0,
                action,
                trajectory: tr,
                variation: path,
                method: SegmentMethod::Shooting,
            });
        }
        let m = path.endpoint();
        let b = m.view((0, n), (n, n)).into_owned();
        let a0 = spec.d_vv(t0, q0.as_slice(), v0.as_slice());
        let jac = b * a0;
        let step = jac.lu().solve(&r).ok_or(Error::Singular("shooting Jacobian"))?;
        let mut alpha = 1.0;
        loop {
            let trial = &v0 - &step * alpha;
            match run(&trial) {
                Ok((tr2, path2, r2)) if r2.norm() < r.norm() || r2.norm() < tol => {
                    v0 = trial;
                    tr = tr2;
                    path = path2;
                    r = r2;
                    break;
                }
                _ => {}
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return Err(Error::NoConvergence { what: "segment shooting", iterations: 0, residual: r.norm() });
            }
        }
    }
    Err(Error::NoConvergence { what: "segment shooting", iterations: NEWTON_ITERS, residual: r.norm() })
}

/// No conjugate points: det ∂q(t)/∂p0 stays positive on (t0, t1].
fn is_strict_minimizer(segment: &Segment) -> bool {
    let n = segment.q0.len();
    segment.variation.samples.iter().skip(1).all(|(_, m)| m.view((0, n), (n, n)).into_owned().determinant() > 0.0)
}

/// Midpoint-rule action of the piecewise-linear path through the nodes.
struct PlAction<'a> {
    spec: &'a LagrangianSpec,
    t0: f64,
    h: f64,
    q0: DVector<f64>,
    q1: DVector<f64>,
    pieces: usize,
}

impl PlAction<'_> {
    fn node(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        let n = self.q0.len();
        if i == 0 {
            self.q0.clone()
        } else if i == self.pieces {
            self.q1.clone()
        } else {
            x.rows((i - 1) * n, n).into_owned()
        }
    }

    fn piece(&self, x: &DVector<f64>, j: usize) -> (f64, DVector<f64>, DVector<f64>) {
        let a = self.node(x, j);
        let b = self.node(x, j + 1);
        let t = self.t0 + self.h * (j as f64 + 0.5);
        (t, (&a + &b) * 0.5, (&b - &a) / self.h)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (0..self.pieces)
            .map(|j| {
                let (t, m, u) = self.piece(x, j);
                self.h * self.spec.value(t, m.as_slice(), u.as_slice())
            })
            .sum()
    }

    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.q0.len();
        let dim = n * (self.pieces - 1);
        let mut g = DVector::zeros(dim);
        let mut hm = DMatrix::zeros(dim, dim);
        for j in 0..self.pieces {
            let (t, m, u) = self.piece(x, j);
            let d = self.spec.derivs(t, m.as_slice(), u.as_slice());
            // Node j enters with (∂m, ∂u) = (½, −1/h), node j+1 with (½, 1/h).
            let ends = [(j, -1.0 / self.h), (j + 1, 1.0 / self.h)];
            for &(ia, da) in &ends {
                if ia == 0 || ia == self.pieces {
                    continue;
                }
                let ra = (ia - 1) * n;
                let ga = (&d.d_q * 0.5 + &d.d_v * da) * self.h;
                let mut seg = g.rows_mut(ra, n);
                seg += ga;
                for &(ib, db) in &ends {
                    if ib == 0 || ib == self.pieces {
                        continue;
                    }
                    let rb = (ib - 1) * n;
                    let block = (&d.d_qq * 0.25
                        + d.d_vq.transpose() * (0.5 * db)
                        + &d.d_vq * (0.5 * da)
                        + &d.d_vv * (da * db))
                        * self.h;
                    let mut view = hm.view_mut((ra, rb), (n, n));
                    view += block;
                }
            }
        }
        (g, hm)
    }
}

/// Newton on the interior nodes of a piecewise-linear path; returns the
/// estimated initial velocity for polishing by shooting.
fn direct_minimization(
    spec: &LagrangianSpec,
    t0: f64,
    t1: f64,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = q0.len();
    let pieces = FALLBACK_NODES + 1;
    let problem = PlAction { spec, t0, h: (t1 - t0) / pieces as f64, q0: q0.clone(), q1: q1.clone(), pieces };
    let mut x = DVector::zeros(n * FALLBACK_NODES);
    for i in 1..pieces {
        let s = i as f64 / pieces as f64;
        x.rows_mut((i - 1) * n, n).copy_from(&(q0 * (1.0 - s) + q1 * s));
    }
    let mut f = problem.value(&x);
    for _ in 0..100 {
        let (g, h) = problem.grad_hess(&x);
        if g.amax() < 1e-12 {
            break;
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let mut alpha = 1.0;
        loop {
            let trial = &x - &step * alpha;
            let ft = problem.value(&trial);
            if ft <= f - 1e-4 * alpha * g.dot(&step) || (alpha < 1e-3 && ft <= f) {
                x = trial;
                f = ft;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(Error::NoConvergence { what: "direct segment minimization", iterations: 0, residual: g.norm() });
            }
        }
    }
    // Second-order estimate of the starting velocity from the first two pieces.
    let u0 = (problem.node(&x, 1) - problem.node(&x, 0)) / problem.h;
    let u1 = (problem.node(&x, 2) - problem.node(&x, 1)) / problem.h;
    Ok(&u0 * 1.5 - &u1 * 0.5)
}

/// (g0, g1) = (−∂_vL at the start, ∂_vL at the end): the endpoint derivatives
/// of the minimal action.
pub fn segment_action_gradient(spec: &LagrangianSpec, segment: &Segment) -> (DVector<f64>, DVector<f64>) {
    let start = &segment.trajectory.samples[0].1;
    let end = segment.trajectory.last();
    let g0 = -spec.d_v(segment.t0, start.q.as_slice(), start.v.as_slice());
    let g1 = spec.d_v(segment.t1, end.q.as_slice(), end.v.as_slice());
    (g0, g1)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub pairs: usize,
    pub starts: usize,
    pub converged_starts: usize,
    /// Largest distance in v0 between converged starts of one pair.
    pub max_spread: f64,
}

/// Multi-start check of uniqueness: for random admissible endpoint pairs,
/// shooting from random initial velocities must land on the same v0.
pub fn probe_uniqueness(
    spec: &LagrangianSpec,
    radii: &UniquenessRadii,
    pairs: usize,
    starts: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let n = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ProbeReport { pairs, starts, converged_starts: 0, max_spread: 0.0 };
    for _ in 0..pairs {
        let t0 = rng.gen_range(0.0..1.0);
        let dt = radii.eps0 * rng.gen_range(0.1..1.0);
        let q0 = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let q1 = &q0 + dir.normalize() * (radii.rho0 * rng.gen_range(0.0..0.999));
        let reference = minimize_segment(spec, t0, t0 + dt, &q0, &q1, radii)?;
        let straight = (&q1 - &q0) / dt;
        let scale = 1.0 + straight.norm();
        for _ in 0..starts {
            let guess = &straight + DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5) * scale);
            if let Ok(s) = shoot(spec, t0, t0 + dt, &q0, &q1, &guess) {
                report.converged_starts += 1;
                report.max_spread = report.max_spread.max((&s.v0 - &reference.v0).norm());
            }
        }
    }
    Ok(report)
}
