//! k-broken Euler-Lagrange loops: node coordinates, discrete action with its
//! exact gradient and Hessian, and critical-point search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{el_residual_periodic, integrate_el, PhaseState, Trajectory};
use crate::lagrangian::LagrangianSpec;
use crate::linalg::index_and_nullity;
use crate::segment::{minimize_segment_from, segment_action_gradient, Segment, UniquenessRadii};

/// Componentwise representative of d modulo Z^N in [−½, ½).
pub fn minimal_image(d: &DVector<f64>) -> DVector<f64> {
    d.map(|x| x - x.round())
}

#[derive(Clone, Debug)]
pub struct BrokenLoop {
    pub period: usize,
    pub k: usize,
    /// Torus representatives, one per node time h/k.
    pub nodes: Vec<DVector<f64>>,
    /// Segment h spans [h/k, (h+1)/k] and ends at the minimal lift of node h+1.
    pub segments: Vec<Segment>,
    pub mean_action: f64,
    /// Deck translation picked up along the loop; zero for contractible loops.
    pub winding: Vec<i64>,
    spec: LagrangianSpec,
    radii: UniquenessRadii,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub period: usize,
    pub k: usize,
    pub nodes: Vec<Vec<f64>>,
    pub mean_action: f64,
}

impl BrokenLoop {
    pub fn from_nodes(
        spec: &LagrangianSpec,
        radii: &UniquenessRadii,
        period: usize,
        k: usize,
        nodes: Vec<DVector<f64>>,
    ) -> Result<Self> {
        Self::build(spec, radii, period, k, nodes, None)
    }

    fn build(
        spec: &LagrangianSpec,
        radii: &UniquenessRadii,
        period: usize,
        k: usize,
        nodes: Vec<DVector<f64>>,
        guesses: Option<&[DVector<f64>]>,
    ) -> Result<Self> {
        let m = period * k;
        if period == 0 || k == 0 {
            return Err(Error::InvalidParams("period and k must be positive".into()));
        }
        if nodes.len() != m {
            return Err(Error::InvalidParams(format!("expected {m} nodes, got {}", nodes.len())));
        }
        if nodes.iter().any(|x| x.len() != spec.dim()) {
            return Err(Error::InvalidParams("node dimension does not match the Lagrangian".into()));
        }
        if 1.0 / k as f64 > radii.eps0 * (1.0 + 1e-12) {
            return Err(Error::InvalidParams(format!("k = {k} is below the minimum {} set by eps0", radii.min_k())));
        }
        let steps: Vec<DVector<f64>> = (0..m).map(|h| minimal_image(&(&nodes[(h + 1) % m] - &nodes[h]))).collect();
        let mut worst = (0, 0.0);
        for (h, d) in steps.iter().enumerate() {
            if d.norm() > worst.1 {
                worst = (h, d.norm());
            }
        }
        if worst.1 >= radii.rho0 {
            let required = (k as f64 * worst.1 / radii.rho0).floor() as usize + 1;
            return Err(Error::Spacing {
                index: worst.0,
                next: (worst.0 + 1) % m,
                distance: worst.1,
                bound: radii.rho0,
                required_k: Some(required),
            });
        }
        let total: DVector<f64> = steps.iter().fold(DVector::zeros(spec.dim()), |acc, d| acc + d);
        let winding = total.iter().map(|x| x.round() as i64).collect();
        let dt = 1.0 / k as f64;
        let segments: Vec<Segment> = (0..m)
            .into_par_iter()
            .map(|h| {
                let q1 = &nodes[h] + &steps[h];
                let guess = guesses.map(|g| &g[h]);
                minimize_segment_from(spec, h as f64 * dt, (h + 1) as f64 * dt, &nodes[h], &q1, radii, guess)
            })
            .collect::<Result<_>>()?;
        let mean_action = segments.iter().map(|s| s.action).sum::<f64>() / period as f64;
        Ok(BrokenLoop { period, k, nodes, segments, mean_action, winding, spec: spec.clone(), radii: radii.clone() })
    }

    /// Constant loop at q.
    pub fn constant(spec: &LagrangianSpec, radii: &UniquenessRadii, period: usize, k: usize, q: &[f64]) -> Result<Self> {
        let node = DVector::from_column_slice(q);
        Self::from_nodes(spec, radii, period, k, vec![node; period * k])
    }

    pub fn spec(&self) -> &LagrangianSpec {
        &self.spec
    }

    pub fn radii(&self) -> &UniquenessRadii {
        &self.radii
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_contractible(&self) -> bool {
        self.winding.iter().all(|&w| w == 0)
    }

    /// Velocity jumps ∂_vL(incoming) − ∂_vL(outgoing) at each node.
    pub fn metric_gradient(&self) -> Vec<DVector<f64>> {
        let m = self.node_count();
        let parts: Vec<_> = self.segments.iter().map(|s| segment_action_gradient(&self.spec, s)).collect();
        (0..m).map(|h| &parts[(h + m - 1) % m].1 + &parts[h].0).collect()
    }

    /// Gradient of the mean action in node coordinates: the jumps scaled by 1/τ.
    pub fn discrete_gradient(&self) -> Vec<DVector<f64>> {
        let s = 1.0 / self.period as f64;
        self.metric_gradient().into_iter().map(|g| g * s).collect()
    }

    /// sqrt((1/τ)·Σ|jump|²), unchanged under iteration.
    pub fn gradient_norm(&self) -> f64 {
        let sum: f64 = self.metric_gradient().iter().map(|g| g.norm_squared()).sum();
        (sum / self.period as f64).sqrt()
    }

    /// Hessian of the mean action in node coordinates, from the endpoint
    /// variational blocks of every segment.
    pub fn discrete_hessian(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let m = self.node_count();
        let mut h = DMatrix::zeros(n * m, n * m);
        for (i, seg) in self.segments.iter().enumerate() {
            let (a, b, c, d) = seg.blocks();
            let b_inv = b.try_inverse().ok_or(Error::Singular("segment variational block b"))?;
            let j = (i + 1) % m;
            let blocks = [
                (i, i, &b_inv * &a),
                (j, j, &d * &b_inv),
                (i, j, -b_inv.clone()),
                (j, i, &c - &d * &b_inv * &a),
            ];
            for (r, col, blk) in blocks {
                let mut view = h.view_mut((r * n, col * n), (n, n));
                view += blk;
            }
        }
        let h = (&h + h.transpose()) * (0.5 / self.period as f64);
        Ok(h)
    }

    /// The broken curve as one trajectory on [0, τ], lifted continuously.
    pub fn glued_trajectory(&self) -> Trajectory {
        let mut samples: Vec<(f64, PhaseState)> = Vec::new();
        let mut lifted = self.nodes[0].clone();
        for (h, seg) in self.segments.iter().enumerate() {
            let offset = &lifted - &self.nodes[h];
            let skip = usize::from(h > 0);
            for (t, s) in seg.trajectory.samples.iter().skip(skip) {
                samples.push((*t, PhaseState { q: &s.q + &offset, v: s.v.clone() }));
            }
            lifted = &lifted + (&seg.q1 - &seg.q0);
        }
        Trajectory { t0: 0.0, t1: self.period as f64, samples, step_count: 0 }
    }

    pub fn el_residual(&self) -> f64 {
        el_residual_periodic(&self.spec, &self.glued_trajectory())
    }

    /// Resample each segment at `factor` times as many nodes.
    pub fn refine(&self, factor: usize) -> Result<BrokenLoop> {
        if factor < 2 {
            return Err(Error::InvalidParams("refinement factor must be at least 2".into()));
        }
        let mut nodes = Vec::with_capacity(self.node_count() * factor);
        let mut guesses = Vec::with_capacity(self.node_count() * factor);
        for seg in &self.segments {
            let start = PhaseState { q: seg.q0.clone(), v: seg.v0.clone() };
            nodes.push(seg.q0.clone());
            guesses.push(seg.v0.clone());
            for j in 1..factor {
                let t = seg.t0 + (seg.t1 - seg.t0) * j as f64 / factor as f64;
                let tr = integrate_el(&self.spec, &start, seg.t0, t, 64 * j)?;
                nodes.push(tr.last().q.clone());
                guesses.push(tr.last().v.clone());
            }
        }
        BrokenLoop::build(&self.spec, &self.radii, self.period, self.k * factor, nodes, Some(&guesses))
    }

    /// The n-th iterate: period nτ, nodes repeated n times.
    pub fn iterate(&self, n: usize) -> Result<BrokenLoop> {
        if n == 0 {
            return Err(Error::InvalidParams("iteration count must be at least 1".into()));
        }
        let tau = self.period as f64;
        let mut nodes = Vec::with_capacity(self.node_count() * n);
        let mut segments = Vec::with_capacity(self.node_count() * n);
        for j in 0..n {
            let shift = tau * j as f64;
            nodes.extend(self.nodes.iter().cloned());
            for seg in &self.segments {
                let mut s = seg.clone();
                s.t0 += shift;
                s.t1 += shift;
                s.trajectory.t0 += shift;
                s.trajectory.t1 += shift;
                s.trajectory.samples.iter_mut().for_each(|(t, _)| *t += shift);
                s.variation.samples.iter_mut().for_each(|(t, _)| *t += shift);
                segments.push(s);
            }
        }
        let total: f64 = segments.iter().map(|s| s.action).sum();
        Ok(BrokenLoop {
            period: self.period * n,
            k: self.k,
            nodes,
            segments,
            mean_action: total / (self.period * n) as f64,
            winding: self.winding.iter().map(|w| w * n as i64).collect(),
            spec: self.spec.clone(),
            radii: self.radii.clone(),
        })
    }

    pub fn to_record(&self) -> LoopRecord {
        LoopRecord {
            period: self.period,
            k: self.k,
            nodes: self.nodes.iter().map(|x| x.iter().cloned().collect()).collect(),
            mean_action: self.mean_action,
        }
    }

    pub fn from_record(spec: &LagrangianSpec, radii: &UniquenessRadii, record: &LoopRecord) -> Result<Self> {
        let nodes = record.nodes.iter().map(|x| DVector::from_column_slice(x)).collect();
        Self::from_nodes(spec, radii, record.period, record.k, nodes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    fn flat_nodes(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_iterator(n * self.node_count(), self.nodes.iter().flat_map(|x| x.iter().cloned()))
    }

    fn with_flat_nodes(&self, x: &DVector<f64>) -> Result<BrokenLoop> {
        let n = self.dim();
        let nodes = (0..self.node_count()).map(|h| x.rows(h * n, n).into_owned()).collect();
        let guesses: Vec<DVector<f64>> = self.segments.iter().map(|s| s.v0.clone()).collect();
        BrokenLoop::build(&self.spec, &self.radii, self.period, self.k, nodes, Some(&guesses))
    }
}

/// Free-form iterate of a loop, matching the paper's iteration map.
pub fn iterate_loop(loop_: &BrokenLoop, n: usize) -> Result<BrokenLoop> {
    loop_.iterate(n)
}

pub fn refine(loop_: &BrokenLoop, factor: usize) -> Result<BrokenLoop> {
    loop_.refine(factor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    /// Nullity threshold relative to ‖H‖.
    pub null_tol_rel: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { max_iterations: 80, gradient_tol: 1e-9, null_tol_rel: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalPointReport {
    pub loop_: BrokenLoop,
    pub gradient_norm: f64,
    pub morse_index: usize,
    pub nullity: usize,
    /// Largest over smallest nonzero |eigenvalue|.
    pub hessian_condition: f64,
    /// (largest |λ| counted as null, smallest |λ| counted as nonzero).
    pub eigen_gap: (f64, f64),
    pub el_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// (ι, ν, condition, gap) from the Hessian; inertia by LDLᵀ, gap by eigenvalues.
pub fn hessian_inertia(h: &DMatrix<f64>, null_tol_rel: f64) -> (usize, usize, f64, (f64, f64)) {
    let norm = h.norm();
    let tol = null_tol_rel * norm.max(1e-300);
    let (index, nullity) = index_and_nullity(h, tol);
    let eig = h.clone().symmetric_eigenvalues();
    let abs: Vec<f64> = eig.iter().map(|x| x.abs()).collect();
    let inside = abs.iter().cloned().filter(|&x| x < tol).fold(0.0, f64::max);
    let outside = abs.iter().cloned().filter(|&x| x >= tol).fold(f64::INFINITY, f64::min);
    let largest = abs.iter().cloned().fold(0.0, f64::max);
    (index, nullity, largest / outside, (inside, outside))
}

/// Levenberg-Marquardt on the gradient: (H² + μI)δ = −Hg, with node steps
/// capped at ρ0/2 and rejected when they leave Λ_k.
pub fn find_critical(seed: &BrokenLoop, params: &SolverParams) -> Result<CriticalPointReport> {
    let mut cur = seed.clone();
    let cap = 0.5 * seed.radii.rho0;
    let n = seed.dim();
    let mut mu: Option<f64> = None;
    let mut iterations = 0;
    let flat_grad = |l: &BrokenLoop| -> DVector<f64> {
        let g = l.discrete_gradient();
        DVector::from_iterator(n * g.len(), g.iter().flat_map(|x| x.iter().cloned()))
    };
    let mut g = flat_grad(&cur);
    let mut gn = cur.gradient_norm();
    let mut converged = gn < params.gradient_tol;
    while !converged && iterations < params.max_iterations {
        iterations += 1;
        let h = cur.discrete_hessian()?;
        let h2 = &h * &h;
        let scale = h2.diagonal().amax().max(1e-30);
        let mut m = mu.unwrap_or(1e-10 * scale);
        let hg = &h * &g;
        let x = cur.flat_nodes();
        let mut accepted = false;
        for _ in 0..30 {
            let sys = &h2 + DMatrix::identity(h.nrows(), h.ncols()) * m;
            let Some(chol) = sys.cholesky() else {
                m *= 10.0;
                continue;
            };
            let mut delta = -chol.solve(&hg);
            let biggest = (0..cur.node_count()).map(|i| delta.rows(i * n, n).norm()).fold(0.0, f64::max);
            if biggest > cap {
                delta *= cap / biggest;
            }
            if let Ok(trial) = cur.with_flat_nodes(&(&x + &delta)) {
                let tn = trial.gradient_norm();
                if tn < gn {
                    g = flat_grad(&trial);
                    gn = tn;
                    cur = trial;
                    accepted = true;
                    m = (m / 10.0).max(1e-16 * scale);
                    break;
                }
            }
            m *= 10.0;
        }
        mu = Some(m);
        converged = gn < params.gradient_tol;
        if !accepted {
            break;
        }
    }
    let h = cur.discrete_hessian()?;
    let (morse_index, nullity, hessian_condition, eigen_gap) = hessian_inertia(&h, params.null_tol_rel);
    let el_residual = cur.el_residual();
    Ok(CriticalPointReport {
        loop_: cur,
        gradient_norm: gn,
        morse_index,
        nullity,
        hessian_condition,
        eigen_gap,
        el_residual,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::estimate_radii;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn working() -> UniquenessRadii {
        UniquenessRadii::working(1.0 / 16.0, 0.2)
    }

    fn perturbed(spec: &LagrangianSpec, radii: &UniquenessRadii, period: usize, k: usize, q: f64, noise: f64, seed: u64) -> BrokenLoop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..period * k).map(|_| DVector::from_element(1, q + rng.gen_range(-noise..noise))).collect();
        BrokenLoop::from_nodes(spec, radii, period, k, nodes).unwrap()
    }

    #[test]
    fn constant_loop_action() {
        // Constant nodes give the constant curve at equilibria, q = 0 and q = ½.
        let spec = LagrangianSpec::forced_pendulum();
        for q in [0.0, 0.5] {
            let l = BrokenLoop::constant(&spec, &working(), 1, 16, &[q]).unwrap();
            // Oracle: ∫ ¼cos(2πq) + ⅛cos(2πq)cos(2πt) dt = ¼cos(2πq).
            assert!((l.mean_action - 0.25 * (2.0 * PI * q).cos()).abs() < 1e-12);
            assert!(l.is_contractible());
        }
    }

    #[test]
    fn winding_loop_rejected_by_spacing() {
        let spec = LagrangianSpec::free_particle(1);
        let radii = UniquenessRadii::working(0.25, 0.25);
        let nodes = [0.0, 0.25, 0.5, 0.75].iter().map(|&x| DVector::from_element(1, x)).collect();
        match BrokenLoop::from_nodes(&spec, &radii, 1, 4, nodes) {
            Err(Error::Spacing { required_k: Some(k), .. }) => assert!(k > 4),
            other => panic!("expected spacing error, got {other:?}"),
        }
        // Accepted under a wider ρ0: minimal lifts wind once, action 4·(¼)²/(2·¼) = ½.
        let wide = UniquenessRadii::working(0.25, 0.3);
        let nodes = [0.0, 0.25, 0.5, 0.75].iter().map(|&x| DVector::from_element(1, x)).collect();
        let l = BrokenLoop::from_nodes(&spec, &wide, 1, 4, nodes).unwrap();
        assert_eq!(l.winding, vec![1]);
        assert!((l.mean_action - 0.5).abs() < 1e-14);
    }

    #[test]
    fn perturbation_raises_action_at_minimum() {
        // q = ½ is the minimum of ¼cos 2πq.
        let spec = LagrangianSpec::pendulum();
        let base = BrokenLoop::constant(&spec, &working(), 1, 16, &[0.5]).unwrap();
        let noisy = perturbed(&spec, &working(), 1, 16, 0.5, 1e-3, 1);
        assert!(noisy.mean_action > base.mean_action);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = LagrangianSpec::forced_pendulum();
        for period in [1, 2] {
            let l = perturbed(&spec, &working(), period, 16, 0.3, 0.05, 2 + period as u64);
            let g = l.discrete_gradient();
            let h = 1e-6;
            for i in [0, 5, 16 * period - 1] {
                let mut plus = l.nodes.clone();
                plus[i][0] += h;
                let mut minus = l.nodes.clone();
                minus[i][0] -= h;
                let ap = BrokenLoop::from_nodes(&spec, &working(), period, 16, plus).unwrap().mean_action;
                let am = BrokenLoop::from_nodes(&spec, &working(), period, 16, minus).unwrap().mean_action;
                let fd = (ap - am) / (2.0 * h);
                assert!((fd - g[i][0]).abs() < 1e-5 * g[i][0].abs().max(1e-2), "{fd} vs {}", g[i][0]);
            }
        }
    }

    #[test]
    fn equilibrium_gradient_vanishes() {
        let spec = LagrangianSpec::pendulum();
        let l = BrokenLoop::constant(&spec, &working(), 1, 16, &[0.0]).unwrap();
        assert!(l.discrete_gradient().iter().all(|g| g.norm() < 1e-10));
    }

    #[test]
    fn gradient_is_local() {
        let spec = LagrangianSpec::free_particle(1);
        let mut nodes = vec![DVector::from_element(1, 0.1); 16];
        nodes[7][0] += 0.01;
        let l = BrokenLoop::from_nodes(&spec, &working(), 1, 16, nodes).unwrap();
        for (i, g) in l.discrete_gradient().iter().enumerate() {
            let near = (6..=8).contains(&i);
            assert_eq!(g[0].abs() > 1e-12, near, "node {i}: {}", g[0]);
        }
    }

    #[test]
    fn free_particle_hessian_is_second_difference() {
        let spec = LagrangianSpec::free_particle(1);
        let k = 16;
        let l = BrokenLoop::constant(&spec, &working(), 1, k, &[0.3]).unwrap();
        let h = l.discrete_hessian().unwrap();
        for i in 0..k {
            for j in 0..k {
                let d = (i as isize - j as isize).rem_euclid(k as isize);
                let expect = if i == j { 2.0 * k as f64 } else if d == 1 || d == k as isize - 1 { -(k as f64) } else { 0.0 };
                assert!((h[(i, j)] - expect).abs() < 1e-9, "({i},{j}) {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let spec = LagrangianSpec::forced_pendulum();
        let l = perturbed(&spec, &working(), 2, 16, 0.1, 0.05, 9);
        let h = l.discrete_hessian().unwrap();
        assert!((&h - h.transpose()).amax() < 1e-7);
        let eps = 1e-6;
        for j in [0, 3, 31] {
            let mut plus = l.nodes.clone();
            plus[j][0] += eps;
            let mut minus = l.nodes.clone();
            minus[j][0] -= eps;
            let gp = BrokenLoop::from_nodes(&spec, &working(), 2, 16, plus).unwrap().discrete_gradient();
            let gm = BrokenLoop::from_nodes(&spec, &working(), 2, 16, minus).unwrap().discrete_gradient();
            for i in 0..32 {
                let fd = (gp[i][0] - gm[i][0]) / (2.0 * eps);
                assert!((fd - h[(i, j)]).abs() < 1e-4 * h.amax(), "({i},{j}) {fd} vs {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn pendulum_equilibria_inertia() {
        let spec = LagrangianSpec::pendulum();
        let radii = working();
        // Fourier oracle: ∫σ̇² − π²σ² has one negative mode (m = 0) in period 1.
        let ell = find_critical(&perturbed(&spec, &radii, 1, 16, 0.0, 0.02, 4), &SolverParams::default()).unwrap();
        assert!(ell.converged, "{}", ell.gradient_norm);
        assert_eq!((ell.morse_index, ell.nullity), (1, 0));
        assert!(ell.loop_.nodes.iter().all(|x| minimal_image(x).norm() < 1e-9));
        assert!(ell.el_residual < 1e-6);
        // ∫σ̇² + π²σ² is positive definite.
        let hyp = find_critical(&perturbed(&spec, &radii, 1, 16, 0.5, 0.02, 5), &SolverParams::default()).unwrap();
        assert!(hyp.converged);
        assert_eq!((hyp.morse_index, hyp.nullity), (0, 0));
        // Period 2: modes m = ±1 of e^{iπmt} become null.
        let it = ell.loop_.iterate(2).unwrap();
        let (i2, n2, _, _) = hessian_inertia(&it.discrete_hessian().unwrap(), 1e-7);
        assert_eq!((i2, n2), (1, 2));
        // Refinement leaves (ι, ν) unchanged.
        let fine = ell.loop_.refine(2).unwrap();
        let (i3, n3, _, gap) = hessian_inertia(&fine.discrete_hessian().unwrap(), 1e-7);
        assert_eq!((i3, n3), (1, 0));
        assert!(gap.1 > 1e3 * gap.0.max(1e-300));
    }

    #[test]
    fn free_particle_converges_to_constant() {
        let spec = LagrangianSpec::free_particle(1);
        let report = find_critical(&perturbed(&spec, &working(), 1, 16, 0.4, 0.05, 6), &SolverParams::default()).unwrap();
        assert!(report.converged);
        assert_eq!((report.morse_index, report.nullity), (0, 1));
        let first = report.loop_.nodes[0][0];
        assert!(report.loop_.nodes.iter().all(|x| (x[0] - first).abs() < 1e-9));
    }

    #[test]
    fn iteration_compatibility() {
        let spec = LagrangianSpec::forced_pendulum();
        let l = perturbed(&spec, &working(), 1, 16, 0.2, 0.05, 7);
        let it = iterate_loop(&l, 3).unwrap();
        assert!((it.mean_action - l.mean_action).abs() < 1e-12);
        assert!((it.gradient_norm() - l.gradient_norm()).abs() < 1e-10);
        let g = l.metric_gradient();
        for (i, gi) in it.metric_gradient().iter().enumerate() {
            assert!((gi - &g[i % 16]).norm() < 1e-10);
        }
        let same = iterate_loop(&l, 1).unwrap();
        assert_eq!(same.nodes, l.nodes);
        assert_eq!(same.mean_action, l.mean_action);
    }

    #[test]
    fn refine_preserves_action() {
        let spec = LagrangianSpec::forced_pendulum();
        let l = perturbed(&spec, &working(), 1, 16, 0.2, 0.05, 8);
        let r = refine(&l, 2).unwrap();
        assert_eq!(r.k, 32);
        assert!((r.mean_action - l.mean_action).abs() < 1e-9, "{}", r.mean_action - l.mean_action);
        let c = BrokenLoop::constant(&spec, &working(), 1, 16, &[0.0]).unwrap();
        assert!((c.refine(2).unwrap().mean_action - c.mean_action).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let spec = LagrangianSpec::forced_pendulum();
        let l = perturbed(&spec, &working(), 2, 16, 0.2, 0.05, 10);
        let text = l.to_json().unwrap();
        let rec: LoopRecord = serde_json::from_str(&text).unwrap();
        let back = BrokenLoop::from_record(&spec, &working(), &rec).unwrap();
        assert!((back.mean_action - l.mean_action).abs() < 1e-12);
        for (a, b) in back.nodes.iter().zip(&l.nodes) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn sublevel_escape_barrier() {
        for spec in [LagrangianSpec::free_particle(1), LagrangianSpec::pendulum()] {
            let radii = estimate_radii(&spec).unwrap();
            let class = radii.constants_used.clone().unwrap();
            let k = radii.min_k();
            let shift = crate::lagrangian::verify_class(&spec, &Default::default()).unwrap().normalization_shift;
            let mut nodes = vec![DVector::from_element(1, 0.0); k];
            for (h, x) in nodes.iter_mut().enumerate().skip(1) {
                x[0] = 0.5 * radii.rho0 * (1.0 - 1e-9) + 1e-6 * h as f64;
            }
            let l = BrokenLoop::from_nodes(&spec, &radii, 1, k, nodes).unwrap();
            let bound = k as f64 * class.lower * (0.5 * radii.rho0 * (1.0 - 1e-9)).powi(2);
            assert!(l.mean_action + shift >= bound, "{} < {bound}", l.mean_action + shift);
        }
    }
}
