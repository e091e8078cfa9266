use nalgebra::DVector;

use super::{GridSpec, LagrangianSpec};
use crate::error::{Error, Result};

/// p = ∂_vL(t, q, v).
pub fn legendre(spec: &LagrangianSpec, t: f64, q: &[f64], v: &[f64]) -> DVector<f64> {
    spec.d_v(t, q, v)
}

/// The unique v with ∂_vL(t, q, v) = p.
///
/// Damped Newton on the convex function v ↦ L(t,q,v) − p·v, backtracking
/// until that function decreases.
pub fn inverse_legendre(spec: &LagrangianSpec, t: f64, q: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    let n = spec.dim();
    let p = DVector::from_column_slice(p);
    let tol = 1e-12 * (1.0 + p.norm());
    let mut v = DVector::zeros(n);
    let (mut l, mut dv, mut hess) = spec.fiber_data(t, q, v.as_slice());
    let mut phi = l - p.dot(&v);
    for _ in 0..200 {
        let grad = &dv - &p;
        if grad.norm() < tol {
            return Ok(v);
        }
        let step = hess.clone().cholesky().ok_or(Error::Singular("inverse Legendre"))?.solve(&grad);
        let mut alpha = 1.0;
        loop {
            let trial = &v - &step * alpha;
            let (lt, dvt, ht) = spec.fiber_data(t, q, trial.as_slice());
            let phit = lt - p.dot(&trial);
            // Near the solution phi is flat to rounding; accept if the gradient shrank.
            if phit <= phi - 1e-4 * alpha * grad.dot(&step) || (&dvt - &p).norm() < grad.norm() {
                v = trial;
                l = lt;
                dv = dvt;
                hess = ht;
                phi = phit;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::NoConvergence { what: "inverse Legendre", iterations: 0, residual: grad.norm() });
            }
        }
    }
    let _ = l;
    let residual = (&dv - &p).norm();
    if residual < tol * 10.0 {
        Ok(v)
    } else {
        Err(Error::NoConvergence { what: "inverse Legendre", iterations: 200, residual })
    }
}

/// H(t, q, p) = p·v* − L(t, q, v*) with v* = inverse_legendre(p).
pub fn dual_hamiltonian(spec: &LagrangianSpec, t: f64, q: &[f64], p: &[f64]) -> Result<f64> {
    let v = inverse_legendre(spec, t, q, p)?;
    let pv: f64 = p.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    Ok(pv - spec.value(t, q, v.as_slice()))
}

/// Unit vectors sampling the sphere in R^N; H is convex in p so the maximum
/// over the unit ball sits on the sphere.
pub(crate) fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci points on S², padded with zeros beyond three dimensions
            // plus the coordinate directions.
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut dirs: Vec<Vec<f64>> = (0..count)
                .map(|i| {
                    let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - y * y).sqrt();
                    let th = golden * i as f64;
                    let mut d = vec![0.0; n];
                    d[0] = r * th.cos();
                    d[1] = y;
                    d[2] = r * th.sin();
                    d
                })
                .collect();
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut d = vec![0.0; n];
                    d[i] = s;
                    dirs.push(d);
                }
            }
            dirs
        }
    }
}

/// C(L) = max{H(t, q, p) : |p| ≤ 1} over the (t, q) grid.
pub fn c_of_l(spec: &LagrangianSpec, grid: &GridSpec) -> Result<f64> {
    let n = spec.dim();
    let dirs = sphere_directions(n, 64);
    let mut best = f64::NEG_INFINITY;
    for t in grid.times() {
        for q in grid.positions(n) {
            for p in &dirs {
                best = best.max(dual_hamiltonian(spec, t, &q, p)?);
            }
        }
    }
    Ok(best)
}
