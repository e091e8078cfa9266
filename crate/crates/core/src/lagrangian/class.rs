use serde::{Deserialize, Serialize};

use super::LagrangianSpec;
use crate::error::{Error, Result};

/// Sample grid over `[0,1) × [0,1)^N × {|v| ≤ v_max}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_points: usize,
    pub q_points: usize,
    pub v_points: usize,
    pub v_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { t_points: 32, q_points: 32, v_points: 33, v_max: 4.0 }
    }
}

impl GridSpec {
    /// 32 points per dimension, thinned in higher dimension so the whole grid
    /// stays near 2^18 points.
    pub fn default_for(dim: usize) -> Self {
        let per = ((1u64 << 18) as f64).powf(1.0 / (2 * dim + 1) as f64).floor() as usize;
        let per = per.clamp(4, 32);
        GridSpec { t_points: per, q_points: per, v_points: per | 1, v_max: 4.0 }
    }

    pub fn with_v_max(mut self, v_max: f64) -> Self {
        self.v_max = v_max;
        self
    }

    pub(crate) fn times(&self) -> Vec<f64> {
        (0..self.t_points).map(|i| i as f64 / self.t_points as f64).collect()
    }

    pub(crate) fn positions(&self, dim: usize) -> Vec<Vec<f64>> {
        lattice(dim, self.q_points, |c| c as f64 / self.q_points as f64)
    }

    pub(crate) fn velocities(&self, dim: usize) -> Vec<Vec<f64>> {
        let m = self.v_points.max(2);
        let step = 2.0 * self.v_max / (m - 1) as f64;
        lattice(dim, m, |c| -self.v_max + step * c as f64)
            .into_iter()
            .filter(|v| v.iter().map(|x| x * x).sum::<f64>() <= self.v_max * self.v_max * (1.0 + 1e-12))
            .collect()
    }
}

fn lattice(dim: usize, per: usize, coord: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let total = per.pow(dim as u32);
    (0..total)
        .map(|idx| {
            let mut rem = idx;
            (0..dim)
                .map(|_| {
                    let c = rem % per;
                    rem /= per;
                    coord(c)
                })
                .collect()
        })
        .collect()
}

/// Grid estimates of the Q1/Q2 constants and the quadratic sandwich.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassReport {
    /// ℓ0: infimum of the smallest eigenvalue of d_vv.
    pub q1_lower_bound: f64,
    /// Suprema of |d_vv|, |d_qv|/(1+|v|) and |d_qq|/(1+|v|²), entrywise.
    pub q2_bounds: [f64; 3],
    /// Growth of L/|v| between |v| = v_max/2 and |v| = v_max (minimum over the grid).
    pub superlinearity_margin: f64,
    /// ℓ̲ with ℓ̲|v|² ≤ L + shift.
    pub lower_quadratic: f64,
    /// ℓ̄ with L + shift ≤ ℓ̄(|v|² + 1).
    pub upper_quadratic: f64,
    /// Additive constant making L + shift ≥ ℓ̲|v|².
    pub normalization_shift: f64,
    /// T1 holds on the grid but some Q2 quotient keeps growing with |v|.
    pub tonelli_only: bool,
    pub sample_grid: GridSpec,
    pub points_checked: usize,
}

impl ClassReport {
    /// ℓ1: the largest of the three Q2 bounds.
    pub fn ell1(&self) -> f64 {
        self.q2_bounds.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_convex_quadratic_growth(&self) -> bool {
        self.q1_lower_bound > 0.0 && !self.tonelli_only
    }
}

#[derive(Default)]
struct Quotients {
    q1: f64,
    q2: [f64; 3],
}

fn max_abs(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Scan the grid for the class constants; a non-positive fiber Hessian is an error.
pub fn verify_class(spec: &LagrangianSpec, grid: &GridSpec) -> Result<ClassReport> {
    let n = spec.dim();
    let times = grid.times();
    let positions = grid.positions(n);
    let velocities = grid.velocities(n);
    let half = 0.5 * grid.v_max;

    let mut inner = Quotients { q1: f64::INFINITY, ..Default::default() };
    let mut whole = Quotients { q1: f64::INFINITY, ..Default::default() };
    let mut min_l0 = f64::INFINITY;
    let mut b_max: f64 = 0.0;
    let mut superlinear = f64::INFINITY;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut points = 0usize;

    for &t in &times {
        for q in &positions {
            let zero = vec![0.0; n];
            let l0 = spec.value(t, q, &zero);
            let b = spec.d_v(t, q, &zero);
            min_l0 = min_l0.min(l0);
            b_max = b_max.max(b.norm());
            samples.push((l0, b.norm_squared()));
            for v in &velocities {
                let d = spec.derivs(t, q, v);
                points += 1;
                let speed2: f64 = v.iter().map(|x| x * x).sum();
                let speed = speed2.sqrt();
                let lam = d.d_vv.clone().symmetric_eigenvalues().min();
                if !(lam > 0.0) {
                    return Err(Error::Q1Violation { t, q: q.clone(), v: v.clone(), eigenvalue: lam });
                }
                let quot = [max_abs(&d.d_vv), max_abs(&d.d_vq) / (1.0 + speed), max_abs(&d.d_qq) / (1.0 + speed2)];
                for target in [&mut whole, &mut inner] {
                    target.q1 = target.q1.min(lam);
                    for i in 0..3 {
                        target.q2[i] = target.q2[i].max(quot[i]);
                    }
                    if speed > half * (1.0 + 1e-12) {
                        break;
                    }
                }
                if speed > 0.0 {
                    let halfway: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
                    let growth = d.value / speed - spec.value(t, q, &halfway) / (0.5 * speed);
                    if speed >= half {
                        superlinear = superlinear.min(growth);
                    }
                }
            }
        }
    }

    let ell0 = whole.q1;
    let coupled = b_max > 1e-12;
    let (lower, shift) = if coupled {
        let worst = samples.iter().map(|(l0, b2)| l0 - b2 / ell0).fold(f64::INFINITY, f64::min);
        (0.25 * ell0, (-worst).max(0.0))
    } else {
        (0.5 * ell0, (-min_l0).max(0.0))
    };
    // Recompute the upper quotient with the shift included.
    let mut upper: f64 = lower;
    for &t in &times {
        for q in &positions {
            for v in &velocities {
                let speed2: f64 = v.iter().map(|x| x * x).sum();
                upper = upper.max((spec.value(t, q, v) + shift) / (speed2 + 1.0));
            }
        }
    }

    let tonelli_only = (0..3).any(|i| whole.q2[i] > 1.5 * inner.q2[i] + 1e-12);
    Ok(ClassReport {
        q1_lower_bound: ell0,
        q2_bounds: whole.q2,
        superlinearity_margin: superlinear,
        lower_quadratic: lower,
        upper_quadratic: upper,
        normalization_shift: shift,
        tonelli_only,
        sample_grid: grid.clone(),
        points_checked: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::FamilyParams;
    use std::f64::consts::PI;

    #[test]
    fn free_particle_constants() {
        let r = verify_class(&LagrangianSpec::free_particle(1), &GridSpec::default()).unwrap();
        assert!((r.q1_lower_bound - 1.0).abs() < 1e-14);
        assert!((r.lower_quadratic - 0.5).abs() < 1e-14);
        assert!((r.upper_quadratic - 0.5).abs() < 1e-14);
        assert_eq!(r.normalization_shift, 0.0);
        assert!(r.is_convex_quadratic_growth());
    }

    #[test]
    fn pendulum_third_bound_is_pi_squared() {
        let r = verify_class(&LagrangianSpec::pendulum(), &GridSpec::default()).unwrap();
        // Oracle: |d_qq| = π²|cos 2πq| peaks at q = 0 and q = 1/2, both on the grid, with v = 0.
        assert!((r.q1_lower_bound - 1.0).abs() < 1e-14);
        assert!(r.q2_bounds[2] >= PI * PI * (1.0 - 1e-12));
        assert!((r.q2_bounds[2] - PI * PI).abs() < 1e-10);
        assert!(r.q2_bounds[1].abs() < 1e-14);
        assert!((r.normalization_shift - 0.25).abs() < 1e-14);
        assert!(r.lower_quadratic <= r.upper_quadratic);
        assert!(r.is_convex_quadratic_growth());
    }

    #[test]
    fn quartic_is_tonelli_only() {
        let spec = LagrangianSpec::build(&FamilyParams::quartic_pendulum(1.0)).unwrap();
        let r = verify_class(&spec, &GridSpec::default().with_v_max(10.0)).unwrap();
        assert!(r.tonelli_only);
        // d_vv = 1 + 3v² at |v| = 10 is the grid maximum.
        assert!((r.q2_bounds[0] - 301.0).abs() < 1e-9);
        assert!(r.superlinearity_margin > 0.0);
    }

    #[test]
    fn grid_budget_shrinks_with_dimension() {
        assert_eq!(GridSpec::default_for(1).q_points, 32);
        let g2 = GridSpec::default_for(2);
        assert!(g2.q_points < 32 && g2.q_points >= 8);
        assert!(GridSpec::default().velocities(1).contains(&vec![0.0]));
    }
}
