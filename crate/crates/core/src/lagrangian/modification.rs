use serde::{Deserialize, Serialize};

use super::legendre::sphere_directions;
use super::{c_of_l, verify_class, ClassReport, GridSpec, LagrangianSpec};
use crate::error::{Error, Result};

/// How L_R continues beyond |v| = R.
///
/// Along each ray v = r·u with r ≥ R, L_R is the second-order Taylor
/// polynomial in r of L(t, q, r·u) at r = R. Values and first and second
/// derivatives agree with L on the sphere |v| = R, and the growth is
/// quadratic in |v|.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterExtension {
    pub anchor_radius: f64,
    /// Smallest fiber-Hessian eigenvalue seen on the checked shell.
    pub shell_q1: f64,
    /// Minimum of L_R − (|v| − C(L)) over the checked grid.
    pub m2_margin: f64,
}

#[derive(Clone, Debug)]
pub struct ModifiedLagrangian {
    pub base: LagrangianSpec,
    pub radius: f64,
    /// Shell [R, 4R] on which Q1 and M2 were checked; [R, 2R] is the paper's band.
    pub blend_band: (f64, f64),
    pub outer_quadratic: OuterExtension,
    pub c_of_l: f64,
    pub class: ClassReport,
    spec: LagrangianSpec,
}

impl ModifiedLagrangian {
    /// L_R as a spec usable by every solver.
    pub fn spec(&self) -> &LagrangianSpec {
        &self.spec
    }
}

fn shell_grid(spec: &LagrangianSpec, radius: f64) -> GridSpec {
    let mut g = GridSpec::default_for(spec.dim());
    g.t_points = g.t_points.min(16);
    g.q_points = g.q_points.min(16);
    g.v_max = 4.0 * radius;
    g.v_points = 65.min(g.v_points * 2 + 1);
    g
}

struct Checked {
    shell_q1: f64,
    m2_margin: f64,
}

fn check(modified: &LagrangianSpec, radius: f64, c: f64) -> std::result::Result<Checked, String> {
    let g = shell_grid(modified, radius);
    let n = modified.dim();
    let mut shell_q1 = f64::INFINITY;
    let mut m2 = f64::INFINITY;
    for t in g.times() {
        for q in g.positions(n) {
            for v in g.velocities(n) {
                let speed = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                m2 = m2.min(modified.value(t, &q, &v) - (speed - c));
                if speed >= radius {
                    let lam = modified.d_vv(t, &q, &v).symmetric_eigenvalues().min();
                    shell_q1 = shell_q1.min(lam);
                }
            }
        }
    }
    // Beyond R each ray carries a quadratic in r, so the M2 minimum there is exact.
    for t in g.times() {
        for q in g.positions(n) {
            for u in sphere_directions(n, 64) {
                let v: Vec<f64> = u.iter().map(|x| x * radius).collect();
                let d = modified.derivs(t, &q, &v);
                let du = nalgebra::DVector::from_column_slice(&u);
                let f1 = d.d_v.dot(&du);
                let f2 = (&d.d_vv * &du).dot(&du);
                let x = if f2 > 0.0 { ((1.0 - f1) / f2).max(0.0) } else { 0.0 };
                m2 = m2.min(d.value + f1 * x + 0.5 * f2 * x * x - (radius + x - c));
            }
        }
    }
    if !(shell_q1 > 0.0) {
        return Err(format!("fiber Hessian loses positivity on the shell (min eigenvalue {shell_q1:e})"));
    }
    // L ≥ |v| − C(L) is tight where H attains C(L), so allow rounding there.
    if m2 < -1e-12 {
        return Err(format!("M2 floor violated (min of L_R - |v| + C(L) is {m2:e})"));
    }
    Ok(Checked { shell_q1, m2_margin: m2 })
}

/// Build L_R; on failure, search upward for the smallest radius that passes.
pub fn make_modification(spec: &LagrangianSpec, radius: f64) -> Result<ModifiedLagrangian> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParams("modification radius must be positive".into()));
    }
    let c = c_of_l(spec, &GridSpec::default_for(spec.dim()))?;
    let attempt = |r: f64| -> std::result::Result<(LagrangianSpec, Checked), String> {
        let m = spec.modified(r).map_err(|e| e.to_string())?;
        let checked = check(&m, r, c)?;
        Ok((m, checked))
    };
    match attempt(radius) {
        Ok((modified, checked)) => {
            let grid = GridSpec::default_for(spec.dim()).with_v_max(4.0 * radius);
            let class = verify_class(&modified, &grid)?;
            if !class.is_convex_quadratic_growth() {
                return Err(Error::Modification {
                    radius,
                    reason: "result is not convex quadratic-growth on the grid".into(),
                    min_admissible: None,
                });
            }
            Ok(ModifiedLagrangian {
                base: spec.clone(),
                radius,
                blend_band: (radius, 4.0 * radius),
                outer_quadratic: OuterExtension {
                    anchor_radius: radius,
                    shell_q1: checked.shell_q1,
                    m2_margin: checked.m2_margin,
                },
                c_of_l: c,
                class,
                spec: modified,
            })
        }
        Err(reason) => {
            let mut lo = radius;
            let mut hi = None;
            let mut r = radius;
            for _ in 0..8 {
                r *= 2.0;
                if attempt(r).is_ok() {
                    hi = Some(r);
                    break;
                }
                lo = r;
            }
            let min_admissible = hi.map(|mut hi| {
                for _ in 0..12 {
                    let mid = 0.5 * (lo + hi);
                    if attempt(mid).is_ok() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            });
            Err(Error::Modification { radius, reason, min_admissible })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{FamilyParams, Metric, MetricTerm, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn free_particle_is_a_fixed_point() {
        let spec = LagrangianSpec::free_particle(1);
        let m = make_modification(&spec, 0.7).unwrap();
        for i in -40..=40 {
            let v = 0.2 * i as f64;
            let a = m.spec().value(0.3, &[0.1], &[v]);
            assert!((a - 0.5 * v * v).abs() < 1e-12 * (1.0 + v * v));
        }
    }

    #[test]
    fn quartic_equal_inside_differs_outside() {
        let spec = LagrangianSpec::build(&FamilyParams::quartic_pendulum(1.0)).unwrap();
        let m = make_modification(&spec, 2.0).unwrap();
        let (t, q) = (0.2, [0.3]);
        assert_eq!(m.spec().value(t, &q, &[1.9]), spec.value(t, &q, &[1.9]));
        assert_eq!(m.spec().value(t, &q, &[-1.9]), spec.value(t, &q, &[-1.9]));
        assert!((m.spec().value(t, &q, &[4.0]) - spec.value(t, &q, &[4.0])).abs() > 1.0);
        assert!(m.class.is_convex_quadratic_growth());
    }

    #[test]
    fn second_order_contact_at_the_sphere() {
        let spec = LagrangianSpec::build(&FamilyParams::quartic_pendulum(1.0)).unwrap();
        let m = make_modification(&spec, 2.0).unwrap();
        for v in [2.0 - 1e-9, 2.0 + 1e-9] {
            let a = m.spec().derivs(0.1, &[0.2], &[v]);
            let b = spec.derivs(0.1, &[0.2], &[v]);
            assert!((a.d_v[0] - b.d_v[0]).abs() < 1e-6);
            assert!((a.d_vv[(0, 0)] - b.d_vv[(0, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn pendulum_m2_grid_scan() {
        let spec = LagrangianSpec::pendulum();
        let m = make_modification(&spec, 3.0).unwrap();
        assert!((m.c_of_l - 0.75).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let t = rng.gen_range(0.0..1.0);
            let q = rng.gen_range(0.0..1.0);
            let v = rng.gen_range(-20.0..20.0);
            let val = m.spec().value(t, &[q], &[v]);
            assert!(val - (v.abs() - m.c_of_l) >= -1e-12);
            if v.abs() <= 3.0 {
                assert_eq!(val, spec.value(t, &[q], &[v]));
            }
        }
    }

    #[test]
    fn small_radius_reports_admissible_one() {
        // With R = 0.1 the slope at the sphere is too small for the M2 floor.
        let spec = LagrangianSpec::build(&FamilyParams::quartic_pendulum(1.0)).unwrap();
        match make_modification(&spec, 0.1) {
            Err(Error::Modification { min_admissible: Some(r), .. }) => {
                assert!(r > 0.1 && r < 3.0);
                assert!(make_modification(&spec, r).is_ok());
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn two_dimensional_metric_modification() {
        let params = FamilyParams::FiberwiseQuadratic {
            dim: 2,
            metric: Metric {
                constant: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                terms: vec![MetricTerm { matrix: vec![vec![0.2, 0.0], vec![0.0, 0.1]], q_freq: vec![1.0, 0.0], q_phase: 0.0 }],
            },
            potential: Potential::default(),
        };
        let spec = LagrangianSpec::build(&params).unwrap();
        let m = make_modification(&spec, 1.5).unwrap();
        // Fiberwise quadratic Lagrangians are reproduced exactly.
        let v = [3.0, -4.0];
        assert!((m.spec().value(0.0, &[0.3, 0.1], &v) - spec.value(0.0, &[0.3, 0.1], &v)).abs() < 1e-11);
    }
}
