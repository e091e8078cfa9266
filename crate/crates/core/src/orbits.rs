//! Registry of periodic orbits found by the search, deduplicated up to time
//! shift, deck translation and iteration.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::broken::{minimal_image, BrokenLoop};
use crate::error::{Error, Result};
use crate::index::IndexPair;
use crate::lagrangian::LagrangianSpec;
use crate::segment::UniquenessRadii;

pub const SCHEMA_VERSION: u32 = 1;

/// Default distinctness tolerance in the phase-space sup norm.
pub const DEDUPE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantBound {
    /// max_q ∫₀¹ L(t, q, 0) dt over the grid.
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Bound on what the grid can miss, from the q-Hessian near the maximum.
    pub margin: f64,
}

fn grid_points(dim: usize) -> usize {
    match dim {
        1 => 128,
        2 => 32,
        3 => 12,
        _ => 6,
    }
}

/// The action of the constant loops is at most `value + margin`; the
/// theorem's bound a must exceed it.
pub fn constant_action_bound(spec: &LagrangianSpec) -> ConstantBound {
    let n = spec.dim();
    let g = grid_points(n);
    let h = 1.0 / g as f64;
    // Trapezoid in t is spectrally accurate for 1-periodic integrands.
    let times: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
    let zero = vec![0.0; n];
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut curvature: f64 = 0.0;
    let total = g.pow(n as u32);
    for idx in 0..total {
        let q: Vec<f64> = (0..n).map(|d| ((idx / g.pow(d as u32)) % g) as f64 * h).collect();
        let value = times.iter().map(|&t| spec.value(t, &q, &zero)).sum::<f64>() / times.len() as f64;
        if value > best.0 {
            best = (value, q.clone());
        }
    }
    for t in times.iter().step_by(4) {
        curvature = curvature.max(spec.d_qq(*t, &best.1, &zero).norm());
    }
    let reach = 0.5 * h * (n as f64).sqrt();
    ConstantBound { value: best.0, argmax: best.1, margin: 0.5 * reach * reach * curvature }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Sup-norm distance in (q, v) at common node times between the longer loop
/// and the iterate of the shorter, minimized over integer time shifts. None
/// when the periods are not commensurate by an integer ratio.
pub fn phase_distance(a: &BrokenLoop, b: &BrokenLoop) -> Option<f64> {
    let (s, l) = if a.period <= b.period { (a, b) } else { (b, a) };
    if l.period % s.period != 0 || s.dim() != l.dim() {
        return None;
    }
    let g = gcd(s.k, l.k);
    let (fs, fl) = (s.k / g, l.k / g);
    let ms = s.node_count();
    let mut best = f64::INFINITY;
    for shift in 0..s.period {
        let mut worst: f64 = 0.0;
        for h in 0..l.period * g {
            let (il, is) = (h * fl, (h * fs + shift * s.k) % ms);
            let dq = minimal_image(&(&l.nodes[il] - &s.nodes[is])).amax();
            let dv = (&l.segments[il].v0 - &s.segments[is].v0).amax();
            worst = worst.max(dq).max(dv);
            if worst >= best {
                break;
            }
        }
        best = best.min(worst);
    }
    Some(best)
}

/// Same orbit up to iteration, integer time shift and deck translation.
pub fn equivalent(a: &BrokenLoop, b: &BrokenLoop, tol: f64) -> bool {
    phase_distance(a, b).is_some_and(|d| d <= tol)
}

/// Whether two degenerate critical loops lie in one connected family of
/// critical loops, tested along the straight interpolation of their nodes.
pub fn same_critical_family(a: &BrokenLoop, b: &BrokenLoop, gradient_tol: f64) -> bool {
    let (s, l) = if a.period <= b.period { (a, b) } else { (b, a) };
    if l.period % s.period != 0 || s.k != l.k || s.dim() != l.dim() {
        return false;
    }
    let Ok(s) = s.iterate(l.period / s.period) else {
        return false;
    };
    let steps: Vec<DVector<f64>> = s.nodes.iter().zip(&l.nodes).map(|(x, y)| minimal_image(&(y - x))).collect();
    for lambda in [0.25, 0.5, 0.75] {
        let nodes = s.nodes.iter().zip(&steps).map(|(x, d)| x + d * lambda).collect();
        match BrokenLoop::from_nodes(l.spec(), l.radii(), l.period, l.k, nodes) {
            Ok(mid) if mid.gradient_norm() < gradient_tol => {}
            _ => return false,
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// "constant", "fourier" or "iterate".
    pub seed_kind: String,
    pub seed_index: usize,
    pub rng_seed: u64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub el_residual: f64,
    pub modification_radius: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OrbitRecord {
    pub id: String,
    pub period: usize,
    pub loop_: BrokenLoop,
    /// Mean action over the period.
    pub action: f64,
    pub pair: IndexPair,
    pub mean_index: f64,
    /// Largest |v| along the glued trajectory.
    pub max_speed: f64,
    pub provenance: Provenance,
}

/// One line of the registry file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitLine {
    pub schema: u32,
    pub id: String,
    pub period: usize,
    pub k: usize,
    pub nodes: Vec<Vec<f64>>,
    pub action: f64,
    pub iota: i64,
    pub nu: usize,
    pub mean_index: f64,
    pub max_speed: f64,
    pub provenance: Provenance,
}

/// Hash of the node sequence rounded to 1e-6, reduced mod 1 and rotated to
/// the lexicographically least integer time shift.
pub fn orbit_id(loop_: &BrokenLoop) -> String {
    let rounded: Vec<Vec<i64>> = loop_
        .nodes
        .iter()
        .map(|x| x.iter().map(|c| ((c * 1e6).round() as i64).rem_euclid(1_000_000)).collect())
        .collect();
    let m = rounded.len();
    let canonical = (0..loop_.period)
        .map(|j| (0..m).map(|h| rounded[(h + j * loop_.k) % m].clone()).collect::<Vec<_>>())
        .min()
        .unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(format!("{}:{}:{}:", loop_.period, loop_.k, loop_.dim()).as_bytes());
    for node in &canonical {
        for c in node {
            hasher.update(c.to_le_bytes());
        }
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl OrbitRecord {
    pub fn new(loop_: BrokenLoop, pair: IndexPair, mean_index: f64, provenance: Provenance) -> Self {
        let max_speed = loop_.glued_trajectory().max_speed();
        OrbitRecord {
            id: orbit_id(&loop_),
            period: loop_.period,
            action: loop_.mean_action,
            loop_,
            pair,
            mean_index,
            max_speed,
            provenance,
        }
    }

    pub fn to_line(&self) -> OrbitLine {
        OrbitLine {
            schema: SCHEMA_VERSION,
            id: self.id.clone(),
            period: self.period,
            k: self.loop_.k,
            nodes: self.loop_.nodes.iter().map(|x| x.iter().cloned().collect()).collect(),
            action: self.action,
            iota: self.pair.iota,
            nu: self.pair.nu,
            mean_index: self.mean_index,
            max_speed: self.max_speed,
            provenance: self.provenance.clone(),
        }
    }

    /// Rebuild from a registry line; the segments are solved again.
    pub fn from_line(spec: &LagrangianSpec, radii: &UniquenessRadii, line: &OrbitLine) -> Result<Self> {
        if line.schema != SCHEMA_VERSION {
            return Err(Error::InvalidParams(format!("registry schema {} is not {SCHEMA_VERSION}", line.schema)));
        }
        let nodes = line.nodes.iter().map(|x| DVector::from_column_slice(x)).collect();
        let loop_ = BrokenLoop::from_nodes(spec, radii, line.period, line.k, nodes)?;
        let mut record = OrbitRecord::new(
            loop_,
            IndexPair { iota: line.iota, nu: line.nu },
            line.mean_index,
            line.provenance.clone(),
        );
        record.id = line.id.clone();
        Ok(record)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// Admitted in place of longer-period representatives of the same orbit.
    Replaced(Vec<String>),
    AboveBound,
    Duplicate(String),
}

impl Admission {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Admission::Admitted | Admission::Replaced(_))
    }
}

#[derive(Clone, Debug)]
pub struct Registry {
    pub records: Vec<OrbitRecord>,
    pub dedupe_tol: f64,
    pub bound_a: f64,
    /// Gradient tolerance for merging degenerate critical families; None
    /// disables the family test.
    pub family_tol: Option<f64>,
}

impl Registry {
    pub fn new(bound_a: f64, dedupe_tol: f64) -> Self {
        Registry { records: Vec::new(), dedupe_tol, bound_a, family_tol: Some(1e-6) }
    }

    /// A registry whose bound is checked against the constant-loop actions.
    pub fn for_spec(spec: &LagrangianSpec, bound_a: f64, dedupe_tol: f64) -> Result<Self> {
        let c = constant_action_bound(spec);
        if !(bound_a > c.value + c.margin) {
            return Err(Error::Config(format!(
                "action bound a = {bound_a} must exceed the constant-loop maximum {} (grid margin {:e})",
                c.value, c.margin
            )));
        }
        Ok(Self::new(bound_a, dedupe_tol))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn matches(&self, a: &OrbitRecord, b: &OrbitRecord) -> bool {
        if equivalent(&a.loop_, &b.loop_, self.dedupe_tol) {
            return true;
        }
        match self.family_tol {
            Some(tol) if a.pair.nu > 0 && b.pair.nu > 0 => same_critical_family(&a.loop_, &b.loop_, tol),
            _ => false,
        }
    }

    /// Insert unless above the bound or already represented; a shorter
    /// period replaces longer representatives.
    pub fn admit(&mut self, record: OrbitRecord) -> Admission {
        if !(record.action < self.bound_a) {
            return Admission::AboveBound;
        }
        let hits: Vec<usize> = (0..self.records.len()).filter(|&i| self.matches(&self.records[i], &record)).collect();
        if let Some(&i) = hits.iter().find(|&&i| self.records[i].period <= record.period) {
            return Admission::Duplicate(self.records[i].id.clone());
        }
        if hits.is_empty() {
            self.records.push(record);
            return Admission::Admitted;
        }
        let replaced = hits.iter().map(|&i| self.records[i].id.clone()).collect();
        let first = hits[0];
        for &i in hits.iter().rev() {
            self.records.remove(i);
        }
        self.records.insert(first, record);
        Admission::Replaced(replaced)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(&r.to_line())?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(spec: &LagrangianSpec, radii: &UniquenessRadii, input: R) -> Result<Vec<OrbitRecord>> {
        let mut out = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: OrbitLine = serde_json::from_str(&line)?;
            out.push(OrbitRecord::from_line(spec, radii, &parsed)?);
        }
        Ok(out)
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,period,action,iota,nu,mean_index,max_speed")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:.12},{},{},{:.6},{:.9}",
                r.id, r.period, r.action, r.pair.iota, r.pair.nu, r.mean_index, r.max_speed
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broken::{find_critical, SolverParams};
    use crate::index::index_of_orbit;
    use std::f64::consts::PI;

    fn radii() -> UniquenessRadii {
        UniquenessRadii::working(1.0 / 16.0, 0.2)
    }

    fn provenance() -> Provenance {
        Provenance {
            seed_kind: "constant".into(),
            seed_index: 0,
            rng_seed: 0,
            iterations: 0,
            gradient_norm: 0.0,
            el_residual: 0.0,
            modification_radius: None,
        }
    }

    fn record(spec: &LagrangianSpec, loop_: BrokenLoop) -> OrbitRecord {
        let report = find_critical(&loop_, &SolverParams::default()).unwrap();
        assert!(report.converged);
        let pair = index_of_orbit(spec, &report).unwrap();
        OrbitRecord::new(report.loop_, pair, 0.0, provenance())
    }

    #[test]
    fn constant_bounds() {
        let b = constant_action_bound(&LagrangianSpec::free_particle(2));
        assert_eq!((b.value, b.margin), (0.0, 0.0));
        let b = constant_action_bound(&LagrangianSpec::pendulum());
        assert!((b.value - 0.25).abs() < 1e-15 && b.argmax == vec![0.0]);
        // Grid spacing 1/128: ½(h/2)²·π²/2 (∂qq of ¼cos 2πq is π² cos).
        assert!((b.margin - 0.5 * (0.5 / 128.0f64).powi(2) * PI * PI).abs() < 1e-12);
        // ∫¼(1 + ½cos 2πt) dt = ¼; the trapezoid rule is exact for this integrand.
        let b = constant_action_bound(&LagrangianSpec::forced_pendulum());
        assert!((b.value - 0.25).abs() < 1e-15);
        let simpson: f64 = (0..=100)
            .map(|i| {
                let w = if i == 0 || i == 100 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * 0.25 * (1.0 + 0.5 * (2.0 * PI * i as f64 / 100.0).cos())
            })
            .sum::<f64>()
            / 300.0;
        assert!((b.value - simpson).abs() < 1e-12);
    }

    #[test]
    fn iterates_and_shifts_are_equivalent() {
        let spec = LagrangianSpec::forced_pendulum();
        let nodes: Vec<_> = (0..32).map(|h| DVector::from_element(1, 0.1 * (PI * h as f64 / 16.0).sin() + 0.02)).collect();
        let a = BrokenLoop::from_nodes(&spec, &radii(), 2, 16, nodes.clone()).unwrap();
        let it = a.iterate(3).unwrap();
        assert!(equivalent(&a, &it, DEDUPE_TOL) && equivalent(&it, &a, DEDUPE_TOL));
        let mut rotated = nodes[16..].to_vec();
        rotated.extend_from_slice(&nodes[..16]);
        let shifted = BrokenLoop::from_nodes(&spec, &radii(), 2, 16, rotated).unwrap();
        assert!(equivalent(&a, &shifted, DEDUPE_TOL));
        assert_eq!(orbit_id(&a), orbit_id(&shifted));
        // Deck translation.
        let moved: Vec<_> = nodes.iter().map(|x| x.add_scalar(1.0)).collect();
        let moved = BrokenLoop::from_nodes(&spec, &radii(), 2, 16, moved).unwrap();
        assert!(equivalent(&a, &moved, DEDUPE_TOL));
        assert_eq!(orbit_id(&a), orbit_id(&moved));
        // A half-period shift is not a symmetry of the forced system.
        let mut half = nodes[8..].to_vec();
        half.extend_from_slice(&nodes[..8]);
        let half = BrokenLoop::from_nodes(&spec, &radii(), 2, 16, half).unwrap();
        assert!(!equivalent(&a, &half, DEDUPE_TOL));
    }

    #[test]
    fn equilibria_are_distinct() {
        let spec = LagrangianSpec::pendulum();
        let e = BrokenLoop::constant(&spec, &radii(), 1, 16, &[0.0]).unwrap();
        let h = BrokenLoop::constant(&spec, &radii(), 1, 16, &[0.5]).unwrap();
        assert!((phase_distance(&e, &h).unwrap() - 0.5).abs() < 1e-12);
        assert!(!equivalent(&e, &h, DEDUPE_TOL));
        let odd = BrokenLoop::constant(&spec, &radii(), 3, 16, &[0.0]).unwrap();
        let two = BrokenLoop::constant(&spec, &radii(), 2, 16, &[0.0]).unwrap();
        assert!(phase_distance(&odd, &two).is_none());
    }

    #[test]
    fn admission_rules() {
        let spec = LagrangianSpec::pendulum();
        let mut reg = Registry::for_spec(&spec, 0.5, DEDUPE_TOL).unwrap();
        assert!(Registry::for_spec(&spec, 0.2, DEDUPE_TOL).is_err());
        let elliptic = record(&spec, BrokenLoop::constant(&spec, &radii(), 1, 16, &[0.0]).unwrap());
        assert_eq!(elliptic.pair, IndexPair { iota: 1, nu: 0 });
        // The period-2 copy arrives first and is later replaced.
        let two = OrbitRecord::new(elliptic.loop_.iterate(2).unwrap(), IndexPair { iota: 1, nu: 2 }, 1.0, provenance());
        assert_eq!(reg.admit(two.clone()), Admission::Admitted);
        assert_eq!(reg.admit(elliptic.clone()), Admission::Replaced(vec![two.id.clone()]));
        assert_eq!(reg.admit(elliptic.clone()), Admission::Duplicate(elliptic.id.clone()));
        for n in 2..=4 {
            let it = OrbitRecord::new(elliptic.loop_.iterate(n).unwrap(), elliptic.pair, 1.0, provenance());
            assert!(matches!(reg.admit(it), Admission::Duplicate(_)));
        }
        // A new hyperbolic orbit found from a nearby seed.
        let nodes = (0..16).map(|h| DVector::from_element(1, 0.47 + 0.01 * (h % 3) as f64)).collect();
        let hyperbolic = record(&spec, BrokenLoop::from_nodes(&spec, &radii(), 1, 16, nodes).unwrap());
        assert!((hyperbolic.loop_.nodes[0][0] - 0.5).abs() < 1e-8);
        assert_eq!(hyperbolic.pair, IndexPair { iota: 0, nu: 0 });
        assert_eq!(reg.admit(hyperbolic), Admission::Admitted);
        assert_eq!(reg.len(), 2);
        let mut again = reg.clone();
        for r in reg.records.clone() {
            assert!(!again.admit(r).is_admitted());
        }
        assert_eq!(again.len(), 2);
        let mut tight = Registry::new(0.0, DEDUPE_TOL);
        assert_eq!(tight.admit(elliptic), Admission::AboveBound);
    }

    #[test]
    fn free_particle_constants_form_one_family() {
        let spec = LagrangianSpec::free_particle(1);
        let mut reg = Registry::for_spec(&spec, 0.5, DEDUPE_TOL).unwrap();
        for (i, q) in [0.1, 0.65, 0.3].iter().enumerate() {
            let period = 1 + i % 2;
            let r = record(&spec, BrokenLoop::constant(&spec, &radii(), period, 16, &[*q]).unwrap());
            assert_eq!(r.pair.nu, 1);
            let verdict = reg.admit(r);
            assert_eq!(verdict.is_admitted(), i == 0, "{verdict:?}");
        }
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = LagrangianSpec::pendulum();
        let mut reg = Registry::for_spec(&spec, 0.5, DEDUPE_TOL).unwrap();
        for q in [0.0, 0.5] {
            reg.admit(record(&spec, BrokenLoop::constant(&spec, &radii(), 1, 16, &[q]).unwrap()));
        }
        let mut buf = Vec::new();
        reg.write_jsonl(&mut buf).unwrap();
        let back = Registry::read_jsonl(&spec, &radii(), buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&reg.records) {
            assert_eq!(a.to_line(), b.to_line());
        }
        let mut csv = Vec::new();
        reg.write_summary_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("id,period,action,iota,nu,mean_index,max_speed"));
    }
}
