//! Invariant suites of every module, run against the configured Lagrangian.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::broken::{find_critical, BrokenLoop, CriticalPointReport};
use crate::campaign::radii_for;
use crate::config::CampaignConfig;
use crate::error::{Error, Result};
use crate::flow::{integrate_el, integrate_linearized, measured_order, PhaseState};
use crate::homotopy::{bangert, moving_point_path, shorten, shorten_homotopy, SampledLoop};
use crate::index::{index_of_orbit, iteration_profile};
use crate::lagrangian::{verify_class, GridSpec, LagrangianSpec};
use crate::orbits::{constant_action_bound, equivalent, same_critical_family, Admission, OrbitRecord, Provenance, Registry, DEDUPE_TOL};
use crate::segment::{probe_uniqueness, UniquenessRadii};

/// Iterates up to this order enter the inequality table.
pub const VERIFY_MAX_N: usize = 32;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityRow {
    pub orbit: usize,
    pub n: usize,
    pub iota: i64,
    pub nu: usize,
    pub mean_index: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub lagrangian: String,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
    pub inequalities: Vec<InequalityRow>,
}

struct Ctx {
    spec: LagrangianSpec,
    radii: UniquenessRadii,
    config: CampaignConfig,
}

fn fail(msg: String) -> Error {
    Error::InvalidParams(msg)
}

fn suite_class(spec: &LagrangianSpec) -> Result<String> {
    let r = verify_class(spec, &GridSpec::default_for(spec.dim()))?;
    Ok(format!(
        "l0 = {:.4}, lower = {:.4}, upper = {:.4}, points = {}{}",
        r.q1_lower_bound,
        r.lower_quadratic,
        r.upper_quadratic,
        r.points_checked,
        if r.tonelli_only { ", Tonelli only" } else { "" }
    ))
}

fn suite_radii(ctx: &Ctx) -> Result<String> {
    let r = &ctx.radii;
    if !(r.eps0 > 0.0 && r.rho0 > 0.0) {
        return Err(fail(format!("non-positive radii eps0 = {}, rho0 = {}", r.eps0, r.rho0)));
    }
    Ok(format!("{} radii eps0 = {:.4}, rho0 = {:.4}", ctx.config.radii.mode, r.eps0, r.rho0))
}

fn suite_flow(ctx: &Ctx) -> Result<String> {
    let n = ctx.spec.dim();
    let state = PhaseState::new(&vec![0.1; n], &vec![0.3; n]);
    let tr = integrate_el(&ctx.spec, &state, 0.0, 1.0, 64)?;
    let coarse = integrate_el(&ctx.spec, &state, 0.0, 1.0, 32)?;
    let diff = (&tr.last().q - &coarse.last().q).amax() + (&tr.last().v - &coarse.last().v).amax();
    // Quadratic Lagrangians without forces are integrated exactly.
    let order = if diff < 1e-12 { f64::NAN } else { measured_order(&ctx.spec, &state, 0.0, 1.0, 32)? };
    if !order.is_nan() && (order - 4.0).abs() > 0.5 {
        return Err(fail(format!("observed order {order:.3}")));
    }
    let defect = integrate_linearized(&ctx.spec, &tr)?.max_defect();
    if defect > 1e-8 {
        return Err(fail(format!("symplectic defect {defect:e}")));
    }
    let order = if order.is_nan() { "exact".to_string() } else { format!("{order:.3}") };
    Ok(format!("order {order}, symplectic defect {defect:.1e}"))
}

fn suite_segment(ctx: &Ctx) -> Result<String> {
    let p = probe_uniqueness(&ctx.spec, &ctx.radii, 10, 5, ctx.config.seeds.rng_seed)?;
    if p.converged_starts == 0 || p.max_spread > 1e-7 {
        return Err(fail(format!("{} converged starts, spread {:e}", p.converged_starts, p.max_spread)));
    }
    Ok(format!("{} pairs, {} converged starts, spread {:.1e}", p.pairs, p.converged_starts, p.max_spread))
}

fn noisy_loop(ctx: &Ctx, period: usize, seed: u64) -> Result<BrokenLoop> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ctx.spec.dim();
    let k = ctx.config.k;
    let center: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let nodes = (0..period * k)
        .map(|_| DVector::from_iterator(n, center.iter().map(|c| c + rng.gen_range(-0.03..0.03))))
        .collect();
    BrokenLoop::from_nodes(&ctx.spec, &ctx.radii, period, k, nodes)
}

fn suite_broken(ctx: &Ctx) -> Result<String> {
    let l = noisy_loop(ctx, 1, ctx.config.seeds.rng_seed)?;
    let g = l.discrete_gradient();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in [0, l.node_count() / 2, l.node_count() - 1] {
        for d in 0..l.dim() {
            let shifted = |sign: f64| -> Result<f64> {
                let mut nodes = l.nodes.clone();
                nodes[i][d] += sign * h;
                Ok(BrokenLoop::from_nodes(&ctx.spec, &ctx.radii, 1, l.k, nodes)?.mean_action)
            };
            let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
            worst = worst.max((fd - g[i][d]).abs() / g[i][d].abs().max(1e-2));
        }
    }
    if worst > 1e-5 {
        return Err(fail(format!("gradient vs finite differences {worst:e}")));
    }
    let it = l.iterate(3)?;
    let drift = (it.mean_action - l.mean_action).abs();
    if drift > 1e-12 {
        return Err(fail(format!("iterate changes the mean action by {drift:e}")));
    }
    Ok(format!("gradient FD error {worst:.1e}, iterate drift {drift:.1e}"))
}

/// Period-1 critical points reached from a grid of constant seeds, up to equivalence.
fn period_one_orbits(ctx: &Ctx) -> Vec<CriticalPointReport> {
    let n = ctx.spec.dim();
    let g: usize = if n == 1 { 4 } else { 2 };
    let k = ctx.config.k;
    let found: Vec<CriticalPointReport> = (0..g.pow(n as u32))
        .into_par_iter()
        .filter_map(|idx| {
            let q: Vec<f64> = (0..n).map(|d| ((idx / g.pow(d as u32)) % g) as f64 / g as f64 + 0.01).collect();
            let seed = BrokenLoop::constant(&ctx.spec, &ctx.radii, 1, k, &q).ok()?;
            let r = find_critical(&seed, &ctx.config.solver).ok()?;
            (r.converged && r.loop_.is_contractible()).then_some(r)
        })
        .collect();
    let mut out: Vec<CriticalPointReport> = Vec::new();
    for r in found {
        let merged = out.iter().any(|o| {
            equivalent(&o.loop_, &r.loop_, DEDUPE_TOL)
                || (o.nullity > 0 && r.nullity > 0 && same_critical_family(&o.loop_, &r.loop_, 1e-6))
        });
        if !merged {
            out.push(r);
        }
    }
    out
}

fn suite_index(ctx: &Ctx, rows: &mut Vec<InequalityRow>) -> Result<String> {
    let orbits = period_one_orbits(ctx);
    if orbits.is_empty() {
        return Err(fail("no period-1 critical point found".into()));
    }
    let n_list: Vec<usize> = (1..=VERIFY_MAX_N).collect();
    let mut pairs = Vec::new();
    for (o, r) in orbits.iter().enumerate() {
        let pair = index_of_orbit(&ctx.spec, r)?;
        let p = iteration_profile(&ctx.spec, r, &n_list)?;
        for (n, pr) in &p.pairs {
            let (lo, hi) = p.inequality_margins[n];
            rows.push(InequalityRow {
                orbit: o,
                n: *n,
                iota: pr.iota,
                nu: pr.nu,
                mean_index: p.mean_index,
                lower_margin: lo,
                upper_margin: hi,
            });
        }
        if !p.holds() {
            return Err(fail(format!("iteration inequalities fail for orbit {o}")));
        }
        pairs.push(format!("({}, {})", pair.iota, pair.nu));
    }
    Ok(format!("{} orbits, pairs {}, inequalities hold for n <= {VERIFY_MAX_N}", orbits.len(), pairs.join(" ")))
}

fn suite_homotopy(ctx: &Ctx) -> Result<String> {
    let n = ctx.spec.dim();
    let k = ctx.config.k;
    let loop_ = SampledLoop::from_fn(&ctx.spec, 1, 8 * k, |t| {
        let mut q = DVector::from_element(n, 0.2);
        q[0] += 0.1 * (std::f64::consts::TAU * t).sin();
        q
    })?;
    let mut prev = f64::INFINITY;
    for i in 0..=8 {
        let a = shorten_homotopy(&ctx.spec, &ctx.radii, &loop_, k, i as f64 / 8.0)?.action;
        if a > prev + 1e-9 {
            return Err(fail(format!("action rises to {a} at s = {}/8", i)));
        }
        prev = a;
    }
    let b = shorten(&ctx.spec, &ctx.radii, &loop_, k)?;
    let again = shorten(&ctx.spec, &ctx.radii, &SampledLoop::from_broken(&b)?, k)?;
    let moved = b.nodes.iter().zip(&again.nodes).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
    if moved > 1e-7 {
        return Err(fail(format!("shortening moves a broken loop by {moved:e}")));
    }
    let mut detail = format!("monotone over 9 values of s, projection moves nodes by {moved:.1e}");
    if ctx.spec.is_autonomous() {
        let path = moving_point_path(&ctx.spec, 0.2, 16)?;
        if path.endpoint_actions().0.max(path.endpoint_actions().1) >= 0.0 {
            let r = bangert(&ctx.spec, &path, 4)?;
            if r.bound_slack < -1e-9 {
                return Err(fail(format!("Bangert bound violated by {:e}", -r.bound_slack)));
            }
            detail.push_str(&format!("; Bangert n = 4 slack {:.3e}", r.bound_slack));
        }
    }
    Ok(detail)
}

fn suite_orbits(ctx: &Ctx) -> Result<String> {
    let orbits = period_one_orbits(ctx);
    let r = orbits.first().ok_or_else(|| fail("no period-1 critical point found".into()))?;
    let pair = index_of_orbit(&ctx.spec, r)?;
    let provenance = Provenance {
        seed_kind: "constant".into(),
        seed_index: 0,
        rng_seed: ctx.config.seeds.rng_seed,
        iterations: r.iterations,
        gradient_norm: r.gradient_norm,
        el_residual: r.el_residual,
        modification_radius: None,
    };
    let record = OrbitRecord::new(r.loop_.clone(), pair, f64::NAN, provenance);
    let bound = constant_action_bound(&ctx.spec);
    let mut reg = Registry::new(bound.value.max(record.action) + 1.0, DEDUPE_TOL);
    if !reg.admit(record.clone()).is_admitted() {
        return Err(fail("first admission refused".into()));
    }
    if !matches!(reg.admit(record.clone()), Admission::Duplicate(_)) {
        return Err(fail("re-admission is not a duplicate".into()));
    }
    let it = r.loop_.iterate(2)?;
    if !equivalent(&r.loop_, &it, DEDUPE_TOL) {
        return Err(fail("an orbit is not equivalent to its double iterate".into()));
    }
    let back = OrbitRecord::from_line(&ctx.spec, &ctx.radii, &record.to_line())?;
    if back.id != record.id {
        return Err(fail("id changes across serialization".into()));
    }
    Ok(format!("re-admission idempotent, iterate equivalent, id {}", record.id))
}

fn result(name: &str, r: Result<String>) -> SuiteResult {
    match r {
        Ok(detail) => SuiteResult { name: name.into(), passed: true, detail },
        Err(e) => SuiteResult { name: name.into(), passed: false, detail: e.to_string() },
    }
}

/// Runs every suite; a Lagrangian that fails to build is reported as a
/// failed "class" suite. Only configuration problems are returned as errors.
pub fn run_verify(config: &CampaignConfig) -> Result<VerifyReport> {
    config.validate()?;
    let name = config.lagrangian.name();
    let spec = match config.lagrangian.build() {
        Ok(s) => s,
        Err(e) => {
            return Ok(VerifyReport {
                lagrangian: name,
                passed: false,
                suites: vec![result("class", Err(e))],
                inequalities: Vec::new(),
            })
        }
    };
    let class = result("class", suite_class(&spec));
    let radii = match radii_for(&spec, config) {
        Ok(r) => r,
        Err(e) => {
            let suites = vec![class, result("radii", Err(e))];
            return Ok(VerifyReport { lagrangian: name, passed: false, suites, inequalities: Vec::new() });
        }
    };
    let ctx = Ctx { spec, radii, config: config.clone() };
    let names = ["radii", "flow", "segment", "broken", "index", "homotopy", "orbits"];
    let outcomes: Vec<(SuiteResult, Vec<InequalityRow>)> = names
        .par_iter()
        .map(|&name| {
            let mut rows = Vec::new();
            let r = match name {
                "radii" => suite_radii(&ctx),
                "flow" => suite_flow(&ctx),
                "segment" => suite_segment(&ctx),
                "broken" => suite_broken(&ctx),
                "index" => suite_index(&ctx, &mut rows),
                "homotopy" => suite_homotopy(&ctx),
                _ => suite_orbits(&ctx),
            };
            (result(name, r), rows)
        })
        .collect();
    let mut suites = vec![class];
    let mut inequalities = Vec::new();
    for (s, rows) in outcomes {
        suites.push(s);
        inequalities.extend(rows);
    }
    let passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport { lagrangian: name, passed, suites, inequalities })
}

impl VerifyReport {
    pub fn write_inequality_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "orbit,n,iota,nu,mean_index,lower_margin,upper_margin")?;
        for r in &self.inequalities {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.orbit, r.n, r.iota, r.nu, r.mean_index, r.lower_margin, r.upper_margin
            )?;
        }
        Ok(())
    }
}
