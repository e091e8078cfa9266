//! Multi-start orbit search over periods that are powers of a prime, with
//! the a priori speed rail for modified Lagrangians.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::broken::{find_critical, BrokenLoop};
use crate::config::{Bound, CampaignConfig, Modification};
use crate::error::{Error, Result};
use crate::flow::el_residual_periodic;
use crate::index::{index_of_orbit, iteration_profile, IterationProfile};
use crate::lagrangian::{make_modification, LagrangianSpec};
use crate::orbits::{constant_action_bound, Admission, ConstantBound, OrbitRecord, Provenance, Registry};
use crate::segment::{estimate_radii, UniquenessRadii};

/// Rail: admitted orbits must stay below this fraction of R.
pub const RAIL_FRACTION: f64 = 0.95;

/// The spec searched (possibly modified), the original, and the radii.
#[derive(Clone, Debug)]
pub struct SearchSetup {
    pub original: LagrangianSpec,
    pub spec: LagrangianSpec,
    pub radii: UniquenessRadii,
    pub bound_a: f64,
    pub constant_bound: ConstantBound,
    pub radius: Option<f64>,
}

pub fn radii_for(spec: &LagrangianSpec, config: &CampaignConfig) -> Result<UniquenessRadii> {
    if config.radii.mode == "certified" {
        let r = estimate_radii(spec)?;
        if config.k < r.min_k() {
            return Err(Error::Config(format!("k = {} is below {} required by the certified radii", config.k, r.min_k())));
        }
        Ok(r)
    } else {
        Ok(UniquenessRadii::working(1.0 / config.k as f64, config.radii.rho0))
    }
}

impl SearchSetup {
    pub fn new(config: &CampaignConfig, radius: Option<f64>) -> Result<Self> {
        let original = config.lagrangian.build()?;
        let constant_bound = constant_action_bound(&original);
        let bound_a = match config.bound_setting()? {
            Bound::Fixed(a) => a,
            Bound::Auto { margin } => constant_bound.value + constant_bound.margin + margin,
        };
        if !(bound_a > constant_bound.value + constant_bound.margin) {
            return Err(Error::Config(format!(
                "action bound a = {bound_a} must exceed the constant-loop maximum {}",
                constant_bound.value
            )));
        }
        let spec = match radius {
            Some(r) => make_modification(&original, r)?.spec().clone(),
            None => original.clone(),
        };
        let radii = radii_for(&spec, config)?;
        Ok(SearchSetup { original, spec, radii, bound_a, constant_bound, radius })
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PeriodSummary {
    pub period: usize,
    pub seeds: usize,
    pub failed_seeds: usize,
    pub converged: usize,
    pub non_contractible: usize,
    pub index_mismatches: usize,
    pub admitted: usize,
    pub replaced: usize,
    pub duplicates: usize,
    pub above_bound: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RailCheck {
    pub id: String,
    pub action: f64,
    pub max_speed: f64,
    pub radius: f64,
    /// EL residual of the orbit under the original, unmodified L.
    pub el_residual: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrbitSummary {
    pub id: String,
    pub period: usize,
    pub action: f64,
    pub iota: i64,
    pub nu: usize,
    pub mean_index: f64,
    pub max_speed: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignReport {
    pub lagrangian: String,
    pub prime: usize,
    pub periods: Vec<usize>,
    pub k: usize,
    pub bound_a: f64,
    pub constant_bound: ConstantBound,
    pub modification_radius: Option<f64>,
    /// Radii tried, in order, when the rail forced escalation.
    pub radius_history: Vec<f64>,
    pub per_period: Vec<PeriodSummary>,
    pub rail: Vec<RailCheck>,
    pub rail_passed: bool,
    pub orbits: Vec<OrbitSummary>,
}

pub struct CampaignOutcome {
    pub report: CampaignReport,
    pub registry: Registry,
    pub profiles: BTreeMap<String, IterationProfile>,
    pub setup: SearchSetup,
}

#[derive(Clone, Copy, Debug)]
enum SeedKind {
    Constant,
    Fourier,
    Iterate,
}

impl SeedKind {
    fn name(self) -> &'static str {
        match self {
            SeedKind::Constant => "constant",
            SeedKind::Fourier => "fourier",
            SeedKind::Iterate => "iterate",
        }
    }
}

struct Seed {
    kind: SeedKind,
    index: usize,
    nodes: Vec<DVector<f64>>,
}

fn rng_for(rng_seed: u64, period: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(((period as u64) << 32) | index as u64);
    rng
}

fn seeds_for(config: &CampaignConfig, dim: usize, registry: &Registry, period: usize) -> Vec<Seed> {
    let k = config.k;
    let m = period * k;
    let sc = &config.seeds;
    let mut seeds = Vec::new();
    let mut g = sc.constant_grid;
    while g > 1 && g.pow(dim as u32) > 64 {
        g -= 1;
    }
    if g > 0 {
        for idx in 0..g.pow(dim as u32) {
            let q = DVector::from_iterator(dim, (0..dim).map(|d| ((idx / g.pow(d as u32)) % g) as f64 / g as f64));
            seeds.push(Seed { kind: SeedKind::Constant, index: idx, nodes: vec![q; m] });
        }
    }
    for i in 0..sc.count {
        let mut rng = rng_for(sc.rng_seed, period, i);
        let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut coef = Vec::new();
        for f in 1..=sc.fourier_modes {
            let amp = sc.amplitude / f as f64;
            for _ in 0..dim {
                coef.push((rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp)));
            }
        }
        let nodes = (0..m)
            .map(|h| {
                let phase = std::f64::consts::TAU * h as f64 / m as f64;
                DVector::from_iterator(
                    dim,
                    (0..dim).map(|d| {
                        let mut x = center[d];
                        for f in 1..=sc.fourier_modes {
                            let (a, b) = coef[(f - 1) * dim + d];
                            x += a * (f as f64 * phase).cos() + b * (f as f64 * phase).sin();
                        }
                        x
                    }),
                )
            })
            .collect();
        seeds.push(Seed { kind: SeedKind::Fourier, index: i, nodes });
    }
    for (j, r) in registry.records.iter().enumerate() {
        if r.period >= period || period % r.period != 0 || r.loop_.k != k {
            continue;
        }
        let mut rng = rng_for(sc.rng_seed ^ 0x5eed, period, j);
        let reps = period / r.period;
        let nodes = (0..reps)
            .flat_map(|_| r.loop_.nodes.iter())
            .map(|x| x.map(|c| c + rng.gen_range(-sc.iterate_noise..=sc.iterate_noise)))
            .collect();
        seeds.push(Seed { kind: SeedKind::Iterate, index: j, nodes });
    }
    seeds
}

enum Attempt {
    Failed,
    NotConverged,
    NonContractible,
    Mismatch,
    Found(Box<OrbitRecord>),
}

fn attempt(config: &CampaignConfig, setup: &SearchSetup, period: usize, seed: &Seed) -> Attempt {
    let Ok(start) = BrokenLoop::from_nodes(&setup.spec, &setup.radii, period, config.k, seed.nodes.clone()) else {
        return Attempt::Failed;
    };
    let report = match find_critical(&start, &config.solver) {
        Ok(r) => r,
        Err(_) => return Attempt::Failed,
    };
    if !report.converged {
        return Attempt::NotConverged;
    }
    if !report.loop_.is_contractible() {
        return Attempt::NonContractible;
    }
    let pair = match index_of_orbit(&setup.spec, &report) {
        Ok(p) => p,
        Err(_) => return Attempt::Mismatch,
    };
    let provenance = Provenance {
        seed_kind: seed.kind.name().into(),
        seed_index: seed.index,
        rng_seed: config.seeds.rng_seed,
        iterations: report.iterations,
        gradient_norm: report.gradient_norm,
        el_residual: report.el_residual,
        modification_radius: setup.radius,
    };
    Attempt::Found(Box::new(OrbitRecord::new(report.loop_, pair, f64::NAN, provenance)))
}

fn search_once(config: &CampaignConfig, setup: &SearchSetup) -> (Registry, Vec<PeriodSummary>) {
    let mut registry = Registry::new(setup.bound_a, config.dedupe_tol);
    let mut summaries = Vec::new();
    let mut periods = config.periods.clone();
    periods.sort_unstable();
    periods.dedup();
    for &period in &periods {
        let seeds = seeds_for(config, setup.spec.dim(), &registry, period);
        let attempts: Vec<Attempt> = seeds.par_iter().map(|s| attempt(config, setup, period, s)).collect();
        let mut summary = PeriodSummary { period, seeds: seeds.len(), ..Default::default() };
        for a in attempts {
            match a {
                Attempt::Failed => summary.failed_seeds += 1,
                Attempt::NotConverged => {}
                Attempt::NonContractible => {
                    summary.converged += 1;
                    summary.non_contractible += 1;
                }
                Attempt::Mismatch => {
                    summary.converged += 1;
                    summary.index_mismatches += 1;
                }
                Attempt::Found(record) => {
                    summary.converged += 1;
                    match registry.admit(*record) {
                        Admission::Admitted => summary.admitted += 1,
                        Admission::Replaced(_) => summary.replaced += 1,
                        Admission::Duplicate(_) => summary.duplicates += 1,
                        Admission::AboveBound => summary.above_bound += 1,
                    }
                }
            }
        }
        summaries.push(summary);
    }
    (registry, summaries)
}

fn rail_checks(setup: &SearchSetup, registry: &Registry, el_tol: f64) -> Vec<RailCheck> {
    let Some(radius) = setup.radius else {
        return Vec::new();
    };
    registry
        .records
        .par_iter()
        .filter(|r| r.action <= setup.bound_a)
        .map(|r| {
            let el = el_residual_periodic(&setup.original, &r.loop_.glued_trajectory());
            RailCheck {
                id: r.id.clone(),
                action: r.action,
                max_speed: r.max_speed,
                radius,
                el_residual: el,
                passed: r.max_speed <= RAIL_FRACTION * radius && el < el_tol,
            }
        })
        .collect()
}

/// Search every configured period, escalating R on rail violations when the
/// modification policy is "auto".
pub fn run_search(config: &CampaignConfig) -> Result<CampaignOutcome> {
    config.validate()?;
    let (mut radius, doublings) = match config.modification_setting()? {
        Modification::None => (None, 0),
        Modification::Fixed(r) => (Some(r), 0),
        Modification::Auto { initial, max_doublings } => (Some(initial), max_doublings),
    };
    let mut history = Vec::new();
    let mut attempt_no = 0;
    let auto = doublings > 0;
    loop {
        let setup = match SearchSetup::new(config, radius) {
            // In auto mode an inadmissible radius is raised to the smallest admissible one.
            Err(Error::Modification { min_admissible: Some(r), .. }) if auto && radius.is_some_and(|x| r > x) => {
                radius = Some(r);
                continue;
            }
            other => other?,
        };
        history.extend(radius);
        let (mut registry, per_period) = search_once(config, &setup);
        let rail = rail_checks(&setup, &registry, config.el_tol);
        let rail_passed = rail.iter().all(|c| c.passed);
        if !rail_passed && attempt_no < doublings {
            attempt_no += 1;
            radius = radius.map(|r| 2.0 * r);
            continue;
        }
        let n_list: Vec<usize> = (1..=config.index_max_n.max(1)).collect();
        let profiles: BTreeMap<String, IterationProfile> = registry
            .records
            .par_iter()
            .filter_map(|r| {
                let report = crate::broken::CriticalPointReport {
                    loop_: r.loop_.clone(),
                    gradient_norm: r.provenance.gradient_norm,
                    morse_index: r.pair.iota as usize,
                    nullity: r.pair.nu,
                    hessian_condition: f64::NAN,
                    eigen_gap: (f64::NAN, f64::NAN),
                    el_residual: r.provenance.el_residual,
                    converged: true,
                    iterations: r.provenance.iterations,
                };
                iteration_profile(&setup.spec, &report, &n_list).ok().map(|p| (r.id.clone(), p))
            })
            .collect();
        for r in &mut registry.records {
            if let Some(p) = profiles.get(&r.id) {
                r.mean_index = p.mean_index;
            }
        }
        let orbits = registry
            .records
            .iter()
            .map(|r| OrbitSummary {
                id: r.id.clone(),
                period: r.period,
                action: r.action,
                iota: r.pair.iota,
                nu: r.pair.nu,
                mean_index: r.mean_index,
                max_speed: r.max_speed,
            })
            .collect();
        let report = CampaignReport {
            lagrangian: config.lagrangian.name(),
            prime: config.prime,
            periods: config.periods.clone(),
            k: config.k,
            bound_a: setup.bound_a,
            constant_bound: setup.constant_bound.clone(),
            modification_radius: setup.radius,
            radius_history: history,
            per_period,
            rail,
            rail_passed,
            orbits,
        };
        return Ok(CampaignOutcome { report, registry, profiles, setup });
    }
}

impl CampaignOutcome {
    /// The rail failure, phrased as an error, if any orbit violated it.
    pub fn rail_error(&self) -> Option<Error> {
        self.report.rail.iter().find(|c| !c.passed).map(|c| Error::Rail { action: c.action, speed: c.max_speed, radius: c.radius })
    }

    /// registry.jsonl, summary.csv, index_table.csv and report.json, all
    /// deterministic; the wall-clock time goes to metadata.json.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("registry.jsonl"))?);
        self.registry.write_jsonl(&mut out)?;
        out.flush()?;
        let mut out = BufWriter::new(File::create(dir.join("summary.csv"))?);
        self.registry.write_summary_csv(&mut out)?;
        out.flush()?;
        let mut out = BufWriter::new(File::create(dir.join("index_table.csv"))?);
        writeln!(out, "id,period,n,iota,nu,mean_index,lower_margin,upper_margin")?;
        for (id, p) in &self.profiles {
            let period = self.registry.records.iter().find(|r| &r.id == id).map_or(0, |r| r.period);
            for (n, pair) in &p.pairs {
                let (lo, hi) = p.inequality_margins[n];
                writeln!(out, "{id},{period},{n},{},{},{:.6},{lo:.6},{hi:.6}", pair.iota, pair.nu, p.mean_index)?;
            }
        }
        out.flush()?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        std::fs::write(
            dir.join("metadata.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "finished_unix_seconds": stamp,
                "version": env!("CARGO_PKG_VERSION"),
            }))?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{LagrangianConfig, Preset, Setting};

    fn quick(preset: Preset) -> CampaignConfig {
        let mut c = CampaignConfig { lagrangian: LagrangianConfig::preset(preset), ..Default::default() };
        c.seeds.count = 6;
        c.index_max_n = 4;
        c
    }

    #[test]
    fn free_particle_has_one_family() {
        let out = run_search(&quick(Preset::FreeParticle)).unwrap();
        assert_eq!(out.registry.len(), 1, "{:?}", out.report.orbits);
        assert_eq!(out.report.orbits[0].period, 1);
    }

    #[test]
    fn pendulum_equilibria() {
        let mut c = quick(Preset::Pendulum);
        c.bound = Setting::Value(0.5);
        let out = run_search(&c).unwrap();
        let pairs: Vec<_> = out.registry.records.iter().filter(|r| r.period == 1).map(|r| (r.pair.iota, r.pair.nu)).collect();
        assert!(pairs.contains(&(1, 0)) && pairs.contains(&(0, 0)), "{pairs:?}");
        assert!(out.registry.records.iter().all(|r| r.action < 0.5));
    }

    #[test]
    fn deterministic_outputs() {
        let mut c = quick(Preset::Pendulum);
        c.periods = vec![1, 2];
        let dirs = [tempdir("a"), tempdir("b")];
        for d in &dirs {
            run_search(&c).unwrap().write_outputs(d).unwrap();
        }
        for f in ["registry.jsonl", "summary.csv", "index_table.csv", "report.json"] {
            let a = std::fs::read(dirs[0].join(f)).unwrap();
            let b = std::fs::read(dirs[1].join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
        for d in dirs {
            std::fs::remove_dir_all(d).ok();
        }
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("tonelli-campaign-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }
}
