use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tonelli::broken::{find_critical, BrokenLoop, LoopRecord};
use tonelli::campaign::{radii_for, run_search};
use tonelli::config::CampaignConfig;
use tonelli::demo::run_bangert_demo;
use tonelli::index::{index_of_orbit, iteration_profile};
use tonelli::lagrangian::{make_modification, LagrangianSpec};
use tonelli::orbits::OrbitLine;
use tonelli::verify::run_verify;
use tonelli::Error;

/// Contractible periodic orbits of Tonelli Lagrangians on flat tori.
#[derive(Parser)]
#[command(name = "tonelli", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed for the search seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated periods, e.g. 1,2,4.
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<usize>>,
    /// Nodes per unit time.
    #[arg(long)]
    k: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Search for orbits over the configured periods.
    Search(Common),
    /// Run the invariant suites and print a JSON pass/fail report.
    Verify(Common),
    /// Write Bangert slack tables and homotopy slices.
    BangertDemo(Common),
    /// Polish a stored loop and print its index report.
    Index {
        /// Loop record JSON or registry JSONL file.
        input: PathBuf,
        /// Registry id to pick; the first line otherwise.
        #[arg(long)]
        id: Option<String>,
        /// Largest iterate in the profile.
        #[arg(long, default_value_t = 32)]
        max_n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Print the n-fold iterate of a stored loop as a loop record.
    Iterate {
        input: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 2)]
        times: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Print the default config as TOML.
    Defaults,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load_config(c: &Common) -> Result<CampaignConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(s) = c.seed {
        cfg.seeds.rng_seed = s;
    }
    if let Some(p) = &c.periods {
        cfg.periods = p.clone();
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    cfg.validate()?;
    if let Some(j) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(cfg)
}

/// A stored loop from a loop record, a registry line, or a registry file,
/// with the modification radius it was found under.
fn read_loop(path: &Path, id: Option<&str>) -> Result<(LoopRecord, Option<f64>), Failure> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(rec) = serde_json::from_str::<LoopRecord>(&text) {
        return Ok((rec, None));
    }
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let l: OrbitLine = serde_json::from_str(line)?;
        if id.map_or(true, |id| l.id == id) {
            let rec = LoopRecord { period: l.period, k: l.k, nodes: l.nodes, mean_action: l.action };
            return Ok((rec, l.provenance.modification_radius));
        }
    }
    Err(Failure::Run(format!("no matching loop in {}", path.display())))
}

fn loop_from(cfg: &CampaignConfig, rec: &LoopRecord, radius: Option<f64>) -> Result<BrokenLoop, Failure> {
    let original = cfg.lagrangian.build()?;
    let spec: LagrangianSpec = match radius {
        Some(r) => make_modification(&original, r)?.spec().clone(),
        None => original,
    };
    let mut c = cfg.clone();
    c.k = rec.k;
    let radii = radii_for(&spec, &c)?;
    Ok(BrokenLoop::from_record(&spec, &radii, rec)?)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Defaults => {
            print!("{}", CampaignConfig::default().to_toml());
            Ok(true)
        }
        Command::Search(c) => {
            let cfg = load_config(&c)?;
            let outcome = run_search(&cfg)?;
            outcome.write_outputs(&cfg.out)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            if let Some(e) = outcome.rail_error() {
                eprintln!("error: {e}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Verify(c) => {
            let cfg = load_config(&c)?;
            let report = run_verify(&cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            if c.out.is_some() || c.config.is_some() {
                std::fs::create_dir_all(&cfg.out)?;
                std::fs::write(cfg.out.join("verify.json"), &json)?;
                report.write_inequality_csv(std::fs::File::create(cfg.out.join("inequalities.csv"))?)?;
            }
            println!("{json}");
            Ok(report.passed)
        }
        Command::BangertDemo(c) => {
            let cfg = load_config(&c)?;
            let report = run_bangert_demo(&cfg, &cfg.out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.all_slack_nonnegative())
        }
        Command::Index { input, id, max_n, common } => {
            let cfg = load_config(&common)?;
            let (rec, radius) = read_loop(&input, id.as_deref())?;
            let seed = loop_from(&cfg, &rec, radius)?;
            let report = find_critical(&seed, &cfg.solver)?;
            if !report.converged {
                return Err(Failure::Run(format!("loop did not polish to a critical point (gradient {:e})", report.gradient_norm)));
            }
            let spec = seed.spec().clone();
            index_of_orbit(&spec, &report)?;
            let n_list: Vec<usize> = (1..=max_n.max(1)).collect();
            let profile = iteration_profile(&spec, &report, &n_list)?;
            println!("{}", serde_json::to_string_pretty(&profile.to_report())?);
            Ok(profile.holds())
        }
        Command::Iterate { input, id, times, common } => {
            let cfg = load_config(&common)?;
            let (rec, radius) = read_loop(&input, id.as_deref())?;
            let it = loop_from(&cfg, &rec, radius)?.iterate(times)?;
            println!("{}", it.to_json()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
