//! Bangert homotopy demo on a built-in path: slack tables and slice CSVs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{CampaignConfig, DemoPath};
use crate::error::{Error, Result};
use crate::homotopy::{bangert, constant_path, moving_point_path, sinusoidal_path, w1inf_bound, LoopPath, SampledLoop};
use crate::lagrangian::LagrangianSpec;

#[derive(Clone, Debug, Serialize)]
pub struct DemoRow {
    pub n: usize,
    pub inv_n: f64,
    pub c_theta: f64,
    pub max_endpoint_action: f64,
    /// Largest A^n(θ^((n))(x)) over the samples.
    pub max_action: f64,
    pub bound: f64,
    pub slack: f64,
    pub w1inf: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DemoReport {
    pub path: DemoPath,
    pub rows: Vec<DemoRow>,
    pub files: Vec<PathBuf>,
}

impl DemoReport {
    pub fn all_slack_nonnegative(&self) -> bool {
        self.rows.iter().all(|r| r.slack >= -1e-9)
    }
}

pub fn demo_path(spec: &LagrangianSpec, path: DemoPath, cells: usize) -> Result<LoopPath> {
    match path {
        DemoPath::Constant => {
            let n = spec.dim();
            let gamma = SampledLoop::from_fn(spec, 1, 64, |t| {
                let mut q = nalgebra::DVector::zeros(n);
                q[0] = 0.05 * (std::f64::consts::TAU * t).sin();
                q
            })?;
            constant_path(&gamma, cells)
        }
        DemoPath::MovingPoint => moving_point_path(spec, 0.2, cells),
        DemoPath::Sinusoidal => sinusoidal_path(spec, cells),
    }
}

/// Runs bangert for each configured order and writes `bangert_slack.csv`,
/// `bangert_rows_n{n}.csv` and, for n ≤ csv_max_n, `bangert_slices_n{n}.csv`.
pub fn run_bangert_demo(config: &CampaignConfig, out_dir: &Path) -> Result<DemoReport> {
    config.validate()?;
    let spec = config.lagrangian.build()?;
    let bc = &config.bangert;
    if bc.orders.is_empty() {
        return Err(Error::Config("no Bangert orders given".into()));
    }
    let path = demo_path(&spec, bc.path, bc.cells)?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for &n in &bc.orders {
        let r = bangert(&spec, &path, n)?;
        let max_action = r.rows.iter().map(|x| x.action).fold(f64::NEG_INFINITY, f64::max);
        rows.push(DemoRow {
            n,
            inv_n: 1.0 / n as f64,
            c_theta: r.c_theta,
            max_endpoint_action: r.max_endpoint_action,
            max_action,
            bound: r.max_endpoint_action + r.c_theta / n as f64,
            slack: r.bound_slack,
            w1inf: w1inf_bound(&r),
        });
        let name = out_dir.join(format!("bangert_rows_n{n}.csv"));
        let mut out = BufWriter::new(File::create(&name)?);
        writeln!(out, "x,phase,u,action,bound,slack")?;
        for row in &r.rows {
            writeln!(out, "{},{:?},{},{},{},{}", row.x, row.phase, row.u, row.action, row.bound, row.slack)?;
        }
        out.flush()?;
        files.push(name);
        if n <= bc.csv_max_n {
            let name = out_dir.join(format!("bangert_slices_n{n}.csv"));
            let mut out = BufWriter::new(File::create(&name)?);
            r.write_csv(&bc.slices, &mut out)?;
            out.flush()?;
            files.push(name);
        }
    }
    let name = out_dir.join("bangert_slack.csv");
    let mut out = BufWriter::new(File::create(&name)?);
    writeln!(out, "n,inv_n,c_theta,max_endpoint_action,max_action,bound,slack,w1inf")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n, r.inv_n, r.c_theta, r.max_endpoint_action, r.max_action, r.bound, r.slack, r.w1inf
        )?;
    }
    out.flush()?;
    files.insert(0, name);
    Ok(DemoReport { path: bc.path, rows, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{LagrangianConfig, Preset};

    fn config(path: DemoPath, orders: Vec<usize>) -> CampaignConfig {
        let mut c = CampaignConfig { lagrangian: LagrangianConfig::preset(Preset::Pendulum), ..Default::default() };
        c.bangert.path = path;
        c.bangert.orders = orders;
        c.bangert.cells = 8;
        c.bangert.csv_max_n = 2;
        c
    }

    fn tempdir(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("tonelli-demo-{tag}-{}", std::process::id()))
    }

    #[test]
    fn moving_point_table() {
        let dir = tempdir("moving");
        let r = run_bangert_demo(&config(DemoPath::MovingPoint, vec![1, 2, 4, 8]), &dir).unwrap();
        assert!(r.all_slack_nonnegative(), "{:?}", r.rows);
        // Beyond n = 1 (θ itself) the excess over the endpoints shrinks with n.
        for w in r.rows[1..].windows(2) {
            assert!(w[1].max_action - w[1].max_endpoint_action <= w[0].max_action - w[0].max_endpoint_action + 1e-12);
        }
        let table = std::fs::read_to_string(dir.join("bangert_slack.csv")).unwrap();
        assert_eq!(table.lines().count(), 5);
        assert!(dir.join("bangert_slices_n2.csv").exists());
        assert!(!dir.join("bangert_slices_n4.csv").exists());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn constant_path_slack_is_bound_minus_action() {
        let dir = tempdir("constant");
        let r = run_bangert_demo(&config(DemoPath::Constant, vec![1, 2, 4]), &dir).unwrap();
        for row in &r.rows {
            assert!((row.slack - (row.bound - row.max_action)).abs() < 1e-12);
            assert!(row.slack >= -1e-9);
        }
        std::fs::remove_dir_all(dir).ok();
    }
}
