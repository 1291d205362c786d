//! Seed sweeps over `n`, aggregation and scaling fits.

use std::fmt::Write as _;

use pmvba::simnet::{run, RunMetrics, SimError};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub seeds: u64,
    /// Template; `n` and `seed` are overwritten per run.
    pub base: RunConfig,
}

/// One run of the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRun {
    pub n: usize,
    pub seed: String,
    pub msgs: u64,
    pub payload_bytes: u64,
    pub proof_bytes: u64,
    pub decide_round: u64,
    pub iterations: usize,
    pub max_reach: usize,
    pub error: Option<String>,
}

/// Per-`n` means; the aggregate CSV schema.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub runs: usize,
    pub failures: usize,
    pub mean_msgs: f64,
    pub mean_bytes: f64,
    pub mean_payload_bytes: f64,
    pub mean_decide_round: f64,
    pub mean_iterations: f64,
    pub msgs_per_n2: f64,
}

/// Key seed of grid cell `index` derived from the template seed.
pub fn cell_seed(base: &str, index: u64) -> String {
    format!("{base}{index:016x}")
}

pub fn run_cell(base: &RunConfig, n: usize, index: u64) -> Result<(SweepRun, RunMetrics), ConfigError> {
    let cfg = RunConfig {
        n,
        f: None,
        seed: cell_seed(&base.seed, index),
        ..base.clone()
    };
    let sim = cfg.to_sim()?;
    let outcome: Result<RunMetrics, SimError> = run(&sim);
    let (metrics, error) = match outcome {
        Ok(m) => (m, None),
        Err(e) => (RunMetrics::default(), Some(e.to_string())),
    };
    let t = metrics.total_traffic();
    let row = SweepRun {
        n,
        seed: cfg.seed,
        msgs: t.msgs,
        payload_bytes: t.payload_bytes,
        proof_bytes: t.proof_bytes,
        decide_round: metrics.instances.iter().map(|i| i.max_decide_round()).max().unwrap_or(0),
        iterations: metrics.instances.iter().map(|i| i.max_iterations()).max().unwrap_or(0),
        max_reach: metrics
            .instances
            .first()
            .and_then(|i| i.reach.as_ref())
            .map_or(0, |r| r.max_reach()),
        error,
    };
    Ok((row, metrics))
}

/// Runs the grid in parallel; results come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRun>, ConfigError> {
    let cells: Vec<(usize, u64)> = spec
        .ns
        .iter()
        .flat_map(|&n| (0..spec.seeds).map(move |s| (n, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, s)| run_cell(&spec.base, n, s).map(|(row, _)| row))
        .collect()
}

pub fn aggregate(runs: &[SweepRun]) -> Vec<SweepRow> {
    let mut ns: Vec<usize> = runs.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let all: Vec<&SweepRun> = runs.iter().filter(|r| r.n == n).collect();
            let ok: Vec<&&SweepRun> = all.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: &dyn Fn(&SweepRun) -> f64| {
                ok.iter().map(|r| f(r)).sum::<f64>() / ok.len().max(1) as f64
            };
            let mean_msgs = mean(&|r| r.msgs as f64);
            SweepRow {
                n,
                runs: all.len(),
                failures: all.len() - ok.len(),
                mean_msgs,
                mean_bytes: mean(&|r| (r.payload_bytes + r.proof_bytes) as f64),
                mean_payload_bytes: mean(&|r| r.payload_bytes as f64),
                mean_decide_round: mean(&|r| r.decide_round as f64),
                mean_iterations: mean(&|r| r.iterations as f64),
                msgs_per_n2: mean_msgs / (n * n) as f64,
            }
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<SweepRow>,
    pub msg_exponent: f64,
    pub byte_exponent: f64,
    /// max(msgs / n^2) / min(msgs / n^2).
    pub msg_spread: f64,
}

pub fn scaling(rows: &[SweepRow]) -> ScalingReport {
    let msgs: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean_msgs)).collect();
    let bytes: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean_bytes)).collect();
    let per: Vec<f64> = rows.iter().map(|r| r.msgs_per_n2).collect();
    let hi = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
    ScalingReport {
        rows: rows.to_vec(),
        msg_exponent: loglog_slope(&msgs),
        byte_exponent: loglog_slope(&bytes),
        msg_spread: hi / lo,
    }
}

impl ScalingReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4} {:>5} {:>5} {:>12} {:>14} {:>8} {:>8} {:>9}",
            "n", "runs", "fail", "msgs", "bytes", "round", "iters", "msgs/n^2"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>4} {:>5} {:>5} {:>12.1} {:>14.1} {:>8.2} {:>8.3} {:>9.3}",
                r.n,
                r.runs,
                r.failures,
                r.mean_msgs,
                r.mean_bytes,
                r.mean_decide_round,
                r.mean_iterations,
                r.msgs_per_n2
            );
        }
        let _ = writeln!(s, "message exponent (log-log fit): {:.3}", self.msg_exponent);
        let _ = writeln!(s, "byte exponent (log-log fit):    {:.3}", self.byte_exponent);
        let _ = writeln!(s, "msgs/n^2 max/min:               {:.3}", self.msg_spread);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [4.0, 7.0, 10.0, 13.0].iter().map(|&n: &f64| (n, 3.0 * n.powi(2))).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_order_is_config_order() {
        let spec = SweepSpec {
            ns: vec![7, 4],
            seeds: 3,
            base: RunConfig::default(),
        };
        let runs = run_sweep(&spec).unwrap();
        let ns: Vec<usize> = runs.iter().map(|r| r.n).collect();
        assert_eq!(ns, [7, 7, 7, 4, 4, 4]);
        assert_eq!(aggregate(&runs).iter().map(|r| r.n).collect::<Vec<_>>(), [7, 4]);
    }
}
