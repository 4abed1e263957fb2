//! Block FGMRES runs with each requested preconditioner on one shared set
//! of right-hand sides, and their reports.
//!
//! Output files: `residuals_<P>.csv` per preconditioner
//! (`iter,rhs_index,relative_residual`), `summary.csv`
//! (`preconditioner,rho,iterations,converged`) and `timing.csv`
//! (`preconditioner,setup_seconds,solve_seconds`). The summary is computed
//! from the worst column at each iteration, so it can be recomputed from the
//! residual file alone.

use std::fs;
use std::path::Path;
use std::time::Instant;

use helmnet_core::{
    block_fgmres, convergence_factor, ComplexField, ConvergenceFactor, HelmholtzProblem, Hierarchy, Shift,
    SolveReport, StencilOperator,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::network::{Network, NetworkPredictor};
use crate::precond::{JacobiUNetPrecond, PrecondKind, VCycleUNetPrecond};

/// Standard complex normal right-hand sides.
pub fn random_rhs(nx: usize, ny: usize, count: usize, seed: u64) -> Vec<ComplexField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ComplexField::random_normal(nx, ny, &mut rng))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub precond: PrecondKind,
    pub factor: ConvergenceFactor,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub report: SolveReport,
}

impl BenchRow {
    /// Every column reached the solver tolerance.
    pub fn all_converged(&self) -> bool {
        self.report.all_converged()
    }
}

/// Convergence factor of the worst column.
pub fn block_factor(report: &SolveReport, target_drop: f64) -> Result<ConvergenceFactor> {
    Ok(convergence_factor(&report.block_relative_history(), target_drop)?)
}

/// Solves the shared right-hand sides with one preconditioner.
pub fn solve_with(
    kind: PrecondKind,
    problem: &HelmholtzProblem,
    network: Option<&Network>,
    cfg: &ExperimentConfig,
    rhs: &[ComplexField],
) -> Result<BenchRow> {
    let kcfg = cfg.krylov_config();
    if kind.uses_network() && !kcfg.flexible {
        return Err(Error::Config(format!(
            "preconditioner {kind} contains a network and needs flexible GMRES"
        )));
    }
    let a = StencilOperator::new(problem, Shift::NONE);
    let t0 = Instant::now();
    let hierarchy = Hierarchy::new(problem, cfg.vcycle_config())?;
    let predictor = match (kind.uses_network(), network) {
        (false, _) => None,
        (true, Some(net)) => Some(NetworkPredictor::new(net, problem)?),
        (true, None) => {
            return Err(Error::InvalidArgument(format!("preconditioner {kind} needs network weights")));
        }
    };
    let setup_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (_, report) = match (kind, predictor) {
        (PrecondKind::V, _) => block_fgmres(&a, &hierarchy, rhs, &kcfg)?,
        (PrecondKind::JU, Some(p)) => block_fgmres(&a, &JacobiUNetPrecond::new(problem, p), rhs, &kcfg)?,
        (PrecondKind::VU, Some(p)) => block_fgmres(&a, &VCycleUNetPrecond::new(&hierarchy, p), rhs, &kcfg)?,
        _ => unreachable!("network presence checked above"),
    };
    let solve_seconds = t1.elapsed().as_secs_f64();
    Ok(BenchRow {
        precond: kind,
        factor: block_factor(&report, cfg.krylov.target_drop)?,
        setup_seconds,
        solve_seconds,
        report,
    })
}

/// All configured preconditioners on `krylov.rhs` right-hand sides drawn
/// from `krylov.seed`.
pub fn run_benchmark(cfg: &ExperimentConfig, problem: &HelmholtzProblem, network: Option<&Network>) -> Result<Vec<BenchRow>> {
    let (nx, ny) = problem.grid().shape();
    let rhs = random_rhs(nx, ny, cfg.krylov.rhs, cfg.krylov.seed);
    cfg.krylov
        .preconditioners
        .iter()
        .map(|&k| solve_with(k, problem, network, cfg, &rhs))
        .collect()
}

fn fmt_rho(f: &ConvergenceFactor) -> String {
    f.rho.map_or_else(|| "nan".to_string(), |r| format!("{r:e}"))
}

pub fn summary_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("preconditioner,rho,iterations,converged\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.precond,
            fmt_rho(&r.factor),
            r.factor.iterations,
            r.factor.converged
        ));
    }
    s
}

pub fn residual_csv(row: &BenchRow) -> String {
    let mut buf = Vec::new();
    row.report.write_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is ASCII")
}

pub fn write_reports(rows: &[BenchRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut timing = String::from("preconditioner,setup_seconds,solve_seconds\n");
    for r in rows {
        fs::write(dir.join(format!("residuals_{}.csv", r.precond)), residual_csv(r))?;
        timing.push_str(&format!("{},{:.6},{:.6}\n", r.precond, r.setup_seconds, r.solve_seconds));
    }
    fs::write(dir.join("summary.csv"), summary_csv(rows))?;
    fs::write(dir.join("timing.csv"), timing)?;
    Ok(())
}

/// Per-column relative histories read back from a residual CSV.
pub fn parse_residual_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("residual CSV line {}: `{line}`", n + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let iter: usize = parts[0].parse().map_err(|_| bad())?;
        let col: usize = parts[1].parse().map_err(|_| bad())?;
        let v: f64 = parts[2].parse().map_err(|_| bad())?;
        if cols.len() <= col {
            cols.resize(col + 1, Vec::new());
        }
        if cols[col].len() != iter {
            return Err(bad());
        }
        cols[col].push(v);
    }
    Ok(cols)
}

/// The summary factor recomputed from a residual CSV.
pub fn factor_from_csv(text: &str, target_drop: f64) -> Result<ConvergenceFactor> {
    let cols = parse_residual_csv(text)?;
    let len = cols.iter().map(Vec::len).max().unwrap_or(0);
    let worst: Vec<f64> = (0..len)
        .map(|k| cols.iter().map(|h| h[k.min(h.len() - 1)]).fold(0.0, f64::max))
        .collect();
    Ok(convergence_factor(&worst, target_drop)?)
}
