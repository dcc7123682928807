//! `qmg` batch driver: runs one spec and writes `report.json` plus CSV data
//! into the output directory.
//!
//! Exit status: 0 when every check passes, 1 on a failed check or a run that
//! does not converge, 2 on an invalid spec (nothing is written).

mod run;
mod spec;

use std::process::ExitCode;

use clap::Parser;

use run::{execute, Failure};
use spec::{Args, RunSpec};

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprintln!("usage: qmg [--dim D] [--case K] [--elements E[,E2]] [--levels L] [--cycles V] [--nu N] [--copies T|T-1|C] [--mode MODE] [--out DIR] [--pessimism F] [--config FILE]");
    ExitCode::from(2)
}

/// `QMG_THREADS` caps the worker pool used by sweeps.
fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("QMG_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => return Err(format!("QMG_THREADS must be a positive integer, got {raw:?}")),
        }
    }
    builder.build().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = match RunSpec::resolve(args) {
        Ok(s) => s,
        Err(msg) => return usage(&msg),
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(msg) => return usage(&msg),
    };
    let artifacts = match pool.install(|| execute(&spec)) {
        Ok(a) => a,
        Err(Failure::Usage(msg)) => return usage(&msg),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = artifacts.write(&spec.out) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let failed: Vec<_> = artifacts.report.checks.iter().filter(|c| !c.pass).collect();
    for c in &artifacts.report.checks {
        println!("{} {} {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("{} check(s) failed", failed.len());
        ExitCode::from(1)
    }
}
