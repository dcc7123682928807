use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use qmg::analysis::{
    ceil_log2_u64, index_probability, p_vs_cycles, qubit_multiple, qubit_report, reproduce_tables,
    write_csv, InitialGuessError, QubitMultiplePoint, ResourceReport, SuccessReport, TableCheck, ZConfig,
    ZReport, z_factor,
};
use qmg::blockenc::{tiny_end_to_end, BlockEncError, TinyQuantumReport};
use qmg::fem::{assemble, exact_solution_1d, grid_layout, FemError};
use qmg::multigrid::{max_coarsenings, MgConfig, MultigridError, SolveOutcome, Solver};
use qmg::qmg::{emulate, max_trace_deviation, BlockIndexer, QmgError};
use qmg::AssembledSystemF64;

use crate::spec::{Mode, RunSpec};

pub const ORACLE_TOLERANCE: f64 = 1e-12;
pub const TINY_DIRECTION_TOLERANCE: f64 = 1e-10;
pub const TINY_PROBABILITY_TOLERANCE: f64 = 1e-12;
pub const TINY_ORTHOGONALITY_TOLERANCE: f64 = 1e-10;

/// Smallest element count per axis in a figure sweep.
const SWEEP_FLOOR_1D: usize = 32;
const SWEEP_FLOOR_2D: usize = 8;

/// Why a run stopped early.
#[derive(Debug)]
pub enum Failure {
    /// The spec cannot be run as given; nothing is written.
    Usage(String),
    /// The run itself failed (no convergence, broken invariant, I/O).
    Run(anyhow::Error),
}

impl From<FemError> for Failure {
    fn from(e: FemError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<MultigridError> for Failure {
    fn from(e: MultigridError) -> Self {
        match e {
            MultigridError::NotConverged { .. } | MultigridError::Diverged { .. } | MultigridError::Sparse(_) => {
                Failure::Run(e.into())
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<QmgError> for Failure {
    fn from(e: QmgError) -> Self {
        match e {
            QmgError::Multigrid(inner) => inner.into(),
            QmgError::InvalidLayout(msg) => Failure::Usage(msg),
            other => Failure::Run(other.into()),
        }
    }
}

impl From<BlockEncError> for Failure {
    fn from(e: BlockEncError) -> Self {
        match e {
            BlockEncError::TooLarge { .. } => Failure::Usage(e.to_string()),
            BlockEncError::Qmg(inner) => inner.into(),
            other => Failure::Run(other.into()),
        }
    }
}

impl From<qmg::analysis::AnalysisError> for Failure {
    fn from(e: qmg::analysis::AnalysisError) -> Self {
        use qmg::analysis::AnalysisError as A;
        match e {
            A::Multigrid(inner) => inner.into(),
            A::Qmg(inner) => inner.into(),
            #[allow(unreachable_patterns)]
            other => Failure::Run(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Resources {
    pub len_x: u64,
    pub qubits_work: usize,
    pub qubits_state: usize,
    pub xi: usize,
    /// `null` once `Z` overflows `f64`; `log2_Z` is always set when known.
    #[serde(rename = "Z")]
    pub z: Option<f64>,
    #[serde(rename = "log2_Z")]
    pub log2_z: Option<f64>,
    pub amplification_rounds: Option<f64>,
}

impl From<ResourceReport> for Resources {
    fn from(r: ResourceReport) -> Self {
        Self {
            len_x: r.len_x,
            qubits_work: r.qubits_work,
            qubits_state: r.qubits_total_state,
            xi: r.xi,
            z: r.z.filter(|z| z.is_finite()),
            log2_z: r.log2_z,
            amplification_rounds: r.amplification_rounds.filter(|a| a.is_finite()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Success {
    pub p_index: f64,
    pub lemma5_bound: f64,
    pub lemma6_bound: Option<f64>,
    pub p_anc_estimate: Option<f64>,
    pub log2_p_anc: Option<f64>,
}

impl From<&SuccessReport> for Success {
    fn from(s: &SuccessReport) -> Self {
        Self {
            p_index: s.p_index,
            lemma5_bound: s.lemma5_bound,
            lemma6_bound: s.lemma6_bound,
            p_anc_estimate: s.p_anc_estimate,
            log2_p_anc: s.log2_p_anc,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Convergence {
    pub cycles: usize,
    pub epsilon_tilde: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigurePoint {
    pub elements: Vec<usize>,
    pub n: usize,
    pub cycles: usize,
    pub epsilon_tilde: f64,
    pub monotone: bool,
    pub p_index: f64,
    pub qubit_multiple: QubitMultiplePoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub spec: RunSpec,
    pub resources: Option<Resources>,
    pub success: Option<Success>,
    pub convergence: Option<Convergence>,
    pub checks: Vec<Check>,
    pub tiny_quantum: Option<TinyQuantumReport>,
    pub tables: Option<Vec<TableCheck>>,
    pub figures: Option<Vec<FigurePoint>>,
}

impl Report {
    fn new(spec: &RunSpec) -> Self {
        Self {
            spec: spec.clone(),
            resources: None,
            success: None,
            convergence: None,
            checks: Vec::new(),
            tiny_quantum: None,
            tables: None,
            figures: None,
        }
    }
}

/// Report plus the extra files of a finished run, not yet on disk.
pub struct Artifacts {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut json = serde_json::to_string_pretty(&self.report)?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
        }
        Ok(())
    }
}

pub fn execute(spec: &RunSpec) -> Result<Artifacts, Failure> {
    match spec.mode {
        Mode::Classical => classical(spec),
        Mode::Qmg => qmg_mode(spec),
        Mode::TinyQuantum => tiny(spec),
        Mode::Tables => tables(spec),
        Mode::Figures => figures(spec),
    }
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}

fn initial_guess(spec: &RunSpec, reference: &[f64]) -> Vec<f64> {
    match spec.guess_ratio {
        None => vec![0.0; reference.len()],
        Some(r) => {
            let norm = qmg::linalg::norm2(reference);
            let shift = r * norm / (reference.len() as f64).sqrt();
            reference.iter().map(|&u| u + shift).collect()
        }
    }
}

struct Solved {
    solver: Solver<f64>,
    outcome: SolveOutcome<f64>,
    v0: Vec<f64>,
}

/// Runs the fixed cycle count, or to tolerance with at least one cycle.
fn solve(spec: &RunSpec, sys: &AssembledSystemF64, levels: usize, record: bool) -> Result<Solved, Failure> {
    let cfg = MgConfig::new(levels, spec.num_cycles.unwrap_or(1), spec.nu);
    let solver = Solver::new(sys, &cfg)?;
    let v0 = initial_guess(spec, solver.reference());
    let outcome = match spec.num_cycles {
        Some(_) => solver.solve(&v0, record)?,
        None => {
            let out = solver.solve_until(&v0, spec.tolerance, spec.max_cycles, record)?;
            if out.cycles == 0 {
                solver.solve(&v0, record)?
            } else {
                out
            }
        }
    };
    Ok(Solved { solver, outcome, v0 })
}

fn convergence_of(out: &SolveOutcome<f64>) -> Convergence {
    Convergence {
        cycles: out.cycles,
        epsilon_tilde: out.final_error(),
        monotone: out.trace.is_monotone(),
    }
}

fn convergence_checks(spec: &RunSpec, c: &Convergence) -> Vec<Check> {
    let mut checks = vec![Check::new(
        "monotone_convergence",
        c.monotone,
        format!("{} cycles", c.cycles),
    )];
    if spec.num_cycles.is_none() {
        checks.push(Check::new(
            "reached_tolerance",
            c.epsilon_tilde <= spec.tolerance,
            format!("epsilon_tilde {:e} vs {:e}", c.epsilon_tilde, spec.tolerance),
        ));
    }
    checks
}

fn convergence_csv(out: &SolveOutcome<f64>) -> String {
    let mut buf = Vec::new();
    out.trace.write_convergence_csv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}

fn solution_csv(spec: &RunSpec, sys: &AssembledSystemF64, solved: &Solved) -> String {
    let coords = sys.dof_coords();
    let u = &solved.outcome.solution;
    let reference = solved.solver.reference();
    if spec.dimension == 1 {
        let case = spec.case();
        let rows = coords
            .iter()
            .zip(u.iter().zip(reference))
            .map(|(p, (&v, &r))| {
                let exact = exact_solution_1d(&case, p[0]);
                vec![p[0].to_string(), v.to_string(), r.to_string(), exact.to_string(), (v - exact).to_string()]
            })
            .collect();
        csv_string(&["x", "u", "u_reference", "u_exact", "error"], rows)
    } else {
        let rows = coords
            .iter()
            .zip(u.iter().zip(reference))
            .map(|(p, (&v, &r))| vec![p[0].to_string(), p[1].to_string(), v.to_string(), r.to_string()])
            .collect();
        csv_string(&["x", "y", "u", "u_reference"], rows)
    }
}

fn classical(spec: &RunSpec) -> Result<Artifacts, Failure> {
    let sys = assemble(&spec.case(), &spec.elements)?;
    let solved = solve(spec, &sys, spec.num_levels, false)?;
    let conv = convergence_of(&solved.outcome);
    let mut report = Report::new(spec);
    report.checks = convergence_checks(spec, &conv);
    report.convergence = Some(conv);
    let files = vec![
        ("convergence.csv".to_string(), convergence_csv(&solved.outcome)),
        ("solution.csv".to_string(), solution_csv(spec, &sys, &solved)),
    ];
    Ok(Artifacts { report, files })
}

fn z_config(spec: &RunSpec) -> ZConfig {
    ZConfig {
        pessimism: spec.pessimism,
        ..ZConfig::default()
    }
}

fn zeta_check(z: &ZReport) -> Check {
    Check::new(
        "zeta_estimates_converged",
        z.all_converged,
        format!("{} distinct estimates", z.distinct_estimates),
    )
}

fn qmg_mode(spec: &RunSpec) -> Result<Artifacts, Failure> {
    let sys = assemble(&spec.case(), &spec.elements)?;
    let solved = solve(spec, &sys, spec.num_levels, true)?;
    let out = &solved.outcome;
    let h = solved.solver.hierarchy();
    let ix = BlockIndexer::new(out.cycles - 1, spec.num_levels - 1, spec.nu, spec.copies)?;
    let run = emulate(h, ix, &solved.v0)?;
    let deviation = max_trace_deviation(&run.history, &out.trace);
    let z = z_factor(&run.schedule, h, &ix, &z_config(spec))?;
    let guess = InitialGuessError::from_vectors(&solved.v0, solved.solver.reference());
    let success = index_probability(&run.history, Some(guess), Some(&z));
    let conv = convergence_of(out);

    let mut checks = convergence_checks(spec, &conv);
    checks.push(Check::new(
        "oracle_equivalence",
        deviation.is_some_and(|d| d <= ORACLE_TOLERANCE),
        match deviation {
            Some(d) => format!("max relative block deviation {d:e}"),
            None => "classical trace is missing entries".into(),
        },
    ));
    checks.push(zeta_check(&z));
    if conv.monotone {
        match (spec.guess_ratio, success.lemma6_bound) {
            (None, _) => checks.push(Check::new(
                "lemma5_bound",
                success.p_index >= success.lemma5_bound,
                format!("p_index {} vs {}", success.p_index, success.lemma5_bound),
            )),
            (Some(_), Some(bound)) => checks.push(Check::new(
                "lemma6_bound",
                success.p_index >= bound,
                format!("p_index {} vs {bound}", success.p_index),
            )),
            (Some(_), None) => {}
        }
    }

    let mut report = Report::new(spec);
    report.resources = Some(qubit_report(&ix, sys.free_dof_count(), Some(&z)).into());
    report.success = Some((&success).into());
    report.convergence = Some(conv);
    report.checks = checks;

    let mut norms = Vec::new();
    run.history.write_block_norms_csv(&mut norms)?;
    let p_rows = p_vs_cycles(&run.history, spec.copies)
        .into_iter()
        .map(|(k, p)| vec![k.to_string(), p.to_string()])
        .collect();
    let files = vec![
        ("convergence.csv".to_string(), convergence_csv(out)),
        ("block_norms.csv".to_string(), String::from_utf8(norms).expect("ascii csv")),
        ("p_vs_cycles.csv".to_string(), csv_string(&["cycles", "p_index"], p_rows)),
    ];
    Ok(Artifacts { report, files })
}

/// Tiny mode defaults to one cycle: running a 3-dof grid to 1e-10 would
/// blow the statevector cap.
fn tiny(spec: &RunSpec) -> Result<Artifacts, Failure> {
    let sys = assemble(&spec.case(), &spec.elements)?;
    let cycles = spec.num_cycles.unwrap_or(1);
    let cfg = MgConfig::new(spec.num_levels, cycles, spec.nu);
    let solver = Solver::new(&sys, &cfg)?;
    let v0 = initial_guess(spec, solver.reference());
    let tq = tiny_end_to_end(&sys, &cfg, &v0, spec.copies)?;
    let ix = BlockIndexer::for_config(&cfg, spec.copies)?;

    let mut resources: Resources = qubit_report(&ix, sys.free_dof_count(), None).into();
    resources.z = Some(tq.z);
    resources.log2_z = Some(tq.log2_z);
    resources.amplification_rounds = Some(tq.z.ceil());

    let mut report = Report::new(spec);
    report.resources = Some(resources);
    report.checks = vec![
        Check::new(
            "statevector_direction",
            tq.direction_residual <= TINY_DIRECTION_TOLERANCE,
            format!("{:e}", tq.direction_residual),
        ),
        Check::new(
            "ancilla_probability",
            tq.probability_rel_error <= TINY_PROBABILITY_TOLERANCE,
            format!("relative error {:e}", tq.probability_rel_error),
        ),
        Check::new(
            "dilation_orthogonality",
            tq.max_orthogonality_residual <= TINY_ORTHOGONALITY_TOLERANCE,
            format!("{:e}", tq.max_orthogonality_residual),
        ),
        Check::new("z_bounds_product", tq.z_bounds_product, format!("product norm {}", tq.product_norm)),
    ];
    report.tiny_quantum = Some(tq);
    Ok(Artifacts { report, files: Vec::new() })
}

fn tables(spec: &RunSpec) -> Result<Artifacts, Failure> {
    let rows = reproduce_tables();
    let mut cells = Vec::new();
    let flag = |ok: bool| if ok { "match" } else { "mismatch" }.to_string();
    for r in &rows {
        let p = r.row;
        let id = [p.dimension.to_string(), p.case_id.to_string()];
        let mut push = |column: &str, published: String, computed: String, ok: bool| {
            cells.push(vec![id[0].clone(), id[1].clone(), column.to_string(), published, computed, flag(ok)]);
        };
        push("N", p.n.to_string(), r.n_grid.to_string(), r.n_match);
        push("len_x", p.len_x.to_string(), r.len_x.to_string(), r.len_x_match);
        push("ceil_log2_N", p.log2_n.to_string(), r.log2_n.to_string(), r.log2_n_match);
        push("ceil_log2_len_x", p.log2_len_x.to_string(), r.log2_len_x.to_string(), r.log2_len_x_match);
    }
    let mut report = Report::new(spec);
    report.checks = rows
        .iter()
        .map(|r| {
            let mut detail = String::new();
            if let Some(v) = r.implied_cal_v {
                let _ = write!(detail, "published len_x implies V = {v}");
            }
            Check::new(format!("table_{}d_case{}", r.row.dimension, r.row.case_id), r.all_match(), detail)
        })
        .collect();
    report.tables = Some(rows);
    let csv = csv_string(&["dimension", "case", "column", "published", "computed", "flag"], cells);
    Ok(Artifacts {
        report,
        files: vec![("tables.csv".to_string(), csv)],
    })
}

/// Grids of the figure sweep: the spec grid halved per axis down to the floor,
/// in increasing size.
fn sweep_grids(spec: &RunSpec) -> Vec<Vec<usize>> {
    let floor = if spec.dimension == 1 { SWEEP_FLOOR_1D } else { SWEEP_FLOOR_2D };
    let mut grids = vec![spec.elements.clone()];
    loop {
        let last = grids.last().unwrap();
        if last.iter().any(|&e| e / 2 < floor) {
            break;
        }
        let next = last.iter().map(|e| e / 2).collect();
        grids.push(next);
    }
    grids.reverse();
    grids
}

struct SweepPoint {
    summary: FigurePoint,
    convergence: Vec<(usize, f64)>,
    p_series: Vec<(usize, f64)>,
    block_norms: String,
}

fn sweep_point(spec: &RunSpec, elements: &[usize]) -> Result<SweepPoint, Failure> {
    let case = spec.case();
    let levels = max_coarsenings(&grid_layout(&case, elements)) + 1;
    let sys = assemble(&case, elements)?;
    let point_spec = RunSpec {
        elements: elements.to_vec(),
        num_levels: levels,
        num_cycles: None,
        guess_ratio: None,
        ..spec.clone()
    };
    let solved = solve(&point_spec, &sys, levels, false)?;
    let out = &solved.outcome;
    let ix = BlockIndexer::new(out.cycles - 1, levels - 1, spec.nu, spec.copies)?;
    let run = emulate(solved.solver.hierarchy(), ix, &solved.v0)?;
    let n = sys.free_dof_count();
    let mut norms = Vec::new();
    run.history.write_block_norms_csv(&mut norms)?;
    Ok(SweepPoint {
        summary: FigurePoint {
            elements: elements.to_vec(),
            n,
            cycles: out.cycles,
            epsilon_tilde: out.final_error(),
            monotone: out.trace.is_monotone(),
            p_index: qmg::analysis::p_index(&run.history),
            qubit_multiple: qubit_multiple(n, levels - 1, spec.nu, out.cycles, spec.copies)?,
        },
        convergence: out.trace.convergence_series(),
        p_series: p_vs_cycles(&run.history, spec.copies),
        block_norms: String::from_utf8(norms).expect("ascii csv"),
    })
}

fn figures(spec: &RunSpec) -> Result<Artifacts, Failure> {
    let grids = sweep_grids(spec);
    let points = grids
        .par_iter()
        .map(|g| sweep_point(spec, g))
        .collect::<Result<Vec<_>, Failure>>()?;

    let label = |e: &[usize]| e.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    let mut conv_rows = Vec::new();
    let mut p_rows = Vec::new();
    let mut q_rows = Vec::new();
    for p in &points {
        let name = label(&p.summary.elements);
        for &(k, e) in &p.convergence {
            conv_rows.push(vec![name.clone(), k.to_string(), e.to_string()]);
        }
        for &(k, v) in &p.p_series {
            p_rows.push(vec![name.clone(), k.to_string(), v.to_string()]);
        }
        let q = &p.summary.qubit_multiple;
        q_rows.push(vec![
            name.clone(),
            q.n.to_string(),
            q.cycles.to_string(),
            q.len_x.to_string(),
            ceil_log2_u64(q.len_x).to_string(),
            ceil_log2_u64(q.n as u64).to_string(),
            q.ratio.to_string(),
        ]);
    }

    let first = &points.first().expect("sweep is never empty").summary;
    let last = &points.last().expect("sweep is never empty").summary;
    let mut checks = vec![Check::new(
        "qubit_multiple_trend",
        last.qubit_multiple.ratio <= first.qubit_multiple.ratio,
        format!("{} at N={} vs {} at N={}", last.qubit_multiple.ratio, last.n, first.qubit_multiple.ratio, first.n),
    )];
    for p in points.iter().map(|p| &p.summary) {
        let name = label(&p.elements);
        checks.push(Check::new(
            format!("reached_tolerance_{name}"),
            p.epsilon_tilde <= spec.tolerance,
            format!("{} cycles, epsilon_tilde {:e}", p.cycles, p.epsilon_tilde),
        ));
        if p.monotone {
            checks.push(Check::new(format!("lemma5_bound_{name}"), p.p_index >= 0.5, format!("p_index {}", p.p_index)));
        }
    }

    let mut report = Report::new(spec);
    report.checks = checks;
    report.figures = Some(points.iter().map(|p| p.summary.clone()).collect());
    let files = vec![
        ("convergence.csv".to_string(), csv_string(&["grid", "cycle", "epsilon_tilde"], conv_rows)),
        ("p_vs_cycles.csv".to_string(), csv_string(&["grid", "cycles", "p_index"], p_rows)),
        (
            "qubit_multiple.csv".to_string(),
            csv_string(&["grid", "n", "cycles", "len_x", "ceil_log2_len_x", "ceil_log2_n", "ratio"], q_rows),
        ),
        ("block_norms.csv".to_string(), points.last().unwrap().block_norms.clone()),
    ];
    Ok(Artifacts { report, files })
}
