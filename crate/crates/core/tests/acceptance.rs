//! Acceptance run: one `[PASS]` / `[FAIL]` line per criterion.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cycles_to_tolerance, reduced_cases, Reduced};
use qmg::analysis::{p_index, qubit_multiple_sweep, reproduce_tables, InitialGuessError, LEMMA5_BOUND};
use qmg::blockenc::{
    apply_encoded, compressed_ancillas, dilate, embed_on_ancilla, product_encoding, tiny_end_to_end, DenseMatrix,
};
use qmg::fem::{assemble, assemble_1d, assemble_2d_with, exact_solution_1d, ProblemCase};
use qmg::linalg::{max_abs, norm2, norm2_sq};
use qmg::multigrid::{reference_solution, GridHierarchy, MgConfig, Solver};
use qmg::qmg::{max_trace_deviation, run_qmg, CopyPolicy};
use qmg::sparse::CsrMatrix;

const NU: usize = 6;
const TARGET_EPSILON: f64 = 1e-10;
const MAX_CYCLES: usize = 60;

const ORACLE_REL_TOL: f64 = 1e-12;
const GUESS_RATIOS: [f64; 3] = [0.1, 0.5, 0.9];
const CYCLE_CAP_1D: usize = 32;
const CYCLE_CAP_2D: usize = 52;
const TINY_DIRECTION_TOL: f64 = 1e-10;
const TINY_PROBABILITY_TOL: f64 = 1e-12;
const DILATION_COUNT: usize = 100;
const DILATION_MAX_DIM: usize = 16;
const ORTHOGONALITY_TOL: f64 = 1e-10;
const PROBABILITY_IDENTITY_TOL: f64 = 1e-12;
const CLOSURE_MAX_DIM: usize = 8;
const CLOSURE_TOL: f64 = 1e-10;
const GALERKIN_TOL: f64 = 1e-12;
const NODAL_TOL: f64 = 1e-10;
const PATCH_TOL: f64 = 1e-10;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("table reproduction", c1_tables),
        ("oracle equivalence", c2_oracle),
        ("zero-guess index probability", c3_zero_guess),
        ("perturbed-guess index probability", c4_perturbed_guess),
        ("full-size convergence", c5_convergence),
        ("tiny statevector run", c6_tiny_quantum),
        ("block-encoding properties", c7_block_encoding),
        ("finite element suite", c8_fem),
        ("qubit-multiple trend", c9_qubit_multiple),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        if !verdict.pass {
            failures += 1;
        }
        println!(
            "[{}] C{} {name}: {} ({:.2?})",
            if verdict.pass { "PASS" } else { "FAIL" },
            k + 1,
            verdict.detail,
            start.elapsed()
        );
    }
    if failures > 0 {
        std::process::exit(1);
    }
}

fn c1_tables() -> Verdict {
    let checks = reproduce_tables();
    let mut cells = 0;
    let mut mismatches = Vec::new();
    for c in &checks {
        let label = format!("{}D case {}", c.row.dimension, c.row.case_id);
        let cmp = [
            ("N", c.n_grid as u64, c.row.n as u64),
            ("len(x)", c.len_x, c.row.len_x),
            ("ceil log2 N", c.log2_n as u64, c.row.log2_n as u64),
            ("ceil log2 len(x)", c.log2_len_x as u64, c.row.log2_len_x as u64),
        ];
        for (what, ours, published) in cmp {
            cells += 1;
            if ours != published {
                mismatches.push(format!("{label} {what} computed {ours} vs table {published}"));
            }
        }
    }
    let matched = cells - mismatches.len();
    let mut detail = format!("{matched}/{cells} cells match");
    if !mismatches.is_empty() {
        detail.push_str(&format!("; {}", mismatches.join("; ")));
    }
    Verdict::new(mismatches.is_empty(), detail)
}

/// Zero-guess run of a reduced case to the target tolerance.
struct ConvergedRun {
    case: Reduced,
    cycles: usize,
    deviation: f64,
    p_index: f64,
    monotone: bool,
}

fn converged_run(case: &Reduced, v0: &[f64]) -> Result<ConvergedRun, String> {
    let system = case.system();
    let cycles = cycles_to_tolerance(&system, &case.config(1, NU), v0, TARGET_EPSILON, MAX_CYCLES)
        .ok_or_else(|| format!("{} did not reach {TARGET_EPSILON:e}", case.label()))?;
    let config = case.config(cycles, NU);
    let solver = Solver::new(&system, &config).map_err(|e| e.to_string())?;
    let classical = solver.solve(v0, true).map_err(|e| e.to_string())?;
    let run = run_qmg(&system, &config, v0, CopyPolicy::Full).map_err(|e| e.to_string())?;
    let deviation = max_trace_deviation(&run.history, &classical.trace)
        .ok_or_else(|| format!("{}: trace slot missing", case.label()))?;
    Ok(ConvergedRun {
        case: case.clone(),
        cycles,
        deviation,
        p_index: p_index(&run.history),
        monotone: classical.trace.is_monotone(),
    })
}

fn zero_guess_runs() -> Result<Vec<ConvergedRun>, String> {
    reduced_cases()
        .iter()
        .map(|c| {
            let n = c.system().free_dof_count();
            converged_run(c, &vec![0.0; n])
        })
        .collect()
}

fn c2_oracle() -> Verdict {
    let runs = match zero_guess_runs() {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, e),
    };
    let worst = runs.iter().map(|r| r.deviation).fold(0.0, f64::max);
    let per_case: Vec<String> = runs
        .iter()
        .map(|r| format!("{} ({} cycles) {:.1e}", r.case.label(), r.cycles, r.deviation))
        .collect();
    Verdict::new(
        worst <= ORACLE_REL_TOL,
        format!("max block deviation {worst:.1e} <= {ORACLE_REL_TOL:e}; {}", per_case.join(", ")),
    )
}

fn c3_zero_guess() -> Verdict {
    let runs = match zero_guess_runs() {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, e),
    };
    let monotone: Vec<&ConvergedRun> = runs.iter().filter(|r| r.monotone).collect();
    let skipped: Vec<String> = runs.iter().filter(|r| !r.monotone).map(|r| r.case.label()).collect();
    let min_p = monotone.iter().map(|r| r.p_index).fold(f64::INFINITY, f64::min);
    let ps: Vec<String> = runs.iter().map(|r| format!("{} p={:.4}", r.case.label(), r.p_index)).collect();
    let pass = !monotone.is_empty() && min_p >= LEMMA5_BOUND;
    let mut detail = format!(
        "{}/{} runs monotone, min p_index {min_p:.4} >= {LEMMA5_BOUND}; {}",
        monotone.len(),
        runs.len(),
        ps.join(", ")
    );
    if !skipped.is_empty() {
        detail.push_str(&format!("; not monotone: {}", skipped.join(", ")));
    }
    Verdict::new(pass, detail)
}

fn c4_perturbed_guess() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst_margin = f64::INFINITY;
    let mut failures = Vec::new();
    for case in reduced_cases() {
        let system = case.system();
        let solver = match Solver::new(&system, &case.config(1, NU)) {
            Ok(s) => s,
            Err(e) => return Verdict::new(false, format!("{}: {e}", case.label())),
        };
        let reference = solver.reference().to_vec();
        let n = reference.len();
        let random: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let smooth = vec![1.0; n];
        for ratio in GUESS_RATIOS {
            for (shape, direction) in [("random", &random), ("smooth", &smooth)] {
                let scale = ratio * norm2(&reference) / norm2(direction);
                let v0: Vec<f64> = reference.iter().zip(direction.iter()).map(|(&u, &d)| u + scale * d).collect();
                let guess = InitialGuessError::from_vectors(&v0, &reference);
                let Some(bound) = guess.bound() else {
                    failures.push(format!("{} {shape} {ratio}: bound undefined", case.label()));
                    continue;
                };
                match converged_run(&case, &v0) {
                    Ok(run) if run.monotone => {
                        checked += 1;
                        worst_margin = worst_margin.min(run.p_index - bound);
                        if run.p_index < bound {
                            failures.push(format!(
                                "{} {shape} {ratio}: p {:.4} < bound {bound:.4}",
                                case.label(),
                                run.p_index
                            ));
                        }
                    }
                    Ok(_) => skipped += 1,
                    Err(e) => failures.push(e),
                }
            }
        }
    }
    let mut detail = format!(
        "{checked} monotone runs, smallest p_index - bound {worst_margin:.4}, {skipped} non-monotone skipped"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    Verdict::new(failures.is_empty() && checked > 0, detail)
}

fn c5_convergence() -> Verdict {
    let runs = [
        (1, vec![8192], 13, CYCLE_CAP_1D),
        (2, vec![128, 128], 7, CYCLE_CAP_2D),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (dimension, elements, levels, cap) in runs {
        let start = Instant::now();
        let case = ProblemCase::<f64>::new(dimension, 1).expect("known case");
        let system = assemble(&case, &elements).expect("valid grid");
        let outcome = Solver::new(&system, &MgConfig::new(levels, 1, NU))
            .map_err(|e| e.to_string())
            .and_then(|s| {
                s.solve_until(&vec![0.0; system.free_dof_count()], TARGET_EPSILON, cap, false)
                    .map_err(|e| e.to_string())
            });
        match outcome {
            Ok(out) => {
                let monotone = out.trace.is_monotone();
                pass &= monotone;
                parts.push(format!(
                    "{dimension}D case 1 N={}: {} cycles (cap {cap}), eps {:.2e}, monotone {monotone}, {:.1?}",
                    system.free_dof_count(),
                    out.cycles,
                    out.final_error(),
                    start.elapsed()
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{dimension}D case 1: {e}"));
            }
        }
    }
    Verdict::new(pass, parts.join("; "))
}

fn c6_tiny_quantum() -> Verdict {
    let case = ProblemCase::<f64>::new(1, 1).expect("known case");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pass = true;
    let mut worst_dir = 0.0f64;
    let mut worst_prob = 0.0f64;
    let mut runs = 0;
    let mut errors = Vec::new();
    for elements in [4usize, 8] {
        let system = assemble_1d(elements, &case).expect("valid grid");
        let n = system.free_dof_count();
        for cycles in [1usize, 2] {
            let config = MgConfig::new(2, cycles, 2);
            let random: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for v0 in [vec![0.0; n], random] {
                match tiny_end_to_end(&system, &config, &v0, CopyPolicy::Full) {
                    Ok(r) => {
                        runs += 1;
                        worst_dir = worst_dir.max(r.direction_residual);
                        worst_prob = worst_prob.max(r.probability_rel_error);
                        pass &= r.direction_residual <= TINY_DIRECTION_TOL
                            && r.probability_rel_error <= TINY_PROBABILITY_TOL;
                    }
                    Err(e) => {
                        pass = false;
                        errors.push(format!("N={n} cycles={cycles}: {e}"));
                    }
                }
            }
        }
    }
    let mut detail = format!(
        "{runs} runs, direction residual {worst_dir:.1e} <= {TINY_DIRECTION_TOL:e}, probability rel. error {worst_prob:.1e} <= {TINY_PROBABILITY_TOL:e}"
    );
    if !errors.is_empty() {
        detail.push_str(&format!("; {}", errors.join("; ")));
    }
    Verdict::new(pass, detail)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    DenseMatrix::from_rows(&rows)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = norm2(&v);
    v.into_iter().map(|x| x / s).collect()
}

fn c7_block_encoding() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_orth = 0.0f64;
    let mut worst_top = 0.0f64;
    let mut worst_prob = 0.0f64;
    for k in 0..DILATION_COUNT {
        let n = rng.gen_range(1..=DILATION_MAX_DIM);
        let a = random_matrix(&mut rng, n);
        let norm = a.spectral_norm();
        // every tenth encoding sits exactly at α = ‖A‖₂
        let alpha = if k % 10 == 0 { norm } else { norm * rng.gen_range(1.0..3.0) };
        let enc = match dilate(&a, alpha) {
            Ok(e) => e,
            Err(e) => return Verdict::new(false, format!("dilation {k} rejected: {e}")),
        };
        worst_orth = worst_orth.max(enc.orthogonality_residual());
        worst_top = worst_top.max(enc.top_left_residual());
        let b = random_unit(&mut rng, n);
        let expected = norm2_sq(&a.mul_vec(&b)) / (alpha * alpha);
        let measured = apply_encoded(&enc, &b).expect("matching size").success_prob;
        worst_prob = worst_prob.max((measured - expected).abs());
    }

    let mut worst_closure = 0.0f64;
    for n in 1..=CLOSURE_MAX_DIM {
        let (a, b) = (random_matrix(&mut rng, n), random_matrix(&mut rng, n));
        let (alpha, beta) = (a.spectral_norm() * 1.25, b.spectral_norm() * 1.5);
        let (ea, eb) = (dilate(&a, alpha).expect("valid"), dilate(&b, beta).expect("valid"));
        let ua = embed_on_ancilla(&ea.unitary, n, 0, 2);
        let ub = embed_on_ancilla(&eb.unitary, n, 1, 2);
        let top = ua.matmul(&ub).block(0, 0, n, n);
        let ab = a.matmul(&b).scaled(1.0 / (alpha * beta));
        worst_closure = worst_closure.max(top.max_abs_diff(&ab));
        let prod = product_encoding(&[ea, eb]).expect("same size");
        worst_closure = worst_closure.max((prod.z - alpha * beta).abs() / (alpha * beta));
    }

    // (ancillas per factor, hand-computed max + ⌈log₂ j⌉ + 1)
    let hand: [(&[usize], usize); 5] = [
        (&[1, 1], 3),
        (&[1, 1, 1, 1], 4),
        (&[1, 2, 1, 3], 6),
        (&[1; 8], 5),
        (&[2, 1, 1, 1, 1, 1, 1, 4], 8),
    ];
    let formula_ok = hand.iter().all(|&(a, expected)| compressed_ancillas(a) == expected);

    let pass = worst_orth <= ORTHOGONALITY_TOL
        && worst_top <= ORTHOGONALITY_TOL
        && worst_prob <= PROBABILITY_IDENTITY_TOL
        && worst_closure <= CLOSURE_TOL
        && formula_ok;
    Verdict::new(
        pass,
        format!(
            "{DILATION_COUNT} dilations: orthogonality {worst_orth:.1e}, top-left {worst_top:.1e} (<= {ORTHOGONALITY_TOL:e}), \
             probability identity {worst_prob:.1e} (<= {PROBABILITY_IDENTITY_TOL:e}); product closure {worst_closure:.1e} \
             (<= {CLOSURE_TOL:e}); compressed ancilla spot checks {}",
            if formula_ok { "ok" } else { "wrong" }
        ),
    )
}

fn relative_max_diff(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> f64 {
    a.max_abs_diff(b) / b.max_abs()
}

fn c8_fem() -> Verdict {
    let mut galerkin = 0.0f64;
    let mut assembled = 0.0f64;
    for case in reduced_cases() {
        let system = case.system();
        let config = case.config(1, NU);
        let h = GridHierarchy::build(&system, &config).expect("hierarchy");
        let pc = ProblemCase::<f64>::new(case.dimension, case.case_id).expect("known case");
        let s = h.restriction_weight();
        for l in 0..h.depth() {
            let fine = h.level(l);
            let coarse = &h.level(l + 1).operator;
            let (p, r) = (fine.prolongation.as_ref().unwrap(), fine.restriction.as_ref().unwrap());
            galerkin = galerkin.max(relative_max_diff(&r.matmul(&fine.operator).matmul(p), coarse));
            // the coarse operator is s^{L+1}/σ times the stiffness assembled on the coarse mesh
            let elements: Vec<usize> = case.elements.iter().map(|&e| e >> (l + 1)).collect();
            let direct = assemble(&pc, &elements).expect("coarse grid").matrix;
            let scaled = direct.scaled(s.powi(l as i32 + 1) / h.sigma());
            assembled = assembled.max(relative_max_diff(coarse, &scaled));
        }
    }

    let mut nodal = 0.0f64;
    for case_id in [1, 2] {
        let pc = ProblemCase::<f64>::new(1, case_id).expect("known case");
        for elements in [64usize, 1024, 8192] {
            let system = assemble_1d(elements, &pc).expect("valid grid");
            let h = GridHierarchy::build(&system, &MgConfig::new(2, 1, NU)).expect("hierarchy");
            let u = reference_solution(&system, &h, NU).expect("solve");
            let exact: Vec<f64> = system.dof_coords().iter().map(|c| exact_solution_1d(&pc, c[0])).collect();
            let err: Vec<f64> = u.iter().zip(&exact).map(|(a, b)| a - b).collect();
            nodal = nodal.max(max_abs(&err));
        }
    }

    let mut patch = 0.0f64;
    let g = |x: f64, y: f64| 1.0 + 2.0 * x - 3.0 * y + 0.5 * x * y;
    let pc = ProblemCase::<f64>::new(2, 1).expect("known case").with_forcing(0.0);
    for (nx, ny) in [(8usize, 8usize), (16, 8), (32, 32)] {
        let system = assemble_2d_with(nx, ny, &pc, g).expect("valid grid");
        let h = GridHierarchy::build(&system, &MgConfig::new(2, 1, NU)).expect("hierarchy");
        let u = reference_solution(&system, &h, NU).expect("solve");
        let err: Vec<f64> = u
            .iter()
            .zip(system.dof_coords())
            .map(|(&v, c)| v - g(c[0], c[1]))
            .collect();
        patch = patch.max(max_abs(&err));
    }

    let pass = galerkin <= GALERKIN_TOL && assembled <= GALERKIN_TOL && nodal <= NODAL_TOL && patch <= PATCH_TOL;
    Verdict::new(
        pass,
        format!(
            "Galerkin identity {galerkin:.1e}, vs coarse assembly {assembled:.1e} (<= {GALERKIN_TOL:e}); \
             1D nodal error {nodal:.1e} (<= {NODAL_TOL:e}); 2D patch test {patch:.1e} (<= {PATCH_TOL:e})"
        ),
    )
}

fn c9_qubit_multiple() -> Verdict {
    let exponents: Vec<u32> = (5..=13).collect();
    let sweep = match qubit_multiple_sweep(&exponents, NU, CopyPolicy::OneFewer, TARGET_EPSILON, MAX_CYCLES) {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let (first, last) = (sweep.first().unwrap(), sweep.last().unwrap());
    let series: Vec<String> = sweep
        .iter()
        .map(|p| format!("N={} {}cyc {:.3}", p.n, p.cycles, p.ratio))
        .collect();
    Verdict::new(
        last.ratio <= first.ratio,
        format!(
            "ratio {:.3} at N={} vs {:.3} at N={}; {}",
            last.ratio,
            last.n,
            first.ratio,
            first.n,
            series.join(", ")
        ),
    )
}
