//! Success probabilities, subnormalization products and qubit counts for an
//! emulated run, plus the published table rows they are checked against.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::blockenc::ceil_log2;
use crate::fem::{grid_layout, ProblemCase};
use crate::linalg::{broadband_seed, dist2, lanczos_max, norm2, norm2_sq};
use crate::multigrid::{GridHierarchy, MgConfig, MultigridError, Payload, Solver};
use crate::qmg::{BlockIndexer, BlockOperation, CopyPolicy, HistoryVector, OpKind, QmgError};
use crate::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("norm estimate for {kind:?} at level {level} did not converge in {iterations} steps")]
    NormNotConverged {
        kind: OpKind,
        level: usize,
        iterations: usize,
    },
    #[error(transparent)]
    Multigrid(#[from] MultigridError),
    #[error(transparent)]
    Qmg(#[from] QmgError),
}

/// Inputs of the monotone-convergence bound: `‖x̃‖` and `ε = ‖v₀ − x̃‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialGuessError {
    pub solution_norm: f64,
    pub epsilon: f64,
}

impl InitialGuessError {
    pub fn from_vectors<T: Scalar>(v0: &[T], reference: &[T]) -> Self {
        Self {
            solution_norm: norm2(reference).to_f64_lossy(),
            epsilon: dist2(v0, reference).to_f64_lossy(),
        }
    }

    /// `½((‖x̃‖ − ε)/(‖x̃‖ + ε))²`, defined for `ε ≤ ‖x̃‖`.
    pub fn bound(&self) -> Option<f64> {
        let (s, e) = (self.solution_norm, self.epsilon);
        (e <= s && s > 0.0).then(|| 0.5 * ((s - e) / (s + e)).powi(2))
    }
}

pub const LEMMA5_BOUND: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct SuccessReport {
    pub p_index: f64,
    pub lemma5_bound: f64,
    pub lemma6_bound: Option<f64>,
    /// `(i, ‖x_i‖/‖x_out‖)` for `i = 0..=T`.
    pub block_norm_ratios: Vec<(usize, f64)>,
    pub p_anc_estimate: Option<f64>,
    pub log2_p_anc: Option<f64>,
    pub log2_z: Option<f64>,
}

/// `Σ_{i=T}^{T+c} ‖x_i‖² / ‖x‖²` with the copies expanded analytically.
pub fn p_index<T: Scalar>(x: &HistoryVector<T>) -> f64 {
    let ix = x.indexer;
    let window = (ix.c + 1) as f64 * norm2_sq(x.final_iterate()).to_f64_lossy();
    let total = x.norm_sq().to_f64_lossy();
    if total == 0.0 {
        return 0.0;
    }
    window / total
}

pub fn index_probability<T: Scalar>(
    x: &HistoryVector<T>,
    guess: Option<InitialGuessError>,
    z: Option<&ZReport>,
) -> SuccessReport {
    let t = x.indexer.t;
    let out = x.block_norm(t).to_f64_lossy();
    let block_norm_ratios = (0..=t)
        .map(|i| {
            let r = x.block_norm(i).to_f64_lossy();
            (i, if out > 0.0 { r / out } else { f64::NAN })
        })
        .collect();
    let log2_p = z.map(|z| log2_p_anc(x, z.log2_z));
    SuccessReport {
        p_index: p_index(x),
        lemma5_bound: LEMMA5_BOUND,
        lemma6_bound: guess.and_then(|g| g.bound()),
        block_norm_ratios,
        p_anc_estimate: log2_p.map(f64::exp2),
        log2_p_anc: log2_p,
        log2_z: z.map(|z| z.log2_z),
    }
}

/// `log₂(‖x‖² / (Z² ‖x_in‖²))`
pub fn log2_p_anc<T: Scalar>(x: &HistoryVector<T>, log2_z: f64) -> f64 {
    x.norm_sq().to_f64_lossy().log2() - x.input_norm_sq().to_f64_lossy().log2() - 2.0 * log2_z
}

/// Settings for the per-operation norm estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZConfig {
    pub pessimism: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Fail instead of keeping the last Ritz value on non-convergence.
    pub strict: bool,
}

impl Default for ZConfig {
    fn default() -> Self {
        Self {
            pessimism: 1.0,
            tolerance: 1e-10,
            max_iter: 10_000,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ZReport {
    /// `log₂ Z`; `Z` itself overflows `f64` at full scale.
    pub log2_z: f64,
    /// `ζ_i` per schedule entry, pessimism included.
    pub zetas: Vec<f64>,
    pub distinct_estimates: usize,
    pub all_converged: bool,
}

impl ZReport {
    /// `Z`, or infinity once it exceeds the `f64` range.
    pub fn z(&self) -> f64 {
        self.log2_z.exp2()
    }
}

type ZetaKey = (Vec<(Payload, usize)>, bool, usize, usize);

/// `Z = Π ζ_i` with `ζ_i = pessimism · ‖Op_i‖₂`.
///
/// `‖Op_i‖₂` is `max(1, ‖M_i‖₂)` for the restriction `M_i` of the operation
/// to its source and target blocks (every other block maps to itself), and
/// `‖M_i‖₂` comes from Lanczos iteration on `M_iᵀ M_i`. Estimates are shared
/// between operations with identical payloads and block levels.
pub fn z_factor<T: Scalar>(
    schedule: &[BlockOperation],
    hierarchy: &GridHierarchy<T>,
    indexer: &BlockIndexer,
    config: &ZConfig,
) -> Result<ZReport, AnalysisError> {
    let levels = indexer.block_levels();
    let level_of = |b: usize| levels.get(b).copied().unwrap_or(0);
    let mut cache: BTreeMap<ZetaKey, (f64, bool)> = BTreeMap::new();
    let mut zetas = Vec::with_capacity(schedule.len());
    let mut log2_z = 0.0;
    for op in schedule {
        let key: ZetaKey = (
            op.sources.iter().map(|&(s, p)| (p, level_of(s))).collect(),
            op.keeps_target,
            op.multiplicity,
            level_of(op.target),
        );
        let (norm, _) = match cache.get(&key) {
            Some(&hit) => hit,
            None => {
                let est = operation_norm(op, hierarchy, &levels, config)?;
                cache.insert(key, est);
                est
            }
        };
        let zeta = norm.max(1.0) * config.pessimism;
        log2_z += zeta.log2();
        zetas.push(zeta);
    }
    Ok(ZReport {
        log2_z,
        zetas,
        distinct_estimates: cache.len(),
        all_converged: cache.values().all(|&(_, c)| c),
    })
}

/// `(‖M‖₂, converged)` for the restricted operator of `op`.
pub fn operation_norm<T: Scalar>(
    op: &BlockOperation,
    hierarchy: &GridHierarchy<T>,
    levels: &[usize],
    config: &ZConfig,
) -> Result<(f64, bool), AnalysisError> {
    let level_of = |b: usize| levels.get(b).copied().unwrap_or(0);
    let dims: Vec<usize> = op
        .sources
        .iter()
        .map(|&(s, _)| hierarchy.dof_count(level_of(s)))
        .collect();
    let target_dim = hierarchy.dof_count(level_of(op.target));
    let keep = op.keeps_target;
    let m = T::from_count(op.multiplicity);
    let domain: usize = dims.iter().sum::<usize>() + if keep { target_dim } else { 0 };

    let mut y_t = vec![T::zero(); target_dim];
    let mut scratch: Vec<T> = Vec::new();
    let mut failure: Option<MultigridError> = None;
    let outcome = lanczos_max(broadband_seed::<T>(domain), T::lit(config.tolerance), config.max_iter, |x, out| {
        y_t.iter_mut().for_each(|v| *v = T::zero());
        if keep {
            let xt = &x[domain - target_dim..];
            y_t.copy_from_slice(xt);
        }
        let mut off = 0;
        for (k, &(_, payload)) in op.sources.iter().enumerate() {
            let xk = &x[off..off + dims[k]];
            if let Err(e) = hierarchy.accumulate(payload, xk, &mut y_t) {
                failure.get_or_insert(e);
            }
            off += dims[k];
        }
        let mut off = 0;
        for (k, &(_, payload)) in op.sources.iter().enumerate() {
            let (xk, ok) = (&x[off..off + dims[k]], &mut out[off..off + dims[k]]);
            ok.copy_from_slice(xk);
            match hierarchy.payload_matrix(payload) {
                Some(p) => {
                    scratch.resize(p.ncols(), T::zero());
                    p.mul_transpose_vec_into(&y_t, &mut scratch);
                    ok.iter_mut().zip(&scratch).for_each(|(o, &s)| *o += m * s);
                }
                None => ok.iter_mut().zip(&y_t).for_each(|(o, &s)| *o += m * s),
            }
            off += dims[k];
        }
        if keep {
            out[domain - target_dim..].copy_from_slice(&y_t);
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    if !outcome.converged && config.strict {
        return Err(AnalysisError::NormNotConverged {
            kind: op.kind,
            level: op.level,
            iterations: outcome.iterations,
        });
    }
    Ok((outcome.eigenvalue.to_f64_lossy().max(0.0).sqrt(), outcome.converged))
}

/// Qubit and length counts of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ResourceReport {
    pub len_x: u64,
    pub qubits_work: usize,
    pub qubits_total_state: usize,
    /// `Ξ = max ξ_i + ⌈log₂(T + c + 1)⌉ + 1` with single-ancilla dilations.
    pub xi: usize,
    pub log2_z: Option<f64>,
    pub z: Option<f64>,
    pub amplification_rounds: Option<f64>,
    pub cycles_used: Option<usize>,
    pub epsilon_tilde: Option<f64>,
}

pub fn qubit_report(indexer: &BlockIndexer, n: usize, z: Option<&ZReport>) -> ResourceReport {
    let len_x = indexer.len_x(n);
    ResourceReport {
        len_x,
        qubits_work: ceil_log2(n),
        qubits_total_state: ceil_log2_u64(len_x),
        xi: 1 + ceil_log2(indexer.total_blocks()) + 1,
        log2_z: z.map(|z| z.log2_z),
        z: z.map(ZReport::z),
        amplification_rounds: z.map(|z| z.z().ceil()),
        cycles_used: None,
        epsilon_tilde: None,
    }
}

pub fn ceil_log2_u64(n: u64) -> usize {
    if n <= 1 {
        0
    } else {
        (u64::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// p_index the run would have had if it had stopped after `k` cycles, for
/// `k = 1..=𝒱+1`. Shorter runs are prefixes of this one, so one history is
/// enough.
pub fn p_vs_cycles<T: Scalar>(x: &HistoryVector<T>, copies: CopyPolicy) -> Vec<(usize, f64)> {
    let ix = x.indexer;
    let sq: Vec<f64> = (0..=ix.t)
        .map(|i| norm2_sq(x.block_ref(i)).to_f64_lossy())
        .collect();
    let mut prefix = 0.0;
    let mut out = Vec::with_capacity(ix.num_cycles());
    let mut next = 0;
    for k in 1..=ix.num_cycles() {
        let t_k = k * ix.t_v;
        while next <= t_k {
            prefix += sq[next];
            next += 1;
        }
        let c_k = copies.resolve(t_k) as f64;
        let fin = sq[t_k];
        let total = prefix + c_k * fin;
        out.push((k, if total > 0.0 { (c_k + 1.0) * fin / total } else { 0.0 }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QubitMultiplePoint {
    pub n: usize,
    pub cycles: usize,
    pub len_x: u64,
    pub ratio: f64,
}

/// `⌈log₂ len_x⌉ / ⌈log₂ N⌉` for a run that needed `cycles` V-cycles.
pub fn qubit_multiple(n: usize, cal_l: usize, nu: usize, cycles: usize, copies: CopyPolicy) -> Result<QubitMultiplePoint, QmgError> {
    let ix = BlockIndexer::new(cycles - 1, cal_l, nu, copies)?;
    let len_x = ix.len_x(n);
    Ok(QubitMultiplePoint {
        n,
        cycles,
        len_x,
        ratio: ceil_log2_u64(len_x) as f64 / ceil_log2(n) as f64,
    })
}

/// One point per 1D case-1 grid with `2^k` elements: cycles needed for
/// `ε̃ ≤ tol` from a zero guess, and the resulting qubit multiple.
pub fn qubit_multiple_sweep(
    exponents: &[u32],
    nu: usize,
    copies: CopyPolicy,
    tol: f64,
    max_cycles: usize,
) -> Result<Vec<QubitMultiplePoint>, AnalysisError> {
    let case = ProblemCase::<f64>::new(1, 1).expect("known case");
    exponents
        .iter()
        .map(|&k| {
            let n_el = 1usize << k;
            let sys = crate::fem::assemble_1d(n_el, &case).expect("power of two");
            let cal_l = k as usize - 1;
            let cfg = MgConfig::new(cal_l + 1, 1, nu);
            let solver = Solver::new(&sys, &cfg)?;
            let out = solver.solve_until(&vec![0.0; sys.free_dof_count()], tol, max_cycles, false)?;
            Ok(qubit_multiple(sys.free_dof_count(), cal_l, nu, out.cycles.max(1), copies)?)
        })
        .collect()
}

/// One row of the published resource tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedRow {
    pub dimension: usize,
    pub case_id: usize,
    pub cal_l: usize,
    pub cal_v: usize,
    pub nu: usize,
    pub n: usize,
    pub len_x: u64,
    pub log2_n: usize,
    pub log2_len_x: usize,
}

pub const PUBLISHED_ROWS: [PublishedRow; 7] = [
    PublishedRow { dimension: 1, case_id: 1, cal_l: 12, cal_v: 15, nu: 6, n: 8191, len_x: 46_926_239, log2_n: 13, log2_len_x: 26 },
    PublishedRow { dimension: 1, case_id: 2, cal_l: 13, cal_v: 15, nu: 6, n: 8192, len_x: 50_601_984, log2_n: 13, log2_len_x: 26 },
    PublishedRow { dimension: 2, case_id: 1, cal_l: 6, cal_v: 25, nu: 6, n: 16129, len_x: 79_693_389, log2_n: 14, log2_len_x: 27 },
    PublishedRow { dimension: 2, case_id: 2, cal_l: 6, cal_v: 35, nu: 6, n: 8128, len_x: 55_603_648, log2_n: 14, log2_len_x: 26 },
    PublishedRow { dimension: 2, case_id: 3, cal_l: 6, cal_v: 45, nu: 6, n: 8255, len_x: 72_156_955, log2_n: 13, log2_len_x: 27 },
    PublishedRow { dimension: 2, case_id: 4, cal_l: 6, cal_v: 45, nu: 6, n: 4096, len_x: 35_803_136, log2_n: 12, log2_len_x: 26 },
    PublishedRow { dimension: 2, case_id: 5, cal_l: 6, cal_v: 50, nu: 6, n: 4160, len_x: 36_362_560, log2_n: 13, log2_len_x: 26 },
];

#[derive(Debug, Clone, Serialize)]
pub struct TableCheck {
    pub row: PublishedRow,
    /// Free dofs of our grid for the case.
    pub n_grid: usize,
    pub len_x: u64,
    pub log2_n: usize,
    pub log2_len_x: usize,
    pub n_match: bool,
    pub len_x_match: bool,
    pub log2_n_match: bool,
    pub log2_len_x_match: bool,
    /// `𝒱` that would give the published length, when it differs.
    pub implied_cal_v: Option<usize>,
}

impl TableCheck {
    pub fn all_match(&self) -> bool {
        self.n_match && self.len_x_match && self.log2_n_match && self.log2_len_x_match
    }
}

/// Recomputes every published cell from `(𝓛, 𝒱, ν, N)` with `c = T`.
pub fn reproduce_tables() -> Vec<TableCheck> {
    PUBLISHED_ROWS
        .iter()
        .map(|row| {
            let case = ProblemCase::<f64>::new(row.dimension, row.case_id).expect("published case");
            let n_grid = grid_layout(&case, &case.reference_elements()).free_count();
            let ix = BlockIndexer::new(row.cal_v, row.cal_l, row.nu, CopyPolicy::Full).expect("published layout");
            let len_x = ix.len_x(row.n);
            let log2_n = ceil_log2(row.n);
            let log2_len_x = ceil_log2_u64(len_x);
            let per_cycle = 2 * ix.t_v as u64 * row.n as u64;
            let implied = (len_x != row.len_x)
                .then(|| {
                    // len_x = (2 (𝒱 + 1) T_V + 1) N
                    let blocks = row.len_x / row.n as u64;
                    let fits = row.len_x % row.n as u64 == 0 && blocks % 2 == 1;
                    let cycles = (blocks - 1) / 2;
                    (fits && cycles.is_multiple_of(ix.t_v as u64) && per_cycle > 0)
                        .then(|| (cycles / ix.t_v as u64) as usize - 1)
                })
                .flatten();
            TableCheck {
                row: *row,
                n_grid,
                len_x,
                log2_n,
                log2_len_x,
                n_match: n_grid == row.n,
                len_x_match: len_x == row.len_x,
                log2_n_match: log2_n == row.log2_n,
                log2_len_x_match: log2_len_x == row.log2_len_x,
                implied_cal_v: implied,
            }
        })
        .collect()
}

pub fn write_csv<W: Write, R: AsRef<[String]>>(mut w: W, header: &[&str], rows: impl IntoIterator<Item = R>) -> io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.as_ref().join(","))?;
    }
    Ok(())
}
