//! Geometric multigrid V-cycles with Richardson smoothing on the globally
//! scaled system, plus full iterate recording.
//!
//! The fine system `K u = b` is divided by one scale `σ ≥ λ_max(K)`, giving
//! `A⁰ = K/σ` and `f = b/σ`. Coarse operators are Galerkin products
//! `A^{L+1} = R_L A^L P_L` with `R_L = s·P_Lᵀ`. Every smoothing step is
//! `v ← (I − A^L) v + f^L`, with no direct coarse solve.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::fem::{AssembledSystem, GridLayout};
use crate::linalg::{broadband_seed, dist2, norm2, power_iteration};
use crate::sparse::{BandCholesky, CsrMatrix, SparseError};
use crate::Scalar;

/// Reference solutions come from a direct solve up to this many dofs.
pub const DIRECT_SOLVE_LIMIT: usize = 20_000;
/// Extra V-cycles used for the reference solution of larger systems.
pub const REFERENCE_CYCLES: usize = 200;
/// Iterative-refinement sweeps applied to the direct solve.
pub const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MultigridError {
    #[error("nu must be at least 2, got {0}")]
    InvalidNu(usize),
    #[error("need at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("grid cannot be coarsened {requested} times (max {available})")]
    NotCoarsenable { requested: usize, available: usize },
    #[error("smoother scale {sigma} is below the lambda_max estimate {lambda_max}")]
    ScaleTooSmall { sigma: f64, lambda_max: f64 },
    #[error("vector has length {found}, level expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("diverged at cycle {cycle}: error ratio {ratio}")]
    Diverged { cycle: usize, ratio: f64 },
    #[error("no convergence to {tolerance} within {cycles} cycles (reached {reached})")]
    NotConverged {
        tolerance: f64,
        cycles: usize,
        reached: f64,
    },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Multiplier `s` in `R = s·Pᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestrictionScaling {
    /// `s = 2^{2−d}`: keeps `λ_max(A^L)` level-independent, so one global
    /// Richardson step size stays effective on every level.
    Balanced,
    /// `s = 2^{−d}`: full weighting.
    FullWeighting,
    Custom(f64),
}

impl RestrictionScaling {
    pub fn factor(&self, dimension: usize) -> f64 {
        match *self {
            RestrictionScaling::Balanced => 2f64.powi(2 - dimension as i32),
            RestrictionScaling::FullWeighting => 2f64.powi(-(dimension as i32)),
            RestrictionScaling::Custom(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgConfig {
    /// `𝓛 + 1`; level 0 is the finest.
    pub num_levels: usize,
    /// Total number of V-cycles, `𝒱 + 1`.
    pub num_cycles: usize,
    /// `ν`: each level runs `ν − 1` pre- and `ν − 1` post-smoothing steps.
    pub nu: usize,
    /// Fixed `σ`; `None` uses `margin · λ_max` from power iteration.
    pub smoother_scale: Option<f64>,
    pub scale_margin: f64,
    pub restriction: RestrictionScaling,
}

impl MgConfig {
    pub fn new(num_levels: usize, num_cycles: usize, nu: usize) -> Self {
        Self {
            num_levels,
            num_cycles,
            nu,
            smoother_scale: None,
            scale_margin: 1.05,
            restriction: RestrictionScaling::Balanced,
        }
    }

    pub fn coarsest(&self) -> usize {
        self.num_levels - 1
    }

    fn validate(&self) -> Result<(), MultigridError> {
        if self.nu < 2 {
            return Err(MultigridError::InvalidNu(self.nu));
        }
        if self.num_levels < 2 {
            return Err(MultigridError::TooFewLevels(self.num_levels));
        }
        Ok(())
    }
}

/// Number of times a layout can be halved while keeping at least one dof.
pub fn max_coarsenings<T: Scalar>(layout: &GridLayout<T>) -> usize {
    let mut count = 0;
    let mut current = layout.clone();
    while let Some(next) = current.coarsen() {
        count += 1;
        current = next;
    }
    count
}

/// Matrix factor of one block-operation source term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Payload {
    /// `I − A^L`
    Relax(usize),
    /// `−A^L`
    NegOperator(usize),
    /// `R_L`: level `L` to `L + 1`
    Restrict(usize),
    /// `P_L`: level `L + 1` to `L`
    Prolong(usize),
    Identity,
}

#[derive(Debug, Clone)]
pub struct Level<T> {
    pub operator: CsrMatrix<T>,
    pub relax: CsrMatrix<T>,
    pub neg_operator: CsrMatrix<T>,
    /// Maps level `L + 1` to this level; `None` on the coarsest level.
    pub prolongation: Option<CsrMatrix<T>>,
    /// Maps this level to `L + 1`; `None` on the coarsest level.
    pub restriction: Option<CsrMatrix<T>>,
    pub layout: GridLayout<T>,
}

impl<T: Scalar> Level<T> {
    pub fn dof_count(&self) -> usize {
        self.operator.nrows()
    }
}

fn relax_from<T: Scalar>(a: &CsrMatrix<T>) -> CsrMatrix<T> {
    let n = a.nrows();
    let mut triplets: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
    for i in 0..n {
        triplets.extend(a.row(i).map(|(j, v)| (i, j, -v)));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Scaled operators and transfers on every level.
#[derive(Debug, Clone)]
pub struct GridHierarchy<T> {
    levels: Vec<Level<T>>,
    rhs: Vec<T>,
    sigma: T,
    lambda_max: T,
    restriction_weight: T,
}

impl<T: Scalar> GridHierarchy<T> {
    pub fn build(system: &AssembledSystem<T>, config: &MgConfig) -> Result<Self, MultigridError> {
        config.validate()?;
        let available = max_coarsenings(&system.layout);
        if config.coarsest() > available {
            return Err(MultigridError::NotCoarsenable {
                requested: config.coarsest(),
                available,
            });
        }
        let lambda_max = estimate_lambda_max(&system.matrix);
        let sigma = match config.smoother_scale {
            Some(s) => {
                let s = T::lit(s);
                if s < lambda_max {
                    return Err(MultigridError::ScaleTooSmall {
                        sigma: s.to_f64_lossy(),
                        lambda_max: lambda_max.to_f64_lossy(),
                    });
                }
                s
            }
            None => lambda_max * T::lit(config.scale_margin),
        };
        let inv = T::one() / sigma;
        let weight = T::lit(config.restriction.factor(system.layout.dimension()));

        let mut layouts = vec![system.layout.clone()];
        for _ in 0..config.coarsest() {
            let next = layouts.last().and_then(GridLayout::coarsen).expect("checked above");
            layouts.push(next);
        }

        // Galerkin chain on the unscaled stiffness, scaled once per level:
        // keeps coarse entries exact wherever the fine ones are dyadic.
        let mut unscaled = system.matrix.clone();
        let mut levels = Vec::with_capacity(layouts.len());
        for (l, layout) in layouts.iter().enumerate() {
            let (prolongation, restriction) = match layouts.get(l + 1) {
                Some(coarse) => {
                    let p = layout.prolongation(coarse);
                    let r = p.transpose().scaled(weight);
                    (Some(p), Some(r))
                }
                None => (None, None),
            };
            let next = match (&prolongation, &restriction) {
                (Some(p), Some(r)) => Some(r.matmul(&unscaled).matmul(p)),
                _ => None,
            };
            let operator = unscaled.scaled(inv);
            levels.push(Level {
                relax: relax_from(&operator),
                neg_operator: operator.scaled(-T::one()),
                operator,
                prolongation,
                restriction,
                layout: layout.clone(),
            });
            match next {
                Some(n) => unscaled = n,
                None => break,
            }
        }

        Ok(Self {
            levels,
            rhs: system.rhs.iter().map(|&b| b * inv).collect(),
            sigma,
            lambda_max,
            restriction_weight: weight,
        })
    }

    /// `𝓛`, the index of the coarsest level.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &Level<T> {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[Level<T>] {
        &self.levels
    }

    pub fn dof_count(&self, l: usize) -> usize {
        self.levels[l].dof_count()
    }

    /// Scaled fine-level load `f = b/σ`.
    pub fn rhs(&self) -> &[T] {
        &self.rhs
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Power-iteration estimate of `λ_max` of the unscaled fine operator.
    pub fn lambda_max_estimate(&self) -> T {
        self.lambda_max
    }

    pub fn restriction_weight(&self) -> T {
        self.restriction_weight
    }

    pub fn payload_matrix(&self, payload: Payload) -> Option<&CsrMatrix<T>> {
        match payload {
            Payload::Relax(l) => Some(&self.levels[l].relax),
            Payload::NegOperator(l) => Some(&self.levels[l].neg_operator),
            Payload::Restrict(l) => self.levels[l].restriction.as_ref(),
            Payload::Prolong(l) => self.levels[l].prolongation.as_ref(),
            Payload::Identity => None,
        }
    }

    /// `(rows, cols)` of a payload; `Identity` reports `(n, n)` for `n = identity_dim`.
    pub fn payload_shape(&self, payload: Payload, identity_dim: usize) -> (usize, usize) {
        match self.payload_matrix(payload) {
            Some(m) => (m.nrows(), m.ncols()),
            None => (identity_dim, identity_dim),
        }
    }

    /// `dst ← dst + M·src` for the payload `M`. Shared by the classical
    /// cycle and the block emulation so both follow one arithmetic path.
    pub fn accumulate(&self, payload: Payload, src: &[T], dst: &mut [T]) -> Result<(), MultigridError> {
        let (rows, cols) = self.payload_shape(payload, dst.len());
        if src.len() != cols {
            return Err(MultigridError::Dimension {
                expected: cols,
                found: src.len(),
            });
        }
        if dst.len() != rows {
            return Err(MultigridError::Dimension {
                expected: rows,
                found: dst.len(),
            });
        }
        match self.payload_matrix(payload) {
            Some(m) => m.mul_add_vec_into(src, dst),
            None => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
        }
        Ok(())
    }

    /// One Richardson step `(I − A^L) v + f`.
    pub fn smooth_step(&self, l: usize, v: &[T], f: &[T]) -> Result<Vec<T>, MultigridError> {
        let mut out = f.to_vec();
        self.accumulate(Payload::Relax(l), v, &mut out)?;
        Ok(out)
    }

    /// `f − A^L v`
    pub fn residual(&self, l: usize, v: &[T], f: &[T]) -> Result<Vec<T>, MultigridError> {
        let mut out = f.to_vec();
        self.accumulate(Payload::NegOperator(l), v, &mut out)?;
        Ok(out)
    }

    pub fn restrict(&self, l: usize, r: &[T]) -> Result<Vec<T>, MultigridError> {
        let mut out = vec![T::zero(); self.dof_count(l + 1)];
        self.accumulate(Payload::Restrict(l), r, &mut out)?;
        Ok(out)
    }

    /// `P_L e + v`
    pub fn correct(&self, l: usize, e: &[T], v: &[T]) -> Result<Vec<T>, MultigridError> {
        let mut out = vec![T::zero(); self.dof_count(l)];
        self.accumulate(Payload::Prolong(l), e, &mut out)?;
        self.accumulate(Payload::Identity, v, &mut out)?;
        Ok(out)
    }

    /// One V-cycle on the scaled fine system.
    pub fn v_cycle(
        &self,
        v0: &[T],
        nu: usize,
        mut trace: Option<(&mut CycleTrace<T>, usize)>,
    ) -> Result<Vec<T>, MultigridError> {
        if v0.len() != self.dof_count(0) {
            return Err(MultigridError::Dimension {
                expected: self.dof_count(0),
                found: v0.len(),
            });
        }
        if nu < 2 {
            return Err(MultigridError::InvalidNu(nu));
        }
        let f = self.rhs.clone();
        self.descend(0, v0.to_vec(), &f, nu, &mut trace)
    }

    fn descend(
        &self,
        l: usize,
        v0: Vec<T>,
        f: &[T],
        nu: usize,
        trace: &mut Option<(&mut CycleTrace<T>, usize)>,
    ) -> Result<Vec<T>, MultigridError> {
        let mut record = |k: usize, v: &[T]| {
            if let Some((t, cycle)) = trace.as_mut() {
                t.record_iterate(*cycle, l, k, v);
            }
        };
        record(0, &v0);
        let mut v = v0;
        for k in 1..nu {
            v = self.smooth_step(l, &v, f)?;
            record(k, &v);
        }
        if l == self.depth() {
            v = self.smooth_step(l, &v, f)?;
        } else {
            let r = self.residual(l, &v, f)?;
            let rc = self.restrict(l, &r)?;
            if let Some((t, cycle)) = trace.as_mut() {
                t.record_residual(*cycle, l, r, rc.clone());
            }
            let zero = vec![T::zero(); self.dof_count(l + 1)];
            let e = self.descend(l + 1, zero, &rc, nu, trace)?;
            v = self.correct(l, &e, &v)?;
        }
        let mut record = |k: usize, v: &[T]| {
            if let Some((t, cycle)) = trace.as_mut() {
                t.record_iterate(*cycle, l, k, v);
            }
        };
        record(nu, &v);
        for k in nu + 1..2 * nu {
            v = self.smooth_step(l, &v, f)?;
            record(k, &v);
        }
        Ok(v)
    }
}

fn estimate_lambda_max<T: Scalar>(a: &CsrMatrix<T>) -> T {
    power_iteration(broadband_seed(a.nrows()), T::lit(1e-10), 5000, |x, y| {
        a.mul_vec_into(x, y)
    })
    .eigenvalue
}

/// Every recorded iterate and residual, keyed by `(V, L, v)` and `(V, L)`.
#[derive(Debug, Clone, Default)]
pub struct CycleTrace<T> {
    pub iterates: BTreeMap<(usize, usize, usize), Vec<T>>,
    pub residuals: BTreeMap<(usize, usize), (Vec<T>, Vec<T>)>,
    /// `ε̃_V` after each cycle, starting with `ε̃_0 = 1` for the initial guess.
    pub errors: Vec<T>,
}

impl<T: Scalar> CycleTrace<T> {
    pub fn new() -> Self {
        Self {
            iterates: BTreeMap::new(),
            residuals: BTreeMap::new(),
            errors: Vec::new(),
        }
    }

    fn record_iterate(&mut self, cycle: usize, level: usize, v: usize, value: &[T]) {
        let prev = self.iterates.insert((cycle, level, v), value.to_vec());
        debug_assert!(prev.is_none(), "slot ({cycle}, {level}, {v}) recorded twice");
    }

    fn record_residual(&mut self, cycle: usize, level: usize, r: Vec<T>, restricted: Vec<T>) {
        self.residuals.insert((cycle, level), (r, restricted));
    }

    pub fn iterate(&self, cycle: usize, level: usize, v: usize) -> Option<&[T]> {
        self.iterates.get(&(cycle, level, v)).map(Vec::as_slice)
    }

    pub fn residual(&self, cycle: usize, level: usize) -> Option<(&[T], &[T])> {
        self.residuals
            .get(&(cycle, level))
            .map(|(r, rc)| (r.as_slice(), rc.as_slice()))
    }

    /// True when every cycle reduced the error strictly.
    pub fn is_monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0] || w[0] == T::zero())
    }

    /// `(cycle, ε̃)` rows, cycle 0 being the initial guess.
    pub fn convergence_series(&self) -> Vec<(usize, T)> {
        self.errors.iter().copied().enumerate().collect()
    }

    pub fn write_convergence_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cycle_index,epsilon_tilde")?;
        for (c, e) in self.convergence_series() {
            writeln!(w, "{c},{e:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    pub solution: Vec<T>,
    pub trace: CycleTrace<T>,
    pub cycles: usize,
}

impl<T: Scalar> SolveOutcome<T> {
    pub fn final_error(&self) -> T {
        *self.trace.errors.last().expect("errors start with the initial entry")
    }
}

/// Hierarchy plus reference solution for error tracking.
#[derive(Debug, Clone)]
pub struct Solver<T> {
    hierarchy: GridHierarchy<T>,
    reference: Vec<T>,
    config: MgConfig,
}

impl<T: Scalar> Solver<T> {
    pub fn new(system: &AssembledSystem<T>, config: &MgConfig) -> Result<Self, MultigridError> {
        let hierarchy = GridHierarchy::build(system, config)?;
        let reference = reference_solution(system, &hierarchy, config.nu)?;
        Ok(Self {
            hierarchy,
            reference,
            config: config.clone(),
        })
    }

    pub fn hierarchy(&self) -> &GridHierarchy<T> {
        &self.hierarchy
    }

    pub fn reference(&self) -> &[T] {
        &self.reference
    }

    pub fn config(&self) -> &MgConfig {
        &self.config
    }

    /// `ε̃ = ‖v − u*‖ / ‖v₀ − u*‖`; falls back to `‖u*‖` when `v₀ = u*`.
    pub fn relative_error(&self, v: &[T], initial_error: T) -> T {
        let denom = if initial_error > T::zero() {
            initial_error
        } else {
            norm2(&self.reference).max(T::min_positive_value())
        };
        dist2(v, &self.reference) / denom
    }

    /// Runs `config.num_cycles` V-cycles from `v0`.
    pub fn solve(&self, v0: &[T], record: bool) -> Result<SolveOutcome<T>, MultigridError> {
        self.run(v0, record, |_, _| false, self.config.num_cycles)
    }

    /// Runs cycles until `ε̃ ≤ tol`, failing after `max_cycles`.
    pub fn solve_until(
        &self,
        v0: &[T],
        tol: T,
        max_cycles: usize,
        record: bool,
    ) -> Result<SolveOutcome<T>, MultigridError> {
        let out = self.run(v0, record, |_, e| e <= tol, max_cycles)?;
        if out.final_error() > tol {
            return Err(MultigridError::NotConverged {
                tolerance: tol.to_f64_lossy(),
                cycles: max_cycles,
                reached: out.final_error().to_f64_lossy(),
            });
        }
        Ok(out)
    }

    fn run<S>(
        &self,
        v0: &[T],
        record: bool,
        stop: S,
        max_cycles: usize,
    ) -> Result<SolveOutcome<T>, MultigridError>
    where
        S: Fn(usize, T) -> bool,
    {
        let initial = dist2(v0, &self.reference);
        let mut trace = CycleTrace::new();
        trace.errors.push(self.relative_error(v0, initial));
        let mut v = v0.to_vec();
        let mut cycles = 0;
        while cycles < max_cycles && !stop(cycles, *trace.errors.last().unwrap()) {
            let slot = record.then_some((&mut trace, cycles));
            v = self.hierarchy.v_cycle(&v, self.config.nu, slot)?;
            cycles += 1;
            let prev = *trace.errors.last().unwrap();
            let err = self.relative_error(&v, initial);
            trace.errors.push(err);
            if prev > T::zero() && err > prev * T::lit(10.0) {
                return Err(MultigridError::Diverged {
                    cycle: cycles,
                    ratio: (err / prev).to_f64_lossy(),
                });
            }
        }
        Ok(SolveOutcome {
            solution: v,
            trace,
            cycles,
        })
    }
}

/// Refined direct solve for small systems, otherwise [`REFERENCE_CYCLES`] V-cycles.
pub fn reference_solution<T: Scalar>(
    system: &AssembledSystem<T>,
    hierarchy: &GridHierarchy<T>,
    nu: usize,
) -> Result<Vec<T>, MultigridError> {
    if system.free_dof_count() <= DIRECT_SOLVE_LIMIT {
        let chol = BandCholesky::factor(&system.matrix)?;
        let neg = system.matrix.scaled(-T::one());
        let mut x = chol.solve(&system.rhs)?;
        for _ in 0..REFINEMENT_STEPS {
            let mut r = system.rhs.clone();
            neg.mul_add_vec_into(&x, &mut r);
            let dx = chol.solve(&r)?;
            x.iter_mut().zip(&dx).for_each(|(xi, &d)| *xi += d);
        }
        return Ok(x);
    }
    let mut v = vec![T::zero(); system.free_dof_count()];
    for _ in 0..REFERENCE_CYCLES {
        v = hierarchy.v_cycle(&v, nu, None)?;
    }
    Ok(v)
}

/// Largest `‖A^L‖₂` over the hierarchy, by power iteration.
pub fn max_level_norm<T: Scalar>(hierarchy: &GridHierarchy<T>) -> T {
    hierarchy
        .levels()
        .iter()
        .map(|l| estimate_lambda_max(&l.operator))
        .fold(T::zero(), T::max)
}
