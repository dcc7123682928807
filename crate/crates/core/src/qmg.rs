//! History-vector emulation: every multigrid iterate stored as one block of a
//! long vector, built by applying shift-structured block operations.
//!
//! Blocks `0..=T` hold iterates and residuals at their native level size.
//! Blocks `T+1..=T+c` are copies of the final iterate and stay virtual.

use std::io::{self, Write};

use serde::Serialize;

use crate::fem::AssembledSystem;
use crate::linalg::{dist2, norm2, norm2_sq};
use crate::multigrid::{GridHierarchy, MgConfig, MultigridError, Payload};
use crate::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QmgError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("{which}({cycle}, {level}, {v}) is out of range")]
    IndexOutOfRange {
        which: &'static str,
        cycle: usize,
        level: usize,
        v: usize,
    },
    #[error("block {target} is {state:?}, cannot apply {kind:?}")]
    TargetState {
        target: usize,
        state: BlockState,
        kind: OpKind,
    },
    #[error("hierarchy has {found} coarse levels, layout expects {expected}")]
    LevelMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Multigrid(#[from] MultigridError),
}

/// How many copies `c` of the final iterate follow block `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyPolicy {
    /// `c = T`, the count consistent with the published vector lengths.
    Full,
    /// `c = T − 1`
    OneFewer,
    Explicit(usize),
}

impl CopyPolicy {
    pub fn resolve(&self, t: usize) -> usize {
        match *self {
            CopyPolicy::Full => t,
            CopyPolicy::OneFewer => t.saturating_sub(1),
            CopyPolicy::Explicit(c) => c,
        }
    }
}

impl std::str::FromStr for CopyPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "T" => Ok(CopyPolicy::Full),
            "T-1" => Ok(CopyPolicy::OneFewer),
            other => other
                .parse()
                .map(CopyPolicy::Explicit)
                .map_err(|_| format!("expected T, T-1 or an integer, got {other:?}")),
        }
    }
}

/// Block index arithmetic for `𝒱 + 1` cycles over `𝓛 + 1` levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockIndexer {
    pub cal_v: usize,
    pub cal_l: usize,
    pub nu: usize,
    pub t_v: usize,
    pub t: usize,
    pub c: usize,
}

impl BlockIndexer {
    pub fn new(cal_v: usize, cal_l: usize, nu: usize, copies: CopyPolicy) -> Result<Self, QmgError> {
        if nu < 2 {
            return Err(QmgError::InvalidLayout(format!("nu must be >= 2, got {nu}")));
        }
        if cal_l < 1 {
            return Err(QmgError::InvalidLayout("need at least one coarse level".into()));
        }
        let t_v = 2 * (cal_l + 1) * nu + 2 * cal_l - 1;
        let t = cal_v * t_v + 2 * cal_l * nu + 2 * cal_l + 2 * nu - 1;
        debug_assert_eq!(t, (cal_v + 1) * t_v);
        Ok(Self {
            cal_v,
            cal_l,
            nu,
            t_v,
            t,
            c: copies.resolve(t),
        })
    }

    pub fn for_config(config: &MgConfig, copies: CopyPolicy) -> Result<Self, QmgError> {
        if config.num_cycles == 0 {
            return Err(QmgError::InvalidLayout("need at least one cycle".into()));
        }
        Self::new(config.num_cycles - 1, config.coarsest(), config.nu, copies)
    }

    pub fn num_cycles(&self) -> usize {
        self.cal_v + 1
    }

    /// `T + c + 1`
    pub fn total_blocks(&self) -> usize {
        self.t + self.c + 1
    }

    /// `(T + c + 1)·N`
    pub fn len_x(&self, n: usize) -> u64 {
        self.total_blocks() as u64 * n as u64
    }

    /// Blocks preloaded with `f` by the initial state.
    pub fn f_block_count(&self) -> usize {
        self.num_cycles() * (2 * self.nu - 1)
    }

    /// Pre-smoothing iterates `v < ν`; at `L < 𝓛` also the residual
    /// (`v = ν`) and restricted residual (`v = ν + 1`); at `L = 𝓛` also the
    /// extra relaxation (`v = ν`).
    pub fn i_pre(&self, cycle: usize, level: usize, v: usize) -> Result<usize, QmgError> {
        let v_max = if level < self.cal_l { self.nu + 1 } else { self.nu };
        if cycle > self.cal_v || level > self.cal_l || v > v_max {
            return Err(QmgError::IndexOutOfRange {
                which: "i_pre",
                cycle,
                level,
                v,
            });
        }
        Ok(cycle * self.t_v + level * (self.nu + 2) + v)
    }

    pub fn i_post(&self, cycle: usize, level: usize, v: usize) -> Result<usize, QmgError> {
        if cycle > self.cal_v || level > self.cal_l || v < self.nu || v > 2 * self.nu - 1 {
            return Err(QmgError::IndexOutOfRange {
                which: "i_post",
                cycle,
                level,
                v,
            });
        }
        Ok(cycle * self.t_v + 2 * self.cal_l * (self.nu + 1) - level * self.nu + v)
    }

    /// Block of iterate `(V, L, v)` for `0 ≤ v ≤ 2ν − 1`.
    pub fn iterate_index(&self, cycle: usize, level: usize, v: usize) -> Result<usize, QmgError> {
        if v < self.nu {
            self.i_pre(cycle, level, v)
        } else {
            self.i_post(cycle, level, v)
        }
    }

    /// [`BlockSlot::data_level`] of every block `0..=T`.
    pub fn block_levels(&self) -> Vec<usize> {
        self.block_map().iter().map(BlockSlot::data_level).collect()
    }

    /// Role of every block `0..=T`.
    pub fn block_map(&self) -> Vec<BlockSlot> {
        let mut map = vec![None; self.t + 1];
        let nu = self.nu;
        for cycle in 0..=self.cal_v {
            for level in 0..=self.cal_l {
                for v in 0..2 * nu {
                    let i = self.iterate_index(cycle, level, v).expect("in range");
                    // the closing iterate of a cycle doubles as the next opening one
                    if map[i].is_some() {
                        continue;
                    }
                    map[i] = Some(BlockSlot {
                        cycle,
                        level,
                        role: SlotRole::Iterate(v),
                    });
                }
                if level < self.cal_l {
                    for (v, role) in [(nu, SlotRole::Residual), (nu + 1, SlotRole::Restricted)] {
                        let i = self.i_pre(cycle, level, v).expect("in range");
                        map[i] = Some(BlockSlot { cycle, level, role });
                    }
                }
            }
        }
        map.into_iter()
            .enumerate()
            .map(|(i, s)| s.unwrap_or_else(|| panic!("block {i} unassigned")))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotRole {
    Iterate(usize),
    Residual,
    Restricted,
}

/// Where a block sits in the `(V, L, v)` layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockSlot {
    pub cycle: usize,
    pub level: usize,
    pub role: SlotRole,
}

impl BlockSlot {
    /// Level whose dof count the block holds; a restricted residual
    /// produced at level `L` lives on `L + 1`.
    pub fn data_level(&self) -> usize {
        match self.role {
            SlotRole::Restricted => self.level + 1,
            _ => self.level,
        }
    }

    pub fn kind_label(&self, nu: usize) -> &'static str {
        match self.role {
            SlotRole::Iterate(0) if self.level == 0 => "initial",
            SlotRole::Iterate(0) => "zero_guess",
            SlotRole::Iterate(v) if v < nu => "pre",
            SlotRole::Iterate(_) => "post",
            SlotRole::Residual => "residual",
            SlotRole::Restricted => "restricted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockState {
    Empty,
    Preloaded,
    Written,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OpKind {
    PreSmooth,
    Residual,
    Restrict,
    ResidualCopy,
    PostSmooth,
    Prolong,
    FinalCopy,
}

/// `target ← target + Σ payload·source`, all other blocks unchanged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockOperation {
    pub kind: OpKind,
    pub sources: Vec<(usize, Payload)>,
    pub target: usize,
    pub level: usize,
    /// Whether the target's existing (preloaded) content is kept.
    pub keeps_target: bool,
    /// Number of identical targets; only `FinalCopy` uses more than one.
    pub multiplicity: usize,
}

impl BlockOperation {
    fn single(kind: OpKind, source: usize, payload: Payload, target: usize, level: usize, keeps: bool) -> Self {
        Self {
            kind,
            sources: vec![(source, payload)],
            target,
            level,
            keeps_target: keeps,
            multiplicity: 1,
        }
    }
}

/// All operations of the run, in application order.
pub fn build_schedule(ix: &BlockIndexer) -> Vec<BlockOperation> {
    use OpKind::*;
    let nu = ix.nu;
    let pre = |c, l, v| ix.i_pre(c, l, v).expect("schedule index in range");
    let post = |c, l, v| ix.i_post(c, l, v).expect("schedule index in range");
    let mut ops = Vec::new();
    for c in 0..=ix.cal_v {
        for l in 0..ix.cal_l {
            for v in 1..nu {
                ops.push(BlockOperation::single(PreSmooth, pre(c, l, v - 1), Payload::Relax(l), pre(c, l, v), l, true));
            }
            ops.push(BlockOperation::single(
                Residual,
                pre(c, l, nu - 1),
                Payload::NegOperator(l),
                pre(c, l, nu),
                l,
                true,
            ));
            ops.push(BlockOperation::single(
                Restrict,
                pre(c, l, nu),
                Payload::Restrict(l),
                pre(c, l, nu + 1),
                l,
                false,
            ));
            let restricted = pre(c, l, nu + 1);
            let targets = (1..=nu)
                .map(|v| pre(c, l + 1, v))
                .chain((nu + 1..2 * nu).map(|v| post(c, l + 1, v)));
            for target in targets {
                ops.push(BlockOperation::single(ResidualCopy, restricted, Payload::Identity, target, l + 1, false));
            }
        }
        let lc = ix.cal_l;
        for v in 1..=nu {
            ops.push(BlockOperation::single(PreSmooth, pre(c, lc, v - 1), Payload::Relax(lc), pre(c, lc, v), lc, true));
        }
        for v in nu + 1..2 * nu {
            ops.push(BlockOperation::single(PostSmooth, post(c, lc, v - 1), Payload::Relax(lc), post(c, lc, v), lc, true));
        }
        for l in (0..ix.cal_l).rev() {
            ops.push(BlockOperation {
                kind: Prolong,
                sources: vec![
                    (post(c, l + 1, 2 * nu - 1), Payload::Prolong(l)),
                    (pre(c, l, nu - 1), Payload::Identity),
                ],
                target: post(c, l, nu),
                level: l,
                keeps_target: false,
                multiplicity: 1,
            });
            for v in nu + 1..2 * nu {
                ops.push(BlockOperation::single(PostSmooth, post(c, l, v - 1), Payload::Relax(l), post(c, l, v), l, true));
            }
        }
    }
    if ix.c > 0 {
        ops.push(BlockOperation {
            kind: FinalCopy,
            sources: vec![(ix.t, Payload::Identity)],
            target: ix.t + 1,
            level: 0,
            keeps_target: false,
            multiplicity: ix.c,
        });
    }
    ops
}

/// The block vector `x`, blocks at native level size, copies virtual.
#[derive(Debug, Clone)]
pub struct HistoryVector<T> {
    pub indexer: BlockIndexer,
    blocks: Vec<Vec<T>>,
    levels: Vec<usize>,
    states: Vec<BlockState>,
    copies_filled: bool,
    finest_dim: usize,
    input_norm_sq: T,
}

impl<T: Scalar> HistoryVector<T> {
    /// Block 0 holds `v0`; the finest smoothing and residual blocks hold `f`.
    pub fn initial(v0: &[T], hierarchy: &GridHierarchy<T>, indexer: BlockIndexer) -> Result<Self, QmgError> {
        if hierarchy.depth() != indexer.cal_l {
            return Err(QmgError::LevelMismatch {
                expected: indexer.cal_l,
                found: hierarchy.depth(),
            });
        }
        let n = hierarchy.dof_count(0);
        if v0.len() != n {
            return Err(MultigridError::Dimension {
                expected: n,
                found: v0.len(),
            }
            .into());
        }
        let levels = indexer.block_levels();
        let mut blocks: Vec<Vec<T>> = levels
            .iter()
            .map(|&l| vec![T::zero(); hierarchy.dof_count(l)])
            .collect();
        let mut states = vec![BlockState::Empty; indexer.t + 1];
        blocks[0] = v0.to_vec();
        states[0] = BlockState::Written;
        let f = hierarchy.rhs();
        let nu = indexer.nu;
        for c in 0..=indexer.cal_v {
            let pre = (1..=nu).map(|v| indexer.i_pre(c, 0, v));
            let post = (nu + 1..2 * nu).map(|v| indexer.i_post(c, 0, v));
            for i in pre.chain(post) {
                let i = i?;
                blocks[i] = f.to_vec();
                states[i] = BlockState::Preloaded;
            }
        }
        let input_norm_sq = norm2_sq(v0) + T::from_count(indexer.f_block_count()) * norm2_sq(f);
        Ok(Self {
            indexer,
            blocks,
            levels,
            states,
            copies_filled: false,
            finest_dim: n,
            input_norm_sq,
        })
    }

    pub fn finest_dim(&self) -> usize {
        self.finest_dim
    }

    pub fn copy_count(&self) -> usize {
        self.indexer.c
    }

    /// `(T + c + 1)·N`
    pub fn logical_len(&self) -> u64 {
        self.indexer.len_x(self.finest_dim)
    }

    /// `‖x_in‖²` of the initial state.
    pub fn input_norm_sq(&self) -> T {
        self.input_norm_sq
    }

    pub fn level_of(&self, i: usize) -> usize {
        if i <= self.indexer.t {
            self.levels[i]
        } else {
            0
        }
    }

    pub fn state(&self, i: usize) -> BlockState {
        if i <= self.indexer.t {
            self.states[i]
        } else if self.copies_filled {
            BlockState::Written
        } else {
            BlockState::Empty
        }
    }

    /// Native-size content of block `i`, copies included.
    pub fn block(&self, i: usize) -> Vec<T> {
        let t = self.indexer.t;
        if i <= t {
            self.blocks[i].clone()
        } else if self.copies_filled && i <= t + self.indexer.c {
            self.blocks[t].clone()
        } else {
            vec![T::zero(); self.finest_dim]
        }
    }

    pub fn block_ref(&self, i: usize) -> &[T] {
        &self.blocks[i.min(self.indexer.t)]
    }

    /// Block `i` zero-padded to the finest size.
    pub fn materialize(&self, i: usize) -> Vec<T> {
        let mut out = self.block(i);
        out.resize(self.finest_dim, T::zero());
        out
    }

    /// The whole `(T + c + 1)·N` vector. Only sensible at tiny scale.
    pub fn materialize_all(&self) -> Vec<T> {
        (0..self.indexer.total_blocks())
            .flat_map(|i| self.materialize(i))
            .collect()
    }

    pub fn block_norm(&self, i: usize) -> T {
        norm2(&self.block(i))
    }

    /// `‖x‖²` from native blocks plus `c·‖x_T‖²`.
    pub fn norm_sq(&self) -> T {
        let stored: T = self.blocks.iter().map(|b| norm2_sq(b)).sum();
        let copies = if self.copies_filled {
            T::from_count(self.indexer.c) * norm2_sq(&self.blocks[self.indexer.t])
        } else {
            T::zero()
        };
        stored + copies
    }

    pub fn final_iterate(&self) -> &[T] {
        &self.blocks[self.indexer.t]
    }

    /// Applies one block operation in place.
    pub fn apply(&mut self, op: &BlockOperation, hierarchy: &GridHierarchy<T>) -> Result<(), QmgError> {
        if op.kind == OpKind::FinalCopy {
            if self.copies_filled {
                return Err(QmgError::TargetState {
                    target: op.target,
                    state: BlockState::Written,
                    kind: op.kind,
                });
            }
            self.copies_filled = true;
            return Ok(());
        }
        let state = self.states[op.target];
        let allowed = if op.keeps_target {
            state == BlockState::Preloaded
        } else {
            state == BlockState::Empty
        };
        if !allowed {
            return Err(QmgError::TargetState {
                target: op.target,
                state,
                kind: op.kind,
            });
        }
        let mut acc = if op.keeps_target {
            std::mem::take(&mut self.blocks[op.target])
        } else {
            vec![T::zero(); self.blocks[op.target].len()]
        };
        for &(src, payload) in &op.sources {
            hierarchy.accumulate(payload, &self.blocks[src], &mut acc)?;
        }
        self.blocks[op.target] = acc;
        self.states[op.target] = if op.kind == OpKind::ResidualCopy {
            BlockState::Preloaded
        } else {
            BlockState::Written
        };
        Ok(())
    }

    /// CSV rows `block_index, level, kind, norm`, copies included.
    pub fn write_block_norms_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "block_index,level,kind,norm")?;
        let map = self.indexer.block_map();
        for (i, slot) in map.iter().enumerate() {
            let kind = if i == self.indexer.t {
                "final"
            } else {
                slot.kind_label(self.indexer.nu)
            };
            writeln!(w, "{i},{},{kind},{:e}", slot.data_level(), self.block_norm(i))?;
        }
        let final_norm = norm2(self.final_iterate());
        for i in self.indexer.t + 1..self.indexer.total_blocks() {
            let norm = if self.copies_filled { final_norm } else { T::zero() };
            writeln!(w, "{i},0,copy,{norm:e}")?;
        }
        Ok(())
    }

    /// Length-prefixed little-endian dump: `u64 index, u64 len, f64 values`.
    pub fn write_blocks_binary<W: Write>(&self, indices: &[usize], mut w: W) -> io::Result<()> {
        for &i in indices {
            let block = self.block(i);
            w.write_all(&(i as u64).to_le_bytes())?;
            w.write_all(&(block.len() as u64).to_le_bytes())?;
            for x in block {
                w.write_all(&x.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads the dump written by [`HistoryVector::write_blocks_binary`].
pub fn read_blocks_binary(mut bytes: &[u8]) -> io::Result<Vec<(usize, Vec<f64>)>> {
    fn take_u64(b: &mut &[u8]) -> io::Result<u64> {
        if b.len() < 8 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        let (head, rest) = b.split_at(8);
        *b = rest;
        Ok(u64::from_le_bytes(head.try_into().unwrap()))
    }
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let i = take_u64(&mut bytes)? as usize;
        let n = take_u64(&mut bytes)? as usize;
        let values = (0..n)
            .map(|_| take_u64(&mut bytes).map(f64::from_bits))
            .collect::<io::Result<Vec<_>>>()?;
        out.push((i, values));
    }
    Ok(out)
}

/// Indexer, schedule and the filled history vector of one emulated run.
#[derive(Debug, Clone)]
pub struct QmgRun<T> {
    pub indexer: BlockIndexer,
    pub schedule: Vec<BlockOperation>,
    pub history: HistoryVector<T>,
}

/// Applies the whole schedule to the initial state.
pub fn emulate<T: Scalar>(
    hierarchy: &GridHierarchy<T>,
    indexer: BlockIndexer,
    v0: &[T],
) -> Result<QmgRun<T>, QmgError> {
    let schedule = build_schedule(&indexer);
    let mut history = HistoryVector::initial(v0, hierarchy, indexer)?;
    for op in &schedule {
        history.apply(op, hierarchy)?;
    }
    Ok(QmgRun {
        indexer,
        schedule,
        history,
    })
}

/// Builds the hierarchy for `system` and emulates `config.num_cycles` cycles.
pub fn run_qmg<T: Scalar>(
    system: &AssembledSystem<T>,
    config: &MgConfig,
    v0: &[T],
    copies: CopyPolicy,
) -> Result<QmgRun<T>, QmgError> {
    let hierarchy = GridHierarchy::build(system, config)?;
    let indexer = BlockIndexer::for_config(config, copies)?;
    emulate(&hierarchy, indexer, v0)
}

/// Largest relative 2-norm deviation between the history blocks and the
/// matching classical trace entries (iterates, residuals, restrictions and
/// final-iterate copies). Returns `None` if a slot is missing from the trace.
pub fn max_trace_deviation<T: Scalar>(
    history: &HistoryVector<T>,
    trace: &crate::multigrid::CycleTrace<T>,
) -> Option<T> {
    let ix = history.indexer;
    let rel = |a: &[T], b: &[T]| -> T {
        let d = dist2(a, b);
        let scale = norm2(b);
        if scale > T::zero() {
            d / scale
        } else {
            d
        }
    };
    let mut worst = T::zero();
    for (i, slot) in ix.block_map().iter().enumerate() {
        let expected = match slot.role {
            SlotRole::Iterate(v) => trace.iterate(slot.cycle, slot.level, v)?,
            SlotRole::Residual => trace.residual(slot.cycle, slot.level)?.0,
            SlotRole::Restricted => trace.residual(slot.cycle, slot.level)?.1,
        };
        worst = worst.max(rel(history.block_ref(i), expected));
    }
    let last = trace.iterate(ix.cal_v, 0, 2 * ix.nu - 1)?;
    for i in ix.t + 1..ix.total_blocks() {
        worst = worst.max(rel(&history.block(i), last));
    }
    Some(worst)
}
