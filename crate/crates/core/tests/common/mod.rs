#![allow(dead_code)]

use qmg::fem::{assemble, AssembledSystem, ProblemCase};
use qmg::multigrid::{MgConfig, Solver};

/// A case shrunk to test size: elements per axis and the level count.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub dimension: usize,
    pub case_id: usize,
    pub elements: Vec<usize>,
    pub num_levels: usize,
}

impl Reduced {
    pub fn label(&self) -> String {
        format!("{}D case {}", self.dimension, self.case_id)
    }

    pub fn system(&self) -> AssembledSystem<f64> {
        let case = ProblemCase::new(self.dimension, self.case_id).expect("known case");
        assemble(&case, &self.elements).expect("valid element counts")
    }

    pub fn config(&self, cycles: usize, nu: usize) -> MgConfig {
        MgConfig::new(self.num_levels, cycles, nu)
    }
}

/// All seven cases at reduced size: 1D with at most 1023 free nodes and
/// 𝓛 = 8, 2D on at most 32×32 elements with 𝓛 = 4.
pub fn reduced_cases() -> Vec<Reduced> {
    let mut out = vec![
        Reduced { dimension: 1, case_id: 1, elements: vec![1024], num_levels: 9 },
        Reduced { dimension: 1, case_id: 2, elements: vec![512], num_levels: 9 },
    ];
    for (case_id, elements) in [(1, [32, 32]), (2, [32, 16]), (3, [32, 16]), (4, [32, 32]), (5, [32, 32])] {
        out.push(Reduced { dimension: 2, case_id, elements: elements.to_vec(), num_levels: 5 });
    }
    out
}

/// Cycles needed from `v0` to reach `ε̃ ≤ tol`.
pub fn cycles_to_tolerance(
    system: &AssembledSystem<f64>,
    config: &MgConfig,
    v0: &[f64],
    tol: f64,
    max_cycles: usize,
) -> Option<usize> {
    let solver = Solver::new(system, config).ok()?;
    solver.solve_until(v0, tol, max_cycles, false).ok().map(|o| o.cycles)
}
