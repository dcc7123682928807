use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use qmg::fem::{grid_layout, ProblemCase};
use qmg::multigrid::max_coarsenings;
use qmg::qmg::CopyPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Classical,
    Qmg,
    TinyQuantum,
    Tables,
    Figures,
}

/// Command-line flags. Every flag is optional so that a config file can
/// supply it; flags win over the file.
#[derive(Debug, Parser)]
#[command(name = "qmg", version, about = "Quantum multigrid emulation driver")]
pub struct Args {
    /// Spatial dimension, 1 or 2.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Problem case id (1D: 1-2, 2D: 1-5).
    #[arg(long = "case")]
    pub case_id: Option<usize>,
    /// Elements per direction, `E` or `E,E2`.
    #[arg(long, value_delimiter = ',')]
    pub elements: Option<Vec<usize>>,
    /// Number of grid levels (coarsenings + 1).
    #[arg(long)]
    pub levels: Option<usize>,
    /// Number of V-cycles; omitted means "run until --tol is met".
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Smoothing parameter; each level does nu-1 pre- and post-steps.
    #[arg(long)]
    pub nu: Option<usize>,
    /// Final-iterate copy count: T, T-1 or an integer.
    #[arg(long)]
    pub copies: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiplier applied to every subnormalization factor.
    #[arg(long)]
    pub pessimism: Option<f64>,
    /// Target relative error when --cycles is omitted.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Cycle budget when running to --tol.
    #[arg(long)]
    pub max_cycles: Option<usize>,
    /// Start from x + r·‖x‖·e instead of zero (e the normalized ones vector).
    #[arg(long)]
    pub guess_ratio: Option<f64>,
    /// TOML file with the same keys as the long flags (dashes as underscores).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CopiesValue {
    Count(usize),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dim: Option<usize>,
    case: Option<usize>,
    elements: Option<OneOrMany>,
    levels: Option<usize>,
    cycles: Option<usize>,
    nu: Option<usize>,
    copies: Option<CopiesValue>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
    pessimism: Option<f64>,
    tol: Option<f64>,
    max_cycles: Option<usize>,
    guess_ratio: Option<f64>,
}

/// Fully resolved and validated run parameters.
#[derive(Debug, Clone, Serialize)]
pub struct RunSpec {
    pub dimension: usize,
    pub case_id: usize,
    pub elements: Vec<usize>,
    pub num_levels: usize,
    pub num_cycles: Option<usize>,
    pub nu: usize,
    pub copies: CopyPolicy,
    pub pessimism: f64,
    pub tolerance: f64,
    pub max_cycles: usize,
    pub guess_ratio: Option<f64>,
    pub mode: Mode,
    #[serde(skip)]
    pub out: PathBuf,
}

pub const DEFAULT_NU: usize = 6;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_CYCLES: usize = 200;

fn read_file(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

impl RunSpec {
    pub fn resolve(args: Args) -> Result<Self, String> {
        let file = match &args.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let mode = args.mode.or(file.mode).unwrap_or(Mode::Qmg);
        let dimension = args.dim.or(file.dim).unwrap_or(1);
        let case_id = args.case_id.or(file.case).unwrap_or(1);
        let case = ProblemCase::<f64>::new(dimension, case_id).map_err(|e| e.to_string())?;

        let elements = match (args.elements, file.elements) {
            (Some(e), _) => e,
            (None, Some(OneOrMany::One(e))) => vec![e],
            (None, Some(OneOrMany::Many(e))) => e,
            (None, None) => case.reference_elements(),
        };
        let elements = match (dimension, elements.as_slice()) {
            (1, [_]) => elements,
            (2, [n]) => vec![*n, *n],
            (2, [_, _]) => elements,
            _ => return Err(format!("{dimension}D run takes {dimension} element count(s), got {}", elements.len())),
        };
        for &e in &elements {
            if e == 0 || !e.is_power_of_two() {
                return Err(format!("element count {e} is not a power of two"));
            }
        }
        let layout = grid_layout(&case, &elements);
        if layout.free_count() == 0 {
            return Err("grid has no free nodes".into());
        }
        let max_levels = max_coarsenings(&layout) + 1;
        let num_levels = args.levels.or(file.levels).unwrap_or(max_levels);
        if !(2..=max_levels).contains(&num_levels) {
            return Err(format!("levels must lie in 2..={max_levels} for this grid, got {num_levels}"));
        }

        let num_cycles = args.cycles.or(file.cycles);
        if num_cycles == Some(0) {
            return Err("cycles must be positive".into());
        }
        let nu = args.nu.or(file.nu).unwrap_or(DEFAULT_NU);
        if nu < 2 {
            return Err(format!("nu must be at least 2, got {nu}"));
        }
        let copies = match (args.copies, file.copies) {
            (Some(s), _) | (None, Some(CopiesValue::Text(s))) => s.parse::<CopyPolicy>()?,
            (None, Some(CopiesValue::Count(c))) => CopyPolicy::Explicit(c),
            (None, None) => CopyPolicy::Full,
        };
        let pessimism = args.pessimism.or(file.pessimism).unwrap_or(1.0);
        if !(pessimism.is_finite() && pessimism >= 1.0) {
            return Err(format!("pessimism must be a finite number >= 1, got {pessimism}"));
        }
        let tolerance = args.tol.or(file.tol).unwrap_or(DEFAULT_TOL);
        if !(tolerance.is_finite() && tolerance > 0.0 && tolerance < 1.0) {
            return Err(format!("tol must lie in (0, 1), got {tolerance}"));
        }
        let max_cycles = args.max_cycles.or(file.max_cycles).unwrap_or(DEFAULT_MAX_CYCLES);
        if max_cycles == 0 {
            return Err("max-cycles must be positive".into());
        }
        let guess_ratio = args.guess_ratio.or(file.guess_ratio);
        if let Some(r) = guess_ratio {
            if !(r.is_finite() && r >= 0.0) {
                return Err(format!("guess-ratio must be finite and non-negative, got {r}"));
            }
        }
        let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            dimension,
            case_id,
            elements,
            num_levels,
            num_cycles,
            nu,
            copies,
            pessimism,
            tolerance,
            max_cycles,
            guess_ratio,
            mode,
            out,
        })
    }

    pub fn case(&self) -> ProblemCase<f64> {
        ProblemCase::new(self.dimension, self.case_id).expect("validated")
    }
}
