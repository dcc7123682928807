//! P1 (1D) and Q4 (2D) Galerkin assembly of the Poisson problems `u'' = f`
//! and `∇²u = f` on regular grids.
//!
//! Systems are assembled in symmetric positive-definite form, `K u = b` with
//! `K` the stiffness matrix of `−∇²` and `b = −∫ f w` plus boundary flux
//! terms. Dirichlet nodes are eliminated, so every matrix row is a free dof.
//! Free dofs are numbered x-fastest.

use std::io::{self, Write};

use serde::Serialize;

use crate::sparse::{write_vector_market, CsrMatrix};
use crate::Scalar;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FemError {
    #[error("unknown case {case_id} for dimension {dimension}")]
    UnknownCase { dimension: usize, case_id: usize },
    #[error("element count {0} is not a power of two or leaves no free node")]
    ElementCount(usize),
    #[error("case is {found}-dimensional, expected {expected}")]
    WrongDimension { expected: usize, found: usize },
}

/// One of the seven boundary-value problems: 1D cases 1–2, 2D cases 1–5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemCase<T> {
    pub dimension: usize,
    pub case_id: usize,
    pub domain_length: T,
    pub forcing: T,
}

impl<T: Scalar> ProblemCase<T> {
    pub fn new(dimension: usize, case_id: usize) -> Result<Self, FemError> {
        let known = matches!((dimension, case_id), (1, 1..=2) | (2, 1..=5));
        if !known {
            return Err(FemError::UnknownCase {
                dimension,
                case_id,
            });
        }
        Ok(Self {
            dimension,
            case_id,
            domain_length: T::one(),
            forcing: T::one(),
        })
    }

    pub fn with_forcing(mut self, forcing: T) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_length(mut self, length: T) -> Self {
        self.domain_length = length;
        self
    }

    /// Dirichlet flags `(start, end)` per axis. In 2D the x axis carries the
    /// `x = 0` / `x = L` edges and the y axis the `y = 0` / `y = L` edges.
    pub fn fixed_ends(&self) -> Vec<(bool, bool)> {
        match (self.dimension, self.case_id) {
            (1, 1) => vec![(true, true)],
            (1, 2) => vec![(true, false)],
            (2, 1) => vec![(true, true), (true, true)],
            (2, 2) => vec![(true, true), (true, false)],
            (2, 3) => vec![(true, true), (false, false)],
            (2, 4) => vec![(true, false), (true, false)],
            (2, 5) => vec![(true, false), (false, false)],
            _ => unreachable!("validated in ProblemCase::new"),
        }
    }

    /// Outward flux `u'(L)` imposed at the Neumann end in 1D.
    pub fn neumann_flux(&self) -> T {
        match (self.dimension, self.case_id) {
            (1, 2) => T::one(),
            _ => T::zero(),
        }
    }

    /// Element counts per axis of the largest reference configuration.
    ///
    /// The rectangular grids for 2D cases 2 and 3 yield the free-node grids
    /// 127×64 and 127×65 on the square domain.
    pub fn reference_elements(&self) -> Vec<usize> {
        match (self.dimension, self.case_id) {
            (1, _) => vec![8192],
            (2, 1) => vec![128, 128],
            (2, 2) | (2, 3) => vec![128, 64],
            (2, _) => vec![64, 64],
            _ => unreachable!(),
        }
    }
}

/// Node layout of one axis: `elements + 1` nodes, end nodes optionally fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AxisLayout {
    pub elements: usize,
    pub fixed_start: bool,
    pub fixed_end: bool,
}

impl AxisLayout {
    pub fn first_free(&self) -> usize {
        usize::from(self.fixed_start)
    }

    pub fn free_count(&self) -> usize {
        (self.elements + 1).saturating_sub(usize::from(self.fixed_start) + usize::from(self.fixed_end))
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        let first = self.first_free();
        (node >= first && node - first < self.free_count()).then(|| node - first)
    }

    pub fn coarsen(&self) -> Option<AxisLayout> {
        if self.elements < 2 || !self.elements.is_multiple_of(2) {
            return None;
        }
        let coarse = AxisLayout {
            elements: self.elements / 2,
            ..*self
        };
        (coarse.free_count() > 0).then_some(coarse)
    }

    /// Linear interpolation from `coarse` (every other node) onto this axis.
    pub fn prolongation<T: Scalar>(&self, coarse: &AxisLayout) -> CsrMatrix<T> {
        debug_assert_eq!(coarse.elements * 2, self.elements);
        let half = T::lit(0.5);
        let mut triplets = Vec::new();
        for node in 0..=self.elements {
            let Some(row) = self.free_index(node) else {
                continue;
            };
            if node % 2 == 0 {
                if let Some(col) = coarse.free_index(node / 2) {
                    triplets.push((row, col, T::one()));
                }
            } else {
                for c in [(node - 1) / 2, node.div_ceil(2)] {
                    if let Some(col) = coarse.free_index(c) {
                        triplets.push((row, col, half));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.free_count(), coarse.free_count(), &triplets)
    }
}

/// Tensor-product grid of one or two axes over `[0, L]^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridLayout<T> {
    pub axes: Vec<AxisLayout>,
    pub lengths: Vec<T>,
}

impl<T: Scalar> GridLayout<T> {
    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn free_count(&self) -> usize {
        self.axes.iter().map(AxisLayout::free_count).product()
    }

    /// Free-node counts `(n_x, n_y)`; `n_y = 1` in 1D.
    pub fn shape(&self) -> (usize, usize) {
        let nx = self.axes[0].free_count();
        let ny = self.axes.get(1).map_or(1, AxisLayout::free_count);
        (nx, ny)
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.lengths[axis] / T::from_count(self.axes[axis].elements)
    }

    pub fn coarsen(&self) -> Option<GridLayout<T>> {
        let axes = self
            .axes
            .iter()
            .map(AxisLayout::coarsen)
            .collect::<Option<Vec<_>>>()?;
        Some(GridLayout {
            axes,
            lengths: self.lengths.clone(),
        })
    }

    /// Linear (1D) or bilinear (2D) interpolation from `coarse` onto `self`.
    pub fn prolongation(&self, coarse: &GridLayout<T>) -> CsrMatrix<T> {
        let px = self.axes[0].prolongation(&coarse.axes[0]);
        match self.axes.get(1) {
            None => px,
            Some(ay) => ay.prolongation(&coarse.axes[1]).kron(&px),
        }
    }

    pub fn dof_coords(&self) -> Vec<[T; 2]> {
        let (nx, ny) = self.shape();
        let hx = self.spacing(0);
        let hy = if self.dimension() > 1 {
            self.spacing(1)
        } else {
            T::zero()
        };
        let fx = self.axes[0].first_free();
        let fy = self.axes.get(1).map_or(0, AxisLayout::first_free);
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push([
                    hx * T::from_count(i + fx),
                    hy * T::from_count(j + fy),
                ]);
            }
        }
        out
    }
}

/// Stiffness matrix, load vector and dof map of one discretized case.
#[derive(Debug, Clone)]
pub struct AssembledSystem<T> {
    pub matrix: CsrMatrix<T>,
    pub rhs: Vec<T>,
    pub layout: GridLayout<T>,
    pub case: ProblemCase<T>,
}

impl<T: Scalar> AssembledSystem<T> {
    pub fn free_dof_count(&self) -> usize {
        self.rhs.len()
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.layout.shape()
    }

    pub fn dof_coords(&self) -> Vec<[T; 2]> {
        self.layout.dof_coords()
    }

    pub fn write_matrix_market<W: Write>(&self, matrix: W, rhs: W) -> io::Result<()> {
        self.matrix.write_matrix_market(matrix)?;
        write_vector_market(&self.rhs, rhs)
    }
}

fn check_elements(n: usize) -> Result<(), FemError> {
    if !n.is_power_of_two() {
        return Err(FemError::ElementCount(n));
    }
    Ok(())
}

/// Dof layout of `case` on the given element counts, without assembling.
pub fn grid_layout<T: Scalar>(case: &ProblemCase<T>, elements: &[usize]) -> GridLayout<T> {
    let axes = case
        .fixed_ends()
        .into_iter()
        .zip(elements)
        .map(|((fixed_start, fixed_end), &elements)| AxisLayout {
            elements,
            fixed_start,
            fixed_end,
        })
        .collect();
    GridLayout {
        axes,
        lengths: vec![case.domain_length; elements.len()],
    }
}

/// Piecewise-linear system for `u'' = f` on `(0, L)`.
pub fn assemble_1d<T: Scalar>(
    n_elements: usize,
    case: &ProblemCase<T>,
) -> Result<AssembledSystem<T>, FemError> {
    if case.dimension != 1 {
        return Err(FemError::WrongDimension {
            expected: 1,
            found: case.dimension,
        });
    }
    check_elements(n_elements)?;
    let layout = grid_layout(case, &[n_elements]);
    if layout.free_count() == 0 {
        return Err(FemError::ElementCount(n_elements));
    }
    let axis = layout.axes[0];
    let h = layout.spacing(0);
    let n = axis.free_count();
    let k = T::one() / h;
    let load = -case.forcing * h * T::lit(0.5);

    let mut triplets = Vec::with_capacity(3 * n);
    let mut rhs = vec![T::zero(); n];
    for e in 0..n_elements {
        let nodes = [axis.free_index(e), axis.free_index(e + 1)];
        for (a, ia) in nodes.iter().enumerate() {
            let Some(ia) = *ia else { continue };
            rhs[ia] += load;
            for (b, ib) in nodes.iter().enumerate() {
                if let Some(ib) = *ib {
                    let kab = if a == b { k } else { -k };
                    triplets.push((ia, ib, kab));
                }
            }
        }
    }
    if let Some(last) = axis.free_index(n_elements) {
        rhs[last] += case.neumann_flux();
    }
    Ok(AssembledSystem {
        matrix: CsrMatrix::from_triplets(n, n, &triplets),
        rhs,
        layout,
        case: *case,
    })
}

/// Exact solution of the 1D case at `x`.
pub fn exact_solution_1d<T: Scalar>(case: &ProblemCase<T>, x: T) -> T {
    let f = case.forcing;
    let l = case.domain_length;
    let half = T::lit(0.5);
    match case.case_id {
        1 => half * f * x * (x - l),
        _ => half * f * x * x + (case.neumann_flux() - f * l) * x,
    }
}

/// Bilinear element stiffness for an `hx × hy` rectangle via 2×2 Gauss
/// quadrature. Local node order: (0,0), (1,0), (1,1), (0,1).
pub fn q4_element_stiffness<T: Scalar>(hx: T, hy: T) -> [[T; 4]; 4] {
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let g = 1.0 / 3f64.sqrt();
    let quarter = T::lit(0.25);
    let two = T::lit(2.0);
    let det = hx * hy * quarter;
    let mut ke = [[T::zero(); 4]; 4];
    for (xi, eta) in [(-g, -g), (g, -g), (g, g), (-g, g)] {
        let grads: Vec<(T, T)> = corners
            .iter()
            .map(|&(xa, ya)| {
                let dxi = quarter * T::lit(xa * (1.0 + eta * ya));
                let deta = quarter * T::lit(ya * (1.0 + xi * xa));
                (dxi * two / hx, deta * two / hy)
            })
            .collect();
        for a in 0..4 {
            for b in 0..4 {
                ke[a][b] += (grads[a].0 * grads[b].0 + grads[a].1 * grads[b].1) * det;
            }
        }
    }
    ke
}

/// Bilinear system for `∇²u = f` with homogeneous Dirichlet data and
/// homogeneous Neumann data.
pub fn assemble_2d<T: Scalar>(
    nx_elements: usize,
    ny_elements: usize,
    case: &ProblemCase<T>,
) -> Result<AssembledSystem<T>, FemError> {
    assemble_2d_with(nx_elements, ny_elements, case, |_, _| T::zero())
}

/// As [`assemble_2d`] with Dirichlet values `g(x, y)` eliminated into the load.
pub fn assemble_2d_with<T, G>(
    nx_elements: usize,
    ny_elements: usize,
    case: &ProblemCase<T>,
    dirichlet: G,
) -> Result<AssembledSystem<T>, FemError>
where
    T: Scalar,
    G: Fn(T, T) -> T,
{
    if case.dimension != 2 {
        return Err(FemError::WrongDimension {
            expected: 2,
            found: case.dimension,
        });
    }
    check_elements(nx_elements)?;
    check_elements(ny_elements)?;
    let layout = grid_layout(case, &[nx_elements, ny_elements]);
    if layout.free_count() == 0 {
        return Err(FemError::ElementCount(nx_elements.min(ny_elements)));
    }
    let (ax, ay) = (layout.axes[0], layout.axes[1]);
    let (hx, hy) = (layout.spacing(0), layout.spacing(1));
    let (nfx, nfy) = layout.shape();
    let n = nfx * nfy;
    let ke = q4_element_stiffness(hx, hy);
    let load = -case.forcing * hx * hy * T::lit(0.25);

    let dof = |i: usize, j: usize| -> Option<usize> {
        Some(ax.free_index(i)? + nfx * ay.free_index(j)?)
    };
    let mut triplets = Vec::with_capacity(9 * n);
    let mut rhs = vec![T::zero(); n];
    for ej in 0..ny_elements {
        for ei in 0..nx_elements {
            let nodes = [(ei, ej), (ei + 1, ej), (ei + 1, ej + 1), (ei, ej + 1)];
            for (a, &(ia, ja)) in nodes.iter().enumerate() {
                let Some(row) = dof(ia, ja) else { continue };
                rhs[row] += load;
                for (b, &(ib, jb)) in nodes.iter().enumerate() {
                    match dof(ib, jb) {
                        Some(col) => triplets.push((row, col, ke[a][b])),
                        None => {
                            let g = dirichlet(hx * T::from_count(ib), hy * T::from_count(jb));
                            rhs[row] -= ke[a][b] * g;
                        }
                    }
                }
            }
        }
    }
    Ok(AssembledSystem {
        matrix: CsrMatrix::from_triplets(n, n, &triplets),
        rhs,
        layout,
        case: *case,
    })
}

/// Assembles the case on the given element counts (one per axis).
pub fn assemble<T: Scalar>(
    case: &ProblemCase<T>,
    elements: &[usize],
) -> Result<AssembledSystem<T>, FemError> {
    match (case.dimension, elements) {
        (1, [n]) => assemble_1d(*n, case),
        (2, [nx, ny]) => assemble_2d(*nx, *ny, case),
        (2, [n]) => assemble_2d(*n, *n, case),
        _ => Err(FemError::WrongDimension {
            expected: case.dimension,
            found: elements.len(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::BandCholesky;

    fn case(d: usize, id: usize) -> ProblemCase<f64> {
        ProblemCase::new(d, id).unwrap()
    }

    #[test]
    fn rejects_unknown_case_and_bad_counts() {
        assert_eq!(
            ProblemCase::<f64>::new(1, 3),
            Err(FemError::UnknownCase {
                dimension: 1,
                case_id: 3
            })
        );
        assert!(ProblemCase::<f64>::new(2, 6).is_err());
        assert!(ProblemCase::<f64>::new(3, 1).is_err());
        assert_eq!(assemble_1d(12, &case(1, 1)).unwrap_err(), FemError::ElementCount(12));
        assert_eq!(assemble_1d(1, &case(1, 1)).unwrap_err(), FemError::ElementCount(1));
        assert!(assemble_2d(16, 6, &case(2, 1)).is_err());
    }

    #[test]
    fn one_d_dof_counts() {
        assert_eq!(assemble_1d(8192, &case(1, 1)).unwrap().free_dof_count(), 8191);
        assert_eq!(assemble_1d(8192, &case(1, 2)).unwrap().free_dof_count(), 8192);
    }

    #[test]
    fn one_d_interior_stencil() {
        // interior row (1/h)(-1, 2, -1) and load -h for f = 1
        let sys = assemble_1d(8, &case(1, 1)).unwrap();
        let h = 1.0 / 8.0;
        assert!((sys.matrix.get(3, 2) + 1.0 / h).abs() < 1e-12);
        assert!((sys.matrix.get(3, 3) - 2.0 / h).abs() < 1e-12);
        assert!((sys.matrix.get(3, 4) + 1.0 / h).abs() < 1e-12);
        assert!((sys.rhs[3] + h).abs() < 1e-15);
    }

    #[test]
    fn one_d_exact_solution_values() {
        let c1 = case(1, 1);
        let c2 = case(1, 2);
        assert_eq!(exact_solution_1d(&c1, 0.5), -0.125);
        assert_eq!(exact_solution_1d(&c1, 0.0), 0.0);
        assert_eq!(exact_solution_1d(&c2, 1.0), 0.5);
        // u'(1) = 1 for case 2
        let d = (exact_solution_1d(&c2, 1.0) - exact_solution_1d(&c2, 1.0 - 1e-6)) / 1e-6;
        assert!((d - 1.0).abs() < 1e-5);
    }

    #[test]
    fn one_d_nodal_exactness() {
        for id in [1, 2] {
            let c = case(1, id);
            let sys = assemble_1d(64, &c).unwrap();
            let u = BandCholesky::factor(&sys.matrix)
                .unwrap()
                .solve(&sys.rhs)
                .unwrap();
            for (ui, xy) in u.iter().zip(sys.dof_coords()) {
                let exact = exact_solution_1d(&c, xy[0]);
                assert!((ui - exact).abs() <= 1e-10 * exact.abs().max(1e-3), "case {id}");
            }
        }
    }

    #[test]
    fn two_d_dof_counts_match_reference_grids() {
        let expected = [(1, 16129), (2, 8128), (3, 8255), (4, 4096), (5, 4160)];
        for (id, n) in expected {
            let c = case(2, id);
            let el = c.reference_elements();
            assert_eq!(assemble(&c, &el).unwrap().free_dof_count(), n, "case {id}");
        }
        let c4 = assemble_2d(64, 64, &case(2, 4)).unwrap();
        assert_eq!(c4.grid_shape(), (64, 64));
    }

    #[test]
    fn q4_rows_sum_to_zero() {
        let ke = q4_element_stiffness(0.5, 0.25);
        for row in ke {
            assert!(row.iter().sum::<f64>().abs() < 1e-14);
        }
        // square element: diagonal 2/3, edge neighbours -1/6, opposite corner -1/3
        let sq = q4_element_stiffness(1.0f64, 1.0);
        assert!((sq[0][0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((sq[0][1] + 1.0 / 6.0).abs() < 1e-14);
        assert!((sq[0][2] + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_and_row_sums_away_from_dirichlet() {
        for (d, id) in [(1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (2, 4), (2, 5)] {
            let c = case(d, id);
            let el = if d == 1 { vec![16] } else { vec![8, 8] };
            let sys = assemble(&c, &el).unwrap();
            assert!(sys.matrix.asymmetry() <= 1e-12 * sys.matrix.max_abs());
            // a row whose stencil is complete (all neighbours free) sums to zero
            let stencil = if d == 1 { 3 } else { 9 };
            let (nx, ny) = sys.grid_shape();
            let mut checked = 0;
            for i in 0..sys.free_dof_count() {
                let (ix, iy) = (i % nx, i / nx);
                let interior_x = ix > 0 && ix + 1 < nx;
                let interior_y = d == 1 || (iy > 0 && iy + 1 < ny);
                if interior_x && interior_y {
                    let row: Vec<_> = sys.matrix.row(i).collect();
                    assert_eq!(row.len(), stencil);
                    let s: f64 = row.iter().map(|(_, v)| v).sum();
                    assert!(s.abs() <= 1e-12 * sys.matrix.max_abs(), "case {d}/{id} row {i}");
                    checked += 1;
                }
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn two_d_patch_test() {
        let c = case(2, 1).with_forcing(0.0);
        let field = |x: f64, y: f64| 0.3 + 1.7 * x - 0.9 * y;
        let sys = assemble_2d_with(16, 8, &c, field).unwrap();
        let u = BandCholesky::factor(&sys.matrix)
            .unwrap()
            .solve(&sys.rhs)
            .unwrap();
        for (ui, xy) in u.iter().zip(sys.dof_coords()) {
            assert!((ui - field(xy[0], xy[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn prolongation_reproduces_constants_inside() {
        let c = case(1, 1);
        let fine = assemble_1d(16, &c).unwrap().layout;
        let coarse = fine.coarsen().unwrap();
        let p = fine.prolongation(&coarse);
        let v = p.mul_vec(&vec![1.0; coarse.free_count()]);
        // nodes adjacent to the eliminated ends see a zero neighbour
        for &x in &v[1..v.len() - 1] {
            assert_eq!(x, 1.0);
        }
        assert_eq!(v[0], 0.5);

        let c2 = case(2, 3);
        let fine = assemble_2d(8, 8, &c2).unwrap().layout;
        let coarse = fine.coarsen().unwrap();
        let p = fine.prolongation(&coarse);
        assert_eq!((p.nrows(), p.ncols()), (7 * 9, 3 * 5));
        let v = p.mul_vec(&vec![1.0; coarse.free_count()]);
        let (nx, _) = fine.shape();
        for (i, &x) in v.iter().enumerate() {
            let ix = i % nx;
            if ix > 0 && ix + 1 < nx {
                assert_eq!(x, 1.0);
            }
        }
    }

    #[test]
    fn f32_assembly() {
        let c = ProblemCase::<f32>::new(1, 2).unwrap();
        let sys = assemble_1d(32, &c).unwrap();
        assert_eq!(sys.free_dof_count(), 32);
        assert!(sys.matrix.asymmetry() == 0.0);
    }
}
