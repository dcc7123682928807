//! Small vector kernels and extreme-eigenvalue estimators.

use crate::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm2_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

/// `‖a − b‖₂`
pub fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

pub fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Deterministic broadband seed vector, used where an all-ones start would be
/// nearly orthogonal to the dominant eigenvector (oscillatory top modes).
pub fn broadband_seed<T: Scalar>(n: usize) -> Vec<T> {
    let golden = 0.618_033_988_749_894_8_f64;
    let mut v: Vec<T> = (0..n)
        .map(|i| T::lit(((i as f64 + 1.0) * golden).fract() - 0.5 + 1e-3))
        .collect();
    let nrm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nrm);
    v
}

pub fn ones_seed<T: Scalar>(n: usize) -> Vec<T> {
    let s = T::one() / T::from_count(n.max(1)).sqrt();
    vec![s; n]
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIterationOutcome<T> {
    pub eigenvalue: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of a symmetric positive semi-definite operator.
///
/// `apply(x, y)` must write `y = S x`. Iteration stops once the Rayleigh
/// quotient changes by less than `tol` relative to itself, or after
/// `max_iter` steps (reported through `converged`).
pub fn power_iteration<T, F>(
    seed: Vec<T>,
    tol: T,
    max_iter: usize,
    mut apply: F,
) -> PowerIterationOutcome<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]),
{
    let n = seed.len();
    if n == 0 {
        return PowerIterationOutcome {
            eigenvalue: T::zero(),
            iterations: 0,
            converged: true,
        };
    }
    let mut x = seed;
    let nrm = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nrm);
    let mut y = vec![T::zero(); n];
    let mut lambda = T::zero();
    for it in 1..=max_iter {
        apply(&x, &mut y);
        let next = dot(&x, &y);
        let ny = norm2(&y);
        if ny == T::zero() {
            return PowerIterationOutcome {
                eigenvalue: T::zero(),
                iterations: it,
                converged: true,
            };
        }
        for (xi, &yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        if it > 1 && (next - lambda).abs() <= tol * next.abs() {
            return PowerIterationOutcome {
                eigenvalue: next.max(lambda),
                iterations: it,
                converged: true,
            };
        }
        lambda = next;
    }
    PowerIterationOutcome {
        eigenvalue: lambda,
        iterations: max_iter,
        converged: false,
    }
}

/// Lanczos vectors kept for full reorthogonalization, counted in scalars.
const LANCZOS_BASIS_BUDGET: usize = 1 << 18;

/// Largest eigenvalue of a symmetric positive semi-definite operator by
/// Lanczos iteration.
///
/// Checks every step for the first ten, then every ten steps. Stops once the
/// Ritz residual `β_j |s_j|` or the Ritz value's growth since the previous
/// check drops below `tol` times the Ritz value, on an invariant subspace, or
/// after `max_iter` steps. Basis vectors are reorthogonalized in full while
/// they fit the basis budget.
pub fn lanczos_max<T, F>(seed: Vec<T>, tol: T, max_iter: usize, mut apply: F) -> PowerIterationOutcome<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]),
{
    let n = seed.len();
    let nrm = norm2(&seed);
    if n == 0 || nrm == T::zero() {
        return PowerIterationOutcome {
            eigenvalue: T::zero(),
            iterations: 0,
            converged: true,
        };
    }
    let tol = tol.to_f64_lossy();
    let keep = (LANCZOS_BASIS_BUDGET / n).max(2);
    let mut q: Vec<T> = seed.iter().map(|&v| v / nrm).collect();
    let mut prev = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut basis: Vec<Vec<T>> = Vec::new();
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut theta = 0.0;
    for j in 1..=max_iter.min(n) {
        apply(&q, &mut w);
        let a = dot(&q, &w);
        let b_prev = beta.last().copied().unwrap_or(0.0);
        for i in 0..n {
            w[i] -= a * q[i] + T::lit(b_prev) * prev[i];
        }
        if basis.len() < keep {
            basis.push(q.clone());
            for v in &basis {
                let c = dot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, &y)| *x -= c * y);
            }
        }
        alpha.push(a.to_f64_lossy());
        let b = norm2(&w).to_f64_lossy();
        let check = j < 10 || j % 10 == 0 || j == max_iter.min(n);
        if !check && b > 0.0 {
            beta.push(b);
            std::mem::swap(&mut prev, &mut q);
            q.iter_mut().zip(&w).for_each(|(x, &y)| *x = y / T::lit(b));
            continue;
        }
        let last = theta;
        theta = tridiagonal_max(&alpha, &beta);
        let scale = theta.abs().max(f64::MIN_POSITIVE);
        let residual = b * tridiagonal_last_component(&alpha, &beta, theta).abs();
        let stalled = j > 1 && (theta - last).abs() <= tol * scale;
        if b <= f64::EPSILON * scale || residual <= tol * scale || stalled {
            return PowerIterationOutcome {
                eigenvalue: T::lit(theta),
                iterations: j,
                converged: true,
            };
        }
        beta.push(b);
        std::mem::swap(&mut prev, &mut q);
        q.iter_mut().zip(&w).for_each(|(x, &y)| *x = y / T::lit(b));
    }
    PowerIterationOutcome {
        eigenvalue: T::lit(theta),
        iterations: max_iter.min(n),
        converged: max_iter >= n && basis.len() >= n,
    }
}

/// Number of eigenvalues of the tridiagonal `(alpha, beta)` below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for (k, &a) in alpha.iter().enumerate() {
        let b2 = if k > 0 { beta[k - 1] * beta[k - 1] } else { 0.0 };
        d = a - x - if k > 0 { b2 / d } else { 0.0 };
        if d == 0.0 {
            d = -f64::EPSILON * (a.abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Upper end of the bisection bracket of the largest eigenvalue.
fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    let radius = |k: usize| {
        (if k > 0 { beta[k - 1].abs() } else { 0.0 }) + (if k + 1 < m { beta[k].abs() } else { 0.0 })
    };
    let mut lo = (0..m).map(|k| alpha[k] - radius(k)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..m).map(|k| alpha[k] + radius(k)).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) == m {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Last component of the unit eigenvector for the top eigenvalue `theta`,
/// by two inverse-iteration steps with a shift just above `theta` (the
/// shifted matrix is negative definite, so elimination needs no pivoting).
fn tridiagonal_last_component(alpha: &[f64], beta: &[f64], theta: f64) -> f64 {
    let m = alpha.len();
    let shift = theta + 1e-12 * theta.abs().max(f64::MIN_POSITIVE);
    let mut x = vec![1.0 / (m as f64).sqrt(); m];
    let mut diag = vec![0.0; m];
    for _ in 0..2 {
        let mut rhs = x.clone();
        diag[0] = alpha[0] - shift;
        for k in 1..m {
            let l = beta[k - 1] / diag[k - 1];
            diag[k] = alpha[k] - shift - l * beta[k - 1];
            rhs[k] -= l * rhs[k - 1];
        }
        let mut y = vec![0.0; m];
        y[m - 1] = rhs[m - 1] / diag[m - 1];
        for k in (0..m - 1).rev() {
            y[k] = (rhs[k] - beta[k] * y[k + 1]) / diag[k];
        }
        let nrm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nrm.is_finite() && nrm > 0.0) {
            return 0.0;
        }
        x = y.iter().map(|v| v / nrm).collect();
    }
    x[m - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_diagonal() {
        let d = [1.0, 3.0, 2.0, 0.5];
        let out = power_iteration(ones_seed::<f64>(4), 1e-14, 10_000, |x, y| {
            for i in 0..4 {
                y[i] = d[i] * x[i];
            }
        });
        assert!(out.converged);
        assert!((out.eigenvalue - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_on_a_laplacian() {
        // 1D Dirichlet Laplacian: λ_max = 2 - 2cos(nπ/(n+1))
        let n = 4000;
        let lap = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - l - r;
            }
        };
        let exact = 2.0 - 2.0 * (n as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
        let out = lanczos_max(broadband_seed::<f64>(n), 1e-12, 5000, lap);
        assert!(out.converged);
        assert!((out.eigenvalue - exact).abs() <= 1e-11 * exact);
    }

    #[test]
    fn lanczos_on_small_diagonal() {
        let d = [1.0, 3.0, 2.0, 0.5];
        let out = lanczos_max(ones_seed::<f64>(4), 1e-15, 100, |x, y| {
            for i in 0..4 {
                y[i] = d[i] * x[i];
            }
        });
        assert!(out.converged);
        assert!((out.eigenvalue - 3.0).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_helpers() {
        // [[2, 1], [1, 2]]: eigenvalues 1, 3; top eigenvector (1, 1)/√2
        let (a, b) = ([2.0, 2.0], [1.0]);
        let top = tridiagonal_max(&a, &b);
        assert!((top - 3.0).abs() < 1e-14);
        assert_eq!(sturm_count(&a, &b, 2.0), 1);
        let s = tridiagonal_last_component(&a, &b, top);
        assert!((s.abs() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn seed_is_unit() {
        let s: Vec<f64> = broadband_seed(17);
        assert!((norm2(&s) - 1.0).abs() < 1e-15);
    }
}
