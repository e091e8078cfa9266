//! Inertia of symmetric matrices by LDLᵀ with Bunch-Kaufman pivoting.

use nalgebra::DMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

fn swap_sym(a: &mut DMatrix<f64>, p: usize, q: usize) {
    if p != q {
        a.swap_rows(p, q);
        a.swap_columns(p, q);
    }
}

/// Signs of the block-diagonal factor D in A = P L D Lᵀ Pᵀ (Sylvester's law).
pub fn inertia(matrix: &DMatrix<f64>) -> Inertia {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let alpha = (1.0 + 17f64.sqrt()) / 8.0;
    let mut out = Inertia { negative: 0, zero: 0, positive: 0 };
    let count = |d: f64, out: &mut Inertia| {
        if d > 0.0 {
            out.positive += 1;
        } else if d < 0.0 {
            out.negative += 1;
        } else {
            out.zero += 1;
        }
    };
    let mut k = 0;
    while k < n {
        let akk = a[(k, k)].abs();
        let (mut r, mut lambda) = (k, 0.0);
        for i in k + 1..n {
            if a[(i, k)].abs() > lambda {
                lambda = a[(i, k)].abs();
                r = i;
            }
        }
        if akk.max(lambda) == 0.0 {
            count(0.0, &mut out);
            k += 1;
            continue;
        }
        let two_by_two = if akk >= alpha * lambda {
            false
        } else {
            let sigma = (k..n).filter(|&j| j != r).map(|j| a[(r, j)].abs()).fold(0.0, f64::max);
            if akk * sigma >= alpha * lambda * lambda {
                false
            } else if a[(r, r)].abs() >= alpha * sigma {
                swap_sym(&mut a, k, r);
                false
            } else {
                swap_sym(&mut a, k + 1, r);
                true
            }
        };
        if !two_by_two {
            let d = a[(k, k)];
            count(d, &mut out);
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                for j in k + 1..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
            k += 1;
        } else {
            let (d11, d12, d22) = (a[(k, k)], a[(k, k + 1)], a[(k + 1, k + 1)]);
            let det = d11 * d22 - d12 * d12;
            // Eigenvalue signs of the 2×2 pivot.
            if det < 0.0 {
                count(1.0, &mut out);
                count(-1.0, &mut out);
            } else {
                let s = if d11 + d22 > 0.0 { 1.0 } else { -1.0 };
                count(s, &mut out);
                count(if det == 0.0 { 0.0 } else { s }, &mut out);
            }
            let (i11, i12, i22) = (d22 / det, -d12 / det, d11 / det);
            for i in k + 2..n {
                let (x, y) = (a[(i, k)], a[(i, k + 1)]);
                let (w1, w2) = (x * i11 + y * i12, x * i12 + y * i22);
                for j in k + 2..n {
                    a[(i, j)] -= w1 * a[(k, j)] + w2 * a[(k + 1, j)];
                }
            }
            k += 2;
        }
    }
    out
}

/// (negative, near-zero) eigenvalue counts with |λ| < tol treated as zero,
/// from the inertia of H + tol·I and H − tol·I.
pub fn index_and_nullity(h: &DMatrix<f64>, tol: f64) -> (usize, usize) {
    let eye = DMatrix::<f64>::identity(h.nrows(), h.ncols());
    let below = inertia(&(h + &eye * tol)).negative;
    let below_upper = inertia(&(h - &eye * tol)).negative;
    (below, below_upper - below)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eig_counts(m: &DMatrix<f64>, tol: f64) -> (usize, usize) {
        let e = m.clone().symmetric_eigenvalues();
        (e.iter().filter(|&&x| x < -tol).count(), e.iter().filter(|&&x| x.abs() <= tol).count())
    }

    #[test]
    fn diagonal_and_zero_pivot() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, -1.0, 0.0, 3.0]));
        assert_eq!(inertia(&m), Inertia { negative: 1, zero: 1, positive: 2 });
        // Zero diagonal forces a 2×2 pivot.
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(inertia(&m), Inertia { negative: 1, zero: 0, positive: 1 });
    }

    proptest! {
        #[test]
        fn matches_eigenvalue_signs(entries in proptest::collection::vec(-1.0f64..1.0, 36), shift in -1.0f64..1.0) {
            let b = DMatrix::from_row_slice(6, 6, &entries);
            let m = (&b + b.transpose()) * 0.5 + DMatrix::identity(6, 6) * shift;
            let e = m.clone().symmetric_eigenvalues();
            prop_assume!(e.iter().all(|x| x.abs() > 1e-8));
            let i = inertia(&m);
            prop_assert_eq!(i.negative, e.iter().filter(|&&x| x < 0.0).count());
            prop_assert_eq!(i.positive, e.iter().filter(|&&x| x > 0.0).count());
            let tol = 0.05;
            prop_assume!(e.iter().all(|x| (x.abs() - tol).abs() > 1e-8));
            prop_assert_eq!(index_and_nullity(&m, tol), eig_counts(&m, tol));
        }
    }
}
