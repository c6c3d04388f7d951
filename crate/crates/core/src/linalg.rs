//! Dense linear-algebra helpers shared by the identification, estimation and
//! optimization stages.

use nalgebra::{ComplexField, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::{Error, Result, C64};

/// Solution of a least-squares problem together with diagnostics.
#[derive(Debug, Clone)]
pub struct Lstsq<T: ComplexField> {
    pub x: DMatrix<T>,
    /// Ratio of extreme singular values of the column-equilibrated matrix;
    /// infinite when a column is identically zero or the matrix is singular.
    pub cond: f64,
    pub rank: usize,
}

/// Least squares via column equilibration, Householder QR and an SVD of the
/// triangular factor. Singular values below `rcond * sigma_max` are dropped,
/// which yields the minimal-norm solution in equilibrated coordinates.
pub fn lstsq<T>(a: &DMatrix<T>, b: &DMatrix<T>, rcond: f64) -> Result<Lstsq<T>>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let (m, n) = a.shape();
    if b.nrows() != m {
        return Err(Error::Length {
            what: "least-squares right-hand side",
            expected: m,
            got: b.nrows(),
        });
    }
    if n == 0 {
        return Ok(Lstsq {
            x: DMatrix::zeros(0, b.ncols()),
            cond: 1.0,
            rank: 0,
        });
    }
    let mut scaled = a.clone();
    let mut norms = vec![1.0; n];
    for (j, nj) in norms.iter_mut().enumerate() {
        let cn = scaled.column(j).norm();
        if cn > 0.0 {
            *nj = cn;
            scaled.column_mut(j).scale_mut(1.0 / cn);
        }
    }
    // Reduce tall problems to their n x n triangular factor first.
    let (r, qtb) = if m > n {
        let qr = scaled.qr();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        (qr.r(), qtb.rows(0, n).into_owned())
    } else {
        (scaled, b.clone())
    };
    let svd = SVD::new(r, true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if m < n || smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    };
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut uhb = u.adjoint() * &qtb;
    let mut rank = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            uhb.row_mut(i).scale_mut(1.0 / s);
            rank += 1;
        } else {
            uhb.row_mut(i).fill(T::zero());
        }
    }
    let mut x = vt.adjoint() * uhb;
    for (j, nj) in norms.iter().enumerate() {
        x.row_mut(j).scale_mut(1.0 / nj);
    }
    Ok(Lstsq { x, cond, rank })
}

/// Spectral radius of a square complex matrix from its Schur form, with a
/// Gelfand-formula fallback if the decomposition does not converge.
pub fn spectral_radius(a: &DMatrix<C64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if let Some(schur) = Schur::try_new(a.clone(), 1e-14, 10_000) {
        let (_, t) = schur.unpack();
        return t.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let mut p = a.clone();
    let mut est = p.norm();
    for j in 1..8 {
        p = &p * &p;
        est = p.norm().powf(1.0 / (1u32 << j) as f64);
    }
    est
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(h: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Full unitary factor `Q` (n x n) of a Householder QR of `a` (n x m,
/// m <= n). The trailing n - m columns span the orthogonal complement of
/// the column space of `a`.
pub fn full_householder_q(a: &DMatrix<C64>) -> DMatrix<C64> {
    let (n, m) = a.shape();
    let mut r = a.clone();
    let mut q = DMatrix::<C64>::identity(n, n);
    for j in 0..m.min(n) {
        let x = r.view((j, j), (n - j, 1)).into_owned();
        let xn = x.norm();
        if xn == 0.0 {
            continue;
        }
        let phase = if x[0].norm() > 0.0 {
            x[0] / x[0].norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let mut v = x.clone();
        v[0] += phase * xn;
        let vn = v.norm();
        if vn == 0.0 {
            continue;
        }
        v /= C64::new(vn, 0.0);
        // r <- (I - 2vv^H) r on rows j.., q <- q (I - 2vv^H) on columns j..
        let mut rb = r.rows_mut(j, n - j);
        let w = v.adjoint() * &rb;
        rb -= (&v * w) * C64::new(2.0, 0.0);
        let mut qb = q.columns_mut(j, n - j);
        let w = &qb * &v;
        qb -= (w * v.adjoint()) * C64::new(2.0, 0.0);
    }
    q
}

/// Orthonormal basis of the null space of the m x n matrix `t`, computed
/// from the full Householder factor of `t^H`. Assumes `t` has full row rank.
pub fn null_space_basis(t: &DMatrix<C64>) -> DMatrix<C64> {
    let (m, n) = t.shape();
    let q = full_householder_q(&t.adjoint());
    q.columns(m.min(n), n - m.min(n)).into_owned()
}

pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn to_dvector(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn lstsq_exact_square() {
        let a = DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0), c(3.0, 0.0)]);
        let x = DMatrix::from_column_slice(2, 1, &[c(1.0, -1.0), c(0.5, 2.0)]);
        let b = &a * &x;
        let sol = lstsq(&a, &b, 1e-12).unwrap();
        assert!((sol.x - x).norm() < 1e-12);
        assert_eq!(sol.rank, 2);
    }

    #[test]
    fn lstsq_zero_column_gets_zero_coefficient() {
        let a = DMatrix::from_row_slice(3, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(3.0, 1.0), c(0.0, 0.0)]);
        let b = DMatrix::from_column_slice(3, 1, &[c(1.0, 0.0), c(2.0, 0.0), c(3.0, 1.0)]);
        let sol = lstsq(&a, &b, 1e-12).unwrap();
        assert!(sol.cond.is_infinite());
        assert_eq!(sol.rank, 1);
        assert!((sol.x[(0, 0)] - c(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(sol.x[(1, 0)], c(0.0, 0.0));
    }

    #[test]
    fn spectral_radius_of_triangular() {
        let a = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(7.0, 0.0), c(0.0, 0.0), c(0.0, -0.9)]);
        assert!((spectral_radius(&a) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn householder_q_is_unitary_and_spans_complement() {
        let t = DMatrix::from_row_slice(2, 4, &[c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.0), c(3.0, 0.5), c(0.2, 0.0), c(1.0, -1.0), c(0.0, 0.0), c(2.0, 0.0)]);
        let z = null_space_basis(&t);
        assert_eq!(z.shape(), (4, 2));
        assert!((z.adjoint() * &z - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((&t * &z).norm() < 1e-12);
    }

    #[test]
    fn kron_shapes() {
        let a = DMatrix::from_element(2, 3, c(1.0, 0.0));
        let b = DMatrix::from_element(4, 1, c(2.0, 0.0));
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (8, 3));
        assert_eq!(k[(7, 2)], c(2.0, 0.0));
    }
}
