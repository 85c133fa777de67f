//! Dense complex linear algebra used by the rest of the crate.
//!
//! Matrices are `nalgebra` column-major `DMatrix<Complex64>`; `vec` is
//! therefore a plain copy of the storage. The eigen and singular value
//! decompositions are backed by nalgebra; this module only adds the
//! contracts the estimators rely on (descending order, phase convention,
//! rank thresholds, PSD checks).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Hermitian-ness tolerance relative to the Frobenius norm.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_TOL * lambda_max` are reported as not PSD.
pub const PSD_TOL: f64 = 1e-10;
/// Relative ridge used when whitening with a noise covariance.
pub const DEFAULT_RIDGE_REL: f64 = 1e-12;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Frobenius norm.
pub fn frob(a: &CMat) -> f64 {
    a.norm()
}

pub fn ensure_finite(a: &CMat, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(invalid(format!("{what}: empty matrix")));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid(format!("{what}: non-finite entry")));
    }
    Ok(())
}

pub fn is_hermitian(a: &CMat, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = frob(a).max(f64::MIN_POSITIVE);
    frob(&(a - a.adjoint())) <= rel_tol * scale
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` pairs with `values[i]`.
    pub vectors: CMat,
}

impl HermitianEig {
    /// Leading `r` eigenvectors.
    pub fn leading(&self, r: usize) -> CMat {
        self.vectors.columns(0, r.min(self.vectors.ncols())).into_owned()
    }
}

/// Descending eigen-decomposition of a Hermitian matrix.
///
/// Each eigenvector is rotated so that its largest-magnitude entry (first
/// one on ties) is real and nonnegative.
pub fn hermitian_eig(a: &CMat) -> Result<HermitianEig> {
    ensure_finite(a, "hermitian_eig")?;
    if !a.is_square() {
        return Err(invalid(format!(
            "hermitian_eig: matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_hermitian(a, HERMITIAN_TOL) {
        return Err(invalid("hermitian_eig: matrix is not Hermitian"));
    }
    let n = a.nrows();
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 200 * n.max(10))
        .ok_or_else(|| Error::Numeric("Hermitian eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        let mut best = 0usize;
        let mut best_mag = 0.0f64;
        for (k, z) in col.iter().enumerate() {
            let m = z.norm();
            if m > best_mag * (1.0 + 1e-12) {
                best = k;
                best_mag = m;
            }
        }
        let rot = if best_mag > 0.0 {
            col[best].conj() / best_mag
        } else {
            Complex64::new(1.0, 0.0)
        };
        for k in 0..n {
            vectors[(k, dst)] = col[k] * rot;
        }
        vectors[(best, dst)] = Complex64::new(vectors[(best, dst)].norm(), 0.0);
    }
    Ok(HermitianEig { values, vectors })
}

/// Hermitian square root and (ridged) inverse square root of a PSD matrix.
///
/// Returns `(half, inv_half)` with `half * half^H = A` and
/// `inv_half * half = I` on the numerical range of `A`. `ridge` is added to
/// every eigenvalue before inversion. Eigenvalues below `n * eps * lambda_max`
/// are treated as zero; with no ridge they map to zero (pseudo-inverse).
pub fn inv_sqrt_hermitian(a: &CMat, ridge: f64) -> Result<(CMat, CMat)> {
    if !(ridge >= 0.0) {
        return Err(invalid("inv_sqrt_hermitian: ridge must be nonnegative"));
    }
    let eig = hermitian_eig(a)?;
    let lmax = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let lmin = eig.values.last().copied().unwrap_or(0.0);
    if lmin < -PSD_TOL * lmax || (lmax == 0.0 && lmin < 0.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: lmin,
            max_eigenvalue: lmax,
        });
    }
    let n = a.nrows();
    let v = &eig.vectors;
    let mut half_scaled = v.clone();
    let mut inv_scaled = v.clone();
    let floor = n as f64 * f64::EPSILON * lmax;
    for (j, &lam) in eig.values.iter().enumerate() {
        let lam = if lam > floor { lam } else { 0.0 };
        let s = lam.sqrt();
        let denom = lam + ridge;
        let si = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
        for i in 0..n {
            half_scaled[(i, j)] *= s;
            inv_scaled[(i, j)] *= si;
        }
    }
    let vh = v.adjoint();
    Ok((&half_scaled * &vh, &inv_scaled * &vh))
}

/// Default whitening ridge, relative to the largest eigenvalue.
pub fn default_ridge(a: &CMat) -> Result<f64> {
    let eig = hermitian_eig(a)?;
    Ok(DEFAULT_RIDGE_REL * eig.values.first().copied().unwrap_or(0.0).max(0.0))
}

fn svd(a: &CMat, vectors: bool) -> Result<nalgebra::SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>> {
    let iters = 200 * a.nrows().max(a.ncols()).max(10);
    nalgebra::SVD::try_new(a.clone(), vectors, vectors, f64::EPSILON, iters)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    ensure_finite(a, "singular_values")?;
    let mut s: Vec<f64> = svd(a, false)?.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

/// Singular-value cutoff `max(m, n) * eps * sigma_max`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Numerical rank with the `max(m, n) * eps * sigma_max` cutoff.
pub fn numerical_rank(a: &CMat) -> Result<usize> {
    let s = singular_values(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    let tol = rank_tolerance(a.nrows(), a.ncols(), smax);
    Ok(s.iter().filter(|&&x| x > tol).count())
}

/// Moore-Penrose pseudo-inverse.
pub fn pseudo_inverse(a: &CMat) -> Result<CMat> {
    ensure_finite(a, "pseudo_inverse")?;
    let (m, n) = a.shape();
    let dec = svd(a, true)?;
    let smax = dec.singular_values.iter().fold(0.0f64, |acc, &x| acc.max(x));
    if smax == 0.0 {
        return Ok(CMat::zeros(n, m));
    }
    let tol = rank_tolerance(m, n, smax);
    let u = dec.u.as_ref().expect("u requested");
    let v_t = dec.v_t.as_ref().expect("v_t requested");
    let k = dec.singular_values.len();
    let mut out = CMat::zeros(n, m);
    for i in 0..k {
        let s = dec.singular_values[i];
        if s <= tol {
            continue;
        }
        let vi = v_t.row(i).adjoint();
        let ui = u.column(i);
        out += (vi * ui.adjoint()).scale(1.0 / s);
    }
    Ok(out)
}

/// Solve `A X = B` for Hermitian positive definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(invalid("solve_hpd: dimension mismatch"));
    }
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| invalid("matrix is not Hermitian positive definite"))?;
    // rounding can let a singular matrix through with a tiny pivot
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, z| m.max(z.re));
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).fold(f64::INFINITY, |m, i| m.min(l[(i, i)].norm_sqr()));
    if !(min_pivot > a.nrows() as f64 * f64::EPSILON * max_diag) {
        return Err(invalid("matrix is numerically singular"));
    }
    Ok(chol.solve(b))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn inverse_hpd(a: &CMat) -> Result<CMat> {
    solve_hpd(a, &CMat::identity(a.nrows(), a.ncols()))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Column-wise Kronecker (Khatri-Rao) product: column `p` is `a_p ⊗ b_p`.
pub fn khatri_rao(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.ncols() != b.ncols() {
        return Err(invalid(format!(
            "khatri_rao: column counts differ ({} vs {})",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ma, mb) = (a.nrows(), b.nrows());
    let mut out = CMat::zeros(ma * mb, a.ncols());
    for p in 0..a.ncols() {
        for i in 0..ma {
            let ai = a[(i, p)];
            for j in 0..mb {
                out[(i * mb + j, p)] = ai * b[(j, p)];
            }
        }
    }
    Ok(out)
}

/// Column-stacking vectorization.
pub fn vec(a: &CMat) -> CVec {
    CVec::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &CVec, rows: usize, cols: usize) -> Result<CMat> {
    if v.len() != rows * cols {
        return Err(invalid(format!(
            "unvec: length {} does not match {}x{}",
            v.len(),
            rows,
            cols
        )));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// Real trace of a (numerically) Hermitian matrix.
pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// `U * U^H` for a basis with orthonormal columns.
pub fn projector(u: &CMat) -> CMat {
    u * u.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_hermitian(n: usize, rng: &mut impl Rng) -> CMat {
        let b = random(n, n, rng);
        (&b + b.adjoint()).scale(0.5)
    }

    fn real_diag(d: &[f64]) -> CMat {
        CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| c64(x, 0.0))))
    }

    #[test]
    fn eig_of_diagonal_is_sorted_permutation() {
        let e = hermitian_eig(&real_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        let expect = [0usize, 2, 1];
        for (col, &row) in expect.iter().enumerate() {
            for i in 0..3 {
                let want = if i == row { 1.0 } else { 0.0 };
                assert!((e.vectors[(i, col)] - c64(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn eig_of_rank_one_recovers_vector() {
        let v = CVec::from_vec(vec![c64(0.5, 0.5), c64(0.0, -0.5), c64(0.5, 0.0)]);
        let a = &v * v.adjoint();
        let e = hermitian_eig(&a).unwrap();
        assert!((e.values[0] - v.norm_squared()).abs() < 1e-12);
        assert!(e.values[1].abs() < 1e-12 && e.values[2].abs() < 1e-12);
        let u = e.vectors.column(0);
        let overlap = (u.adjoint() * &v)[(0, 0)].norm();
        assert!((overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_hermitian(6, &mut rng);
        let e = hermitian_eig(&a).unwrap();
        let lam = real_diag(&e.values);
        let rec = &e.vectors * lam * e.vectors.adjoint();
        assert!(frob(&(rec - &a)) < 1e-9 * frob(&a));
        let gram = e.vectors.adjoint() * &e.vectors;
        assert!(frob(&(gram - CMat::identity(6, 6))) < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..6 {
            let col = e.vectors.column(j);
            let (k, _) = col
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (k, z)| if z.norm() > acc.1 { (k, z.norm()) } else { acc });
            assert!(col[k].im.abs() < 1e-15 && col[k].re >= 0.0);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut a = CMat::identity(2, 2);
        a[(0, 1)] = c64(1.0, 0.0);
        assert!(matches!(hermitian_eig(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let (h, ih) = inv_sqrt_hermitian(&CMat::identity(3, 3), 0.0).unwrap();
        assert!(frob(&(h - CMat::identity(3, 3))) < 1e-14);
        assert!(frob(&(ih - CMat::identity(3, 3))) < 1e-14);

        let (h, ih) = inv_sqrt_hermitian(&real_diag(&[4.0, 9.0]), 0.0).unwrap();
        assert!(frob(&(h - real_diag(&[2.0, 3.0]))) < 1e-14);
        assert!(frob(&(ih - real_diag(&[0.5, 1.0 / 3.0]))) < 1e-14);
    }

    #[test]
    fn inv_sqrt_reconstructs_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random(5, 5, &mut rng);
        let a = b.adjoint() * &b;
        let (h, ih) = inv_sqrt_hermitian(&a, 0.0).unwrap();
        assert!(frob(&(&h * h.adjoint() - &a)) < 1e-9 * frob(&a));
        assert!(frob(&(&ih * &h - CMat::identity(5, 5))) < 1e-9);
        // whitening: A^{-1/2} A A^{-H/2} = I
        let w = &ih * &a * ih.adjoint();
        assert!(frob(&(w - CMat::identity(5, 5))) < 1e-8);
    }

    #[test]
    fn inv_sqrt_on_rank_deficient_acts_on_range() {
        let v = CVec::from_vec(vec![c64(1.0, 0.0), c64(0.0, 1.0), c64(0.0, 0.0)]);
        let a = &v * v.adjoint();
        let (h, ih) = inv_sqrt_hermitian(&a, 0.0).unwrap();
        assert!(frob(&(&h * h.adjoint() - &a)) < 1e-12);
        let p = &ih * &h;
        let vn = v.scale(1.0 / v.norm());
        let range = &vn * vn.adjoint();
        assert!(frob(&(p - range)) < 1e-10);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let a = real_diag(&[1.0, -0.5]);
        assert!(matches!(inv_sqrt_hermitian(&a, 0.0), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let a = CMat::from_row_slice(
            3,
            3,
            &[
                c64(2.0, 0.0),
                c64(1.0, 1.0),
                c64(0.0, 0.0),
                c64(0.0, -1.0),
                c64(3.0, 0.0),
                c64(1.0, 0.0),
                c64(1.0, 0.0),
                c64(0.0, 0.0),
                c64(1.0, 2.0),
            ],
        );
        let p = pseudo_inverse(&a).unwrap();
        assert!(frob(&(&a * &p - CMat::identity(3, 3))) < 1e-12);
        let inv = a.clone().try_inverse().unwrap();
        assert!(frob(&(p - inv)) < 1e-12);
    }

    #[test]
    fn pinv_of_zero_is_zero_transposed() {
        let p = pseudo_inverse(&CMat::zeros(2, 4)).unwrap();
        assert_eq!(p.shape(), (4, 2));
        assert_eq!(frob(&p), 0.0);
    }

    #[test]
    fn pinv_moore_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // tall full rank
        let a = random(6, 3, &mut rng);
        let p = pseudo_inverse(&a).unwrap();
        assert!(frob(&(&p * &a - CMat::identity(3, 3))) < 1e-9);
        // rank deficient 5x4 of rank 2
        let b = random(5, 2, &mut rng) * random(2, 4, &mut rng);
        let p = pseudo_inverse(&b).unwrap();
        let s = frob(&b);
        assert!(frob(&(&b * &p * &b - &b)) < 1e-8 * s);
        assert!(frob(&(&p * &b * &p - &p)) < 1e-8 * frob(&p));
        let bp = &b * &p;
        let pb = &p * &b;
        assert!(frob(&(&bp - bp.adjoint())) < 1e-8);
        assert!(frob(&(&pb - pb.adjoint())) < 1e-8);
        assert_eq!(numerical_rank(&b).unwrap(), 2);
    }

    #[test]
    fn kron_with_identity_is_block_diagonal() {
        let b = CMat::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(2.0, 1.0), c64(0.0, 3.0), c64(4.0, 0.0)]);
        let k = kron(&CMat::identity(2, 2), &b);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i / 2 == j / 2 { b[(i % 2, j % 2)] } else { c64(0.0, 0.0) };
                assert_eq!(k[(i, j)], want);
            }
        }
    }

    #[test]
    fn vec_stacks_columns() {
        // [[a, c], [b, d]]
        let a = CMat::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(3.0, 0.0), c64(2.0, 0.0), c64(4.0, 0.0)]);
        let v = vec(&a);
        let got: Vec<f64> = v.iter().map(|z| z.re).collect();
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvec(&v, 2, 2).unwrap(), a);
        assert!(unvec(&v, 3, 2).is_err());
    }

    #[test]
    fn vec_of_triple_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let c = random(3, 3, &mut rng);
        let lhs = vec(&(&a * &b * &c));
        let rhs = kron(&c.transpose(), &a) * vec(&b);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn khatri_rao_columns_are_kronecker_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(3, 2, &mut rng);
        let b = random(4, 2, &mut rng);
        let kr = khatri_rao(&a, &b).unwrap();
        for p in 0..2 {
            let want = kron(&a.columns(p, 1).into_owned(), &b.columns(p, 1).into_owned());
            assert!(frob(&(kr.columns(p, 1).into_owned() - want)) < 1e-15);
        }
        assert!(khatri_rao(&a, &random(4, 3, &mut rng)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(rows: usize, cols: usize, seed: u64) -> CMat {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random(rows, cols, &mut rng)
        }

        proptest! {
            #[test]
            fn unvec_vec_roundtrip(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
                let a = mat(r, c, seed);
                prop_assert_eq!(unvec(&vec(&a), r, c).unwrap(), a);
            }

            #[test]
            fn kron_mixed_product(seed in any::<u64>()) {
                let a = mat(2, 3, seed);
                let b = mat(2, 2, seed ^ 1);
                let c = mat(3, 2, seed ^ 2);
                let d = mat(2, 3, seed ^ 3);
                let lhs = kron(&a, &b) * kron(&c, &d);
                let rhs = kron(&(&a * &c), &(&b * &d));
                prop_assert!(frob(&(lhs - rhs)) < 1e-12);
            }

            #[test]
            fn kron_associative(seed in any::<u64>()) {
                let a = mat(2, 1, seed);
                let b = mat(1, 2, seed ^ 7);
                let c = mat(2, 2, seed ^ 9);
                let lhs = kron(&kron(&a, &b), &c);
                let rhs = kron(&a, &kron(&b, &c));
                prop_assert!(frob(&(lhs - rhs)) < 1e-14);
            }

            #[test]
            fn eig_trace_and_det(n in 1usize..7, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = random(n, n, &mut rng);
                let a = b.adjoint() * &b + CMat::identity(n, n).scale(0.1);
                let e = hermitian_eig(&a).unwrap();
                let tr = trace_re(&a);
                let sum: f64 = e.values.iter().sum();
                prop_assert!((sum - tr).abs() <= 1e-9 * tr.abs());
                let det = a.clone().determinant().re;
                let prod: f64 = e.values.iter().product();
                prop_assert!((prod - det).abs() <= 1e-8 * det.abs());
            }

            #[test]
            fn inv_sqrt_whitens_on_range(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = random(4, 2, &mut rng);
                let a = &b * b.adjoint();
                let (_, ih) = inv_sqrt_hermitian(&a, 0.0).unwrap();
                let w = &ih * &a * ih.adjoint();
                let range = &b * pseudo_inverse(&b).unwrap();
                let err = frob(&(&range * &w * &range - &range));
                prop_assert!(err < 1e-7, "err {err}");
            }
        }
    }
}
