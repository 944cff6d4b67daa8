//! Dense symmetric matrices, the semidefinite order, and the handful of
//! factorisation-based quantities (inverse, log-determinant, trace-exp) the
//! rest of the crate needs.
//!
//! Storage is a flat `Vec<f64>`; since the matrix is symmetric the layout is
//! both row- and column-major. Hot loops work on slices directly. Cholesky is
//! used for inverses and determinants, the symmetric eigendecomposition for
//! order predicates and `trace_exp`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Default relative tolerance for the semidefinite order.
pub const PSD_TOL: f64 = 1e-9;
/// Absolute floor applied to the relative tolerance.
pub const PSD_ABS_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = s;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// `x x^T`.
    pub fn outer(x: &[f64]) -> Self {
        let mut m = Self::zeros(x.len());
        m.add_outer(x, 1.0);
        m
    }

    /// Builds from rows, symmetrising as `(A + A^T) / 2`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(invalid("matrix must have at least one row"));
        }
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("matrix entries"));
                }
                m.data[i * dim + j] = v;
            }
        }
        m.symmetrize();
        Ok(m)
    }

    /// Builds from any square nalgebra matrix, symmetrising.
    pub fn from_dmatrix(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if a.nrows() == 0 {
            return Err(invalid("matrix must have at least one row"));
        }
        let dim = a.nrows();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = a[(i, j)];
            }
        }
        m.check_finite()?;
        m.symmetrize();
        Ok(m)
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = v;
                self.data[j * d + i] = v;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("matrix entries"))
        }
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    fn check_vec(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            dim: self.dim,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_dim(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += w x x^T`, keeping exact symmetry.
    pub fn add_outer(&mut self, x: &[f64], w: f64) {
        let d = self.dim;
        debug_assert_eq!(x.len(), d);
        for i in 0..d {
            let wi = w * x[i];
            for j in 0..d {
                self.data[i * d + j] += wi * x[j];
            }
        }
        self.symmetrize();
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        quad_form_slice(&self.data, x)
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        mul_vec_into(&self.data, x, &mut out);
        out
    }

    /// `U^T A U` for a square, not necessarily symmetric `U`.
    pub fn congruence(&self, u: &DMatrix<f64>) -> Result<Self> {
        if u.nrows() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: u.nrows(),
            });
        }
        let prod = u.transpose() * self.to_dmatrix() * u;
        Self::from_dmatrix(&prod)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.check_finite()?;
        let mut ev: Vec<f64> = self.to_dmatrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        Ok(ev)
    }

    /// Applies `f` to the spectrum: `Q diag(f(λ)) Q^T`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.check_finite()?;
        let eig = SymmetricEigen::new(self.to_dmatrix());
        let mapped = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
        let out = &eig.eigenvectors * mapped * eig.eigenvectors.transpose();
        Self::from_dmatrix(&out)
    }

    /// Principal square root of a PSD matrix; small negative eigenvalues are clamped to zero.
    pub fn sqrt_psd(&self) -> Result<Self> {
        self.spectral_map(|l| l.max(0.0).sqrt())
    }

    /// `A^{-1/2}` for PD `A`.
    pub fn inv_sqrt(&self) -> Result<Self> {
        if self.eigenvalues()?[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        self.spectral_map(|l| 1.0 / l.sqrt())
    }

    /// Inverse of a PD matrix via Cholesky.
    pub fn inverse(&self) -> Result<Self> {
        self.check_finite()?;
        let chol = nalgebra::Cholesky::new(self.to_dmatrix()).ok_or(Error::NotPositiveDefinite)?;
        let inv = Self::from_dmatrix(&chol.inverse())?;
        Ok(inv)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// `x^T A x` for a flat symmetric `A` of matching size.
#[inline]
pub fn quad_form_slice(a: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    debug_assert_eq!(a.len(), d * d);
    let mut acc = 0.0;
    for i in 0..d {
        let row = &a[i * d..(i + 1) * d];
        let mut s = 0.0;
        for j in 0..d {
            s += row[j] * x[j];
        }
        acc += x[i] * s;
    }
    acc
}

#[inline]
pub fn mul_vec_into(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let row = &a[i * d..(i + 1) * d];
        out[i] = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdCertificate {
    pub min_eigenvalue: f64,
    /// Largest absolute eigenvalue.
    pub scale: f64,
    pub is_psd: bool,
}

fn effective_tol(tol: f64, scale: f64) -> f64 {
    (tol * scale).max(PSD_ABS_FLOOR)
}

/// Certificate for `A ≽ 0` at relative tolerance `tol`.
pub fn psd_certificate(a: &SymMatrix, tol: f64) -> Result<PsdCertificate> {
    if !(tol >= 0.0) {
        return Err(invalid("tolerance must be non-negative"));
    }
    let ev = a.eigenvalues()?;
    let min = ev[0];
    let scale = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(PsdCertificate {
        min_eigenvalue: min,
        scale,
        is_psd: min >= -effective_tol(tol, scale),
    })
}

/// `A ≼ B`: the smallest eigenvalue of `B - A` is at least `-tol` times its spectral scale.
pub fn psd_order_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    a.check_finite()?;
    b.check_finite()?;
    Ok(psd_certificate(&b.sub(a)?, tol)?.is_psd)
}

/// `(A + x x^T)^{-1}` from `A^{-1}` by the rank-one inverse identity.
pub fn rank_one_update_inverse(inv: &SymMatrix, x: &[f64]) -> Result<SymMatrix> {
    let mut out = inv.clone();
    rank_one_update_inverse_in_place(&mut out, x)?;
    Ok(out)
}

/// In-place form of [`rank_one_update_inverse`]. Returns `x^T A^{-1} x` (before
/// the update), so callers can advance `ln det` by `ln(1 + q)`.
pub fn rank_one_update_inverse_in_place(inv: &mut SymMatrix, x: &[f64]) -> Result<f64> {
    inv.check_vec(x)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("update vector"));
    }
    let d = inv.dim;
    let mut ax = vec![0.0; d];
    mul_vec_into(&inv.data, x, &mut ax);
    let q = dot(x, &ax);
    let denom = 1.0 + q;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Numerical(format!(
            "rank-one update denominator {denom} is not positive"
        )));
    }
    for i in 0..d {
        let ci = ax[i] / denom;
        for j in 0..d {
            inv.data[i * d + j] -= ci * ax[j];
        }
    }
    inv.symmetrize();
    Ok(q)
}

/// Cheap PSD test for the hot loop: Cholesky of `A + shift·I` on a flat
/// symmetric matrix, without allocation for `d <= 16`.
pub fn psd_by_cholesky(a: &[f64], d: usize, shift: f64) -> bool {
    let mut buf = [0.0f64; 256];
    let mut heap;
    let l: &mut [f64] = if d * d <= buf.len() {
        &mut buf[..d * d]
    } else {
        heap = vec![0.0; d * d];
        &mut heap
    };
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return false;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    true
}

/// `ln det A` via Cholesky.
pub fn log_det(a: &SymMatrix) -> Result<f64> {
    a.check_finite()?;
    let chol = nalgebra::Cholesky::new(a.to_dmatrix()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    Ok((0..a.dim).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

/// `Tr exp(A)` via the eigendecomposition.
pub fn trace_exp(a: &SymMatrix) -> Result<f64> {
    let v: f64 = a.eigenvalues()?.iter().map(|l| l.exp()).sum();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical("trace-exp overflow".into()))
    }
}

/// The four equivalent forms of `A ≼ B` for PD `A`, `B`:
/// `A ≼ B`, `B^{-1} ≼ A^{-1}`, `A^{1/2} B^{-1} A^{1/2} ≼ I`, `B^{-1/2} A B^{-1/2} ≼ I`.
pub fn order_forms(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<[bool; 4]> {
    let d = a.dim;
    let eye = SymMatrix::identity(d);
    let a_inv = a.inverse()?;
    let b_inv = b.inverse()?;
    let a_half = a.sqrt_psd()?.to_dmatrix();
    let b_inv_half = b.inv_sqrt()?.to_dmatrix();
    let f3 = b_inv.congruence(&a_half)?;
    let f4 = a.congruence(&b_inv_half)?;
    Ok([
        psd_order_leq(a, b, tol)?,
        psd_order_leq(&b_inv, &a_inv, tol)?,
        psd_order_leq(&f3, &eye, tol)?,
        psd_order_leq(&f4, &eye, tol)?,
    ])
}

/// `Tr exp(A) + d - Tr exp(U^T A U)`; non-negative whenever `U^T U ≼ I`.
pub fn trace_exp_contraction_gap(a: &SymMatrix, u: &DMatrix<f64>) -> Result<f64> {
    let d = a.dim as f64;
    let lhs = trace_exp(&a.congruence(u)?)?;
    Ok(trace_exp(a)? + d - lhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal))
    }

    fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
        let g = random_matrix(rng, d);
        let m = &g * g.transpose() + DMatrix::identity(d, d) * 0.5;
        SymMatrix::from_dmatrix(&m).unwrap()
    }

    fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        random_matrix(rng, d).qr().q()
    }

    #[test]
    fn order_examples() {
        let i2 = SymMatrix::identity(2);
        let two = SymMatrix::scaled_identity(2, 2.0);
        assert!(psd_order_leq(&i2, &two, PSD_TOL).unwrap());
        assert!(!psd_order_leq(&two, &i2, PSD_TOL).unwrap());
        let a = SymMatrix::diagonal(&[1.0, 3.0]);
        let b = SymMatrix::diagonal(&[2.0, 2.0]);
        assert!(!psd_order_leq(&a, &b, PSD_TOL).unwrap());
    }

    #[test]
    fn order_rejects_bad_input() {
        let a = SymMatrix::identity(2);
        let b = SymMatrix::identity(3);
        assert!(matches!(
            psd_order_leq(&a, &b, PSD_TOL),
            Err(Error::DimensionMismatch { .. })
        ));
        let nan = SymMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut bad = nan.clone();
        bad.data[0] = f64::NAN;
        assert!(matches!(psd_order_leq(&bad, &nan, PSD_TOL), Err(Error::NonFinite(_))));
    }

    #[test]
    fn construction_symmetrises() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![4.0, 1.0]]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rank_one_examples() {
        let out = rank_one_update_inverse(&SymMatrix::identity(2), &[1.0, 0.0]).unwrap();
        assert_eq!(out, SymMatrix::diagonal(&[0.5, 1.0]));
        let out = rank_one_update_inverse(&SymMatrix::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(out, SymMatrix::identity(2));
    }

    #[test]
    fn rank_one_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_pd(&mut rng, 4);
            let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let fast = rank_one_update_inverse(&a.inverse().unwrap(), &x).unwrap();
            let mut direct = a.clone();
            direct.add_outer(&x, 1.0);
            let direct = direct.inverse().unwrap();
            let err = fast.sub(&direct).unwrap().max_abs() / direct.max_abs();
            assert!(err < 1e-10, "relative error {err}");
        }
    }

    #[test]
    fn rank_one_rejects_corrupted_state() {
        let neg = SymMatrix::scaled_identity(2, -1.0);
        assert!(rank_one_update_inverse(&neg, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn composed_rank_one_updates_stay_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(d, n) in &[(4usize, 1000usize), (16, 1000)] {
            let lambda = 0.1;
            let mut inv = SymMatrix::scaled_identity(d, 1.0 / lambda);
            let mut direct = SymMatrix::scaled_identity(d, lambda);
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                rank_one_update_inverse_in_place(&mut inv, &x).unwrap();
                direct.add_outer(&x, 1.0);
            }
            let direct = direct.inverse().unwrap();
            let err = inv.sub(&direct).unwrap().max_abs() / direct.max_abs();
            assert!(err < 1e-8, "d={d}: relative error {err}");
        }
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(log_det(&SymMatrix::identity(3)).unwrap(), 0.0);
        assert_relative_eq!(
            log_det(&SymMatrix::diagonal(&[2.0, 2.0])).unwrap(),
            2.0 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert!(matches!(
            log_det(&SymMatrix::diagonal(&[1.0, -1.0])),
            Err(Error::NotPositiveDefinite)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_pd(&mut rng, 5);
        let oracle: f64 = a.eigenvalues().unwrap().iter().map(|l| l.ln()).sum();
        assert!((log_det(&a).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn trace_exp_examples() {
        assert_relative_eq!(trace_exp(&SymMatrix::zeros(3)).unwrap(), 3.0, epsilon = 1e-14);
        let e = std::f64::consts::E;
        assert_relative_eq!(
            trace_exp(&SymMatrix::diagonal(&[1.0, -1.0])).unwrap(),
            e + 1.0 / e,
            epsilon = 1e-14
        );
    }

    #[test]
    fn trace_exp_contraction_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..1000 {
            let g = random_matrix(&mut rng, 4);
            let a = SymMatrix::from_dmatrix(&(&g + g.transpose())).unwrap();
            let q = random_orthogonal(&mut rng, 4);
            let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(4, |_, _| rng.gen_range(0.0..1.0)));
            let u = q * s;
            assert!(trace_exp_contraction_gap(&a, &u).unwrap() >= -1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn order_forms_agree(seed in any::<u64>(), d in 1usize..6, gap in 0.05f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(&mut rng, d);
            let b = a.add(&random_pd(&mut rng, d).scale(gap)).unwrap();
            prop_assert_eq!(order_forms(&a, &b, PSD_TOL).unwrap(), [true; 4]);
            // Reversed order with a strict gap fails in every form.
            prop_assert_eq!(order_forms(&b, &a, PSD_TOL).unwrap(), [false; 4]);
        }

        #[test]
        fn inverse_reverses_order(seed in any::<u64>(), d in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(&mut rng, d);
            let b = a.add(&random_pd(&mut rng, d)).unwrap();
            let b_inv_half = b.inv_sqrt().unwrap().to_dmatrix();
            let eye = SymMatrix::identity(d);
            let c = eye.sub(&a.congruence(&b_inv_half).unwrap()).unwrap();
            prop_assert!(psd_certificate(&c, PSD_TOL).unwrap().is_psd);
            prop_assert!(psd_order_leq(&b.inverse().unwrap(), &a.inverse().unwrap(), PSD_TOL).unwrap());
        }

        #[test]
        fn certificate_matches_threshold(seed in any::<u64>(), d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_matrix(&mut rng, d);
            let a = SymMatrix::from_dmatrix(&(&g + g.transpose())).unwrap();
            let c = psd_certificate(&a, PSD_TOL).unwrap();
            prop_assert_eq!(c.is_psd, c.min_eigenvalue >= -(PSD_TOL * c.scale).max(PSD_ABS_FLOOR));
        }

        #[test]
        fn matrix_entries_stay_symmetric(seed in any::<u64>(), d in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = random_pd(&mut rng, d);
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            m.add_outer(&x, 0.7);
            let inv = rank_one_update_inverse(&m.inverse().unwrap(), &x).unwrap();
            for i in 0..d {
                for j in 0..d {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert_eq!(inv.get(i, j), inv.get(j, i));
                }
            }
        }
    }
}
