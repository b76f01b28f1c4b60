//! Finite-dimensional vector arithmetic under a strongly monotone
//! self-adjoint metric `S`, including application of `S⁻¹`.
//!
//! Every Lipschitz and cocoercivity constant in this crate is measured in
//! the geometry induced by such a metric: `⟨u, v⟩_S = ⟨Su, v⟩`,
//! `‖v‖_S = sqrt(⟨Sv, v⟩)` and `‖v‖_{S⁻¹} = sqrt(⟨S⁻¹v, v⟩)`.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

/// Dense column vector of `f64`, the working representation for all iterates.
pub type Vector = DVector<f64>;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: metric acts on R^{expected}, got a vector of length {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("metric quadratic form is negative ({value:.3e}); the supplied map is not SPD")]
    NegativeQuadraticForm { value: f64 },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
}

type LinearMap = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// A strongly monotone self-adjoint linear map `S` together with `S⁻¹`.
///
/// Supplied as a pair of callables plus the strong-monotonicity constant
/// `c` with `⟨Sv, v⟩ ≥ c‖v‖²`, so identity and diagonal metrics stay O(n).
/// Dense matrices go through [`Metric::from_dense`], which factorizes once
/// and backs `apply_inv` by triangular solves.
#[derive(Clone)]
pub struct Metric {
    apply: LinearMap,
    apply_inv: LinearMap,
    strong_monotonicity_c: f64,
    dim: usize,
    identity: bool,
}

impl std::fmt::Debug for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Metric")
            .field("dim", &self.dim)
            .field("c", &self.strong_monotonicity_c)
            .field("identity", &self.identity)
            .finish()
    }
}

impl Metric {
    /// The Euclidean metric `S = Id` with `c = 1`.
    pub fn identity(dim: usize) -> Self {
        Metric {
            apply: Arc::new(|v: &Vector| v.clone()),
            apply_inv: Arc::new(|v: &Vector| v.clone()),
            strong_monotonicity_c: 1.0,
            dim,
            identity: true,
        }
    }

    /// Diagonal metric `S = diag(d)` with all `d_i > 0`; `c = min d_i`.
    pub fn diagonal(diag: Vector) -> Result<Self, MetricError> {
        let c = diag.min();
        if !(c > 0.0) {
            return Err(MetricError::NotSpd(format!(
                "diagonal entries must be positive, min is {c}"
            )));
        }
        let dim = diag.len();
        let d = Arc::new(diag);
        let d2 = Arc::clone(&d);
        Ok(Metric {
            apply: Arc::new(move |v: &Vector| v.component_mul(&d)),
            apply_inv: Arc::new(move |v: &Vector| v.component_div(&d2)),
            strong_monotonicity_c: c,
            dim,
            identity: false,
        })
    }

    /// Dense SPD metric. Checks symmetry, factorizes once (Cholesky) and
    /// derives `c` from the smallest eigenvalue.
    pub fn from_dense(s: DMatrix<f64>) -> Result<Self, MetricError> {
        let n = s.nrows();
        if s.ncols() != n {
            return Err(MetricError::NotSpd("matrix is not square".into()));
        }
        let asym = (&s - s.transpose()).abs().max();
        let scale = s.abs().max().max(1.0);
        if asym > 1e-10 * scale {
            return Err(MetricError::NotSpd(format!(
                "asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| MetricError::NotSpd("Cholesky factorization failed".into()))?;
        let eig = s.clone().symmetric_eigen();
        let c = eig.eigenvalues.min();
        if !(c > 0.0) {
            return Err(MetricError::NotSpd(format!(
                "smallest eigenvalue {c:.3e} is not positive"
            )));
        }
        let s = Arc::new(s);
        Ok(Metric {
            apply: Arc::new(move |v: &Vector| &*s * v),
            apply_inv: Arc::new(move |v: &Vector| chol.solve(v)),
            strong_monotonicity_c: c,
            dim: n,
            identity: false,
        })
    }

    /// Metric from user-supplied callables. The caller asserts that the maps
    /// are mutually inverse, self-adjoint and `c`-strongly monotone; the
    /// library validates those contracts only by sampling in tests.
    pub fn from_maps(
        apply: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        apply_inv: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        strong_monotonicity_c: f64,
        dim: usize,
    ) -> Result<Self, MetricError> {
        if !(strong_monotonicity_c > 0.0) {
            return Err(MetricError::NotSpd(format!(
                "strong monotonicity constant must be positive, got {strong_monotonicity_c}"
            )));
        }
        Ok(Metric {
            apply: Arc::new(apply),
            apply_inv: Arc::new(apply_inv),
            strong_monotonicity_c,
            dim,
            identity: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn strong_monotonicity_c(&self) -> f64 {
        self.strong_monotonicity_c
    }

    /// True for the metric built by [`Metric::identity`]. Kernels use this
    /// to select closed-form backward steps.
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `S v`
    pub fn apply(&self, v: &Vector) -> Vector {
        (self.apply)(v)
    }

    /// `S⁻¹ v`
    pub fn apply_inv(&self, v: &Vector) -> Vector {
        (self.apply_inv)(v)
    }

    fn check_dim(&self, v: &Vector) -> Result<(), MetricError> {
        if v.len() != self.dim {
            return Err(MetricError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `⟨Su, v⟩`, symmetric in its arguments for a self-adjoint `S`.
    pub fn s_inner(&self, u: &Vector, v: &Vector) -> Result<f64, MetricError> {
        self.check_dim(u)?;
        self.check_dim(v)?;
        if self.identity {
            return Ok(u.dot(v));
        }
        Ok(self.apply(u).dot(v))
    }

    /// `‖v‖_S = sqrt(⟨Sv, v⟩)`; zero iff `v = 0`.
    pub fn s_norm(&self, v: &Vector) -> Result<f64, MetricError> {
        let q = self.s_inner(v, v)?;
        sqrt_quadratic_form(q, v)
    }

    /// `‖v‖_{S⁻¹} = sqrt(⟨S⁻¹v, v⟩)`.
    pub fn s_inv_norm(&self, v: &Vector) -> Result<f64, MetricError> {
        self.check_dim(v)?;
        if self.identity {
            return Ok(v.norm());
        }
        let q = self.apply_inv(v).dot(v);
        sqrt_quadratic_form(q, v)
    }
}

fn sqrt_quadratic_form(q: f64, v: &Vector) -> Result<f64, MetricError> {
    // Tiny negative values are rounding noise from an SPD form; anything
    // materially negative means the caller supplied a non-SPD map.
    let scale = v.norm_squared().max(1.0);
    if q < -1e-12 * scale {
        return Err(MetricError::NegativeQuadraticForm { value: q });
    }
    Ok(q.max(0.0).sqrt())
}

/// Screen a vector for NaN/Inf at a module boundary.
pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut StdRng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn identity_inner_is_euclidean() {
        let m = Metric::identity(2);
        let v = Vector::from_vec(vec![3.0, 4.0]);
        assert_eq!(m.s_inner(&v, &v).unwrap(), 25.0);
        assert_eq!(m.s_norm(&v).unwrap(), 5.0);
        assert_eq!(m.s_inv_norm(&v).unwrap(), 5.0);
    }

    #[test]
    fn zero_vector_inner_is_zero() {
        let m = Metric::diagonal(Vector::from_vec(vec![4.0, 1.0])).unwrap();
        let z = Vector::zeros(2);
        let v = Vector::from_vec(vec![1.0, -1.0]);
        assert_eq!(m.s_inner(&z, &v).unwrap(), 0.0);
        assert_eq!(m.s_norm(&z).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_quadratic_form_by_hand() {
        let m = Metric::diagonal(Vector::from_vec(vec![4.0, 1.0])).unwrap();
        let ones = Vector::from_vec(vec![1.0, 1.0]);
        assert!((m.s_inner(&ones, &ones).unwrap() - 5.0).abs() < 1e-14);
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        assert!((m.s_norm(&e1).unwrap() - 2.0).abs() < 1e-14);
        assert!((m.s_inv_norm(&e1).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = Metric::identity(3);
        let v = Vector::zeros(2);
        assert!(matches!(
            m.s_inner(&v, &v),
            Err(MetricError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn non_spd_quadratic_form_is_an_error() {
        let m = Metric::from_maps(|v| -v.clone(), |v| -v.clone(), 1.0, 2).unwrap();
        let v = Vector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            m.s_norm(&v),
            Err(MetricError::NegativeQuadraticForm { .. })
        ));
    }

    #[test]
    fn dense_metric_contract_sampled() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 6;
        // random SPD matrix: A Aᵀ + I
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let s_mat = &a * a.transpose() + DMatrix::identity(n, n);
        let m = Metric::from_dense(s_mat).unwrap();
        for _ in 0..200 {
            let u = rand_vec(&mut rng, n);
            let v = rand_vec(&mut rng, n);
            // self-adjointness
            let lhs = m.apply(&u).dot(&v);
            let rhs = u.dot(&m.apply(&v));
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!((lhs - rhs).abs() <= 1e-10 * scale);
            // strong monotonicity on unit vectors
            let un = &u / u.norm();
            assert!(m.apply(&un).dot(&un) >= m.strong_monotonicity_c() - 1e-10);
            // two-sided inverse
            let back = m.apply_inv(&m.apply(&u));
            assert!((&back - &u).norm() <= 1e-10 * u.norm().max(1.0));
            let fwd = m.apply(&m.apply_inv(&u));
            assert!((&fwd - &u).norm() <= 1e-10 * u.norm().max(1.0));
        }
    }

    #[test]
    fn cauchy_schwarz_mixed_norms() {
        let mut rng = StdRng::seed_from_u64(11);
        let diag = Vector::from_fn(8, |_, _| rng.gen_range(0.2..5.0));
        let m = Metric::diagonal(diag).unwrap();
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 8);
            let u = rand_vec(&mut rng, 8);
            let lhs = x.dot(&u).abs();
            let rhs = m.s_inv_norm(&x).unwrap() * m.s_norm(&u).unwrap();
            assert!(lhs <= rhs + 1e-10 * rhs.max(1.0));
        }
    }

    #[test]
    fn s_inv_norm_of_sv_equals_s_norm() {
        let mut rng = StdRng::seed_from_u64(13);
        let diag = Vector::from_fn(5, |_, _| rng.gen_range(0.5..3.0));
        let m = Metric::diagonal(diag).unwrap();
        for _ in 0..100 {
            let v = rand_vec(&mut rng, 5);
            let sv = m.apply(&v);
            let a = m.s_inv_norm(&sv).unwrap();
            let b = m.s_norm(&v).unwrap();
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn polarization_identity_under_s(
            xs in proptest::collection::vec(-10.0f64..10.0, 4),
            ys in proptest::collection::vec(-10.0f64..10.0, 4),
            zs in proptest::collection::vec(-10.0f64..10.0, 4),
            ds in proptest::collection::vec(0.1f64..4.0, 4),
        ) {
            let m = Metric::diagonal(Vector::from_vec(ds)).unwrap();
            let x = Vector::from_vec(xs);
            let y = Vector::from_vec(ys);
            let z = Vector::from_vec(zs);
            let lhs = 2.0 * m.s_inner(&(&x - &y), &(&y - &z)).unwrap();
            let rhs = m.s_norm(&(&x - &z)).unwrap().powi(2)
                - m.s_norm(&(&x - &y)).unwrap().powi(2)
                - m.s_norm(&(&y - &z)).unwrap().powi(2);
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * scale);
        }
    }
}
