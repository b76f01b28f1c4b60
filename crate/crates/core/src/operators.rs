//! Operator abstractions: resolvent-defined maximally monotone `A`,
//! single-valued `B` and `C` with their constants, warped-resolvent
//! kernels `M`, and the concrete projections and saddle-point building
//! blocks used by the bundled problems.

use crate::metric::{Metric, Vector};
use nalgebra::DMatrix;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("invalid bounds: lo ({lo}) exceeds hi ({hi})")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty vector is not admitted")]
    EmptyVector,
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("kernel contract violated: {0}")]
    KernelContract(String),
}

type ResolventFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
type OpFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Componentwise clamp of `z` to `[lo, hi]^n`, the Euclidean projection onto
/// the box. Idempotent.
pub fn project_box(z: &Vector, lo: f64, hi: f64) -> Result<Vector, OperatorError> {
    if lo > hi {
        return Err(OperatorError::InvalidBounds { lo, hi });
    }
    Ok(z.map(|v| v.clamp(lo, hi)))
}

/// Componentwise `max(z, 0)`, the projection onto the nonnegative orthant.
pub fn project_nonneg(z: &Vector) -> Vector {
    z.map(|v| v.max(0.0))
}

/// Euclidean projection onto the capped simplex
/// `{x : Σ x_i = 1, 0 ≤ x_i ≤ 1}`.
///
/// The projection is `clamp(z − τ, 0, 1)` for the shift `τ` at which the
/// coordinate sum equals one; that sum is nonincreasing in `τ`, so `τ` is
/// located by bisection (100 steps, which resolves the bracket to f64
/// precision).
pub fn project_capped_simplex(z: &Vector) -> Result<Vector, OperatorError> {
    let n = z.len();
    if n == 0 {
        return Err(OperatorError::EmptyVector);
    }
    let sum_at = |tau: f64| -> f64 { z.iter().map(|&v| (v - tau).clamp(0.0, 1.0)).sum() };
    let mut lo = z.min() - 1.0; // sum = n >= 1
    let mut hi = z.max(); // sum = 0 <= 1
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    Ok(z.map(|v| (v - tau).clamp(0.0, 1.0)))
}

// ---------------------------------------------------------------------------
// Saddle-point building blocks
// ---------------------------------------------------------------------------

/// The primal-dual saddle map `(x, u) ↦ (Dᵀu, −Dx − b)`. Its linear part is
/// skew, so the operator is monotone with Lipschitz constant `‖D‖`.
pub fn skew_saddle(
    d: &DMatrix<f64>,
    b: &Vector,
    x: &Vector,
    u: &Vector,
) -> Result<(Vector, Vector), OperatorError> {
    let (q, n) = (d.nrows(), d.ncols());
    if x.len() != n {
        return Err(OperatorError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if u.len() != q || b.len() != q {
        return Err(OperatorError::DimensionMismatch {
            expected: q,
            got: if u.len() != q { u.len() } else { b.len() },
        });
    }
    let primal = d.transpose() * u;
    let dual = -(d * x) - b;
    Ok((primal, dual))
}

/// Gradient of `½‖Gx − b‖²`, i.e. `Gᵀ(Gx − b)`; cocoercive with `β = ‖G‖²`.
pub fn quad_grad(g: &DMatrix<f64>, b: &Vector, x: &Vector) -> Result<Vector, OperatorError> {
    let (m, n) = (g.nrows(), g.ncols());
    if x.len() != n {
        return Err(OperatorError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if b.len() != m {
        return Err(OperatorError::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }
    let r = g * x - b;
    Ok(g.transpose() * r)
}

// ---------------------------------------------------------------------------
// Operator norm by power iteration
// ---------------------------------------------------------------------------

/// Result of a power-iteration norm estimate. `converged == false` means the
/// Rayleigh quotient had not stabilized within `max_iter` sweeps and `value`
/// is an estimate to be treated with a warning.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Spectral norm `‖L‖₂` of a linear map given as `apply` / `apply_adjoint`
/// callables, via power iteration on the Gram map `LᵀL`.
pub fn operator_norm(
    apply: impl Fn(&Vector) -> Vector,
    apply_adjoint: impl Fn(&Vector) -> Vector,
    dim: usize,
    tol: f64,
    max_iter: usize,
) -> NormEstimate {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
    let mut v = Vector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0f64));
    let nv = v.norm();
    if nv == 0.0 || dim == 0 {
        return NormEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    v /= nv;
    let mut lambda_prev = 0.0f64;
    for it in 1..=max_iter {
        let w = apply_adjoint(&apply(&v));
        let lambda = v.dot(&w).max(0.0);
        let wn = w.norm();
        if wn == 0.0 {
            // v is in the kernel of the Gram map; the map may still be
            // nonzero, but a zero Rayleigh sequence means norm 0 along this
            // deterministic start.
            return NormEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            };
        }
        v = w / wn;
        if (lambda - lambda_prev).abs() <= tol * lambda.max(f64::MIN_POSITIVE) {
            return NormEstimate {
                value: lambda.sqrt(),
                converged: true,
                iterations: it,
            };
        }
        lambda_prev = lambda;
    }
    NormEstimate {
        value: lambda_prev.sqrt(),
        converged: false,
        iterations: max_iter,
    }
}

/// Spectral norm of a dense matrix, `tol = 1e-8`, cap 10⁴ sweeps.
pub fn matrix_norm(m: &DMatrix<f64>) -> NormEstimate {
    let mt = m.transpose();
    operator_norm(|v| m * v, |v| &mt * v, m.ncols(), 1e-8, 10_000)
}

// ---------------------------------------------------------------------------
// Resolvent of a maximally monotone operator
// ---------------------------------------------------------------------------

/// A maximally monotone operator `A` exposed only through its resolvent
/// `J_{γA}(z) = (Id + γA)⁻¹(z)`. Evaluations through [`Resolvent::eval`]
/// are counted so the per-iteration backward budget can be asserted.
pub struct Resolvent {
    map: ResolventFn,
    fresh: AtomicU64,
}

impl Resolvent {
    pub fn from_fn(map: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Resolvent {
            map: Arc::new(map),
            fresh: AtomicU64::new(0),
        }
    }

    /// Resolvent of the normal cone of `[lo, hi]^n`: the box projection,
    /// independent of `γ`.
    pub fn box_projection(lo: f64, hi: f64) -> Result<Self, OperatorError> {
        if lo > hi {
            return Err(OperatorError::InvalidBounds { lo, hi });
        }
        Ok(Self::from_fn(move |_gamma, z| {
            z.map(|v| v.clamp(lo, hi))
        }))
    }

    /// Resolvent of the normal cone of the nonnegative orthant.
    pub fn nonneg_projection() -> Self {
        Self::from_fn(|_gamma, z| project_nonneg(z))
    }

    /// Resolvent of the normal cone of the capped simplex.
    pub fn capped_simplex() -> Self {
        Self::from_fn(|_gamma, z| {
            project_capped_simplex(z).expect("capped simplex projection on empty vector")
        })
    }

    /// Product resolvent on a concatenated vector split at `split`:
    /// the first factor acts on `z[..split]`, the second on `z[split..]`.
    pub fn split_at(
        split: usize,
        first: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        second: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self::from_fn(move |gamma, z| {
            let zx = Vector::from(z.rows(0, split));
            let zu = Vector::from(z.rows(split, z.len() - split));
            let px = first(gamma, &zx);
            let pu = second(gamma, &zu);
            let mut out = Vector::zeros(z.len());
            out.rows_mut(0, split).copy_from(&px);
            out.rows_mut(split, z.len() - split).copy_from(&pu);
            out
        })
    }

    /// Resolvent of `A + ρ·Id` expressed through the resolvent of `A`:
    /// `J_{γ(A+ρId)}(z) = J_{γ′A}(z/(1+γρ))` with `γ′ = γ/(1+γρ)`.
    pub fn strongly_monotone_shift(base: Arc<Resolvent>, rho: f64) -> Self {
        Self::from_fn(move |gamma, z| {
            let denom = 1.0 + gamma * rho;
            base.eval_uncounted(gamma / denom, &(z / denom))
        })
    }

    /// `J_{γA}(z)`, counted as one fresh backward evaluation.
    pub fn eval(&self, gamma: f64, z: &Vector) -> Vector {
        self.fresh.fetch_add(1, Ordering::Relaxed);
        (self.map)(gamma, z)
    }

    /// Evaluation that bypasses the budget counter (oracles, observers,
    /// zero verification).
    pub fn eval_uncounted(&self, gamma: f64, z: &Vector) -> Vector {
        (self.map)(gamma, z)
    }

    pub fn fresh_calls(&self) -> u64 {
        self.fresh.load(Ordering::Relaxed)
    }
}

impl std::fmt::Debug for Resolvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolvent")
            .field("fresh_calls", &self.fresh_calls())
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Single-valued operators
// ---------------------------------------------------------------------------

/// A single-valued operator with its declared constants, all measured
/// w.r.t. the problem metric: Lipschitz constant `μ`, optional cocoercivity
/// constant `β` (the operator is `β⁻¹`-cocoercive), optional strong
/// monotonicity `ρ`.
///
/// Solver step functions evaluate through [`SingleValuedOp::eval`], which is
/// counted; certificate observers use [`SingleValuedOp::eval_observer`] with
/// a separate counter so measurement does not distort the budget.
pub struct SingleValuedOp {
    map: OpFn,
    pub lipschitz_mu: f64,
    pub cocoercivity_beta: Option<f64>,
    pub strong_rho: Option<f64>,
    fresh: AtomicU64,
    observer: AtomicU64,
}

impl SingleValuedOp {
    pub fn from_fn(
        map: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        lipschitz_mu: f64,
    ) -> Self {
        SingleValuedOp {
            map: Arc::new(map),
            lipschitz_mu,
            cocoercivity_beta: None,
            strong_rho: None,
            fresh: AtomicU64::new(0),
            observer: AtomicU64::new(0),
        }
    }

    pub fn with_cocoercivity(mut self, beta: f64) -> Self {
        self.cocoercivity_beta = Some(beta);
        self
    }

    pub fn with_strong_monotonicity(mut self, rho: f64) -> Self {
        self.strong_rho = Some(rho);
        self
    }

    /// The zero operator; Lipschitz with `μ = 0` and cocoercive for every
    /// `β`, recorded here as `β = 0` (the degenerate limit in which all
    /// `γβ` loss terms vanish).
    pub fn zero(dim: usize) -> Self {
        SingleValuedOp::from_fn(move |_| Vector::zeros(dim), 0.0).with_cocoercivity(0.0)
    }

    /// Saddle operator `(x, u) ↦ (Dᵀu, −Dx − b)` on the concatenated vector
    /// split after `n = ncols(D)` primal coordinates. `μ = ‖D‖` is estimated
    /// once by power iteration; the transpose is cached so evaluations stay
    /// allocation-light.
    pub fn saddle(d: Arc<DMatrix<f64>>, b: Vector) -> Self {
        let mu = matrix_norm(&d).value;
        let n = d.ncols();
        let q = d.nrows();
        let dt = d.transpose();
        SingleValuedOp::from_fn(
            move |z| {
                let x = z.rows(0, n);
                let u = z.rows(n, q);
                let mut out = Vector::zeros(n + q);
                out.rows_mut(0, n).gemv(1.0, &dt, &u, 0.0);
                out.rows_mut(n, q).gemv(-1.0, &d, &x, 0.0);
                out.rows_mut(n, q).axpy(-1.0, &b, 1.0);
                out
            },
            mu,
        )
    }

    /// Gradient operator `(x, u) ↦ (Gᵀ(Gx − b), 0)` on a concatenated vector
    /// with `n = ncols(G)` primal coordinates and `q` dual ones;
    /// `β = ‖G‖²` estimated once and the transpose cached.
    pub fn quad_gradient(g: Arc<DMatrix<f64>>, b: Vector, q: usize) -> Self {
        let beta = matrix_norm(&g).value.powi(2);
        let n = g.ncols();
        let m = g.nrows();
        let gt = g.transpose();
        SingleValuedOp::from_fn(
            move |z| {
                let x = z.rows(0, n);
                let mut r = Vector::zeros(m);
                r.gemv(1.0, &g, &x, 0.0);
                r -= &b;
                let mut out = Vector::zeros(n + q);
                out.rows_mut(0, n).gemv(1.0, &gt, &r, 0.0);
                out
            },
            beta.sqrt(), // a β-Lipschitz gradient; rarely used as μ
        )
        .with_cocoercivity(beta)
    }

    /// Covariance-gradient operator `(x, u) ↦ (Hx, 0)` with `β = ‖H‖`.
    pub fn psd_gradient(h: Arc<DMatrix<f64>>, q: usize) -> Self {
        let beta = matrix_norm(&h).value;
        let n = h.ncols();
        SingleValuedOp::from_fn(
            move |z| {
                let x = Vector::from(z.rows(0, n));
                let mut out = Vector::zeros(n + q);
                out.rows_mut(0, n).copy_from(&(&*h * x));
                out
            },
            beta,
        )
        .with_cocoercivity(beta)
    }

    /// General linear operator `x ↦ Kx`; `μ = ‖K‖` estimated once.
    pub fn linear(k: Arc<DMatrix<f64>>) -> Self {
        let mu = matrix_norm(&k).value;
        SingleValuedOp::from_fn(move |x| &*k * x, mu)
    }

    /// `factor·T` with constants rescaled accordingly (`μ ↦ factor·μ`,
    /// `β ↦ factor·β`).
    pub fn scaled(&self, factor: f64) -> Self {
        let map = Arc::clone(&self.map);
        SingleValuedOp {
            map: Arc::new(move |v| map(v) * factor),
            lipschitz_mu: self.lipschitz_mu * factor,
            cocoercivity_beta: self.cocoercivity_beta.map(|b| b * factor),
            strong_rho: self.strong_rho.map(|r| r * factor),
            fresh: AtomicU64::new(0),
            observer: AtomicU64::new(0),
        }
    }

    /// Counted fresh evaluation (solver step budget).
    pub fn eval(&self, x: &Vector) -> Vector {
        self.fresh.fetch_add(1, Ordering::Relaxed);
        (self.map)(x)
    }

    /// Evaluation on the observer counter; used by certificate monitors so
    /// the step budget stays intact.
    pub fn eval_observer(&self, x: &Vector) -> Vector {
        self.observer.fetch_add(1, Ordering::Relaxed);
        (self.map)(x)
    }

    pub fn fresh_calls(&self) -> u64 {
        self.fresh.load(Ordering::Relaxed)
    }

    pub fn observer_calls(&self) -> u64 {
        self.observer.load(Ordering::Relaxed)
    }
}

impl std::fmt::Debug for SingleValuedOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SingleValuedOp")
            .field("mu", &self.lipschitz_mu)
            .field("beta", &self.cocoercivity_beta)
            .field("rho", &self.strong_rho)
            .finish()
    }
}

/// Split a saddle operator into two equal halves `B₁ = B₂ = B/2`, each
/// `(μ/2)`-Lipschitz, with `B₁ + B₂ = B` exact for affine `B`.
pub fn split_half(b: &SingleValuedOp) -> (SingleValuedOp, SingleValuedOp) {
    (b.scaled(0.5), b.scaled(0.5))
}

// ---------------------------------------------------------------------------
// The problem triple
// ---------------------------------------------------------------------------

/// The monotone inclusion `0 ∈ Ax + Bx + Cx`: `A` via its resolvent,
/// monotone Lipschitz `B`, cocoercive `C`, all under one metric.
#[derive(Clone)]
pub struct OperatorTriple {
    pub a: Arc<Resolvent>,
    pub b: Arc<SingleValuedOp>,
    pub c: Arc<SingleValuedOp>,
    pub metric: Arc<Metric>,
    pub dim: usize,
}

impl OperatorTriple {
    pub fn new(
        a: Arc<Resolvent>,
        b: Arc<SingleValuedOp>,
        c: Arc<SingleValuedOp>,
        metric: Arc<Metric>,
        dim: usize,
    ) -> Self {
        OperatorTriple { a, b, c, metric, dim }
    }

    pub fn mu(&self) -> f64 {
        self.b.lipschitz_mu
    }

    pub fn beta(&self) -> Option<f64> {
        self.c.cocoercivity_beta
    }
}

impl std::fmt::Debug for OperatorTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorTriple")
            .field("dim", &self.dim)
            .field("mu", &self.mu())
            .field("beta", &self.beta())
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Warped-resolvent kernels
// ---------------------------------------------------------------------------

/// A nonlinear kernel schedule `M_k` paired with the step sizes `γ_k` and the
/// Lipschitz constants `L_k` of `γ_k M_k − S` w.r.t. the metric.
///
/// Solvers touch `A` exclusively through [`Kernel::backward`], which resolves
/// `(M_k + A)⁻¹(M_k x + f + γ_k⁻¹ u)` for a forward term `f`; closed-form
/// kernels implement it without forming `M_k x` explicitly, which keeps the
/// classical reductions exact to rounding.
pub trait Kernel: Send + Sync {
    fn gamma(&self, k: usize) -> f64;

    /// Lipschitz constant `L_k` of `γ_k M_k − S`, in `[0, 1)`.
    fn lipschitz_l(&self, k: usize) -> f64;

    /// `M_k x`
    fn eval_m(&self, k: usize, x: &Vector) -> Vector;

    /// `(γ_k M_k − S) x`, the map generating the momentum correction.
    fn gm(&self, k: usize, x: &Vector) -> Vector;

    /// Solve `(M_k + A) x ∋ z`.
    fn warped_resolvent(&self, k: usize, z: &Vector) -> Result<Vector, OperatorError>;

    /// `(M_k + A)⁻¹(M_k x + f + γ_k⁻¹ u)`.
    fn backward(
        &self,
        k: usize,
        x: &Vector,
        forward: &Vector,
        u: &Vector,
    ) -> Result<Vector, OperatorError> {
        let gamma = self.gamma(k);
        let z = self.eval_m(k, x) + forward + u / gamma;
        self.warped_resolvent(k, &z)
    }
}

/// Constant or per-iteration step-size schedule.
#[derive(Clone)]
pub enum GammaSchedule {
    Constant(f64),
    PerIteration(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl GammaSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            GammaSchedule::Constant(g) => *g,
            GammaSchedule::PerIteration(f) => f(k),
        }
    }
}

/// The classical kernel `M_k = S/γ_k`, for which `γ_k M_k − S = 0`, `L_k = 0`
/// and the momentum term vanishes identically. Under the identity metric the
/// backward step is exactly `J_{γA}`.
pub struct ClassicKernel {
    a: Arc<Resolvent>,
    metric: Arc<Metric>,
    gammas: GammaSchedule,
}

impl ClassicKernel {
    pub fn new(a: Arc<Resolvent>, metric: Arc<Metric>, gamma: f64) -> Result<Self, OperatorError> {
        Self::scheduled(a, metric, GammaSchedule::Constant(gamma))
    }

    pub fn scheduled(
        a: Arc<Resolvent>,
        metric: Arc<Metric>,
        gammas: GammaSchedule,
    ) -> Result<Self, OperatorError> {
        if !metric.is_identity() {
            return Err(OperatorError::Unsupported(
                "the classical kernel ships a closed-form backward step only for the \
                 identity metric; supply a CustomKernel with an S-resolvent otherwise"
                    .into(),
            ));
        }
        Ok(ClassicKernel { a, metric, gammas })
    }
}

impl Kernel for ClassicKernel {
    fn gamma(&self, k: usize) -> f64 {
        self.gammas.at(k)
    }

    fn lipschitz_l(&self, _k: usize) -> f64 {
        0.0
    }

    fn eval_m(&self, k: usize, x: &Vector) -> Vector {
        self.metric.apply(x) / self.gamma(k)
    }

    fn gm(&self, _k: usize, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }

    fn warped_resolvent(&self, k: usize, z: &Vector) -> Result<Vector, OperatorError> {
        let gamma = self.gamma(k);
        Ok(self.a.eval(gamma, &(z * gamma)))
    }

    fn backward(
        &self,
        k: usize,
        x: &Vector,
        forward: &Vector,
        u: &Vector,
    ) -> Result<Vector, OperatorError> {
        let gamma = self.gamma(k);
        Ok(self.a.eval(gamma, &(x + forward * gamma + u)))
    }
}

/// The kernel `M = Id/γ − A₂` for `A = A₁ + A₂` with `A₂` Lipschitz, under
/// the identity metric. Then `(M + A)⁻¹(z) = J_{γA₁}(γz)`, `γM − Id = −γA₂`
/// and `L = γ·Lip(A₂)`.
pub struct LipschitzSplitKernel {
    a1: Arc<Resolvent>,
    a2: Arc<SingleValuedOp>,
    gamma: f64,
}

impl LipschitzSplitKernel {
    pub fn new(
        a1: Arc<Resolvent>,
        a2: Arc<SingleValuedOp>,
        metric: &Metric,
        gamma: f64,
    ) -> Result<Self, OperatorError> {
        if !metric.is_identity() {
            return Err(OperatorError::Unsupported(
                "the Lipschitz-split kernel requires the identity metric".into(),
            ));
        }
        let l = gamma * a2.lipschitz_mu;
        if !(l < 1.0) {
            return Err(OperatorError::KernelContract(format!(
                "gamma * Lip(A2) = {l} must lie in [0, 1)"
            )));
        }
        Ok(LipschitzSplitKernel { a1, a2, gamma })
    }
}

impl Kernel for LipschitzSplitKernel {
    fn gamma(&self, _k: usize) -> f64 {
        self.gamma
    }

    fn lipschitz_l(&self, _k: usize) -> f64 {
        self.gamma * self.a2.lipschitz_mu
    }

    fn eval_m(&self, _k: usize, x: &Vector) -> Vector {
        x / self.gamma - self.a2.eval(x)
    }

    fn gm(&self, _k: usize, x: &Vector) -> Vector {
        self.a2.eval(x) * (-self.gamma)
    }

    fn warped_resolvent(&self, _k: usize, z: &Vector) -> Result<Vector, OperatorError> {
        Ok(self.a1.eval(self.gamma, &(z * self.gamma)))
    }

    fn backward(
        &self,
        _k: usize,
        x: &Vector,
        forward: &Vector,
        u: &Vector,
    ) -> Result<Vector, OperatorError> {
        let g = self.gamma;
        let arg = x - self.a2.eval(x) * g + forward * g + u;
        Ok(self.a1.eval(g, &arg))
    }
}

/// Fully user-supplied kernel: `M_k`, an evaluator of `(M_k + A)⁻¹`, and the
/// declared constants `L_k`. The library validates the `L_k` contract only
/// by sampling.
pub struct CustomKernel {
    eval_m: Arc<dyn Fn(usize, &Vector) -> Vector + Send + Sync>,
    warped: Arc<dyn Fn(usize, &Vector) -> Result<Vector, OperatorError> + Send + Sync>,
    lipschitz: Arc<dyn Fn(usize) -> f64 + Send + Sync>,
    gammas: GammaSchedule,
    metric: Arc<Metric>,
}

impl CustomKernel {
    pub fn new(
        eval_m: impl Fn(usize, &Vector) -> Vector + Send + Sync + 'static,
        warped: impl Fn(usize, &Vector) -> Result<Vector, OperatorError> + Send + Sync + 'static,
        lipschitz: impl Fn(usize) -> f64 + Send + Sync + 'static,
        gammas: GammaSchedule,
        metric: Arc<Metric>,
    ) -> Self {
        CustomKernel {
            eval_m: Arc::new(eval_m),
            warped: Arc::new(warped),
            lipschitz: Arc::new(lipschitz),
            gammas,
            metric,
        }
    }
}

impl Kernel for CustomKernel {
    fn gamma(&self, k: usize) -> f64 {
        self.gammas.at(k)
    }

    fn lipschitz_l(&self, k: usize) -> f64 {
        (self.lipschitz)(k)
    }

    fn eval_m(&self, k: usize, x: &Vector) -> Vector {
        (self.eval_m)(k, x)
    }

    fn gm(&self, k: usize, x: &Vector) -> Vector {
        self.eval_m(k, x) * self.gamma(k) - self.metric.apply(x)
    }

    fn warped_resolvent(&self, k: usize, z: &Vector) -> Result<Vector, OperatorError> {
        (self.warped)(k, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut StdRng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0))
    }

    #[test]
    fn box_projection_fixes_interior_and_clamps() {
        let z = Vector::from_vec(vec![0.5, 0.2]);
        assert_eq!(project_box(&z, 0.0, 1.0).unwrap(), z);
        let z = Vector::from_vec(vec![-1.0, 2.0]);
        assert_eq!(
            project_box(&z, 0.0, 1.0).unwrap(),
            Vector::from_vec(vec![0.0, 1.0])
        );
        assert!(matches!(
            project_box(&z, 1.0, 0.0),
            Err(OperatorError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn box_projection_optimality_sampled() {
        let mut rng = StdRng::seed_from_u64(3);
        let z = rand_vec(&mut rng, 5);
        let p = project_box(&z, 0.0, 1.0).unwrap();
        let dp = (&z - &p).norm();
        for _ in 0..10_000 {
            let w = Vector::from_fn(5, |_, _| rng.gen_range(0.0..1.0));
            assert!(dp <= (&z - &w).norm() + 1e-12);
        }
    }

    #[test]
    fn nonneg_projection_examples() {
        let z = Vector::from_vec(vec![1.0, -2.0, 0.0]);
        let p = project_nonneg(&z);
        assert_eq!(p, Vector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(project_nonneg(&p), p);
        let mut rng = StdRng::seed_from_u64(4);
        let z = rand_vec(&mut rng, 6);
        let p = project_nonneg(&z);
        let dp = (&z - &p).norm();
        for _ in 0..10_000 {
            let w = Vector::from_fn(6, |_, _| rng.gen_range(0.0..3.0));
            assert!(dp <= (&z - &w).norm() + 1e-12);
        }
    }

    #[test]
    fn capped_simplex_trivial_cases() {
        // n = 1: the feasible set is the singleton {1}
        let p = project_capped_simplex(&Vector::from_vec(vec![-7.3])).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10);
        // feasible point is fixed
        let n = 5;
        let z = Vector::from_element(n, 1.0 / n as f64);
        let p = project_capped_simplex(&z).unwrap();
        assert!((&p - &z).norm() < 1e-10);
        assert!(matches!(
            project_capped_simplex(&Vector::zeros(0)),
            Err(OperatorError::EmptyVector)
        ));
    }

    #[test]
    fn capped_simplex_feasibility_sampled() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let z = rand_vec(&mut rng, n);
            let p = project_capped_simplex(&z).unwrap();
            assert!((p.sum() - 1.0).abs() <= 1e-10, "sum {} != 1", p.sum());
            assert!(p.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            let pp = project_capped_simplex(&p).unwrap();
            assert!((&pp - &p).norm() <= 1e-9);
        }
    }

    #[test]
    fn skew_saddle_examples() {
        let mut rng = StdRng::seed_from_u64(6);
        let d = DMatrix::<f64>::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let b0 = Vector::zeros(3);
        let x = rand_vec(&mut rng, 4);
        // u = 0, b = 0 → (0, −Dx)
        let (p, dl) = skew_saddle(&d, &b0, &x, &Vector::zeros(3)).unwrap();
        assert_eq!(p, Vector::zeros(4));
        assert!((&dl + &d * &x).norm() < 1e-14);
        // skewness of the linear part on random pairs
        for _ in 0..100 {
            let (x1, u1) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 3));
            let (x2, u2) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 3));
            let (p1, d1) = skew_saddle(&d, &b0, &x1, &u1).unwrap();
            let (p2, d2) = skew_saddle(&d, &b0, &x2, &u2).unwrap();
            let ip = (&p1 - &p2).dot(&(&x1 - &x2)) + (&d1 - &d2).dot(&(&u1 - &u2));
            assert!(ip.abs() <= 1e-10, "skew inner product {ip}");
        }
        assert!(matches!(
            skew_saddle(&d, &b0, &Vector::zeros(2), &Vector::zeros(3)),
            Err(OperatorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn saddle_lipschitz_bound_sampled() {
        let mut rng = StdRng::seed_from_u64(7);
        let d = Arc::new(DMatrix::<f64>::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0)));
        let op = SingleValuedOp::saddle(Arc::clone(&d), Vector::zeros(3));
        let mu = op.lipschitz_mu;
        for _ in 0..1000 {
            let z1 = rand_vec(&mut rng, 7);
            let z2 = rand_vec(&mut rng, 7);
            let dz = (&z1 - &z2).norm();
            let dv = (op.eval_observer(&z1) - op.eval_observer(&z2)).norm();
            assert!(dv <= mu * dz + 1e-9 * dz.max(1.0));
        }
    }

    #[test]
    fn quad_grad_stationary_point_and_fd() {
        let mut rng = StdRng::seed_from_u64(8);
        let g = DMatrix::<f64>::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.1 });
        // x with Gx = b → gradient 0
        let x = rand_vec(&mut rng, 3);
        let b = &g * &x;
        assert!(quad_grad(&g, &b, &x).unwrap().norm() < 1e-12);
        // central finite differences of ½‖Gx − b‖²
        let b = rand_vec(&mut rng, 3);
        let x = rand_vec(&mut rng, 3);
        let grad = quad_grad(&g, &b, &x).unwrap();
        let h = 1e-6;
        let f = |x: &Vector| 0.5 * (&g * x - &b).norm_squared();
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0),
                "fd {fd} vs grad {}",
                grad[i]
            );
        }
    }

    #[test]
    fn operator_norm_identity_and_diagonal() {
        let est = operator_norm(|v| v.clone(), |v| v.clone(), 5, 1e-10, 1000);
        assert!(est.converged);
        assert!((est.value - 1.0).abs() < 1e-8);
        let d = DMatrix::<f64>::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        let est = matrix_norm(&d);
        assert!((est.value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn cocoercivity_of_quad_gradient_sampled() {
        let mut rng = StdRng::seed_from_u64(9);
        let g = Arc::new(DMatrix::<f64>::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0)));
        let op = SingleValuedOp::quad_gradient(Arc::clone(&g), rand_vec(&mut rng, 4), 0);
        let beta = op.cocoercivity_beta.unwrap();
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 6);
            let y = rand_vec(&mut rng, 6);
            let tx = op.eval_observer(&x);
            let ty = op.eval_observer(&y);
            let lhs = (&tx - &ty).dot(&(&x - &y));
            let rhs = (&tx - &ty).norm_squared() / beta;
            assert!(lhs >= rhs - 1e-9 * rhs.max(1.0));
        }
    }

    #[test]
    fn cocoercive_three_point_bound_sampled() {
        // ⟨Cx − Cy, z − y⟩ ≥ −(β/4)‖z − x‖² for a β⁻¹-cocoercive C
        let mut rng = StdRng::seed_from_u64(10);
        let g = Arc::new(DMatrix::<f64>::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0)));
        let op = SingleValuedOp::quad_gradient(Arc::clone(&g), rand_vec(&mut rng, 4), 0);
        let beta = op.cocoercivity_beta.unwrap();
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 4);
            let y = rand_vec(&mut rng, 4);
            let z = rand_vec(&mut rng, 4);
            let lhs = (op.eval_observer(&x) - op.eval_observer(&y)).dot(&(&z - &y));
            let bound = -(beta / 4.0) * (&z - &x).norm_squared();
            assert!(lhs >= bound - 1e-9 * bound.abs().max(1.0));
        }
    }

    #[test]
    fn resolvent_firm_nonexpansiveness_sampled() {
        let mut rng = StdRng::seed_from_u64(11);
        let r = Resolvent::box_projection(0.0, 1.0).unwrap();
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, 5);
            let y = rand_vec(&mut rng, 5);
            let jx = r.eval_uncounted(1.0, &x);
            let jy = r.eval_uncounted(1.0, &y);
            let lhs = (&jx - &jy).norm_squared();
            let rhs = (&jx - &jy).dot(&(&x - &y));
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn resolvent_normal_cone_characterization() {
        // y = proj(x) satisfies ⟨x − y, w − y⟩ ≤ 0 for feasible w
        let mut rng = StdRng::seed_from_u64(12);
        let r = Resolvent::capped_simplex();
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 4);
            let y = r.eval_uncounted(0.7, &x);
            for _ in 0..50 {
                let raw = Vector::from_fn(4, |_, _| rng.gen_range(0.0..1.0f64));
                let w = project_capped_simplex(&raw).unwrap();
                assert!((&x - &y).dot(&(&w - &y)) <= 1e-8);
            }
        }
    }

    #[test]
    fn strongly_monotone_shift_resolvent() {
        // A = N_{[0,1]} + ρ·Id on a scalar: J_{γ(A+ρ)}(z) = clamp(z/(1+γρ))
        let base = Arc::new(Resolvent::box_projection(0.0, 1.0).unwrap());
        let r = Resolvent::strongly_monotone_shift(base, 0.5);
        let z = Vector::from_vec(vec![0.9]);
        let out = r.eval_uncounted(1.0, &z);
        assert!((out[0] - 0.6).abs() < 1e-14);
        let z = Vector::from_vec(vec![3.0]);
        let out = r.eval_uncounted(1.0, &z);
        assert!((out[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn classic_kernel_matches_plain_resolvent() {
        let a = Arc::new(Resolvent::box_projection(0.0, 1.0).unwrap());
        let metric = Arc::new(Metric::identity(3));
        let k = ClassicKernel::new(Arc::clone(&a), metric, 0.4).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..50 {
            let x = rand_vec(&mut rng, 3);
            // (M+A)⁻¹(x/γ) = J_{γA}(x)
            let w = k.warped_resolvent(0, &(&x / 0.4)).unwrap();
            let j = a.eval_uncounted(0.4, &x);
            assert!((&w - &j).norm() <= 1e-12);
            assert_eq!(k.lipschitz_l(0), 0.0);
            assert_eq!(k.gm(0, &x), Vector::zeros(3));
        }
    }

    #[test]
    fn split_kernel_scalar_hand_example() {
        // A₁ = ∂ι_{[0,1]}, A₂(x) = 2x, γ = 0.1, w = 5:
        // warped resolvent = clamp(γ·w) = clamp(0.5) = 0.5
        let a1 = Arc::new(Resolvent::box_projection(0.0, 1.0).unwrap());
        let a2 = Arc::new(SingleValuedOp::from_fn(|x: &Vector| x * 2.0, 2.0));
        let metric = Metric::identity(1);
        let k = LipschitzSplitKernel::new(a1, a2, &metric, 0.1).unwrap();
        let w = Vector::from_vec(vec![5.0]);
        let out = k.warped_resolvent(0, &w).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-14);
        assert!((k.lipschitz_l(0) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn split_kernel_lipschitz_contract_sampled() {
        let mut rng = StdRng::seed_from_u64(14);
        let n = 6;
        let raw = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // monotone linear operator: PSD symmetric part
        let k_mat = &raw * raw.transpose() * 0.05 + (&raw - raw.transpose()) * 0.1;
        let a2 = Arc::new(SingleValuedOp::linear(Arc::new(k_mat)));
        let a1 = Arc::new(Resolvent::box_projection(-1.0, 1.0).unwrap());
        let metric = Metric::identity(n);
        let gamma = 0.5;
        let kern = LipschitzSplitKernel::new(a1, Arc::clone(&a2), &metric, gamma).unwrap();
        let l = kern.lipschitz_l(0);
        assert!((0.0..1.0).contains(&l));
        for _ in 0..1000 {
            let x = rand_vec(&mut rng, n);
            let y = rand_vec(&mut rng, n);
            let gx = kern.gm(0, &x);
            let gy = kern.gm(0, &y);
            assert!((gx - gy).norm() <= l * (&x - &y).norm() + 1e-9);
        }
        // A₂ = 0 reduces to the classical kernel behavior
        let zero = Arc::new(SingleValuedOp::zero(n));
        let a1 = Arc::new(Resolvent::box_projection(-1.0, 1.0).unwrap());
        let kern0 =
            LipschitzSplitKernel::new(Arc::clone(&a1), zero, &metric, gamma).unwrap();
        let classic =
            ClassicKernel::new(a1, Arc::new(Metric::identity(n)), gamma).unwrap();
        let x = rand_vec(&mut rng, n);
        let f = rand_vec(&mut rng, n);
        let u = Vector::zeros(n);
        let b0 = kern0.backward(0, &x, &f, &u).unwrap();
        let bc = classic.backward(0, &x, &f, &u).unwrap();
        assert!((b0 - bc).norm() <= 1e-14);
    }

    #[test]
    fn classic_kernel_rejects_non_identity_metric() {
        let a = Arc::new(Resolvent::nonneg_projection());
        let metric = Arc::new(Metric::diagonal(Vector::from_vec(vec![2.0, 1.0])).unwrap());
        assert!(matches!(
            ClassicKernel::new(a, metric, 0.5),
            Err(OperatorError::Unsupported(_))
        ));
    }

    #[test]
    fn warped_resolvent_residual_for_classic_box_kernel() {
        // x = (M+A)⁻¹(z) ⟹ z − Mx ∈ N_box(x): ⟨z − x/γ, w − x⟩ ≤ 0 ∀ w feasible
        let mut rng = StdRng::seed_from_u64(15);
        let a = Arc::new(Resolvent::box_projection(0.0, 1.0).unwrap());
        let k = ClassicKernel::new(a, Arc::new(Metric::identity(4)), 0.3).unwrap();
        for _ in 0..200 {
            let z = rand_vec(&mut rng, 4);
            let x = k.warped_resolvent(0, &z).unwrap();
            let res = &z - &k.eval_m(0, &x);
            for _ in 0..20 {
                let w = Vector::from_fn(4, |_, _| rng.gen_range(0.0..1.0f64));
                assert!(res.dot(&(&w - &x)) <= 1e-9);
            }
        }
    }

    #[test]
    fn split_half_reconstructs_and_halves_mu() {
        let mut rng = StdRng::seed_from_u64(16);
        let d = Arc::new(DMatrix::<f64>::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0)));
        let b = SingleValuedOp::saddle(Arc::clone(&d), Vector::from_vec(vec![0.3, -0.2]));
        let (b1, b2) = split_half(&b);
        assert!((b1.lipschitz_mu - b.lipschitz_mu / 2.0).abs() < 1e-12);
        for _ in 0..100 {
            let z = rand_vec(&mut rng, 6);
            let whole = b.eval_observer(&z);
            let sum = b1.eval_observer(&z) + b2.eval_observer(&z);
            assert!((whole - sum).norm() <= 1e-12);
        }
        let zero = Vector::zeros(6);
        // affine halves still reconstruct at zero
        let whole = b.eval_observer(&zero);
        let sum = b1.eval_observer(&zero) + b2.eval_observer(&zero);
        assert!((whole - sum).norm() <= 1e-15);
    }

    proptest! {
        #[test]
        fn capped_simplex_is_a_projection(
            zs in proptest::collection::vec(-4.0f64..4.0, 1..7)
        ) {
            let z = Vector::from_vec(zs);
            let p = project_capped_simplex(&z).unwrap();
            prop_assert!((p.sum() - 1.0).abs() <= 1e-10);
            prop_assert!(p.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            // idempotent
            let pp = project_capped_simplex(&p).unwrap();
            prop_assert!((&pp - &p).norm() <= 1e-9);
        }
    }
}
