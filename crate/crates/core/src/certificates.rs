//! Runtime convergence certificates: the Lyapunov-type quantities tracked
//! along runs of the three momentum algorithms, their theorem-backed
//! decrease/lower-bound checks, and reference-zero verification.

use crate::conditions::{ConstantSet, SQRT2};
use crate::metric::{Metric, MetricError, Vector};
use crate::operators::{Kernel, OperatorTriple, SingleValuedOp};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("missing constant `{0}` required by this certificate")]
    MissingConstant(&'static str),
    #[error("certificate not yet defined at iteration {k} (insufficient history)")]
    NotYetDefined { k: usize },
    #[error("certificate precondition failed: {0}")]
    Precondition(String),
    #[error("reference point rejected: {0}")]
    ReferenceRejected(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Everything a certificate evaluation needs besides the iterate history:
/// the verified reference zero, the operator `B`, the metric, the constant
/// set, and (for scheduled kernels) the kernel to resolve `γ_k`, `L_k`.
pub struct CertContext {
    pub x_star: Vector,
    pub b: Arc<SingleValuedOp>,
    pub metric: Arc<Metric>,
    pub constants: ConstantSet,
    pub kernel: Option<Arc<dyn Kernel>>,
    b_x_star: Vector,
}

impl CertContext {
    /// Build a context around an externally certified zero. Use
    /// [`CertContext::verified`] (or the solver's one-step check) when the
    /// point still needs vetting.
    pub fn new(
        x_star: Vector,
        b: Arc<SingleValuedOp>,
        metric: Arc<Metric>,
        constants: ConstantSet,
        kernel: Option<Arc<dyn Kernel>>,
    ) -> Self {
        let b_x_star = b.eval_observer(&x_star);
        CertContext {
            x_star,
            b,
            metric,
            constants,
            kernel,
            b_x_star,
        }
    }

    /// Build a context after verifying the candidate through the resolvent
    /// fixed-point characterization at the context's step size.
    pub fn verified(
        triple: &OperatorTriple,
        x_star: Vector,
        constants: ConstantSet,
        kernel: Option<Arc<dyn Kernel>>,
        tol: f64,
    ) -> Result<Self, CertError> {
        let gamma = constants.gamma;
        let resid = zero_residual(triple, &x_star, gamma);
        if !(resid <= tol) {
            return Err(CertError::ReferenceRejected(format!(
                "fixed-point residual {resid:.3e} exceeds tolerance {tol:.3e}"
            )));
        }
        Ok(Self::new(
            x_star,
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            kernel,
        ))
    }

    pub fn gamma_at(&self, k: usize) -> f64 {
        match &self.kernel {
            Some(kr) => kr.gamma(k),
            None => self.constants.gamma,
        }
    }

    /// `L_k` with the convention `L_{−1} := L_0`.
    pub fn l_at(&self, k: isize) -> f64 {
        let k = k.max(0) as usize;
        match &self.kernel {
            Some(kr) => kr.lipschitz_l(k),
            None => self.constants.l_cur,
        }
    }
}

/// A borrowed view of the iterate history at index `k`: `x = x_k`,
/// `x_prev = x_{k−1}`, `x_prev2 = x_{k−2}`, momentum terms `u_k`/`u_{k−1}`,
/// and the previous backward point `y_{k−1}` where the algorithm has one.
#[derive(Debug, Clone, Copy)]
pub struct CertSnapshot<'a> {
    pub k: usize,
    pub x: &'a Vector,
    pub x_prev: &'a Vector,
    pub x_prev2: Option<&'a Vector>,
    pub u: &'a Vector,
    pub u_prev: Option<&'a Vector>,
    pub y_prev: Option<&'a Vector>,
}

/// The forward-reflected certificate
/// `Ψ_k = ‖x_k−x*‖²_S + 2⟨u_k, x_k−x*⟩ + (γ_kμ+L_{k−1})‖x_k−x_{k−1}‖²_S
///        + 2γ_k⟨Bx_k−Bx_{k−1}, x*−x_k⟩`.
pub fn psi(ctx: &CertContext, snap: &CertSnapshot<'_>) -> Result<f64, CertError> {
    let m = &ctx.metric;
    let gamma = ctx.gamma_at(snap.k);
    let l_prev = ctx.l_at(snap.k as isize - 1);
    let dx_star = snap.x - &ctx.x_star;
    let dstep = snap.x - snap.x_prev;
    let term1 = m.s_norm(&dx_star)?.powi(2);
    let term2 = 2.0 * snap.u.dot(&dx_star);
    let term3 = (gamma * ctx.constants.mu + l_prev) * m.s_norm(&dstep)?.powi(2);
    let b_x = ctx.b.eval_observer(snap.x);
    let b_xp = ctx.b.eval_observer(snap.x_prev);
    let term4 = 2.0 * gamma * (b_x - b_xp).dot(&(-&dx_star));
    Ok(term1 + term2 + term3 + term4)
}

/// The reflected certificate `Ξ_k`, defined from `k = 2` on:
/// `Γ_k + (1+3L_{k−1}+γβ/ε₂+γμ(√2+1))‖x_k−x_{k−1}‖²_S
///      + L_{k−2}‖x_{k−1}−x_{k−2}‖²_S + γμ‖x_k−y_{k−1}‖²_S`
/// with `Γ_k = ‖x_k−x*‖²_S + 2⟨u_k, x_k−x*⟩ + 2γ⟨By_{k−1}−Bx*, x_k−x_{k−1}⟩
///; + 2⟨u_k−u_{k−1}, x_k−x_{k−1}⟩` and `y_{k−1} = 2x_{k−1} − x_{k−2}`.
pub fn xi(ctx: &CertContext, snap: &CertSnapshot<'_>) -> Result<f64, CertError> {
    let (x_prev2, u_prev) = match (snap.x_prev2, snap.u_prev) {
        (Some(a), Some(b)) if snap.k >= 2 => (a, b),
        _ => return Err(CertError::NotYetDefined { k: snap.k }),
    };
    let eps2 = ctx
        .constants
        .eps2
        .ok_or(CertError::MissingConstant("eps2"))?;
    let m = &ctx.metric;
    let c = &ctx.constants;
    let gamma = ctx.gamma_at(snap.k);
    let l_prev = ctx.l_at(snap.k as isize - 1);
    let l_prev2 = ctx.l_at(snap.k as isize - 2);
    let dx_star = snap.x - &ctx.x_star;
    let dstep = snap.x - snap.x_prev;
    let y_prev = snap.x_prev * 2.0 - x_prev2;
    let b_y_prev = ctx.b.eval_observer(&y_prev);
    let gamma_k = m.s_norm(&dx_star)?.powi(2)
        + 2.0 * snap.u.dot(&dx_star)
        + 2.0 * gamma * (b_y_prev - &ctx.b_x_star).dot(&dstep)
        + 2.0 * (snap.u - u_prev).dot(&dstep);
    let value = gamma_k
        + (1.0 + 3.0 * l_prev + gamma * c.beta / eps2 + gamma * c.mu * (SQRT2 + 1.0))
            * m.s_norm(&dstep)?.powi(2)
        + l_prev2 * m.s_norm(&(snap.x_prev - x_prev2))?.powi(2)
        + gamma * c.mu * m.s_norm(&(snap.x - &y_prev))?.powi(2);
    Ok(value)
}

/// The outer-reflected certificate
/// `S_k = ‖(x_k+γS⁻¹Bx_{k−1}) − (x*+γS⁻¹Bx*)‖²_S + 2⟨u_k, x_k−x*⟩
///       + L_{k−1}‖y_{k−1}−x_{k−1}‖²_S
///       + (α+γμ(ε₅μ+1))/(1−(1+ε₆)γ²μ²)·‖x_k−x_{k−1}‖²_S`,
/// defined once a backward point `y_{k−1}` exists. Errors when the
/// hypothesis `1−(1+ε₆)γ²μ² > 0` fails.
pub fn s_cert(ctx: &CertContext, snap: &CertSnapshot<'_>) -> Result<f64, CertError> {
    let y_prev = snap
        .y_prev
        .ok_or(CertError::NotYetDefined { k: snap.k })?;
    let c = &ctx.constants;
    let eps5 = c.eps5.ok_or(CertError::MissingConstant("eps5"))?;
    let eps6 = c.eps6.ok_or(CertError::MissingConstant("eps6"))?;
    let alpha = c.alpha.ok_or(CertError::MissingConstant("alpha"))?;
    let m = &ctx.metric;
    let gamma = ctx.gamma_at(snap.k);
    let l_prev = ctx.l_at(snap.k as isize - 1);
    let denom = 1.0 - (1.0 + eps6) * gamma * gamma * c.mu * c.mu;
    if !(denom > 0.0) {
        return Err(CertError::Precondition(format!(
            "hypothesis 1 − (1+eps6)·gamma²·mu² > 0 fails: value {denom:.6e}"
        )));
    }
    let b_prev = ctx.b.eval_observer(snap.x_prev);
    let a_k = snap.x + m.apply_inv(&b_prev) * gamma;
    let a_star = &ctx.x_star + m.apply_inv(&ctx.b_x_star) * gamma;
    let weight = (alpha + gamma * c.mu * (eps5 * c.mu + 1.0)) / denom;
    let value = m.s_norm(&(a_k - a_star))?.powi(2)
        + 2.0 * snap.u.dot(&(snap.x - &ctx.x_star))
        + l_prev * m.s_norm(&(y_prev - snap.x_prev))?.powi(2)
        + weight * m.s_norm(&(snap.x - snap.x_prev))?.powi(2);
    Ok(value)
}

/// The rate envelope tracked for the outer-reflected linear-rate bound:
/// `Φ_k = (1+tγμ(1+γμ))‖x_k−x*‖²_S + d_k + (A+α)/(1+t)·‖x_k−x_{k−1}‖²_S`
/// with `d_k = 2γ⟨Bx_{k−1}−Bx*, x_k−x*⟩ + γ²‖Bx_{k−1}−Bx*‖²_{S⁻¹}
///            + 2⟨u_k, x_k−x*⟩ + L_{k−1}‖y_{k−1}−x_{k−1}‖²_S`.
pub fn phi_alg3(ctx: &CertContext, snap: &CertSnapshot<'_>, t: f64) -> Result<f64, CertError> {
    let y_prev = snap
        .y_prev
        .ok_or(CertError::NotYetDefined { k: snap.k })?;
    let c = &ctx.constants;
    let m = &ctx.metric;
    let gamma = ctx.gamma_at(snap.k);
    let l_prev = ctx.l_at(snap.k as isize - 1);
    let big_a = crate::conditions::a_rate(c)
        .map_err(|e| CertError::Precondition(e.to_string()))?;
    let alpha = c.alpha.ok_or(CertError::MissingConstant("alpha"))?;
    let dx_star = snap.x - &ctx.x_star;
    let db = ctx.b.eval_observer(snap.x_prev) - &ctx.b_x_star;
    let d_k = 2.0 * gamma * db.dot(&dx_star)
        + gamma * gamma * m.s_inv_norm(&db)?.powi(2)
        + 2.0 * snap.u.dot(&dx_star)
        + l_prev * m.s_norm(&(y_prev - snap.x_prev))?.powi(2);
    let gm = gamma * c.mu;
    let value = (1.0 + t * gm * (1.0 + gm)) * m.s_norm(&dx_star)?.powi(2)
        + d_k
        + (big_a + alpha) / (1.0 + t) * m.s_norm(&(snap.x - snap.x_prev))?.powi(2);
    Ok(value)
}

/// Euclidean fixed-point residual `‖x − J_{γA}(x − γ(B+C)x)‖` of the
/// inclusion at `x`; zero exactly at the zeros of `A+B+C`.
pub fn zero_residual(triple: &OperatorTriple, x: &Vector, gamma: f64) -> f64 {
    let fwd = triple.b.eval_observer(x) + triple.c.eval_observer(x);
    let j = triple.a.eval_uncounted(gamma, &(x - fwd * gamma));
    (x - j).norm()
}

/// True iff `x` satisfies the fixed-point characterization of a zero within
/// `tol`, at the reference step size `γ = 1`.
pub fn verify_zero(triple: &OperatorTriple, x: &Vector, tol: f64) -> bool {
    verify_zero_with_gamma(triple, x, 1.0, tol)
}

pub fn verify_zero_with_gamma(triple: &OperatorTriple, x: &Vector, gamma: f64, tol: f64) -> bool {
    zero_residual(triple, x, gamma) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Metric;
    use crate::operators::Resolvent;

    fn unit_triple_b_zero() -> OperatorTriple {
        // A = N_{[0,1]}, B = 0, C(x) = x − 2 → x* = 1
        let a = Arc::new(Resolvent::box_projection(0.0, 1.0).unwrap());
        let b = Arc::new(SingleValuedOp::zero(1));
        let c = Arc::new(
            SingleValuedOp::from_fn(
                |x: &Vector| x - Vector::from_element(x.len(), 2.0),
                1.0,
            )
            .with_cocoercivity(1.0),
        );
        OperatorTriple::new(a, b, c, Arc::new(Metric::identity(1)), 1)
    }

    #[test]
    fn psi_vanishes_at_collapsed_state() {
        let triple = unit_triple_b_zero();
        let constants = ConstantSet::new(0.0, 1.0, 0.5)
            .with_eps2(1.0)
            .with_eps5(1.0)
            .with_eps6(1.0)
            .with_alpha(0.5);
        let xs = Vector::from_vec(vec![1.0]);
        let ctx = CertContext::new(
            xs.clone(),
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            None,
        );
        let u = Vector::zeros(1);
        let snap = CertSnapshot {
            k: 3,
            x: &xs,
            x_prev: &xs,
            x_prev2: Some(&xs),
            u: &u,
            u_prev: Some(&u),
            y_prev: Some(&xs),
        };
        assert_eq!(psi(&ctx, &snap).unwrap(), 0.0);
        assert_eq!(xi(&ctx, &snap).unwrap(), 0.0);
        assert_eq!(s_cert(&ctx, &snap).unwrap(), 0.0);
    }

    #[test]
    fn psi_plug_in_value() {
        // u = 0, B ≡ 0, γμ + L_{k−1} = 1, both displacement norms 1 → Ψ = 2
        let triple = unit_triple_b_zero();
        let constants = ConstantSet::new(1.0, 1.0, 0.5).with_l(0.5);
        let xs = Vector::from_vec(vec![0.0]);
        let ctx = CertContext::new(
            xs,
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            None,
        );
        let x = Vector::from_vec(vec![1.0]);
        let x_prev = Vector::from_vec(vec![2.0]);
        let u = Vector::zeros(1);
        let snap = CertSnapshot {
            k: 5,
            x: &x,
            x_prev: &x_prev,
            x_prev2: None,
            u: &u,
            u_prev: None,
            y_prev: None,
        };
        assert!((psi(&ctx, &snap).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn xi_requires_history() {
        let triple = unit_triple_b_zero();
        let constants = ConstantSet::new(0.0, 1.0, 0.5).with_eps2(1.0);
        let xs = Vector::from_vec(vec![1.0]);
        let ctx = CertContext::new(
            xs.clone(),
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            None,
        );
        let u = Vector::zeros(1);
        let snap = CertSnapshot {
            k: 1,
            x: &xs,
            x_prev: &xs,
            x_prev2: Some(&xs),
            u: &u,
            u_prev: Some(&u),
            y_prev: None,
        };
        assert!(matches!(
            xi(&ctx, &snap),
            Err(CertError::NotYetDefined { k: 1 })
        ));
    }

    #[test]
    fn xi_hand_computed_two_dim() {
        // B(x) = x, metric identity, gamma = 0.5, mu = 1, beta = 0, eps2 = 1,
        // L = 0; x* = 0
        let a = Arc::new(Resolvent::box_projection(-10.0, 10.0).unwrap());
        let b = Arc::new(SingleValuedOp::from_fn(|x: &Vector| x.clone(), 1.0));
        let c = Arc::new(SingleValuedOp::zero(2));
        let triple =
            OperatorTriple::new(a, b, c, Arc::new(Metric::identity(2)), 2);
        let constants = ConstantSet::new(1.0, 0.0, 0.5).with_eps2(1.0);
        let ctx = CertContext::new(
            Vector::zeros(2),
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            None,
        );
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let x_prev = Vector::from_vec(vec![0.0, 1.0]);
        let x_prev2 = Vector::from_vec(vec![1.0, 1.0]);
        let u = Vector::from_vec(vec![0.1, -0.1]);
        let u_prev = Vector::from_vec(vec![0.0, 0.2]);
        let snap = CertSnapshot {
            k: 2,
            x: &x,
            x_prev: &x_prev,
            x_prev2: Some(&x_prev2),
            u: &u,
            u_prev: Some(&u_prev),
            y_prev: None,
        };
        let got = xi(&ctx, &snap).unwrap();
        // duplicate arithmetic, term by term
        let y_prev = Vector::from_vec(vec![-1.0, 1.0]); // 2·x_prev − x_prev2
        let dstep = &x - &x_prev;
        let gamma_k = x.norm_squared()
            + 2.0 * u.dot(&x)
            + 2.0 * 0.5 * y_prev.dot(&dstep) // B = Id, Bx* = 0
            + 2.0 * (&u - &u_prev).dot(&dstep);
        let expect = gamma_k
            + (1.0 + 0.5 * (SQRT2 + 1.0)) * dstep.norm_squared()
            + 0.5 * (&x - &y_prev).norm_squared();
        assert!((got - expect).abs() < 1e-13, "got {got}, expect {expect}");
    }

    #[test]
    fn s_cert_duplicate_arithmetic() {
        let a = Arc::new(Resolvent::box_projection(-10.0, 10.0).unwrap());
        let b = Arc::new(SingleValuedOp::from_fn(|x: &Vector| x * 0.5, 0.5));
        let c = Arc::new(SingleValuedOp::zero(2));
        let triple =
            OperatorTriple::new(a, b, c, Arc::new(Metric::identity(2)), 2);
        let constants = ConstantSet::new(0.5, 0.0, 0.4)
            .with_eps5(2.0)
            .with_eps6(1.0)
            .with_alpha(0.3);
        let xs = Vector::from_vec(vec![0.2, -0.1]);
        let ctx = CertContext::new(
            xs.clone(),
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            None,
        );
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let x_prev = Vector::from_vec(vec![0.5, 1.0]);
        let y_prev = Vector::from_vec(vec![0.6, 0.9]);
        let u = Vector::from_vec(vec![0.05, -0.02]);
        let snap = CertSnapshot {
            k: 4,
            x: &x,
            x_prev: &x_prev,
            x_prev2: None,
            u: &u,
            u_prev: None,
            y_prev: Some(&y_prev),
        };
        let got = s_cert(&ctx, &snap).unwrap();
        let (g, mu, e5, e6, alpha) = (0.4f64, 0.5f64, 2.0f64, 1.0f64, 0.3f64);
        let denom = 1.0 - (1.0 + e6) * g * g * mu * mu;
        let a_k = &x + &x_prev * (0.5 * g); // S = Id, B = 0.5·Id
        let a_star = &xs + &xs * (0.5 * g);
        let expect = (a_k - a_star).norm_squared()
            + 2.0 * u.dot(&(&x - &xs))
            + 0.0 // L = 0
            + (alpha + g * mu * (e5 * mu + 1.0)) / denom * (&x - &x_prev).norm_squared();
        assert!((got - expect).abs() < 1e-13, "got {got}, expect {expect}");
    }

    #[test]
    fn verify_zero_accepts_analytic_solution() {
        let triple = unit_triple_b_zero();
        // x* = 1 solves 0 ∈ N_{[0,1]}(x) + x − 2
        assert!(verify_zero(&triple, &Vector::from_vec(vec![1.0]), 1e-12));
        assert!(!verify_zero(&triple, &Vector::from_vec(vec![0.4]), 1e-8));
    }

    #[test]
    fn verified_context_rejects_non_zero() {
        let triple = unit_triple_b_zero();
        let constants = ConstantSet::new(0.0, 1.0, 0.5);
        let err = match CertContext::verified(
            &triple,
            Vector::from_vec(vec![0.2]),
            constants.clone(),
            None,
            1e-8,
        ) {
            Err(e) => e,
            Ok(_) => panic!("expected rejection"),
        };
        assert!(matches!(err, CertError::ReferenceRejected(_)));
        assert!(CertContext::verified(
            &triple,
            Vector::from_vec(vec![1.0]),
            constants,
            None,
            1e-8
        )
        .is_ok());
    }
}
