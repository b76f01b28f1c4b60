//! Step-size condition checkers and linear-rate constants for the three
//! momentum algorithms, plus feasible-γ computation for constant schedules.
//!
//! Checkers return signed margins (left side minus the strictness slack ε)
//! rather than booleans so callers can report slack; a nonnegative margin
//! means the condition holds. All functions are pure.

use thiserror::Error;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("missing constant `{0}` required by this check")]
    MissingConstant(&'static str),
    #[error("invalid constant: {0}")]
    InvalidConstant(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("step-size condition violated: {0}")]
    ConditionViolated(String),
    #[error("no feasible step size: {0}")]
    Infeasible(String),
}

/// The constants a run is judged against. `l_prev2/l_prev/l_cur` are the
/// kernel Lipschitz constants `L_{k−2}, L_{k−1}, L_k`; `gamma/gamma_next`
/// are `γ_k, γ_{k+1}`; `eps` is the strictness slack; `eps1..eps8` and
/// `alpha` are the auxiliary constants of the individual theorems.
#[derive(Debug, Clone)]
pub struct ConstantSet {
    pub mu: f64,
    pub beta: f64,
    pub l_prev2: f64,
    pub l_prev: f64,
    pub l_cur: f64,
    pub gamma: f64,
    pub gamma_next: f64,
    pub rho: Option<f64>,
    pub eps: f64,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub eps3: Option<f64>,
    pub eps4: Option<f64>,
    pub eps5: Option<f64>,
    pub eps6: Option<f64>,
    pub eps7: Option<f64>,
    pub eps8: Option<f64>,
    pub alpha: Option<f64>,
}

impl ConstantSet {
    pub fn new(mu: f64, beta: f64, gamma: f64) -> Self {
        ConstantSet {
            mu,
            beta,
            l_prev2: 0.0,
            l_prev: 0.0,
            l_cur: 0.0,
            gamma,
            gamma_next: gamma,
            rho: None,
            eps: 1e-6,
            eps1: None,
            eps2: None,
            eps3: None,
            eps4: None,
            eps5: None,
            eps6: None,
            eps7: None,
            eps8: None,
            alpha: None,
        }
    }

    /// Set `L_{k−2} = L_{k−1} = L_k = l` (constant kernel schedule).
    pub fn with_l(mut self, l: f64) -> Self {
        self.l_prev2 = l;
        self.l_prev = l;
        self.l_cur = l;
        self
    }

    pub fn with_gamma_next(mut self, gamma_next: f64) -> Self {
        self.gamma_next = gamma_next;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    pub fn with_eps1(mut self, v: f64) -> Self {
        self.eps1 = Some(v);
        self
    }
    pub fn with_eps2(mut self, v: f64) -> Self {
        self.eps2 = Some(v);
        self
    }
    pub fn with_eps3(mut self, v: f64) -> Self {
        self.eps3 = Some(v);
        self
    }
    pub fn with_eps4(mut self, v: f64) -> Self {
        self.eps4 = Some(v);
        self
    }
    pub fn with_eps5(mut self, v: f64) -> Self {
        self.eps5 = Some(v);
        self
    }
    pub fn with_eps6(mut self, v: f64) -> Self {
        self.eps6 = Some(v);
        self
    }
    pub fn with_eps7(mut self, v: f64) -> Self {
        self.eps7 = Some(v);
        self
    }
    pub fn with_eps8(mut self, v: f64) -> Self {
        self.eps8 = Some(v);
        self
    }
    pub fn with_alpha(mut self, v: f64) -> Self {
        self.alpha = Some(v);
        self
    }

    pub fn validate(&self) -> Result<(), ConditionError> {
        let bad = |msg: String| Err(ConditionError::InvalidConstant(msg));
        if !(self.mu >= 0.0) {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        for (name, l) in [
            ("L_{k-2}", self.l_prev2),
            ("L_{k-1}", self.l_prev),
            ("L_k", self.l_cur),
        ] {
            if !(0.0..1.0).contains(&l) {
                return bad(format!("{name} must lie in [0, 1), got {l}"));
            }
        }
        if !(self.gamma > 0.0) || !(self.gamma_next > 0.0) {
            return bad(format!(
                "step sizes must be positive, got gamma={} gamma_next={}",
                self.gamma, self.gamma_next
            ));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if let Some(r) = self.rho {
            if !(r >= 0.0) {
                return bad(format!("rho must be >= 0, got {r}"));
            }
        }
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("eps4", self.eps4),
            ("eps5", self.eps5),
            ("eps6", self.eps6),
            ("eps7", self.eps7),
            ("eps8", self.eps8),
            ("alpha", self.alpha),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return bad(format!("{name} must be > 0, got {v}"));
                }
            }
        }
        Ok(())
    }

    fn require(&self, v: Option<f64>, name: &'static str) -> Result<f64, ConditionError> {
        v.ok_or(ConditionError::MissingConstant(name))
    }
}

/// A divided min-argument where a vanishing denominator means the
/// constraint is inactive and the argument drops out of the min.
fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

// ---------------------------------------------------------------------------
// Step-size conditions
// ---------------------------------------------------------------------------

/// Margin of the first algorithm's step-size condition:
/// `1 − L_{k−1} − L_k − γ_k μ − γ_{k+1} μ − γ_k β/2 − ε`.
pub fn check_alg1(c: &ConstantSet) -> f64 {
    1.0 - c.l_prev
        - c.l_cur
        - c.gamma * c.mu
        - c.gamma_next * c.mu
        - c.gamma * c.beta / 2.0
        - c.eps
}

/// The same quantity without the slack ε (the decrease coefficient).
pub fn alg1_decrease_coeff(c: &ConstantSet) -> f64 {
    check_alg1(c) + c.eps
}

/// Margins of the second algorithm's pair of step-size conditions (requires
/// `eps2`):
/// `1 − 3L_k − (2+ε₂+2ε₂²)γβ/(2ε₂) − L_{k−1} − γμ(√2+1) − ε` and
/// `1 − L_{k−1} − L_{k−2} − γμ(√2+1) − ε`.
pub fn check_alg2(c: &ConstantSet) -> Result<(f64, f64), ConditionError> {
    c.validate()?;
    let e2 = c.require(c.eps2, "eps2")?;
    let m1 = alg2_decrease_coeffs(c, e2).0 - c.eps;
    let m2 = alg2_decrease_coeffs(c, e2).1 - c.eps;
    Ok((m1, m2))
}

/// Decrease coefficients `(p, q)` of the second algorithm (no ε slack).
pub fn alg2_decrease_coeffs(c: &ConstantSet, eps2: f64) -> (f64, f64) {
    let p = 1.0
        - 3.0 * c.l_cur
        - (2.0 + eps2 + 2.0 * eps2 * eps2) * c.gamma * c.beta / (2.0 * eps2)
        - c.l_prev
        - c.gamma * c.mu * (SQRT2 + 1.0);
    let q = 1.0 - c.l_prev - c.l_prev2 - c.gamma * c.mu * (SQRT2 + 1.0);
    (p, q)
}

/// Admissible step-size window for the third algorithm.
#[derive(Debug, Clone, Copy)]
pub struct GammaWindow {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Alg3Check {
    /// Margin of the decrease condition (left side minus ε).
    pub margin_i: f64,
    /// `1 − ε₇ μ (ε₅ μ + 1)`, required positive.
    pub margin_ii: f64,
    /// `[max{ε₇, √((1−ε₇μ(ε₅μ+1))/((1+ε₆)μ²))}, √(1/((1+ε₆)μ²))]`.
    /// With `μ = 0` both square roots are inactive and the window is
    /// `[ε₇, ∞)`.
    pub gamma_window: GammaWindow,
}

/// Condition checks for the third algorithm (requires `eps5`, `eps6`,
/// `eps7`, `alpha`). Errors if the hypothesis `1 − (1+ε₆)γ²μ² > 0` fails.
pub fn check_alg3(c: &ConstantSet) -> Result<Alg3Check, ConditionError> {
    c.validate()?;
    let e5 = c.require(c.eps5, "eps5")?;
    let e6 = c.require(c.eps6, "eps6")?;
    let e7 = c.require(c.eps7, "eps7")?;
    let alpha = c.require(c.alpha, "alpha")?;
    let denom = 1.0 - (1.0 + e6) * c.gamma * c.gamma * c.mu * c.mu;
    if !(denom > 0.0) {
        return Err(ConditionError::PreconditionFailed(format!(
            "hypothesis 1 − (1+eps6)·gamma²·mu² > 0 fails: value {denom:.6e}"
        )));
    }
    let margin_i = alg3_decrease_coeff(c, e5, e6, alpha) - c.eps;
    let margin_ii = 1.0 - e7 * c.mu * (e5 * c.mu + 1.0);
    let gamma_window = if c.mu > 0.0 {
        let hi = (1.0 / ((1.0 + e6) * c.mu * c.mu)).sqrt();
        let lo_sq = margin_ii / ((1.0 + e6) * c.mu * c.mu);
        let lo = e7.max(lo_sq.max(0.0).sqrt());
        GammaWindow { lo, hi }
    } else {
        GammaWindow {
            lo: e7,
            hi: f64::INFINITY,
        }
    };
    Ok(Alg3Check {
        margin_i,
        margin_ii,
        gamma_window,
    })
}

/// Decrease coefficient of the third algorithm (no ε slack):
/// `1 − L_{k−1} − L_k − γL_k²μ − γβ/2 − γ/ε₅ − (α + γμ(ε₅μ+1))(1 + 1/ε₆) / (1 − (1+ε₆)γ²μ²)`.
pub fn alg3_decrease_coeff(c: &ConstantSet, eps5: f64, eps6: f64, alpha: f64) -> f64 {
    let g = c.gamma;
    let denom = 1.0 - (1.0 + eps6) * g * g * c.mu * c.mu;
    1.0 - c.l_prev
        - c.l_cur
        - g * c.l_cur * c.l_cur * c.mu
        - g * c.beta / 2.0
        - g / eps5
        - (alpha + g * c.mu * (eps5 * c.mu + 1.0)) * (1.0 + 1.0 / eps6) / denom
}

// ---------------------------------------------------------------------------
// Linear-rate constants
// ---------------------------------------------------------------------------

/// Rate constant `t` for the first algorithm under `ρ`-strong monotonicity:
/// `t = min{ 2γ_kρ / (1 + L_k/ε₁ + γ_{k+1}μ), κ / (ε₁L_k + 2γ_{k+1}μ + L_k) }`
/// with `κ` the decrease coefficient. Vanishing denominators drop the
/// corresponding argument from the min.
pub fn rate_t_alg1(c: &ConstantSet) -> Result<f64, ConditionError> {
    c.validate()?;
    let rho = c.require(c.rho, "rho")?;
    let e1 = c.require(c.eps1, "eps1")?;
    let margin = check_alg1(c);
    if margin < 0.0 {
        return Err(ConditionError::ConditionViolated(format!(
            "step-size margin is negative ({margin:.6e})"
        )));
    }
    let kappa = alg1_decrease_coeff(c);
    let a1 = 2.0 * c.gamma * rho / (1.0 + c.l_cur / e1 + c.gamma_next * c.mu);
    let a2 = ratio_or_inf(kappa, e1 * c.l_cur + 2.0 * c.gamma_next * c.mu + c.l_cur);
    Ok(a1.min(a2))
}

/// Rate constant `t` for the second algorithm:
/// `t = min{ 2γρ / (1 + L_k/ε₃ + 2ε₄γμ),
///           p / (1 + 5L_{k−1} + (ε₃+5)L_k + γβ + γμ(1/ε₄ + √2 + 1)),
///           q / (γμ(2ε₄+1) + 4L_{k−1}) }`.
pub fn rate_t_alg2(c: &ConstantSet) -> Result<f64, ConditionError> {
    c.validate()?;
    let rho = c.require(c.rho, "rho")?;
    let e2 = c.require(c.eps2, "eps2")?;
    let e3 = c.require(c.eps3, "eps3")?;
    let e4 = c.require(c.eps4, "eps4")?;
    let (m1, m2) = check_alg2(c)?;
    if m1 < 0.0 || m2 < 0.0 {
        return Err(ConditionError::ConditionViolated(format!(
            "step-size margins are ({m1:.6e}, {m2:.6e})"
        )));
    }
    let (p, q) = alg2_decrease_coeffs(c, e2);
    let g = c.gamma;
    let a1 = 2.0 * g * rho / (1.0 + c.l_cur / e3 + 2.0 * e4 * g * c.mu);
    let a2 = p / (1.0
        + 5.0 * c.l_prev
        + (e3 + 5.0) * c.l_cur
        + g * c.beta
        + g * c.mu * (1.0 / e4 + SQRT2 + 1.0));
    let a3 = ratio_or_inf(q, g * c.mu * (2.0 * e4 + 1.0) + 4.0 * c.l_prev);
    Ok(a1.min(a2).min(a3))
}

/// The scalar constant paired with `alpha` in the third algorithm's rate:
/// `(α(1+ε₆)γ²μ² + γμ(ε₅μ+1)) / (1 − (1+ε₆)γ²μ²)`.
///
/// The source analysis reuses the operator symbol for this scalar; it is
/// named `a_rate` here to avoid the collision.
pub fn a_rate(c: &ConstantSet) -> Result<f64, ConditionError> {
    let e5 = c.require(c.eps5, "eps5")?;
    let e6 = c.require(c.eps6, "eps6")?;
    let alpha = c.require(c.alpha, "alpha")?;
    let g = c.gamma;
    let denom = 1.0 - (1.0 + e6) * g * g * c.mu * c.mu;
    if !(denom > 0.0) {
        return Err(ConditionError::PreconditionFailed(format!(
            "hypothesis 1 − (1+eps6)·gamma²·mu² > 0 fails: value {denom:.6e}"
        )));
    }
    Ok((alpha * (1.0 + e6) * g * g * c.mu * c.mu + g * c.mu * (e5 * c.mu + 1.0)) / denom)
}

/// Lower admissible bound for `alpha` in the third algorithm's rate theorem:
/// `max{ 2γ²ρμ²(1/ε₇ − γ), 1 − (1+ε₆)γ²μ² − γμ(ε₅μ+1) }`.
pub fn alpha_floor(c: &ConstantSet) -> Result<f64, ConditionError> {
    let e5 = c.require(c.eps5, "eps5")?;
    let e6 = c.require(c.eps6, "eps6")?;
    let e7 = c.require(c.eps7, "eps7")?;
    let rho = c.require(c.rho, "rho")?;
    let g = c.gamma;
    let f1 = 2.0 * g * g * rho * c.mu * c.mu * (1.0 / e7 - g);
    let f2 = 1.0 - (1.0 + e6) * g * g * c.mu * c.mu - g * c.mu * (e5 * c.mu + 1.0);
    Ok(f1.max(f2))
}

/// Rate constant `t` for the third algorithm, the minimum of four arguments:
/// a quadratic-root expression, `ν/(2L_k)`, an `α`-balance ratio and an
/// `ε₈`-window ratio. Requires `rho`, `eps5..eps8`, `alpha` with `alpha`
/// above [`alpha_floor`]; `L_k = 0` drops the `ν/(2L_k)` argument, and
/// `μ = 0` replaces the 0/0 quadratic-root quotient by its limit.
pub fn rate_t_alg3(c: &ConstantSet) -> Result<f64, ConditionError> {
    c.validate()?;
    let rho = c.require(c.rho, "rho")?;
    let e5 = c.require(c.eps5, "eps5")?;
    let e6 = c.require(c.eps6, "eps6")?;
    let e7 = c.require(c.eps7, "eps7")?;
    let e8 = c.require(c.eps8, "eps8")?;
    let alpha = c.require(c.alpha, "alpha")?;
    let g = c.gamma;
    let floor = alpha_floor(c)?;
    if !(alpha > floor) {
        return Err(ConditionError::ConditionViolated(format!(
            "alpha = {alpha} must exceed its floor {floor:.6e}"
        )));
    }
    if !(e7 < 1.0) || !(e7 < 1.0 / g) {
        return Err(ConditionError::ConditionViolated(format!(
            "eps7 = {e7} must satisfy eps7 < 1 and eps7 < 1/gamma = {}",
            1.0 / g
        )));
    }
    let big_a = a_rate(c)?;
    if !(e8 > g / (big_a + alpha)) || !(e8 < g) {
        return Err(ConditionError::ConditionViolated(format!(
            "eps8 = {e8} must lie in (gamma/(A+alpha), gamma) = ({:.6e}, {:.6e})",
            g / (big_a + alpha),
            g
        )));
    }
    let nu = alg3_decrease_coeff(c, e5, e6, alpha);
    let mu = c.mu;
    let t1 = if mu > 0.0 {
        let base = 1.0 + g * mu * (2.0 + g * mu) + c.l_cur;
        let disc = base * base + 8.0 * g * g * rho * mu * (1.0 + g * mu) * (1.0 - g * e7);
        (disc.sqrt() - base) / (2.0 * g * mu * (1.0 + g * mu))
    } else {
        // 0/0 at mu = 0; the quotient tends to this limit
        2.0 * g * rho * (1.0 - g * e7) / (1.0 + c.l_cur)
    };
    let t2 = ratio_or_inf(nu, 2.0 * c.l_cur);
    let shift = 2.0 * g * g * rho * mu * mu * (1.0 / e7 - g);
    let t3 = ratio_or_inf(alpha - shift, big_a + shift);
    let t4 = (e8 * (big_a + alpha) - g) / g;
    Ok(t1.min(t2).min(t3).min(t4))
}

/// Coefficient relating the first algorithm's certificate to the squared
/// error: `k₁ = 1 − L_k − γ_{k+1}μ`.
pub fn rate_k1(c: &ConstantSet) -> f64 {
    1.0 - c.l_cur - c.gamma_next * c.mu
}

/// `k₂ = 1 − L_k − γμ` for the second algorithm.
pub fn rate_k2(c: &ConstantSet) -> f64 {
    1.0 - c.l_cur - c.gamma * c.mu
}

/// `k₃ = 1 + tγμ(1+γμ) − L_k` for the third algorithm.
pub fn rate_k3(c: &ConstantSet, t: f64) -> f64 {
    1.0 + t * c.gamma * c.mu * (1.0 + c.gamma * c.mu) - c.l_cur
}

/// Upper end of the admissible step-size band of the half-forward baseline:
/// `χ = 4 / (β + √(β² + 16μ²))`.
pub fn fbhf_chi(mu: f64, beta: f64) -> f64 {
    4.0 / (beta + (beta * beta + 16.0 * mu * mu).sqrt())
}

// ---------------------------------------------------------------------------
// Largest feasible constant step size
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxGammaAlg {
    Alg1,
    Alg2,
    Alg3,
}

/// Auxiliary constants consumed by [`max_gamma`]; the per-theorem ε's with
/// neutral defaults.
#[derive(Debug, Clone, Copy)]
pub struct AuxEps {
    pub eps2: f64,
    pub eps5: f64,
    pub eps6: f64,
    pub eps7: f64,
    pub alpha: f64,
}

impl Default for AuxEps {
    fn default() -> Self {
        AuxEps {
            eps2: 1.0,
            eps5: 1.0,
            eps6: 1.0,
            eps7: 0.5,
            alpha: 1.0,
        }
    }
}

/// Largest constant step size `γ` with nonnegative margin for the selected
/// algorithm, located by bisection to 1e-12 (the margins are decreasing in
/// `γ`). `eps = 0` is admitted and yields the supremum of the open interval.
pub fn max_gamma(
    alg: MaxGammaAlg,
    mu: f64,
    beta: f64,
    l: f64,
    eps: f64,
    aux: &AuxEps,
) -> Result<f64, ConditionError> {
    if !(mu >= 0.0) || !(beta >= 0.0) || !(0.0..1.0).contains(&l) || !(eps >= 0.0) {
        return Err(ConditionError::InvalidConstant(format!(
            "need mu >= 0, beta >= 0, L in [0,1), eps >= 0; got mu={mu} beta={beta} l={l} eps={eps}"
        )));
    }
    let margin = |gamma: f64| -> f64 {
        match alg {
            MaxGammaAlg::Alg1 => {
                1.0 - 2.0 * l - 2.0 * gamma * mu - gamma * beta / 2.0 - eps
            }
            MaxGammaAlg::Alg2 => {
                let e2 = aux.eps2;
                let m1 = 1.0
                    - 4.0 * l
                    - (2.0 + e2 + 2.0 * e2 * e2) * gamma * beta / (2.0 * e2)
                    - gamma * mu * (SQRT2 + 1.0)
                    - eps;
                let m2 = 1.0 - 2.0 * l - gamma * mu * (SQRT2 + 1.0) - eps;
                m1.min(m2)
            }
            MaxGammaAlg::Alg3 => {
                let denom = 1.0 - (1.0 + aux.eps6) * gamma * gamma * mu * mu;
                if denom <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                1.0 - 2.0 * l
                    - gamma * l * l * mu
                    - gamma * beta / 2.0
                    - gamma / aux.eps5
                    - (aux.alpha + gamma * mu * (aux.eps5 * mu + 1.0)) * (1.0 + 1.0 / aux.eps6)
                        / denom
                    - eps
            }
        }
    };
    // margin is decreasing in gamma; check feasibility at gamma → 0⁺
    let at_zero = match alg {
        MaxGammaAlg::Alg1 => 1.0 - 2.0 * l - eps,
        MaxGammaAlg::Alg2 => 1.0 - 4.0 * l - eps,
        MaxGammaAlg::Alg3 => {
            1.0 - 2.0 * l - aux.alpha * (1.0 + 1.0 / aux.eps6) - eps
        }
    };
    if at_zero <= 0.0 {
        return Err(ConditionError::Infeasible(format!(
            "margin at gamma → 0 is already {at_zero:.6e}"
        )));
    }
    // bracket the sign change
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut doublings = 0;
    while margin(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(ConditionError::Infeasible(
                "margin never becomes negative; the condition does not bound gamma".into(),
            ));
        }
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if margin(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
