//! The three momentum splitting algorithms, their classical baselines, the
//! remark-derived four-operator variants, and a generic run driver with
//! stopping rules and trace recording.

use crate::certificates::{psi, s_cert, xi, CertContext, CertError, CertSnapshot};
use crate::conditions::{
    alg1_decrease_coeff, alg2_decrease_coeffs, alg3_decrease_coeff, check_alg1, check_alg2,
    check_alg3, fbhf_chi, ConstantSet, SQRT2,
};
use crate::metric::{all_finite, MetricError, Vector};
use crate::operators::{
    ClassicKernel, Kernel, OperatorError, OperatorTriple, Resolvent, SingleValuedOp,
};
use serde::Serialize;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("backward step failed at iteration {iteration}: {source}")]
    Kernel {
        iteration: usize,
        source: OperatorError,
    },
    #[error("non-finite state encountered at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("certificate reference unavailable: {0}")]
    CertReference(String),
    #[error(transparent)]
    Certificate(#[from] CertError),
}

// ---------------------------------------------------------------------------
// Algorithms and configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Momentum forward-reflected scheme (one B at the current point, the
    /// previous B reused).
    Alg1,
    /// Momentum reflected scheme (one B at the reflected point `2x_k − x_{k−1}`).
    Alg2,
    /// Momentum outer-reflected scheme (B correction applied after the
    /// backward step).
    Alg3,
    Sfrbs,
    Srfbs,
    Orfbs,
    Fbhf,
    /// Four-operator forward-reflected scheme with a Lipschitz part split off A.
    FourOpSfrbs,
    /// Four-operator outer-reflected scheme.
    NewOrfbs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::Alg3,
        Algorithm::Sfrbs,
        Algorithm::Srfbs,
        Algorithm::Orfbs,
        Algorithm::Fbhf,
        Algorithm::FourOpSfrbs,
        Algorithm::NewOrfbs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg3 => "alg3",
            Algorithm::Sfrbs => "sfrbs",
            Algorithm::Srfbs => "srfbs",
            Algorithm::Orfbs => "orfbs",
            Algorithm::Fbhf => "fbhf",
            Algorithm::FourOpSfrbs => "four-op",
            Algorithm::NewOrfbs => "new-orfbs",
        }
    }

    fn is_momentum(&self) -> bool {
        matches!(self, Algorithm::Alg1 | Algorithm::Alg2 | Algorithm::Alg3)
    }

    fn is_four_op(&self) -> bool {
        matches!(self, Algorithm::FourOpSfrbs | Algorithm::NewOrfbs)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected one of alg1|alg2|alg3|sfrbs|srfbs|orfbs|fbhf|four-op|new-orfbs)"))
    }
}

/// Stopping rule: relative change of the full iterate below
/// `rel_change_tol`, an optional absolute bound on the S-norm of the step,
/// and an iteration cap. The relative change `E_k` is measured in the plain
/// Euclidean norm on the concatenated iterate, independent of the metric.
#[derive(Debug, Clone)]
pub struct StopRule {
    pub rel_change_tol: f64,
    pub residual_tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            rel_change_tol: 1e-6,
            residual_tol: None,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Constant step size; ignored for momentum algorithms when an explicit
    /// kernel is supplied.
    pub gamma: f64,
    /// Kernel for the momentum algorithms; defaults to the classical kernel
    /// built from the triple's resolvent and `gamma`.
    pub kernel: Option<Arc<dyn Kernel>>,
    /// The Lipschitz part split off `A` for the four-operator variants.
    pub four_op_a2: Option<Arc<SingleValuedOp>>,
    /// Constants for the condition check; derived from the problem when
    /// absent.
    pub constants: Option<ConstantSet>,
    pub stop: StopRule,
    pub record_certificates: bool,
    pub known_solution: Option<Vector>,
    /// Evaluate the step-size conditions before running (warn-and-continue).
    pub check_conditions: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, gamma: f64) -> Self {
        SolverConfig {
            algorithm,
            gamma,
            kernel: None,
            four_op_a2: None,
            constants: None,
            stop: StopRule::default(),
            record_certificates: false,
            known_solution: None,
            check_conditions: true,
        }
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_kernel(mut self, kernel: Arc<dyn Kernel>) -> Self {
        self.kernel = Some(kernel);
        self
    }

    pub fn with_four_op_a2(mut self, a2: Arc<SingleValuedOp>) -> Self {
        self.four_op_a2 = Some(a2);
        self
    }
}

/// A safe default constant step size for each algorithm, derived from the
/// problem constants. The reflected variants use their closed-form bounds;
/// the outer-reflected family reuses the forward-reflected bound as a
/// conservative heuristic since its own sufficient conditions do not reduce
/// to a closed form.
pub fn default_gamma(algorithm: Algorithm, mu: f64, beta: f64) -> f64 {
    match algorithm {
        Algorithm::Alg1 | Algorithm::Sfrbs | Algorithm::FourOpSfrbs => {
            0.9 * 2.0 / (4.0 * mu + beta)
        }
        Algorithm::Alg2 | Algorithm::Srfbs => {
            0.9 / (2.5 * beta + mu * (SQRT2 + 1.0))
        }
        Algorithm::Fbhf => 0.5 * fbhf_chi(mu, beta),
        Algorithm::Alg3 | Algorithm::Orfbs | Algorithm::NewOrfbs => {
            0.9 * 2.0 / (4.0 * mu + beta)
        }
    }
}

// ---------------------------------------------------------------------------
// Solver states
// ---------------------------------------------------------------------------

/// State of the momentum algorithms: current and previous iterate, momentum
/// term, the cached `B x_{k−1}`, and (for the outer-reflected variant) the
/// latest backward point.
#[derive(Debug, Clone)]
pub struct MomentumState {
    pub k: usize,
    pub x_prev: Vector,
    pub x: Vector,
    pub u: Vector,
    pub u_prev: Vector,
    pub y_prev: Option<Vector>,
    // B x_{k−1}; empty before the first step, where x_{−1} = x_0 makes it
    // coincide with the fresh evaluation
    b_prev: Option<Vector>,
}

impl MomentumState {
    /// Initialize with the convention `x_{−1} := x_0`; `u_0` defaults to 0
    /// when `None`.
    pub fn new(
        triple: &OperatorTriple,
        x0: Vector,
        u0: Option<Vector>,
    ) -> Result<Self, SolverError> {
        let u0 = u0.unwrap_or_else(|| Vector::zeros(x0.len()));
        if x0.len() != triple.dim || u0.len() != triple.dim {
            return Err(SolverError::Config(format!(
                "initial point dimension {} does not match problem dimension {}",
                x0.len(),
                triple.dim
            )));
        }
        if !all_finite(&x0) || !all_finite(&u0) {
            return Err(SolverError::NonFinite { iteration: 0 });
        }
        Ok(MomentumState {
            k: 0,
            x_prev: x0.clone(),
            x: x0,
            u_prev: u0.clone(),
            u: u0,
            y_prev: None,
            b_prev: None,
        })
    }
}

/// State of the classical one-resolvent baselines.
#[derive(Debug, Clone)]
pub struct ClassicState {
    pub k: usize,
    pub x_prev: Vector,
    pub x: Vector,
    b_prev: Option<Vector>,
}

impl ClassicState {
    pub fn new(x0: Vector) -> Self {
        ClassicState {
            k: 0,
            x_prev: x0.clone(),
            x: x0,
            b_prev: None,
        }
    }
}

/// State of the four-operator schemes, carrying the `A₂` and `B` caches and
/// the backward point history.
#[derive(Debug, Clone)]
pub struct FourOpState {
    pub k: usize,
    pub x_prev: Vector,
    pub x: Vector,
    pub y_prev: Vector,
    b_prev: Option<Vector>,
    a2_x_prev: Option<Vector>,
    a2_y_prev: Option<Vector>,
}

impl FourOpState {
    /// Initialize with `y_{−1} := x_{−1} := x_0`.
    pub fn new(x0: Vector) -> Self {
        FourOpState {
            k: 0,
            x_prev: x0.clone(),
            y_prev: x0.clone(),
            x: x0,
            b_prev: None,
            a2_x_prev: None,
            a2_y_prev: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Step functions
// ---------------------------------------------------------------------------

fn kernel_err(iteration: usize) -> impl FnOnce(OperatorError) -> SolverError {
    move |source| SolverError::Kernel { iteration, source }
}

/// One step of the momentum forward-reflected scheme:
/// `x_{k+1} = (M_k+A)⁻¹(M_k x_k − 2Bx_k + Bx_{k−1} − Cx_k + γ_k⁻¹u_k)`,
/// `u_{k+1} = (γ_k M_k − S)x_{k+1} − (γ_k M_k − S)x_k`.
pub fn step_alg1(
    state: &mut MomentumState,
    triple: &OperatorTriple,
    kernel: &dyn Kernel,
) -> Result<(), SolverError> {
    let k = state.k;
    let b_cur = triple.b.eval(&state.x);
    let c_cur = triple.c.eval(&state.x);
    let b_prev = state.b_prev.take().unwrap_or_else(|| b_cur.clone());
    let forward = b_prev - &b_cur * 2.0 - c_cur;
    let x_next = kernel
        .backward(k, &state.x, &forward, &state.u)
        .map_err(kernel_err(k))?;
    let u_next = kernel.gm(k, &x_next) - kernel.gm(k, &state.x);
    state.u_prev = std::mem::replace(&mut state.u, u_next);
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.b_prev = Some(b_cur);
    state.k += 1;
    Ok(())
}

/// One step of the momentum reflected scheme:
/// `y_k = 2x_k − x_{k−1}`,
/// `x_{k+1} = (M_k+A)⁻¹(M_k x_k − By_k − Cx_k + γ⁻¹u_k)`.
pub fn step_alg2(
    state: &mut MomentumState,
    triple: &OperatorTriple,
    kernel: &dyn Kernel,
) -> Result<(), SolverError> {
    let k = state.k;
    let y = &state.x * 2.0 - &state.x_prev;
    let b_y = triple.b.eval(&y);
    let c_cur = triple.c.eval(&state.x);
    let forward = -(b_y + c_cur);
    let x_next = kernel
        .backward(k, &state.x, &forward, &state.u)
        .map_err(kernel_err(k))?;
    let u_next = kernel.gm(k, &x_next) - kernel.gm(k, &state.x);
    state.u_prev = std::mem::replace(&mut state.u, u_next);
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.k += 1;
    Ok(())
}

/// One step of the momentum outer-reflected scheme:
/// `y_k = (M_k+A)⁻¹(M_k x_k − (B+C)x_k + γ⁻¹u_k)`,
/// `x_{k+1} = y_k − γS⁻¹Bx_k + γS⁻¹Bx_{k−1}`,
/// `u_{k+1} = (γM_k − S)y_k − (γM_k − S)x_k` (the backward point, not `x_{k+1}`).
pub fn step_alg3(
    state: &mut MomentumState,
    triple: &OperatorTriple,
    kernel: &dyn Kernel,
) -> Result<(), SolverError> {
    let k = state.k;
    let gamma = kernel.gamma(k);
    let b_cur = triple.b.eval(&state.x);
    let c_cur = triple.c.eval(&state.x);
    let forward = -(&b_cur + c_cur);
    let y = kernel
        .backward(k, &state.x, &forward, &state.u)
        .map_err(kernel_err(k))?;
    let b_prev = state.b_prev.take().unwrap_or_else(|| b_cur.clone());
    let db = &b_cur - b_prev;
    let x_next = &y - triple.metric.apply_inv(&db) * gamma;
    let u_next = kernel.gm(k, &y) - kernel.gm(k, &state.x);
    state.y_prev = Some(y);
    state.u_prev = std::mem::replace(&mut state.u, u_next);
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.b_prev = Some(b_cur);
    state.k += 1;
    Ok(())
}

/// One forward-reflected baseline step
/// `x_{k+1} = J_{γA}(x_k − 2γBx_k + γBx_{k−1} − γCx_k)`.
pub fn step_sfrbs(state: &mut ClassicState, triple: &OperatorTriple, gamma: f64) {
    let b_cur = triple.b.eval(&state.x);
    let c_cur = triple.c.eval(&state.x);
    let b_prev = state.b_prev.take().unwrap_or_else(|| b_cur.clone());
    let arg = &state.x - (&b_cur * 2.0 - b_prev + c_cur) * gamma;
    let x_next = triple.a.eval(gamma, &arg);
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.b_prev = Some(b_cur);
    state.k += 1;
}

/// One reflected baseline step
/// `x_{k+1} = J_{γA}(x_k − γB(2x_k − x_{k−1}) − γCx_k)`.
pub fn step_srfbs(state: &mut ClassicState, triple: &OperatorTriple, gamma: f64) {
    let y = &state.x * 2.0 - &state.x_prev;
    let b_y = triple.b.eval(&y);
    let c_cur = triple.c.eval(&state.x);
    let arg = &state.x - (b_y + c_cur) * gamma;
    let x_next = triple.a.eval(gamma, &arg);
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.k += 1;
}

/// One outer-reflected baseline step
/// `x_{k+1} = J_{γA}(x_k − γBx_k − γCx_k) − γ(Bx_k − Bx_{k−1})`.
pub fn step_orfbs(state: &mut ClassicState, triple: &OperatorTriple, gamma: f64) {
    let b_cur = triple.b.eval(&state.x);
    let c_cur = triple.c.eval(&state.x);
    let arg = &state.x - (&b_cur + c_cur) * gamma;
    let z = triple.a.eval(gamma, &arg);
    let b_prev = state.b_prev.take().unwrap_or_else(|| b_cur.clone());
    let x_next = z - (&b_cur - b_prev) * gamma;
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.b_prev = Some(b_cur);
    state.k += 1;
}

/// One half-forward baseline step
/// `y_k = J_{γ_kA}(x_k − γ_k(B+C)x_k)`, `x_{k+1} = y_k + γ_k(Bx_k − By_k)`;
/// two fresh B evaluations per iteration.
pub fn step_fbhf(state: &mut ClassicState, triple: &OperatorTriple, gamma_k: f64) {
    let b_x = triple.b.eval(&state.x);
    let c_x = triple.c.eval(&state.x);
    let arg = &state.x - (&b_x + c_x) * gamma_k;
    let y = triple.a.eval(gamma_k, &arg);
    let b_y = triple.b.eval(&y);
    let x_next = y + (b_x - b_y) * gamma_k;
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.k += 1;
}

/// One step of the four-operator forward-reflected scheme for
/// `0 ∈ (A₁+A₂)x + Bx + Cx` with `A₂` Lipschitz:
/// `x_{k+1} = J_{γA₁}(x_k − 2γA₂x_k − 2γBx_k + γBx_{k−1} + γA₂x_{k−1} − γCx_k)`.
pub fn step_four_op_sfrbs(
    state: &mut FourOpState,
    a1: &Resolvent,
    a2: &SingleValuedOp,
    b: &SingleValuedOp,
    c: &SingleValuedOp,
    gamma: f64,
) {
    let a2_cur = a2.eval(&state.x);
    let b_cur = b.eval(&state.x);
    let c_cur = c.eval(&state.x);
    let b_prev = state.b_prev.take().unwrap_or_else(|| b_cur.clone());
    let a2_prev = state.a2_x_prev.take().unwrap_or_else(|| a2_cur.clone());
    let arg = &state.x - (&a2_cur * 2.0 + &b_cur * 2.0 - b_prev - a2_prev + c_cur) * gamma;
    let x_next = a1.eval(gamma, &arg);
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.b_prev = Some(b_cur);
    state.a2_x_prev = Some(a2_cur);
    state.k += 1;
}

/// One step of the four-operator outer-reflected scheme:
/// `y_k = J_{γA₁}(x_k − γ(A₂+B+C)x_k − γ(A₂y_{k−1} − A₂x_{k−1}))`,
/// `x_{k+1} = y_k − γBx_k + γBx_{k−1}`.
pub fn step_new_orfbs(
    state: &mut FourOpState,
    a1: &Resolvent,
    a2: &SingleValuedOp,
    b: &SingleValuedOp,
    c: &SingleValuedOp,
    gamma: f64,
) {
    let a2_cur = a2.eval(&state.x);
    let b_cur = b.eval(&state.x);
    let c_cur = c.eval(&state.x);
    // y_{-1} = x_{-1} = x_0 seeds both caches from the current evaluation
    let a2_y_prev = state.a2_y_prev.take().unwrap_or_else(|| a2_cur.clone());
    let a2_x_prev = state.a2_x_prev.take().unwrap_or_else(|| a2_cur.clone());
    let arg = &state.x
        - (&a2_cur + &b_cur + c_cur) * gamma
        - (a2_y_prev - a2_x_prev) * gamma;
    let y = a1.eval(gamma, &arg);
    let b_prev = state.b_prev.take().unwrap_or_else(|| b_cur.clone());
    let x_next = &y - (&b_cur - b_prev) * gamma;
    state.a2_y_prev = Some(a2.eval(&y));
    state.a2_x_prev = Some(a2_cur);
    state.b_prev = Some(b_cur);
    state.y_prev = y;
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.k += 1;
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub k: usize,
    pub e_k: f64,
    pub step_norm: f64,
    pub cert: Option<f64>,
    pub dist: Option<f64>,
    pub elapsed_ms: f64,
}

/// One certificate evaluation along a run. `plain_slack` is the increase
/// over the previous value (nonpositive when the certificate decreases);
/// `strict_slack` additionally charges the theorem's decrease coefficient;
/// `lower_bound_gap` is the distance above the certified lower bound.
#[derive(Debug, Clone)]
pub struct CertRecord {
    pub k: usize,
    pub value: f64,
    pub plain_slack: Option<f64>,
    pub strict_slack: Option<f64>,
    pub lower_bound_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub passed: bool,
    pub summary: String,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<IterRecord>,
    pub cert_records: Vec<CertRecord>,
    pub status: RunStatus,
    pub iterations: usize,
    pub wall: Duration,
    pub condition_report: Option<ConditionReport>,
    pub final_x: Vector,
    pub final_u: Option<Vector>,
}

impl Trace {
    pub fn final_e_k(&self) -> f64 {
        self.records.last().map(|r| r.e_k).unwrap_or(f64::NAN)
    }

    /// CSV schema `k,E_k,step_norm,cert,dist,err_ms`; optional columns are
    /// left empty. All trajectory columns are deterministic for a fixed
    /// configuration and seed; `err_ms` carries wall-clock time and is the
    /// only nondeterministic column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,E_k,step_norm,cert,dist,err_ms")?;
        for r in &self.records {
            let cert = r.cert.map(|v| v.to_string()).unwrap_or_default();
            let dist = r.dist.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                r.k, r.e_k, r.step_norm, cert, dist, r.elapsed_ms
            )?;
        }
        Ok(())
    }

    pub fn summary(&self, algorithm: Algorithm, objective: Option<f64>) -> RunSummary {
        RunSummary {
            algorithm: algorithm.name().to_string(),
            status: self.status,
            iters: self.iterations,
            time_s: self.wall.as_secs_f64(),
            objective,
            final_ek: self.final_e_k(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub status: RunStatus,
    pub iters: usize,
    pub time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(rename = "final_Ek")]
    pub final_ek: f64,
}

// ---------------------------------------------------------------------------
// Engine: uniform stepping over all algorithms
// ---------------------------------------------------------------------------

enum Engine {
    Momentum {
        variant: Algorithm,
        kernel: Arc<dyn Kernel>,
        state: MomentumState,
    },
    Classic {
        variant: Algorithm,
        gamma: f64,
        state: ClassicState,
    },
    FourOp {
        variant: Algorithm,
        gamma: f64,
        a2: Arc<SingleValuedOp>,
        state: FourOpState,
    },
}

impl Engine {
    fn new(
        config: &SolverConfig,
        triple: &OperatorTriple,
        x0: Vector,
        u0: Option<Vector>,
    ) -> Result<Self, SolverError> {
        if !(config.gamma > 0.0) && config.kernel.is_none() {
            return Err(SolverError::Config(format!(
                "step size must be positive, got {}",
                config.gamma
            )));
        }
        if x0.len() != triple.dim {
            return Err(SolverError::Config(format!(
                "initial point dimension {} does not match problem dimension {}",
                x0.len(),
                triple.dim
            )));
        }
        if !all_finite(&x0) {
            return Err(SolverError::NonFinite { iteration: 0 });
        }
        let alg = config.algorithm;
        if alg.is_momentum() {
            let kernel: Arc<dyn Kernel> = match &config.kernel {
                Some(k) => Arc::clone(k),
                None => Arc::new(
                    ClassicKernel::new(
                        Arc::clone(&triple.a),
                        Arc::clone(&triple.metric),
                        config.gamma,
                    )
                    .map_err(kernel_err(0))?,
                ),
            };
            let state = MomentumState::new(triple, x0, u0)?;
            Ok(Engine::Momentum {
                variant: alg,
                kernel,
                state,
            })
        } else if alg.is_four_op() {
            let a2 = config.four_op_a2.clone().ok_or_else(|| {
                SolverError::Config(format!(
                    "algorithm {alg} needs the Lipschitz part A2 (SolverConfig::four_op_a2)"
                ))
            })?;
            Ok(Engine::FourOp {
                variant: alg,
                gamma: config.gamma,
                a2,
                state: FourOpState::new(x0),
            })
        } else {
            Ok(Engine::Classic {
                variant: alg,
                gamma: config.gamma,
                state: ClassicState::new(x0),
            })
        }
    }

    fn step(&mut self, triple: &OperatorTriple) -> Result<(), SolverError> {
        match self {
            Engine::Momentum {
                variant,
                kernel,
                state,
            } => match variant {
                Algorithm::Alg1 => step_alg1(state, triple, kernel.as_ref()),
                Algorithm::Alg2 => step_alg2(state, triple, kernel.as_ref()),
                Algorithm::Alg3 => step_alg3(state, triple, kernel.as_ref()),
                _ => unreachable!("momentum engine holds a momentum variant"),
            },
            Engine::Classic {
                variant,
                gamma,
                state,
            } => {
                match variant {
                    Algorithm::Sfrbs => step_sfrbs(state, triple, *gamma),
                    Algorithm::Srfbs => step_srfbs(state, triple, *gamma),
                    Algorithm::Orfbs => step_orfbs(state, triple, *gamma),
                    Algorithm::Fbhf => step_fbhf(state, triple, *gamma),
                    _ => unreachable!("classic engine holds a classic variant"),
                }
                Ok(())
            }
            Engine::FourOp {
                variant,
                gamma,
                a2,
                state,
            } => {
                match variant {
                    Algorithm::FourOpSfrbs => {
                        step_four_op_sfrbs(state, &triple.a, a2, &triple.b, &triple.c, *gamma)
                    }
                    Algorithm::NewOrfbs => {
                        step_new_orfbs(state, &triple.a, a2, &triple.b, &triple.c, *gamma)
                    }
                    _ => unreachable!("four-op engine holds a four-op variant"),
                }
                Ok(())
            }
        }
    }

    fn x(&self) -> &Vector {
        match self {
            Engine::Momentum { state, .. } => &state.x,
            Engine::Classic { state, .. } => &state.x,
            Engine::FourOp { state, .. } => &state.x,
        }
    }

    fn x_prev(&self) -> &Vector {
        match self {
            Engine::Momentum { state, .. } => &state.x_prev,
            Engine::Classic { state, .. } => &state.x_prev,
            Engine::FourOp { state, .. } => &state.x_prev,
        }
    }

    fn u(&self) -> Option<&Vector> {
        match self {
            Engine::Momentum { state, .. } => Some(&state.u),
            _ => None,
        }
    }

    fn u_prev(&self) -> Option<&Vector> {
        match self {
            Engine::Momentum { state, .. } => Some(&state.u_prev),
            _ => None,
        }
    }

    fn y_prev(&self) -> Option<&Vector> {
        match self {
            Engine::Momentum { state, .. } => state.y_prev.as_ref(),
            Engine::FourOp { state, .. } => Some(&state.y_prev),
            _ => None,
        }
    }

    fn k(&self) -> usize {
        match self {
            Engine::Momentum { state, .. } => state.k,
            Engine::Classic { state, .. } => state.k,
            Engine::FourOp { state, .. } => state.k,
        }
    }
}

// ---------------------------------------------------------------------------
// Condition derivation and reporting
// ---------------------------------------------------------------------------

/// Populate a [`ConstantSet`] from the problem and kernel, with neutral
/// defaults for the auxiliary constants the theorems leave free.
pub fn derive_constants(
    triple: &OperatorTriple,
    kernel: Option<&dyn Kernel>,
    gamma: f64,
) -> ConstantSet {
    let (g0, g1, l0) = match kernel {
        Some(k) => (k.gamma(0), k.gamma(1), k.lipschitz_l(0)),
        None => (gamma, gamma, 0.0),
    };
    let mut c = ConstantSet::new(triple.mu(), triple.beta().unwrap_or(0.0), g0)
        .with_gamma_next(g1)
        .with_l(l0);
    c.eps2.get_or_insert(1.0);
    c.eps5.get_or_insert(1.0);
    c.eps6.get_or_insert(1.0);
    c.eps7.get_or_insert(0.5);
    c.alpha.get_or_insert(1.0);
    c
}

fn condition_report(alg: Algorithm, c: &ConstantSet) -> ConditionReport {
    match alg {
        Algorithm::Alg1 | Algorithm::Sfrbs | Algorithm::FourOpSfrbs => {
            let m = check_alg1(c);
            ConditionReport {
                passed: m >= 0.0,
                summary: format!("margin={m:.6e}"),
            }
        }
        Algorithm::Alg2 | Algorithm::Srfbs => match check_alg2(c) {
            Ok((m1, m2)) => ConditionReport {
                passed: m1 >= 0.0 && m2 >= 0.0,
                summary: format!("margin1={m1:.6e} margin2={m2:.6e}"),
            },
            Err(e) => ConditionReport {
                passed: false,
                summary: e.to_string(),
            },
        },
        Algorithm::Alg3 | Algorithm::Orfbs | Algorithm::NewOrfbs => match check_alg3(c) {
            Ok(chk) => {
                let in_window = c.gamma >= chk.gamma_window.lo && c.gamma <= chk.gamma_window.hi;
                ConditionReport {
                    passed: chk.margin_i >= 0.0 && chk.margin_ii > 0.0 && in_window,
                    summary: format!(
                        "margin_i={:.6e} margin_ii={:.6e} window=[{:.6e},{:.6e}] gamma_in_window={}",
                        chk.margin_i, chk.margin_ii, chk.gamma_window.lo, chk.gamma_window.hi,
                        in_window
                    ),
                }
            }
            Err(e) => ConditionReport {
                passed: false,
                summary: e.to_string(),
            },
        },
        Algorithm::Fbhf => {
            let chi = fbhf_chi(c.mu, c.beta);
            ConditionReport {
                passed: c.gamma > 0.0 && c.gamma < chi,
                summary: format!("chi={chi:.6e} gamma={:.6e}", c.gamma),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Certificate observer
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum CertKind {
    Psi,
    Xi,
    SCert,
}

struct CertObserver {
    ctx: CertContext,
    kind: CertKind,
    prev_value: Option<f64>,
    // snapshot of (x_{k-1}, u_{k-1}) one record ago, i.e. x_{k-2}/u_{k-2}
    // relative to the newest state
    window_x: Option<Vector>,
    window_u: Option<Vector>,
    records: Vec<CertRecord>,
}

impl CertObserver {
    fn new(ctx: CertContext, alg: Algorithm) -> Result<Self, SolverError> {
        let kind = match alg {
            Algorithm::Alg1 | Algorithm::Sfrbs => CertKind::Psi,
            Algorithm::Alg2 | Algorithm::Srfbs => CertKind::Xi,
            Algorithm::Alg3 | Algorithm::Orfbs => CertKind::SCert,
            _ => {
                return Err(SolverError::Config(format!(
                    "no certificate is defined for algorithm {alg}; run the equivalent kernel \
                     formulation instead"
                )))
            }
        };
        Ok(CertObserver {
            ctx,
            kind,
            prev_value: None,
            window_x: None,
            window_u: None,
            records: Vec::new(),
        })
    }

    /// Evaluate the certificate at the engine's freshest state and record
    /// the decrease slack against the previous evaluation.
    fn observe(&mut self, engine: &Engine) -> Option<f64> {
        let zero_u;
        let u = match engine.u() {
            Some(u) => u,
            None => {
                zero_u = Vector::zeros(engine.x().len());
                &zero_u
            }
        };
        let zero_up;
        let u_prev = match engine.u_prev() {
            Some(u) => u,
            None => {
                zero_up = Vector::zeros(engine.x().len());
                &zero_up
            }
        };
        let snap = CertSnapshot {
            k: engine.k(),
            x: engine.x(),
            x_prev: engine.x_prev(),
            x_prev2: self.window_x.as_ref(),
            u,
            u_prev: Some(u_prev),
            y_prev: engine.y_prev(),
        };
        let value = match self.kind {
            CertKind::Psi => psi(&self.ctx, &snap).ok(),
            CertKind::Xi => xi(&self.ctx, &snap).ok(),
            CertKind::SCert => s_cert(&self.ctx, &snap).ok(),
        };
        if let Some(value) = value {
            let (strict_slack, lower_bound_gap) = self.strict_terms(&snap, value);
            let plain_slack = self.prev_value.map(|p| value - p);
            self.records.push(CertRecord {
                k: engine.k(),
                value,
                plain_slack,
                strict_slack: self.prev_value.and(strict_slack),
                lower_bound_gap,
            });
            self.prev_value = Some(value);
        }
        self.window_x = Some(engine.x_prev().clone());
        self.window_u = engine.u_prev().cloned();
        value
    }

    /// The theorem-backed decrease charge and lower bound for the newest
    /// transition.
    fn strict_terms(&self, snap: &CertSnapshot<'_>, value: f64) -> (Option<f64>, Option<f64>) {
        let m = &self.ctx.metric;
        let c = &self.ctx.constants;
        let dstep = snap.x - snap.x_prev;
        let step_sq = match m.s_norm(&dstep) {
            Ok(v) => v * v,
            Err(_) => return (None, None),
        };
        let dist_sq = match m.s_norm(&(snap.x - &self.ctx.x_star)) {
            Ok(v) => v * v,
            Err(_) => return (None, None),
        };
        match self.kind {
            CertKind::Psi => {
                let strict = self
                    .prev_value
                    .map(|p| value - p + alg1_decrease_coeff(c) * step_sq);
                let lower = (1.0 - c.l_prev - c.gamma * c.mu) * dist_sq;
                (strict, Some(value - lower))
            }
            CertKind::Xi => {
                let e2 = c.eps2.unwrap_or(1.0);
                let (p_coeff, q_coeff) = alg2_decrease_coeffs(c, e2);
                // y_k of the transition just taken is the reflection of the
                // previous pair, which the observer still holds
                let strict = match (self.prev_value, self.window_x.as_ref()) {
                    (Some(pv), Some(x_prev2)) => {
                        let y_k = snap.x_prev * 2.0 - x_prev2;
                        match m.s_norm(&(snap.x - &y_k)) {
                            Ok(n) => Some(value - pv + p_coeff * step_sq + q_coeff * n * n),
                            Err(_) => None,
                        }
                    }
                    _ => None,
                };
                let lower = (1.0 - c.l_prev - c.gamma * c.mu) * dist_sq
                    + (1.0 + c.gamma * c.beta / e2 - c.l_prev2 + (SQRT2 - 1.0) * c.gamma * c.mu)
                        * step_sq;
                (strict, Some(value - lower))
            }
            CertKind::SCert => {
                let (e5, e6, alpha) = (
                    c.eps5.unwrap_or(1.0),
                    c.eps6.unwrap_or(1.0),
                    c.alpha.unwrap_or(1.0),
                );
                let nu = alg3_decrease_coeff(c, e5, e6, alpha);
                let strict = match (self.prev_value, snap.y_prev) {
                    (Some(pv), Some(y)) => match m.s_norm(&(y - snap.x_prev)) {
                        Ok(n) => Some(value - pv + nu * n * n),
                        Err(_) => None,
                    },
                    _ => None,
                };
                (strict, None)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The run driver
// ---------------------------------------------------------------------------

const DIVERGENCE_NORM: f64 = 1e12;

/// Drive any configured algorithm from `(x0, u0)` under the stopping rule,
/// recording one trace row per iteration. Condition violations warn (via the
/// trace report), they do not abort. Divergence (non-finite state or norm
/// above 1e12) stops the run with the last finite iterate.
pub fn run(
    config: &SolverConfig,
    triple: &OperatorTriple,
    x0: &Vector,
    u0: Option<&Vector>,
) -> Result<Trace, SolverError> {
    let mut engine = Engine::new(config, triple, x0.clone(), u0.cloned())?;

    let condition_report = if config.check_conditions {
        let kernel_ref = match &engine {
            Engine::Momentum { kernel, .. } => Some(kernel.as_ref()),
            _ => None,
        };
        let mut constants = config
            .constants
            .clone()
            .unwrap_or_else(|| derive_constants(triple, kernel_ref, config.gamma));
        if config.algorithm.is_four_op() {
            if let Some(a2) = &config.four_op_a2 {
                let l = (config.gamma * a2.lipschitz_mu).min(1.0 - 1e-12);
                constants = constants.with_l(l);
            }
        }
        Some(condition_report(config.algorithm, &constants))
    } else {
        None
    };

    let mut observer = if config.record_certificates {
        let x_star = match &config.known_solution {
            Some(x) => x.clone(),
            None => {
                return Err(SolverError::CertReference(
                    "certificate recording needs a reference zero; supply known_solution or use \
                     run_certified"
                        .into(),
                ))
            }
        };
        let kernel = match &engine {
            Engine::Momentum { kernel, .. } => Some(Arc::clone(kernel)),
            _ => None,
        };
        let constants = config
            .constants
            .clone()
            .unwrap_or_else(|| derive_constants(triple, kernel.as_deref(), config.gamma));
        let ctx = CertContext::new(
            x_star,
            Arc::clone(&triple.b),
            Arc::clone(&triple.metric),
            constants,
            kernel,
        );
        Some(CertObserver::new(ctx, config.algorithm)?)
    } else {
        None
    };

    let mut records = Vec::new();
    let mut status = RunStatus::MaxIter;
    let start = Instant::now();
    for it in 0..config.stop.max_iter {
        let x_old = engine.x().clone();
        engine.step(triple)?;
        let x_new = engine.x();

        if !all_finite(x_new) || x_new.norm() > DIVERGENCE_NORM {
            // keep the last finite iterate in the trace tail
            status = RunStatus::Diverged;
            let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            records.push(IterRecord {
                k: it,
                e_k: f64::INFINITY,
                step_norm: f64::INFINITY,
                cert: None,
                dist: None,
                elapsed_ms,
            });
            let wall = start.elapsed();
            return Ok(Trace {
                records,
                cert_records: observer.map(|o| o.records).unwrap_or_default(),
                status,
                iterations: it + 1,
                wall,
                condition_report,
                final_x: x_old,
                final_u: engine.u().cloned(),
            });
        }

        let diff_norm = (x_new - &x_old).norm();
        let base = x_old.norm();
        let e_k = if base > 0.0 { diff_norm / base } else { diff_norm };
        let step_norm = triple.metric.s_norm(&(x_new - &x_old))?;
        let cert = observer.as_mut().and_then(|o| o.observe(&engine));
        let dist = match &config.known_solution {
            Some(xs) => Some(triple.metric.s_norm(&(x_new - xs))?),
            None => None,
        };
        records.push(IterRecord {
            k: it,
            e_k,
            step_norm,
            cert,
            dist,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        if e_k < config.stop.rel_change_tol {
            status = RunStatus::Converged;
            break;
        }
        if let Some(rt) = config.stop.residual_tol {
            if step_norm <= rt {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    let wall = start.elapsed();
    let iterations = records.len();
    Ok(Trace {
        records,
        cert_records: observer.map(|o| o.records).unwrap_or_default(),
        status,
        iterations,
        wall,
        condition_report,
        final_x: engine.x().clone(),
        final_u: engine.u().cloned(),
    })
}

/// Solve to a reference accuracy: same configuration with the tolerance
/// tightened 10× and the iteration cap raised 10×. Errors unless the run
/// converges.
pub fn oversolve(
    config: &SolverConfig,
    triple: &OperatorTriple,
    x0: &Vector,
    u0: Option<&Vector>,
) -> Result<Vector, SolverError> {
    let mut c = config.clone();
    c.record_certificates = false;
    c.known_solution = None;
    c.check_conditions = false;
    c.stop.rel_change_tol = config.stop.rel_change_tol * 0.1;
    c.stop.max_iter = config.stop.max_iter.saturating_mul(10);
    let trace = run(&c, triple, x0, u0)?;
    if trace.status != RunStatus::Converged {
        return Err(SolverError::CertReference(format!(
            "reference over-solve did not converge (status {:?} after {} iterations)",
            trace.status, trace.iterations
        )));
    }
    Ok(trace.final_x)
}

/// One-step stationarity residual `‖x − step(x)‖₂` of the configured
/// algorithm at `x` (momentum seeded with `u = 0`). Small residuals certify
/// `x` as a zero the way the certificate machinery requires.
pub fn one_step_residual(
    config: &SolverConfig,
    triple: &OperatorTriple,
    x: &Vector,
) -> Result<f64, SolverError> {
    let mut engine = Engine::new(config, triple, x.clone(), None)?;
    engine.step(triple)?;
    Ok((engine.x() - x).norm())
}

/// Run with the certificate observer attached, deriving the reference zero
/// by over-solving when the configuration does not carry one. The reference
/// is verified by one-step stationarity at tolerance `ref_tol` before use.
pub fn run_certified(
    config: &SolverConfig,
    triple: &OperatorTriple,
    x0: &Vector,
    u0: Option<&Vector>,
    ref_tol: f64,
) -> Result<Trace, SolverError> {
    let x_star = match &config.known_solution {
        Some(x) => x.clone(),
        None => oversolve(config, triple, x0, u0)?,
    };
    let resid = one_step_residual(config, triple, &x_star)?;
    if resid > ref_tol {
        return Err(SolverError::CertReference(format!(
            "reference point fails one-step stationarity: residual {resid:.3e} > {ref_tol:.3e}"
        )));
    }
    let mut c = config.clone();
    c.record_certificates = true;
    c.known_solution = Some(x_star);
    run(&c, triple, x0, u0)
}
