//! Shared oracles and instance builders for the integration suites. The
//! oracles are deliberately independent of the library's computational
//! paths: exhaustive KKT enumeration, dense active-set QP solves and finite
//! differences.

#![allow(dead_code)]

use nalgebra::DMatrix;
use opsplit::metric::{Metric, Vector};
use opsplit::operators::{matrix_norm, OperatorTriple, Resolvent, SingleValuedOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

// ---------------------------------------------------------------------------
// Instance builders
// ---------------------------------------------------------------------------

/// Skew linear operator `x ↦ Kx` with `K = −Kᵀ` scaled to `‖K‖ = mu`.
pub fn skew_matrix(n: usize, seed: u64, mu: f64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let raw = DMatrix::<f64>::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let skew = (&raw - raw.transpose()) * 0.5;
    let norm = matrix_norm(&skew).value;
    skew * (mu / norm)
}

/// Monotone linear operator (PSD symmetric part plus a skew part) scaled to
/// the requested spectral norm.
pub fn monotone_matrix(n: usize, seed: u64, norm: f64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let raw = DMatrix::<f64>::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let psd = &raw * raw.transpose() * (0.5 / n as f64);
    let skew = (&raw - raw.transpose()) * 0.25;
    let k = psd + skew;
    let nk = matrix_norm(&k).value;
    k * (norm / nk)
}

/// Gradient matrix `G` scaled so that `‖G‖² = beta`.
pub fn gradient_matrix(n: usize, seed: u64, beta: f64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let ng = matrix_norm(&g).value;
    g * (beta.sqrt() / ng)
}

pub struct BoxInstance {
    pub triple: OperatorTriple,
    pub x0: Vector,
    pub mu: f64,
    pub beta: f64,
}

/// A box-constrained test inclusion on `[0,1]^n`: `A = N_box (+ ρ·Id)`,
/// `B` skew with `‖B‖ = mu`, `C = ∇½‖Gx − b‖²` with `‖G‖² = beta`.
pub fn box_instance(n: usize, seed: u64, mu: f64, beta: f64, rho: f64) -> BoxInstance {
    let mut r = rng(seed ^ 0xB0BA);
    let k = Arc::new(skew_matrix(n, seed, mu));
    let g = Arc::new(gradient_matrix(n, seed ^ 1, beta));
    let b_data = rand_vec(&mut r, n, -1.0, 1.0);
    let box_res = Arc::new(Resolvent::box_projection(0.0, 1.0).unwrap());
    let a: Arc<Resolvent> = if rho > 0.0 {
        Arc::new(Resolvent::strongly_monotone_shift(box_res, rho))
    } else {
        box_res
    };
    let b_op = Arc::new(SingleValuedOp::linear(Arc::clone(&k)));
    let c_op = Arc::new(SingleValuedOp::quad_gradient(Arc::clone(&g), b_data, 0));
    let mu = b_op.lipschitz_mu;
    let beta = c_op.cocoercivity_beta.unwrap();
    let triple = OperatorTriple::new(a, b_op, c_op, Arc::new(Metric::identity(n)), n);
    let x0 = rand_vec(&mut r, n, 0.0, 1.0);
    BoxInstance {
        triple,
        x0,
        mu,
        beta,
    }
}

// ---------------------------------------------------------------------------
// Capped-simplex projection oracle: exhaustive KKT enumeration
// ---------------------------------------------------------------------------

/// Brute-force projection onto `{x : Σx = 1, 0 ≤ x ≤ 1}` by enumerating all
/// 3^n lower/free/upper activity patterns, solving each pattern's KKT system
/// and keeping the feasible candidate of least distance.
pub fn capped_simplex_oracle(z: &Vector) -> Vector {
    let n = z.len();
    assert!(n >= 1 && n <= 12, "oracle is exponential in n");
    let mut best: Option<(f64, Vector)> = None;
    let mut consider = |x: Vector| {
        if x.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
            return;
        }
        if (x.sum() - 1.0).abs() > 1e-9 {
            return;
        }
        let obj = (&x - z).norm_squared();
        if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
            best = Some((obj, x));
        }
    };
    for pattern in 0..3usize.pow(n as u32) {
        let mut p = pattern;
        let mut lower = Vec::new();
        let mut free = Vec::new();
        let mut upper = Vec::new();
        for i in 0..n {
            match p % 3 {
                0 => lower.push(i),
                1 => free.push(i),
                _ => upper.push(i),
            }
            p /= 3;
        }
        if free.is_empty() {
            // all coordinates pinned: sum must be exactly the upper count
            if upper.len() != 1 {
                continue;
            }
            // KKT multiplier signs: τ ≥ z_i on the lower set, τ ≤ z_i − 1 on
            // the upper set; a valid τ exists iff the bracket is nonempty
            let tau_lo = lower.iter().map(|&i| z[i]).fold(f64::NEG_INFINITY, f64::max);
            let tau_hi = upper.iter().map(|&i| z[i] - 1.0).fold(f64::INFINITY, f64::min);
            if tau_lo > tau_hi + 1e-12 {
                continue;
            }
            let mut x = Vector::zeros(n);
            for &i in &upper {
                x[i] = 1.0;
            }
            consider(x);
            continue;
        }
        let sum_free: f64 = free.iter().map(|&i| z[i]).sum();
        let tau = (sum_free + upper.len() as f64 - 1.0) / free.len() as f64;
        // KKT sign conditions for the pinned coordinates
        if lower.iter().any(|&i| tau < z[i] - 1e-12) {
            continue;
        }
        if upper.iter().any(|&i| tau > z[i] - 1.0 + 1e-12) {
            continue;
        }
        let mut x = Vector::zeros(n);
        let mut ok = true;
        for &i in &free {
            let v = z[i] - tau;
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                ok = false;
                break;
            }
            x[i] = v.clamp(0.0, 1.0);
        }
        if !ok {
            continue;
        }
        for &i in &upper {
            x[i] = 1.0;
        }
        consider(x);
    }
    best.expect("the capped simplex is nonempty for n >= 1").1
}

// ---------------------------------------------------------------------------
// Small dense QP oracle: active-set enumeration
// ---------------------------------------------------------------------------

/// Solve `min ½xᵀHx` subject to `Σx = 1`, `0 ≤ x ≤ 1` and `Dx + b ≤ 0` by
/// enumerating active sets of the inequality constraints and solving each
/// KKT system densely. Exponential in the constraint count; intended for
/// n ≤ 6 cross-checks. Returns the best KKT-consistent point.
pub fn small_qp_oracle(h: &DMatrix<f64>, d: &DMatrix<f64>, b: &Vector) -> Option<(Vector, f64)> {
    let n = h.ncols();
    let q = d.nrows();
    // inequality rows: Dx + b ≤ 0, then −x ≤ 0, then x − 1 ≤ 0
    let total = q + 2 * n;
    let ineq_row = |idx: usize| -> (Vector, f64) {
        if idx < q {
            (Vector::from(d.row(idx).transpose()), b[idx])
        } else if idx < q + n {
            let mut r = Vector::zeros(n);
            r[idx - q] = -1.0;
            (r, 0.0)
        } else {
            let mut r = Vector::zeros(n);
            r[idx - q - n] = 1.0;
            (r, -1.0)
        }
    };
    let feasible = |x: &Vector| -> bool {
        if (x.sum() - 1.0).abs() > 1e-8 {
            return false;
        }
        (0..total).all(|i| {
            let (row, c) = ineq_row(i);
            row.dot(x) + c <= 1e-8
        })
    };
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0..(1usize << total) {
        let active: Vec<usize> = (0..total).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let rows = 1 + active.len();
        let dim = n + rows;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = Vector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        // equality Σx = 1
        for j in 0..n {
            kkt[(n, j)] = 1.0;
            kkt[(j, n)] = 1.0;
        }
        rhs[n] = 1.0;
        for (ai, &idx) in active.iter().enumerate() {
            let (row, c) = ineq_row(idx);
            for j in 0..n {
                kkt[(n + 1 + ai, j)] = row[j];
                kkt[(j, n + 1 + ai)] = row[j];
            }
            rhs[n + 1 + ai] = -c;
        }
        let lu = kkt.lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        let x = Vector::from(sol.rows(0, n));
        if x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        // multipliers of active inequalities must be nonnegative under the
        // +λ·row convention used in the KKT assembly
        let lambdas = sol.rows(n + 1, active.len());
        if lambdas.iter().any(|&l| l < -1e-8) {
            continue;
        }
        if !feasible(&x) {
            continue;
        }
        let obj = 0.5 * (h * &x).dot(&x);
        if best.as_ref().map(|(bo, _)| obj < *bo).unwrap_or(true) {
            best = Some((obj, x));
        }
    }
    best.map(|(obj, x)| (x, obj))
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let n = x.len();
    Vector::from_fn(n, |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}
