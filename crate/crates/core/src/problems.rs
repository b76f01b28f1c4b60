//! Concrete problem builders: the random constrained-QP saddle-point family
//! and the mean-variance portfolio problem with dataset ingestion, each
//! exposed as an [`OperatorTriple`] on the concatenated primal-dual vector
//! (optionally with the saddle part split in halves for the four-operator
//! schemes).

use crate::metric::{Metric, Vector};
use crate::operators::{
    project_capped_simplex, OperatorTriple, Resolvent, SingleValuedOp,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Random constrained QP (saddle form)
// ---------------------------------------------------------------------------

/// A randomly generated constrained least-squares instance in saddle form:
/// minimize `½‖Gx − b‖²` over the box `[0,1]^N` subject to `Dx ≤ 0`,
/// solved through the primal-dual inclusion on `(x, u) ∈ R^{N+q}`.
#[derive(Clone)]
pub struct QpInstance {
    pub g: Arc<DMatrix<f64>>,
    pub d: Arc<DMatrix<f64>>,
    pub b: Vector,
    pub seed: u64,
    pub m: usize,
    pub q: usize,
    /// `‖D‖`, the Lipschitz constant of the saddle part.
    pub mu: f64,
    /// `‖G‖²`, the cocoercivity constant of the smooth part.
    pub beta: f64,
    /// Initial point `(x_0, u_0)`: `x_0` uniform in `[0,1]^N`, `u_0 = 0`.
    pub x0: Vector,
}

impl QpInstance {
    pub fn n(&self) -> usize {
        2 * self.m
    }

    pub fn dim(&self) -> usize {
        self.n() + self.q
    }

    /// `½‖Gx − b‖²` at the primal block of `z`.
    pub fn objective(&self, z: &Vector) -> f64 {
        let x = Vector::from(z.rows(0, self.n()));
        0.5 * (&*self.g * x - &self.b).norm_squared()
    }
}

/// Deterministically generate a QP instance (`N = 2m` primal variables,
/// `q` constraints) and its operator triple. Matrix entries are i.i.d.
/// standard normal scaled by `1/√N`, `b` standard normal, drawn in a fixed
/// row-major order from a counter-based generator seeded with `seed`.
pub fn build_qp(
    m: usize,
    q: usize,
    seed: u64,
) -> Result<(QpInstance, OperatorTriple), ProblemError> {
    if m < 1 || q < 1 {
        return Err(ProblemError::Argument(format!(
            "need m >= 1 and q >= 1, got m={m} q={q}"
        )));
    }
    let n = 2 * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut g = DMatrix::<f64>::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            g[(i, j)] = z * scale;
        }
    }
    let mut d = DMatrix::<f64>::zeros(q, n);
    for i in 0..q {
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            d[(i, j)] = z * scale;
        }
    }
    let b = Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x0 = Vector::zeros(n + q);
    for i in 0..n {
        x0[i] = rng.gen_range(0.0..1.0);
    }
    let g = Arc::new(g);
    let d = Arc::new(d);

    let a = Arc::new(Resolvent::split_at(
        n,
        |_gamma, zx| zx.map(|v| v.clamp(0.0, 1.0)),
        |_gamma, zu| zu.map(|v| v.max(0.0)),
    ));
    let b_op = Arc::new(SingleValuedOp::saddle(Arc::clone(&d), Vector::zeros(q)));
    let c_op = Arc::new(SingleValuedOp::quad_gradient(Arc::clone(&g), b.clone(), q));
    let mu = b_op.lipschitz_mu;
    let beta = c_op.cocoercivity_beta.expect("quad gradient carries beta");
    let metric = Arc::new(Metric::identity(n + q));
    let triple = OperatorTriple::new(a, b_op, c_op, metric, n + q);
    let inst = QpInstance {
        g,
        d,
        b,
        seed,
        m,
        q,
        mu,
        beta,
        x0,
    };
    Ok((inst, triple))
}

/// Rebuild a triple with the saddle part split in halves: returns the triple
/// carrying `B₂` as its Lipschitz part and `B₁` separately, for the
/// four-operator schemes (`A₂ := B₁`).
pub fn four_op_setup(triple: &OperatorTriple) -> (OperatorTriple, Arc<SingleValuedOp>) {
    let (b1, b2) = crate::operators::split_half(&triple.b);
    let t = OperatorTriple::new(
        Arc::clone(&triple.a),
        Arc::new(b2),
        Arc::clone(&triple.c),
        Arc::clone(&triple.metric),
        triple.dim,
    );
    (t, Arc::new(b1))
}

// ---------------------------------------------------------------------------
// Portfolio problem
// ---------------------------------------------------------------------------

/// Parsed dataset: expected returns and the covariance matrix.
#[derive(Debug, Clone)]
pub struct PortfolioData {
    pub means: Vector,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// OR-Library portfolio layout: asset count; `mean stddev` per asset;
    /// `i j correlation` triples.
    OrLibraryPort,
    /// CSV: first row the means, then the covariance matrix row by row.
    CsvCov,
}

/// Infer the dataset format from the file extension (`.csv` means the CSV
/// covariance layout, anything else the OR-Library layout).
pub fn infer_format(path: &Path) -> DatasetFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => DatasetFormat::CsvCov,
        _ => DatasetFormat::OrLibraryPort,
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<PortfolioData, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        DatasetFormat::OrLibraryPort => parse_or_library(&text),
        DatasetFormat::CsvCov => parse_csv_cov(&text),
    }
}

/// Parse the OR-Library portfolio layout. Correlation lines may omit
/// self-pairs; the diagonal is seeded from the standard deviations. The
/// assembled covariance `H_ij = corr_ij·σ_i·σ_j` is symmetrized and checked
/// for positive semidefiniteness (smallest eigenvalue ≥ −1e-10).
pub fn parse_or_library(text: &str) -> Result<PortfolioData, ProblemError> {
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push((lineno + 1, tok));
        }
    }
    struct Cursor<'a> {
        tokens: &'a [(usize, &'a str)],
        pos: usize,
    }
    impl Cursor<'_> {
        fn next(&mut self, what: &str) -> Result<(usize, f64), ProblemError> {
            let (line, tok) = *self.tokens.get(self.pos).ok_or(ProblemError::Parse {
                line: self.tokens.last().map(|t| t.0).unwrap_or(0),
                msg: format!("unexpected end of file while reading {what}"),
            })?;
            self.pos += 1;
            let v = tok.parse::<f64>().map_err(|_| ProblemError::Parse {
                line,
                msg: format!("expected a number for {what}, got `{tok}`"),
            })?;
            Ok((line, v))
        }

        fn exhausted(&self) -> bool {
            self.pos >= self.tokens.len()
        }
    }
    let mut cursor = Cursor {
        tokens: &tokens,
        pos: 0,
    };

    let (line0, n_raw) = cursor.next("asset count")?;
    if n_raw.fract() != 0.0 || n_raw < 1.0 {
        return Err(ProblemError::Parse {
            line: line0,
            msg: format!("asset count must be a positive integer, got {n_raw}"),
        });
    }
    let n = n_raw as usize;
    let mut means = Vector::zeros(n);
    let mut sigma = Vector::zeros(n);
    for i in 0..n {
        means[i] = cursor.next("asset mean")?.1;
        let (line, s) = cursor.next("asset stddev")?;
        if s < 0.0 {
            return Err(ProblemError::Parse {
                line,
                msg: format!("standard deviation must be nonnegative, got {s}"),
            });
        }
        sigma[i] = s;
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = sigma[i] * sigma[i];
    }
    while !cursor.exhausted() {
        let (line, i_raw) = cursor.next("correlation row index")?;
        let (_, j_raw) = cursor.next("correlation column index")?;
        let (cl, corr) = cursor.next("correlation value")?;
        let (i, j) = (i_raw as usize, j_raw as usize);
        if i_raw.fract() != 0.0 || j_raw.fract() != 0.0 || i < 1 || j < 1 || i > n || j > n {
            return Err(ProblemError::Parse {
                line,
                msg: format!("correlation indices ({i_raw}, {j_raw}) out of range 1..={n}"),
            });
        }
        if !(-1.0..=1.0).contains(&corr) {
            return Err(ProblemError::Parse {
                line: cl,
                msg: format!("correlation {corr} outside [-1, 1]"),
            });
        }
        let v = corr * sigma[i - 1] * sigma[j - 1];
        cov[(i - 1, j - 1)] = v;
        cov[(j - 1, i - 1)] = v;
    }
    check_psd(&cov)?;
    Ok(PortfolioData { means, cov })
}

/// Parse the CSV covariance layout: first row the means, then `n` rows of
/// the covariance matrix.
pub fn parse_csv_cov(text: &str) -> Result<PortfolioData, ProblemError> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut vals = Vec::new();
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            vals.push(tok.parse::<f64>().map_err(|_| ProblemError::Parse {
                line: lineno + 1,
                msg: format!("expected a number, got `{tok}`"),
            })?);
        }
        rows.push((lineno + 1, vals));
    }
    let (first_line, means_row) = rows.first().ok_or(ProblemError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let n = means_row.len();
    if rows.len() != n + 1 {
        return Err(ProblemError::Parse {
            line: *first_line,
            msg: format!(
                "expected {n} covariance rows after the means row, found {}",
                rows.len() - 1
            ),
        });
    }
    let means = Vector::from_vec(means_row.clone());
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for (i, (lineno, row)) in rows[1..].iter().enumerate() {
        if row.len() != n {
            return Err(ProblemError::Parse {
                line: *lineno,
                msg: format!("expected {n} entries, found {}", row.len()),
            });
        }
        for (j, v) in row.iter().enumerate() {
            cov[(i, j)] = *v;
        }
    }
    check_psd(&cov)?;
    Ok(PortfolioData { means, cov })
}

fn check_psd(cov: &DMatrix<f64>) -> Result<(), ProblemError> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(ProblemError::Data(format!(
            "covariance is not positive semidefinite: smallest eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

/// Mean-variance portfolio instance: minimize `½xᵀHx` over the capped
/// simplex subject to a return floor and per-group allocation floors,
/// in primal-dual saddle form with constraint map `g(x) = Dx + b ≤ 0`.
#[derive(Clone)]
pub struct PortfolioInstance {
    pub h: Arc<DMatrix<f64>>,
    pub means: Vector,
    pub r: f64,
    pub d: Arc<DMatrix<f64>>,
    pub b: Vector,
    pub groups: Vec<Range<usize>>,
    pub floors: Vec<f64>,
    pub n: usize,
    /// `‖D‖`
    pub mu: f64,
    /// `‖H‖`
    pub beta: f64,
    /// Initial point: uniform weights, zero multipliers.
    pub x0: Vector,
}

impl PortfolioInstance {
    pub fn dim(&self) -> usize {
        self.n + self.b.len()
    }

    /// `½xᵀHx` at the primal block of `z`.
    pub fn objective(&self, z: &Vector) -> f64 {
        let x = Vector::from(z.rows(0, self.n));
        objective_portfolio(&self.h, &x).expect("dimensions fixed at build")
    }
}

/// `½ xᵀHx`; nonnegative for PSD `H`.
pub fn objective_portfolio(h: &DMatrix<f64>, x: &Vector) -> Result<f64, ProblemError> {
    if h.nrows() != x.len() || h.ncols() != x.len() {
        return Err(ProblemError::Argument(format!(
            "shape mismatch: H is {}x{}, x has length {}",
            h.nrows(),
            h.ncols(),
            x.len()
        )));
    }
    Ok(0.5 * (h * x).dot(x))
}

/// Build the standard instance: three equal asset groups with allocation
/// floors of 0.3 each plus the return floor `r`. Requires the asset count
/// to split into three equal blocks (the benchmark layout, n = 225).
pub fn build_portfolio(
    data: &PortfolioData,
    r: f64,
) -> Result<(PortfolioInstance, OperatorTriple), ProblemError> {
    let n = data.means.len();
    if n % 3 != 0 {
        return Err(ProblemError::Argument(format!(
            "asset count {n} does not split into three equal groups; use build_portfolio_custom"
        )));
    }
    let third = n / 3;
    let groups = vec![0..third, third..2 * third, 2 * third..n];
    build_portfolio_custom(data, r, &groups, &[0.3, 0.3, 0.3])
}

/// Build with an explicit group structure; `groups[i]` must be disjoint
/// index ranges covering subsets of `0..n`, with `floors[i]` the allocation
/// floor of group `i`.
pub fn build_portfolio_custom(
    data: &PortfolioData,
    r: f64,
    groups: &[Range<usize>],
    floors: &[f64],
) -> Result<(PortfolioInstance, OperatorTriple), ProblemError> {
    let n = data.means.len();
    if data.cov.nrows() != n || data.cov.ncols() != n {
        return Err(ProblemError::Argument(format!(
            "covariance is {}x{} but there are {n} means",
            data.cov.nrows(),
            data.cov.ncols()
        )));
    }
    if groups.len() != floors.len() {
        return Err(ProblemError::Argument(format!(
            "{} groups but {} floors",
            groups.len(),
            floors.len()
        )));
    }
    for g in groups {
        if g.end > n || g.start >= g.end {
            return Err(ProblemError::Argument(format!(
                "group {g:?} out of range for {n} assets"
            )));
        }
    }
    let q = 1 + groups.len();
    // g(x) = Dx + b ≤ 0: row 0 encodes the return floor, the rest the
    // group floors
    let mut d = DMatrix::<f64>::zeros(q, n);
    for j in 0..n {
        d[(0, j)] = -data.means[j];
    }
    for (gi, g) in groups.iter().enumerate() {
        for j in g.clone() {
            d[(gi + 1, j)] = -1.0;
        }
    }
    let mut b = Vector::zeros(q);
    b[0] = r;
    for (gi, f) in floors.iter().enumerate() {
        b[gi + 1] = *f;
    }
    let d = Arc::new(d);
    let h = Arc::new(data.cov.clone());

    let a = Arc::new(Resolvent::split_at(
        n,
        |_gamma, zx| {
            project_capped_simplex(zx).expect("capped simplex projection on nonempty block")
        },
        |_gamma, zu| zu.map(|v| v.max(0.0)),
    ));
    let b_op = Arc::new(SingleValuedOp::saddle(Arc::clone(&d), b.clone()));
    let c_op = Arc::new(SingleValuedOp::psd_gradient(Arc::clone(&h), q));
    let mu = b_op.lipschitz_mu;
    let beta = c_op.cocoercivity_beta.expect("psd gradient carries beta");
    let metric = Arc::new(Metric::identity(n + q));
    let triple = OperatorTriple::new(a, b_op, c_op, metric, n + q);

    let mut x0 = Vector::zeros(n + q);
    for i in 0..n {
        x0[i] = 1.0 / n as f64;
    }
    let inst = PortfolioInstance {
        h,
        means: data.means.clone(),
        r,
        d,
        b,
        groups: groups.to_vec(),
        floors: floors.to_vec(),
        n,
        mu,
        beta,
        x0,
    };
    Ok((inst, triple))
}

// ---------------------------------------------------------------------------
// KKT residuals
// ---------------------------------------------------------------------------

/// Computable optimality measures for a converged primal-dual pair:
/// stationarity of the Lagrangian (projected-gradient fixed-point residual),
/// complementary slackness, and primal/dual feasibility violations.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
}

fn kkt_generic(
    x: &Vector,
    u: &Vector,
    grad_lagrangian: &Vector,
    project: impl Fn(&Vector) -> Vector,
    g_of_x: &Vector,
    set_violation: f64,
) -> KktResiduals {
    let fixed = project(&(x - grad_lagrangian));
    let stationarity = (x - fixed).norm();
    let complementarity = u
        .iter()
        .zip(g_of_x.iter())
        .map(|(ui, gi)| (ui * gi).abs())
        .fold(0.0, f64::max);
    let primal_feasibility = g_of_x.iter().cloned().fold(0.0, f64::max).max(set_violation);
    let dual_feasibility = u.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    KktResiduals {
        stationarity,
        complementarity,
        primal_feasibility,
        dual_feasibility,
    }
}

/// KKT residuals of a QP primal-dual pair packed in `z = (x, u)`.
pub fn kkt_residuals_qp(inst: &QpInstance, z: &Vector) -> KktResiduals {
    let n = inst.n();
    let x = Vector::from(z.rows(0, n));
    let u = Vector::from(z.rows(n, inst.q));
    let grad = inst.g.transpose() * (&*inst.g * &x - &inst.b) + inst.d.transpose() * &u;
    let g_of_x = &*inst.d * &x;
    let box_violation = x
        .iter()
        .map(|&v| (v - 1.0).max(0.0).max(-v))
        .fold(0.0, f64::max);
    kkt_generic(
        &x,
        &u,
        &grad,
        |v| v.map(|e| e.clamp(0.0, 1.0)),
        &g_of_x,
        box_violation,
    )
}

/// KKT residuals of a portfolio primal-dual pair packed in `z = (x, u)`.
pub fn kkt_residuals_portfolio(inst: &PortfolioInstance, z: &Vector) -> KktResiduals {
    let n = inst.n;
    let x = Vector::from(z.rows(0, n));
    let u = Vector::from(z.rows(n, inst.b.len()));
    let grad = &*inst.h * &x + inst.d.transpose() * &u;
    let g_of_x = &*inst.d * &x + &inst.b;
    let simplex_violation = (x.sum() - 1.0).abs().max(
        x.iter()
            .map(|&v| (v - 1.0).max(0.0).max(-v))
            .fold(0.0, f64::max),
    );
    kkt_generic(
        &x,
        &u,
        &grad,
        |v| project_capped_simplex(v).expect("nonempty block"),
        &g_of_x,
        simplex_violation,
    )
}
