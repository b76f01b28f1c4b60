//! Command-line harness: validate parameters, build problems, run solver
//! suites, emit traces and summary tables.
//!
//! Configuration is a single flat JSON document (`--config file.json`);
//! every field can be overridden by the flag of the same name. Exit codes:
//! 0 success, 1 parameter infeasibility (or certificate violation),
//! 2 runtime divergence under `--strict`, 3 I/O or parse errors.

use crate::conditions::{
    check_alg1, check_alg2, check_alg3, fbhf_chi, max_gamma, rate_t_alg1, rate_t_alg2,
    rate_t_alg3, AuxEps, ConstantSet, MaxGammaAlg,
};
use crate::metric::Vector;
use crate::operators::OperatorTriple;
use crate::problems::{
    build_portfolio, build_qp, four_op_setup, infer_format, load_dataset, DatasetFormat,
    PortfolioInstance, QpInstance,
};
use crate::solvers::{
    default_gamma, derive_constants, run, run_certified, Algorithm, RunStatus, RunSummary,
    SolverConfig, StopRule,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

const EXIT_OK: i32 = 0;
const EXIT_INFEASIBLE: i32 = 1;
const EXIT_DIVERGED: i32 = 2;
const EXIT_IO: i32 = 3;

#[derive(Parser)]
#[command(
    name = "opsplit",
    about = "Benchmark harness for three-operator splitting with momentum",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Report step-size margins, feasible windows and linear rates
    Check(CommonArgs),
    /// Run the selected algorithms, writing CSV traces and a JSON summary
    Run(CommonArgs),
    /// Run with certificate monitoring and check the certified decrease
    Certify(CommonArgs),
}

#[derive(Args, Debug, Default, Clone)]
struct CommonArgs {
    /// Flat JSON config file; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem family: qp | portfolio
    #[arg(long)]
    problem: Option<String>,
    /// Rows of G (the QP has N = 2m primal variables)
    #[arg(long)]
    m: Option<usize>,
    /// Number of affine constraints of the QP
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Portfolio dataset path (OR-Library port layout, or CSV covariance)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset format: or-library-port | csv-cov (inferred from the
    /// extension when omitted)
    #[arg(long)]
    dataset_format: Option<String>,
    /// Portfolio target return
    #[arg(long)]
    r: Option<f64>,
    /// Algorithm to run (repeatable)
    #[arg(long = "alg")]
    alg: Vec<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Relative-change stopping tolerance
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Number of seeded repeats; summaries are averaged across them
    #[arg(long)]
    repeat: Option<usize>,
    /// Record certificate values along the run
    #[arg(long)]
    cert: bool,
    /// Output directory for traces and the summary
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero on divergence
    #[arg(long)]
    strict: bool,
    /// Strong-monotonicity constant for rate reporting
    #[arg(long)]
    rho: Option<f64>,
    /// Strictness slack of the step-size conditions
    #[arg(long)]
    eps: Option<f64>,
    /// Grid-search the auxiliary constants to maximize the reported rate
    #[arg(long)]
    tune_eps: bool,
}

/// The flat JSON configuration mirror of the command-line flags.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<String>,
    m: Option<usize>,
    q: Option<usize>,
    seed: Option<u64>,
    dataset: Option<PathBuf>,
    dataset_format: Option<String>,
    r: Option<f64>,
    alg: Option<Vec<String>>,
    gamma: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    repeat: Option<usize>,
    cert: Option<bool>,
    out: Option<PathBuf>,
    strict: Option<bool>,
    rho: Option<f64>,
    eps: Option<f64>,
    eps1: Option<f64>,
    eps2: Option<f64>,
    eps3: Option<f64>,
    eps4: Option<f64>,
    eps5: Option<f64>,
    eps6: Option<f64>,
    eps7: Option<f64>,
    eps8: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Clone)]
enum ProblemKind {
    Qp { m: usize, q: usize },
    Portfolio { dataset: PathBuf, format: DatasetFormat, r: f64 },
}

#[derive(Debug, Clone)]
struct Resolved {
    problem: ProblemKind,
    seed: u64,
    algs: Vec<Algorithm>,
    gamma: Option<f64>,
    tol: f64,
    max_iter: usize,
    repeat: usize,
    cert: bool,
    out: PathBuf,
    strict: bool,
    rho: Option<f64>,
    eps: f64,
    eps_named: [Option<f64>; 8],
    alpha: Option<f64>,
    tune_eps: bool,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn io(message: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: message.into() }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INFEASIBLE, message: message.into() }
    }
}

fn resolve(args: &CommonArgs) -> Result<Resolved, CliError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::io(format!("invalid config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let problem_name = args
        .problem
        .clone()
        .or(file.problem)
        .unwrap_or_else(|| "qp".to_string());
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let r = args.r.or(file.r).unwrap_or(0.002);
    let problem = match problem_name.as_str() {
        "qp" => ProblemKind::Qp {
            m: args.m.or(file.m).unwrap_or(50),
            q: args.q.or(file.q).unwrap_or(10),
        },
        "portfolio" => {
            let dataset = args.dataset.clone().or(file.dataset).ok_or_else(|| {
                CliError::io(
                    "portfolio runs need --dataset PATH; obtain an OR-Library portfolio file \
                     (e.g. port5) or a CSV covariance file and pass its path",
                )
            })?;
            let format = match args
                .dataset_format
                .clone()
                .or(file.dataset_format)
                .as_deref()
            {
                Some("or-library-port") => DatasetFormat::OrLibraryPort,
                Some("csv-cov") => DatasetFormat::CsvCov,
                Some(other) => {
                    return Err(CliError::io(format!(
                        "unknown dataset format `{other}` (or-library-port | csv-cov)"
                    )))
                }
                None => infer_format(&dataset),
            };
            ProblemKind::Portfolio { dataset, format, r }
        }
        other => {
            return Err(CliError::io(format!(
                "unknown problem `{other}` (expected qp | portfolio)"
            )))
        }
    };
    let alg_names: Vec<String> = if !args.alg.is_empty() {
        args.alg.clone()
    } else {
        file.alg
            .unwrap_or_else(|| vec!["alg1".into(), "alg2".into(), "alg3".into()])
    };
    let mut algs = Vec::new();
    for name in &alg_names {
        algs.push(Algorithm::from_str(name).map_err(CliError::io)?);
    }
    Ok(Resolved {
        problem,
        seed,
        algs,
        gamma: args.gamma.or(file.gamma),
        tol: args.tol.or(file.tol).unwrap_or(1e-6),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(100_000),
        repeat: args.repeat.or(file.repeat).unwrap_or(1).max(1),
        cert: args.cert || file.cert.unwrap_or(false),
        out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
        strict: args.strict || file.strict.unwrap_or(false),
        rho: args.rho.or(file.rho),
        eps: args.eps.or(file.eps).unwrap_or(1e-6),
        eps_named: [
            file.eps1, file.eps2, file.eps3, file.eps4, file.eps5, file.eps6, file.eps7,
            file.eps8,
        ],
        alpha: file.alpha,
        tune_eps: args.tune_eps,
    })
}

enum BuiltProblem {
    Qp(QpInstance, OperatorTriple),
    Portfolio(Box<PortfolioInstance>, OperatorTriple),
}

impl BuiltProblem {
    fn triple(&self) -> &OperatorTriple {
        match self {
            BuiltProblem::Qp(_, t) => t,
            BuiltProblem::Portfolio(_, t) => t,
        }
    }

    fn x0(&self) -> &Vector {
        match self {
            BuiltProblem::Qp(inst, _) => &inst.x0,
            BuiltProblem::Portfolio(inst, _) => &inst.x0,
        }
    }

    fn objective(&self, z: &Vector) -> f64 {
        match self {
            BuiltProblem::Qp(inst, _) => inst.objective(z),
            BuiltProblem::Portfolio(inst, _) => inst.objective(z),
        }
    }

    fn label(&self) -> String {
        match self {
            BuiltProblem::Qp(inst, _) => format!("qp_m{}_q{}", inst.m, inst.q),
            BuiltProblem::Portfolio(inst, _) => format!("portfolio_r{}", inst.r),
        }
    }

    fn describe(&self) -> String {
        match self {
            BuiltProblem::Qp(inst, _) => format!(
                "problem: qp m={} q={} seed={} dim={} mu={:.6} beta={:.6}",
                inst.m,
                inst.q,
                inst.seed,
                inst.dim(),
                inst.mu,
                inst.beta
            ),
            BuiltProblem::Portfolio(inst, _) => format!(
                "problem: portfolio n={} r={} dim={} mu={:.6} beta={:.6} (||H||)",
                inst.n,
                inst.r,
                inst.dim(),
                inst.mu,
                inst.beta
            ),
        }
    }
}

fn build_problem(resolved: &Resolved, seed: u64) -> Result<BuiltProblem, CliError> {
    match &resolved.problem {
        ProblemKind::Qp { m, q } => {
            let (inst, triple) =
                build_qp(*m, *q, seed).map_err(|e| CliError::io(e.to_string()))?;
            Ok(BuiltProblem::Qp(inst, triple))
        }
        ProblemKind::Portfolio { dataset, format, r } => {
            if !dataset.exists() {
                return Err(CliError::io(format!(
                    "dataset not found at {}; obtain an OR-Library portfolio file (e.g. port5) \
                     and pass it via --dataset",
                    dataset.display()
                )));
            }
            let data =
                load_dataset(dataset, *format).map_err(|e| CliError::io(e.to_string()))?;
            let (inst, triple) =
                build_portfolio(&data, *r).map_err(|e| CliError::io(e.to_string()))?;
            Ok(BuiltProblem::Portfolio(Box::new(inst), triple))
        }
    }
}

fn constants_for(
    resolved: &Resolved,
    triple: &OperatorTriple,
    gamma: f64,
) -> ConstantSet {
    let mut c = derive_constants(triple, None, gamma).with_eps(resolved.eps);
    let [e1, e2, e3, e4, e5, e6, e7, e8] = resolved.eps_named;
    if let Some(v) = e1 {
        c = c.with_eps1(v);
    }
    if let Some(v) = e2 {
        c = c.with_eps2(v);
    }
    if let Some(v) = e3 {
        c = c.with_eps3(v);
    }
    if let Some(v) = e4 {
        c = c.with_eps4(v);
    }
    if let Some(v) = e5 {
        c = c.with_eps5(v);
    }
    if let Some(v) = e6 {
        c = c.with_eps6(v);
    }
    if let Some(v) = e7 {
        c = c.with_eps7(v);
    }
    if let Some(v) = e8 {
        c = c.with_eps8(v);
    }
    if let Some(v) = resolved.alpha {
        c = c.with_alpha(v);
    }
    if let Some(rho) = resolved.rho {
        c = c.with_rho(rho);
    }
    c.eps1.get_or_insert(1.0);
    c.eps3.get_or_insert(1.0);
    c.eps4.get_or_insert(1.0);
    c.eps8.get_or_insert(gamma * 0.9);
    c
}

fn gamma_for(resolved: &Resolved, alg: Algorithm, triple: &OperatorTriple) -> f64 {
    resolved.gamma.unwrap_or_else(|| {
        default_gamma(alg, triple.mu(), triple.beta().unwrap_or(0.0))
    })
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn rate_line(alg: Algorithm, c: &ConstantSet) -> Option<String> {
    if !c.rho.map(|r| r > 0.0).unwrap_or(false) {
        return None;
    }
    let t = match alg {
        Algorithm::Alg1 | Algorithm::Sfrbs | Algorithm::FourOpSfrbs => rate_t_alg1(c),
        Algorithm::Alg2 | Algorithm::Srfbs => rate_t_alg2(c),
        Algorithm::Alg3 | Algorithm::Orfbs | Algorithm::NewOrfbs => rate_t_alg3(c),
        Algorithm::Fbhf => return None,
    };
    Some(match t {
        Ok(t) => format!("  rate: t={t:.6e} (decay (1+t)^-k)"),
        Err(e) => format!("  rate: unavailable ({e})"),
    })
}

/// Small grid search over the free auxiliary constants, reporting the
/// combination that maximizes the certified rate `t`.
fn tune_rate(alg: Algorithm, base: &ConstantSet) -> Option<String> {
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut best: Option<(f64, String)> = None;
    match alg {
        Algorithm::Alg1 | Algorithm::Sfrbs | Algorithm::FourOpSfrbs => {
            for &e1 in &grid {
                let c = base.clone().with_eps1(e1);
                if let Ok(t) = rate_t_alg1(&c) {
                    if best.as_ref().map(|(bt, _)| t > *bt).unwrap_or(true) {
                        best = Some((t, format!("eps1={e1}")));
                    }
                }
            }
        }
        Algorithm::Alg2 | Algorithm::Srfbs => {
            for &e3 in &grid {
                for &e4 in &grid {
                    let c = base.clone().with_eps3(e3).with_eps4(e4);
                    if let Ok(t) = rate_t_alg2(&c) {
                        if best.as_ref().map(|(bt, _)| t > *bt).unwrap_or(true) {
                            best = Some((t, format!("eps3={e3} eps4={e4}")));
                        }
                    }
                }
            }
        }
        Algorithm::Alg3 | Algorithm::Orfbs | Algorithm::NewOrfbs => {
            for &e5 in &grid {
                for &e7 in &[0.05, 0.1, 0.25, 0.5] {
                    let c = base.clone().with_eps5(e5).with_eps7(e7);
                    if let Ok(t) = rate_t_alg3(&c) {
                        if best.as_ref().map(|(bt, _)| t > *bt).unwrap_or(true) {
                            best = Some((t, format!("eps5={e5} eps7={e7}")));
                        }
                    }
                }
            }
        }
        Algorithm::Fbhf => {}
    }
    best.map(|(t, desc)| format!("  tuned: t={t:.6e} at {desc}"))
}

fn cmd_check(resolved: &Resolved) -> Result<i32, CliError> {
    let problem = build_problem(resolved, resolved.seed)?;
    println!("{}", problem.describe());
    let triple = problem.triple();
    let mu = triple.mu();
    let beta = triple.beta().unwrap_or(0.0);
    let aux = AuxEps::default();
    let mut all_pass = true;
    for &alg in &resolved.algs {
        let gamma = gamma_for(resolved, alg, triple);
        let c = constants_for(resolved, triple, gamma);
        match alg {
            Algorithm::Alg1 | Algorithm::Sfrbs | Algorithm::FourOpSfrbs => {
                let margin = check_alg1(&c);
                let sup = max_gamma(MaxGammaAlg::Alg1, mu, beta, c.l_cur, resolved.eps, &aux);
                let pass = margin >= 0.0;
                all_pass &= pass;
                println!(
                    "{alg}: gamma={gamma:.6e} margin={margin:.6e} {} sup_gamma={}",
                    pass_str(pass),
                    sup.map(|g| format!("{g:.6e}")).unwrap_or_else(|e| e.to_string()),
                );
            }
            Algorithm::Alg2 | Algorithm::Srfbs => {
                let (m1, m2) = check_alg2(&c).map_err(|e| CliError::infeasible(e.to_string()))?;
                let sup = max_gamma(MaxGammaAlg::Alg2, mu, beta, c.l_cur, resolved.eps, &aux);
                let pass = m1 >= 0.0 && m2 >= 0.0;
                all_pass &= pass;
                println!(
                    "{alg}: gamma={gamma:.6e} margin1={m1:.6e} margin2={m2:.6e} {} sup_gamma={}",
                    pass_str(pass),
                    sup.map(|g| format!("{g:.6e}")).unwrap_or_else(|e| e.to_string()),
                );
            }
            Algorithm::Alg3 | Algorithm::Orfbs | Algorithm::NewOrfbs => {
                match check_alg3(&c) {
                    Ok(chk) => {
                        let in_window =
                            gamma >= chk.gamma_window.lo && gamma <= chk.gamma_window.hi;
                        let pass = chk.margin_i >= 0.0 && chk.margin_ii > 0.0 && in_window;
                        all_pass &= pass;
                        println!(
                            "{alg}: gamma={gamma:.6e} margin_i={:.6e} margin_ii={:.6e} \
                             window=[{:.6e},{:.6e}] in_window={} {}",
                            chk.margin_i,
                            chk.margin_ii,
                            chk.gamma_window.lo,
                            chk.gamma_window.hi,
                            in_window,
                            pass_str(pass)
                        );
                    }
                    Err(e) => {
                        all_pass = false;
                        println!("{alg}: gamma={gamma:.6e} FAIL ({e})");
                    }
                }
            }
            Algorithm::Fbhf => {
                let chi = fbhf_chi(mu, beta);
                let pass = gamma > 0.0 && gamma < chi;
                all_pass &= pass;
                println!("{alg}: gamma={gamma:.6e} chi={chi:.6e} {}", pass_str(pass));
            }
        }
        if let Some(line) = rate_line(alg, &constants_for(resolved, triple, gamma)) {
            println!("{line}");
        }
        if resolved.tune_eps {
            if let Some(line) = tune_rate(alg, &constants_for(resolved, triple, gamma)) {
                println!("{line}");
            }
        }
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SeededSummary {
    seed: u64,
    #[serde(flatten)]
    summary: RunSummary,
}

#[derive(Serialize)]
struct AlgoAverage {
    algorithm: String,
    runs: usize,
    av_iter: f64,
    av_time_s: f64,
    converged: usize,
}

#[derive(Serialize)]
struct SummaryFile {
    problem: String,
    tol: f64,
    runs: Vec<SeededSummary>,
    averages: Vec<AlgoAverage>,
}

fn solver_config(resolved: &Resolved, alg: Algorithm, gamma: f64) -> SolverConfig {
    let mut config = SolverConfig::new(alg, gamma);
    config.stop = StopRule {
        rel_change_tol: resolved.tol,
        residual_tol: None,
        max_iter: resolved.max_iter,
    };
    config
}

fn prepared_run(
    resolved: &Resolved,
    problem: &BuiltProblem,
    alg: Algorithm,
) -> Result<(SolverConfig, OperatorTriple), CliError> {
    let triple = problem.triple();
    let gamma = gamma_for(resolved, alg, triple);
    let mut config = solver_config(resolved, alg, gamma);
    if alg.name() == "four-op" || alg.name() == "new-orfbs" {
        let (split_triple, b1) = four_op_setup(triple);
        config = config.with_four_op_a2(b1);
        Ok((config, split_triple))
    } else {
        Ok((config, triple.clone()))
    }
}

fn cmd_run(resolved: &Resolved) -> Result<i32, CliError> {
    std::fs::create_dir_all(&resolved.out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", resolved.out.display())))?;
    let repeat = match resolved.problem {
        ProblemKind::Qp { .. } => resolved.repeat,
        ProblemKind::Portfolio { .. } => {
            if resolved.repeat > 1 {
                eprintln!("note: the portfolio instance is deterministic; running it once");
            }
            1
        }
    };
    let seeds: Vec<u64> = (0..repeat).map(|i| resolved.seed + i as u64).collect();

    struct Job {
        seed: u64,
        alg: Algorithm,
    }
    let jobs: Vec<Job> = seeds
        .iter()
        .flat_map(|&seed| resolved.algs.iter().map(move |&alg| Job { seed, alg }))
        .collect();

    // Each worker owns its problem instance; the collector below writes all
    // output single-threaded in job order.
    let results: Vec<Result<(u64, Algorithm, crate::solvers::Trace, f64, String), CliError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|job| {
                    let resolved = &*resolved;
                    scope.spawn(move || {
                        let problem = build_problem(resolved, job.seed)?;
                        let (config, triple) = prepared_run(resolved, &problem, job.alg)?;
                        let with_cert = resolved.cert
                            && !matches!(
                                job.alg,
                                Algorithm::Fbhf | Algorithm::FourOpSfrbs | Algorithm::NewOrfbs
                            );
                        let trace = if with_cert {
                            run_certified(&config, &triple, problem.x0(), None, resolved.tol)
                        } else {
                            if resolved.cert {
                                eprintln!(
                                    "note: no certificate is defined for {}; running it plain",
                                    job.alg
                                );
                            }
                            run(&config, &triple, problem.x0(), None)
                        }
                        .map_err(|e| CliError::infeasible(e.to_string()))?;
                        let objective = problem.objective(&trace.final_x);
                        Ok((job.seed, job.alg, trace, objective, problem.label()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect()
        });

    let mut summaries: Vec<SeededSummary> = Vec::new();
    let mut diverged = false;
    let mut label = String::new();
    for result in results {
        let (seed, alg, trace, objective, plabel) = result?;
        label = plabel;
        if let Some(rep) = &trace.condition_report {
            if !rep.passed {
                eprintln!(
                    "warning: {alg} (seed {seed}): step-size conditions not verified: {}",
                    rep.summary
                );
            }
        }
        let csv_path = resolved
            .out
            .join(format!("{label}_{}_s{seed}.csv", alg.name()));
        let file = std::fs::File::create(&csv_path)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", csv_path.display())))?;
        trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", csv_path.display())))?;
        diverged |= trace.status == RunStatus::Diverged;
        let summary = trace.summary(alg, Some(objective));
        println!(
            "{} seed={seed} status={:?} iters={} time_s={:.3} objective={:.6e} final_Ek={:.3e}",
            alg.name(),
            summary.status,
            summary.iters,
            summary.time_s,
            objective,
            summary.final_ek,
        );
        summaries.push(SeededSummary { seed, summary });
    }

    let mut averages = Vec::new();
    for &alg in &resolved.algs {
        let of_alg: Vec<&SeededSummary> = summaries
            .iter()
            .filter(|s| s.summary.algorithm == alg.name())
            .collect();
        if of_alg.is_empty() {
            continue;
        }
        let runs = of_alg.len();
        averages.push(AlgoAverage {
            algorithm: alg.name().to_string(),
            runs,
            av_iter: of_alg.iter().map(|s| s.summary.iters as f64).sum::<f64>() / runs as f64,
            av_time_s: of_alg.iter().map(|s| s.summary.time_s).sum::<f64>() / runs as f64,
            converged: of_alg
                .iter()
                .filter(|s| s.summary.status == RunStatus::Converged)
                .count(),
        });
    }
    for avg in &averages {
        println!(
            "av {}: runs={} av.iter={:.1} av.time={:.3}s converged={}/{}",
            avg.algorithm, avg.runs, avg.av_iter, avg.av_time_s, avg.converged, avg.runs
        );
    }
    let summary_file = SummaryFile {
        problem: label,
        tol: resolved.tol,
        runs: summaries,
        averages,
    };
    let path = resolved.out.join("summary.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&summary_file).expect("summary serializes"),
    )
    .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;

    if diverged && resolved.strict {
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

fn cmd_certify(resolved: &Resolved) -> Result<i32, CliError> {
    let problem = build_problem(resolved, resolved.seed)?;
    println!("{}", problem.describe());
    let mut all_ok = true;
    for &alg in &resolved.algs {
        if matches!(alg, Algorithm::Fbhf | Algorithm::FourOpSfrbs | Algorithm::NewOrfbs) {
            return Err(CliError::infeasible(format!(
                "no certificate is defined for {alg}; certify alg1|alg2|alg3|sfrbs|srfbs|orfbs"
            )));
        }
        let triple = problem.triple();
        let gamma = gamma_for(resolved, alg, triple);
        let mut config = solver_config(resolved, alg, gamma);
        config.constants = Some(constants_for(resolved, triple, gamma));
        // strict precondition: the step-size conditions must actually hold
        let probe = run(
            &{
                let mut c = config.clone();
                c.stop.max_iter = 1;
                c
            },
            triple,
            problem.x0(),
            None,
        )
        .map_err(|e| CliError::infeasible(e.to_string()))?;
        if let Some(rep) = &probe.condition_report {
            if !rep.passed {
                return Err(CliError::infeasible(format!(
                    "{alg}: step-size conditions fail ({}); certify requires a conforming run",
                    rep.summary
                )));
            }
        }
        let trace = run_certified(&config, triple, problem.x0(), None, resolved.tol)
            .map_err(|e| CliError::infeasible(e.to_string()))?;
        let mut violations = 0usize;
        let mut worst: Option<(usize, f64)> = None;
        for rec in &trace.cert_records {
            if let Some(slack) = rec.plain_slack {
                let allowed = 1e-9 * (1.0 + rec.value.abs());
                if slack > allowed {
                    violations += 1;
                    if worst.map(|(_, w)| slack > w).unwrap_or(true) {
                        worst = Some((rec.k, slack));
                    }
                }
            }
        }
        let evaluated = trace.cert_records.len();
        if violations == 0 {
            println!(
                "{alg}: certificate nonincreasing over {evaluated} evaluations ({} iterations) PASS",
                trace.iterations
            );
        } else {
            all_ok = false;
            let (k, slack) = worst.expect("violations imply a worst record");
            println!(
                "{alg}: {violations} certificate increases over {evaluated} evaluations; \
                 worst at iteration {k} with slack {slack:.3e} FAIL"
            );
        }
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_INFEASIBLE })
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

/// Parse `args` (including the program name) and execute; returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here as well and are not failures
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (resolved, runner): (_, fn(&Resolved) -> Result<i32, CliError>) = match &cli.cmd {
        Cmd::Check(a) => (resolve(a), cmd_check),
        Cmd::Run(a) => (resolve(a), cmd_run),
        Cmd::Certify(a) => (resolve(a), cmd_certify),
    };
    let resolved = match resolved {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return e.code;
        }
    };
    match runner(&resolved) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

// Path is used by doc references in this module.
#[allow(unused)]
fn _path_marker(_: &Path) {}
