use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::SeedableRng;
use twotime_core::estimator::{estimate_checkpoint, CovarianceEstimate};
use twotime_core::export::{ensemble_stats_csv, matrices_csv, matrices_json, propagation_csv};
use twotime_core::linalg::{min_symmetric_eigenvalue, relative_frobenius};
use twotime_core::{
    fixed_point, normality_check, optimal_gain_covariance, predict_full, predict_reduced, propagate_covariance,
    random_stable_gain, run_ensemble_with, transformed_check, validate_system, averaging_system,
    gained_reduced_covariance, EnsembleOptions, Error, Gain, Matrix, RunConfig, ScheduleParams, SchedulePair,
    SystemSpec, Tolerance, Vector,
};

use crate::args::{AveragingArgs, ConfigArgs, Format, GainArgs, Mode, PredictArgs, RunArgs, SimArgs};
use crate::{Failure, Outcome};

pub const DEFAULT_SEED: u64 = 1;
pub const PROPAGATE_STEPS: u64 = 1_000_000;
pub const ENSEMBLE_REPLICAS: usize = 4000;
pub const ENSEMBLE_STEPS: u64 = 100_000;
pub const NORMALITY_REPLICAS: usize = 10_000;
pub const NORMALITY_STEPS: u64 = 100_000;
pub const TRANSFORMED_STEPS: u64 = 10_000;

pub const PROPAGATE_TOLERANCE: f64 = 0.05;
pub const ENSEMBLE_TOLERANCE: Tolerance = Tolerance::Sum { relative: 0.10, standard_errors: 4.0 };
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;
pub const DISCREPANCY_TOLERANCE: f64 = 1e-8;

/// `beta_k = 1/(k+1)`.
pub const HARMONIC: ScheduleParams = ScheduleParams { base: 1.0, tau: 1.0, alpha: 1.0 };
/// Fast schedule paired with [`HARMONIC`] by the averaging command.
pub const AVERAGING_FAST: ScheduleParams = ScheduleParams { base: 1.0, tau: 10.0, alpha: 0.6 };

type CmdResult = std::result::Result<Outcome, Failure>;

/// `{100, 1000, ...}` below `steps`, then `steps` itself.
pub fn geometric_checkpoints(steps: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut k = 100u64;
    while k < steps {
        out.push(k);
        k = k.saturating_mul(10);
    }
    out.push(steps);
    out
}

fn load(path: &Path) -> std::result::Result<(RunConfig, SystemSpec, SchedulePair), Failure> {
    let cfg = RunConfig::load(path)?;
    let spec = cfg.system_spec()?;
    let pair = cfg.schedule_pair()?;
    Ok((cfg, spec, pair))
}

fn require_valid(spec: &SystemSpec, pair: &SchedulePair) -> std::result::Result<(), Failure> {
    let report = validate_system(spec, pair);
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::new(2, format!("assumptions violated:\n{report}")))
    }
}

fn write_file(path: &Path, data: &str) -> std::result::Result<(), Failure> {
    std::fs::write(path, data).map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))
}

/// Data goes to `out` when given, with the summary on stdout. Otherwise the
/// data takes stdout and the summary moves to stderr.
fn emit(code: i32, out: Option<&Path>, data: String, summary: String) -> CmdResult {
    match out {
        Some(path) => {
            write_file(path, &data)?;
            Ok(Outcome { code, stdout: summary, stderr: String::new() })
        }
        None => Ok(Outcome { code, stdout: data, stderr: summary }),
    }
}

pub fn validate(args: &ConfigArgs) -> CmdResult {
    let (_, spec, pair) = load(&args.config)?;
    let report = validate_system(&spec, &pair);
    let code = if report.all_passed() { 0 } else { 2 };
    Ok(Outcome { code, stdout: report.to_string(), stderr: String::new() })
}

pub fn predict(args: &PredictArgs) -> CmdResult {
    let (_, spec, pair) = load(&args.config)?;
    require_valid(&spec, &pair)?;
    let full = predict_full(&spec, pair.beta_bar)?;
    let reduced = predict_reduced(&spec, pair.beta_bar)?;
    let optimal = optimal_gain_covariance(&spec)?;
    let discrepancy = relative_frobenius(&full.sigma11, &reduced);
    let blocks: [(&str, &Matrix); 7] = [
        ("sigma11", &full.sigma11),
        ("sigma12", &full.sigma12),
        ("sigma22", &full.sigma22),
        ("sigma11_reduced", &reduced),
        ("Q", &full.q),
        ("Delta", &full.delta),
        ("sigma11_optimal", &optimal.sigma11),
    ];
    let data = match args.format {
        Format::Csv => matrices_csv(&blocks)?,
        Format::Json => matrices_json(&blocks),
    };
    let code = if discrepancy < DISCREPANCY_TOLERANCE { 0 } else { 3 };
    let summary = format!(
        "beta_bar = {}\nfull_vs_reduced_discrepancy = {discrepancy:.3e}\n{}",
        pair.beta_bar,
        if code == 0 { "consistent" } else { "INCONSISTENT: full and reduced solutions disagree" }
    );
    emit(code, args.out.as_deref(), data, summary + "\n")
}

fn pool(jobs: Option<usize>) -> std::result::Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Failure::new(1, "--jobs must be positive"));
        }
        builder = builder.num_threads(j);
    }
    builder.build().map_err(|e| Failure::new(1, format!("thread pool: {e}")))
}

/// Command-line value, then the config's `run` block, then the default.
struct Resolved {
    replicas: usize,
    steps: u64,
    seed: u64,
    checkpoints: Vec<u64>,
    out: Option<PathBuf>,
}

fn resolve(sim: &SimArgs, cfg: Option<&RunConfig>, replicas: usize, steps: u64) -> Resolved {
    let run = cfg.map(|c| &c.run);
    let steps = sim.steps.or(run.and_then(|r| r.steps)).unwrap_or(steps);
    let checkpoints = match run.and_then(|r| r.checkpoints.clone()) {
        Some(mut c) if sim.steps.is_none() => {
            c.retain(|&k| k <= steps);
            if c.last() != Some(&steps) {
                c.push(steps);
            }
            c
        }
        _ => geometric_checkpoints(steps),
    };
    Resolved {
        replicas: sim.replicas.or(run.and_then(|r| r.replicas)).unwrap_or(replicas),
        steps,
        seed: sim.seed.or(run.and_then(|r| r.seed)).unwrap_or(DEFAULT_SEED),
        checkpoints,
        out: sim.out.clone().or(run.and_then(|r| r.out.clone())),
    }
}

pub fn run(args: &RunArgs) -> CmdResult {
    let (cfg, spec, pair) = load(&args.config)?;
    if !args.skip_validate {
        require_valid(&spec, &pair)?;
    }
    let pool = pool(args.sim.jobs)?;
    pool.install(|| match args.mode {
        Mode::Propagate => run_propagate(args, &cfg, &spec, &pair),
        Mode::Ensemble => run_ensemble_mode(args, &cfg, &spec, &pair),
        Mode::Normality => run_normality(args, &cfg, &spec, &pair),
        Mode::TransformedCheck => run_transformed(args, &cfg, &spec, &pair),
    })
}

fn run_propagate(args: &RunArgs, cfg: &RunConfig, spec: &SystemSpec, pair: &SchedulePair) -> CmdResult {
    let res = resolve(&args.sim, Some(cfg), 1, PROPAGATE_STEPS);
    let init = cfg.initial(spec)?;
    let (theta_star, r_star) = fixed_point(spec)?;
    let offset: Vec<f64> =
        (&init.theta - theta_star).iter().chain((&init.r - r_star).iter()).copied().collect();
    let d = Vector::from_vec(offset);
    let c0 = &d * d.transpose();
    let checkpoints = propagate_covariance(spec, pair, &c0, res.steps, &res.checkpoints)?;
    let prediction = predict_full(spec, pair.beta_bar)?;
    let last = checkpoints.last().ok_or_else(|| Failure::new(1, "no checkpoints"))?;
    let err11 = relative_frobenius(&last.sigma11, &prediction.sigma11);
    let err_joint = relative_frobenius(&last.joint(), &prediction.joint());
    let passed = err11 < PROPAGATE_TOLERANCE;
    let summary = format!(
        "k = {}\nsigma11_relative_error = {err11:.6e}\njoint_relative_error = {err_joint:.6e}\ntolerance = {PROPAGATE_TOLERANCE}\n{}\n",
        last.k,
        verdict(passed)
    );
    emit(if passed { 0 } else { 2 }, res.out.as_deref(), propagation_csv(&checkpoints)?, summary)
}

fn ensemble_options(res: &Resolved, cfg: &RunConfig, spec: &SystemSpec) -> std::result::Result<EnsembleOptions, Failure> {
    Ok(EnsembleOptions::new(res.replicas, res.steps, res.checkpoints.clone(), res.seed).with_init(cfg.initial(spec)?))
}

fn run_ensemble_mode(args: &RunArgs, cfg: &RunConfig, spec: &SystemSpec, pair: &SchedulePair) -> CmdResult {
    let res = resolve(&args.sim, Some(cfg), ENSEMBLE_REPLICAS, ENSEMBLE_STEPS);
    let result = run_ensemble_with(spec, pair, &ensemble_options(&res, cfg, spec)?)?;
    let rows: Vec<(f64, f64, CovarianceEstimate)> = result
        .checkpoints
        .iter()
        .map(|cp| Ok((cp.beta, cp.gamma, estimate_checkpoint(cp)?)))
        .collect::<twotime_core::Result<_>>()?;
    let prediction = predict_full(spec, pair.beta_bar)?;
    let (_, _, last) = rows.last().ok_or_else(|| Failure::new(1, "no checkpoints"))?;
    let (est, se) = (&last.estimate, &last.standard_error);
    let ratios = [
        ENSEMBLE_TOLERANCE.worst_ratio(&est.sigma11, &se.sigma11, &prediction.sigma11),
        ENSEMBLE_TOLERANCE.worst_ratio(&est.sigma12, &se.sigma12, &prediction.sigma12),
        ENSEMBLE_TOLERANCE.worst_ratio(&est.sigma22, &se.sigma22, &prediction.sigma22),
    ];
    let passed = ratios.iter().all(|&r| r <= 1.0);
    let mut summary = format!("k = {}\nreplicas = {}\nseed = {}\n", last.k, res.replicas, res.seed);
    for ((name, estimate, predicted), ratio) in [
        ("sigma11", &est.sigma11, &prediction.sigma11),
        ("sigma12", &est.sigma12, &prediction.sigma12),
        ("sigma22", &est.sigma22, &prediction.sigma22),
    ]
    .into_iter()
    .zip(ratios)
    {
        let _ = writeln!(
            summary,
            "{name}: estimate {:?} predicted {:?} error/allowance {ratio:.3}",
            estimate.as_slice(),
            predicted.as_slice()
        );
    }
    let _ = writeln!(summary, "{}", verdict(passed));
    emit(if passed { 0 } else { 2 }, res.out.as_deref(), ensemble_stats_csv(&rows)?, summary)
}

fn run_normality(args: &RunArgs, cfg: &RunConfig, spec: &SystemSpec, pair: &SchedulePair) -> CmdResult {
    let mut res = resolve(&args.sim, Some(cfg), NORMALITY_REPLICAS, NORMALITY_STEPS);
    res.checkpoints = vec![res.steps];
    let result = run_ensemble_with(spec, pair, &ensemble_options(&res, cfg, spec)?)?;
    let cp = result.last().ok_or_else(|| Failure::new(1, "no checkpoints"))?;
    let prediction = predict_full(spec, pair.beta_bar)?;
    let report = normality_check(&cp.theta_hat, cp.beta, &prediction.sigma11)?;
    let passed = report.passed();
    let data = format!("{}\n{}\n", report.csv_header(), report.csv_row());
    let summary = format!("k = {}\nseed = {}\n{}{}\n", cp.k, res.seed, report.to_key_value(), verdict(passed));
    emit(if passed { 0 } else { 2 }, res.out.as_deref(), data, summary)
}

fn run_transformed(args: &RunArgs, cfg: &RunConfig, spec: &SystemSpec, pair: &SchedulePair) -> CmdResult {
    let res = resolve(&args.sim, Some(cfg), 1, TRANSFORMED_STEPS);
    let check = transformed_check(spec, pair, &cfg.initial(spec)?, res.steps, res.seed)?;
    let passed = check.max_relative_error <= RECONSTRUCTION_TOLERANCE;
    let data = format!(
        "steps,k0,max_relative_error,final_l_norm\n{},{},{:.16e},{:.16e}\n",
        check.steps, check.k0, check.max_relative_error, check.final_l_norm
    );
    let summary = format!(
        "steps = {}\nk0 = {}\nmax_relative_error = {:.3e}\nfinal_l_norm = {:.6e}\ntolerance = {RECONSTRUCTION_TOLERANCE:e}\n{}\n",
        check.steps,
        check.k0,
        check.max_relative_error,
        check.final_l_norm,
        verdict(passed)
    );
    emit(if passed { 0 } else { 2 }, res.out.as_deref(), data, summary)
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Parses `"1,0.5;0,2"` into a matrix.
pub fn parse_matrix(text: &str) -> std::result::Result<Matrix, Failure> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| row.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::new(1, format!("bad matrix \"{text}\": {e}")))?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Failure::new(1, format!("bad matrix \"{text}\": ragged or empty rows")));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn parse_vector(text: &str) -> std::result::Result<Vector, Failure> {
    let m = parse_matrix(text)?;
    if m.nrows() != 1 {
        return Err(Failure::new(1, format!("bad vector \"{text}\": use commas only")));
    }
    Ok(Vector::from_iterator(m.ncols(), m.iter().copied()))
}

/// Predicted against empirical covariance of the running average.
#[derive(Debug, Clone)]
pub struct AveragingReport {
    /// `A^{-1} Gamma A^{-T}` computed directly.
    pub closed_form: Matrix,
    /// The reduced-equation solution at `beta_bar = 1`.
    pub predicted: Matrix,
    pub estimate: Matrix,
    pub standard_error: Matrix,
    pub steps: u64,
    pub replicas: usize,
    pub worst_ratio: f64,
}

impl AveragingReport {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

pub fn averaging_report(
    a: &Matrix,
    b: &Vector,
    gamma: &Matrix,
    replicas: usize,
    steps: u64,
    seed: u64,
) -> twotime_core::Result<AveragingReport> {
    let spec = averaging_system(a, b, gamma)?;
    let pair = SchedulePair::from_params(HARMONIC, AVERAGING_FAST)?;
    let opts = EnsembleOptions::new(replicas, steps, vec![steps], seed);
    let result = run_ensemble_with(&spec, &pair, &opts)?;
    let cp = result.last().ok_or(Error::InvalidArgument("no checkpoints".into()))?;
    let est = estimate_checkpoint(cp)?;
    let predicted = predict_reduced(&spec, pair.beta_bar)?;
    let a_inv = a.clone().try_inverse().ok_or(Error::SingularSystem)?;
    let closed_form = &a_inv * gamma * a_inv.transpose();
    let worst_ratio =
        ENSEMBLE_TOLERANCE.worst_ratio(&est.estimate.sigma11, &est.standard_error.sigma11, &predicted);
    Ok(AveragingReport {
        closed_form,
        predicted,
        estimate: est.estimate.sigma11,
        standard_error: est.standard_error.sigma11,
        steps,
        replicas,
        worst_ratio,
    })
}

pub fn averaging(args: &AveragingArgs) -> CmdResult {
    let a = parse_matrix(&args.a)?;
    let d = a.nrows();
    let b = match &args.b {
        Some(t) => parse_vector(t)?,
        None => Vector::zeros(d),
    };
    let gamma = match &args.gamma {
        Some(t) => parse_matrix(t)?,
        None => Matrix::identity(d, d),
    };
    let res = resolve(&args.sim, None, ENSEMBLE_REPLICAS, ENSEMBLE_STEPS);
    let report = pool(args.sim.jobs)?.install(|| averaging_report(&a, &b, &gamma, res.replicas, res.steps, res.seed))?;
    let blocks: [(&str, &Matrix); 4] = [
        ("closed_form", &report.closed_form),
        ("predicted", &report.predicted),
        ("estimate", &report.estimate),
        ("standard_error", &report.standard_error),
    ];
    let summary = format!(
        "k = {}\nreplicas = {}\nseed = {}\npredicted = {:?}\nestimate = {:?}\nstandard_error = {:?}\nerror/allowance = {:.3}\n{}\n",
        report.steps,
        report.replicas,
        res.seed,
        report.predicted.as_slice(),
        report.estimate.as_slice(),
        report.standard_error.as_slice(),
        report.worst_ratio,
        verdict(report.passed())
    );
    emit(if report.passed() { 0 } else { 2 }, res.out.as_deref(), matrices_csv(&blocks)?, summary)
}

/// Random gains compared with the optimal one, plus a Monte Carlo run at the optimum.
#[derive(Debug, Clone)]
pub struct GainReport {
    pub optimal: Matrix,
    pub optimal_gain: Matrix,
    /// Smallest eigenvalue of `Sigma(G) - Sigma_opt` for each random gain.
    pub dominance: Vec<f64>,
    pub estimate: Matrix,
    pub standard_error: Matrix,
    pub worst_ratio: f64,
}

/// Monte Carlo tolerance at the optimal gain.
pub const GAIN_TOLERANCE: Tolerance = Tolerance::Max { relative: 0.10, standard_errors: 4.0 };
pub const DOMINANCE_TOLERANCE: f64 = -1e-8;

impl GainReport {
    pub fn min_dominance(&self) -> f64 {
        self.dominance.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dominance_passed(&self) -> bool {
        self.min_dominance() >= DOMINANCE_TOLERANCE
    }

    pub fn simulation_passed(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

pub fn gain_report(
    spec: &SystemSpec,
    pair: &SchedulePair,
    gains: usize,
    replicas: usize,
    steps: u64,
    seed: u64,
) -> twotime_core::Result<GainReport> {
    let optimum = optimal_gain_covariance(spec)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut dominance = Vec::with_capacity(gains);
    for _ in 0..gains {
        let g = random_stable_gain(&mut rng, spec, pair.beta_bar, 0.05)?;
        let sigma = gained_reduced_covariance(spec, &g, pair.beta_bar)?;
        dominance.push(min_symmetric_eigenvalue(&(sigma - &optimum.sigma11))?);
    }
    let opts = EnsembleOptions::new(replicas, steps, vec![steps], seed).with_gain(Gain::Slow(optimum.slow_gain.clone()));
    let result = run_ensemble_with(spec, pair, &opts)?;
    let cp = result.last().ok_or(Error::InvalidArgument("no checkpoints".into()))?;
    let est = estimate_checkpoint(cp)?;
    let worst_ratio = GAIN_TOLERANCE.worst_ratio(&est.estimate.sigma11, &est.standard_error.sigma11, &optimum.sigma11);
    Ok(GainReport {
        optimal: optimum.sigma11,
        optimal_gain: optimum.slow_gain,
        dominance,
        estimate: est.estimate.sigma11,
        standard_error: est.standard_error.sigma11,
        worst_ratio,
    })
}

pub fn gain(args: &GainArgs) -> CmdResult {
    let (cfg, spec, pair) = load(&args.config)?;
    if !args.skip_validate {
        require_valid(&spec, &pair)?;
    }
    let res = resolve(&args.sim, Some(&cfg), ENSEMBLE_REPLICAS, ENSEMBLE_STEPS);
    let report = pool(args.sim.jobs)?.install(|| gain_report(&spec, &pair, args.gains, res.replicas, res.steps, res.seed))?;
    let passed = report.dominance_passed() && report.simulation_passed();
    let data = {
        let mut s = String::from("gain,min_eigenvalue\n");
        for (i, d) in report.dominance.iter().enumerate() {
            let _ = writeln!(s, "{i},{d:.16e}");
        }
        s
    };
    let summary = format!(
        "beta_bar = {}\noptimal_sigma11 = {:?}\nmin_dominance_eigenvalue = {:.3e}\nestimate = {:?}\nstandard_error = {:?}\nerror/allowance = {:.3}\n{}\n",
        pair.beta_bar,
        report.optimal.as_slice(),
        report.min_dominance(),
        report.estimate.as_slice(),
        report.standard_error.as_slice(),
        report.worst_ratio,
        verdict(passed)
    );
    emit(if passed { 0 } else { 2 }, res.out.as_deref(), data, summary)
}
