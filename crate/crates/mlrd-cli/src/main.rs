//! `mlrd` command-line front end: config-driven experiments, path and
//! normalizer export, deterministic report emission.
//!
//! Exit codes: 0 when every pass flag is true, 1 when a tolerance fails,
//! 2 on configuration or hypothesis errors (with a machine-readable JSON
//! object on standard error).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlrd::config::ConfigFile;
use mlrd::error::Error;
use mlrd::matalg::SquareMatrix;
use mlrd::model::{check_conditions, theoretical_gamma_upto, ProcessKind};
use mlrd::montecarlo::{run, ExperimentConfig, ExperimentKind};
use mlrd::report::{ConvergenceReport, ReportSidecar};

const CONFIG_KEYS_HELP: &str = "Config keys (TOML; see README for the full schema):\n\
  experiment, seed, replications, n, n_list, truncation, grid, lags, k_max,\n\
  tau, gaussian_cap, stability_check, stability_replications,\n\
  [spec] dimension, kind, memory, a_plus, a_minus, a_zero, innovation, r_diag,\n\
  [subordination] g, l_max, quad_order, rank_tol,\n\
  [tolerances] cov_max_abs, ks_p_min, se_multiplier, variance_ratio_low,\n\
               variance_ratio_high, second_moment_factor";

#[derive(Parser)]
#[command(
    name = "mlrd",
    version,
    about = "Simulation and Monte Carlo verification for multivariate long-range dependent processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: MLRD_THREADS env var, then all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Output format for reports and paths.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(clap::ValueEnum, Clone, Copy, PartialEq)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path from the configured spec and export it.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Simulate(CommonArgs),
    /// Compute theoretical autocovariances gamma(0..k_max) as CSV.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Gamma(CommonArgs),
    /// Compute the normalization matrices for the configured spec.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Normalize(CommonArgs),
    /// Compute Hermite expansion coefficients and rank of the configured maps.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Hermite(CommonArgs),
    /// Verify the exact-normalization CLT by Monte Carlo.
    #[command(name = "verify-clt", after_help = CONFIG_KEYS_HELP)]
    VerifyClt(CommonArgs),
    /// Verify the functional CLT (OFBM limit) at finite-dimensional level.
    #[command(name = "verify-fclt", after_help = CONFIG_KEYS_HELP)]
    VerifyFclt(CommonArgs),
    /// Verify the Hermite-subordination limit theorem.
    #[command(name = "verify-subordination", after_help = CONFIG_KEYS_HELP)]
    VerifySubordination(CommonArgs),
    /// Verify the sample-autocovariance dichotomy.
    #[command(name = "verify-autocov", after_help = CONFIG_KEYS_HELP)]
    VerifyAutocov(CommonArgs),
    /// Run the built-in quick example suite (no config required).
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(passed) => {
            if passed {
                ExitCode::from(0)
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let kind = match &e {
                Error::Config(_) | Error::Hypothesis(_) | Error::Domain(_) | Error::Parse(_) => {
                    "config"
                }
                _ => "runtime",
            };
            let payload = serde_json::json!({
                "error": { "kind": kind, "message": e.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> mlrd::Result<bool> {
    match cli.command {
        Command::Selftest => selftest(),
        Command::Simulate(a) => with_setup(a, cmd_simulate),
        Command::Gamma(a) => with_setup(a, cmd_gamma),
        Command::Normalize(a) => with_setup(a, cmd_normalize),
        Command::Hermite(a) => with_setup(a, cmd_hermite),
        Command::VerifyClt(a) => verify(a, ExperimentKind::Clt),
        Command::VerifyFclt(a) => verify(a, ExperimentKind::Fclt),
        Command::VerifySubordination(a) => verify(a, ExperimentKind::Subordination),
        Command::VerifyAutocov(a) => verify(a, ExperimentKind::Autocov),
    }
}

fn thread_count(args: &CommonArgs) -> usize {
    args.threads
        .or_else(|| std::env::var("MLRD_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0) // 0 lets rayon pick all cores
}

fn with_setup(
    args: CommonArgs,
    f: impl FnOnce(&CommonArgs, ConfigFile) -> mlrd::Result<bool>,
) -> mlrd::Result<bool> {
    let mut cfg = ConfigFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Config(format!("cannot create output dir: {e}")))?;
    f(&args, cfg)
}

fn verify(args: CommonArgs, kind: ExperimentKind) -> mlrd::Result<bool> {
    let threads = thread_count(&args);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    with_setup(args.clone(), |args, mut cfg| {
        cfg.experiment = Some(kind);
        let exp: ExperimentConfig = cfg.to_experiment()?;
        // admissibility failures are configuration-class errors (exit 2)
        if exp.spec.kind == ProcessKind::LinearLrd {
            let rep = check_conditions(&exp.spec);
            if !rep.pass() {
                return Err(Error::Hypothesis(rep.describe_failures()));
            }
        }
        let report = pool.install(|| run(&exp))?;
        for line in report.summary_lines() {
            println!("{line}");
        }
        write_report(args, &report, threads)?;
        Ok(report.passed)
    })
}

fn write_report(args: &CommonArgs, report: &ConvergenceReport, threads: usize) -> mlrd::Result<()> {
    let base = args.out.join(format!("{}_report", report.experiment));
    if args.format != Format::Csv {
        let json = report.to_json()?;
        std::fs::write(base.with_extension("json"), &json)?;
        let sidecar = ReportSidecar {
            runtime_seconds: report.runtime_seconds,
            threads,
            report_digest: report.digest()?,
        };
        std::fs::write(
            base.with_extension("meta.json"),
            serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Parse(e.to_string()))?,
        )?;
    }
    if args.format != Format::Json {
        std::fs::write(base.with_extension("csv"), report.matrices_csv())?;
    }
    println!("report written to {}", base.with_extension("json").display());
    Ok(())
}

fn cmd_simulate(args: &CommonArgs, cfg: ConfigFile) -> mlrd::Result<bool> {
    let spec = cfg.spec.build_unchecked()?;
    let n = cfg.n.unwrap_or(1024);
    let m = cfg.truncation.unwrap_or(10 * n);
    let path = match spec.kind {
        ProcessKind::LinearLrd => {
            let rep = check_conditions(&spec);
            if !rep.pass() {
                return Err(Error::Hypothesis(rep.describe_failures()));
            }
            mlrd::simulate::simulate_linear(&spec, n, m, cfg.seed)?
        }
        ProcessKind::GaussianDiagonal => {
            let cap = cfg.gaussian_cap.unwrap_or(mlrd::simulate::DEFAULT_GAUSSIAN_CAP);
            mlrd::simulate::GaussianSampler::with_cap(&spec, n, cap)?.sample(cfg.seed, 0)
        }
        ProcessKind::WhiteNoise => mlrd::simulate::simulate_white(&spec, n, cfg.seed, 0)?,
    };
    if args.format != Format::Json {
        let mut file = std::fs::File::create(args.out.join("path.csv"))?;
        path.write_csv(&mut file)?;
    }
    if args.format != Format::Csv {
        let mut file = std::fs::File::create(args.out.join("path.bin"))?;
        path.write_binary(&mut file)?;
    }
    println!(
        "simulated {} x {} path (seed {}, truncation {}, tail variance bound {:.3e})",
        path.n, path.d, path.seed, path.truncation, path.tail_variance_bound
    );
    Ok(true)
}

fn cmd_gamma(args: &CommonArgs, cfg: ConfigFile) -> mlrd::Result<bool> {
    let spec = cfg.spec.build_unchecked()?;
    let k_max = cfg.k_max.unwrap_or(64);
    let m = cfg.truncation.unwrap_or(10 * (k_max + 1));
    let gams = theoretical_gamma_upto(&spec, k_max, m)?;
    let d = spec.dim();
    let mut out = String::from("k,i,j,gamma\n");
    for (k, g) in gams.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                out.push_str(&format!("{k},{i},{j},{:.17e}\n", g.get(i, j)));
            }
        }
    }
    std::fs::write(args.out.join("gamma.csv"), out)?;
    println!("wrote gamma(0..{k_max}) for a {d}-dimensional spec");
    Ok(true)
}

fn matrix_json(m: &SquareMatrix) -> serde_json::Value {
    let d = m.dim();
    serde_json::json!((0..d).map(|i| m.row(i).to_vec()).collect::<Vec<_>>())
}

fn cmd_normalize(args: &CommonArgs, cfg: ConfigFile) -> mlrd::Result<bool> {
    let spec = cfg.spec.build_unchecked()?;
    let n = cfg.n.unwrap_or(1024);
    let tau = cfg.tau.unwrap_or(1);
    let mut payload = serde_json::Map::new();
    payload.insert("n".into(), serde_json::json!(n));
    match spec.kind {
        ProcessKind::LinearLrd | ProcessKind::WhiteNoise => {
            let m = cfg.truncation.unwrap_or(10 * n);
            let norm = mlrd::normalize::exact_normalization(&spec, n, m)?;
            payload.insert("sigma_sq".into(), matrix_json(&norm.sigma_sq));
            payload.insert("sigma_inv_sqrt".into(), matrix_json(&norm.inv_sqrt));
            payload.insert("column_variances".into(), matrix_json(&norm.column_variances));
            if spec.kind == ProcessKind::LinearLrd {
                let rep = check_conditions(&spec);
                if !rep.pass() {
                    return Err(Error::Hypothesis(rep.describe_failures()));
                }
                let r = mlrd::model::limiting_r(&spec)?;
                let asym = mlrd::normalize::asymptotic_normalization(&r, &spec.memory, tau)?;
                payload.insert("r_matrix".into(), matrix_json(&r.entries));
                payload.insert("x_matrix".into(), matrix_json(&asym.x_matrix));
                payload.insert("a_factor".into(), matrix_json(&asym.a_factor));
                payload.insert(
                    "asymptotic_normalizer".into(),
                    matrix_json(&mlrd::normalize::asymptotic_normalizer(&asym, n)),
                );
            }
        }
        ProcessKind::GaussianDiagonal => {
            let r = spec.r_matrix()?;
            let asym = mlrd::normalize::asymptotic_normalization(&r, &spec.memory, tau)?;
            payload.insert("r_matrix".into(), matrix_json(&r.entries));
            payload.insert("x_matrix".into(), matrix_json(&asym.x_matrix));
            payload.insert("a_factor".into(), matrix_json(&asym.a_factor));
            payload.insert(
                "asymptotic_normalizer".into(),
                matrix_json(&mlrd::normalize::asymptotic_normalizer(&asym, n)),
            );
        }
    }
    payload.insert(
        "operator_normalizer".into(),
        matrix_json(&mlrd::normalize::operator_normalizer(&spec.memory, n)),
    );
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(payload))
        .map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(args.out.join("normalizers.json"), text)?;
    println!("wrote normalizers.json (n = {n}, tau = {tau})");
    Ok(true)
}

fn cmd_hermite(args: &CommonArgs, cfg: ConfigFile) -> mlrd::Result<bool> {
    let sub = cfg
        .subordination
        .ok_or_else(|| Error::Config("hermite subcommand needs a [subordination] table".into()))?;
    let dim = cfg.spec.dimension;
    let maps = if sub.g.len() == 1 { vec![sub.g[0]; dim] } else { sub.g.clone() };
    let coeffs =
        mlrd::hermite::HermiteCoefficients::from_maps(&maps, sub.l_max, sub.quad_order, sub.rank_tol)?;
    let payload = serde_json::json!({
        "rank": coeffs.rank,
        "quad_order": coeffs.quad_order,
        "tol": coeffs.tol,
        "coefficients": coeffs.coeffs,
        "leading": coeffs.leading(),
        "centering": coeffs.centering(),
    });
    let text =
        serde_json::to_string_pretty(&payload).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(args.out.join("hermite.json"), text)?;
    println!("rank tau = {}; wrote hermite.json", coeffs.rank);
    Ok(true)
}

/// Quick example suite: trivial-tier identities from every module.
fn selftest() -> mlrd::Result<bool> {
    use mlrd::matalg::{diag_power, DiagonalExponent};
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("[{}] {name}", if ok { "pass" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let g = DiagonalExponent::new(vec![0.0, 0.0])?;
    check("diag_power zero exponents -> identity", {
        diag_power(&g, 2.0)?.max_abs_diff(&SquareMatrix::identity(2)) < 1e-15
    });
    check("hermite H_2(2) = 3", (mlrd::hermite::hermite_poly(2, 2.0) - 3.0).abs() < 1e-15);
    check("hermite H_3(2) = 2", (mlrd::hermite::hermite_poly(3, 2.0) - 2.0).abs() < 1e-15);
    check("isserlis E Z^4 = 3", {
        (mlrd::estimators::isserlis_fourth(&SquareMatrix::identity(1), 0, 0, 0, 0)? - 3.0).abs()
            < 1e-15
    });
    check("x_matrix scalar tau=1 d=0.25 R=1 -> 8/3", {
        let memory = mlrd::model::MemoryParameters::new(vec![0.25])?;
        let r = mlrd::model::RMatrix {
            entries: SquareMatrix::identity(1),
            c1: SquareMatrix::identity(1),
            c2: SquareMatrix::identity(1),
            c3: SquareMatrix::identity(1),
        };
        (mlrd::normalize::x_matrix(&r, &memory, 1)?.get(0, 0) - 8.0 / 3.0).abs() < 1e-12
    });
    check("beta(1, 0.25) positive", mlrd::limits::beta_constant(1, 0.25)? > 0.0);
    check("white-noise gamma(0) = I", {
        let spec = mlrd::model::ProcessSpec::white_noise(2, mlrd::simulate::InnovationLaw::StandardNormal)?;
        mlrd::model::theoretical_gamma(&spec, 0, 8)?.max_abs_diff(&SquareMatrix::identity(2)) < 1e-15
    });
    check("operator normalizer symmetric", {
        let memory = mlrd::model::MemoryParameters::new(vec![0.2, 0.1])?;
        let b = mlrd::normalize::operator_normalizer(&memory, 100);
        b.max_abs_diff(&b.transpose()) == 0.0
    });
    check("innovations deterministic", {
        let a = mlrd::simulate::gen_innovations(mlrd::simulate::InnovationLaw::Rademacher, 32, 2, 5);
        let b = mlrd::simulate::gen_innovations(mlrd::simulate::InnovationLaw::Rademacher, 32, 2, 5);
        a == b
    });
    check("partial sum at t=0 vanishes", {
        let spec = mlrd::model::ProcessSpec::white_noise(2, mlrd::simulate::InnovationLaw::StandardNormal)?;
        let p = mlrd::simulate::simulate_white(&spec, 16, 3, 0)?;
        let ps = mlrd::simulate::partial_sum_path(&p, &[0.0])?;
        ps.at(0).iter().all(|v| *v == 0.0)
    });
    check("ofbm kernel vanishes at t=0", {
        mlrd::limits::limit_kernel_f(2, 0.2, 0.0, &[0.4, -0.3])?.norm() < 1e-15
    });

    println!("selftest: {} checks failed", failures);
    Ok(failures == 0)
}
