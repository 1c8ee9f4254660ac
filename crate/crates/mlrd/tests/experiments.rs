//! Small-scale integration runs of the four Monte Carlo experiments,
//! exercising the library path end to end (spec -> sampler -> normalizer ->
//! report) at sizes where the targets are loose but structural properties
//! are exact.

use mlrd::hermite::SubordinationMap;
use mlrd::matalg::SquareMatrix;
use mlrd::model::{MemoryParameters, ProcessSpec, SlowlyVaryingSpec};
use mlrd::montecarlo::{
    run, run_fclt, run_subordination, ExperimentConfig, ExperimentKind, SubordinationSettings,
    Tolerances,
};
use mlrd::report::ConvergenceReport;
use mlrd::simulate::InnovationLaw;

fn linear_spec() -> ProcessSpec {
    let memory = MemoryParameters::new(vec![0.35, 0.15]).unwrap();
    let mut ap = SquareMatrix::identity(2);
    ap.set(0, 1, 0.2);
    let mut am = SquareMatrix::identity(2);
    am.set(1, 0, -0.1);
    let sv = SlowlyVaryingSpec::new(ap, am).unwrap();
    ProcessSpec::linear_lrd(memory, sv, InnovationLaw::StandardNormal).unwrap()
}

fn config(kind: ExperimentKind, spec: ProcessSpec) -> ExperimentConfig {
    ExperimentConfig {
        experiment: kind,
        spec,
        n: 256,
        n_list: vec![128, 256],
        truncation: 2560,
        replications: 300,
        seed: 4242,
        grid: vec![0.25, 0.5, 1.0],
        lags: 1,
        subordination: SubordinationSettings {
            maps: vec![SubordinationMap::SquareMinusOne, SubordinationMap::SquareMinusOne],
            l_max: 12,
            quad_order: 128,
            rank_tol: mlrd::hermite::RANK_TOL,
        },
        tolerances: Tolerances { cov_max_abs: 0.4, ..Tolerances::default() },
        gaussian_cap: mlrd::simulate::DEFAULT_GAUSSIAN_CAP,
        stability_check: false,
        stability_replications: 100,
    }
}

#[test]
fn fclt_small_run_passes_and_has_structure() {
    let cfg = config(ExperimentKind::Fclt, linear_spec());
    let rep = run_fclt(&cfg).unwrap();
    // 3 grid points -> 6 ordered pairs
    assert_eq!(rep.comparisons.len(), 6);
    // OFBM self checks are exact identities
    for name in ["ofbm_self_similarity_residual", "ofbm_stationary_increment_residual"] {
        let c = rep.checks.iter().find(|c| c.name == name).unwrap();
        assert!(c.pass, "{name}: {}", c.value);
        assert!(c.value < 1e-10);
    }
    assert!(rep.passed, "{:?}", rep.summary_lines());
    // the exact triangular normalizer is recorded and upper triangular
    let w = rep.normalizers.get("triangular_exact").unwrap();
    assert_eq!(w.get(1, 0), 0.0);
}

#[test]
fn fclt_covariance_at_t1_centers_on_identity() {
    // with the exact triangular normalizer the (1, 1) grid pair targets
    // C(1,1) = I and the empirical covariance is unbiased for it
    let mut cfg = config(ExperimentKind::Fclt, linear_spec());
    cfg.replications = 600;
    let rep = run_fclt(&cfg).unwrap();
    let last = rep
        .comparisons
        .iter()
        .find(|c| c.name.contains("t1.0000_u1.0000"))
        .unwrap();
    assert!(last.target.max_abs_diff(&SquareMatrix::identity(2)) < 0.05);
    assert!(last.max_abs_distance < 0.3);
}

#[test]
fn subordination_with_stability_pass() {
    let memory = MemoryParameters::new(vec![0.2, 0.1]).unwrap();
    let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
    let mut cfg = config(ExperimentKind::Subordination, spec);
    cfg.stability_check = true;
    cfg.stability_replications = 150;
    cfg.tolerances.cov_max_abs = 0.5;
    let rep = run_subordination(&cfg).unwrap();
    assert!(rep.comparisons.iter().any(|c| c.name == "cross_n_stability"));
    assert!(rep.checks.iter().any(|c| c.name == "reduction_tail_ratio" && c.pass));
    assert!(rep.passed, "{:?}", rep.summary_lines());
}

#[test]
fn identity_map_subordination_matches_fclt_machinery() {
    // G(x) = x has rank 1; the subordination experiment then reduces to the
    // Gaussian partial-sum case and the leading covariance centers on I
    let memory = MemoryParameters::new(vec![0.3, 0.1]).unwrap();
    let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
    let mut cfg = config(ExperimentKind::Subordination, spec);
    cfg.subordination.maps = vec![SubordinationMap::Identity, SubordinationMap::Identity];
    cfg.replications = 500;
    cfg.tolerances.cov_max_abs = 0.35;
    let rep = run_subordination(&cfg).unwrap();
    let lead = rep.comparisons.iter().find(|c| c.name == "leading_term_covariance").unwrap();
    assert!(lead.pass, "distance {}", lead.max_abs_distance);
    assert!(rep.passed, "{:?}", rep.summary_lines());
}

#[test]
fn experiment_dispatch_and_json_stability() {
    let cfg = config(ExperimentKind::Fclt, linear_spec());
    let rep1 = run(&cfg).unwrap();
    let rep2 = run(&cfg).unwrap();
    // identical config -> identical report bytes (runtime is sidecar-only)
    let j1 = rep1.to_json().unwrap();
    let j2 = rep2.to_json().unwrap();
    if j1 != j2 {
        std::fs::write("/tmp/e1.json", &j1).unwrap();
        std::fs::write("/tmp/e2.json", &j2).unwrap();
    }
    assert_eq!(j1, j2);
    let parsed = ConvergenceReport::from_json(&j1).unwrap();
    assert_eq!(parsed.to_json().unwrap(), j1);
}

#[test]
fn autocov_sqrtn_small_run() {
    let memory = MemoryParameters::new(vec![0.35, 0.3]).unwrap();
    let spec = ProcessSpec::gaussian_diagonal(memory, vec![0.5, 0.5]).unwrap();
    let mut cfg = config(ExperimentKind::Autocov, spec);
    cfg.n_list = vec![256, 512];
    cfg.replications = 500;
    cfg.tolerances.cov_max_abs = 0.6;
    cfg.tolerances.variance_ratio_low = 0.6;
    cfg.tolerances.variance_ratio_high = 1.6;
    // at this probe size the quadratic-sum normality is still forming; the
    // acceptance fixture tests the 0.01 floor at n = 2048
    cfg.tolerances.ks_p_min = 0.002;
    let rep = run(&cfg).unwrap();
    // KS entries exist for the sqrt-n regime at the largest n
    assert!(!rep.ks.is_empty());
    assert!(rep.passed, "{:?}", rep.summary_lines());
}
