//! Acceptance criteria. Runs without the test harness so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.
//!
//! `MDEP_ACCEPTANCE=2,5` restricts the run to the listed criteria.

use std::process::ExitCode;
use std::time::Instant;

use mdep_core::dcov::{dcov_sq, dcov_sq_abc, pairwise_distances, v_center};
use mdep_core::estimator::{mdep_objective, mdep_subgradient};
use mdep_core::inference::{hessian_at_bandwidth, omega_estimate};
use mdep_core::models::{jacobian, residuals};
use mdep_core::rng::stream_rng;
use mdep_core::simlab::{
    coverage_experiment, relevance_experiment, run_replications, spec_test_experiment, DgpId, DgpSpec,
    Estimator, IntervalMethod, Metrics, RelevanceTransform, SimOptions, SimulationResult,
};
use mdep_core::{Dataset, Family, FitOptions, ModelSpec};
use nalgebra::DMatrix;
use rand::Rng;

/// Fixed before any criterion was run; never tuned.
const SEED: u64 = 20_240_501;

/// Relative band `target · (1 ± tol)`.
fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target.abs()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sim(id: DgpId, n: usize, reps: usize, estimators: &[Estimator], restarts: usize) -> SimulationResult {
    let spec = DgpSpec::new(id, n).unwrap();
    let opts = SimOptions {
        fit: FitOptions {
            restarts,
            ..FitOptions::default()
        },
        workers: 0,
    };
    run_replications(&spec, estimators, reps, SEED, &opts).unwrap()
}

fn scaled(res: &SimulationResult, e: Estimator, k: usize) -> [f64; 3] {
    let m: Metrics = res.cell(e, k).unwrap().metrics.unwrap();
    m.scaled()
}

fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0))
}

fn c1_formulation_equivalence() -> Outcome {
    let mut rng = stream_rng(SEED, 1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..=100);
        let d = [1, 2, 5][rng.random_range(0..3)];
        let z = random_matrix(&mut rng, n, d);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = dcov_sq(&u, &v_center(&pairwise_distances(&z).unwrap())).unwrap();
        let b = dcov_sq_abc(&u, &z).unwrap();
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
    }
    outcome(worst <= 1e-10, format!("max |a-b|/(1+|b|) = {worst:.2e} (<= 1e-10)"))
}

fn c2_lin_i_n100() -> Outcome {
    let res = sim(DgpId::LinI, 100, 2000, &[Estimator::MDep, Estimator::Ols], 5);
    let mdep = scaled(&res, Estimator::MDep, 0)[2];
    let ols = scaled(&res, Estimator::Ols, 0)[2];
    let pass = within(mdep, 5.951, 0.15) && within(ols, 10.515, 0.15) && mdep < ols;
    outcome(
        pass,
        format!("RMSE(theta1) x100: MDep {mdep:.3} (5.951 +-15%), OLS {ols:.3} (10.515 +-15%)"),
    )
}

fn c3_lin_v_n100() -> Outcome {
    let res = sim(DgpId::LinV, 100, 2000, &[Estimator::MDep, Estimator::Tsls], 5);
    let m1 = scaled(&res, Estimator::MDep, 0);
    let t1 = scaled(&res, Estimator::Tsls, 0);
    let m = scaled(&res, Estimator::MDep, 1);
    let t = scaled(&res, Estimator::Tsls, 1);
    let rmse_ok = within(m[2], 18.246, 0.20);
    let mb_masked = t[0].abs() > 500.0;
    let mb_ok = mb_masked || within(t[0], 87.437, 0.25);
    let beats = (0..3).all(|k| m[k].abs() < t[k].abs());
    let show = |v: f64| if v.abs() > 500.0 { "-".to_string() } else { format!("{v:.3}") };
    outcome(
        rmse_ok && mb_ok && beats,
        format!(
            "theta2: MDep RMSE {:.3} (18.246 +-20%); 2SLS MB {} (87.437 +-25% or masked); \
             MDep |MB|/MAD/RMSE {:.3}/{:.3}/{:.3} vs 2SLS {}/{}/{}; theta1 (info) MDep {:.3}/{:.3}/{:.3} vs 2SLS {}/{}/{}",
            m[2], show(t[0]), m[0].abs(), m[1], m[2], show(t[0].abs()), show(t[1]), show(t[2]),
            m1[0].abs(), m1[1], m1[2], show(t1[0].abs()), show(t1[1]), show(t1[2])
        ),
    )
}

fn c4_lin_i_n2500() -> Outcome {
    let res = sim(DgpId::LinI, 2500, 500, &[Estimator::MDep], 1);
    let rmse = scaled(&res, Estimator::MDep, 0)[2];
    outcome(
        within(rmse, 0.989, 0.20),
        format!("RMSE(theta1) x100: MDep {rmse:.3} (0.989 +-20%), single start per fit"),
    )
}

fn c5_coverage() -> Outcome {
    let spec = DgpSpec::new(DgpId::CovI, 100).unwrap();
    let res = coverage_experiment(&spec, 500, 299, 0.05, SEED, &SimOptions::default()).unwrap();
    let pct = |m: IntervalMethod, k: usize| res.cell(m, k).and_then(|c| c.percent()).unwrap_or(f64::NAN);
    let asym = pct(IntervalMethod::Asymptotic, 0);
    let perc = pct(IntervalMethod::Percentile, 0);
    let pass = (asym - 96.2).abs() <= 2.5 && (perc - 94.0).abs() <= 3.0;
    outcome(
        pass,
        format!(
            "theta1 coverage %: asymptotic {asym:.1} (96.2 +-2.5), percentile {perc:.1} (94.0 +-3); \
             theta2 (info): asymptotic {:.1}, percentile {:.1}",
            pct(IntervalMethod::Asymptotic, 1),
            pct(IntervalMethod::Percentile, 1)
        ),
    )
}

fn c6_relevance() -> Outcome {
    let size = relevance_experiment(200, 0.0, RelevanceTransform::Abs, true, 500, 199, 0.05, SEED, 0).unwrap();
    let power = relevance_experiment(200, 1.0, RelevanceTransform::Abs, true, 500, 199, 0.05, SEED, 0).unwrap();
    let (s, p) = (size.rate(), power.rate());
    outcome(
        (0.025..=0.08).contains(&s) && p >= 0.80,
        format!(
            "size {:.1}% ({}/{}, in [2.5, 8]), power at lambda=1 {:.1}% ({}/{}, >= 80)",
            100.0 * s, size.rejections, size.completed, 100.0 * p, power.rejections, power.completed
        ),
    )
}

fn c7_spec_test() -> Outcome {
    let opts = SimOptions::default();
    let null = DgpSpec::new(DgpId::Lin2I, 100).unwrap();
    let size = spec_test_experiment(&null, 500, 199, 0.05, SEED, &opts).unwrap();
    let alt = DgpSpec::new(DgpId::Lin2IEndogenous, 500).unwrap();
    let power = spec_test_experiment(&alt, 50, 199, 0.05, SEED, &opts).unwrap();
    let (s, p) = (size.rate(), power.rate());
    outcome(
        (0.02..=0.08).contains(&s) && p >= 0.50,
        format!(
            "size {:.1}% ({}/{}, in [2, 8]), power at n=500 {:.1}% ({}/{} replications, >= 50)",
            100.0 * s, size.rejections, size.completed, 100.0 * p, power.rejections, power.completed
        ),
    )
}

/// Distance from `theta` to the nearest kink: the smallest `|ũ_ij|`.
fn min_gap(u: &[f64]) -> f64 {
    let mut g = f64::INFINITY;
    for i in 0..u.len() {
        for j in (i + 1)..u.len() {
            g = g.min((u[i] - u[j]).abs());
        }
    }
    g
}

fn c8_subgradient() -> Outcome {
    let mut rng = stream_rng(SEED, 8);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 50 {
        let family = if checked % 2 == 0 { Family::Linear } else { Family::ExpIndex };
        let n = rng.random_range(8..30);
        let x = random_matrix(&mut rng, n, 2).map(|v| v / 3.0);
        let z = DMatrix::from_fn(n, 2, |i, k| x[(i, k)] + rng.random_range(-0.5..0.5));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let index = 0.3 + 0.5 * x[(i, 0)] - 0.4 * x[(i, 1)];
                match family {
                    Family::Linear => index + rng.random_range(-1.0..1.0),
                    _ => index.exp() + rng.random_range(-0.5..0.5),
                }
            })
            .collect();
        let data = Dataset::new(y, x, z).unwrap();
        let spec = ModelSpec::new(family, 2);
        let theta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let zc = v_center(&pairwise_distances(data.z()).unwrap());
        let h = 1e-6;
        let u = residuals(&spec, &theta, &data).unwrap();
        // skip points within reach of a kink of the finite-difference stencil
        if min_gap(&u) < 1e3 * h {
            continue;
        }
        let g = mdep_subgradient(&theta, &spec, &data, &zc).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..2 {
            let mut up = theta;
            let mut dn = theta;
            up[k] += h;
            dn[k] -= h;
            let fd = (mdep_objective(&up, &spec, &data, &zc).unwrap() - mdep_objective(&dn, &spec, &data, &zc).unwrap())
                / (2.0 * h);
            num += (g[k] - fd).powi(2);
            den += fd * fd;
        }
        worst = worst.max((num / den.max(1e-300)).sqrt());
        checked += 1;
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} over 50 points (< 1e-5)"))
}

/// The triple sum written out term by term.
fn naive_omega(u: &[f64], jac: &DMatrix<f64>, zc: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.len();
    let p = jac.ncols();
    let xt = |i: usize, j: usize| (jac.row(i) - jac.row(j)).transpose();
    let ind = |i: usize, j: usize| if u[i] - u[j] < 0.0 { 1.0 } else { 0.0 };
    let mut omega = DMatrix::zeros(p, p);
    for i in 0..n {
        for j in 0..n {
            let xij = xt(i, j);
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let xik = xt(i, k);
                omega += &xij * xij.transpose() * zc[(i, j)].powi(2);
                omega += &xij * xik.transpose() * (2.0 * zc[(i, j)] * zc[(i, k)] * (4.0 * ind(i, j) * ind(i, k) - 1.0));
            }
        }
    }
    let omega = omega / (n as f64).powi(3);
    (&omega + omega.transpose()) * 0.5
}

fn naive_hessian(u: &[f64], jac: &DMatrix<f64>, zc: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let n = u.len();
    let mut h = DMatrix::zeros(jac.ncols(), jac.ncols());
    for i in 0..n {
        for j in 0..n {
            if (u[i] - u[j]).abs() <= c {
                let x = (jac.row(i) - jac.row(j)).transpose();
                h += &x * x.transpose() * zc[(i, j)];
            }
        }
    }
    h / ((n * n) as f64 * c)
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn c9_omega_and_hessian() -> Outcome {
    let mut rng = stream_rng(SEED, 9);
    let mut worst_omega = 0.0f64;
    let mut worst_h = 0.0f64;
    for inst in 0..50 {
        let n = rng.random_range(5..=40);
        let p = 1 + inst % 3;
        let x = random_matrix(&mut rng, n, p);
        let z = DMatrix::from_fn(n, p, |i, k| x[(i, k)] + rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| x.row(i).sum() + rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(y, x, z).unwrap();
        let spec = ModelSpec::new(Family::Linear, p);
        let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
        let zc = v_center(&pairwise_distances(data.z()).unwrap());
        let zc_dense = DMatrix::from_fn(n, n, |i, j| zc.get(i, j));
        let u = residuals(&spec, &theta, &data).unwrap();
        let jac = jacobian(&spec, &theta, &data).unwrap().to_matrix();
        let fast = omega_estimate(&theta, &spec, &data, &zc).unwrap();
        worst_omega = worst_omega.max(rel_diff(&fast, &naive_omega(&u, &jac, &zc_dense)));
        let c = rng.random_range(0.2..2.0);
        let h = hessian_at_bandwidth(&theta, &spec, &data, &zc, c).unwrap();
        let hn = naive_hessian(&u, &jac, &zc_dense, c);
        if hn.norm() > 0.0 {
            worst_h = worst_h.max(rel_diff(&h, &hn));
        }
    }
    outcome(
        worst_omega <= 1e-10 && worst_h <= 1e-10,
        format!("max relative difference: Omega {worst_omega:.2e}, H {worst_h:.2e} (<= 1e-10)"),
    )
}

fn c10_cauchy_robustness() -> Outcome {
    let res = sim(DgpId::Lin2III, 500, 500, &[Estimator::MDep, Estimator::Ols], 5);
    let mdep = scaled(&res, Estimator::MDep, 0)[2];
    let ols = scaled(&res, Estimator::Ols, 0)[2];
    outcome(
        within(mdep, 8.734, 0.25) && ols >= 20.0 * mdep,
        format!("RMSE(theta1) x100: MDep {mdep:.3} (8.734 +-25%), OLS {ols:.1} (ratio {:.1} >= 20)", ols / mdep),
    )
}

fn c11_determinism() -> Outcome {
    let spec = DgpSpec::new(DgpId::LinII, 80).unwrap();
    let cov_spec = DgpSpec::new(DgpId::CovI, 60).unwrap();
    let estimators = [Estimator::MDep, Estimator::Tsls];
    let render = |workers: usize| {
        let opts = SimOptions {
            workers,
            ..SimOptions::default()
        };
        let s = run_replications(&spec, &estimators, 24, SEED, &opts).unwrap();
        let c = coverage_experiment(&cov_spec, 6, 30, 0.05, SEED, &opts).unwrap();
        format!("{:?}{:?}{:?}{:?}", s.per_rep, s.aggregates, c.records, c.cells)
    };
    let base = render(1);
    let same = [render(1), render(2), render(4), render(0)].iter().all(|r| *r == base);
    outcome(same, format!("simulate + coverage output identical for workers 1,1,2,4,ambient: {same}"))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "dCov formulation equivalence", c1_formulation_equivalence),
    (2, "lin-i n=100 RMSE, MDep vs OLS", c2_lin_i_n100),
    (3, "lin-v n=100, MDep vs 2SLS", c3_lin_v_n100),
    (4, "lin-i n=2500 RMSE", c4_lin_i_n2500),
    (5, "cov-i interval coverage", c5_coverage),
    (6, "pdCov relevance test size/power", c6_relevance),
    (7, "T_n specification test size/power", c7_spec_test),
    (8, "subgradient vs finite differences", c8_subgradient),
    (9, "Omega fast path and H vs brute force", c9_omega_and_hessian),
    (10, "lin2-iii Cauchy robustness", c10_cauchy_robustness),
    (11, "determinism across worker counts", c11_determinism),
];

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("MDEP_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    println!("acceptance criteria (seed {SEED})");
    for (id, name, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
