//! One function per subcommand. Each returns the finished report text; the
//! caller owns all writing.

use mdep_core::estimator::{tsls_robust, with_intercept, LeastSquaresFit};
use mdep_core::inference::{fit_covariance, pairs_bootstrap, pdcov_relevance_test, wild_spec_test};
use mdep_core::models::BoundModel;
use mdep_core::rng::child_seed;
use mdep_core::simlab::{
    coverage_experiment, run_replications, DgpSpec, Estimator, IntervalMethod, SimOptions,
};
use mdep_core::{mdep_fit, Dataset, FitOptions, ModelSpec};
use nalgebra::DMatrix;

use crate::config::{Format, RunConfig, Source};
use crate::data::{load, relevance_roles};
use crate::error::{classify, CliError};
use crate::report::{
    aligned, coefficient_label, csv_block, exact, fixed, opt_fixed, preamble, yes_no,
};

pub struct Output {
    pub report: String,
    pub per_rep: Option<String>,
}

impl Output {
    fn report(report: String) -> Self {
        Self {
            report,
            per_rep: None,
        }
    }
}

fn source(cfg: &RunConfig) -> &Source {
    cfg.source.as_ref().expect("resolved configs carry a source")
}

fn simulated(cfg: &RunConfig) -> Result<DgpSpec, CliError> {
    match source(cfg) {
        Source::Simulated { dgp, n } => Ok(DgpSpec::new(*dgp, *n)?),
        Source::Csv { .. } => unreachable!("simulation commands reject --input"),
    }
}

/// Model, data and the seed for the MDep restarts. A simulated sample is
/// replication 0 of `simulate` with the same seed.
fn model_and_data(cfg: &RunConfig) -> Result<(ModelSpec, Dataset, u64), CliError> {
    let data = load(source(cfg), cfg.seed)?;
    Ok(match source(cfg) {
        Source::Csv { family, .. } => (ModelSpec::new(*family, data.x().ncols()), data, cfg.seed),
        Source::Simulated { dgp, n } => (
            DgpSpec::new(*dgp, *n)?.model_spec(),
            data,
            child_seed(cfg.seed, 0),
        ),
    })
}

fn data_error(data: &Dataset) -> impl Fn(mdep_core::MdepError) -> CliError + '_ {
    move |e| classify(e, |k| data.names().instruments.get(k).cloned())
}

fn describe_source(cfg: &RunConfig, data: &Dataset, spec: &ModelSpec) -> String {
    let origin = match source(cfg) {
        Source::Csv { path, .. } => path.display().to_string(),
        Source::Simulated { dgp, .. } => format!("simulated {dgp}"),
    };
    format!(
        "{origin}, n = {}, family {}, covariates {}, instruments {}",
        data.n(),
        spec.family(),
        data.names().covariates.join(","),
        data.names().instruments.join(",")
    )
}

fn bracketed(v: Option<f64>, open: char, close: char) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{open}{}{close}", fixed(v, 4)))
}

pub fn fit(cfg: &RunConfig) -> Result<Output, CliError> {
    let (spec, data, fit_seed) = model_and_data(cfg)?;
    let opts = FitOptions {
        restarts: cfg.restarts,
        seed: fit_seed,
        ..FitOptions::default()
    };
    let fit = mdep_fit(&spec, &data, &opts).map_err(data_error(&data))?;
    let p = spec.p_theta();
    let mut notes = Vec::new();
    if !fit.converged {
        notes.push("the best Nelder-Mead run stopped at the iteration limit".to_string());
    }

    let asymptotic: Option<Vec<f64>> = match fit_covariance(&spec, &data, &fit.theta_hat, cfg.alpha) {
        Ok(c) => Some(c.std_errors),
        Err(e) => {
            notes.push(format!("asymptotic standard errors unavailable: {e}"));
            None
        }
    };
    let bootstrap: Option<Vec<f64>> = if cfg.boot > 0 {
        let b = pairs_bootstrap(&spec, &data, &fit.theta_hat, &opts, cfg.boot, child_seed(fit_seed, 1))?;
        if b.failures > 0 {
            notes.push(format!("{} of {} bootstrap refits failed", b.failures, b.b));
        }
        if b.replicates.len() < 2 {
            notes.push("too few successful bootstrap refits for standard errors".into());
            None
        } else {
            Some(
                (0..p)
                    .map(|k| b.intervals(k, cfg.alpha).map(|iv| iv.std_error))
                    .collect::<Result<_, _>>()?,
            )
        }
    } else {
        None
    };
    let tsls: Option<LeastSquaresFit> = if spec.family().is_linear_index() {
        let model = BoundModel::new(spec, &data).map_err(data_error(&data))?;
        match tsls_robust(
            model.transformed_outcome(),
            &with_intercept(data.x()),
            &with_intercept(data.z()),
        ) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("2SLS unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };

    let mut terms = vec!["(intercept)".to_string()];
    terms.extend(data.names().covariates.iter().cloned());
    let mdep_estimates: Vec<f64> = std::iter::once(fit.intercept_hat)
        .chain(fit.theta_hat.iter().copied())
        .collect();
    let shifted = |v: &Option<Vec<f64>>, t: usize| -> Option<f64> {
        if t == 0 {
            None
        } else {
            v.as_ref().map(|v| v[t - 1])
        }
    };

    let head = preamble(
        &cfg.command_line(),
        &[
            ("seed", cfg.seed.to_string()),
            ("boot", cfg.boot.to_string()),
            ("data", describe_source(cfg, &data, &spec)),
        ],
    );
    let mut out = head;
    match cfg.format {
        Format::Text => {
            let mut rows = vec![{
                let mut h = vec!["term".to_string(), "MDep".to_string()];
                if tsls.is_some() {
                    h.push("2SLS".into());
                }
                h
            }];
            for (t, term) in terms.iter().enumerate() {
                let mut est = vec![term.clone(), fixed(mdep_estimates[t], 4)];
                let mut se = vec![String::new(), bracketed(shifted(&asymptotic, t), '(', ')')];
                if let Some(ts) = &tsls {
                    est.push(fixed(ts.coefficients[t], 4));
                    se.push(format!("({})", fixed(ts.std_errors[t], 4)));
                }
                rows.push(est);
                rows.push(se);
                if bootstrap.is_some() {
                    rows.push(vec![String::new(), bracketed(shifted(&bootstrap, t), '[', ']')]);
                }
            }
            out.push('\n');
            out.push_str(&aligned(&rows));
            out.push('\n');
            out.push_str("standard errors: (asymptotic sandwich), [pairs bootstrap]; 2SLS errors are heteroskedasticity-robust\n");
            out.push_str(&format!(
                "objective: {:.6e}\nconverged: {}\nstarts: {} (best: {})\n",
                fit.objective_value,
                yes_no(fit.converged),
                fit.starts.len(),
                fit.best_start + 1
            ));
            for n in &notes {
                out.push_str(&format!("note: {n}\n"));
            }
        }
        Format::Csv => {
            for n in &notes {
                out.push_str(&format!("# note: {n}\n"));
            }
            let mut records = Vec::new();
            for (t, term) in terms.iter().enumerate() {
                records.push(vec![
                    term.clone(),
                    "MDep".into(),
                    exact(Some(mdep_estimates[t])),
                    exact(shifted(&asymptotic, t)),
                    exact(shifted(&bootstrap, t)),
                ]);
            }
            if let Some(ts) = &tsls {
                for (t, term) in terms.iter().enumerate() {
                    records.push(vec![
                        term.clone(),
                        "2SLS".into(),
                        exact(Some(ts.coefficients[t])),
                        exact(Some(ts.std_errors[t])),
                        String::new(),
                    ]);
                }
            }
            out.push_str(&csv_block(
                &["term", "estimator", "estimate", "se_asymptotic", "se_bootstrap"],
                &records,
            ));
        }
    }
    Ok(Output::report(out))
}

pub fn simulate(cfg: &RunConfig) -> Result<Output, CliError> {
    let spec = simulated(cfg)?;
    let estimators = cfg
        .estimators
        .clone()
        .unwrap_or_else(|| Estimator::defaults_for(spec.id));
    let opts = SimOptions {
        fit: FitOptions {
            restarts: cfg.restarts,
            ..FitOptions::default()
        },
        workers: cfg.workers,
    };
    let reps = cfg.reps.expect("simulate requires --reps");
    let res = run_replications(&spec, &estimators, reps, cfg.seed, &opts)?;
    let p = res.truth.len();
    let truth: Vec<String> = res.truth.iter().map(|t| format!("{t}")).collect();
    let failures: Vec<String> = estimators
        .iter()
        .map(|&e| {
            let f = res.per_rep.iter().filter(|r| {
                let k = estimators.iter().position(|&x| x == e).expect("listed");
                r.estimates[k].is_none()
            });
            format!("{} {}", e.name(), f.count())
        })
        .collect();
    let head = preamble(
        &cfg.command_line(),
        &[
            ("seed", cfg.seed.to_string()),
            ("reps", reps.to_string()),
            (
                "design",
                format!(
                    "{}, n = {}, family {}, true theta = ({})",
                    spec.id,
                    spec.n,
                    spec.id.family(),
                    truth.join(", ")
                ),
            ),
            ("failed fits", failures.join(", ")),
            ("unconverged MDep fits (kept)", res.unconverged.to_string()),
        ],
    );
    let mut out = head;
    match cfg.format {
        Format::Text => {
            out.push_str("# entries are 100 x mean bias (MB), median absolute error (MAD) and RMSE; entries above 500 in absolute value are shown as -\n\n");
            let mut top = vec![String::new()];
            let mut sub = vec!["estimator".to_string()];
            for k in 0..p {
                top.extend([String::new(), coefficient_label(k), String::new()]);
                sub.extend(["MB".to_string(), "MAD".to_string(), "RMSE".to_string()]);
            }
            let mut rows = vec![top, sub];
            for &e in &estimators {
                let mut row = vec![e.name().to_string()];
                for k in 0..p {
                    let cell = res.cell(e, k).and_then(|c| c.metrics);
                    match cell {
                        Some(m) => row.extend(m.masked().iter().map(|v| opt_fixed(*v, 3))),
                        None => row.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
                    }
                }
                rows.push(row);
            }
            out.push_str(&aligned(&rows));
        }
        Format::Csv => {
            out.push_str("# raw-scale values (not multiplied by 100), unmasked\n");
            let mut records = Vec::new();
            for c in &res.aggregates {
                let m = c.metrics;
                records.push(vec![
                    c.estimator.name().to_string(),
                    coefficient_label(c.coefficient),
                    exact(m.map(|m| m.mean_bias)),
                    exact(m.map(|m| m.mad)),
                    exact(m.map(|m| m.rmse)),
                    m.map_or(0, |m| m.count).to_string(),
                    c.failures.to_string(),
                ]);
            }
            out.push_str(&csv_block(
                &["estimator", "coefficient", "mean_bias", "mad", "rmse", "count", "failures"],
                &records,
            ));
        }
    }

    let per_rep = cfg.per_rep.as_ref().map(|_| {
        let mut s = preamble(&cfg.command_line(), &[("seed", cfg.seed.to_string()), ("reps", reps.to_string())]);
        let mut header = vec!["rep".to_string(), "estimator".to_string(), "converged".to_string()];
        header.extend((0..p).map(coefficient_label));
        let mut records = Vec::new();
        for r in &res.per_rep {
            for (k, &e) in estimators.iter().enumerate() {
                let mut rec = vec![r.rep.to_string(), e.name().to_string(), yes_no(r.converged[k]).to_string()];
                for j in 0..p {
                    rec.push(exact(r.estimates[k].as_ref().map(|v| v[j])));
                }
                records.push(rec);
            }
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        s.push_str(&csv_block(&header, &records));
        s
    });
    Ok(Output {
        report: out,
        per_rep,
    })
}

pub fn coverage(cfg: &RunConfig) -> Result<Output, CliError> {
    let spec = simulated(cfg)?;
    let opts = SimOptions {
        fit: FitOptions {
            restarts: cfg.restarts,
            ..FitOptions::default()
        },
        workers: cfg.workers,
    };
    let reps = cfg.reps.expect("coverage requires --reps");
    let res = coverage_experiment(&spec, reps, cfg.boot, cfg.alpha, cfg.seed, &opts)?;
    let p = res.truth.len();
    let head = preamble(
        &cfg.command_line(),
        &[
            ("seed", cfg.seed.to_string()),
            ("reps", reps.to_string()),
            ("boot", cfg.boot.to_string()),
            (
                "design",
                format!("{}, n = {}, nominal level {}%", spec.id, spec.n, 100.0 * (1.0 - cfg.alpha)),
            ),
        ],
    );
    let mut out = head;
    match cfg.format {
        Format::Text => {
            out.push_str("# coverage in percent of the replications where the interval could be computed\n\n");
            let mut header = vec!["method".to_string()];
            header.extend((0..p).map(coefficient_label));
            header.push("available".into());
            let mut rows = vec![header];
            for method in IntervalMethod::ALL {
                if cfg.boot == 0 && method != IntervalMethod::Asymptotic {
                    continue;
                }
                let mut row = vec![method.name().to_string()];
                for k in 0..p {
                    row.push(opt_fixed(res.cell(method, k).and_then(|c| c.percent()), 1));
                }
                let available = res.cell(method, 0).map_or(0, |c| c.available);
                row.push(format!("{available}/{reps}"));
                rows.push(row);
            }
            out.push_str(&aligned(&rows));
        }
        Format::Csv => {
            let records: Vec<Vec<String>> = res
                .cells
                .iter()
                .filter(|c| cfg.boot > 0 || c.method == IntervalMethod::Asymptotic)
                .map(|c| {
                    vec![
                        c.method.name().to_string(),
                        coefficient_label(c.coefficient),
                        c.covered.to_string(),
                        c.available.to_string(),
                        exact(c.percent()),
                    ]
                })
                .collect();
            out.push_str(&csv_block(&["method", "coefficient", "covered", "available", "percent"], &records));
        }
    }
    let per_rep = cfg.per_rep.as_ref().map(|_| {
        let mut s = preamble(&cfg.command_line(), &[("seed", cfg.seed.to_string()), ("reps", reps.to_string())]);
        let mut records = Vec::new();
        for r in &res.records {
            for method in IntervalMethod::ALL {
                for k in 0..p {
                    if let Some((lo, hi)) = r.interval(method, k) {
                        records.push(vec![
                            r.rep.to_string(),
                            method.name().to_string(),
                            coefficient_label(k),
                            exact(r.theta_hat.as_ref().map(|t| t[k])),
                            exact(Some(lo)),
                            exact(Some(hi)),
                        ]);
                    }
                }
            }
        }
        s.push_str(&csv_block(&["rep", "method", "coefficient", "estimate", "lower", "upper"], &records));
        s
    });
    Ok(Output {
        report: out,
        per_rep,
    })
}

fn columns(m: &DMatrix<f64>, names: &[String], wanted: &[String]) -> DMatrix<f64> {
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| names.iter().position(|n| n == w).expect("role names come from the dataset"))
        .collect();
    DMatrix::from_fn(m.nrows(), idx.len(), |i, k| m[(i, idx[k])])
}

const NON_PIVOTAL: &str = "the statistics are not pivotal; compare p-values, not statistic values, across samples";

fn test_table(cfg: &RunConfig, mut out: String, rows: &[(&str, f64, f64, usize)]) -> String {
    match cfg.format {
        Format::Text => {
            out.push('\n');
            let mut table = vec![vec![
                "statistic".to_string(),
                "value".to_string(),
                "p-value".to_string(),
                format!("reject at {}%", 100.0 * cfg.alpha),
            ]];
            for &(name, stat, p, _) in rows {
                table.push(vec![
                    name.to_string(),
                    format!("{stat:.6e}"),
                    fixed(p, 3),
                    yes_no(p < cfg.alpha).to_string(),
                ]);
            }
            out.push_str(&aligned(&table));
            for &(name, _, _, failures) in rows {
                if failures > 0 {
                    out.push_str(&format!("note: {name}: {failures} of {} bootstrap refits failed\n", cfg.boot));
                }
            }
            out.push_str(&format!("note: {NON_PIVOTAL}\n"));
        }
        Format::Csv => {
            out.push_str(&format!("# note: {NON_PIVOTAL}\n"));
            let records: Vec<Vec<String>> = rows
                .iter()
                .map(|&(name, stat, p, failures)| {
                    vec![
                        name.to_string(),
                        exact(Some(stat)),
                        exact(Some(p)),
                        cfg.boot.to_string(),
                        failures.to_string(),
                    ]
                })
                .collect();
            out.push_str(&csv_block(&["statistic", "value", "p_value", "boot", "failures"], &records));
        }
    }
    out
}

pub fn test_relevance(cfg: &RunConfig) -> Result<Output, CliError> {
    let data = load(source(cfg), cfg.seed)?;
    let names = data.names();
    let roles = relevance_roles(names, cfg.controls.as_deref())?;
    let k = names
        .covariates
        .iter()
        .position(|c| *c == roles.endogenous)
        .expect("endogenous covariate exists");
    let x2: Vec<f64> = data.x().column(k).iter().copied().collect();
    let z2 = columns(data.z(), &names.instruments, &roles.excluded);
    let controls = columns(data.x(), &names.covariates, &roles.controls);
    let err = data_error(&data);
    let linear = pdcov_relevance_test(&x2, &z2, &controls, cfg.boot, cfg.seed, false).map_err(&err)?;
    let nonlinear = pdcov_relevance_test(&x2, &z2, &controls, cfg.boot, cfg.seed, true).map_err(&err)?;
    let controls_text = if roles.controls.is_empty() {
        "none".to_string()
    } else {
        roles.controls.join(",")
    };
    let head = preamble(
        &cfg.command_line(),
        &[
            ("seed", cfg.seed.to_string()),
            ("boot", cfg.boot.to_string()),
            ("data", format!("n = {}", data.n())),
            (
                "roles",
                format!(
                    "endogenous {}, excluded instruments {}, controls {}",
                    roles.endogenous,
                    roles.excluded.join(","),
                    controls_text
                ),
            ),
        ],
    );
    let p = |t: &mdep_core::inference::BootstrapResult| t.p_value.expect("tests report p-values");
    let report = test_table(
        cfg,
        head,
        &[
            ("pdC_n", linear.stat0, p(&linear), linear.failures),
            ("pdC_n^nl", nonlinear.stat0, p(&nonlinear), nonlinear.failures),
        ],
    );
    Ok(Output::report(report))
}

pub fn test_spec(cfg: &RunConfig) -> Result<Output, CliError> {
    let (spec, data, fit_seed) = model_and_data(cfg)?;
    let opts = FitOptions {
        restarts: cfg.restarts,
        seed: fit_seed,
        ..FitOptions::default()
    };
    let err = data_error(&data);
    let fit = mdep_fit(&spec, &data, &opts).map_err(&err)?;
    let test = wild_spec_test(&spec, &data, &fit.theta_hat, &opts, cfg.boot, child_seed(fit_seed, 2)).map_err(&err)?;
    let theta: Vec<String> = fit.theta_hat.iter().map(|v| fixed(*v, 4)).collect();
    let head = preamble(
        &cfg.command_line(),
        &[
            ("seed", cfg.seed.to_string()),
            ("boot", cfg.boot.to_string()),
            ("data", describe_source(cfg, &data, &spec)),
            ("fitted theta", format!("({})", theta.join(", "))),
        ],
    );
    let report = test_table(
        cfg,
        head,
        &[("T_n", test.stat0, test.p_value.expect("tests report p-values"), test.failures)],
    );
    Ok(Output::report(report))
}
