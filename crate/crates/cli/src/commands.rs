use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use stforecast::bayes::{bootstrap_rho_samples, fit_prior_from_bootstrap, optimize_posterior};
use stforecast::bootstrap::{density, render_ci_grid, resample, resample_panel, CiSet};
use stforecast::classical::{
    default_truncation, empirical_covariances, estimate_rho, one_step_predictions, plugin_predict, residuals,
};
use stforecast::eval::{grid_search, kfold_cv, out_of_sample, render_tables, write_tables_csv, CompareReport};
use stforecast::forecast::{combine_predictions, invert_weighting};
use stforecast::io::{self, fmt_sig};
use stforecast::ml::{ModelKind, ModelParams, ModelSpec, SvrKernel};
use stforecast::panel::{apply_weighting, ingest, parse_counts, IngestOptions};
use stforecast::rng::derive_seed;
use stforecast::synth::{generate_counts, generate_panel};
use stforecast::trig::{self, regression_times, select_n};
use stforecast::{
    BayesFit, BetaPrior, CvTarget, DataMode, Error, EstimateMethod, LogRiskPanel, PipelineSpec, ResidualPanel,
    Result, Scenario, SelectionReport, SpatialWeighting, TrigModel,
};

use crate::config::{BootstrapStatistic, PriorSpec, RunConfig, WeightingSpec};

pub struct Ctx {
    pub cfg: RunConfig,
    /// `--mode` was given on the command line.
    pub mode_explicit: bool,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: Option<u64>,
    config: &'a RunConfig,
}

fn record(ctx: &Ctx, command: &str) -> Result<()> {
    io::write_json(
        &ctx.cfg.out.join(format!("run_{command}.json")),
        &RunRecord {
            command,
            seed: ctx.cfg.seed,
            config: &ctx.cfg,
        },
    )
}

fn load_panel(cfg: &RunConfig, mode: DataMode) -> Result<LogRiskPanel> {
    let path = cfg.panel_path(mode);
    if !path.is_file() {
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "panel not found; run `ingest` first")));
    }
    LogRiskPanel::read_csv(&path, mode)
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("trig_model.json")
}

fn load_model(cfg: &RunConfig) -> Result<TrigModel> {
    let p = model_path(cfg);
    if !p.is_file() {
        return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "model not found; run `fit` first")));
    }
    TrigModel::read_json(&p)
}

fn weighting(cfg: &RunConfig, ids: &[String]) -> Result<SpatialWeighting> {
    let w = match &cfg.weighting {
        WeightingSpec::Identity => SpatialWeighting::identity(ids.len()),
        WeightingSpec::Gaussian { centroids, bandwidth } => SpatialWeighting::gaussian_kernel(centroids.clone(), *bandwidth)?,
        WeightingSpec::File { path } => SpatialWeighting::read_csv(path, ids)?,
    };
    if w.size() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "weighting covers {} regions, panel has {}",
            w.size(),
            ids.len()
        )));
    }
    Ok(w)
}

fn resolve_kt(cfg: &RunConfig, t: usize, p: usize) -> Result<usize> {
    match cfg.kt {
        Some(k) if k > p => Err(Error::InvalidInput(format!("kt = {k} exceeds the number of regions P = {p}"))),
        Some(k) => Ok(k),
        None => Ok(default_truncation(t).min(p)),
    }
}

fn resolve_prior(cfg: &RunConfig, res: &ResidualPanel, kt: usize, seed: u64) -> Result<BetaPrior> {
    let p = res.regions();
    match &cfg.prior {
        PriorSpec::Shared { a, b, scale } => Ok(BetaPrior::shared(p, *a, *b, *scale)),
        PriorSpec::Full(prior) => Ok(prior.clone()),
        PriorSpec::Bootstrap { samples, scale } => {
            let draws = bootstrap_rho_samples(res, kt, *samples, derive_seed(seed, &[1]))?;
            let suggestion = fit_prior_from_bootstrap(&draws, *scale)?;
            io::write_json(&cfg.out.join("prior_suggestion.json"), &suggestion)?;
            Ok(suggestion.shared_prior(p))
        }
    }
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::InvalidInput(format!("start date {s:?}: {e}")))
}

pub fn ingest_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let path = RunConfig::require_file(&cfg.counts, "counts file")?;
    let counts = parse_counts(&path, &cfg.schema)?;
    let w = weighting(cfg, &counts.region_ids)?;
    let opts = IngestOptions {
        nodes: cfg.nodes,
        floor: cfg.log_floor,
    };
    let (hard, smoothed) = ingest(&counts, &opts)?;
    let soft = apply_weighting(&hard, &w)?;
    hard.write_csv(&cfg.out.join("panel_hard.csv"))?;
    soft.write_csv(&cfg.out.join("panel_soft.csv"))?;
    w.write_csv(&cfg.out.join("weighting.csv"), &hard.region_ids)?;
    io::write_time_table(
        &cfg.out.join("smoothed_cumulative.csv"),
        &smoothed.node_times,
        &hard.region_ids,
        &smoothed.values,
    )?;
    record(ctx, "ingest")?;
    println!(
        "ingest: {} days x {} regions -> {} nodes ({})",
        counts.days(),
        counts.regions(),
        hard.len(),
        cfg.out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Recovery {
    max_abs_error_a: f64,
    max_abs_error_b: f64,
    max_abs_error: f64,
}

fn recovery(fit: &TrigModel, truth: &TrigModel) -> Result<Recovery> {
    if fit.n != truth.n || fit.regions != truth.regions {
        return Err(Error::DimensionMismatch(format!(
            "fitted model has N = {} and {} regions, truth has N = {} and {} regions",
            fit.n,
            fit.regions.len(),
            truth.n,
            truth.regions.len()
        )));
    }
    let err = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter()
            .flatten()
            .zip(y.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let ea = err(&fit.a, &truth.a);
    let eb = err(&fit.b, &truth.b);
    Ok(Recovery {
        max_abs_error_a: ea,
        max_abs_error_b: eb,
        max_abs_error: ea.max(eb),
    })
}

pub fn fit_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let panel = load_panel(cfg, cfg.mode)?;
    let t = panel.len();
    let (n, report): (usize, Option<SelectionReport>) = match cfg.n {
        Some(n) => (n, None),
        None => {
            let r = select_n(&panel, &cfg.selection.candidates, cfg.selection.threshold, &cfg.frequency_rule, cfg.pin_b1)?;
            (r.chosen_n, Some(r))
        }
    };
    let freqs = cfg.frequency_rule.frequencies(n, t)?;
    let model = trig::fit(&panel, &freqs, cfg.pin_b1)?;
    model.write_json(&model_path(cfg))?;
    if let Some(r) = &report {
        r.write_csv(&cfg.out.join("selection.csv"))?;
    }
    let fitted = model.predict(&regression_times(t));
    io::write_time_table(&cfg.out.join("fitted.csv"), &panel.node_times, &panel.region_ids, &fitted)?;
    let res = residuals(&panel, &model)?;
    res.write_csv(&cfg.out.join("residuals.csv"))?;
    let risk = trig::empirical_risk(&model, &panel)?;
    let rows: Vec<Vec<String>> = panel
        .region_ids
        .iter()
        .zip(&risk)
        .map(|(id, r)| vec![id.clone(), fmt_sig(*r)])
        .collect();
    io::write_rows(&cfg.out.join("empirical_risk.csv"), &["region".into(), "risk".into()], &rows)?;
    let grid = trig::render_risk_grid(&risk, 5);
    std::fs::write(cfg.out.join("empirical_risk.txt"), grid).map_err(|e| Error::io(cfg.out.join("empirical_risk.txt"), e))?;
    let mean_risk = risk.iter().sum::<f64>() / risk.len() as f64;
    print!("fit: N = {n}, mean empirical risk {}", fmt_sig(mean_risk));
    if let Some(path) = &cfg.truth {
        let truth = TrigModel::read_json(path)?;
        let rec = recovery(&model, &truth)?;
        io::write_json(&cfg.out.join("recovery.json"), &rec)?;
        print!(", coefficient recovery error {}", fmt_sig(rec.max_abs_error));
    }
    println!();
    record(ctx, "fit")
}

/// Residuals used to estimate rho; predictions always use the raw residuals.
fn for_estimation(cfg: &RunConfig, res: &ResidualPanel) -> ResidualPanel {
    if cfg.center {
        res.centered()
    } else {
        res.clone()
    }
}

pub fn residual_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let panel = load_panel(cfg, cfg.mode)?;
    let kt = resolve_kt(cfg, panel.len(), panel.regions())?;
    let model = load_model(cfg)?;
    let res = residuals(&panel, &model)?;
    let cov = empirical_covariances(&for_estimation(cfg, &res))?;
    let dir = cfg.out.join("covariances");
    cov.write_csv(&dir, &res.region_ids)?;
    let est = estimate_rho(&cov, kt)?;
    est.write_csv(&cfg.out.join("rho_classical.csv"), &res.region_ids)?;
    let pred = one_step_predictions(&est.rho, &res)?;
    io::write_time_table(&cfg.out.join("residual_pred_classical.csv"), &res.node_times, &res.region_ids, &pred)?;
    record(ctx, "residual")?;
    println!(
        "residual: kt = {kt}, usable rank {}, ||rho||_F = {}",
        cov.usable_rank(),
        fmt_sig(stforecast::linalg::frobenius(&est.rho))
    );
    Ok(())
}

pub fn bayes_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("bayes")?;
    let panel = load_panel(cfg, cfg.mode)?;
    let kt = resolve_kt(cfg, panel.len(), panel.regions())?;
    let model = load_model(cfg)?;
    let res = residuals(&panel, &model)?;
    let est_res = for_estimation(cfg, &res);
    let prior = resolve_prior(cfg, &est_res, kt, seed)?;
    let fit = optimize_posterior(&est_res, &prior, &cfg.optimizer, seed)?;
    fit.write_json(&cfg.out.join("bayes_fit.json"))?;
    fit.write_traces(&cfg.out.join("traces"), &res.region_ids)?;
    let rho = fit.rho_matrix();
    io::write_labeled_matrix(&cfg.out.join("rho_bayes.csv"), &res.region_ids, &rho)?;
    let pred = one_step_predictions(&rho, &res)?;
    io::write_time_table(&cfg.out.join("residual_pred_bayes.csv"), &res.node_times, &res.region_ids, &pred)?;
    record(ctx, "bayes")?;
    let mean_obj = fit.objective.iter().sum::<f64>() / fit.objective.len() as f64;
    println!("bayes: posterior mode found, mean log posterior {}", fmt_sig(mean_obj));
    Ok(())
}

fn load_rho(cfg: &RunConfig, method: EstimateMethod, ids: &[String]) -> Result<DMatrix<f64>> {
    match method {
        EstimateMethod::Classical => {
            let path = cfg.out.join("rho_classical.csv");
            if !path.is_file() {
                return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "run `residual` first")));
            }
            let (labels, m) = io::read_labeled_matrix(&path)?;
            if labels != ids {
                return Err(Error::DimensionMismatch(format!("{} does not match the panel regions", path.display())));
            }
            Ok(m)
        }
        EstimateMethod::Bayesian => {
            let path = cfg.out.join("bayes_fit.json");
            if !path.is_file() {
                return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "run `bayes` first")));
            }
            Ok(BayesFit::read_json(&path)?.rho_matrix())
        }
    }
}

pub fn forecast_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let panel = load_panel(cfg, cfg.mode)?;
    let model = load_model(cfg)?;
    let res = residuals(&panel, &model)?;
    let rho = load_rho(cfg, cfg.forecast_method, &panel.region_ids)?;
    let t = panel.len();
    let regression = model.predict(&regression_times(t));
    let resid_pred = one_step_predictions(&rho, &res)?;
    let w = weighting(cfg, &panel.region_ids)?;
    let inverse = (panel.mode == DataMode::Soft && !w.is_identity()).then_some(&w);
    let fc = combine_predictions(&panel.node_times, &regression, &resid_pred, inverse)?;
    let dir = cfg.out.join("forecast");
    fc.write_csv(&dir, &panel.region_ids)?;

    let reg_next = model.predict(&[(t + 1) as f64]);
    let e_next = plugin_predict(&rho, &res, t + 1)?;
    let mut next = DMatrix::from_fn(1, panel.regions(), |_, q| reg_next[(0, q)] + e_next[q]);
    if let Some(w) = inverse {
        next = invert_weighting(&next, w)?;
    }
    let rows: Vec<Vec<String>> = panel
        .region_ids
        .iter()
        .enumerate()
        .map(|(q, id)| vec![id.clone(), fmt_sig(next[(0, q)]), fmt_sig(next[(0, q)].exp())])
        .collect();
    io::write_rows(&dir.join("next_step.csv"), &["region".into(), "log_risk".into(), "risk".into()], &rows)?;

    let observed = match inverse {
        Some(w) => invert_weighting(&panel.values, w)?,
        None => panel.values.clone(),
    };
    let mut plot = Vec::new();
    for (q, id) in panel.region_ids.iter().enumerate() {
        for (i, x) in panel.node_times.iter().enumerate() {
            plot.push(vec![format!("{id}:observed"), fmt_sig(*x), fmt_sig(observed[(i, q)])]);
        }
        for (i, x) in panel.node_times.iter().enumerate() {
            plot.push(vec![format!("{id}:forecast"), fmt_sig(*x), fmt_sig(fc.log_risk[(i, q)])]);
        }
    }
    io::write_rows(&dir.join("plot.csv"), &["series".into(), "x".into(), "y".into()], &plot)?;
    record(ctx, "forecast")?;
    let method = match cfg.forecast_method {
        EstimateMethod::Classical => "classical",
        EstimateMethod::Bayesian => "bayesian",
    };
    println!("forecast: {method} residual predictor, {} nodes, {} regions", t, panel.regions());
    Ok(())
}

fn default_models(seed: u64) -> Vec<ModelSpec> {
    let params = [
        ModelParams::Grnn { h: 0.05 },
        ModelParams::Mlp { nh: 3 },
        ModelParams::Svr {
            c: 1.0,
            epsilon: 0.01,
            kernel: SvrKernel::Linear,
        },
        ModelParams::Bnn { nh: 3 },
        ModelParams::Rbf { beta: 2.5, tol: 1e-3 },
        ModelParams::Gp { hyper: None },
    ];
    params
        .into_iter()
        .enumerate()
        .map(|(k, p)| ModelSpec::new(p, derive_seed(seed, &[2, k as u64])))
        .collect()
}

fn compare_modes(ctx: &Ctx) -> Result<Vec<DataMode>> {
    let cfg = &ctx.cfg;
    if ctx.mode_explicit || cfg.panel.is_some() {
        return Ok(vec![cfg.mode]);
    }
    let modes: Vec<DataMode> = [DataMode::Hard, DataMode::Soft]
        .into_iter()
        .filter(|m| cfg.panel_path(*m).is_file())
        .collect();
    if modes.is_empty() {
        let p = cfg.panel_path(DataMode::Hard);
        return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "no panel found; run `ingest` first")));
    }
    Ok(modes)
}

#[derive(Serialize, Deserialize)]
struct ModeReport {
    mode: DataMode,
    report: CompareReport,
}

pub fn compare_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("compare")?;
    let mut cv = cfg.cv.clone();
    cv.seed = derive_seed(seed, &[3]);
    let mut all = Vec::new();
    for mode in compare_modes(ctx)? {
        let panel = load_panel(cfg, mode)?;
        let dir = cfg.out.join("compare").join(mode.to_string());
        let mut grids = Vec::new();
        let mut targets: Vec<CvTarget> = Vec::new();
        for spec in cfg.models.clone().unwrap_or_else(|| default_models(seed)) {
            let spec = if cfg.grid_search {
                let kind: ModelKind = spec.params.kind();
                let g = grid_search(&panel, &kind.default_grid(), spec.seed, &cv)?;
                g.write_csv(&dir.join(format!("grid_{}.csv", kind.name())))?;
                let best = ModelSpec::new(g.best.clone(), spec.seed);
                grids.push(g);
                best
            } else {
                spec
            };
            targets.push(CvTarget::Ml(spec));
        }
        if cfg.pipeline {
            let n = cfg.n.unwrap_or(6);
            let kt = resolve_kt(cfg, panel.len(), panel.regions())?;
            let prior = match &cfg.prior {
                PriorSpec::Bootstrap { .. } => {
                    let freqs = cfg.frequency_rule.frequencies(n, panel.len())?;
                    let model = trig::fit(&panel, &freqs, cfg.pin_b1)?;
                    resolve_prior(cfg, &residuals(&panel, &model)?, kt, seed)?
                }
                PriorSpec::Shared { a, b, scale } => BetaPrior::shared(panel.regions(), *a, *b, *scale),
                PriorSpec::Full(p) => p.clone(),
            };
            for method in [EstimateMethod::Classical, EstimateMethod::Bayesian] {
                let mut spec = PipelineSpec::new(method, n, derive_seed(seed, &[4]));
                spec.rule = cfg.frequency_rule.clone();
                spec.pin_b1 = cfg.pin_b1;
                spec.kt = Some(kt);
                spec.prior = Some(prior.clone());
                spec.optimizer = cfg.optimizer.clone();
                targets.push(CvTarget::Pipeline(spec));
            }
        }
        let mut tables = Vec::new();
        let mut oos = Vec::new();
        for target in &targets {
            let out = kfold_cv(&panel, target, &cv)?;
            out.table.write_csv(&dir.join(format!("smape_{}.csv", out.table.model)))?;
            tables.push(out.table);
            if cv.holdout_head + cv.holdout_tail > 0 {
                oos.push(out_of_sample(&panel, target, &cv)?);
            }
        }
        write_tables_csv(&dir.join("smape.csv"), &tables)?;
        write_text(&dir.join("smape.txt"), &render_tables(&tables)?)?;
        if !oos.is_empty() {
            write_tables_csv(&dir.join("out_of_sample.csv"), &oos)?;
        }
        println!("compare ({mode}): {} tables, {} regions", tables.len(), panel.regions());
        all.push(ModeReport {
            mode,
            report: CompareReport {
                config: cv.clone(),
                targets,
                tables,
                out_of_sample: oos,
                grids,
            },
        });
    }
    io::write_json(&cfg.out.join("compare").join("report.json"), &all)?;
    record(ctx, "compare")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mean(v: &[f64]) -> Result<f64> {
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn bootstrap_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("bootstrap")?;
    let spec = &cfg.bootstrap;
    let dir = cfg.out.join("bootstrap");
    let mut named: Vec<(String, stforecast::BootstrapResult)> = Vec::new();
    for stat in &spec.statistics {
        match stat {
            BootstrapStatistic::Smape => {
                let path = cfg.out.join("compare").join("report.json");
                if !path.is_file() {
                    eprintln!("bootstrap: {} missing, skipping the SMAPE statistic", path.display());
                    continue;
                }
                let reports: Vec<ModeReport> = io::read_json(&path)?;
                for r in &reports {
                    for t in &r.report.tables {
                        let k = named.len() as u64;
                        let res = resample(&t.rows, mean, spec.b, derive_seed(seed, &[5, k]))?;
                        named.push((format!("smape_{}_{}", r.mode, t.model), res));
                    }
                }
            }
            BootstrapStatistic::Risk => {
                if !model_path(cfg).is_file() {
                    eprintln!("bootstrap: no fitted model, skipping the risk statistic");
                    continue;
                }
                let panel = load_panel(cfg, cfg.mode)?;
                let res = residuals(&panel, &load_model(cfg)?)?;
                let sq = res.values.map(|v| v * v);
                let k = named.len() as u64;
                let r = resample_panel(&sq, spec.unit, |m| Ok(m.mean()), spec.b, derive_seed(seed, &[5, k]))?;
                named.push(("risk".into(), r));
            }
        }
    }
    if named.is_empty() {
        return Err(Error::InvalidInput("nothing to bootstrap: run `compare` or `fit` first".into()));
    }
    let mut table = Vec::new();
    let mut plot = Vec::new();
    let mut sets = Vec::new();
    for (name, res) in &named {
        let set = CiSet::compute(res, &spec.methods, spec.level)?;
        set.write_csv(&dir.join(format!("ci_{name}.csv")))?;
        for row in &set.intervals {
            table.push(vec![
                name.clone(),
                row.method.as_str().to_string(),
                fmt_sig(row.lower),
                fmt_sig(row.upper),
                fmt_sig(set.level),
                set.b.to_string(),
                set.seed.to_string(),
            ]);
        }
        match density(res, spec.grid) {
            Ok(d) => {
                d.write_csv(&dir.join(format!("density_{name}.csv")))?;
                for (x, y) in d.x.iter().zip(&d.density) {
                    plot.push(vec![name.clone(), fmt_sig(*x), fmt_sig(*y)]);
                }
            }
            Err(e) if e.is_numerical() => eprintln!("bootstrap: {name}: {e}"),
            Err(e) => return Err(e),
        }
        sets.push(set);
    }
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    write_text(&dir.join("ci_table.txt"), &render_ci_grid(&names, &sets)?)?;
    let header = ["target", "method", "lower", "upper", "level", "B", "seed"].map(String::from);
    io::write_rows(&dir.join("ci_table.csv"), &header, &table)?;
    io::write_rows(&dir.join("density_plot.csv"), &["series".into(), "x".into(), "y".into()], &plot)?;
    record(ctx, "bootstrap")?;
    println!("bootstrap: {} statistics, B = {}, level {}", named.len(), spec.b, spec.level);
    Ok(())
}

pub fn synth_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("synth")?;
    let path = RunConfig::require_file(&cfg.scenario, "scenario file")?;
    let mut sc = Scenario::read_json(&path)?;
    sc.seed = seed;
    sc.validate()?;
    let start = parse_date(&cfg.start_date)?;
    let sp = generate_panel(&sc)?;
    let dir = cfg.out.join("synth");
    sc.write_json(&dir.join("scenario.json"))?;
    sc.true_model.write_json(&dir.join("truth_model.json"))?;
    io::write_labeled_matrix(&dir.join("truth_rho.csv"), &sp.panel.region_ids, &sc.rho()?)?;
    sp.panel.write_csv(&dir.join("panel.csv"))?;
    sp.residuals.write_csv(&dir.join("residuals.csv"))?;
    io::write_time_table(&dir.join("mean.csv"), &sp.panel.node_times, &sp.panel.region_ids, &sp.mean)?;
    let t0 = sp.panel.node_times[0];
    let t1 = sp.panel.node_times[sp.panel.len() - 1];
    let days = (t1 - t0).floor() as usize;
    let boundaries: Vec<f64> = (0..=days).map(|d| t0 + d as f64).collect();
    let counts = generate_counts(&sp.panel, &boundaries, start, derive_seed(seed, &[6]))?;
    counts.write_csv(&dir.join("counts.csv"))?;
    record(ctx, "synth")?;
    println!(
        "synth: T = {}, P = {}, {} days of counts ({})",
        sp.panel.len(),
        sp.panel.regions(),
        counts.days(),
        dir.display()
    );
    Ok(())
}

pub fn report_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut text = String::new();
    let cmp = cfg.out.join("compare").join("report.json");
    if cmp.is_file() {
        let reports: Vec<ModeReport> = io::read_json(&cmp)?;
        for r in &reports {
            let _ = writeln!(text, "Averaged SMAPEs, {} data, {}-fold cross-validation, {} runs\n", r.mode, r.report.config.k, r.report.config.runs);
            text.push_str(&render_tables(&r.report.tables)?);
            text.push('\n');
            if !r.report.out_of_sample.is_empty() {
                let _ = writeln!(text, "Out-of-sample SMAPEs, {} data\n", r.mode);
                text.push_str(&render_tables(&r.report.out_of_sample)?);
                text.push('\n');
            }
        }
    }
    let ci = cfg.out.join("bootstrap").join("ci_table.txt");
    if ci.is_file() {
        let body = std::fs::read_to_string(&ci).map_err(|e| Error::io(&ci, e))?;
        let _ = writeln!(text, "Bootstrap confidence intervals\n");
        text.push_str(&body);
    }
    if text.is_empty() {
        return Err(Error::InvalidInput(format!(
            "nothing to report under {}: run `compare` or `bootstrap` first",
            cfg.out.display()
        )));
    }
    write_text(&cfg.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
