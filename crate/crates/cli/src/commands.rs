use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spatial_abundance::execution::Execution;
use spatial_abundance::model::{DesignMatrix, Observation};
use spatial_abundance::sampler::run_chains;
use spatial_abundance::simulation::{
    baseline_estimate, derive_seed, evaluate_replicate, simulate_dataset, EvaluationReport,
    ScenarioConfig, SimulatedDataset,
};
use spatial_abundance::summary::{summarize, summarize_draws, PosteriorSummary};

use crate::args::{Common, SummarizeArgs};
use crate::config::FitConfig;
use crate::error::{CliError, CliResult};
use crate::ingest::{load_inputs, InputFile, COUNTS_COLUMNS, COVARIATE_COLUMNS};
use crate::manifest::{manifest_value, RunManifest};
use crate::output::{
    create_dir, fmt, read_draws, write_cell_summaries, write_diagnostics, write_draws, write_plot,
    write_posterior, write_report, CsvOut, DIAGNOSTICS_FILE, PLOT_FILE, POSTERIOR_FILE,
    SUMMARIES_FILE,
};

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn require_out(flags: &Common, fallback: Option<PathBuf>) -> CliResult<PathBuf> {
    flags
        .out
        .clone()
        .or(fallback)
        .ok_or_else(|| CliError::Validation("no output directory; pass --out DIR".into()))
}

fn require_config(flags: &Common) -> CliResult<&Path> {
    flags
        .config
        .as_deref()
        .ok_or_else(|| CliError::Validation("no config file; pass --config PATH".into()))
}

pub fn cmd_fit(flags: &Common) -> CliResult<()> {
    let mut cfg = FitConfig::load(require_config(flags)?)?;
    cfg.apply(flags);
    cfg.sampler.validate()?;
    let out = require_out(flags, cfg.out.clone())?;
    let mut manifest = RunManifest::start("fit", cfg.sampler.seed, cfg.to_text());

    let inputs = load_inputs(&cfg)?;
    for f in &inputs.files {
        manifest.add_input(f);
    }
    progress(
        flags.quiet,
        format!(
            "fitting {} regions x {} years, {} outcomes, {} chains of {} iterations",
            inputs.panel.n_regions,
            inputs.panel.n_years,
            inputs.panel.outcomes.len(),
            cfg.sampler.n_chains,
            cfg.sampler.n_iterations
        ),
    );
    let chains = run_chains(
        &inputs.panel,
        &inputs.survey,
        &inputs.graph,
        &cfg.sampler,
        Execution::Parallel,
    )?;
    let summaries = summarize(&chains)?;
    let baseline = baseline_estimate(
        &inputs.survey,
        &inputs.panel.populations,
        inputs.panel.n_years,
    )?;

    create_dir(&out)?;
    write_draws(&out, &chains)?;
    write_posterior(&out.join(POSTERIOR_FILE), &summaries)?;
    write_cell_summaries(&out.join(SUMMARIES_FILE), &inputs, &summaries, &baseline)?;
    let acceptance: Vec<Vec<(String, f64)>> = chains.iter().map(|c| c.acceptance.clone()).collect();
    write_diagnostics(&out.join(DIAGNOSTICS_FILE), &acceptance, &summaries)?;
    write_plot(&out.join(PLOT_FILE), &summaries, inputs.first_year)?;

    manifest.fact("first_year", inputs.first_year);
    manifest.fact("outcomes", inputs.outcome_ids.join(","));
    manifest.fact("chains", chains.len());
    manifest.fact("draws_per_chain", chains[0].draws.len());
    manifest.finish(&out)?;
    progress(flags.quiet, format!("wrote {}", out.display()));
    Ok(())
}

pub fn load_scenario(flags: &Common) -> CliResult<ScenarioConfig> {
    let path = require_config(flags)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let mut c = ScenarioConfig::parse(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.chains {
        c.chains = v;
    }
    if let Some(v) = flags.iters {
        c.iterations = v;
    }
    if let Some(v) = flags.burnin {
        c.burnin = v;
    }
    if let Some(v) = flags.thin {
        c.thin = v;
    }
    c.validate()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    c.sampler_config(c.seed).validate()?;
    Ok(c)
}

pub const FIT_CONFIG_FILE: &str = "fit.conf";
pub const SCENARIO_FILE: &str = "scenario.conf";

/// Data set of replicate 1 (the same draw `evaluate` scores first), written
/// in the `fit` input formats with a ready-to-use `fit.conf`.
pub fn cmd_simulate(flags: &Common) -> CliResult<()> {
    let scenario = load_scenario(flags)?;
    let out = require_out(flags, None)?;
    let mut manifest = RunManifest::start("simulate", scenario.seed, scenario.to_text());
    let data = simulate_dataset(&scenario, derive_seed(scenario.seed, 0))?;
    create_dir(&out)?;
    write_dataset(&out, &data)?;

    let s = scenario.sampler_config(derive_seed(scenario.seed, 1));
    let mut conf = String::new();
    for (k, v) in [
        ("counts", "counts.csv".to_string()),
        ("survey", "survey.csv".into()),
        ("population", "population.csv".into()),
        ("adjacency", "adjacency.txt".into()),
        ("risk_covariates", "risk_covariates.csv".into()),
    ] {
        let _ = writeln!(conf, "{k} = {v}");
    }
    for o in &data.panel.outcomes {
        let _ = writeln!(conf, "detection_covariates.{0} = detection_{0}.csv", o.name);
    }
    let _ = write!(
        conf,
        "iterations = {}\nburnin = {}\nthin = {}\nchains = {}\nseed = {}\nmax_stepout = {}\n",
        s.n_iterations, s.n_burnin, s.thin, s.n_chains, s.seed, s.slice.max_stepout
    );
    let conf_path = out.join(FIT_CONFIG_FILE);
    std::fs::write(&conf_path, conf).map_err(|e| CliError::write(&conf_path, e))?;
    let scen_path = out.join(SCENARIO_FILE);
    std::fs::write(&scen_path, scenario.to_text()).map_err(|e| CliError::write(&scen_path, e))?;

    manifest.fact("scenario", scenario.scenario_label());
    manifest.fact("first_year", 1);
    manifest.finish(&out)?;
    progress(flags.quiet, format!("wrote {}", out.display()));
    Ok(())
}

/// Writes panel, survey, graph, covariates and truth of a simulated data set.
pub fn write_dataset(dir: &Path, data: &SimulatedDataset) -> CliResult<()> {
    let panel = &data.panel;
    let labels = data.graph.labels();
    let year = |t: usize| (t + 1).to_string();

    let adj = dir.join("adjacency.txt");
    let mut text = String::new();
    for &(a, b) in data.graph.edges() {
        let _ = writeln!(text, "{} {}", labels[a], labels[b]);
    }
    std::fs::write(&adj, text).map_err(|e| CliError::write(&adj, e))?;

    let mut w = CsvOut::create(&dir.join("counts.csv"), &COUNTS_COLUMNS)?;
    for o in &panel.outcomes {
        for (i, label) in labels.iter().enumerate() {
            for t in 0..panel.n_years {
                let obs = o.observations[panel.cell(i, t)];
                let (count, code, adult) = match obs {
                    Observation::Exact(y) => (y.to_string(), "0", String::new()),
                    Observation::AdultOnly { adult } => (String::new(), "1", adult.to_string()),
                    Observation::Suppressed => (String::new(), "2", String::new()),
                };
                w.row([
                    label.clone(),
                    year(t),
                    o.name.clone(),
                    count,
                    code.into(),
                    adult,
                ])?;
            }
        }
    }
    w.finish()?;

    let mut w = CsvOut::create(
        &dir.join("population.csv"),
        &["region_id", "year", "population"],
    )?;
    for (i, label) in labels.iter().enumerate() {
        for t in 0..panel.n_years {
            w.row([label.clone(), year(t), panel.population(i, t).to_string()])?;
        }
    }
    w.finish()?;

    let mut w = CsvOut::create(
        &dir.join("survey.csv"),
        &["start_year", "end_year", "estimate", "se"],
    )?;
    for r in data.survey.rows() {
        w.row([r.a.to_string(), r.b.to_string(), fmt(r.estimate), fmt(r.se)])?;
    }
    w.finish()?;

    let write_design = |path: PathBuf, d: &DesignMatrix| -> CliResult<()> {
        let mut w = CsvOut::create(&path, &COVARIATE_COLUMNS)?;
        for (c, name) in d.names().iter().enumerate() {
            let tr = d.transforms()[c];
            for (i, label) in labels.iter().enumerate() {
                for t in (0..panel.n_years).filter(|&t| d.is_active(t, c)) {
                    let raw = d.value(i, t, c) * tr.scale + tr.center;
                    w.row([
                        label.clone(),
                        year(t),
                        name.clone(),
                        fmt(raw),
                        String::new(),
                        "1".into(),
                    ])?;
                }
            }
        }
        w.finish()
    };
    write_design(dir.join("risk_covariates.csv"), &panel.risk_design)?;
    for o in &panel.outcomes {
        write_design(dir.join(format!("detection_{}.csv", o.name)), &o.design)?;
    }

    let truth = &data.truth;
    let mut header: Vec<String> = ["region_id", "year", "population", "n", "lambda"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(panel.outcomes.iter().map(|o| format!("p_{}", o.name)));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(&dir.join("truth.csv"), &refs)?;
    for (i, label) in labels.iter().enumerate() {
        for t in 0..panel.n_years {
            let c = panel.cell(i, t);
            let mut row = vec![
                label.clone(),
                year(t),
                panel.populations[c].to_string(),
                truth.n[c].to_string(),
                fmt(truth.lambda[c]),
            ];
            row.extend(truth.p.iter().map(|p| fmt(p[c])));
            w.row(row)?;
        }
    }
    w.finish()?;

    let mut w = CsvOut::create(&dir.join("truth_parameters.csv"), &["parameter", "value"])?;
    w.row(["beta0_mu".to_string(), fmt(truth.beta0_mu)])?;
    w.row(["beta1_mu".to_string(), fmt(truth.beta1_mu)])?;
    for (t, m) in truth.mu.iter().enumerate() {
        w.row([format!("mu[{}]", t + 1), fmt(*m)])?;
    }
    for (k, md) in truth.mu_detect.iter().enumerate() {
        for (t, m) in md.iter().enumerate() {
            w.row([format!("mu_det{}[{}]", k + 1, t + 1), fmt(*m)])?;
        }
    }
    w.finish()
}

pub fn cmd_evaluate(flags: &Common) -> CliResult<()> {
    let scenario = load_scenario(flags)?;
    let out = require_out(flags, None)?;
    let manifest = RunManifest::start("evaluate", scenario.seed, scenario.to_text());
    progress(
        flags.quiet,
        format!(
            "evaluating {} replicates, scenario {}",
            scenario.replicates,
            scenario.scenario_label()
        ),
    );
    let replicates = Execution::Parallel
        .map(scenario.replicates, |r| {
            let res = evaluate_replicate(&scenario, r, Execution::Sequential);
            progress(flags.quiet, format!("replicate {} done", r + 1));
            res
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let report = EvaluationReport {
        scenario: scenario.scenario_label().to_string(),
        replicates,
    };
    create_dir(&out)?;
    write_report(&out, &report)?;
    manifest.finish(&out)?;
    progress(flags.quiet, format!("wrote {}", out.display()));
    Ok(())
}

pub fn cmd_summarize(args: &SummarizeArgs) -> CliResult<()> {
    let flags = &args.common;
    let thin = flags.thin.unwrap_or(1);
    if thin == 0 {
        return Err(CliError::Validation("--thin must be positive".into()));
    }
    let chains = read_draws(&args.draws)?;
    let out = flags
        .out
        .clone()
        .unwrap_or_else(|| args.draws.join("summary"));
    let mut manifest = RunManifest::start(
        "summarize",
        flags.seed.unwrap_or(0),
        format!("draws = {}\nthin = {thin}\n", args.draws.display()),
    );
    for c in &chains {
        manifest.add_input(&InputFile::read("draws", &c.file)?);
    }
    let first_year: i64 = manifest_value(&args.draws, "first_year")
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);

    let thinned: Vec<Vec<&Vec<f64>>> = chains
        .iter()
        .map(|c| c.draws.iter().skip(thin - 1).step_by(thin).collect())
        .collect();
    let summaries = chains[0]
        .quantities
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let cols: Vec<Vec<f64>> = thinned
                .iter()
                .map(|c| c.iter().map(|r| r[j]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            summarize_draws(q.clone(), &refs)
        })
        .collect::<Result<Vec<PosteriorSummary>, _>>()?;

    create_dir(&out)?;
    write_posterior(&out.join(POSTERIOR_FILE), &summaries)?;
    write_diagnostics(&out.join(DIAGNOSTICS_FILE), &[], &summaries)?;
    write_plot(&out.join(PLOT_FILE), &summaries, first_year)?;
    manifest.fact("first_year", first_year);
    manifest.fact("chains", chains.len());
    manifest.fact("thin", thin);
    manifest.fact("draws_per_chain", thinned[0].len());
    manifest.finish(&out)?;
    progress(flags.quiet, format!("wrote {}", out.display()));
    Ok(())
}
