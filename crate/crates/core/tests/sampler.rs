use spatial_abundance::graph::{build_grid_adjacency, AdjacencyGraph};
use spatial_abundance::likelihood::{latent_count_loglik, log_sum_exp, outcome_loglik};
use spatial_abundance::model::{
    logit, DesignMatrix, ModelState, Observation, Outcome, OutcomeKind, SurveillancePanel,
    SurveyEstimates, SurveyRow,
};
use spatial_abundance::sampler::{
    check_state, initial_state, recompute_log_posterior, run_chain, run_chain_from, SamplerConfig,
    UpdatePlan,
};
use spatial_abundance::simulation::{simulate_dataset, ScenarioConfig};
use statrs::distribution::{ContinuousCDF, InverseGamma};

fn outcome(name: &str, kind: OutcomeKind, obs: Vec<Observation>, n: usize, t: usize) -> Outcome {
    Outcome {
        name: name.into(),
        kind,
        observations: obs,
        design: DesignMatrix::empty(n, t),
    }
}

fn wide_survey() -> SurveyEstimates {
    SurveyEstimates::new(vec![
        SurveyRow {
            a: 1,
            b: 1,
            estimate: 0.05,
            se: 0.01,
        },
        SurveyRow {
            a: 2,
            b: 2,
            estimate: 0.05,
            se: 0.01,
        },
    ])
    .unwrap()
}

fn config(iters: usize, burnin: usize, updates: UpdatePlan) -> SamplerConfig {
    SamplerConfig {
        n_iterations: iters,
        n_burnin: burnin,
        thin: 1,
        n_chains: 1,
        seed: 17,
        updates,
        ..SamplerConfig::default()
    }
}

#[test]
fn single_cell_pmf_matches_enumeration() {
    let pop = 30;
    let treat = Observation::AdultOnly { adult: 2 };
    let death = Observation::Exact(1);
    let panel = SurveillancePanel {
        n_regions: 1,
        n_years: 1,
        populations: vec![pop],
        outcomes: vec![
            outcome("treatment", OutcomeKind::Treatment, vec![treat], 1, 1),
            outcome("death", OutcomeKind::Death, vec![death], 1, 1),
        ],
        risk_design: DesignMatrix::empty(1, 1),
        acs: vec![],
    };
    let graph = AdjacencyGraph::from_edges(1, &[]).unwrap();
    let (rate, p1, p2) = (0.3, 0.4, 0.1);
    let mut init = initial_state(&panel, &wide_survey()).unwrap();
    init.beta0_mu = rate;
    init.beta1_mu = 0.0;
    init.mu_detect = vec![vec![logit(p1).unwrap()], vec![logit(p2).unwrap()]];

    let lb = panel.latent_lower_bound(0, 0);
    let logw: Vec<f64> = (lb..=pop)
        .map(|n| {
            latent_count_loglik(n, pop, rate)
                + outcome_loglik(treat, n, p1)
                + outcome_loglik(death, n, p2)
        })
        .collect();
    let z = log_sum_exp(logw.iter().copied());

    let mut plan = UpdatePlan::none();
    plan.latent_counts = true;
    let draws = 100_000;
    let cfg = config(draws + 1000, 1000, plan);
    let out = run_chain_from(&panel, &wide_survey(), &graph, &cfg, 0, init).unwrap();
    let col = out.column("N[0,1]").unwrap();
    assert_eq!(col.len(), draws);
    let mut counts = vec![0usize; (pop + 1) as usize];
    for x in &col {
        counts[*x as usize] += 1;
    }
    let tv: f64 = (lb..=pop)
        .zip(&logw)
        .map(|(n, w)| (counts[n as usize] as f64 / draws as f64 - (w - z).exp()).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn perfect_detection_pins_count() {
    let panel = SurveillancePanel {
        n_regions: 1,
        n_years: 1,
        populations: vec![20],
        outcomes: vec![outcome(
            "death",
            OutcomeKind::Death,
            vec![Observation::Exact(7)],
            1,
            1,
        )],
        risk_design: DesignMatrix::empty(1, 1),
        acs: vec![],
    };
    let graph = AdjacencyGraph::from_edges(1, &[]).unwrap();
    let mut init = initial_state(&panel, &wide_survey()).unwrap();
    init.beta0_mu = 0.4;
    init.mu_detect = vec![vec![30.0]];
    let mut plan = UpdatePlan::none();
    plan.latent_counts = true;
    let out = run_chain_from(
        &panel,
        &wide_survey(),
        &graph,
        &config(2000, 100, plan),
        0,
        init,
    )
    .unwrap();
    assert!(out.column("N[0,1]").unwrap().iter().all(|&n| n == 7.0));
}

#[test]
fn sigma2_v_gibbs_matches_inverse_gamma() {
    let (rows, cols, years) = (3, 3, 2);
    let n = rows * cols;
    let graph = build_grid_adjacency(rows, cols).unwrap();
    let zero = vec![Observation::Exact(0); n * years];
    let panel = SurveillancePanel {
        n_regions: n,
        n_years: years,
        populations: vec![1000; n * years],
        outcomes: vec![outcome("death", OutcomeKind::Death, zero, n, years)],
        risk_design: DesignMatrix::empty(n, years),
        acs: vec![],
    };
    let survey = wide_survey();
    let mut init = initial_state(&panel, &survey).unwrap();
    init.v = (0..n * years)
        .map(|c| 0.3 * ((c as f64) * 0.7).sin())
        .collect();
    let ss: f64 = init.v.iter().map(|x| x * x).sum();
    let mut plan = UpdatePlan::none();
    plan.sigma2_v = true;
    let draws = 50_000;
    let out = run_chain_from(
        &panel,
        &survey,
        &graph,
        &config(draws + 10, 10, plan),
        0,
        init,
    )
    .unwrap();
    let mut col = out.column("sigma2_v").unwrap();
    col.sort_by(f64::total_cmp);
    let ig = InverseGamma::new(0.5 + (n * years) as f64 / 2.0, 0.5 + ss / 2.0).unwrap();
    let m = col.len() as f64;
    let ks = col
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = ig.cdf(x);
            (f - j as f64 / m).abs().max(((j + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS distance {ks}");
}

/// 4x4 grid, T = 3, no usable data: population 1 with a vanishing rate, so
/// the latent-count factor is flat in the field to within 1e-6.
fn prior_only(tau2: f64, phi: f64) -> Vec<Vec<f64>> {
    let (n, years) = (16, 3);
    let graph = build_grid_adjacency(4, 4).unwrap();
    let zero = vec![Observation::Exact(0); n * years];
    let panel = SurveillancePanel {
        n_regions: n,
        n_years: years,
        populations: vec![1; n * years],
        outcomes: vec![outcome("death", OutcomeKind::Death, zero, n, years)],
        risk_design: DesignMatrix::empty(n, years),
        acs: vec![],
    };
    let survey = wide_survey();
    let mut init: ModelState = initial_state(&panel, &survey).unwrap();
    init.beta0_mu = 1e-7;
    init.beta1_mu = 0.0;
    init.tau2_u = tau2;
    init.phi_u = phi;
    let mut plan = UpdatePlan::none();
    plan.risk_field = true;
    let mut cfg = config(22_000, 2_000, plan);
    cfg.thin = 4;
    let out = run_chain_from(&panel, &survey, &graph, &cfg, 0, init).unwrap();
    // lambda = exp(u) with no covariates and v = 0
    out.draws
        .iter()
        .map(|row| {
            out.quantities
                .iter()
                .zip(row)
                .filter(|(q, _)| q.name == "lambda")
                .map(|(_, l)| l.ln())
                .collect()
        })
        .collect()
}

fn mean_variance(draws: &[Vec<f64>]) -> f64 {
    let d = draws[0].len();
    let m = draws.len() as f64;
    (0..d)
        .map(|j| {
            let mean = draws.iter().map(|r| r[j]).sum::<f64>() / m;
            draws.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)
        })
        .sum::<f64>()
        / d as f64
}

#[test]
fn prior_field_variance_is_linear_in_tau2() {
    let taus = [0.25, 1.0, 4.0];
    let vars: Vec<f64> = taus
        .iter()
        .map(|&t| mean_variance(&prior_only(t, 0.5)))
        .collect();
    for (t, v) in taus.iter().zip(&vars) {
        let ratio = (v / t) / (vars[1] / taus[1]);
        assert!(
            (ratio - 1.0).abs() < 0.15,
            "tau2 {t}: variance {v}, ratio {ratio}"
        );
    }
}

#[test]
fn prior_field_uncorrelated_in_time_without_phi() {
    let draws = prior_only(1.0, 1e-9);
    let (n, years) = (16, 3);
    let m = draws.len() as f64;
    let mut corr = 0.0;
    for i in 0..n {
        let a: Vec<f64> = draws.iter().map(|r| r[i * years]).collect();
        let b: Vec<f64> = draws.iter().map(|r| r[i * years + 1]).collect();
        let (ma, mb) = (a.iter().sum::<f64>() / m, b.iter().sum::<f64>() / m);
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / m;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / m;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / m;
        corr += cov / (va * vb).sqrt() / n as f64;
    }
    assert!(corr.abs() < 0.05, "mean lag-1 correlation {corr}");
}

fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        rows: 3,
        cols: 3,
        n_years: 4,
        ..ScenarioConfig::default()
    }
}

#[test]
fn retained_states_satisfy_invariants_and_tracking() {
    let data = simulate_dataset(&small_scenario(), 11).unwrap();
    let cfg = SamplerConfig {
        n_iterations: 600,
        n_burnin: 300,
        thin: 3,
        n_chains: 1,
        seed: 5,
        ..SamplerConfig::default()
    };
    let out = run_chain(&data.panel, &data.survey, &data.graph, &cfg, 0).unwrap();
    assert_eq!(out.draws.len(), cfg.n_retained());
    assert_eq!(out.log_posterior.len(), cfg.n_iterations);
    assert!(out.log_posterior.iter().all(|x| x.is_finite()));
    check_state(&data.panel, &out.final_state, 1e-10).unwrap();

    let fresh =
        recompute_log_posterior(&data.panel, &data.survey, &data.graph, &out.final_state).unwrap();
    let tracked = *out.log_posterior.last().unwrap();
    assert!(
        (fresh - tracked).abs() < 1e-6,
        "tracked {tracked} vs fresh {fresh}"
    );

    for (j, q) in out.quantities.iter().enumerate() {
        if q.name != "N" {
            continue;
        }
        let region: usize = q.region.as_deref().unwrap().parse().unwrap();
        let t = (q.year.unwrap() - 1) as usize;
        let lb = data.panel.latent_lower_bound(region, t) as f64;
        let pop = data.panel.population(region, t) as f64;
        assert!(out.draws.iter().all(|r| r[j] >= lb && r[j] <= pop), "{q}");
    }
    for (j, q) in out.quantities.iter().enumerate() {
        if q.name.starts_with("phi") {
            assert!(out.draws.iter().all(|r| r[j] > 0.0 && r[j] < 1.0), "{q}");
        }
        if q.name.starts_with("sigma2") || q.name.starts_with("tau2") {
            assert!(out.draws.iter().all(|r| r[j] > 0.0), "{q}");
        }
    }
}

#[test]
fn chains_are_deterministic_per_seed() {
    let data = simulate_dataset(&small_scenario(), 3).unwrap();
    let cfg = SamplerConfig {
        n_iterations: 200,
        n_burnin: 100,
        thin: 1,
        n_chains: 1,
        seed: 9,
        ..SamplerConfig::default()
    };
    let a = run_chain(&data.panel, &data.survey, &data.graph, &cfg, 0).unwrap();
    let b = run_chain(&data.panel, &data.survey, &data.graph, &cfg, 0).unwrap();
    let c = run_chain(&data.panel, &data.survey, &data.graph, &cfg, 1).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.draws, c.draws);
}

#[test]
fn adapted_acceptance_rates_in_band() {
    let data = simulate_dataset(&small_scenario(), 21).unwrap();
    let cfg = SamplerConfig {
        n_iterations: 3000,
        n_burnin: 1500,
        thin: 5,
        n_chains: 1,
        seed: 2,
        ..SamplerConfig::default()
    };
    let out = run_chain(&data.panel, &data.survey, &data.graph, &cfg, 0).unwrap();
    for (name, rate) in &out.acceptance {
        assert!((0.2..=0.6).contains(rate), "{name}: {rate}");
    }
}

#[test]
fn zero_information_run_stays_finite() {
    let (n, years) = (4, 3);
    let graph = build_grid_adjacency(2, 2).unwrap();
    let zero = vec![Observation::Exact(0); n * years];
    let panel = SurveillancePanel {
        n_regions: n,
        n_years: years,
        populations: vec![500; n * years],
        outcomes: vec![
            outcome("treatment", OutcomeKind::Treatment, zero.clone(), n, years),
            outcome("death", OutcomeKind::Death, zero, n, years),
        ],
        risk_design: DesignMatrix::empty(n, years),
        acs: vec![],
    };
    let survey = SurveyEstimates::new(vec![
        SurveyRow {
            a: 1,
            b: 1,
            estimate: 0.05,
            se: 10.0,
        },
        SurveyRow {
            a: 3,
            b: 3,
            estimate: 0.05,
            se: 10.0,
        },
    ])
    .unwrap();
    let cfg = SamplerConfig {
        n_iterations: 1000,
        n_burnin: 200,
        thin: 1,
        n_chains: 1,
        seed: 4,
        ..SamplerConfig::default()
    };
    let out = run_chain(&panel, &survey, &graph, &cfg, 0).unwrap();
    assert!(out.log_posterior.iter().all(|x| x.is_finite()));
    let mu = out.column("mu[1]").unwrap();
    let (lo, hi) = mu
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi - lo > 0.01, "mu range {lo}..{hi}");
    check_state(&panel, &out.final_state, 1e-10).unwrap();
}

#[test]
fn infeasible_start_names_cell() {
    let panel = SurveillancePanel {
        n_regions: 1,
        n_years: 1,
        populations: vec![5],
        outcomes: vec![outcome(
            "death",
            OutcomeKind::Death,
            vec![Observation::Exact(3)],
            1,
            1,
        )],
        risk_design: DesignMatrix::empty(1, 1),
        acs: vec![],
    };
    let mut bad = panel.clone();
    bad.outcomes[0].observations[0] = Observation::Exact(9);
    assert!(initial_state(&bad, &wide_survey()).is_err());
    assert!(initial_state(&panel, &wide_survey()).is_ok());
}
