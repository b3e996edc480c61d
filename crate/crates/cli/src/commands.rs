use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use karma_core::io::{self, write_atomic};
use karma_core::metrics::{
    aggregate_runs, coin_efficiency, dict_access, dict_efficiency, efficiency_at_equilibrium,
    ex_ante_metrics, WelfareReport,
};
use karma_core::scenario::{preset, Scenario, PARAMS, PRESETS};
use karma_core::simulation::{run_simulation, Scheme, Strategy};
use karma_core::solver::{solve, IterationRecord};
use karma_core::{EquilibriumResult, Game, KarmaError, SocialState};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Cli, Command, Overrides, SimulateArgs, SweepArgs};

pub enum Outcome {
    Done,
    NotConverged,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Solve(args) => {
            let (scenario, game) = prepare(&args.scenario.scenario, &args.overrides, cli.seed)?;
            cmd_solve(&scenario, &game, &cli.out_dir)
        }
        Command::Simulate(args) => cmd_simulate(cli, args, false),
        Command::Benchmark(args) => cmd_simulate(cli, args, true),
        Command::Sweep(args) => cmd_sweep(cli, args),
        Command::Validate(arg) => {
            let scenario = load_scenario(&arg.scenario)?;
            print!("{}", scenario.to_toml_string()?);
            Ok(Outcome::Done)
        }
    }
}

/// A path to an existing file wins over a preset of the same name.
fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(Scenario::load(path)?);
    }
    if PRESETS.contains(&arg) {
        return Ok(preset(arg)?);
    }
    Err(KarmaError::InvalidScenario(vec![format!(
        "scenario: no file or preset named {arg:?}; presets are {}",
        PRESETS.join(", ")
    )])
    .into())
}

fn apply_overrides(
    scenario: &mut Scenario,
    overrides: &Overrides,
    seed: Option<u64>,
) -> Result<()> {
    for item in &overrides.set {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| KarmaError::Scenario(format!("--set {item:?} is not NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| KarmaError::Scenario(format!("--set {item:?}: value is not a number")))?;
        scenario.set_param(name.trim(), value)?;
    }
    if let Some(alpha) = overrides.alpha {
        scenario.set_param("alpha", alpha)?;
    }
    if let Some(m) = overrides.max_iters {
        scenario.solver.max_iters = m;
    }
    if let Some(seed) = seed {
        scenario.simulation.seed = seed;
    }
    Ok(())
}

fn prepare(arg: &str, overrides: &Overrides, seed: Option<u64>) -> Result<(Scenario, Game)> {
    let mut scenario = load_scenario(arg)?;
    apply_overrides(&mut scenario, overrides, seed)?;
    let game = scenario.validate()?;
    Ok((scenario, game))
}

fn solve_scenario(
    scenario: &Scenario,
    game: &Game,
) -> Result<(EquilibriumResult, Vec<IterationRecord>)> {
    let init = scenario.warm_start_state(game)?;
    let mut records = Vec::new();
    let started = Instant::now();
    let result = solve(game, &scenario.solver, init, |r| {
        if r.iteration % 500 == 0 {
            tracing::info!(
                iteration = r.iteration,
                stationarity = r.stationarity_residual,
                br_gap = r.br_gap,
                eta = r.eta,
                "solving"
            );
        }
        tracing::debug!(?r);
        records.push(*r);
    })?;
    let d = &result.diagnostics;
    tracing::info!(
        scenario = %scenario.name,
        converged = d.converged,
        iterations = d.iterations,
        stationarity = d.stationarity_residual,
        br_gap = d.br_gap,
        mean_karma = d.mean_karma,
        seconds = started.elapsed().as_secs_f64(),
        "solver finished"
    );
    Ok((result, records))
}

#[derive(Serialize)]
struct TypeSummary {
    access: f64,
    reward: f64,
    mean_karma: f64,
}

#[derive(Serialize)]
struct EquilibriumMetadata<'a> {
    scenario: &'a str,
    payment_rule: String,
    k_bar: usize,
    k_max: usize,
    average_reward: bool,
    /// Long-run average reward per type in average-reward mode.
    gains: Vec<Option<f64>>,
    efficiency: f64,
    coin_efficiency: f64,
    dict_efficiency: f64,
    per_type: Vec<TypeSummary>,
    diagnostics: &'a karma_core::solver::Diagnostics,
}

fn type_summaries(game: &Game, state: &SocialState) -> Vec<TypeSummary> {
    ex_ante_metrics(game, state)
        .into_iter()
        .enumerate()
        .map(|(t, w)| TypeSummary {
            access: w.access,
            reward: w.reward,
            mean_karma: state.type_mean_karma(t),
        })
        .collect()
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn export_equilibrium(
    dir: &Path,
    scenario: &Scenario,
    game: &Game,
    result: &EquilibriumResult,
    records: &[IterationRecord],
) -> Result<()> {
    let state = &result.social_state;
    write_atomic(&dir.join("distribution.csv"), &io::distribution_csv(state)?)?;
    write_atomic(&dir.join("policy.csv"), &io::policy_csv(state)?)?;
    write_atomic(
        &dir.join("values.csv"),
        &io::values_csv(&result.value, game.levels())?,
    )?;
    let mut log = Vec::new();
    for r in records {
        serde_json::to_writer(&mut log, r)?;
        log.push(b'\n');
    }
    write_atomic(&dir.join("iterations.jsonl"), &log)?;
    let meta = EquilibriumMetadata {
        scenario: &scenario.name,
        payment_rule: game.mechanism().payment_rule.to_string(),
        k_bar: game.k_bar(),
        k_max: game.k_max(),
        average_reward: game.all_average_reward(),
        gains: io::gains(&result.value),
        efficiency: efficiency_at_equilibrium(game, state),
        coin_efficiency: coin_efficiency(game),
        dict_efficiency: dict_efficiency(game),
        per_type: type_summaries(game, state),
        diagnostics: &result.diagnostics,
    };
    write_atomic(&dir.join("equilibrium.json"), &json_bytes(&meta)?)?;
    write_atomic(
        &dir.join("scenario.toml"),
        scenario.to_toml_string()?.as_bytes(),
    )?;
    Ok(())
}

fn cmd_solve(scenario: &Scenario, game: &Game, out_dir: &Path) -> Result<Outcome> {
    let (result, records) = solve_scenario(scenario, game)?;
    export_equilibrium(out_dir, scenario, game, &result, &records)?;
    let d = &result.diagnostics;
    println!(
        "{}: converged={} iterations={} stationarity={:.3e} br_gap={:.3e} mean_karma={:.6}",
        scenario.name, d.converged, d.iterations, d.stationarity_residual, d.br_gap, d.mean_karma
    );
    println!("artifacts in {}", out_dir.display());
    Ok(if d.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn apply_sim_flags(
    scenario: &mut Scenario,
    n: Option<usize>,
    t: Option<usize>,
    repeats: Option<usize>,
) {
    if let Some(n) = n {
        scenario.simulation.n_agents = n;
    }
    if let Some(t) = t {
        scenario.simulation.interactions = t;
    }
    if let Some(r) = repeats {
        scenario.simulation.repeats = r;
    }
}

fn simulate_schemes(
    game: &Game,
    scenario: &Scenario,
    schemes: &[Scheme],
    state: Option<&SocialState>,
    trace_dir: Option<&Path>,
) -> Result<Vec<WelfareReport>> {
    let mut reports = Vec::new();
    for &scheme in schemes {
        let strategy = match scheme {
            Scheme::Karma => Strategy::Karma(state.expect("karma runs need a policy")),
            other => Strategy::Benchmark(other),
        };
        let runs = run_simulation(game, strategy, &scenario.simulation)?;
        if let Some(dir) = trace_dir {
            for run in &runs {
                if let Some(trace) = &run.trace {
                    let mut bytes = Vec::new();
                    trace.write_csv(&mut bytes)?;
                    let name = format!(
                        "{}_r{}.csv",
                        scheme.to_string().to_lowercase(),
                        run.summary.repeat
                    );
                    write_atomic(&dir.join(name), &bytes)?;
                }
            }
        }
        let summaries: Vec<_> = runs.into_iter().map(|r| r.summary).collect();
        reports.push(aggregate_runs(&scheme.to_string(), &summaries)?);
    }
    Ok(reports)
}

#[derive(Serialize)]
struct ClosedForms {
    coin_efficiency: f64,
    dict_efficiency: f64,
    dict_access: Vec<f64>,
    /// Analytic values at the equilibrium that the KARMA runs used.
    karma_efficiency: Option<f64>,
    karma_per_type: Option<Vec<TypeSummary>>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    scenario: &'a str,
    n_agents: usize,
    interactions: usize,
    repeats: usize,
    seed: u64,
    reports: &'a [WelfareReport],
    closed_forms: ClosedForms,
}

fn reports_csv(reports: &[WelfareReport], n_types: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(WelfareReport::csv_header(n_types))?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    Ok(w.into_inner().map_err(|e| KarmaError::Io(e.to_string()))?)
}

fn pm(e: &karma_core::metrics::Estimate) -> String {
    match e.ci_halfwidth {
        Some(ci) => format!("{:>9.4} ± {:<7.4}", e.mean, ci),
        None => format!("{:>9.4}          ", e.mean),
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, benchmark: bool) -> Result<Outcome> {
    let mut scenario = load_scenario(&args.scenario.scenario)?;
    apply_overrides(&mut scenario, &args.overrides, cli.seed)?;
    apply_sim_flags(&mut scenario, args.n, args.t, args.repeats);
    scenario.simulation.record_trace = args.traces;
    if let Some(s) = &args.schemes {
        scenario.schemes = s.clone();
    }
    if benchmark {
        if scenario.schemes.contains(&Scheme::Karma) {
            tracing::info!("benchmark runs skip KARMA");
        }
        scenario.schemes.retain(|s| *s != Scheme::Karma);
    }
    let game = scenario.validate()?;
    let out = &cli.out_dir;

    let mut outcome = Outcome::Done;
    let state = if scenario.schemes.contains(&Scheme::Karma) {
        Some(match &args.policy {
            Some(dir) => read_policy_dir(&game, dir)?,
            None => {
                tracing::info!("no --policy given; solving the scenario first");
                let (result, records) = solve_scenario(&scenario, &game)?;
                export_equilibrium(
                    &out.join("equilibrium"),
                    &scenario,
                    &game,
                    &result,
                    &records,
                )?;
                if !result.diagnostics.converged {
                    tracing::warn!(
                        "equilibrium search did not converge; simulating the last iterate"
                    );
                    outcome = Outcome::NotConverged;
                }
                result.social_state
            }
        })
    } else {
        None
    };

    let trace_dir = args.traces.then(|| out.join("traces"));
    let reports = simulate_schemes(
        &game,
        &scenario,
        &scenario.schemes,
        state.as_ref(),
        trace_dir.as_deref(),
    )?;

    let closed_forms = ClosedForms {
        coin_efficiency: coin_efficiency(&game),
        dict_efficiency: dict_efficiency(&game),
        dict_access: dict_access(&game),
        karma_efficiency: state.as_ref().map(|s| efficiency_at_equilibrium(&game, s)),
        karma_per_type: state.as_ref().map(|s| type_summaries(&game, s)),
    };
    let sim = &scenario.simulation;
    let file = ReportFile {
        scenario: &scenario.name,
        n_agents: sim.n_agents,
        interactions: sim.interactions,
        repeats: sim.repeats,
        seed: sim.seed,
        reports: &reports,
        closed_forms,
    };
    write_atomic(
        &out.join("reports.csv"),
        &reports_csv(&reports, game.n_types())?,
    )?;
    write_atomic(&out.join("reports.json"), &json_bytes(&file)?)?;

    println!(
        "{} (N={}, T={}, repeats={}, seed={})",
        scenario.name, sim.n_agents, sim.interactions, sim.repeats, sim.seed
    );
    println!(
        "{:<6} {:>19} {:>19} {:>19}",
        "scheme", "efficiency", "access fairness", "reward fairness"
    );
    for r in &reports {
        println!(
            "{:<6} {} {} {}",
            r.label,
            pm(&r.efficiency),
            pm(&r.access_fairness),
            pm(&r.reward_fairness)
        );
    }
    if benchmark {
        println!(
            "closed forms: COIN efficiency {:.4}, DICT efficiency {:.4}",
            file.closed_forms.coin_efficiency, file.closed_forms.dict_efficiency
        );
    }
    Ok(outcome)
}

fn read_policy_dir(game: &Game, dir: &Path) -> Result<SocialState> {
    let read = |name: &str| -> Result<Vec<u8>> {
        let p: PathBuf = dir.join(name);
        std::fs::read(&p).map_err(|e| KarmaError::Io(format!("{}: {e}", p.display())).into())
    };
    let state = io::read_state_csv(game, &read("distribution.csv")?, &read("policy.csv")?)
        .with_context(|| format!("policy in {} does not fit the scenario", dir.display()))?;
    Ok(state)
}

struct SweepPoint {
    status: String,
    converged: Option<bool>,
    iterations: Option<usize>,
    efficiency: Option<f64>,
    per_type: Vec<TypeSummary>,
    reports: Vec<WelfareReport>,
}

fn sweep_point(base: &Scenario, param: &str, value: f64) -> Result<SweepPoint> {
    let mut scenario = base.clone();
    scenario.set_param(param, value)?;
    let game = scenario.validate()?;
    let mut point = SweepPoint {
        status: "ok".into(),
        converged: None,
        iterations: None,
        efficiency: None,
        per_type: Vec::new(),
        reports: Vec::new(),
    };
    let state = if scenario.schemes.contains(&Scheme::Karma) {
        let (result, _) = solve_scenario(&scenario, &game)?;
        let d = &result.diagnostics;
        point.converged = Some(d.converged);
        point.iterations = Some(d.iterations);
        if !d.converged {
            point.status = "not_converged".into();
        }
        point.efficiency = Some(efficiency_at_equilibrium(&game, &result.social_state));
        point.per_type = type_summaries(&game, &result.social_state);
        Some(result.social_state)
    } else {
        None
    };
    point.reports = simulate_schemes(&game, &scenario, &scenario.schemes, state.as_ref(), None)?;
    Ok(point)
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<Outcome> {
    let mut scenario = load_scenario(&args.scenario.scenario)?;
    apply_overrides(&mut scenario, &args.overrides, cli.seed)?;
    apply_sim_flags(&mut scenario, args.n, args.t, args.repeats);
    if let Some(s) = &args.schemes {
        scenario.schemes = s.clone();
    }
    scenario.simulation.record_trace = false;
    scenario.validate()?;
    if !PARAMS.contains(&args.param.as_str()) {
        return Err(KarmaError::InvalidScenario(vec![format!(
            "--param: unknown parameter {:?}; expected one of {}",
            args.param,
            PARAMS.join(", ")
        )])
        .into());
    }

    let points: Vec<(f64, Result<SweepPoint>)> = args
        .values
        .0
        .par_iter()
        .map(|&v| (v, sweep_point(&scenario, &args.param, v)))
        .collect();

    let n_types = scenario.types.len();
    let mut header = vec![
        "param".to_string(),
        "value".into(),
        "status".into(),
        "converged".into(),
        "iterations".into(),
        "eq_efficiency".into(),
    ];
    for t in 0..n_types {
        for col in ["ex_ante_access", "ex_ante_reward", "mean_karma"] {
            header.push(format!("type{t}_{col}"));
        }
    }
    header.push("scheme".into());
    let report_header = WelfareReport::csv_header(n_types);
    header.extend(report_header.iter().skip(2).cloned());

    let opt = |x: Option<String>| x.unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    let mut failures = 0;
    for (value, point) in &points {
        let mut prefix = vec![args.param.clone(), value.to_string()];
        match point {
            Err(e) => {
                failures += 1;
                tracing::warn!(value, error = %e, "sweep point failed");
                prefix.push(format!("error: {e}"));
                prefix.resize(header.len(), String::new());
                w.write_record(&prefix)?;
            }
            Ok(p) => {
                prefix.push(p.status.clone());
                prefix.push(opt(p.converged.map(|c| c.to_string())));
                prefix.push(opt(p.iterations.map(|i| i.to_string())));
                prefix.push(opt(p.efficiency.map(|e| e.to_string())));
                for t in 0..n_types {
                    match p.per_type.get(t) {
                        Some(s) => {
                            prefix.extend([s.access, s.reward, s.mean_karma].map(|x| x.to_string()))
                        }
                        None => prefix.extend(std::iter::repeat(String::new()).take(3)),
                    }
                }
                for r in &p.reports {
                    let mut row = prefix.clone();
                    let rec = r.csv_record();
                    row.push(rec[0].clone());
                    row.extend(rec.into_iter().skip(2));
                    w.write_record(&row)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| KarmaError::Io(e.to_string()))?;
    let path = cli.out_dir.join("sweep.csv");
    write_atomic(&path, &bytes)?;
    println!(
        "{} points over {} ({} failed); table in {}",
        points.len(),
        args.param,
        failures,
        path.display()
    );
    Ok(Outcome::Done)
}
