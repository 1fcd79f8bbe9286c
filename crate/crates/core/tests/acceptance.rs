//! Acceptance criteria AC1-AC10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use dectd_core::env::{exact_value_oracle, stationary_distribution, EnvConfig, MarkovRewardProcess, TransitionSampler};
use dectd_core::featmap::FeatureMap;
use dectd_core::harness::{
    monte_carlo, run_single, sweep, verify_bounds, BoundKind, BoundLine, Model, RunConfig, SamplingMode,
};
use dectd_core::rng::{stream_rng, Stream};
use dectd_core::tdcore::{average_params, centralized_step, decentralized_step, mean_dynamics, stacked_gradient, AgentMatrix};
use dectd_core::theory::{compute_k_g, iid_constants};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budget(name: &str, elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{name} took {elapsed:.1?}, limit {limit:?}"))
}

/// `|S| = 10`, `p = 3`, degree-2 random graph.
fn small_config(num_agents: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.environment.num_states = 10;
    cfg.features.state_dim = 4;
    cfg.features.dim = 3;
    cfg.network.num_agents = num_agents;
    cfg.network.avg_degree = 2.0;
    cfg.experiment.seed = seed;
    cfg
}

/// The M = 4 model shared by AC4, AC5, AC6 and AC9.
const SMALL_SEED: u64 = 23;

fn unflagged_pass(lines: &[&BoundLine], what: &str) -> Result<(), String> {
    ensure(!lines.is_empty(), || format!("no {what} lines were produced"))?;
    if let Some(l) = lines.iter().find(|l| !l.flags.is_empty()) {
        return Err(format!("{what} line at k={} carries flags {:?}", l.k, l.flags));
    }
    if let Some(l) = lines.iter().find(|l| !l.pass) {
        return Err(format!("{what} fails at k={}: {}", l.k, dectd_core::harness::render_line(l)));
    }
    Ok(())
}

fn ac1() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.training.sampling = SamplingMode::Markov;
    cfg.training.steps = 20_000;
    let start = Instant::now();
    let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
    let log = run_single(&cfg, &model, cfg.experiment.seed).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    budget("full-scale run", elapsed, Duration::from_secs(120))?;

    let steps = cfg.training.steps;
    let window_mean = |lo: u64, hi: u64| {
        let xs: Vec<f64> = log.records.iter().filter(|r| r.k >= lo && r.k <= hi).map(|r| r.avg_err_sq).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let early = window_mean(0, steps / 100);
    let late = window_mean(steps - steps / 10, steps);
    ensure(late < 0.1 * early, || format!("late error {late:e} not below 10% of early error {early:e}"))?;

    let theta = &log.final_theta;
    let norms: Vec<f64> = (0..theta.num_agents()).map(|m| theta.row(m).norm()).collect();
    let gap = norms.iter().cloned().fold(f64::MIN, f64::max) - norms.iter().cloned().fold(f64::MAX, f64::min);
    let avg_norm = average_params(theta).norm();
    ensure(gap < 0.01 * avg_norm, || format!("final norm gap {gap:e} not below 1% of {avg_norm:e}"))?;
    Ok(format!(
        "M=30 |S|=100 p=10 alpha=0.01, 2e4 Markov steps in {elapsed:.1?}; late/early error {:.3}; norm gap / ||theta_bar|| {:.2e}",
        late / early,
        gap / avg_norm
    ))
}

fn ac2() -> Outcome {
    let mut cfg = small_config(5, 0);
    let probe = Model::generate(&cfg).map_err(|e| e.to_string())?;
    cfg.training.alpha = (1.0 - probe.network.lambda2()) / 8.0;
    cfg.training.steps = 2_000;
    cfg.experiment.runs = 20;
    let start = Instant::now();
    let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
    let mc = monte_carlo(&cfg, &model, cfg.experiment.runs).map_err(|e| e.to_string())?;
    let report = verify_bounds(&mc, &model.constants, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    budget("consensus check", elapsed, Duration::from_secs(10))?;
    ensure(report.consensus_flags.is_empty(), || format!("hypotheses flagged: {:?}", report.consensus_flags))?;
    ensure(report.consensus_step_checks == 20 * 2_001, || format!("only {} checks", report.consensus_step_checks))?;
    ensure(report.consensus_step_violations == 0, || format!("{} violations", report.consensus_step_violations))?;
    Ok(format!(
        "lambda2={:.3}, alpha={:.4e}, {} run-step checks, 0 violations, {elapsed:.1?}",
        model.network.lambda2(),
        cfg.training.alpha,
        report.consensus_step_checks
    ))
}

fn ac3() -> Outcome {
    const SAMPLES: usize = 100_000;
    let start = Instant::now();
    let cfg = small_config(4, SMALL_SEED);
    let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(cfg.experiment.seed, Stream::Probe);
    let theta = AgentMatrix::uniform(4, 3, &mut rng);
    let theta_bar = average_params(&theta);
    let expected = model.mean.mean_gradient(&theta_bar);
    let sampler = TransitionSampler::new(&model.mrp, &model.stationary).map_err(|e| e.to_string())?;

    let p = expected.len();
    let mut sum = DVector::zeros(p);
    let mut sum_sq = DVector::zeros(p);
    let mut second_moment = 0.0;
    for _ in 0..SAMPLES {
        let sample = sampler.sample_iid(&mut rng);
        let g = stacked_gradient(&theta, &sample, &model.features, model.mrp.gamma()).map_err(|e| e.to_string())?;
        let avg = average_params(&g);
        let dev = &avg - &expected;
        second_moment += dev.norm_squared();
        sum += &avg;
        sum_sq += avg.component_mul(&avg);
    }
    let n = SAMPLES as f64;
    let mean = &sum / n;
    let mut worst = 0.0f64;
    for j in 0..p {
        let var = (sum_sq[j] - n * mean[j] * mean[j]) / (n - 1.0);
        let se = (var / n).sqrt();
        let z = (mean[j] - expected[j]).abs() / se;
        worst = worst.max(z);
        ensure(z <= 3.0, || format!("coordinate {j}: deviation {:.3e} is {z:.2} standard errors", mean[j] - expected[j]))?;
    }
    let second_moment = second_moment / n;
    let bound = model.model_constants.iid_variance_bound((&theta_bar - &model.mean.theta_star).norm_squared());
    ensure(second_moment <= bound, || format!("second moment {second_moment:e} exceeds {bound:e}"))?;
    let elapsed = start.elapsed();
    budget("gradient statistics", elapsed, Duration::from_secs(10))?;
    Ok(format!("1e5 samples: worst |z| = {worst:.2}; second moment {second_moment:.3e} <= {bound:.3e}; {elapsed:.1?}"))
}

fn ac4() -> Outcome {
    let mut cfg = small_config(4, SMALL_SEED);
    let probe = Model::generate(&cfg).map_err(|e| e.to_string())?;
    cfg.training.alpha = 0.5 * probe.constants.iid.alpha_max;
    cfg.training.sampling = SamplingMode::Iid;
    cfg.training.steps = 5_000;
    cfg.experiment.runs = 200;
    cfg.experiment.record_every = 10;
    let start = Instant::now();
    let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
    let mc = monte_carlo(&cfg, &model, cfg.experiment.runs).map_err(|e| e.to_string())?;
    let report = verify_bounds(&mc, &model.constants, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    budget("iid Monte Carlo", elapsed, Duration::from_secs(60))?;
    let lines: Vec<&BoundLine> = report.lines_of(BoundKind::Iid).collect();
    unflagged_pass(&lines, "iid average bound")?;
    let last = lines.last().unwrap();
    Ok(format!(
        "alpha={:.3e}, {} checkpoints; at k={} mean {:.3e} vs bound {}; {elapsed:.1?}",
        cfg.training.alpha,
        lines.len(),
        last.k,
        last.empirical,
        last.bound.unwrap()
    ))
}

fn markov_small() -> Result<(RunConfig, Model), String> {
    let mut cfg = small_config(4, SMALL_SEED);
    cfg.training.sampling = SamplingMode::Markov;
    let probe = Model::generate(&cfg).map_err(|e| e.to_string())?;
    let markov = probe.constants.markov.as_ref().map_err(|e| format!("Markov constants unavailable: {e}"))?;
    cfg.training.alpha = 0.5 * markov.step.alpha_max;
    let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
    Ok((cfg, model))
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let (mut cfg, model) = markov_small()?;
    cfg.training.steps = 5_000;
    cfg.experiment.runs = 200;
    cfg.experiment.record_every = 10;
    let mc = monte_carlo(&cfg, &model, cfg.experiment.runs).map_err(|e| e.to_string())?;
    let report = verify_bounds(&mc, &model.constants, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    budget("Markov Monte Carlo", elapsed, Duration::from_secs(120))?;
    let avg: Vec<&BoundLine> = report.lines_of(BoundKind::Markov).collect();
    let local: Vec<&BoundLine> = report.lines_of(BoundKind::MarkovLocal).collect();
    unflagged_pass(&avg, "Markov average bound")?;
    unflagged_pass(&local, "Markov per-agent bound")?;
    let k_g = model.constants.markov.as_ref().unwrap().k_g;
    Ok(format!(
        "K_G={k_g}, alpha={:.3e}, {} + {} checkpoint lines pass; final bounds {} / {}; {elapsed:.1?}",
        cfg.training.alpha,
        avg.len(),
        local.len(),
        avg.last().unwrap().bound.unwrap(),
        local.last().unwrap().bound.unwrap()
    ))
}

fn ac6() -> Outcome {
    let start = Instant::now();
    let (mut cfg, model) = markov_small()?;
    let k_g = model.constants.markov.as_ref().unwrap().k_g;
    cfg.training.steps = k_g + 1_000;
    cfg.experiment.runs = 20;
    cfg.experiment.record_every = 1;
    let mc = monte_carlo(&cfg, &model, cfg.experiment.runs).map_err(|e| e.to_string())?;
    let report = verify_bounds(&mc, &model.constants, &cfg).map_err(|e| e.to_string())?;
    let lines: Vec<&BoundLine> = report.lines_of(BoundKind::Lyapunov).collect();
    ensure(lines.len() == 20 * 20, || format!("expected 400 Lyapunov checks, got {}", lines.len()))?;
    unflagged_pass(&lines, "Lyapunov")?;
    Ok(format!("K_G={k_g}, 20 runs x 20 sampled k, zero failures; {:.1?}", start.elapsed()))
}

fn ac7() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let num_states = 2 + (seed as usize * 7) % 29;
        let cfg = EnvConfig { num_states, num_agents: 1 + seed as usize % 5, r_max: 10.0, gamma: 0.5 + 0.45 * (seed as f64 / 49.0) };
        let mrp = MarkovRewardProcess::generate(&cfg, &mut stream_rng(seed, Stream::Environment)).map_err(|e| e.to_string())?;
        let fm = FeatureMap::identity(num_states).map_err(|e| e.to_string())?;
        let pi = stationary_distribution(&mrp).map_err(|e| e.to_string())?;
        let mean = mean_dynamics(&mrp, &fm, &pi).map_err(|e| e.to_string())?;
        let err = (fm.phi() * &mean.theta_star - exact_value_oracle(&mrp)).amax();
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("seed {seed}: sup-norm gap {err:e}"))?;
    }
    Ok(format!("50 MRPs with 2..30 states, worst sup-norm gap {worst:.2e}"))
}

fn ac8() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut cfg = small_config(1, seed);
        cfg.training.steps = 1_000;
        cfg.training.sampling = SamplingMode::Markov;
        let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
        let w = model.network.weights();
        let gamma = model.mrp.gamma();
        let alpha = cfg.training.alpha;
        let sampler = TransitionSampler::new(&model.mrp, &model.stationary).map_err(|e| e.to_string())?;

        // Same draw order as a harness run: Theta(0), start state, then transitions.
        let mut rng = stream_rng(seed, Stream::Run);
        let mut theta = AgentMatrix::uniform(1, 3, &mut rng);
        let mut central = theta.row(0);
        let mut state = rand::Rng::random_range(&mut rng, 0..model.mrp.num_states());
        let log = run_single(&cfg, &model, seed).map_err(|e| e.to_string())?;
        for k in 1..=cfg.training.steps as usize {
            let sample = sampler.step_markov(state, &mut rng).map_err(|e| e.to_string())?;
            state = sample.s_next;
            theta = decentralized_step(&theta, w, &sample, &model.features, gamma, alpha).map_err(|e| e.to_string())?;
            central = centralized_step(&central, &sample, &model.features, gamma, alpha).map_err(|e| e.to_string())?;
            let gap = (theta.row(0) - &central).amax();
            worst = worst.max(gap);
            ensure(gap <= 1e-12, || format!("seed {seed}, step {k}: coordinate gap {gap:e}"))?;
            let logged = log.records[k].avg_err_sq;
            let direct = (&central - &model.mean.theta_star).norm_squared();
            ensure((logged - direct).abs() <= 1e-12 * direct.max(1.0), || {
                format!("seed {seed}, step {k}: logged error {logged:e} vs centralized {direct:e}")
            })?;
        }
    }
    Ok(format!("10 seeds x 1e3 steps, worst coordinate gap {worst:.1e}"))
}

fn ac9() -> Outcome {
    let start = Instant::now();
    let mut cfg = small_config(4, SMALL_SEED);
    cfg.training.steps = 40_000;
    cfg.experiment.runs = 100;
    cfg.experiment.record_every = 10;
    let model = Model::generate(&cfg).map_err(|e| e.to_string())?;
    let alpha = 0.5 * model.constants.iid.alpha_max;
    let mut parts = Vec::new();
    for mode in [SamplingMode::Iid, SamplingMode::Markov] {
        cfg.training.sampling = mode;
        let rows = sweep(&cfg, &model, &[alpha, alpha / 2.0]).map_err(|e| e.to_string())?;
        let (hi, _) = rows[0].plateau.clone().map_err(|e| e.to_string())?;
        let (lo, _) = rows[1].plateau.clone().map_err(|e| e.to_string())?;
        let ratio = hi / lo;
        ensure((1.5..=3.0).contains(&ratio), || format!("{mode}: plateau ratio {ratio:.3} outside [1.5, 3.0]"))?;
        parts.push(format!("{mode} ratio {ratio:.3}"));
    }
    Ok(format!("alpha={alpha:.3e} vs alpha/2, 100 runs each: {}; {:.1?}", parts.join(", "), start.elapsed()))
}

fn ac10() -> Outcome {
    let start = Instant::now();
    let mut worst_residual = 0.0f64;
    let mut k_range = (u64::MAX, 0);
    for seed in 0..100u64 {
        let mut cfg = RunConfig::default();
        cfg.experiment.seed = seed;
        let model = Model::generate(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let mc = model.model_constants;
        ensure(mc.lambda_max_h < 0.0, || format!("seed {seed}: lambda_max {:e}", mc.lambda_max_h))?;
        ensure(mc.beta <= 2.0 * (1.0 + mc.gamma), || format!("seed {seed}: beta {} > 2(1+gamma)", mc.beta))?;

        let probe = iid_constants(mc.lambda_max_h, mc.lambda_min_h, mc.beta, mc.theta_star_norm, mc.r_max, 1.0)
            .map_err(|e| e.to_string())?;
        let iid = iid_constants(mc.lambda_max_h, mc.lambda_min_h, mc.beta, mc.theta_star_norm, mc.r_max, probe.alpha_max)
            .map_err(|e| e.to_string())?;
        ensure(iid.c1 > 0.0 && iid.c1 < 1.0, || format!("seed {seed}: c1 = {}", iid.c1))?;

        let markov = model.constants.markov.as_ref().map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(markov.c7.in_unit_interval(), || format!("seed {seed}: c7 gap {:e}", markov.c7.gap()))?;

        let k_g = compute_k_g(&mc).map_err(|e| e.to_string())?;
        let threshold = -mc.lambda_max_h / 4.0;
        ensure(mc.sigma(0, k_g).1 < threshold, || format!("seed {seed}: sigma(K_G) not below threshold"))?;
        ensure(k_g == 1 || mc.sigma(0, k_g - 1).1 >= threshold, || format!("seed {seed}: K_G = {k_g} is not minimal"))?;
        k_range = (k_range.0.min(k_g), k_range.1.max(k_g));

        worst_residual = worst_residual.max(markov.step.residual);
        ensure(markov.step.residual <= 1e-10, || format!("seed {seed}: bisection residual {:e}", markov.step.residual))?;
    }
    Ok(format!(
        "100 full-scale models: K_G in [{}, {}], worst bisection residual {worst_residual:.1e}; {:.1?}",
        k_range.0,
        k_range.1,
        start.elapsed()
    ))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("AC1", "default-setup reproduction", ac1),
        ("AC2", "deterministic consensus bound", ac2),
        ("AC3", "gradient unbiasedness and variance", ac3),
        ("AC4", "iid expectation bound", ac4),
        ("AC5", "Markov expectation bounds", ac5),
        ("AC6", "multi-step Lyapunov inequality", ac6),
        ("AC7", "tabular oracle equivalence", ac7),
        ("AC8", "single-agent reduction", ac8),
        ("AC9", "plateau proportional to step size", ac9),
        ("AC10", "constants sanity on random models", ac10),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
