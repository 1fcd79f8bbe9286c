use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use dectd_core::harness::{monte_carlo, plateau, sweep as run_sweep, sweep_csv, verify_bounds, Model, RunConfig};

use crate::config;
use crate::report::{constants_entries, render_kv, render_text};
use crate::{CliError, Common};

const DEFAULT_OUT: &str = "out";
pub const RUNS_DIR: &str = "runs";
pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG_COPY: &str = "config.toml";
pub const CONSTANTS_KV: &str = "constants.kv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const BOUND_REPORT: &str = "bound_report.txt";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const PLOT_FILES: [&str; 3] = ["avg_norm.csv", "agent_norms.csv", "first_coords.csv"];

pub fn run_csv_name(run: usize) -> String {
    format!("run_{run:04}.csv")
}

pub fn trace_csv_name(run: usize) -> String {
    format!("trace_{run:04}.csv")
}

fn effective_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(c.config.as_deref(), &c.overrides)?;
    if let Some(seed) = c.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(runs) = c.runs {
        cfg.experiment.runs = runs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<PathBuf, CliError> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn constants(c: &Common) -> Result<(), CliError> {
    let cfg = effective_config(c)?;
    let model = Model::generate(&cfg)?;
    let entries = constants_entries(&model);
    print!("{}", render_text(&entries));
    if c.out.is_some() {
        let dir = out_dir(c)?;
        fs::write(dir.join(CONSTANTS_KV), render_kv(&entries))?;
    }
    Ok(())
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn run(c: &Common) -> Result<(), CliError> {
    let cfg = effective_config(c)?;
    let dir = out_dir(c)?;
    let model = Model::generate(&cfg)?;
    let mc = monte_carlo(&cfg, &model, cfg.experiment.runs)?;

    let runs_dir = dir.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir)?;
    let mut files = vec![CONFIG_COPY.to_string(), CONSTANTS_KV.to_string(), AGGREGATE_CSV.to_string()];
    for (i, log) in mc.logs.iter().enumerate() {
        fs::write(runs_dir.join(run_csv_name(i)), log.to_csv())?;
        fs::write(runs_dir.join(trace_csv_name(i)), log.trace_csv())?;
        files.push(format!("{RUNS_DIR}/{}", run_csv_name(i)));
        files.push(format!("{RUNS_DIR}/{}", trace_csv_name(i)));
    }
    fs::write(dir.join(AGGREGATE_CSV), mc.stats.to_csv())?;
    let canonical = config::canonical(&cfg);
    fs::write(dir.join(CONFIG_COPY), &canonical)?;
    fs::write(dir.join(CONSTANTS_KV), render_kv(&constants_entries(&model)))?;

    let seeds: Vec<String> = mc.logs.iter().map(|l| l.seed.to_string()).collect();
    let manifest = format!(
        "tool=dectd\nversion={}\ncommand=run\nconfig_sha256={}\nseed={}\nruns={}\nrun_seeds={}\nsnapshot_id={}\nalpha={:e}\nsampling={}\nsteps={}\nrecord_every={}\nfiles={}\n",
        env!("CARGO_PKG_VERSION"),
        sha256_hex(&canonical),
        cfg.experiment.seed,
        cfg.experiment.runs,
        seeds.join(","),
        model.constants.fingerprint(),
        cfg.training.alpha,
        cfg.training.sampling,
        cfg.training.steps,
        cfg.experiment.record_every,
        files.join(","),
    );
    fs::write(dir.join(MANIFEST), manifest)?;

    let (mean, se) = plateau(&mc.logs, cfg.training.steps);
    println!(
        "wrote {} runs to {}; final-10% mean avg_err_sq {mean:e} (se {se:e})",
        mc.logs.len(),
        dir.display()
    );
    Ok(())
}

pub fn verify(c: &Common) -> Result<(), CliError> {
    let cfg = effective_config(c)?;
    let dir = out_dir(c)?;
    let model = Model::generate(&cfg)?;
    let mc = monte_carlo(&cfg, &model, cfg.experiment.runs)?;
    let report = verify_bounds(&mc, &model.constants, &cfg)?;
    let text = report.render();
    fs::write(dir.join(BOUND_REPORT), &text)?;
    print!("{}", text.lines().take(2).map(|l| format!("{l}\n")).collect::<String>());
    let flagged = report.lines.iter().filter(|l| !l.flags.is_empty()).count();
    println!("{} bound lines, {flagged} flagged; report in {}", report.lines.len(), dir.join(BOUND_REPORT).display());
    if report.passed() {
        return Ok(());
    }
    let failures: Vec<String> = report.hard_failures().map(dectd_core::harness::render_line).collect();
    for l in &failures {
        eprintln!("{l}");
    }
    let mut reason = format!("{} bound lines failed", failures.len());
    if report.consensus_step_violations > 0 && report.consensus_flags.is_empty() {
        reason.push_str(&format!(", {} per-step consensus violations", report.consensus_step_violations));
    }
    Err(CliError::Verification(reason))
}

pub fn sweep(c: &Common, alphas: &[f64]) -> Result<(), CliError> {
    if alphas.len() < 2 {
        return Err(CliError::Config("--alphas needs at least two step sizes".into()));
    }
    let cfg = effective_config(c)?;
    let dir = out_dir(c)?;
    let model = Model::generate(&cfg)?;
    let rows = run_sweep(&cfg, &model, alphas)?;
    let csv = sweep_csv(&rows);
    fs::write(dir.join(SWEEP_CSV), &csv)?;
    print!("{csv}");
    for pair in rows.windows(2) {
        if let (Ok((a, _)), Ok((b, _))) = (&pair[0].plateau, &pair[1].plateau) {
            println!("plateau ratio alpha {:e} / alpha {:e} = {:.3}", pair[0].alpha, pair[1].alpha, a / b);
        }
    }
    for r in &rows {
        if let Err(e) = &r.plateau {
            eprintln!("alpha {:e}: {e}", r.alpha);
        }
    }
    Ok(())
}

struct Trace {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<Trace, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifacts(format!("{} not found", path.display())));
    }
    let bad = |e: csv::Error| CliError::MissingArtifacts(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(bad)?;
    let headers = reader.headers().map_err(bad)?.iter().map(str::to_owned).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(bad)?;
    Ok(Trace { headers, rows })
}

fn write_columns(path: &Path, trace: &Trace, keep: impl Fn(&str) -> bool) -> Result<(), CliError> {
    let cols: Vec<usize> = (0..trace.headers.len()).filter(|&i| i == 0 || keep(&trace.headers[i])).collect();
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    writer.write_record(cols.iter().map(|&i| &trace.headers[i])).map_err(io)?;
    for row in &trace.rows {
        writer.write_record(cols.iter().map(|&i| &row[i])).map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the averaged-parameter norm, the per-agent norms and the per-agent
/// first coordinates of run 0 as three CSVs.
pub fn export_plot(run_dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let runs = run_dir.join(RUNS_DIR);
    let trace = read_csv(&runs.join(trace_csv_name(0)))?;
    let log = read_csv(&runs.join(run_csv_name(0)))?;
    if trace.rows.len() != log.rows.len() {
        return Err(CliError::MissingArtifacts(format!(
            "trace has {} rows but the run log has {}",
            trace.rows.len(),
            log.rows.len()
        )));
    }
    let dir = out.unwrap_or(run_dir);
    fs::create_dir_all(dir)?;
    write_columns(&dir.join(PLOT_FILES[0]), &trace, |h| h == "avg_norm")?;
    write_columns(&dir.join(PLOT_FILES[1]), &trace, |h| h.starts_with("norm_"))?;
    write_columns(&dir.join(PLOT_FILES[2]), &trace, |h| h.starts_with("first_"))?;
    println!("wrote {} to {}", PLOT_FILES.join(", "), dir.display());
    Ok(())
}
