//! `coxbalance` command-line tool.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coxbalance::exact::{state_cap_from_env, write_distribution_file};
use coxbalance::harness::sweep::{run_sweep, SweepSpec, MIN_FIT_POINTS};
use coxbalance::harness::verify::{run_suite, Suite, VerifyOptions};
use coxbalance::harness::RunConfig;
use coxbalance::policy::PodSampling;
use coxbalance::sim::{per_server_microsim, run, run_with_trace_csv, SimReport};
use coxbalance::{Error, ExactSolution, PolicyKind};
use serde_json::{json, Value};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CAP: u8 = 4;
const EXIT_VERIFY: u8 = 5;

#[derive(Parser)]
#[command(name = "coxbalance", version, about = "Load balancing with Coxian service: simulation, exact solves and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write a JSON report.
    Simulate(SimulateArgs),
    /// Solve the stationary distribution exactly for small N.
    Exact(ExactArgs),
    /// Run a verification suite over the built-in instance grid.
    Verify(VerifyArgs),
    /// Heavy-traffic sweep over N with scaling fits.
    Sweep(SweepArgs),
    /// Summarize a report, sweep CSV or sweep summary as Markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long, default_value = "simulate.json")]
    out: PathBuf,
    /// Use the per-server simulator (N <= 256).
    #[arg(long)]
    per_server: bool,
    /// Write `(time, sum S)` samples to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    trace_interval: f64,
    /// Include wall-clock time in the report (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for `distribution.csv` and `metrics.json`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// State cap; defaults to COXBALANCE_STATE_CAP or 2e6.
    #[arg(long)]
    cap: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// stein, drift, tail, ssc, pi or corollary.
    suite: String,
    /// Adds this instance to the grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restricts the grid to one policy: jsq, jiq, i1f or pod.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    pod_sampling: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cap: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Fit and bound summary; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ReportArgs {
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Exact(a) => exact(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::StateCapExceeded { .. } => EXIT_CAP,
        Error::Solver(_) => EXIT_DATA,
        _ => EXIT_CONFIG,
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> coxbalance::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> coxbalance::Result<u8> {
    let rc = RunConfig::load(&a.config)?;
    let cfg = rc.system()?;
    let mut sim = rc.sim_config();
    if let Some(h) = a.horizon {
        sim.horizon = h;
    }
    if a.warmup.is_some() {
        sim.warmup = a.warmup;
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(b) = a.batches {
        sim.batches = b;
    }
    sim.validate()?;
    let mut report: SimReport = match (a.per_server, &a.trace) {
        (true, Some(_)) => return Err(Error::Config("--trace is only available for the aggregate simulator".into())),
        (true, None) => per_server_microsim(&cfg, &sim)?,
        (false, Some(path)) => run_with_trace_csv(&cfg, &sim, a.trace_interval, BufWriter::new(File::create(path)?))?,
        (false, None) => run(&cfg, &sim)?,
    };
    if !a.timing {
        report.wall_clock_seconds = None;
    }
    write_json(&a.out, &report)?;
    if report.insufficient_data {
        eprintln!("insufficient data: {} post-warmup arrivals", report.arrivals);
        return Ok(EXIT_DATA);
    }
    Ok(0)
}

fn exact(a: ExactArgs) -> coxbalance::Result<u8> {
    let rc = RunConfig::load(&a.config)?;
    let cfg = rc.system()?;
    let cap = match a.cap {
        Some(c) => c,
        None => state_cap_from_env()?,
    };
    let sol = ExactSolution::solve(&cfg, cap)?;
    fs::create_dir_all(&a.out_dir)?;
    write_distribution_file(&a.out_dir.join("distribution.csv"), &sol.space, &sol.pi)?;
    let summary = json!({
        "n": cfg.n,
        "b": cfg.b,
        "lambda": cfg.lambda,
        "policy": cfg.policy.to_string(),
        "states": sol.space.len(),
        "reachable_states": sol.pi.reachable_states,
        "residual": sol.pi.residual,
        "metrics": sol.metrics(),
    });
    write_json(&a.out_dir.join("metrics.json"), &summary)?;
    Ok(0)
}

fn verify(a: VerifyArgs) -> coxbalance::Result<u8> {
    let suite: Suite = a.suite.parse()?;
    let policies = match &a.policy {
        None if a.d.is_some() || a.pod_sampling.is_some() => {
            return Err(Error::Config("--d and --pod-sampling need --policy pod".into()))
        }
        None => None,
        Some(kind) => {
            let sampling = match a.pod_sampling.as_deref() {
                None => None,
                Some("with_replacement") => Some(PodSampling::WithReplacement),
                Some("without_replacement") => Some(PodSampling::WithoutReplacement),
                Some(other) => return Err(Error::Config(format!("unknown pod sampling {other:?}"))),
            };
            let section = coxbalance::harness::config::PolicySection { kind: kind.clone(), d: a.d, pod_sampling: sampling };
            Some(vec![section.build()?])
        }
    };
    let user_instance = match &a.config {
        Some(path) => {
            let rc = RunConfig::load(path)?;
            let policy = policies.as_ref().map(|p: &Vec<PolicyKind>| p[0]).map_or_else(|| rc.policy.build(), Ok)?;
            Some(rc.system_at(rc.n, policy)?)
        }
        None => None,
    };
    let cap = match a.cap {
        Some(c) => c,
        None => state_cap_from_env()?,
    };
    let report = run_suite(suite, &VerifyOptions { policies, user_instance, cap, seed: a.seed })?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("verify_{suite}.json")));
    write_json(&out, &report)?;
    println!(
        "{suite}: {} instances, {} pass, {} fail, {} inapplicable",
        report.instances, report.pass, report.fail, report.inapplicable
    );
    for f in report.failures().take(20) {
        println!("FAIL {} {} witness={:?} slack={:?}", f.check_id, f.instance, f.witness, f.worst_slack);
    }
    Ok(if report.passed() { 0 } else { EXIT_VERIFY })
}

fn sweep(a: SweepArgs) -> coxbalance::Result<u8> {
    let rc = RunConfig::load(&a.config)?;
    let section = rc.sweep.as_ref().ok_or_else(|| Error::Config("missing sweep.n_grid".into()))?;
    let ht = rc.heavy_traffic()?.ok_or_else(|| Error::Config("a sweep needs alpha (and optionally beta)".into()))?;
    let spec = SweepSpec {
        n_grid: section.n_grid.clone(),
        alpha: ht.alpha,
        beta: ht.beta,
        b: rc.b,
        coxian: rc.coxian()?,
        policies: rc.sweep_policies()?,
        sim: rc.sim_config(),
    };
    let mut result = run_sweep(&spec)?;
    if !a.timing {
        result.strip_timing();
    }
    result.write_csv(BufWriter::new(File::create(&a.out)?))?;
    let summary_path = a.summary.unwrap_or_else(|| a.out.with_extension("json"));
    write_json(
        &summary_path,
        &json!({ "spec": spec, "fits": result.fits, "largest_point": result.largest_point, "fit_self_test_slope": result.fit_self_test_slope }),
    )?;
    for f in &result.fits {
        match &f.fit {
            Some(fit) => println!(
                "{} {}: slope {:.4} intercept {:.4} R^2 {:.4} ({} points)",
                f.policy, f.quantity, fit.slope, fit.intercept, fit.r_squared, fit.points
            ),
            None => println!("{} {}: fit skipped ({})", f.policy, f.quantity, f.skipped.as_deref().unwrap_or("")),
        }
    }
    let flagged = result.rows.iter().any(|r| r.insufficient_data);
    let starved = result.fits.iter().any(|f| f.usable_points < MIN_FIT_POINTS);
    if flagged && starved {
        eprintln!("insufficient data at some grid points leaves fewer than {MIN_FIT_POINTS} usable points");
        return Ok(EXIT_DATA);
    }
    Ok(0)
}

fn report(a: ReportArgs) -> coxbalance::Result<u8> {
    let text = fs::read_to_string(&a.input)?;
    let mut out = io::stdout().lock();
    if a.input.extension().is_some_and(|e| e == "csv") {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let wanted = ["n", "policy", "lambda", "p_wait", "p_wait_ci95", "excess_mean", "theorem_bound", "corollary_bound"];
        let idx: Vec<usize> = wanted.iter().filter_map(|w| col(w)).collect();
        writeln!(out, "| {} |", idx.iter().map(|&i| &headers[i]).collect::<Vec<_>>().join(" | "))?;
        writeln!(out, "|{}", " --- |".repeat(idx.len()))?;
        for rec in rdr.records() {
            let rec = rec?;
            writeln!(out, "| {} |", idx.iter().map(|&i| short(&rec[i])).collect::<Vec<_>>().join(" | "))?;
        }
        return Ok(0);
    }
    let v: Value = serde_json::from_str(&text)?;
    if let Some(records) = v.get("records").and_then(Value::as_array) {
        writeln!(out, "# verify {}", v["suite"].as_str().unwrap_or("?"))?;
        writeln!(out, "pass {} / fail {} / inapplicable {}", v["pass"], v["fail"], v["inapplicable"])?;
        for r in records.iter().filter(|r| r["status"] == "fail") {
            writeln!(out, "- FAIL `{}` at {} witness {}", r["check_id"].as_str().unwrap_or(""), r["instance"], r["witness"])?;
        }
    } else if let Some(fits) = v.get("fits").and_then(Value::as_array) {
        writeln!(out, "| policy | quantity | slope | R^2 | points |\n| --- | --- | --- | --- | --- |")?;
        for f in fits {
            let fit = &f["fit"];
            writeln!(out, "| {} | {} | {} | {} | {} |", f["policy"], f["quantity"], fit["slope"], fit["r_squared"], f["usable_points"])?;
        }
        for p in v["largest_point"].as_array().into_iter().flatten() {
            writeln!(
                out,
                "largest N = {} ({}): excess {} vs theorem bound {} (within: {}, N-condition met: {})",
                p["n"], p["policy"], p["excess_mean"], p["theorem_bound"], p["within_bound"], p["theorem_applicable"]
            )?;
        }
    } else if v.get("mean_total").is_some() {
        writeln!(out, "# {} simulation, N = {}, policy {}", v["simulator"].as_str().unwrap_or("?"), v["n"], v["policy"])?;
        for key in ["mean_total", "p_wait", "p_block", "mean_wait", "excess_mean", "p_outside_ssc"] {
            if let Some(e) = v.get(key).filter(|e| !e.is_null()) {
                writeln!(out, "- {key}: {} ± {} (95%)", e["mean"], e["ci95"])?;
            }
        }
    } else {
        return Err(Error::Config(format!("{} is not a recognized report", a.input.display())));
    }
    Ok(0)
}

fn short(field: &str) -> String {
    field.parse::<f64>().map(|x| format!("{x:.4e}")).unwrap_or_else(|_| field.to_string())
}
