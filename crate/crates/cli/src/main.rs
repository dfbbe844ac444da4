//! Command-line front end: eigenvalues, spreading speeds, periodic states,
//! front simulations, traveling waves, the property suite and parameter
//! sweeps, all driven by one TOML problem file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nlkpp::config::ProblemConfig;
use nlkpp::fields::{check_hypotheses, FitnessSpec, FourierTable};
use nlkpp::frontsim::{comparison_trials, simulate_front, verify_spreading};
use nlkpp::kernel::{Direction, Kernel, TiltedDirection};
use nlkpp::spectrum::{eigen_residual, principal_eigen};
use nlkpp::speed::{derivative_diagnostics, spreading_speed, LambdaSolver};
use nlkpp::steady::steady_periodic;
use nlkpp::waves::{
    build_bounds, residual_check, verify_floor_conditions, wave_checks, wave_iterate, Candidate, WaveSpeed,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

impl From<nlkpp::Error> for CliError {
    fn from(e: nlkpp::Error) -> Self {
        use nlkpp::Error as E;
        match e {
            E::InvalidKernel(_)
            | E::InvalidField(_)
            | E::InvalidInput(_)
            | E::Config(_)
            | E::BelowMinimalSpeed { .. }
            | E::NotUnstable { .. } => CliError::Validation(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Numerical(format!("csv: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nlkpp", version, about = "Spreading speeds and periodic traveling waves of nonlocal KPP equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Xi {
    #[value(name = "+1", alias = "1", alias = "plus")]
    Plus,
    #[value(name = "-1", alias = "minus")]
    Minus,
}

impl From<Xi> for Direction {
    fn from(x: Xi) -> Self {
        match x {
            Xi::Plus => Direction::Plus,
            Xi::Minus => Direction::Minus,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scenario {
    Speed,
    Spread,
    Compare,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepParam {
    Mu,
    Amplitude,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenvalue λ0(ξ, μ, a0) of the tilted period map.
    Eigen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        #[arg(long, default_value = "+1", allow_hyphen_values = true)]
        xi: Xi,
        /// Also write φ(t, x) as CSV.
        #[arg(long)]
        dump_phi: bool,
    },
    /// Spreading speed c*(ξ) = inf λ0(ξ, μ)/μ.
    Speed {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "+1", allow_hyphen_values = true)]
        xi: Xi,
    },
    /// Positive periodic state u*.
    Steady {
        #[command(flatten)]
        common: Common,
    },
    /// Direct front simulations.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "speed")]
        scenario: Scenario,
        #[arg(long, default_value = "+1", allow_hyphen_values = true)]
        xi: Xi,
    },
    /// Periodic traveling wave above the minimal speed.
    Wave {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "+1", allow_hyphen_values = true)]
        xi: Xi,
        /// Wave speed as a multiple of c* (defaults to `[wave] speed_multiple`).
        #[arg(long)]
        speed_multiple: Option<f64>,
    },
    /// Property suite: comparison, convexity, shift invariance, residual signs.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep λ0 over μ or c* over a scaling of the a0 modes.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mu")]
        param: SweepParam,
        #[arg(long, default_value_t = 0.1)]
        from: f64,
        #[arg(long, default_value_t = 3.0)]
        to: f64,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value = "+1", allow_hyphen_values = true)]
        xi: Xi,
    },
}

/// Everything a subcommand needs, plus artifact bookkeeping.
struct Run {
    name: &'static str,
    cfg: ProblemConfig,
    kernel: Kernel,
    fs: FitnessSpec,
    out: PathBuf,
    config_hash: String,
    artifacts: Vec<String>,
}

impl Run {
    fn open(name: &'static str, common: &Common) -> CliResult<Self> {
        let bytes = fs::read(&common.config)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", common.config.display())))?;
        let config_hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let cfg = ProblemConfig::from_path(&common.config)?;
        let kernel = cfg.build_kernel()?;
        let fs = cfg.fitness()?;
        let out = common.out.clone().unwrap_or_else(|| cfg.output_dir());
        fs::create_dir_all(&out)?;
        Ok(Self {
            name,
            cfg,
            kernel,
            fs,
            out,
            config_hash,
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, file: &str) -> PathBuf {
        self.artifacts.push(file.to_string());
        self.out.join(file)
    }

    fn write_json(&mut self, file: &str, mut value: Value) -> CliResult<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config_sha256".into(), json!(self.config_hash));
        }
        let path = self.path(file);
        let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Numerical(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    fn solver(&self, xi: Direction) -> LambdaSolver {
        LambdaSolver::new(&self.kernel, &self.fs.a0, xi, self.cfg.eigen_options())
    }

    fn finish(mut self, started: Instant) -> CliResult<()> {
        let cell = self.cfg.periodic_cell()?;
        let manifest = json!({
            "command": self.name,
            "config_sha256": self.config_hash,
            "grid": { "n_t": cell.n_t, "n_x": cell.n_x, "period_t": cell.period_t, "period_x": cell.period_x },
            "wave_grid": { "n_t": self.cfg.wave.n_t, "n_x": self.cfg.wave.n_x },
            "versions": { "nlkpp": env!("CARGO_PKG_VERSION") },
            "wall_time_s": started.elapsed().as_secs_f64(),
            "artifacts": self.artifacts.clone(),
        });
        let file = format!("{}.manifest.json", self.name);
        let path = self.path(&file);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn xi_tag(xi: Direction) -> &'static str {
    match xi {
        Direction::Plus => "plus",
        Direction::Minus => "minus",
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.15e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eigen(common: &Common, mu: f64, xi: Direction, dump: bool) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("eigen", common)?;
    let res = principal_eigen(&run.kernel, TiltedDirection::new(xi, mu), &run.fs.a0, &run.cfg.eigen_options())?;
    let residual = eigen_residual(&res, &run.kernel, &run.fs.a0)?;
    let lambda_zero = if mu == 0.0 {
        res.lambda0
    } else {
        principal_eigen(&run.kernel, TiltedDirection::new(xi, 0.0), &run.fs.a0, &run.cfg.eigen_options())?.lambda0
    };
    let hyp = check_hypotheses(&run.fs, lambda_zero);
    let file = format!("eigen_{}.json", xi_tag(xi));
    run.write_json(
        &file,
        json!({
            "xi": xi.sign(), "mu": mu, "lambda0": res.lambda0, "residual": residual,
            "gap": res.gap_estimate, "iterations": res.iterations, "hypotheses": hyp,
        }),
    )?;
    if dump {
        let path = run.path(&format!("phi_{}.csv", xi_tag(xi)));
        res.phi.write_csv(&path)?;
    }
    println!("lambda0 = {:.12} (residual {:.2e}, gap {:.4})", res.lambda0, residual, res.gap_estimate);
    run.finish(started)
}

fn cmd_speed(common: &Common, xi: Direction) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("speed", common)?;
    let solver = run.solver(xi);
    let sp = spreading_speed(&solver, &run.cfg.speed_options())?;
    let tag = xi_tag(xi);
    run.write_json(&format!("speed_{tag}.json"), serde_json::to_value(&sp).map_err(|e| CliError::Numerical(e.to_string()))?)?;
    let path = run.path(&format!("speed_{tag}.csv"));
    write_rows(&path, &["mu", "lambda", "quotient"], sp.samples.iter().map(|s| vec![s.mu, s.lambda, s.quotient]))?;
    println!("c* = {:.10}, mu* = {:.8}", sp.c_star, sp.mu_star);
    run.finish(started)
}

fn cmd_steady(common: &Common) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("steady", common)?;
    let orbit = steady_periodic(&run.kernel, &run.fs, &run.cfg.steady_options())?;
    run.write_json(
        "steady.json",
        json!({
            "period_map_residual": orbit.period_map_residual,
            "seeds_agreement": orbit.seeds_agreement,
            "periods": [orbit.periods.0, orbit.periods.1],
            "lambda_zero": orbit.lambda_zero,
            "u_star_min": orbit.u_star.min(),
            "u_star_max": orbit.u_star.max(),
        }),
    )?;
    let path = run.path("u_star.csv");
    orbit.u_star.write_csv(&path)?;
    println!("u* in [{:.8}, {:.8}], seeds agree to {:.2e}", orbit.u_star.min(), orbit.u_star.max(), orbit.seeds_agreement);
    run.finish(started)
}

fn cmd_simulate(common: &Common, scenario: Scenario, xi: Direction) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("simulate", common)?;
    let tag = xi_tag(xi);
    match scenario {
        Scenario::Speed => {
            let orbit = steady_periodic(&run.kernel, &run.fs, &run.cfg.steady_options())?;
            let sp = spreading_speed(&run.solver(xi), &run.cfg.speed_options())?;
            let res = simulate_front(&run.kernel, &run.fs, &orbit, xi, &run.cfg.front_options())?;
            let traces: Vec<Value> = res
                .traces
                .iter()
                .map(|t| {
                    json!({
                        "theta": t.theta, "level": t.level, "speed": t.speed, "intercept": t.intercept,
                        "window": [t.window.0, t.window.1], "relative_deviation": t.speed / sp.c_star - 1.0,
                    })
                })
                .collect();
            run.write_json(&format!("simulate_speed_{tag}.json"), json!({ "xi": xi.sign(), "c_star": sp.c_star, "traces": traces }))?;
            for t in &res.traces {
                let path = run.path(&format!("trace_{tag}_theta{:.2}.csv", t.theta));
                write_rows(&path, &["t", "x_f"], t.samples.iter().map(|&(a, b)| vec![a, b]))?;
            }
            if !res.snapshots.is_empty() {
                let path = run.path(&format!("snapshots_{tag}.csv"));
                write_rows(
                    &path,
                    &["t", "index", "u"],
                    res.snapshots.iter().flat_map(|(t, v)| v.iter().enumerate().map(move |(i, u)| vec![*t, i as f64, *u])),
                )?;
            }
            for t in &res.traces {
                println!("theta {:.2}: speed {:.6} (c* {:.6}, {:+.2}%)", t.theta, t.speed, sp.c_star, 100.0 * (t.speed / sp.c_star - 1.0));
            }
        }
        Scenario::Spread => {
            let orbit = steady_periodic(&run.kernel, &run.fs, &run.cfg.steady_options())?;
            let cp = spreading_speed(&run.solver(Direction::Plus), &run.cfg.speed_options())?.c_star;
            let cm = spreading_speed(&run.solver(Direction::Minus), &run.cfg.speed_options())?.c_star;
            let rep = verify_spreading(&run.kernel, &run.fs, &orbit, cp, cm, &run.cfg.spread_options())?;
            run.write_json("simulate_spread.json", serde_json::to_value(&rep).map_err(|e| CliError::Numerical(e.to_string()))?)?;
            println!("spreading checks {}", if rep.passed { "passed" } else { "failed" });
        }
        Scenario::Compare => {
            let rep = comparison_trials(&run.kernel, &run.fs, &run.cfg.comparison_options())?;
            run.write_json("simulate_compare.json", serde_json::to_value(rep).map_err(|e| CliError::Numerical(e.to_string()))?)?;
            println!("comparison: {} violations, max (u - v) = {:.2e}", rep.violations, rep.worst_violation);
        }
    }
    run.finish(started)
}

fn cmd_wave(common: &Common, xi: Direction, multiple: Option<f64>) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("wave", common)?;
    let opts = run.cfg.wave_options();
    let m = multiple.unwrap_or(run.cfg.wave.speed_multiple);
    let wb = build_bounds(&run.kernel, &run.fs, xi, WaveSpeed::Multiple(m), &opts)?;
    let residuals: Vec<_> = Candidate::ALL.iter().map(|&c| residual_check(&wb, c)).collect();
    let floor = verify_floor_conditions(&wb);
    let wp = wave_iterate(&wb, &opts)?;
    let rep = wave_checks(&wp, &wb, &run.cfg.wave_check_options());
    let tag = xi_tag(xi);
    run.write_json(
        &format!("wave_{tag}.json"),
        json!({
            "xi": xi.sign(), "speed_multiple": m, "c": wb.c, "c_star": wb.c_star, "mu": wb.mu, "mu1": wb.mu1,
            "mu_star": wb.mu_star, "d": wb.d, "b": wb.b, "M": wb.m, "l_eta": wb.l_eta,
            "periods": wp.periods, "residual_signs": residuals, "floor_conditions": floor, "report": rep,
            "history": wp.history,
        }),
    )?;
    let path = run.path(&format!("wave_{tag}.csv"));
    wp.write_csv(&path, (wp.cell.n_t / 4).max(1))?;
    println!(
        "wave c = {:.6} ({}c*): gap {:.2e}, residual {:.2e}, decay ratio [{:.5}, {:.5}] — {}",
        wb.c,
        m,
        rep.gap,
        rep.residual,
        rep.decay_ratio.0,
        rep.decay_ratio.1,
        if rep.passed { "checks passed" } else { "checks FAILED" }
    );
    run.finish(started)
}

fn cmd_verify(common: &Common) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("verify", common)?;
    let mut results = Vec::new();
    let mut failed = Vec::new();
    let mut record = |name: &str, passed: bool, detail: Value| {
        if !passed {
            failed.push(name.to_string());
        }
        println!("{name:<12} {}", if passed { "PASS" } else { "FAIL" });
        results.push(json!({ "check": name, "passed": passed, "detail": detail }));
    };

    let cmp = comparison_trials(&run.kernel, &run.fs, &run.cfg.comparison_options())?;
    record("comparison", cmp.passed, serde_json::to_value(cmp).unwrap_or(Value::Null));

    let mut conv_ok = true;
    let mut conv = Vec::new();
    for xi in [Direction::Plus, Direction::Minus] {
        let solver = run.solver(xi);
        let sp = spreading_speed(&solver, &run.cfg.speed_options())?;
        let ms = sp.mu_star;
        let triples: Vec<(f64, f64, f64)> = (0..10)
            .map(|i| {
                let s = i as f64 / 10.0;
                (0.1 * ms + 1.5 * ms * s, 2.0 * ms * (1.0 - s) + 0.05 * ms, 0.2 + 0.6 * s)
            })
            .collect();
        let mus: Vec<f64> = (1..=5).map(|i| ms * i as f64 / 6.0).collect();
        let rep = derivative_diagnostics(&solver, &sp, &mus, &triples)?;
        conv_ok &= rep.convexity_violations == 0 && rep.margin_violations == 0 && rep.optimality_defect < 1e-4;
        conv.push(json!({ "xi": xi.sign(), "c_star": sp.c_star, "mu_star": ms,
            "convexity_violations": rep.convexity_violations, "margin_violations": rep.margin_violations,
            "optimality_defect": rep.optimality_defect }));
    }
    record("convexity", conv_ok, Value::Array(conv));

    let delta = 0.25;
    let mut opts = run.cfg.eigen_options();
    opts.tol = opts.tol.min(1e-13);
    opts.gap = false;
    let td = TiltedDirection::new(Direction::Plus, 1.0);
    let l0 = principal_eigen(&run.kernel, td, &run.fs.a0, &opts)?.lambda0;
    let l1 = principal_eigen(&run.kernel, td, &run.fs.a0.shifted(delta), &opts)?.lambda0;
    let shift_err = (l1 - l0 - delta).abs();
    record("shift", shift_err < 1e-9, json!({ "delta": delta, "error": shift_err }));

    let mut sign_ok = true;
    let mut signs = Vec::new();
    for xi in [Direction::Plus, Direction::Minus] {
        let wb = build_bounds(&run.kernel, &run.fs, xi, WaveSpeed::Multiple(run.cfg.wave.speed_multiple), &run.cfg.wave_options())?;
        for c in Candidate::ALL {
            let r = residual_check(&wb, c);
            sign_ok &= match c {
                Candidate::UpperExp | Candidate::UpperMin => r.worst >= -1e-9,
                Candidate::LowerExp | Candidate::LowerFloor => r.worst <= 1e-8,
            };
            signs.push(serde_json::to_value(r).unwrap_or(Value::Null));
        }
        let floor = verify_floor_conditions(&wb);
        sign_ok &= floor.holds;
        signs.push(serde_json::to_value(floor).unwrap_or(Value::Null));
    }
    record("residuals", sign_ok, Value::Array(signs));

    let passed = failed.is_empty();
    run.write_json("verify.json", json!({ "passed": passed, "checks": results }))?;
    run.finish(started)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("property checks failed: {}", failed.join(", "))))
    }
}

fn cmd_sweep(common: &Common, param: SweepParam, from: f64, to: f64, count: usize, xi: Direction) -> CliResult<()> {
    let started = Instant::now();
    let mut run = Run::open("sweep", common)?;
    if count < 2 || !(to > from) {
        return Err(CliError::Validation("sweep needs count ≥ 2 and to > from".into()));
    }
    let grid: Vec<f64> = (0..count).map(|i| from + (to - from) * i as f64 / (count - 1) as f64).collect();
    match param {
        SweepParam::Mu => {
            let solver = run.solver(xi);
            let lambdas = solver.lambda_many(&grid)?;
            let path = run.path(&format!("sweep_mu_{}.csv", xi_tag(xi)));
            write_rows(&path, &["mu", "lambda", "quotient"], grid.iter().zip(&lambdas).map(|(&m, &l)| vec![m, l, l / m]))?;
            run.write_json("sweep.json", json!({ "param": "mu", "xi": xi.sign(), "points": count }))?;
        }
        SweepParam::Amplitude => {
            let cell = run.cfg.periodic_cell()?;
            let mut rows = Vec::new();
            for &s in &grid {
                let table = FourierTable {
                    constant: run.cfg.a0.constant,
                    modes: run.cfg.a0.modes.iter().map(|m| nlkpp::FourierMode { amp: m.amp * s, ..*m }).collect(),
                };
                let fs = FitnessSpec::from_tables(&table, &run.cfg.b, &cell)?;
                let mut row = vec![s];
                for d in [Direction::Plus, Direction::Minus] {
                    let solver = LambdaSolver::new(&run.kernel, &fs.a0, d, run.cfg.eigen_options());
                    row.push(spreading_speed(&solver, &run.cfg.speed_options())?.c_star);
                }
                rows.push(row);
            }
            let path = run.path("sweep_amplitude.csv");
            write_rows(&path, &["scale", "c_star_plus", "c_star_minus"], rows)?;
            run.write_json("sweep.json", json!({ "param": "amplitude", "points": count }))?;
        }
    }
    println!("sweep over {count} points written to {}", run.out.display());
    run.finish(started)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Eigen { common, mu, xi, dump_phi } => cmd_eigen(&common, mu, xi.into(), dump_phi),
        Command::Speed { common, xi } => cmd_speed(&common, xi.into()),
        Command::Steady { common } => cmd_steady(&common),
        Command::Simulate { common, scenario, xi } => cmd_simulate(&common, scenario, xi.into()),
        Command::Wave { common, xi, speed_multiple } => cmd_wave(&common, xi.into(), speed_multiple),
        Command::Verify { common } => cmd_verify(&common),
        Command::Sweep { common, param, from, to, count, xi } => cmd_sweep(&common, param, from, to, count, xi.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
