//! Scenario-driven command-line front end: validate probing frequencies, run
//! open-loop estimation or closed-loop simulations, and export plot-ready
//! CSV/JSON artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sones::dynamics::{
    integrate, is_hurwitz, jacobian_at, state_dim, theorem_bias, AveragedSones, Grad2Loop,
    SonesLoop, SonesState,
};
use sones::export::{
    grad2_trajectory_csv, level_set_grid, summarize, to_json_pretty, HurwitzReport, RunSummary,
    trajectory_csv,
};
use sones::probing::{parse_rational, validate_frequencies};
use sones::scenario::{parse_scenario, LoopKind, Scenario};
use sones::{search_frequencies, QuadratureSpec, Rational, SonesError, ValidationLevel};

#[derive(Parser)]
#[command(name = "sones", version, about = "Second-order Newton extremum seeking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    /// Conditions needed by Hessian estimation only.
    Hessian,
    /// The complete condition set, including third-derivative demodulation.
    Full,
}

impl From<LevelArg> for ValidationLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Hessian => ValidationLevel::HessianOnly,
            LevelArg::Full => ValidationLevel::Full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation described by a scenario file.
    Run(RunArgs),
    /// Open-loop derivative estimation at the scenario's initial point,
    /// printed side by side with the exact derivatives.
    Estimate { scenario: PathBuf },
    /// Check a probing frequency tuple against the orthogonality conditions.
    CheckFrequencies {
        /// Comma-separated frequencies; each an integer or "num/den".
        #[arg(long, value_delimiter = ',', required = true)]
        frequencies: Vec<String>,
        #[arg(long, value_enum, default_value_t = LevelArg::Full)]
        level: LevelArg,
    },
    /// Search for the smallest valid integer frequency tuple.
    SearchFrequencies {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        lo: i64,
        #[arg(long, default_value_t = 1000)]
        hi: i64,
        #[arg(long, value_enum, default_value_t = LevelArg::Full)]
        level: LevelArg,
    },
    /// Export a level-set grid of the scenario's map for external plotting.
    Levelset(LevelsetArgs),
    /// Linearize the averaged system at its equilibrium and report the
    /// spectrum.
    Hurwitz { scenario: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Integrate the averaged system instead of the full loop.
    #[arg(long)]
    averaged: bool,
    /// Directory for output files (defaults to the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct LevelsetArgs {
    scenario: PathBuf,
    /// Derivative order: 0 for the map itself, 1 for the axis gradient.
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// 1-based gradient axis; defaults to the scenario's probing axis.
    #[arg(long)]
    axis: Option<usize>,
    /// Bounding box as x0,x1,y0,y1.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [-1.0, 3.0, 0.0, 4.0])]
    bbox: Vec<f64>,
    #[arg(long, default_value_t = 201)]
    nx: usize,
    #[arg(long, default_value_t = 201)]
    ny: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let SonesError::InvalidFrequencies(violations) = &e {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for configuration/validation problems, 3 for numeric failures.
fn exit_code_for(e: &SonesError) -> u8 {
    match e {
        SonesError::Divergence { .. }
        | SonesError::QuadratureNoConvergence { .. }
        | SonesError::NoEquilibrium { .. }
        | SonesError::Singular
        | SonesError::EigenFailure => 3,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> sones::Result<ExitCode> {
    match cmd {
        Command::Run(args) => run_command(args),
        Command::Estimate { scenario } => estimate_command(&scenario),
        Command::CheckFrequencies { frequencies, level } => {
            check_frequencies_command(&frequencies, level.into())
        }
        Command::SearchFrequencies { dim, lo, hi, level } => {
            let freqs = search_frequencies(dim, lo, hi, level.into())?;
            println!("{}", render_frequencies(&freqs));
            Ok(ExitCode::SUCCESS)
        }
        Command::Levelset(args) => levelset_command(args),
        Command::Hurwitz { scenario } => hurwitz_command(&scenario),
    }
}

fn load_scenario(path: &Path) -> sones::Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        SonesError::InvalidArgument(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_scenario(&text)
}

fn output_path(out_dir: &Option<PathBuf>, name: &str) -> PathBuf {
    match out_dir {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn write_file(path: &Path, contents: &str) -> sones::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                SonesError::InvalidArgument(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|e| {
        SonesError::InvalidArgument(format!("cannot write {}: {e}", path.display()))
    })
}

fn run_command(args: RunArgs) -> sones::Result<ExitCode> {
    let scenario = load_scenario(&args.scenario)?;
    if args.averaged {
        run_averaged(&scenario, &args.out_dir)
    } else {
        run_full(&scenario, &args.out_dir)
    }
}

fn run_full(s: &Scenario, out_dir: &Option<PathBuf>) -> sones::Result<ExitCode> {
    let map = s.build_map()?;
    let cfg = s.probing_config()?;
    let gains = s.gain_config()?;
    let sim = &s.simulation;
    let dt = sim.dt.unwrap();
    let stride = sim.output_stride.unwrap();
    let p = s.dim();

    let (traj, csv) = match sim.loop_kind.unwrap() {
        LoopKind::Newton => {
            let mut looper = SonesLoop::new(&map, &cfg, &gains)?;
            let y0 = s.initial_state()?.flatten();
            let traj =
                integrate(|t, y, dy| looper.rhs(t, y, dy), &y0, 0.0, sim.duration, dt, stride)?;
            let csv = trajectory_csv(&traj, &map, &cfg)?;
            (traj, csv)
        }
        LoopKind::Gradient => {
            let mut looper = Grad2Loop::new(&map, &cfg, &gains)?;
            let init = s.initial_state()?;
            let mut y0: Vec<f64> = init.theta_hat.iter().cloned().collect();
            y0.extend(std::iter::repeat(0.0).take(p));
            y0.push(init.eta);
            let traj =
                integrate(|t, y, dy| looper.rhs(t, y, dy), &y0, 0.0, sim.duration, dt, stride)?;
            let csv = grad2_trajectory_csv(&traj, &map, &cfg)?;
            (traj, csv)
        }
    };

    if let Some(name) = &s.outputs.trajectory_csv {
        write_file(&output_path(out_dir, name), &csv)?;
    }

    let summary_json = match sim.loop_kind.unwrap() {
        LoopKind::Newton => {
            let summary = full_summary(s, &map, &traj)?;
            to_json_pretty(&summary)?
        }
        LoopKind::Gradient => {
            let last = traj.last_state();
            to_json_pretty(&json!({
                "final_time": traj.times.last().unwrap(),
                "final_theta_hat": &last[0..p],
                "final_eta": last[2 * p],
            }))?
        }
    };
    if let Some(name) = &s.outputs.summary_json {
        write_file(&output_path(out_dir, name), &summary_json)?;
    }
    println!("{summary_json}");
    Ok(ExitCode::SUCCESS)
}

fn full_summary(
    s: &Scenario,
    map: &sones::PolynomialMap,
    traj: &sones::Trajectory,
) -> sones::Result<RunSummary> {
    let cfg = s.probing_config()?;
    let star = s.map.theta_star.clone();
    let lambda_ref = match &star {
        Some(star) => {
            let bundle = map.derivative_bundle(star)?;
            bundle.third_slice(cfg.axis()).try_inverse()
        }
        None => None,
    };
    summarize(traj, s.dim(), star.as_deref(), lambda_ref.as_ref(), 0.05, 0.02)
}

/// Averaged run: integrates the averaged error system from the scenario's
/// initial condition, exports the trajectory mapped back to loop
/// coordinates, and reports the equilibrium (optionally with its spectrum).
fn run_averaged(s: &Scenario, out_dir: &Option<PathBuf>) -> sones::Result<ExitCode> {
    if s.simulation.loop_kind != Some(LoopKind::Newton) {
        return Err(SonesError::InvalidArgument(
            "--averaged requires the newton loop".into(),
        ));
    }
    let star = s.map.theta_star.clone().ok_or_else(|| {
        SonesError::InvalidArgument("--averaged requires map.theta_star".into())
    })?;
    let map = s.build_map()?;
    let cfg = s.probing_config()?;
    let gains = s.gain_config()?;
    let avg = AveragedSones::new(&map, &star, &cfg, &gains, 64)?;
    let p = s.dim();

    let init = s.initial_state()?;
    let h_star = map.eval(&star)?;
    let err0 = error_coordinates(&init, &star, h_star, &avg);
    let dt = 0.01f64.min(s.simulation.duration / 100.0);
    let traj = integrate(
        |_t, y, dy| avg.rhs(y, dy),
        &err0,
        0.0,
        s.simulation.duration,
        dt,
        ((0.02 / dt).round() as usize).max(1),
    )?;

    // map the error trajectory back to loop coordinates for export
    let loop_traj = sones::Trajectory {
        times: traj.times.clone(),
        states: traj.states.iter().map(|e| loop_coordinates(e, &star, h_star, &avg)).collect(),
    };
    if let Some(name) = &s.outputs.trajectory_csv {
        let csv = trajectory_csv(&loop_traj, &map, &cfg)?;
        write_file(&output_path(out_dir, name), &csv)?;
    }

    let eq = avg.equilibrium(&err0, 0.01, 3000.0)?;
    let (bias_theta, bias_eta) = theorem_bias(&map, &star, &cfg)?;
    let mut report = json!({
        "equilibrium_error_state": eq,
        "equilibrium_theta_tilde": &eq[0..p],
        "equilibrium_eta_tilde": eq[state_dim(p) - 1],
        "predicted_theta_bias": bias_theta.as_slice(),
        "predicted_eta_bias": bias_eta,
        "final_theta_tilde": &traj.last_state()[0..p],
    });
    if s.outputs.hurwitz {
        let jac = jacobian_at(|x| avg.rhs_vec(x), &eq);
        let (h, spec) = is_hurwitz(&jac);
        report["hurwitz"] = serde_json::to_value(HurwitzReport::from_spectrum(h, &spec))
            .map_err(|e| SonesError::InvalidArgument(e.to_string()))?;
    }
    let text = to_json_pretty(&report)?;
    if let Some(name) = &s.outputs.summary_json {
        write_file(&output_path(out_dir, name), &text)?;
    }
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn error_coordinates(init: &SonesState, star: &[f64], h_star: f64, avg: &AveragedSones) -> Vec<f64> {
    let p = star.len();
    let mut e = init.flatten();
    for i in 0..p {
        e[i] -= star[i];
    }
    for i in 0..p {
        for j in 0..p {
            e[2 * p + i * p + j] -= avg.t_m_inv()[(i, j)];
            e[2 * p + p * p + i * p + j] -= avg.t_m()[(i, j)];
        }
    }
    let last = e.len() - 1;
    e[last] -= h_star;
    e
}

fn loop_coordinates(err: &[f64], star: &[f64], h_star: f64, avg: &AveragedSones) -> Vec<f64> {
    let p = star.len();
    let mut s = err.to_vec();
    for i in 0..p {
        s[i] += star[i];
    }
    for i in 0..p {
        for j in 0..p {
            s[2 * p + i * p + j] += avg.t_m_inv()[(i, j)];
            s[2 * p + p * p + i * p + j] += avg.t_m()[(i, j)];
        }
    }
    let last = s.len() - 1;
    s[last] += h_star;
    s
}

fn estimate_command(path: &Path) -> sones::Result<ExitCode> {
    let s = load_scenario(path)?;
    let map = s.build_map()?;
    let cfg = s.probing_config()?;
    let spec = QuadratureSpec::default_for(&cfg);
    let theta_hat = s.initial.theta_hat.clone().unwrap();
    let est_col = sones::estimate_hessian_column(&map, &theta_hat, &cfg, &spec)?;
    let est_slice = sones::estimate_third_slice(&map, &theta_hat, &cfg, &spec)?;
    let bundle = map.derivative_bundle(&theta_hat)?;
    let exact_col = bundle.hessian_column(cfg.axis());
    let exact_slice = bundle.third_slice(cfg.axis());
    let report = json!({
        "theta_hat": theta_hat,
        "axis": cfg.axis() + 1,
        "estimated": {
            "hessian_column": est_col.as_slice(),
            "third_slice": matrix_rows(&est_slice),
        },
        "exact": {
            "hessian_column": exact_col.as_slice(),
            "third_slice": matrix_rows(&exact_slice),
        },
    });
    println!("{}", to_json_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn check_frequencies_command(raw: &[String], level: ValidationLevel) -> sones::Result<ExitCode> {
    let freqs: Vec<Rational> =
        raw.iter().map(|s| parse_rational(s)).collect::<sones::Result<_>>()?;
    let violations = validate_frequencies(&freqs, level);
    if violations.is_empty() {
        println!("ok: {} frequencies pass {:?} validation", freqs.len(), level);
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            println!("{v}");
        }
        Ok(ExitCode::from(2))
    }
}

fn render_frequencies(freqs: &[Rational]) -> String {
    freqs
        .iter()
        .map(|f| {
            if *f.denom() == 1 {
                f.numer().to_string()
            } else {
                format!("{}/{}", f.numer(), f.denom())
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn levelset_command(args: LevelsetArgs) -> sones::Result<ExitCode> {
    let s = load_scenario(&args.scenario)?;
    let map = s.build_map()?;
    let cfg = s.probing_config()?;
    let axis = match args.axis {
        Some(a) if a >= 1 && a <= map.dim() => a - 1,
        Some(a) => {
            return Err(SonesError::InvalidArgument(format!("axis {a} out of range")));
        }
        None => cfg.axis(),
    };
    let bbox = [args.bbox[0], args.bbox[1], args.bbox[2], args.bbox[3]];
    let csv = level_set_grid(&map, args.order, axis, bbox, args.nx, args.ny)?;
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn hurwitz_command(path: &Path) -> sones::Result<ExitCode> {
    let s = load_scenario(path)?;
    let star = s.map.theta_star.clone().ok_or_else(|| {
        SonesError::InvalidArgument("hurwitz analysis requires map.theta_star".into())
    })?;
    let map = s.build_map()?;
    let cfg = s.probing_config()?;
    let gains = s.gain_config()?;
    let avg = AveragedSones::new(&map, &star, &cfg, &gains, 64)?;
    let init = s.initial_state()?;
    let h_star = map.eval(&star)?;
    let err0 = error_coordinates(&init, &star, h_star, &avg);
    let eq = avg.equilibrium(&err0, 0.01, 3000.0)?;
    let jac = jacobian_at(|x| avg.rhs_vec(x), &eq);
    let (h, spec) = is_hurwitz(&jac);
    let report = HurwitzReport::from_spectrum(h, &spec);
    println!("{}", to_json_pretty(&report)?);
    if report.hurwitz {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}
