//! Command-line driver: experiment runs, sweeps, and plot rendering.

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use regdyn_cli::config::{Config, ConfigError};
use regdyn_cli::experiment::{
    self, dw_trajectory_table, DwRunConfig, ExperimentError, LvRunConfig,
};
use regdyn_cli::report::{self, CsvTable, PlotSpec, ReportError, Series};
use regdyn::integrate::{RegFlow, RkTableau};
use regdyn::reglsq::{solve_dense, solve_svd, MetricQ};
use regdyn::schrodinger::{build_double_well, observables, DoubleWellConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "regdyn", about = "Regularized parametric flow experiments")]
struct Cli {
    /// Key-value config file (one `key = value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV and SVG artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for the network initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Full-size presets instead of the desk-scale defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Worker threads; overrides the REGDYN_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fast numerical health checks; exits 3 if any fails.
    Selftest,
    /// Relax the network toward the identity map and report the errors.
    FitIdentity,
    /// Integrate a single trajectory and write its step records.
    Run {
        #[command(subcommand)]
        what: RunWhat,
    },
    /// Run the convergence sweeps and write CSV and SVG artifacts.
    Sweep {
        /// Which sweep: lv, dw, or all.
        #[arg(default_value = "all")]
        target: String,
    },
    /// Render a log-log plot from a CSV written by this tool.
    Plot {
        csv: PathBuf,
        /// Column for the x axis.
        #[arg(long)]
        x: String,
        /// Column for the y axis.
        #[arg(long)]
        y: String,
        /// Optional column whose distinct values split the series.
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        title: Option<String>,
        /// Output path; defaults to `<out>/<csv stem>_<y>.svg`.
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RunWhat {
    /// Lotka-Volterra flow map under the network parametrization.
    Lv,
    /// Double-well propagation under the Gaussian ansatz.
    Dw,
}

enum AppError {
    Config(String),
    Numerical(String),
    Selftest(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<ExperimentError> for AppError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => AppError::Config(c.to_string()),
            other => AppError::Numerical(other.to_string()),
        }
    }
}

impl From<ReportError> for AppError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::MissingColumn(_) | ReportError::Csv { .. } => {
                AppError::Config(e.to_string())
            }
            ReportError::Io { .. } => AppError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Config(format!("io: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(&cli);
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Selftest(msg)) => {
            eprintln!("selftest failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn init_threads(cli: &Cli) {
    let n = cli.threads.or_else(|| {
        let v = std::env::var("REGDYN_THREADS").ok()?;
        match v.parse() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("ignoring REGDYN_THREADS={v}: not a thread count");
                None
            }
        }
    });
    if let Some(n) = n {
        // A second initialization (tests, repeated calls) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cli: &Cli) -> Result<(), AppError> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::empty(),
    };
    match &cli.cmd {
        Cmd::Selftest => selftest(),
        Cmd::FitIdentity => fit_identity(cli, &cfg),
        Cmd::Run { what: RunWhat::Lv } => run_lv_single(cli, &cfg),
        Cmd::Run { what: RunWhat::Dw } => run_dw_single(cli, &cfg),
        Cmd::Sweep { target } => sweep(cli, &cfg, target),
        Cmd::Plot { csv, x, y, group, title, out_file } => {
            plot(cli, csv, x, y, group.as_deref(), title.as_deref(), out_file.as_ref())
        }
    }
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf, AppError> {
    std::fs::create_dir_all(&cli.out)?;
    Ok(cli.out.join(name))
}

fn fit_identity(cli: &Cli, cfg: &Config) -> Result<(), AppError> {
    let lv = LvRunConfig::from_config(cfg, cli.seed)?;
    let (_, fit) = lv.fit()?;
    println!(
        "identity fit: initial error {:.3e}, final error {:.3e}{}",
        fit.initial_error,
        fit.final_error,
        if fit.warned { " (above warn threshold)" } else { "" }
    );
    let mut t = CsvTable::new(&["index", "value"]);
    for (i, v) in fit.q.iter().enumerate() {
        t.push(vec![i.to_string(), report::fmt_real(*v)]);
    }
    let path = out_path(cli, "identity_fit.csv")?;
    t.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_lv_single(cli: &Cli, cfg: &Config) -> Result<(), AppError> {
    let lv = LvRunConfig::from_config(cfg, cli.seed)?;
    let eps = cfg.f64_or("lv.eps", 1e-4)?;
    let n = cfg.usize_or("lv.n", 400)?;
    let (model, fit) = lv.fit()?;
    let single = LvRunConfig {
        eps_list: vec![eps],
        n_list: vec![n],
        eps_sweep: vec![],
        ..lv
    };
    let sweep = experiment::run_lv_with(&single, &model, &fit)?;
    let row = &sweep.rows[0];
    if !row.completed {
        return Err(AppError::Numerical(format!(
            "trajectory did not finish (eps={eps:.1e}, n={n})"
        )));
    }
    println!(
        "lv run: eps={:.1e} n={} err={:.6e} defect_integral={:.6e}",
        eps, n, row.err, row.defect_integral
    );
    let path = out_path(cli, "lv_run.csv")?;
    experiment::lv_table(&sweep).write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_dw_single(cli: &Cli, cfg: &Config) -> Result<(), AppError> {
    let dw = DwRunConfig::from_config(cfg, cli.paper_scale)?;
    let eps = cfg.f64_or("dw.eps", 1e-3)?;
    let h = cfg.f64_or("dw.h", 8e-3)?;
    let well = build_double_well(&dw.well).map_err(ExperimentError::from)?;
    let tr = experiment::dw_integrate(&well.model, &well.q0, &well.op, dw.variant, eps, h, dw.well.t_end);
    let table = dw_trajectory_table(&well.model, &well.op, &tr);
    let path = out_path(cli, "dw_run.csv")?;
    table.write(&path)?;
    if !tr.completed {
        return Err(AppError::Numerical(format!(
            "trajectory stopped early: {} (partial records in {})",
            tr.failure.as_deref().unwrap_or("unknown"),
            path.display()
        )));
    }
    let o0 = observables(&well.model, &well.q0, &well.op).map_err(ExperimentError::from)?;
    let o1 = observables(&well.model, tr.final_params(), &well.op).map_err(ExperimentError::from)?;
    println!(
        "dw run: variant={:?} eps={:.1e} h={:.1e} mass drift {:.3e} energy drift {:.3e} defect_integral {:.3e}",
        dw.variant,
        eps,
        h,
        (o1.mass - o0.mass).abs(),
        (o1.energy - o0.energy).abs(),
        tr.defect_integral
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(cli: &Cli, cfg: &Config, target: &str) -> Result<(), AppError> {
    match target {
        "lv" => sweep_lv(cli, cfg),
        "dw" => sweep_dw(cli, cfg),
        "all" => {
            sweep_lv(cli, cfg)?;
            sweep_dw(cli, cfg)
        }
        other => Err(AppError::Config(format!(
            "unknown sweep target '{other}' (expected lv, dw, or all)"
        ))),
    }
}

fn eps_label(eps: f64) -> String {
    format!("eps={eps:.0e}")
}

fn sweep_lv(cli: &Cli, cfg: &Config) -> Result<(), AppError> {
    let lv = LvRunConfig::from_config(cfg, cli.seed)?;
    let sweep = experiment::run_lv(&lv)?;
    println!(
        "lv fit: initial {:.3e} final {:.3e}{}",
        sweep.fit_initial_error,
        sweep.fit_final_error,
        if sweep.fit_warned { " (warned)" } else { "" }
    );

    let csv = out_path(cli, "lv_sweep.csv")?;
    experiment::lv_table(&sweep).write(&csv)?;
    println!("wrote {} ({} rows)", csv.display(), sweep.rows.len());

    let mut by_eps: Vec<Series> = Vec::new();
    for &eps in &lv.eps_list {
        let points = sweep
            .rows
            .iter()
            .filter(|r| r.eps.to_bits() == eps.to_bits() && lv.n_list.contains(&r.n))
            .map(|r| (r.h, r.err))
            .collect();
        by_eps.push(Series { label: eps_label(eps), points });
    }
    let svg = report::render_loglog(
        &PlotSpec::new("flow-map error vs step size", "h", "error"),
        &by_eps,
    );
    let p = out_path(cli, "lv_err_vs_h.svg")?;
    report::write_svg(&p, &svg)?;
    println!("wrote {}", p.display());

    let eps_curve: Vec<(f64, f64)> = {
        let mut v: Vec<(f64, f64)> = sweep
            .rows
            .iter()
            .filter(|r| r.n == lv.eps_sweep_n && lv.eps_sweep.iter().any(|e| e.to_bits() == r.eps.to_bits()))
            .map(|r| (r.eps, r.err))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let svg = report::render_loglog(
        &PlotSpec {
            guides: vec![1],
            ..PlotSpec::new("flow-map error vs regularization", "eps", "error")
        },
        &[Series { label: format!("n={}", lv.eps_sweep_n), points: eps_curve }],
    );
    let p = out_path(cli, "lv_err_vs_eps.svg")?;
    report::write_svg(&p, &svg)?;
    println!("wrote {}", p.display());

    let flagged = sweep.rows.iter().filter(|r| r.flagged).count();
    if flagged > 0 {
        println!("warning: {flagged} flagged rows");
    }
    Ok(())
}

fn sweep_dw(cli: &Cli, cfg: &Config) -> Result<(), AppError> {
    let dw = DwRunConfig::from_config(cfg, cli.paper_scale)?;
    let sweep = experiment::run_dw(&dw)?;
    println!(
        "dw sweep: variant={:?} initial fit residual {:.3e}",
        dw.variant, sweep.fit_residual
    );

    let csv = out_path(cli, "dw_sweep.csv")?;
    experiment::dw_table(&sweep).write(&csv)?;
    println!("wrote {} ({} rows)", csv.display(), sweep.rows.len());

    for (column, file, title) in [
        ("energy_err", "dw_energy_vs_h.svg", "energy drift vs step size"),
        ("mass_err", "dw_mass_vs_h.svg", "mass drift vs step size"),
        ("final_err", "dw_final_vs_h.svg", "final error vs step size"),
    ] {
        let mut series = Vec::new();
        for &eps in &dw.eps_list {
            let points = sweep
                .rows
                .iter()
                .filter(|r| r.eps.to_bits() == eps.to_bits())
                .map(|r| {
                    let y = match column {
                        "energy_err" => r.energy_err,
                        "mass_err" => r.mass_err,
                        _ => r.final_err,
                    };
                    (r.h, y)
                })
                .collect();
            series.push(Series { label: eps_label(eps), points });
        }
        let svg = report::render_loglog(&PlotSpec::new(title, "h", column), &series);
        let p = out_path(cli, file)?;
        report::write_svg(&p, &svg)?;
        println!("wrote {}", p.display());
    }

    let audited = sweep.rows.iter().filter(|r| r.audit_ok.is_some()).count();
    let ok = sweep.rows.iter().filter(|r| r.audit_ok == Some(true)).count();
    println!("error-bound audit: {ok}/{audited} rows within their a posteriori bound");
    let flagged = sweep.rows.iter().filter(|r| r.flagged).count();
    if flagged > 0 {
        println!("warning: {flagged} flagged rows");
    }
    Ok(())
}

fn plot(
    cli: &Cli,
    csv: &Path,
    x: &str,
    y: &str,
    group: Option<&str>,
    title: Option<&str>,
    out_file: Option<&PathBuf>,
) -> Result<(), AppError> {
    let text = std::fs::read_to_string(csv)?;
    let table = CsvTable::parse(&text)?;
    let spec = PlotSpec::new(title.unwrap_or(y), x, y);
    let svg = report::plot_csv(&table, x, y, group, &spec)?;
    let path = match out_file {
        Some(p) => p.clone(),
        None => {
            let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
            out_path(cli, &format!("{stem}_{y}.svg"))?
        }
    };
    report::write_svg(&path, &svg)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn selftest() -> Result<(), AppError> {
    let pass = |name: &str, ok: bool, detail: String| -> Result<(), AppError> {
        if ok {
            println!("ok   {name}");
            Ok(())
        } else {
            println!("FAIL {name}: {detail}");
            Err(AppError::Selftest(format!("{name}: {detail}")))
        }
    };

    // Closed-form velocity and defect of the scalar quadratic model.
    {
        let m = regdyn::model::ScalarQuadratic::new();
        let flow = RegFlow::new(&m, |u: &DVector<f64>| u.map(|_| 1.0));
        let (q, eps) = (0.8, 0.05);
        let v = flow
            .velocity(&DVector::from_element(1, q), eps)
            .map_err(|e| AppError::Selftest(e.to_string()))?;
        let qdot = q / (q * q + eps * eps);
        let defect = eps / (q * q + eps * eps).sqrt();
        pass(
            "scalar closed forms",
            (v.qdot[0] - qdot).abs() < 1e-12 && (v.defect - defect).abs() < 1e-12,
            format!("qdot {} vs {qdot}, defect {} vs {defect}", v.qdot[0], v.defect),
        )?;
    }

    // Normal equations agree with the SVD route on a random complex system.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(8, 5, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let b = DVector::from_fn(8, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let metric = MetricQ::Identity;
        let x = solve_dense(&a, &b, 1e-3, &metric).map_err(|e| AppError::Selftest(e.to_string()))?;
        let y = solve_svd(&a, &b, 1e-3, &metric).map_err(|e| AppError::Selftest(e.to_string()))?;
        let rel = (&x.qdot - &y.qdot).norm() / y.qdot.norm();
        pass("normal equations vs svd", rel < 1e-10, format!("relative gap {rel:.3e}"))?;
    }

    // Fourth-order self-convergence of the step driver.
    {
        let m = regdyn::model::ScalarQuadratic::new();
        let flow = RegFlow::new(&m, |u: &DVector<f64>| u.map(|_| 1.0));
        let q0 = DVector::from_element(1, 1.0);
        let tab = RkTableau::rk4_classic();
        let reference = flow.integrate(&tab, &q0, 0.0, 1.0, 1.0 / 256.0, 0.2);
        let qr = reference.final_params()[0];
        let e1 = (flow.integrate(&tab, &q0, 0.0, 1.0, 0.125, 0.2).final_params()[0] - qr).abs();
        let e2 = (flow.integrate(&tab, &q0, 0.0, 1.0, 0.0625, 0.2).final_params()[0] - qr).abs();
        let rate = (e1 / e2).log2();
        pass("rk4 order", rate > 3.5, format!("observed rate {rate:.2}"))?;
    }

    // The single-Gaussian well contains its initial state exactly.
    {
        let cfg = DoubleWellConfig { nx: 1, nxi: 1, ..DoubleWellConfig::desk() };
        let dw = build_double_well(&cfg).map_err(|e| AppError::Selftest(e.to_string()))?;
        let o = observables(&dw.model, &dw.q0, &dw.op).map_err(|e| AppError::Selftest(e.to_string()))?;
        pass(
            "single-gaussian fit",
            dw.fit_residual < 1e-10 && (o.mass - 1.0).abs() < 1e-10,
            format!("residual {:.3e}, mass {}", dw.fit_residual, o.mass),
        )?;
    }

    // Report plumbing: CSV precision round trip and a well-formed SVG.
    {
        let mut t = CsvTable::new(&["x"]);
        let v = std::f64::consts::PI;
        t.push(vec![report::fmt_real(v)]);
        let back = CsvTable::parse(&t.to_string())
            .map_err(|e| AppError::Selftest(e.to_string()))?
            .column("x")
            .map_err(|e| AppError::Selftest(e.to_string()))?[0];
        let svg = report::render_loglog(&PlotSpec::new("t", "x", "y"), &[]);
        pass(
            "csv and svg plumbing",
            back == v && svg.starts_with("<svg") && svg.ends_with("</svg>\n"),
            "round trip or svg framing broke".into(),
        )?;
    }

    println!("selftest passed");
    Ok(())
}
