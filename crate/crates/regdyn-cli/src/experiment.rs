//! Sweep drivers for the two benchmark experiments: the Lotka-Volterra
//! flow map under a small network parametrization, and the double-well
//! Schrodinger propagation under a frozen Gaussian ansatz.
//!
//! Sweep points run in parallel but rows are collected in grid order, so
//! the emitted CSV is bitwise deterministic for a given config and seed.

use crate::config::{Config, ConfigError};
use crate::lv::{self, IdentityFit, LvProblem};
use crate::report::{fmt_real, model_hash, CsvTable};
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use regdyn::integrate::{RegFlow, RkTableau, Trajectory};
use regdyn::model::{MlpModel, Model, ModelError};
use regdyn::schrodinger::fourier::FourierGrid;
use regdyn::schrodinger::{
    build_double_well, observables, plain_flow, strang_integrate, DoubleWellConfig,
    SchrodingerOp, SplitStepVariant,
};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model evaluation failed: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Failed(String),
}

/// Everything one Lotka-Volterra sweep needs beyond the problem itself.
#[derive(Debug, Clone)]
pub struct LvRunConfig {
    pub problem: LvProblem,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub relax_eps: f64,
    pub relax_steps: usize,
    pub relax_t: f64,
    pub relax_warn: f64,
    pub t_end: f64,
    pub oracle_steps: usize,
    /// Regularizations for the error-versus-h family.
    pub eps_list: Vec<f64>,
    /// Step counts for the error-versus-h family.
    pub n_list: Vec<usize>,
    /// Regularizations for the error-versus-eps curve at `eps_sweep_n` steps.
    pub eps_sweep: Vec<f64>,
    pub eps_sweep_n: usize,
}

impl Default for LvRunConfig {
    fn default() -> Self {
        LvRunConfig {
            // Four panels (16x16 Gauss nodes) resolve the smooth flow map
            // while keeping the Jacobian assembly cheap enough for sweeps.
            problem: LvProblem { panels: 4, ..LvProblem::default() },
            hidden: vec![4, 4, 4],
            seed: 7,
            relax_eps: 1e-6,
            relax_steps: 2000,
            relax_t: 1.0,
            relax_warn: 1e-2,
            t_end: 1.0,
            oracle_steps: 20_000,
            eps_list: vec![1e-3, 1e-4, 1e-5],
            n_list: vec![50, 100, 200, 400, 800],
            eps_sweep: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6],
            eps_sweep_n: 400,
        }
    }
}

impl LvRunConfig {
    /// Read overrides from `lv.*` keys; `seed` wins over the config file.
    pub fn from_config(cfg: &Config, seed: Option<u64>) -> Result<Self, ConfigError> {
        let d = LvRunConfig::default();
        let problem = LvProblem {
            alpha: cfg.f64_or("lv.alpha", d.problem.alpha)?,
            beta: cfg.f64_or("lv.beta", d.problem.beta)?,
            gamma: cfg.f64_or("lv.gamma", d.problem.gamma)?,
            delta: cfg.f64_or("lv.delta", d.problem.delta)?,
            lo: cfg.f64_or("lv.lo", d.problem.lo)?,
            hi: cfg.f64_or("lv.hi", d.problem.hi)?,
            panels: cfg.usize_or("lv.panels", d.problem.panels)?,
        };
        Ok(LvRunConfig {
            problem,
            hidden: cfg.usize_list_or("lv.hidden", &d.hidden)?,
            seed: match seed {
                Some(s) => s,
                None => cfg.u64_or("lv.seed", d.seed)?,
            },
            relax_eps: cfg.f64_or("lv.relax_eps", d.relax_eps)?,
            relax_steps: cfg.usize_or("lv.relax_steps", d.relax_steps)?,
            relax_t: cfg.f64_or("lv.relax_t", d.relax_t)?,
            relax_warn: cfg.f64_or("lv.relax_warn", d.relax_warn)?,
            t_end: cfg.f64_or("lv.t_end", d.t_end)?,
            oracle_steps: cfg.usize_or("lv.oracle_steps", d.oracle_steps)?,
            eps_list: cfg.f64_list_or("lv.eps_list", &d.eps_list)?,
            n_list: cfg.usize_list_or("lv.n_list", &d.n_list)?,
            eps_sweep: cfg.f64_list_or("lv.eps_sweep", &d.eps_sweep)?,
            eps_sweep_n: cfg.usize_or("lv.eps_sweep_n", d.eps_sweep_n)?,
        })
    }

    /// Build the network and relax it toward the identity map.
    pub fn fit(&self) -> Result<(MlpModel, IdentityFit), ExperimentError> {
        let space = self.problem.space();
        let target = self.problem.identity_values(&space);
        let model = MlpModel::new(space, &self.hidden);
        let q_init = lv::random_init(model.dim(), self.seed);
        let fit = lv::fit_to_target(
            &model,
            &q_init,
            &target,
            self.relax_eps,
            self.relax_steps,
            self.relax_t,
            self.relax_warn,
        )?;
        Ok((model, fit))
    }
}

/// One sweep point of the flow-map experiment.
#[derive(Debug, Clone)]
pub struct LvRow {
    pub eps: f64,
    pub n: usize,
    pub h: f64,
    /// Discrete L2 distance of the final state from the node-wise reference.
    pub err: f64,
    pub defect_max: f64,
    pub defect_integral: f64,
    pub apost_sum: f64,
    pub embedded_sum: f64,
    pub completed: bool,
    pub flagged: bool,
}

pub struct LvSweep {
    pub cfg: LvRunConfig,
    pub fit_initial_error: f64,
    pub fit_final_error: f64,
    pub fit_warned: bool,
    pub model_hash: u64,
    /// State actually reached by the fit; the reference flows from here.
    pub u0: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub rows: Vec<LvRow>,
}

/// Run the flow-map convergence sweeps: the error-versus-h family over
/// `eps_list x n_list` plus the error-versus-eps curve at `eps_sweep_n`.
pub fn run_lv(cfg: &LvRunConfig) -> Result<LvSweep, ExperimentError> {
    let (model, fit) = cfg.fit()?;
    run_lv_with(cfg, &model, &fit)
}

/// Sweep with an already fitted starting point (lets callers reuse one fit).
pub fn run_lv_with(
    cfg: &LvRunConfig,
    model: &MlpModel,
    fit: &IdentityFit,
) -> Result<LvSweep, ExperimentError> {
    let space = model.space();
    let u0 = model.eval(&fit.q)?;
    let u_ref = cfg.problem.oracle(space, &u0, cfg.t_end, cfg.oracle_steps);
    let hash = model_hash(fit.q.iter().copied());

    let mut points: Vec<(f64, usize)> = Vec::new();
    for &eps in &cfg.eps_list {
        for &n in &cfg.n_list {
            points.push((eps, n));
        }
    }
    for &eps in &cfg.eps_sweep {
        let p = (eps, cfg.eps_sweep_n);
        if !points.iter().any(|q| q.0.to_bits() == eps.to_bits() && q.1 == p.1) {
            points.push(p);
        }
    }

    let problem = cfg.problem.clone();
    let tab = RkTableau::rk4_embedded();
    let rows: Vec<LvRow> = points
        .par_iter()
        .map(|&(eps, n)| {
            let flow = RegFlow::new(model, |u: &DVector<f64>| problem.rhs(space, u));
            let h = cfg.t_end / n as f64;
            let tr = flow.integrate(&tab, &fit.q, 0.0, cfg.t_end, h, eps);
            lv_row(model, space, &tr, &u_ref, eps, n, h)
        })
        .collect();

    Ok(LvSweep {
        cfg: cfg.clone(),
        fit_initial_error: fit.initial_error,
        fit_final_error: fit.final_error,
        fit_warned: fit.warned,
        model_hash: hash,
        u0,
        u_ref,
        rows,
    })
}

fn lv_row(
    model: &MlpModel,
    space: &regdyn::model::SampleSpace,
    tr: &Trajectory<f64>,
    u_ref: &DVector<f64>,
    eps: f64,
    n: usize,
    h: f64,
) -> LvRow {
    let err = if tr.completed {
        match model.eval(tr.final_params()) {
            Ok(u) => space.norm(&(u - u_ref)),
            Err(_) => f64::NAN,
        }
    } else {
        f64::NAN
    };
    let (defect_max, apost_sum, embedded_sum) = record_sums(tr);
    LvRow {
        eps,
        n,
        h,
        err,
        defect_max,
        defect_integral: tr.defect_integral,
        apost_sum,
        embedded_sum,
        completed: tr.completed,
        flagged: !tr.completed || !err.is_finite(),
    }
}

fn record_sums(tr: &Trajectory<impl regdyn::Field>) -> (f64, f64, f64) {
    let defect_max = tr.records.iter().map(|r| r.defect_max).fold(0.0, f64::max);
    let apost_sum = tr.records.iter().map(|r| r.aposteriori_local).sum();
    let embedded_sum = tr
        .records
        .iter()
        .filter_map(|r| r.embedded_error)
        .filter(|e| e.is_finite())
        .sum();
    (defect_max, apost_sum, embedded_sum)
}

pub fn lv_table(sweep: &LvSweep) -> CsvTable {
    let mut t = CsvTable::new(&[
        "eps",
        "h",
        "n",
        "err",
        "defect_max",
        "defect_integral",
        "apost_sum",
        "embedded_sum",
        "completed",
        "flagged",
        "seed",
        "model_hash",
    ]);
    for r in &sweep.rows {
        t.push(vec![
            fmt_real(r.eps),
            fmt_real(r.h),
            r.n.to_string(),
            fmt_real(r.err),
            fmt_real(r.defect_max),
            fmt_real(r.defect_integral),
            fmt_real(r.apost_sum),
            fmt_real(r.embedded_sum),
            r.completed.to_string(),
            r.flagged.to_string(),
            sweep.cfg.seed.to_string(),
            format!("{:016x}", sweep.model_hash),
        ]);
    }
    t
}

/// Configuration of one double-well sweep.
#[derive(Debug, Clone)]
pub struct DwRunConfig {
    pub well: DoubleWellConfig,
    pub variant: SplitStepVariant,
    pub eps_list: Vec<f64>,
    pub h_list: Vec<f64>,
    /// Reference propagator grid and step.
    pub ref_lo: f64,
    pub ref_hi: f64,
    pub ref_n: usize,
    pub ref_dt: f64,
    pub seed: u64,
}

impl DwRunConfig {
    pub fn desk() -> Self {
        DwRunConfig {
            well: DoubleWellConfig::desk(),
            variant: SplitStepVariant::Plain,
            eps_list: vec![1e-2, 1e-3, 1e-4, 1e-5],
            h_list: vec![3.2e-2, 1.6e-2, 8e-3, 4e-3],
            ref_lo: -12.0,
            ref_hi: 12.0,
            ref_n: 2048,
            ref_dt: 1e-4,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        DwRunConfig { well: DoubleWellConfig::default(), ..DwRunConfig::desk() }
    }

    pub fn from_config(cfg: &Config, paper_scale: bool) -> Result<Self, ConfigError> {
        let d = if paper_scale { DwRunConfig::paper() } else { DwRunConfig::desk() };
        let well = DoubleWellConfig {
            alpha2: cfg.f64_or("dw.alpha2", d.well.alpha2)?,
            alpha4: cfg.f64_or("dw.alpha4", d.well.alpha4)?,
            q_ell: cfg.f64_or("dw.q_ell", d.well.q_ell)?,
            t_end: cfg.f64_or("dw.t_end", d.well.t_end)?,
            nx: cfg.usize_or("dw.nx", d.well.nx)?,
            nxi: cfg.usize_or("dw.nxi", d.well.nxi)?,
            grid_scale: cfg.f64_or("dw.grid_scale", d.well.grid_scale)?,
            eps_init: cfg.f64_or("dw.eps_init", d.well.eps_init)?,
        };
        let variant = SplitStepVariant::from_str(cfg.str_or("dw.variant", "plain"))
            .map_err(|e| ConfigError::BadValue {
                key: "dw.variant".into(),
                want: "plain|modified1|modified2|selfadjoint|strang".into(),
                got: e,
            })?;
        Ok(DwRunConfig {
            well,
            variant,
            eps_list: cfg.f64_list_or("dw.eps_list", &d.eps_list)?,
            h_list: cfg.f64_list_or("dw.h_list", &d.h_list)?,
            ref_lo: cfg.f64_or("dw.ref_lo", d.ref_lo)?,
            ref_hi: cfg.f64_or("dw.ref_hi", d.ref_hi)?,
            ref_n: cfg.usize_or("dw.ref_n", d.ref_n)?,
            ref_dt: cfg.f64_or("dw.ref_dt", d.ref_dt)?,
            seed: cfg.u64_or("dw.seed", d.seed)?,
        })
    }
}

/// One sweep point of the double-well experiment.
#[derive(Debug, Clone)]
pub struct DwRow {
    pub eps: f64,
    pub h: f64,
    pub n: usize,
    /// Largest drift of the squared norm from its initial value.
    pub mass_err: f64,
    /// Largest drift of the energy from its initial value.
    pub energy_err: f64,
    /// Final-state distance from the grid reference.
    pub final_err: f64,
    pub defect_integral: f64,
    pub apost_sum: f64,
    pub embedded_sum: f64,
    pub refit_sum: f64,
    /// `defect_integral` plus the time-discretization estimate; the
    /// measured final error must stay below this.
    pub bound: f64,
    /// Whether `final_err <= bound`; None when the run has no error
    /// estimate to audit against (no embedded companion) or did not finish.
    pub audit_ok: Option<bool>,
    pub completed: bool,
    pub flagged: bool,
}

pub struct DwSweep {
    pub cfg: DwRunConfig,
    pub fit_residual: f64,
    pub mass0: f64,
    pub energy0: f64,
    pub model_hash: u64,
    pub rows: Vec<DwRow>,
    /// Parameter histories aligned with `rows`.
    pub trajectories: Vec<Trajectory<C64>>,
}

/// Integrate one double-well trajectory under the configured variant.
pub fn dw_integrate(
    model: &regdyn::model::GaussianSumModel,
    q0: &DVector<C64>,
    op: &SchrodingerOp,
    variant: SplitStepVariant,
    eps: f64,
    h: f64,
    t_end: f64,
) -> Trajectory<C64> {
    match variant {
        SplitStepVariant::Plain => {
            let flow = plain_flow(model, op.clone());
            flow.integrate(&RkTableau::rk4_embedded(), q0, 0.0, t_end, h, eps)
        }
        SplitStepVariant::Modified1 | SplitStepVariant::Strang => {
            strang_integrate(model, q0, op, eps, h, t_end, &RkTableau::rk4_classic(), false)
        }
        SplitStepVariant::SelfAdjoint => {
            strang_integrate(model, q0, op, eps, h, t_end, &RkTableau::rk4_classic(), true)
        }
    }
}

pub fn run_dw(cfg: &DwRunConfig) -> Result<DwSweep, ExperimentError> {
    let dw = build_double_well(&cfg.well)?;
    let obs0 = observables(&dw.model, &dw.q0, &dw.op)?;
    let hash = model_hash(dw.q0.iter().flat_map(|z| [z.re, z.im]));

    // One grid reference per sweep: the exact propagation of the fitted
    // initial state, shared by every (eps, h) point.
    let grid = FourierGrid::new(cfg.ref_lo, cfg.ref_hi, cfg.ref_n);
    let psi0 = grid.sample_state(&dw.model.eval(&dw.q0)?);
    let psi_ref = grid.propagate(&psi0, &dw.op, cfg.well.t_end, cfg.ref_dt);

    let mut points: Vec<(f64, f64)> = Vec::new();
    for &eps in &cfg.eps_list {
        for &h in &cfg.h_list {
            points.push((eps, h));
        }
    }

    let results: Vec<(DwRow, Trajectory<C64>)> = points
        .par_iter()
        .map(|&(eps, h)| {
            let tr = dw_integrate(&dw.model, &dw.q0, &dw.op, cfg.variant, eps, h, cfg.well.t_end);
            let row = dw_row(&dw.model, &dw.op, &grid, &psi_ref, &tr, obs0.mass, obs0.energy, eps, h);
            (row, tr)
        })
        .collect();

    let (rows, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(DwSweep {
        cfg: cfg.clone(),
        fit_residual: dw.fit_residual,
        mass0: obs0.mass,
        energy0: obs0.energy,
        model_hash: hash,
        rows,
        trajectories,
    })
}

fn dw_row(
    model: &regdyn::model::GaussianSumModel,
    op: &SchrodingerOp,
    grid: &FourierGrid,
    psi_ref: &[C64],
    tr: &Trajectory<C64>,
    mass0: f64,
    energy0: f64,
    eps: f64,
    h: f64,
) -> DwRow {
    let mut mass_err: f64 = 0.0;
    let mut energy_err: f64 = 0.0;
    for q in tr.params.iter().skip(1) {
        match observables(model, q, op) {
            Ok(o) => {
                mass_err = mass_err.max((o.mass - mass0).abs());
                energy_err = energy_err.max((o.energy - energy0).abs());
            }
            Err(_) => {
                mass_err = f64::NAN;
                energy_err = f64::NAN;
                break;
            }
        }
    }

    let final_err = if tr.completed {
        match model.eval(tr.final_params()) {
            Ok(u) => grid.error(&grid.sample_state(&u), psi_ref),
            Err(_) => f64::NAN,
        }
    } else {
        f64::NAN
    };

    let (_, apost_sum, embedded_sum) = record_sums(tr);
    let refit_sum: f64 = tr.records.iter().map(|r| r.refit_residual).sum();
    let has_estimate = tr.records.iter().all(|r| r.embedded_error.is_some());
    let bound = tr.defect_integral + apost_sum + embedded_sum + refit_sum;
    let audit_ok = if tr.completed && has_estimate && final_err.is_finite() {
        Some(final_err <= bound)
    } else {
        None
    };
    DwRow {
        eps,
        h,
        n: tr.records.len(),
        mass_err,
        energy_err,
        final_err,
        defect_integral: tr.defect_integral,
        apost_sum,
        embedded_sum,
        refit_sum,
        bound,
        audit_ok,
        completed: tr.completed,
        flagged: !tr.completed || !mass_err.is_finite() || !final_err.is_finite(),
    }
}

pub fn dw_table(sweep: &DwSweep) -> CsvTable {
    let mut t = CsvTable::new(&[
        "eps",
        "h",
        "n",
        "mass_err",
        "energy_err",
        "final_err",
        "defect_integral",
        "apost_sum",
        "embedded_sum",
        "refit_sum",
        "bound",
        "audit_ok",
        "completed",
        "flagged",
        "seed",
        "model_hash",
    ]);
    for r in &sweep.rows {
        t.push(vec![
            fmt_real(r.eps),
            fmt_real(r.h),
            r.n.to_string(),
            fmt_real(r.mass_err),
            fmt_real(r.energy_err),
            fmt_real(r.final_err),
            fmt_real(r.defect_integral),
            fmt_real(r.apost_sum),
            fmt_real(r.embedded_sum),
            fmt_real(r.refit_sum),
            fmt_real(r.bound),
            match r.audit_ok {
                Some(b) => b.to_string(),
                None => "na".into(),
            },
            r.completed.to_string(),
            r.flagged.to_string(),
            sweep.cfg.seed.to_string(),
            format!("{:016x}", sweep.model_hash),
        ]);
    }
    t
}

/// Per-step observables of one double-well trajectory.
pub fn dw_trajectory_table(
    model: &regdyn::model::GaussianSumModel,
    op: &SchrodingerOp,
    tr: &Trajectory<C64>,
) -> CsvTable {
    let mut t = CsvTable::new(&["t", "mass", "energy", "defect_max", "eps"]);
    for (i, q) in tr.params.iter().enumerate() {
        let (mass, energy) = match observables(model, q, op) {
            Ok(o) => (o.mass, o.energy),
            Err(_) => (f64::NAN, f64::NAN),
        };
        // Row 0 carries the defect at the initial point (first stage of the
        // first step); later rows carry the maximum over the step just taken.
        let (defect, eps) = if i == 0 {
            match tr.records.first() {
                Some(r) => (r.stage_defects.first().copied().unwrap_or(f64::NAN), r.eps),
                None => (f64::NAN, f64::NAN),
            }
        } else {
            let r = &tr.records[i - 1];
            (r.defect_max, r.eps)
        };
        t.push(vec![
            fmt_real(tr.times[i]),
            fmt_real(mass),
            fmt_real(energy),
            fmt_real(defect),
            fmt_real(eps),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_lv() -> LvRunConfig {
        LvRunConfig {
            problem: LvProblem { panels: 1, ..LvProblem::default() },
            hidden: vec![3],
            relax_eps: 1e-3,
            relax_steps: 100,
            oracle_steps: 400,
            eps_list: vec![1e-3],
            n_list: vec![8, 16],
            eps_sweep: vec![1e-2, 1e-3],
            eps_sweep_n: 16,
            ..LvRunConfig::default()
        }
    }

    #[test]
    fn lv_sweep_rows_follow_grid_order_and_dedupe() {
        let cfg = tiny_lv();
        let sweep = run_lv(&cfg).unwrap();
        // 1 eps x 2 n from the main family, then the eps-sweep minus the
        // (1e-3, 16) duplicate.
        assert_eq!(sweep.rows.len(), 3);
        assert_eq!((sweep.rows[0].eps, sweep.rows[0].n), (1e-3, 8));
        assert_eq!((sweep.rows[1].eps, sweep.rows[1].n), (1e-3, 16));
        assert_eq!((sweep.rows[2].eps, sweep.rows[2].n), (1e-2, 16));
        for r in &sweep.rows {
            assert!(r.completed && !r.flagged);
            assert!(r.err.is_finite() && r.err >= 0.0);
            assert!(r.defect_integral >= 0.0);
        }
        let table = lv_table(&sweep);
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.column("err").unwrap().len(), 3);
    }

    #[test]
    fn lv_sweep_is_deterministic_across_runs() {
        let cfg = tiny_lv();
        let a = lv_table(&run_lv(&cfg).unwrap()).to_string();
        let b = lv_table(&run_lv(&cfg).unwrap()).to_string();
        assert_eq!(a, b);
    }

    #[test]
    fn lv_config_roundtrip_overrides_defaults() {
        let text = "lv.panels = 2\nlv.eps_list = 1e-3, 1e-4\nlv.n_list = 10, 20\nlv.hidden = 5, 5\nlv.seed = 11\n";
        let cfg = Config::parse(text).unwrap();
        let lv = LvRunConfig::from_config(&cfg, None).unwrap();
        assert_eq!(lv.problem.panels, 2);
        assert_eq!(lv.eps_list, vec![1e-3, 1e-4]);
        assert_eq!(lv.n_list, vec![10, 20]);
        assert_eq!(lv.hidden, vec![5, 5]);
        assert_eq!(lv.seed, 11);
        // An explicit seed argument wins over the file.
        let lv = LvRunConfig::from_config(&cfg, Some(3)).unwrap();
        assert_eq!(lv.seed, 3);
    }

    #[test]
    fn dw_desk_sweep_row_has_sane_observable_drifts() {
        let cfg = DwRunConfig {
            well: DoubleWellConfig { t_end: 0.5, ..DoubleWellConfig::desk() },
            eps_list: vec![1e-3],
            h_list: vec![2.5e-2],
            ..DwRunConfig::desk()
        };
        let sweep = run_dw(&cfg).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        let r = &sweep.rows[0];
        assert!(r.completed && !r.flagged);
        assert!((sweep.mass0 - 1.0).abs() < 1e-3);
        assert!(r.mass_err < 1e-4, "mass drift {:e}", r.mass_err);
        assert!(r.energy_err < 1e-5, "energy drift {:e}", r.energy_err);
        assert!(r.final_err.is_finite());
        assert_eq!(r.audit_ok, Some(true), "err {:e} vs bound {:e}", r.final_err, r.bound);

        let traj = dw_trajectory_table(&build_double_well(&cfg.well).unwrap().model, &SchrodingerOp::double_well(), &sweep.trajectories[0]);
        assert_eq!(traj.rows.len(), sweep.trajectories[0].params.len());
        let masses = traj.column("mass").unwrap();
        assert!((masses[0] - sweep.mass0).abs() < 1e-12);
    }

    #[test]
    fn dw_config_parses_variant_and_lists() {
        let text = "dw.variant = selfadjoint\ndw.eps_list = 1e-3\ndw.h_list = 0.02, 0.01\ndw.t_end = 1.0\n";
        let cfg = Config::parse(text).unwrap();
        let dw = DwRunConfig::from_config(&cfg, false).unwrap();
        assert_eq!(dw.variant, SplitStepVariant::SelfAdjoint);
        assert_eq!(dw.h_list, vec![0.02, 0.01]);
        assert_eq!(dw.well.t_end, 1.0);
        assert_eq!(dw.well.nx, 4);

        let bad = Config::parse("dw.variant = nope\n").unwrap();
        assert!(DwRunConfig::from_config(&bad, false).is_err());

        let paper = DwRunConfig::from_config(&Config::empty(), true).unwrap();
        assert_eq!(paper.well.nx, 6);
        assert_eq!(paper.well.t_end, 12.0);
    }
}
