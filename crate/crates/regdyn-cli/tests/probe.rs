use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use regdyn::adapt::{integrate_adaptive, AdaptConfig, EpsSelector};
use regdyn::conserve::{ConstrainedFlow, NormSquared};
use regdyn::gauss;
use regdyn::integrate::{RegFlow, RkTableau};
use regdyn::model::{GaussianSumModel, Jacobian, Model};
use regdyn::reglsq::solve_normal_at;
use regdyn::schrodinger::fourier::FourierGrid;
use regdyn::schrodinger::{
    build_double_well, plain_flow, potential_sandwich, qdot_selfadjoint, strang_integrate,
    strang_step, DoubleWellConfig, SchrodingerOp,
};
use regdyn_cli::experiment::{run_dw, run_lv, DwRunConfig, LvRunConfig};

fn slope_lsq(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[test]
fn probe_lv() {
    let cfg = LvRunConfig::default();
    let t0 = std::time::Instant::now();
    let sweep = run_lv(&cfg).unwrap();
    println!(
        "LV: fit {:.3e} -> {:.3e} warned={} total {:.1?}",
        sweep.fit_initial_error,
        sweep.fit_final_error,
        sweep.fit_warned,
        t0.elapsed()
    );
    for r in &sweep.rows {
        println!(
            "  eps={:.0e} n={} h={:.2e} err={:.4e} dint={:.4e} apost={:.3e} emb={:.3e} ok={}",
            r.eps, r.n, r.h, r.err, r.defect_integral, r.apost_sum, r.embedded_sum, r.completed
        );
    }
    for &eps in &cfg.eps_list {
        let errs: Vec<(f64, f64)> = sweep
            .rows
            .iter()
            .filter(|r| r.eps == eps && cfg.n_list.contains(&r.n) && r.completed)
            .map(|r| (r.h, r.err))
            .collect();
        let slopes: Vec<f64> = errs
            .windows(2)
            .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
            .collect();
        println!("  eps={eps:.0e} pair slopes {slopes:?}");
        let dints: Vec<f64> = sweep
            .rows
            .iter()
            .filter(|r| r.eps == eps && cfg.n_list.contains(&r.n) && r.completed)
            .map(|r| r.defect_integral)
            .collect();
        let (dmin, dmax) = (
            dints.iter().cloned().fold(f64::INFINITY, f64::min),
            dints.iter().cloned().fold(0.0, f64::max),
        );
        println!("  eps={eps:.0e} dint variation {:.3}", (dmax - dmin) / dmin);
    }
    let eps_curve: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .filter(|r| r.n == cfg.eps_sweep_n && r.completed)
        .map(|r| (r.eps, r.err))
        .collect();
    println!("  eps sweep slope {:.3}", slope_lsq(&eps_curve));
}

#[test]
fn probe_adapt() {
    let cfg = LvRunConfig::default();
    let (model, fit) = cfg.fit().unwrap();
    println!("ADAPT: fit {:.3e} -> {:.3e}", fit.initial_error, fit.final_error);
    let space = model.space().clone();
    let problem = cfg.problem.clone();
    let flow = RegFlow::new(&model, move |u: &DVector<f64>| problem.rhs(&space, u));
    let tab = RkTableau::rk4_embedded();

    {
        let (gs, _) = flow.assemble(&fit.q, 1e-8).unwrap();
        let d_star = solve_normal_at(&gs, 1e-8).unwrap().defect;
        let d_one = solve_normal_at(&gs, 1.0).unwrap().defect;
        println!("  at fit.q: delta(1e-8)={d_star:.4e} delta(1)={d_one:.4e} target={:.4e}", 17.0 * d_star);
    }

    for selector in [EpsSelector::Newton, EpsSelector::Lm] {
        let acfg = AdaptConfig {
            selector,
            h_bounds: (1e-6, 1e-2),
            max_steps: 2000,
            ..AdaptConfig::default()
        };
        let t0 = std::time::Instant::now();
        let tr = integrate_adaptive(&flow, &tab, &fit.q, 0.0, 0.05, &acfg);
        println!(
            "  {selector:?}: steps={} completed={} failure={:?} t_reached={:.4} in {:.1?}",
            tr.records.len(),
            tr.completed,
            tr.failure,
            tr.times.last().unwrap(),
            t0.elapsed()
        );
        match selector {
            EpsSelector::Newton => {
                let mut hits = 0;
                let mut total = 0;
                let mut skipped = 0;
                let mut worst: f64 = 0.0;
                for rec in tr.records.iter().skip(1) {
                    if rec.eps_clamped {
                        skipped += 1;
                        continue;
                    }
                    let d0 = rec.stage_defects[0];
                    let t2 = rec.defect_target * rec.defect_target;
                    total += 1;
                    let rel = ((d0 * d0 - t2) / t2).abs();
                    worst = worst.max(rel);
                    if rel <= 0.2 {
                        hits += 1;
                    }
                }
                println!("  newton hit {hits}/{total} (skipped {skipped} clamped)");
                println!("  newton worst rel {worst:.3e}");
                let eps_vals: Vec<f64> = tr.records.iter().map(|r| r.eps).collect();
                let (emin, emax) = (
                    eps_vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    eps_vals.iter().cloned().fold(0.0, f64::max),
                );
                println!("  eps range [{emin:.3e}, {emax:.3e}]");
            }
            EpsSelector::Lm => {
                let mut ok = 0;
                let mut total = 0;
                let mut skipped = 0;
                for (i, rec) in tr.records.iter().enumerate() {
                    if rec.eps_clamped {
                        skipped += 1;
                        continue;
                    }
                    let (gs, _) = flow.assemble(&tr.params[i], acfg.eps_star).unwrap();
                    let at = solve_normal_at(&gs, rec.eps).unwrap();
                    let above = solve_normal_at(&gs, acfg.lm_factor * rec.eps).unwrap();
                    total += 1;
                    if at.defect <= rec.defect_target && above.defect > rec.defect_target {
                        ok += 1;
                    } else {
                        println!(
                            "    bracket miss at {i}: d(eps)={:.6e} d(3eps)={:.6e} target={:.6e}",
                            at.defect, above.defect, rec.defect_target
                        );
                    }
                }
                println!("  lm bracket {ok}/{total} (skipped {skipped} clamped)");
            }
        }
    }
}

#[test]
fn probe_dw() {
    let cfg = DwRunConfig::desk();
    let t0 = std::time::Instant::now();
    let sweep = run_dw(&cfg).unwrap();
    println!("DW: fit residual {:.3e} total {:.1?}", sweep.fit_residual, t0.elapsed());
    for r in &sweep.rows {
        println!(
            "  eps={:.0e} h={:.2e} mass={:.3e} energy={:.3e} final={:.3e} bound={:.3e} audit={:?} ok={} flag={}",
            r.eps, r.h, r.mass_err, r.energy_err, r.final_err, r.bound, r.audit_ok, r.completed, r.flagged
        );
    }
    for &eps in &cfg.eps_list {
        let pts: Vec<(f64, f64)> = sweep
            .rows
            .iter()
            .filter(|r| r.eps == eps && r.completed && r.energy_err.is_finite())
            .map(|r| (r.h, r.energy_err))
            .collect();
        if pts.len() >= 2 {
            println!("  eps={eps:.0e} energy slope {:.3}", slope_lsq(&pts));
        }
    }
    // Mass ordering at the finest h.
    let h_min = cfg.h_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let masses: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .filter(|r| r.h == h_min)
        .map(|r| (r.eps, r.mass_err))
        .collect();
    println!("  mass at h={h_min:.2e}: {masses:?}");
}

#[test]
fn probe_strang_local() {
    for (nx, nxi, eps) in [(4usize, 2usize, 1e-3f64), (4, 2, 1e-4), (4, 2, 1e-6)] {
        let cfg = DoubleWellConfig { nx, nxi, ..DoubleWellConfig::desk() };
        let dw = build_double_well(&cfg).unwrap();
        let grid = FourierGrid::new(-12.0, 12.0, 2048);
        let psi0 = grid.sample_state(&dw.model.eval(&dw.q0).unwrap());
        let tab = RkTableau::rk4_classic();
        let mut pts = Vec::new();
        for &h in &[0.4, 0.2, 0.1, 0.05, 0.025] {
            let (q1, rec) = match strang_step(&dw.model, &dw.q0, &dw.op, eps, h, &tab) {
                Ok(v) => v,
                Err(e) => {
                    println!("  M={} eps={eps:.0e} h={h}: FAILED {e}", nx * nxi);
                    continue;
                }
            };
            let psi_ref = grid.propagate(&psi0, &dw.op, h, 1e-4);
            let err = grid.error(&grid.sample_state(&dw.model.eval(&q1).unwrap()), &psi_ref);
            println!(
                "  M={} eps={eps:.0e} h={h}: err={err:.4e} defect={:.3e} refit={:.3e}",
                nx * nxi,
                rec.defect_max,
                rec.refit_residual
            );
            pts.push((h, err));
        }
        let slopes: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
            .collect();
        println!("  M={} eps={eps:.0e} slopes {slopes:?} lsq {:.3}", nx * nxi, slope_lsq(&pts));
    }
}

#[test]
fn probe_constrained() {
    let cfg = DoubleWellConfig::desk();
    let dw = build_double_well(&cfg).unwrap();
    let mut q0 = dw.q0.clone();
    let mass0 = gauss::norm_sq(&dw.model.eval(&q0).unwrap());
    let scale = C64::new(1.0 / mass0.sqrt(), 0.0);
    for m in 0..dw.model.n_gauss() {
        q0[2 * m] *= scale;
    }
    println!(
        "CONSTRAINED: mass0 {:.3e} -> {:.3e}",
        mass0,
        gauss::norm_sq(&dw.model.eval(&q0).unwrap())
    );

    let op = dw.op.clone();
    let flow = RegFlow::new(&dw.model, move |u| op.rhs(u));
    let eps = 1e-3;
    let mut pts = Vec::new();
    for &h in &[0.04, 0.02, 0.01, 0.005] {
        let cflow = ConstrainedFlow::new(&flow, vec![Box::new(NormSquared)]);
        let tr = cflow.integrate(&q0, 0.0, 0.5, h, eps);
        let mut worst = 0.0f64;
        for q in &tr.params {
            let m = gauss::norm_sq(&dw.model.eval(q).unwrap());
            worst = worst.max((m - 1.0).abs());
        }
        let lam = tr
            .records
            .iter()
            .map(|r| r.multipliers.iter().cloned().fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let iters = tr.records.iter().map(|r| r.newton_iters).max().unwrap_or(0);
        println!(
            "  h={h}: completed={} |mass-1|max={worst:.3e} lam_max={lam:.3e} iters={iters}",
            tr.completed
        );
        pts.push((h, lam));
    }
    let slopes: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect();
    println!("  multiplier slopes {slopes:?} lsq {:.3}", slope_lsq(&pts));
}

#[test]
fn probe_free() {
    let model = GaussianSumModel::new(1);
    let q0 = DVector::from_vec(vec![C64::new(0.8, 0.1), C64::new(1.0, -0.5)]);
    let op = SchrodingerOp::new(0.5, vec![]);
    for &h in &[0.1, 0.05, 0.025] {
        let tr = strang_integrate(&model, &q0, &op, 1e-8, h, 1.0, &RkTableau::rk4_classic(), false);
        let refit_sum: f64 = tr.records.iter().map(|r| r.refit_residual).sum();
        let exact = gauss::free_evolve(&model.eval(&q0).unwrap(), 1.0, 0.5).unwrap();
        let realized = model.eval(tr.final_params()).unwrap();
        let mut diff = realized.clone();
        diff.add_scaled(C64::new(-1.0, 0.0), &exact);
        let err = gauss::norm(&diff);
        println!(
            "FREE h={h}: completed={} err={err:.6e} refit_sum={refit_sum:.6e} ratio={:.3}",
            tr.completed,
            err / refit_sum
        );
    }
}

#[test]
fn probe_conservation() {
    let op = SchrodingerOp::double_well();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_plain = 0.0f64;
    let mut worst_sand = 0.0f64;
    let mut worst_full = 0.0f64;
    for _ in 0..20 {
        let m = 4;
        let model = GaussianSumModel::new(m);
        let mut q = DVector::zeros(2 * m);
        for i in 0..m {
            q[2 * i] = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 2.0;
            q[2 * i + 1] = C64::new(
                4.0 * (rng.gen::<f64>() - 0.5),
                4.0 * (rng.gen::<f64>() - 0.5),
            );
        }
        let eps = 1e-3;
        let u = model.eval(&q).unwrap();
        let jac = model.jacobian(&q).unwrap();
        let hu = op.apply(&u);

        let opc = op.clone();
        let flow = plain_flow(&model, opc);
        let v = flow.velocity(&q, eps).unwrap();
        let udot = jac.apply(&v.qdot);
        let edot = 2.0 * gauss::inner(&udot, &hu).re;
        let scale = 2.0 * gauss::norm(&udot) * gauss::norm(&hu);
        worst_plain = worst_plain.max((edot / scale).abs());

        let (y2, _) = potential_sandwich(&model, &q, &op, eps).unwrap();
        let udot_pot = jac.apply(&y2.map(|z| C64::new(0.0, -1.0) * z));
        let mdot = 2.0 * gauss::inner(&udot_pot, &u).re;
        let mscale = 2.0 * gauss::norm(&udot_pot) * gauss::norm(&u);
        worst_sand = worst_sand.max((mdot / mscale).abs());

        let sv = qdot_selfadjoint(&model, &q, &op, eps).unwrap();
        let udot_full = jac.apply(&sv.qdot);
        let mdot_full = 2.0 * gauss::inner(&udot_full, &u).re;
        let fscale = 2.0 * gauss::norm(&udot_full) * gauss::norm(&u);
        worst_full = worst_full.max((mdot_full / fscale).abs());
    }
    println!("CONSV: plain_edot={worst_plain:.3e} sandwich_mdot={worst_sand:.3e} full_mdot={worst_full:.3e}");
}
