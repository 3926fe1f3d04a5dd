//! One function per subcommand. Each writes its CSV reports into the output
//! directory, renders plots from those files, and returns whether every
//! enabled check passed.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use gcstein::bar::{
    compensated_library, extraction_check, full_library, CompensatedBarProbes, ExtractionProbes,
    FullBarProbes, Smooth1D,
};
use gcstein::bounds::{
    diffusion_params_1d, gg1_error_bounds, BoundMode, BoundReport, TandemRbmParams,
};
use gcstein::identities::{
    check_gg1, check_jsq, conditional_residual_estimate, Gg1Probes, JsqProbes,
};
use gcstein::palm::simulate_replications;
use gcstein::rbm::{dt_halving_check, srbm_averages, srbm_simulate};
use gcstein::report::{
    bound_table, decay_table, estimate_table, extraction_table, identity_table, num, term_table,
    w1_table, Table, W1Row,
};
use gcstein::rng::replication_seed;
use gcstein::sim::stationary_samples;
use gcstein::stein::{
    ode_residual, solve_poisson, stein_factors, stein_grid, write_grid, PiecewiseLinear,
    TestFunction1D,
};
use gcstein::wasserstein::{decay_fit, w1_empirical_vs_exponential, Bootstrap};
use gcstein::{Error, EstimateCI, ModelSpec, PalmAccumulators, ProbeSet, Process, RunConfig};

use crate::config::Config;
use crate::error::CliError;
use crate::plot;
use crate::Command;

const MIN_SWEEP_POINTS: usize = 3;

struct Ctx<'a, W: Write> {
    cfg: &'a Config,
    model: ModelSpec,
    dir: PathBuf,
    out: &'a mut W,
}

impl<W: Write> Ctx<'_, W> {
    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", line.as_ref());
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        table.write_file(&p)?;
        self.say(format!("wrote {}", p.display()));
        Ok(p)
    }

    fn svg(
        &mut self,
        name: &str,
        render: impl FnOnce() -> Result<String, CliError>,
    ) -> Result<(), CliError> {
        if !self.cfg.output.svg {
            return Ok(());
        }
        let p = self.path(name);
        std::fs::write(&p, render()?).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        self.say(format!("wrote {}", p.display()));
        Ok(())
    }

    fn run_config(&self) -> RunConfig {
        let r = &self.cfg.run;
        let mut rc = RunConfig::new(r.events).with_batches(r.batches);
        rc.confidence = r.confidence;
        if let Some(b) = r.burn_in {
            rc = rc.with_burn_in(b);
        }
        rc
    }

    fn simulate(
        &self,
        model: &ModelSpec,
        probes: &ProbeSet,
        stream: u64,
    ) -> Result<PalmAccumulators, CliError> {
        let r = &self.cfg.run;
        let seed = replication_seed(r.seed, stream);
        Ok(simulate_replications(
            model,
            &self.run_config(),
            probes,
            seed,
            r.replications,
            r.jobs.max(1),
        )?)
    }

    fn threshold(&self) -> f64 {
        self.cfg.checks.threshold
    }
}

pub fn execute<W: Write>(command: Command, cfg: &Config, out: &mut W) -> Result<bool, CliError> {
    let model = ModelSpec::new(cfg.model.clone())?;
    let dir = cfg
        .output
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(crate::DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut ctx = Ctx {
        cfg,
        model,
        dir,
        out,
    };
    let pass = match command {
        Command::Simulate => simulate(&mut ctx)?,
        Command::Identities => identities(&mut ctx)?,
        Command::Bar => bar(&mut ctx)?,
        Command::Stein => stein(&mut ctx)?,
        Command::Bound => bound(&mut ctx)?,
        Command::W1 => w1(&mut ctx)?,
        Command::Sweep => sweep(&mut ctx)?,
        Command::Rbm => rbm(&mut ctx)?,
    };
    ctx.say(if pass { "result: pass" } else { "result: FAIL" });
    Ok(pass)
}

fn simulate<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let model = ctx.model.clone();
    let n = model.stations();
    let mut p = ProbeSet::new(&model);
    let scaled = p.time_queues("scaled_total", {
        let m = model.clone();
        move |z| m.scaled_total(&z.queues)
    });
    let ra = p.time("mean_ra", |z| z.r_a);
    let per: Vec<_> = (0..n)
        .map(|i| {
            let k = i + 1;
            (
                p.time_queues(format!("mean_queue_{k}"), move |z| z.queues[i] as f64),
                p.time_queues(format!("p_busy_{k}"), move |z| {
                    f64::from(u8::from(z.queues[i] > 0))
                }),
                p.time(format!("mean_rs_{k}"), move |z| z.r_s[i]),
            )
        })
        .collect();
    let acc = ctx.simulate(&model, &p, 0)?;
    let mut rows = vec![(
        "arrival_rate".to_string(),
        acc.process_rate(Process::Arrival)?,
    )];
    for i in 0..n {
        rows.push((
            format!("departure_rate_{}", i + 1),
            acc.process_rate(Process::Departure(i))?,
        ));
    }
    rows.push(("scaled_total".into(), acc.time_average(scaled)?));
    rows.push(("mean_ra".into(), acc.time_average(ra)?));
    for (i, (q, b, r)) in per.iter().enumerate() {
        let k = i + 1;
        rows.push((format!("mean_queue_{k}"), acc.time_average(*q)?));
        rows.push((format!("p_busy_{k}"), acc.time_average(*b)?));
        rows.push((format!("mean_rs_{k}"), acc.time_average(*r)?));
    }
    ctx.write("simulate.csv", &estimate_table(&rows))?;
    let s = &acc.stats;
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in [
        ("events", s.events),
        ("arrivals", s.arrivals),
        ("ties", s.ties),
        ("regenerations", s.regenerations),
        ("dropped_windows", acc.dropped_windows),
    ] {
        t.push(vec![k.to_string(), v.to_string()]);
    }
    ctx.write("simulate_stats.csv", &t)?;
    Ok(true)
}

fn identities<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let model = ctx.model.clone();
    let moments = ctx.cfg.checks.moments.clone();
    let mut p = ProbeSet::new(&model);
    let report = if model.is_gg1() {
        let probes = Gg1Probes::register(&mut p, &moments)?;
        let acc = ctx.simulate(&model, &p, 0)?;
        let cond = conditional_residual_estimate(&model, &acc, &probes)?;
        let t = cond.time_ratio;
        ctx.say(format!(
            "conditional residual (time ratio): {} +- {}",
            t.point, t.half_width
        ));
        match &cond.idle_periods {
            Ok(e) => ctx.say(format!(
                "conditional residual (idle periods): {} +- {}",
                e.point, e.half_width
            )),
            Err(e) => ctx.say(format!("conditional residual (idle periods): {e}")),
        }
        check_gg1(&model, &acc, &probes, ctx.threshold())?
    } else if model.is_jsq() {
        let probes = JsqProbes::register(&mut p, &moments)?;
        let acc = ctx.simulate(&model, &p, 0)?;
        check_jsq(&model, &acc, &probes, ctx.threshold())?
    } else {
        return Err(Error::WrongModel {
            expected: "gg1 or jsq",
            got: model.kind_name(),
        }
        .into());
    };
    let passed = report.rows.iter().filter(|r| r.pass).count();
    ctx.say(format!("identities: {passed}/{} pass", report.rows.len()));
    if let Some(note) = &report.note {
        ctx.say(format!("note: {note}"));
    }
    let csv = ctx.write("identities.csv", &identity_table(&report))?;
    ctx.svg("identities.svg", || plot::identities_svg(&csv))?;
    Ok(report.all_pass())
}

fn named_function(name: &str, model: &ModelSpec) -> Result<Arc<dyn TestFunction1D>, CliError> {
    Ok(match name {
        "x_sq" => Arc::new(Smooth1D::Quadratic),
        "tanh" => Arc::new(Smooth1D::Tanh),
        "log_quadratic" => Arc::new(Smooth1D::LogQuadratic),
        "stein_identity" => Arc::new(solve_poisson(
            &PiecewiseLinear::identity(),
            diffusion_params_1d(model)?,
        )),
        "stein_min_2" => Arc::new(solve_poisson(
            &PiecewiseLinear::min_with(2.0)?,
            diffusion_params_1d(model)?,
        )),
        other => {
            return Err(Error::InvalidArgument(format!("unknown test function `{other}`")).into())
        }
    })
}

fn bar<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    use crate::config::BarLibrary;
    let model = ctx.model.clone();
    let lib = ctx.cfg.checks.bar.library;
    let mut p = ProbeSet::new(&model);
    let full = matches!(lib, BarLibrary::Full | BarLibrary::Both)
        .then(|| FullBarProbes::register(&mut p, &full_library(&model)));
    let comp = if matches!(lib, BarLibrary::Compensated | BarLibrary::Both) {
        let extra = if model.is_tandem() {
            None
        } else {
            Some((
                "stein_min_2".to_string(),
                named_function("stein_min_2", &model)?,
            ))
        };
        Some(CompensatedBarProbes::register(
            &mut p,
            &compensated_library(&model, extra),
        ))
    } else {
        None
    };
    let mut extraction = Vec::new();
    if !model.is_tandem() {
        for name in ctx.cfg.checks.bar.extraction.clone() {
            let f = named_function(&name, &model)?;
            extraction.push(ExtractionProbes::register(&mut p, &name, f)?);
        }
    } else if !ctx.cfg.checks.bar.extraction.is_empty() {
        ctx.say("note: expansion checks are not defined for the tandem model; skipped");
    }
    let acc = ctx.simulate(&model, &p, 0)?;
    let k = ctx.threshold();
    let mut pass = true;
    if let Some(full) = full {
        let reports = full.reports(&model, &acc)?;
        let bad: Vec<_> = reports
            .iter()
            .filter(|r| !r.pass(k))
            .map(|r| r.f_id.clone())
            .collect();
        ctx.say(format!(
            "full relation: {}/{} residuals pass {bad:?}",
            reports.len() - bad.len(),
            reports.len()
        ));
        pass &= bad.is_empty();
        let csv = ctx.write("bar_full.csv", &term_table(&reports))?;
        ctx.svg("bar_full.svg", || plot::residuals_svg(&csv))?;
    }
    if let Some(comp) = comp {
        let reports = comp.reports(&model, &acc)?;
        let bad: Vec<_> = reports
            .iter()
            .filter(|r| !r.pass(k))
            .map(|r| r.f_id.clone())
            .collect();
        ctx.say(format!(
            "compensated relation: {}/{} residuals pass {bad:?}",
            reports.len() - bad.len(),
            reports.len()
        ));
        let jump = comp.arrival_jump_mean(&acc)?;
        let jump_ok = jump.within(0.0, k);
        ctx.say(format!(
            "compensated jump at arrivals: {} (se {}), pass {jump_ok}",
            jump.point, jump.se
        ));
        pass &= bad.is_empty() && jump_ok;
        let csv = ctx.write("bar_compensated.csv", &term_table(&reports))?;
        ctx.write(
            "bar_jump.csv",
            &estimate_table(&[("arrival_jump_mean".into(), jump)]),
        )?;
        ctx.svg("bar_compensated.svg", || plot::residuals_svg(&csv))?;
    }
    if !extraction.is_empty() {
        let reports = extraction
            .iter()
            .map(|e| extraction_check(&model, &acc, e, k))
            .collect::<gcstein::Result<Vec<_>>>()?;
        let rows: Vec<_> = reports.iter().flat_map(|r| &r.rows).collect();
        let ok = rows.iter().filter(|r| r.pass).count();
        ctx.say(format!("expansion checks: {ok}/{} pass", rows.len()));
        pass &= ok == rows.len();
        ctx.write("extraction.csv", &extraction_table(&reports))?;
    }
    Ok(pass)
}

fn stein<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let params = diffusion_params_1d(&ctx.model)?;
    let sc = ctx.cfg.checks.stein.clone();
    let mut t = Table::new(&[
        "h_id",
        "eh",
        "sup_f2",
        "bound_f2",
        "sup_f3",
        "bound_f3",
        "ode_residual",
        "f1_at_0",
        "pass",
    ]);
    let mut pass = true;
    for h in &sc.h {
        let pts: Vec<(f64, f64)> = h.points.iter().map(|p| (p[0], p[1])).collect();
        let pl = PiecewiseLinear::through_points(&pts)?;
        let sol = solve_poisson(&pl, params);
        let grid = stein_grid(&sol, sc.grid_points.max(2));
        let f = stein_factors(&sol, &grid);
        let hmax = grid.iter().map(|x| pl.eval(*x).abs()).fold(0.0, f64::max);
        let res = ode_residual(&sol, &grid);
        let f1 = sol.d1(0.0);
        let (b2, b3) = (1.0 / params.theta, 4.0 / params.sigma2);
        let ok = res <= 1e-9 * (hmax / params.theta).max(1.0)
            && f1.abs() <= 1e-12
            && f.sup_f2 <= b2 * (1.0 + 1e-9)
            && f.sup_f3 <= b3 * (1.0 + 1e-9);
        pass &= ok;
        let mut row = vec![h.id.clone()];
        row.extend([sol.eh, f.sup_f2, b2, f.sup_f3, b3, res, f1].map(num));
        row.push(ok.to_string());
        t.push(row);
        if sc.dump_grid {
            let p = ctx.path(&format!("stein_grid_{}.csv", h.id));
            let file = std::fs::File::create(&p)
                .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            write_grid(&sol, &grid, std::io::BufWriter::new(file))?;
            ctx.say(format!("wrote {}", p.display()));
        }
    }
    ctx.say(format!(
        "stein: theta {}, sigma2 {}, beta {}",
        params.theta, params.sigma2, params.beta
    ));
    ctx.write("stein_factors.csv", &t)?;
    Ok(pass)
}

fn bound_report(
    ctx: &mut Ctx<impl Write>,
    model: &ModelSpec,
    stream: u64,
) -> Result<BoundReport, CliError> {
    let bc = ctx.cfg.checks.bound.clone();
    let mode: BoundMode = bc.mode.into();
    let cond = match (mode, bc.conditional_residual) {
        (BoundMode::Simulated, Some(v)) => Some(EstimateCI::exact(v)),
        (BoundMode::Simulated, None) => {
            let mut p = ProbeSet::new(model);
            let probes = Gg1Probes::register(&mut p, &[2])?;
            let acc = ctx.simulate(model, &p, stream)?;
            Some(conditional_residual_estimate(model, &acc, &probes)?.time_ratio)
        }
        _ => None,
    };
    Ok(gg1_error_bounds(model, mode, cond.as_ref())?)
}

fn bound_ok(b: &BoundReport) -> bool {
    let parts = [b.eps0, b.eps_a, b.eps_d];
    parts.iter().all(|v| v.is_finite() && *v >= 0.0)
        && (b.total - parts.iter().sum::<f64>()).abs() <= 1e-12 * b.total
}

fn bound<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let model = ctx.model.clone();
    let b = bound_report(ctx, &model, 0)?;
    ctx.say(format!(
        "bound ({}): eps0 {} epsA {} epsD {} total {}",
        b.mode.name(),
        b.eps0,
        b.eps_a,
        b.eps_d,
        b.total
    ));
    ctx.write(
        "bound.csv",
        &bound_table(&[(model.kind_name().to_string(), b)]),
    )?;
    Ok(bound_ok(&b))
}

fn w1_row(
    ctx: &mut Ctx<impl Write>,
    model: &ModelSpec,
    id: &str,
    stream: u64,
) -> Result<(W1Row, BoundReport), CliError> {
    let w = ctx.cfg.checks.w1.clone();
    let seed = replication_seed(ctx.cfg.run.seed, stream);
    let params = diffusion_params_1d(model)?;
    let states = stationary_samples(model, w.samples, w.spacing, w.burn_in, seed)?;
    let xs: Vec<f64> = states
        .iter()
        .map(|z| model.scaled_total(&z.queues))
        .collect();
    let boot = Bootstrap {
        resamples: w.resamples,
        confidence: w.confidence,
        block: w.block,
        seed,
    };
    let est = w1_empirical_vs_exponential(&xs, params.beta, &boot)?;
    let b = bound_report(ctx, model, stream + 1)?;
    let pass = est.point <= b.total + ctx.threshold() * est.se;
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if est.point < (mean - params.mean()).abs() - 1e-12 {
        return Err(
            Error::InvalidArgument("distance fell below the mean-gap lower bound".into()).into(),
        );
    }
    ctx.say(format!(
        "{id}: w1 {} (se {}) bound {} pass {pass}",
        est.point, est.se, b.total
    ));
    Ok((
        W1Row {
            config_id: id.to_string(),
            delta: model.delta(),
            w1: est,
            bound_total: b.total,
            pass,
        },
        b,
    ))
}

fn w1<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let model = ctx.model.clone();
    let id = format!("{}_rho_{}", model.kind_name(), model.rho());
    let (row, b) = w1_row(ctx, &model, &id, 0)?;
    ctx.write("w1.csv", &w1_table(std::slice::from_ref(&row)))?;
    ctx.write("bound.csv", &bound_table(&[(id, b)]))?;
    Ok(row.pass)
}

fn sweep<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let sc = ctx.cfg.checks.sweep.clone();
    if sc.rhos.len() < MIN_SWEEP_POINTS {
        return Err(Error::InsufficientData(format!(
            "sweep needs at least {MIN_SWEEP_POINTS} load values for the decay fit, got {}",
            sc.rhos.len()
        ))
        .into());
    }
    let base = ctx.model.clone();
    base.require("gg1")?;
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    for (k, rho) in sc.rhos.iter().enumerate() {
        let model = base.with_load(*rho)?;
        let id = format!("rho_{rho}");
        let (row, b) = w1_row(ctx, &model, &id, 2 * k as u64)?;
        bounds.push((id, b));
        rows.push(row);
    }
    let fit = decay_fit(
        &rows
            .iter()
            .map(|r| (r.delta, r.w1.point))
            .collect::<Vec<_>>(),
    )?;
    let slope_ok = (sc.slope_min..=sc.slope_max).contains(&fit.slope);
    ctx.say(format!(
        "decay slope {} (se {}) in [{}, {}]: {slope_ok}",
        fit.slope, fit.slope_se, sc.slope_min, sc.slope_max
    ));
    let csv = ctx.write("sweep.csv", &w1_table(&rows))?;
    ctx.write("sweep_bound.csv", &bound_table(&bounds))?;
    ctx.write("decay.csv", &decay_table(&[("w1".into(), fit, slope_ok)]))?;
    ctx.svg("sweep.svg", || plot::sweep_svg(&csv))?;
    Ok(slope_ok && rows.iter().all(|r| r.pass))
}

fn rbm<W: Write>(ctx: &mut Ctx<W>) -> Result<bool, CliError> {
    let rc = ctx.cfg.checks.rbm.clone();
    let seed = ctx.cfg.run.seed;
    let params = TandemRbmParams::from_model(&ctx.model, rc.drift_mode)?;
    let path = srbm_simulate(
        &params,
        rc.dt,
        rc.path_horizon,
        [0.0, 0.0],
        replication_seed(seed, 0),
    )?;
    let inv = path.invariants_hold();
    let p = ctx.path("rbm_path.csv");
    let file = std::fs::File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    path.write_csv(std::io::BufWriter::new(file))?;
    ctx.say(format!("wrote {}", p.display()));
    let avg = srbm_averages(
        &params,
        rc.dt,
        rc.burn_in,
        rc.horizon,
        replication_seed(seed, 1),
    )?;
    let half = dt_halving_check(
        &params,
        rc.dt,
        rc.burn_in,
        rc.horizon,
        replication_seed(seed, 2),
    )?;
    let rho1 = ctx.model.loads()[0];
    let rel = (avg.mean[0].point - rho1).abs() / rho1;
    ctx.say(format!(
        "path invariants: {inv}; step-halving pass: {}; exploratory: E Y1 {} vs rho1 {rho1} ({:.1}% off)",
        half.pass,
        avg.mean[0].point,
        100.0 * rel
    ));
    let rows = vec![
        ("mean_y1".to_string(), avg.mean[0]),
        ("mean_y2".to_string(), avg.mean[1]),
        ("mean_y1_half_dt".to_string(), half.fine[0]),
        ("mean_y2_half_dt".to_string(), half.fine[1]),
        ("halving_diff_y1".to_string(), half.diff[0]),
        ("halving_diff_y2".to_string(), half.diff[1]),
        (
            "regulator_rate_1".to_string(),
            EstimateCI::exact(avg.regulator_rate[0]),
        ),
        (
            "regulator_rate_2".to_string(),
            EstimateCI::exact(avg.regulator_rate[1]),
        ),
    ];
    ctx.write("rbm_summary.csv", &estimate_table(&rows))?;
    Ok(inv && avg.invariant_violations == 0 && half.pass)
}
