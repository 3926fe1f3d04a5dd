//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::sync::Arc;
use std::time::Instant;

use gcstein::bar::{
    compensated_library, full_library, CompensatedBarProbes, FullBarProbes, TermReport,
};
use gcstein::bounds::{
    diffusion_params, diffusion_params_1d, gg1_error_bounds, ssc_estimate, BoundMode,
    DiffusionParams, DriftMode, SscProbes, TandemRbmParams, TANDEM_REFLECTION,
};
use gcstein::identities::{
    check_gg1, check_jsq, conditional_residual_estimate, Gg1Probes, JsqProbes, DEFAULT_THRESHOLD,
};
use gcstein::palm::{simulate_replications, Slot};
use gcstein::rbm::{dt_halving_check, srbm_averages, srbm_simulate};
use gcstein::report::{bound_table, identity_table, term_table, w1_table, Table, W1Row};
use gcstein::rng::RandomStream;
use gcstein::sim::stationary_samples;
use gcstein::stein::{
    ode_residual, solve_poisson, stein_factors, stein_grid, PiecewiseLinear, TandemGenerator,
    TestFunction1D,
};
use gcstein::wasserstein::{
    decay_fit, w1_empirical_vs_exponential, w1_geometric_vs_exponential, Bootstrap,
};
use gcstein::{ClockSpec, ModelSpec, ProbeSet, Result, RunConfig, WindowKind};

const SEED: u64 = 20_251_016;
const EVENTS: u64 = 10_000_000;
const K: f64 = DEFAULT_THRESHOLD;
const ROUNDOFF: f64 = 1e-9;
const RHOS: [f64; 3] = [0.8, 0.9, 0.95];

type Named = (&'static str, fn(f64) -> f64);

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |p| p.get())
}

/// One long run split over replications that run in parallel.
fn run(
    model: &ModelSpec,
    probes: &ProbeSet,
    events: u64,
    seed: u64,
) -> Result<gcstein::PalmAccumulators> {
    let reps = 4;
    let cfg = RunConfig::new(events / reps as u64).with_batches(8);
    simulate_replications(model, &cfg, probes, seed, reps, jobs())
}

fn mm1(rho: f64) -> ModelSpec {
    ModelSpec::gg1(ClockSpec::exponential(rho), ClockSpec::exponential(1.0)).unwrap()
}

fn erlang_hyper(rho: f64) -> ModelSpec {
    ModelSpec::gg1(
        ClockSpec::erlang(2, 1.0),
        ClockSpec::hyperexp_balanced(1.0, 4.0).unwrap(),
    )
    .unwrap()
    .with_load(rho)
    .unwrap()
}

fn hyper_erlang(rho: f64) -> ModelSpec {
    ModelSpec::gg1(
        ClockSpec::hyperexp_balanced(2.0, 4.0).unwrap(),
        ClockSpec::erlang(2, 2.0),
    )
    .unwrap()
    .with_load(rho)
    .unwrap()
}

fn jsq2(rho: f64) -> ModelSpec {
    ModelSpec::jsq(
        2,
        ClockSpec::exponential(2.0 * rho),
        ClockSpec::exponential(1.0),
    )
    .unwrap()
}

fn tandem(rho: f64) -> ModelSpec {
    ModelSpec::tandem(
        ClockSpec::exponential(rho),
        ClockSpec::exponential(1.0),
        ClockSpec::exponential(1.0),
    )
    .unwrap()
}

fn csv_bytes(t: &Table) -> Vec<u8> {
    let mut buf = Vec::new();
    t.write(&mut buf).unwrap();
    buf
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

#[derive(Default)]
struct Artifacts {
    identities_mm1: Vec<u8>,
    bar_gg1: Vec<u8>,
    w1_first: Vec<u8>,
    sweep: Vec<(String, f64, f64)>,
}

fn identities_table(model: &ModelSpec, seed: u64) -> Result<(Table, bool, String)> {
    let mut p = ProbeSet::new(model);
    let probes = Gg1Probes::register(&mut p, &[2, 3])?;
    let acc = run(model, &p, EVENTS, seed)?;
    let rep = check_gg1(model, &acc, &probes, K)?;
    let failed: Vec<&str> = rep
        .rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.id.as_str())
        .collect();
    Ok((
        identity_table(&rep),
        rep.all_pass(),
        format!("{} rows, failed {:?}", rep.rows.len(), failed),
    ))
}

fn criterion1(a: &mut Artifacts) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, model) in [
        ("mm1_0.8", mm1(0.8)),
        ("erlang2_hyperexp4_0.9", erlang_hyper(0.9)),
    ] {
        let t0 = Instant::now();
        let (table, ok, msg) = identities_table(&model, SEED)?;
        let secs = t0.elapsed().as_secs_f64();
        if name == "mm1_0.8" {
            a.identities_mm1 = csv_bytes(&table);
        }
        pass &= ok && secs <= 60.0;
        detail.push(format!("{name}: {msg}, {secs:.1}s"));
    }
    outcome(pass, detail.join("; "))
}

fn criterion2() -> Result<Outcome> {
    let model = jsq2(0.9);
    let mut p = ProbeSet::new(&model);
    let probes = JsqProbes::register(&mut p, &[2, 3])?;
    let acc = run(&model, &p, EVENTS, SEED + 2)?;
    let rep = check_jsq(&model, &acc, &probes, K)?;
    let failed: Vec<&str> = rep
        .rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.id.as_str())
        .collect();
    outcome(
        rep.all_pass(),
        format!("{} rows, failed {:?}", rep.rows.len(), failed),
    )
}

fn criterion3() -> Result<Outcome> {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for model in [erlang_hyper(0.9), jsq2(0.9), tandem(0.9)] {
        let mut p = ProbeSet::new(&model);
        let fs: Vec<Named> = vec![
            ("one", |_| 1.0),
            ("x", |x| x),
            ("x_sq", |x| x * x),
            ("min_x_5", |x| x.min(5.0)),
        ];
        let mut kinds = vec![WindowKind::NextInterarrival];
        kinds.extend((0..model.stations()).map(WindowKind::UntilNextDeparture));
        let mut pairs = Vec::new();
        for (name, f) in &fs {
            let f = *f;
            let t = p.time_queues(format!("{name}:time"), move |z| f(z.total() as f64));
            for kind in &kinds {
                let w = p.window(format!("{name}:{kind}"), *kind, move |z, _| {
                    f(z.total() as f64)
                });
                pairs.push((t, w));
            }
        }
        let acc = run(&model, &p, EVENTS, SEED + 3)?;
        for (t, w) in pairs {
            let diff = acc.rate(&[(1.0, Slot::Time(t)), (-1.0, Slot::Window(w))])?;
            let scale = acc.time_average(t)?.point.abs().max(1.0);
            let ok = diff.point.abs() <= K * diff.se + ROUNDOFF * scale;
            worst = worst.max(diff.point.abs() / (diff.se + ROUNDOFF * scale));
            pass &= ok;
            checks += 1;
        }
    }
    outcome(
        pass,
        format!("{checks} time/window pairs, max |diff|/SE {worst:.2}"),
    )
}

fn bar_reports(
    model: &ModelSpec,
    extra: bool,
) -> Result<(Vec<TermReport>, Vec<TermReport>, gcstein::EstimateCI)> {
    let mut p = ProbeSet::new(model);
    let full = FullBarProbes::register(&mut p, &full_library(model));
    let stein = if extra {
        let params = diffusion_params_1d(model)?;
        let sol = solve_poisson(&PiecewiseLinear::min_with(2.0)?, params);
        Some((
            "stein_min_x_2".to_string(),
            Arc::new(sol) as Arc<dyn TestFunction1D>,
        ))
    } else {
        None
    };
    let comp = CompensatedBarProbes::register(&mut p, &compensated_library(model, stein));
    let acc = run(model, &p, EVENTS, SEED + 4)?;
    Ok((
        full.reports(model, &acc)?,
        comp.reports(model, &acc)?,
        comp.arrival_jump_mean(&acc)?,
    ))
}

fn criterion4(a: &mut Artifacts) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, model, extra) in [
        ("gg1", erlang_hyper(0.9), false),
        ("mm1_stein", mm1(0.9), true),
        ("jsq", jsq2(0.9), false),
        ("tandem", tandem(0.9), false),
    ] {
        let (full, comp, jump) = bar_reports(&model, extra)?;
        if name == "gg1" {
            a.bar_gg1 = csv_bytes(&term_table(&full));
        }
        let bad: Vec<String> = full
            .iter()
            .chain(&comp)
            .filter(|r| !r.pass(K))
            .map(|r| r.f_id.clone())
            .collect();
        let jump_ok = jump.within(0.0, K);
        pass &= bad.is_empty() && jump_ok && full.len() >= 6 && comp.len() >= 6;
        detail.push(format!(
            "{name}: {}+{} functions, failed {bad:?}, jump mean {:.2e} (se {:.1e})",
            full.len(),
            comp.len(),
            jump.point,
            jump.se
        ));
    }
    outcome(pass, detail.join("; "))
}

fn random_h(stream: &mut RandomStream) -> PiecewiseLinear {
    let kinks = 1 + stream.index(4);
    let mut x = 0.0;
    let mut points = vec![(0.0, 2.0 * stream.open01() - 1.0)];
    let mut y = points[0].1;
    for _ in 0..=kinks {
        let dx = 0.2 + 3.0 * stream.open01();
        let slope = 2.0 * stream.open01() - 1.0;
        x += dx;
        y += slope * dx;
        points.push((x, y));
    }
    PiecewiseLinear::through_points(&points).expect("Lip(1) by construction")
}

fn criterion5() -> Result<Outcome> {
    let mut stream = RandomStream::new(SEED, 5);
    let mut pass = true;
    let mut worst_res: f64 = 0.0;
    let mut worst_f1: f64 = 0.0;
    for rho in [0.8, 0.9] {
        let params = diffusion_params_1d(&mm1(rho))?;
        for _ in 0..10 {
            let h = random_h(&mut stream);
            let sol = solve_poisson(&h, params);
            let grid = stein_grid(&sol, 10_000);
            let hmax = grid.iter().map(|x| h.eval(*x).abs()).fold(0.0, f64::max);
            let scale = (hmax / params.theta).max(1.0);
            let res = ode_residual(&sol, &grid) / scale;
            let f = stein_factors(&sol, &grid);
            let f1 = sol.d1(0.0).abs();
            worst_res = worst_res.max(res);
            worst_f1 = worst_f1.max(f1);
            pass &= res <= 1e-9
                && f1 <= 1e-12
                && f.sup_f2 <= (1.0 / params.theta) * (1.0 + 1e-9)
                && f.sup_f3 <= (4.0 / params.sigma2) * (1.0 + 1e-9);
        }
    }
    outcome(
        pass,
        format!(
            "20 solutions, max scaled ODE residual {worst_res:.1e}, max |f'(0)| {worst_f1:.1e}"
        ),
    )
}

fn w1_cell(model: &ModelSpec, id: &str, seed: u64) -> Result<(W1Row, Table)> {
    let params = diffusion_params_1d(model)?;
    let burn = 2_000_000;
    let states = stationary_samples(model, 100_000, 100, burn, seed)?;
    let xs: Vec<f64> = states
        .iter()
        .map(|z| model.scaled_total(&z.queues))
        .collect();
    let w1 = w1_empirical_vs_exponential(
        &xs,
        params.beta,
        &Bootstrap {
            seed,
            ..Default::default()
        },
    )?;
    let mut p = ProbeSet::new(model);
    let probes = Gg1Probes::register(&mut p, &[2])?;
    let acc = run(model, &p, EVENTS, seed ^ 0x5eed)?;
    let cond = conditional_residual_estimate(model, &acc, &probes)?;
    let bound = gg1_error_bounds(model, BoundMode::Simulated, Some(&cond.time_ratio))?;
    let pass = w1.point <= bound.total + K * w1.se;
    let row = W1Row {
        config_id: id.to_string(),
        delta: model.delta(),
        w1,
        bound_total: bound.total,
        pass,
    };
    Ok((row, bound_table(&[(id.to_string(), bound)])))
}

fn criterion6(a: &mut Artifacts) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut detail = Vec::new();
    let mut slow = false;
    for (mix, make) in [
        ("erlang2_hyperexp4", erlang_hyper as fn(f64) -> ModelSpec),
        ("hyperexp4_erlang2", hyper_erlang),
    ] {
        for rho in RHOS {
            let t0 = Instant::now();
            let id = format!("{mix}_{rho}");
            let (row, _) = w1_cell(&make(rho), &id, SEED + 6)?;
            let secs = t0.elapsed().as_secs_f64();
            slow |= secs > 300.0;
            detail.push(format!(
                "{id}: w1 {:.4} (se {:.1e}) vs bound {:.3}, {secs:.0}s",
                row.w1.point, row.w1.se, row.bound_total
            ));
            a.sweep.push((mix.to_string(), row.delta, row.w1.point));
            rows.push(row);
        }
    }
    a.w1_first = csv_bytes(&w1_table(&rows[..1]));
    outcome(rows.iter().all(|r| r.pass) && !slow, detail.join("; "))
}

fn criterion7(a: &Artifacts) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for mix in ["erlang2_hyperexp4", "hyperexp4_erlang2"] {
        let pairs: Vec<(f64, f64)> = a
            .sweep
            .iter()
            .filter(|s| s.0 == mix)
            .map(|s| (s.1, s.2))
            .collect();
        let fit = decay_fit(&pairs)?;
        pass &= (0.7..=1.3).contains(&fit.slope);
        detail.push(format!("{mix}: slope {:.3}", fit.slope));
    }
    let oracle: Vec<(f64, f64)> = RHOS
        .iter()
        .map(|&r| {
            Ok((
                1.0 - r,
                w1_geometric_vs_exponential(r, 1.0 - r, 2.0 / (1.0 + r))?,
            ))
        })
        .collect::<Result<_>>()?;
    let fit = decay_fit(&oracle)?;
    pass &= (0.9..=1.1).contains(&fit.slope);
    detail.push(format!("geometric oracle: slope {:.3}", fit.slope));
    outcome(pass, detail.join("; "))
}

fn criterion8() -> Result<Outcome> {
    let mut points = Vec::new();
    for rho in RHOS {
        let model = jsq2(rho);
        let mut p = ProbeSet::new(&model);
        let probes = SscProbes::register(&mut p)?;
        let acc = run(&model, &p, EVENTS, SEED + 8)?;
        points.push(ssc_estimate(&model, &acc, &probes)?);
    }
    let pass = points.windows(2).all(|w| w[1].point < w[0].point);
    let text: Vec<String> = RHOS
        .iter()
        .zip(&points)
        .map(|(r, e)| format!("rho {r}: {:.4} +- {:.4}", e.point, e.half_width))
        .collect();
    outcome(pass, text.join(", "))
}

fn criterion9() -> Result<Outcome> {
    let model = tandem(0.8);
    let DiffusionParams::Tandem(p) = diffusion_params(&model, DriftMode::GeneratorConsistent)?
    else {
        return outcome(false, "tandem model produced one-dimensional parameters");
    };
    let sigma_ok = p.sigma == [[1.8, -1.0], [-1.0, 2.0]];
    let r_ok = p.r == [[1.0, 0.0], [-1.0, 1.0]] && p.r == TANDEM_REFLECTION;
    let g = TandemGenerator::new(&model)?;
    let (d, mu) = (model.spare(), [model.mu(0), model.mu(1)]);
    let expected = [-mu[0] * d[0] * d[0], d[1] * (mu[0] * d[0] - mu[1] * d[1])];
    let b = p.scaled_drift();
    let drift_ok =
        (0..2).all(|i| (b[i] - g.drift[i]).abs() <= 1e-15 && (b[i] - expected[i]).abs() <= 1e-15);
    outcome(
        sigma_ok && r_ok && drift_ok,
        format!(
            "sigma {:?}, R {:?}, scaled drift {b:?} vs generator {:?}",
            p.sigma, p.r, g.drift
        ),
    )
}

fn criterion10() -> Result<Outcome> {
    let model = tandem(0.8);
    let p = TandemRbmParams::from_model(&model, DriftMode::GeneratorConsistent)?;
    let path = srbm_simulate(&p, 1e-3, 1_000.0, [0.0, 0.0], SEED)?;
    let inv = path.steps.len() == 1_000_000 && path.invariants_hold();
    let half = dt_halving_check(&p, 1e-3, 500.0, 20_000.0, SEED)?;
    let avg = srbm_averages(&p, 1e-3, 1_000.0, 100_000.0, SEED + 10)?;
    let rel = (avg.mean[0].point - model.loads()[0]).abs() / model.loads()[0];
    let reg = avg.regulator_rate[0] / (mu_delta(&model));
    outcome(
        inv && half.pass && avg.invariant_violations == 0,
        format!(
            "invariants on {} steps: {inv}; dt halving change {:.4} vs half-width {:.4}; \
             exploratory E Y1 = {:.3} vs rho1 = {} ({:.1}% off, {}); regulator rate / mu1 delta1 = {reg:.2}",
            path.steps.len(),
            (half.coarse[0].point - half.fine[0].point).abs(),
            half.coarse[0].half_width,
            avg.mean[0].point,
            model.loads()[0],
            100.0 * rel,
            if rel <= 0.1 { "within 10%" } else { "outside 10%, logged only" },
        ),
    )
}

fn mu_delta(model: &ModelSpec) -> f64 {
    model.mu(0) * model.spare()[0]
}

fn criterion11(a: &Artifacts) -> Result<Outcome> {
    let (table, _, _) = identities_table(&mm1(0.8), SEED)?;
    let ids = csv_bytes(&table) == a.identities_mm1;
    let (full, _, _) = bar_reports(&erlang_hyper(0.9), false)?;
    let bar = csv_bytes(&term_table(&full)) == a.bar_gg1;
    let (row, _) = w1_cell(
        &erlang_hyper(RHOS[0]),
        &format!("erlang2_hyperexp4_{}", RHOS[0]),
        SEED + 6,
    )?;
    let w1 = csv_bytes(&w1_table(&[row])) == a.w1_first;
    outcome(
        ids && bar && w1,
        format!("identities {ids}, bar terms {bar}, w1 {w1}"),
    )
}

fn main() {
    let mut artifacts = Artifacts::default();
    let mut all = true;
    let mut report =
        |n: u32, f: &mut dyn FnMut(&mut Artifacts) -> Result<Outcome>, a: &mut Artifacts| {
            let t0 = Instant::now();
            let (pass, detail) = match f(a) {
                Ok(o) => (o.pass, o.detail),
                Err(e) => (false, format!("error: {e}")),
            };
            all &= pass;
            println!(
                "criterion {n:>2}: {} ({:.1}s) {detail}",
                if pass { "PASS" } else { "FAIL" },
                t0.elapsed().as_secs_f64()
            );
        };
    report(1, &mut criterion1, &mut artifacts);
    report(2, &mut |_| criterion2(), &mut artifacts);
    report(3, &mut |_| criterion3(), &mut artifacts);
    report(4, &mut criterion4, &mut artifacts);
    report(5, &mut |_| criterion5(), &mut artifacts);
    report(6, &mut criterion6, &mut artifacts);
    report(7, &mut |a| criterion7(a), &mut artifacts);
    report(8, &mut |_| criterion8(), &mut artifacts);
    report(9, &mut |_| criterion9(), &mut artifacts);
    report(10, &mut |_| criterion10(), &mut artifacts);
    report(11, &mut |a| criterion11(a), &mut artifacts);
    if !all {
        std::process::exit(1);
    }
}
