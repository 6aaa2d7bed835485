//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{config_in, configs, random_linear, residual_std, tiny_input, tiny_net, Regime, REGIMES};
use hecnn::act::table::reproduce_table;
use hecnn::act::{apply_to_vector, cheb_interpolate, gelu};
use hecnn::conv::{conv_plan, convolve, convolve_strided, ConvPlan};
use hecnn::dense::{linear, pool_linear, slot_sum};
use hecnn::emu::METABTS_PRECISION_GAIN;
use hecnn::net::{bench, run, sample_input};
use hecnn::oracle::{oracle_avgpool2x2, oracle_conv, oracle_global_avgpool, oracle_linear};
use hecnn::pack::unpack;
use hecnn::pool::{pool, window_sums};
use hecnn::reg::{moment_loss, MomentLoss};
use hecnn::rot::{decompose_positive, decompose_signed, min_length_table};
use hecnn::{Evaluator, NoiseModel, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let cfgs = configs(216, 2024);
    let mut worst: f64 = 0.0;
    let mut seen = std::collections::BTreeSet::new();
    for cfg in &cfgs {
        seen.insert(format!("{:?}/k{}", cfg.regime, cfg.k));
        let ev = cfg.evaluator();
        let t = cfg.input();
        let kernel = cfg.filter();
        let bias = cfg.bias();
        let p = cfg.pack(&ev, &t)?;
        let conv = unpack(&convolve(&ev, &p, &kernel, Some(&bias))?)?;
        worst = worst.max(conv.max_abs_diff(&oracle_conv(&t, &kernel, Some(&bias), 1)?));
        let strided = unpack(&convolve_strided(&ev, &p, &kernel, Some(&bias))?)?;
        worst = worst.max(strided.max_abs_diff(&oracle_conv(&t, &kernel, Some(&bias), 2)?));
        let pooled = unpack(&pool(&ev, &p)?)?;
        worst = worst.max(pooled.max_abs_diff(&oracle_avgpool2x2(&t)?));
        let out = 10.min(cfg.s);
        let w = random_linear(out, cfg.c * cfg.m * cfg.m, cfg.seed);
        let y = linear(&ev, &p, &w)?;
        worst = worst.max(max_diff(&y.slots()[..out], &oracle_linear(t.data(), &w)?));
        let w = random_linear(out, cfg.c, cfg.seed ^ 1);
        let y = pool_linear(&ev, &p, &w)?;
        worst = worst.max(max_diff(&y.slots()[..out], &oracle_linear(&oracle_global_avgpool(&t), &w)?));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-9 && secs < 120.0 && seen.len() == 2 * REGIMES.len(),
        format!(
            "{} configs over {} regime/kernel classes, max abs error {worst:.2e}, {secs:.1}s",
            cfgs.len(),
            seen.len()
        ),
    )
}

fn polynomial_table() -> Result<Outcome> {
    let rows = reproduce_table(hecnn::act::DEFAULT_GRID, true)?;
    let pass = rows.iter().all(|r| r.interpolation_ok);
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "{}{}={:.5} (minimax {:.2e}{})",
                r.reference.function,
                r.reference.degree,
                r.interpolation,
                r.minimax.unwrap_or(f64::NAN),
                if r.minimax_ok == Some(true) { "" } else { ", optional row outside 10%" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn depth_budgets() -> Result<Outcome> {
    let mut measured = Vec::new();
    for degree in [59, 27] {
        let ev = Evaluator::new(64, 8)?;
        let poly = cheb_interpolate::<f64>(gelu, degree, 10.0);
        apply_to_vector(&ev, &ev.encode(vec![0.5; 64])?, &poly)?;
        measured.push(ev.snapshot().max_depth_consumed);
    }
    let mut conv_depths = std::collections::BTreeSet::new();
    let mut window_depths = std::collections::BTreeSet::new();
    for cfg in configs(27, 77) {
        let ev = cfg.evaluator();
        let p = cfg.pack(&ev, &cfg.input())?;
        convolve(&ev, &p, &cfg.filter(), None)?;
        conv_depths.insert(ev.snapshot().max_depth_consumed);
        let ev = cfg.evaluator();
        window_sums(&ev, &p)?;
        window_depths.insert(ev.snapshot().max_depth_consumed);
    }
    let pass = measured == [6, 5]
        && conv_depths.iter().eq([1u64].iter())
        && window_depths.iter().eq([1u64].iter());
    outcome(
        pass,
        format!("gelu59={} gelu27={} conv={conv_depths:?} pool window={window_depths:?}", measured[0], measured[1]),
    )
}

fn count_laws() -> Result<Outcome> {
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [1, 2, 4] {
        for seed in 0..4 {
            let cfg = config_in(Regime::Single { d }, 900 + seed);
            let ev = cfg.evaluator();
            let p = cfg.pack(&ev, &cfg.input())?;
            let kernel = cfg.filter();
            let before = ev.snapshot();
            convolve(&ev, &p, &kernel, None)?;
            let used = ev.snapshot().since(&before).ct_pt_mults;
            ok &= used == (cfg.k * cfg.k * cfg.c) as u64;

            let a = conv_plan(&ev, &p, &kernel, None, ConvPlan::ChannelFirst)?;
            let b = conv_plan(&ev, &p, &kernel, None, ConvPlan::ShiftFirst)?;
            let same = a.output.shards().iter().zip(b.output.shards()).all(|(x, y)| x.slots() == y.slots());
            ok &= same && a.distinct_amounts() == cfg.k * cfg.k + cfg.c - 1;
        }
    }
    notes.push("conv ct-pt = k^2 c, plans slot-identical, k^2 + c - 1 amounts".to_string());
    for log_s in 1..=12u32 {
        let s = 1usize << log_s;
        let ev = Evaluator::new(s, 1)?;
        let v = ev.encode(vec![1.0; s])?;
        for log_b in 1..=log_s {
            let before = ev.snapshot();
            slot_sum(&ev, &v, 1 << log_b)?;
            ok &= ev.snapshot().since(&before).rotations == u64::from(log_b);
        }
    }
    notes.push("slot_sum = log2(block) rotations".to_string());
    outcome(ok, notes.join("; "))
}

fn signed_decomposition() -> Result<Outcome> {
    let table = min_length_table(4096)?;
    let optimal = table
        .iter()
        .enumerate()
        .all(|(n, &best)| decompose_signed(n, 1 << 16).len() as u32 == best);
    let bounded = (0..1usize << 16).all(|n| decompose_signed(n, 1 << 16).len() as u32 <= n.count_ones());
    let s127 = decompose_signed(127, 4096).len();
    let p127 = decompose_positive(127, 4096).len();
    outcome(
        optimal && bounded && s127 == 2 && p127 == 7,
        format!("BFS-optimal below 4096: {optimal}; <= popcount below 2^16: {bounded}; 127 -> {s127} vs {p127}"),
    )
}

fn kurtosis_gradients() -> Result<Outcome> {
    use rand::Rng;
    let mut r = common::rng(6);
    let batches: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let n = r.random_range(8..32);
            (0..n).map(|_| r.random_range(-2.0..2.0) * r.random_range(0.2..1.5)).collect()
        })
        .collect();
    let cfg = MomentLoss::new(0.1, 0.1, 0.1);
    let out = moment_loss(&batches, &cfg)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        for i in 0..batch.len() {
            let mut plus = batches.clone();
            plus[b][i] += h;
            let mut minus = batches.clone();
            minus[b][i] -= h;
            let fd = (moment_loss(&plus, &cfg)?.loss - moment_loss(&minus, &cfg)?.loss) / (2.0 * h);
            let g = out.grads[b][i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-3));
        }
    }
    let alt: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let root3 = 3f64.sqrt();
    let target = vec![root3, -root3, 0.0, 0.0, 0.0, 0.0];
    let n = 4usize;
    let mut four = vec![alt];
    four.extend(std::iter::repeat_n(target, n - 1));
    let loss = moment_loss(&four, &cfg)?.loss;
    let alt_ok = (loss - 4.0 * cfg.lambda_kappa / n as f64).abs() < 1e-15;
    outcome(
        worst < 1e-5 && alt_ok,
        format!("worst relative gap {worst:.2e} over 100 batches; alternating batch loss {loss} with N={n}"),
    )
}

fn tiny_network() -> Result<Outcome> {
    let net = tiny_net();
    let report = run(&net, &tiny_input())?;
    let plain = residual_std(&net, NoiseModel::gaussian(1e-6, 0), 0..4);
    let meta = residual_std(&net, NoiseModel::gaussian(1e-6, 0).with_metabts(true), 0..4);
    let ratio = plain / meta;
    let ratio_ok = (ratio / METABTS_PRECISION_GAIN - 1.0).abs() <= 0.3;
    outcome(
        report.residual.max_abs < 1e-6 && ratio_ok,
        format!(
            "noise-off logit residual {:.2e}; noise std {plain:.2e} -> {meta:.2e} with MetaBTS (ratio {ratio:.2})",
            report.residual.max_abs
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let net = tiny_net();
    let a = bench(&net, &sample_input(&net, 4), 3)?;
    let b = bench(&net, &sample_input(&net, 4), 3)?;
    let noisy = net.clone().with_noise(NoiseModel::gaussian(1e-6, 11));
    let same_run = run(&noisy, &tiny_input())? == run(&noisy, &tiny_input())?;
    let same_bench = a.deterministic && b.deterministic && a.total == b.total;
    outcome(
        same_run && same_bench,
        format!("bench ledgers identical: {same_bench}; seeded runs identical: {same_run}"),
    )
}

type Check = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("polynomial table", polynomial_table),
        ("depth budgets", depth_budgets),
        ("operation counts", count_laws),
        ("signed decomposition", signed_decomposition),
        ("kurtosis gradients", kurtosis_gradients),
        ("tiny network", tiny_network),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("[{}] {}. {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
