use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::emu::{LedgerSnapshot, NoiseModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ResidualStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max_abs: f64,
}

impl ResidualStats {
    pub fn of(r: &[f64]) -> Self {
        if r.is_empty() {
            return Self::default();
        }
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max_abs: r.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn between(got: &[f64], want: &[f64]) -> Self {
        let r: Vec<f64> = got.iter().zip(want).map(|(a, b)| a - b).collect();
        Self::of(&r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: String,
    pub shards: usize,
    pub mode: String,
    pub duplication: usize,
    /// Level on arrival, before any bootstrap.
    pub level_in: u32,
    pub bootstrapped: bool,
    /// Level the layer started from.
    pub level_start: u32,
    pub level_out: u32,
    pub depth: u32,
    /// Against the oracle evaluating the same polynomials.
    pub max_abs_error: f64,
    /// Against the oracle evaluating the exact activation.
    pub max_abs_error_exact: f64,
    pub ledger: LedgerSnapshot,
    pub bootstrap_ledger: LedgerSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub name: String,
    pub slots: usize,
    pub top_level: u32,
    pub noise: NoiseModel,
    pub layers: Vec<LayerReport>,
    pub logits: Vec<f64>,
    pub oracle_logits: Vec<f64>,
    pub exact_logits: Vec<f64>,
    pub residual: ResidualStats,
    pub exact_residual: ResidualStats,
    pub noise_estimate_std: Option<f64>,
    pub bootstrap_schedule: Vec<usize>,
    pub ledger: LedgerSnapshot,
    pub weighted_rotations: f64,
    pub keyed_rotations_positive: u64,
    pub keyed_rotations_signed: u64,
}

fn ledger_row(out: &mut String, label: &str, l: &LedgerSnapshot) {
    let _ = writeln!(
        out,
        "{label:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7} {:>4}",
        l.rotations, l.hoisted_rotations, l.ct_pt_mults, l.ct_ct_mults, l.scalar_mults, l.adds, l.bootstraps
    );
}

const LEDGER_HEADER: &str = "              rots  hoist  ct-pt  ct-ct scalar    adds  bts";

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name = if self.name.is_empty() { "network" } else { &self.name };
        let _ = writeln!(out, "{name}: s={} top_level={}", self.slots, self.top_level);
        let n = &self.noise;
        if n.enabled {
            let _ = writeln!(out, "noise: sigma={:e} metabts={} seed={}", n.sigma, n.metabts, n.seed);
        } else {
            out.push_str("noise: off\n");
        }
        out.push_str("\nlayer        shards mode         d  lvl_in bts start out depth   max_err   err_exact\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:<12} {:>2} {:>7} {:>3} {:>5} {:>3} {:>5} {:>9.2e} {:>11.2e}",
                format!("{}:{}", l.index, l.kind),
                l.shards,
                l.mode,
                l.duplication,
                l.level_in,
                if l.bootstrapped { "yes" } else { "-" },
                l.level_start,
                l.level_out,
                l.depth,
                l.max_abs_error,
                l.max_abs_error_exact
            );
        }
        out.push('\n');
        out.push_str(LEDGER_HEADER);
        out.push('\n');
        for l in &self.layers {
            if l.bootstrapped {
                ledger_row(&mut out, "  bootstrap", &l.bootstrap_ledger);
            }
            ledger_row(&mut out, &format!("{}:{}", l.index, l.kind), &l.ledger);
        }
        ledger_row(&mut out, "total", &self.ledger);
        let _ = writeln!(
            out,
            "hoist groups {}  weighted rotations {:.1}  keyed rotations: positive {} signed {}",
            self.ledger.hoist_groups, self.weighted_rotations, self.keyed_rotations_positive, self.keyed_rotations_signed
        );
        let _ = writeln!(out, "bootstraps before layers {:?}", self.bootstrap_schedule);
        out.push('\n');
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "logits        {}", fmt(&self.logits));
        let _ = writeln!(out, "oracle logits {}", fmt(&self.oracle_logits));
        let r = &self.residual;
        let _ = writeln!(
            out,
            "logit residual: mean {:.3e} std {:.3e} max {:.3e}",
            r.mean, r.std, r.max_abs
        );
        let r = &self.exact_residual;
        let _ = writeln!(
            out,
            "vs exact activations: mean {:.3e} std {:.3e} max {:.3e}",
            r.mean, r.std, r.max_abs
        );
        if let Some(est) = self.noise_estimate_std {
            let _ = writeln!(out, "noise-propagated residual std estimate {est:.3e}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    /// Every repetition produced an identical report.
    pub deterministic: bool,
    pub per_kind: BTreeMap<String, LedgerSnapshot>,
    pub total: LedgerSnapshot,
    pub layers: Vec<LayerReport>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} repetitions, {}\n\n",
            self.repetitions,
            if self.deterministic { "identical ledgers" } else { "LEDGERS DIFFER" }
        );
        out.push_str(LEDGER_HEADER);
        out.push('\n');
        for (kind, l) in &self.per_kind {
            ledger_row(&mut out, kind, l);
        }
        ledger_row(&mut out, "total", &self.total);
        out
    }
}
