use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hecnn::act::table::{function_by_name, reproduce_table};
use hecnn::act::{cheb_interpolate, DEFAULT_GRID};
use hecnn::net::{bench, run, sample_input, Network};
use hecnn::rot::{decompose_positive, decompose_signed, min_length_table, BFS_CAP};
use hecnn::{fixture, reg, NoiseModel};

/// Exit status when a run finishes but misses a threshold.
const THRESHOLD_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "hecnn", version, about = "Emulated encrypted CNN inference")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a network on one input and compare with the plaintext oracle.
    Run {
        spec: PathBuf,
        input: PathBuf,
        /// Override the bootstrap noise sigma (enables noise).
        #[arg(long)]
        sigma: Option<f64>,
        /// Use the high-precision bootstrap mode.
        #[arg(long)]
        metabts: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat a run and tabulate operation counts per layer kind.
    Bench {
        spec: PathBuf,
        #[arg(short = 'n', default_value_t = 3)]
        repetitions: usize,
        /// Input tensor; a seeded random input is used otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Approximation errors of Chebyshev interpolants of GELU and ReLU.
    PolyTable {
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        /// Also run the Remez exchange for minimax errors.
        #[arg(long)]
        remez: bool,
    },
    /// Write a Chebyshev interpolant as a polynomial fixture.
    PolyFit {
        #[arg(long, default_value = "gelu")]
        function: String,
        #[arg(long)]
        degree: usize,
        #[arg(long)]
        bound: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rotation decompositions for a range such as `0..128` or a single n.
    Decomp {
        range: String,
        #[arg(long, default_value_t = 1 << 16)]
        slots: usize,
    },
    /// Per-layer ranges and suggested activation bounds. Each file holds one
    /// layer's values as whitespace-separated reals.
    Ranges {
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = reg::DEFAULT_COVERAGE)]
        coverage: f64,
    },
}

fn parse_range(text: &str) -> Result<(usize, usize)> {
    if let Some((a, b)) = text.split_once("..") {
        let lo = a.trim().parse().context("range start")?;
        let hi = b.trim().parse().context("range end")?;
        if hi <= lo {
            bail!("empty range {text}");
        }
        Ok((lo, hi))
    } else {
        let n: usize = text.trim().parse().context("rotation amount")?;
        Ok((n, n + 1))
    }
}

fn emit<T: serde::Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(THRESHOLD_FAILED)
    }
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    let json = cli.json;
    match cli.cmd {
        Cmd::Run {
            spec,
            input,
            sigma,
            metabts,
            seed,
        } => {
            let mut net = Network::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
            let mut noise = net.noise();
            if let Some(s) = sigma {
                noise = NoiseModel::gaussian(s, noise.seed);
            }
            if metabts {
                noise.metabts = true;
            }
            if let Some(s) = seed {
                noise.seed = s;
            }
            net = net.with_noise(noise);
            let x = fixture::read_tensor::<f64>(&input)?;
            let report = run(&net, &x)?;
            emit(json, &report, || report.to_text())?;
            let ok = net.logit_threshold().is_none_or(|t| report.residual.max_abs <= t);
            if !ok {
                eprintln!("logit residual {:e} exceeds threshold", report.residual.max_abs);
            }
            Ok(status(ok))
        }
        Cmd::Bench {
            spec,
            repetitions,
            input,
            seed,
        } => {
            let net = Network::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
            let x = match input {
                Some(p) => fixture::read_tensor::<f64>(p)?,
                None => sample_input(&net, seed),
            };
            let report = bench(&net, &x, repetitions)?;
            emit(json, &report, || report.to_text())?;
            Ok(status(report.deterministic))
        }
        Cmd::PolyTable { grid, remez } => {
            let rows = reproduce_table(grid, remez)?;
            emit(json, &rows, || {
                let mut out = String::from("function degree  interp   reference  ok   minimax  reference  ok\n");
                for r in &rows {
                    let mm = match (r.minimax, r.minimax_ok) {
                        (Some(e), Some(ok)) => format!("{e:>9.5} {:>9.4}  {}", r.reference.minimax, if ok { "yes" } else { "no" }),
                        _ => "        -".to_string(),
                    };
                    out.push_str(&format!(
                        "{:<8} {:>6} {:>8.5} {:>8.4}±{:<7} {:<3} {mm}\n",
                        r.reference.function,
                        r.reference.degree,
                        r.interpolation,
                        r.reference.interpolation,
                        r.reference.tolerance,
                        if r.interpolation_ok { "yes" } else { "no" },
                    ));
                }
                out
            })?;
            Ok(status(rows.iter().all(|r| r.interpolation_ok)))
        }
        Cmd::PolyFit {
            function,
            degree,
            bound,
            output,
        } => {
            let f = function_by_name(&function).with_context(|| format!("unknown function {function}"))?;
            let text = fixture::format_poly(&cheb_interpolate::<f64>(f, degree, bound));
            match output {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Decomp { range, slots } => {
            let (lo, hi) = parse_range(&range)?;
            if hi > slots {
                bail!("range end {hi} exceeds slot count {slots}");
            }
            let table = if hi <= BFS_CAP { Some(min_length_table(hi)?) } else { None };
            let mut ok = true;
            let mut rows = Vec::new();
            for n in lo..hi {
                let pos = decompose_positive(n, slots);
                let signed = decompose_signed(n, slots);
                let min = table.as_ref().map(|t| t[n]);
                ok &= signed.len() <= pos.len() && min.is_none_or(|m| m as usize == signed.len());
                rows.push(serde_json::json!({"n": n, "positive": pos, "signed": signed, "min": min}));
            }
            emit(json, &rows, || {
                let mut out = String::from("n\tpositive\tsigned\tmin\tsigned steps\n");
                for r in &rows {
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{}\n",
                        r["n"],
                        r["positive"].as_array().map_or(0, Vec::len),
                        r["signed"].as_array().map_or(0, Vec::len),
                        r["min"],
                        r["signed"]
                    ));
                }
                out
            })?;
            Ok(status(ok))
        }
        Cmd::Ranges { files, coverage } => {
            let layers = files
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    text.split_whitespace()
                        .map(|w| w.parse::<f64>().with_context(|| format!("bad number {w} in {}", p.display())))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let report = reg::range_report(&layers, coverage)?;
            let rows: Vec<_> = files
                .iter()
                .zip(&report)
                .map(|(p, r)| serde_json::json!({"file": p.display().to_string(), "min": r.min, "max": r.max, "quantile": r.quantile, "bound": r.bound}))
                .collect();
            emit(json, &rows, || {
                let mut out = String::from("layer\tmin\tmax\tquantile\tbound\n");
                for (p, r) in files.iter().zip(&report) {
                    let b = r.bound.map_or("none".to_string(), |b| b.to_string());
                    out.push_str(&format!("{}\t{:.4}\t{:.4}\t{:.4}\t{b}\n", p.display(), r.min, r.max, r.quantile));
                }
                out
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
