//! Whole-network inference: runs a layer list on the emulator beside the
//! plaintext oracle and reports errors, costs and the level timeline.

mod report;
mod spec;

pub use report::{BenchReport, LayerReport, Report, ResidualStats};
pub use spec::{BatchNormSpec, BootstrapPolicy, InputShape, Layer, LayerSpec, Network, NetworkSpec, Thresholds};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::act::{apply_activation, apply_to_vector, gelu};
use crate::conv::{convolve, convolve_strided};
use crate::dense::{linear, linear_features, pool_linear};
use crate::emu::{Evaluator, LedgerSnapshot, SlotVector};
use crate::oracle::{oracle_avgpool2x2, oracle_conv, oracle_global_avgpool, oracle_linear};
use crate::pack::{pack, unpack, ImageTensor, PackedImage, ShardMode};
use crate::conv::image_layout;
use crate::pool::{layout_compaction, pool, pool_depth};
use crate::rot::{keyed_cost, Strategy};
use crate::{Error, Result};

/// Runtime value flowing between layers.
#[derive(Clone, Debug)]
enum Value {
    Image(PackedImage<f64>),
    Features { v: SlotVector<f64>, n: usize },
}

impl Value {
    fn level(&self) -> u32 {
        match self {
            Value::Image(p) => p.min_level(),
            Value::Features { v, .. } => v.level(),
        }
    }

    /// Shards are bootstrapped one after another so the noise stream is
    /// consumed in a fixed order.
    fn bootstrap(&self, ev: &Evaluator, target: u32) -> Result<Value> {
        Ok(match self {
            Value::Image(p) => {
                let shards = p
                    .shards()
                    .iter()
                    .map(|x| ev.bootstrap(x, target))
                    .collect::<Result<Vec<_>>>()?;
                Value::Image(p.with_shards(shards)?)
            }
            Value::Features { v, n } => Value::Features {
                v: ev.bootstrap(v, target)?,
                n: *n,
            },
        })
    }

    fn decode(&self) -> Result<Plain> {
        Ok(match self {
            Value::Image(p) => Plain::Image(unpack(p)?),
            Value::Features { v, n } => Plain::Features(v.slots()[..*n].to_vec()),
        })
    }
}

/// Plaintext value flowing through the oracle.
#[derive(Clone, Debug, PartialEq)]
enum Plain {
    Image(ImageTensor<f64>),
    Features(Vec<f64>),
}

impl Plain {
    fn values(&self) -> &[f64] {
        match self {
            Plain::Image(t) => t.data(),
            Plain::Features(v) => v,
        }
    }

    fn map(&self, mut f: impl FnMut(f64) -> f64) -> Plain {
        match self {
            Plain::Image(t) => {
                let data = t.data().iter().map(|&x| f(x)).collect();
                Plain::Image(ImageTensor::new(t.channels(), t.side(), data).expect("same shape"))
            }
            Plain::Features(v) => Plain::Features(v.iter().map(|&x| f(x)).collect()),
        }
    }

    fn max_abs_diff(&self, other: &Plain) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activation {
    /// The same polynomial the emulated path evaluates.
    Poly,
    /// The exact function the polynomial approximates.
    Exact,
}

fn layer_name(index: usize, layer: &Layer) -> String {
    format!("{index}:{}", layer.kind())
}

/// Levels a layer consumes on the given input.
fn layer_depth(layer: &Layer, value: &Value) -> u32 {
    match (layer, value) {
        (Layer::Conv { kernel, stride: 2, .. }, Value::Image(p)) => {
            // the subsample acts on the convolution output
            let extra = match p.mode() {
                ShardMode::ImageShard => image_layout(p.slots(), p.side(), kernel.out_channels())
                    .map_or(0, |(t, _)| layout_compaction(p.mode(), t, p.units_per_shard())),
                ShardMode::ChannelShard => 0,
            };
            3 + extra
        }
        (Layer::Conv { .. }, _) => 1,
        (Layer::Gelu { poly }, _) => poly.depth(),
        (Layer::Pool, Value::Image(p)) => pool_depth(p),
        (Layer::Pool, _) => 3,
        (Layer::Linear(_) | Layer::PoolLinear(_), _) => 2,
    }
}

fn apply_layer(ev: &Evaluator, layer: &Layer, value: &Value) -> Result<Value> {
    let shape_err = |what: &str| Error::Invalid(format!("{what} needs an image input"));
    Ok(match (layer, value) {
        (Layer::Conv { kernel, bias, stride }, Value::Image(p)) => Value::Image(if *stride == 2 {
            convolve_strided(ev, p, kernel, Some(bias))?
        } else {
            convolve(ev, p, kernel, Some(bias))?
        }),
        (Layer::Gelu { poly }, Value::Image(p)) => Value::Image(apply_activation(ev, p, poly)?),
        (Layer::Gelu { poly }, Value::Features { v, n }) => Value::Features {
            v: apply_to_vector(ev, v, poly)?,
            n: *n,
        },
        (Layer::Pool, Value::Image(p)) => Value::Image(pool(ev, p)?),
        (Layer::Linear(w), Value::Image(p)) => Value::Features {
            v: linear(ev, p, w)?,
            n: w.out_features(),
        },
        (Layer::Linear(w), Value::Features { v, .. }) => Value::Features {
            v: linear_features(ev, v, w)?,
            n: w.out_features(),
        },
        (Layer::PoolLinear(w), Value::Image(p)) => Value::Features {
            v: pool_linear(ev, p, w)?,
            n: w.out_features(),
        },
        (l, _) => return Err(shape_err(l.kind())),
    })
}

fn plain_layer(layer: &Layer, x: &Plain, act: Activation) -> Result<Plain> {
    let shape_err = |what: &str| Error::Invalid(format!("{what} needs an image input"));
    Ok(match (layer, x) {
        (Layer::Conv { kernel, bias, stride }, Plain::Image(t)) => {
            Plain::Image(oracle_conv(t, kernel, Some(bias), *stride)?)
        }
        (Layer::Gelu { poly }, x) => match act {
            Activation::Poly => x.map(|v| poly.eval(v)),
            Activation::Exact => x.map(gelu),
        },
        (Layer::Pool, Plain::Image(t)) => Plain::Image(oracle_avgpool2x2(t)?),
        (Layer::Linear(w), x) => Plain::Features(oracle_linear(x.values(), w)?),
        (Layer::PoolLinear(w), Plain::Image(t)) => Plain::Features(oracle_linear(&oracle_global_avgpool(t), w)?),
        (l, _) => return Err(shape_err(l.kind())),
    })
}

/// Plaintext forward pass; with `noise`, Gaussian noise of the given sigma
/// is added to every value right before the listed layers.
fn oracle_forward(
    net: &Network,
    input: &ImageTensor<f64>,
    act: Activation,
    mut noise: Option<(f64, &[usize], &mut ChaCha8Rng)>,
) -> Result<Vec<Plain>> {
    let mut x = Plain::Image(input.clone());
    let mut outs = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        if let Some((sigma, at, rng)) = noise.as_mut() {
            if at.contains(&i) {
                x = x.map(|v| v + *sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        x = plain_layer(layer, &x, act)?;
        outs.push(x.clone());
    }
    Ok(outs)
}

fn check_input(net: &Network, input: &ImageTensor<f64>) -> Result<()> {
    let want = net.spec.input;
    if input.channels() != want.channels || input.side() != want.side {
        return Err(Error::Shape(format!(
            "network takes {}x{}x{} input, got {}x{}x{}",
            want.channels,
            want.side,
            want.side,
            input.channels(),
            input.side(),
            input.side()
        )));
    }
    Ok(())
}

/// Emulated inference beside the oracle.
pub fn run(net: &Network, input: &ImageTensor<f64>) -> Result<Report> {
    check_input(net, input)?;
    let spec = &net.spec;
    let noise = spec.noise;
    let ev = Evaluator::new(spec.shard_size, spec.top_level)?.with_noise(noise);
    let target = net.target_level();
    let reference = oracle_forward(net, input, Activation::Poly, None)?;
    let exact = oracle_forward(net, input, Activation::Exact, None)?;

    let mut value = Value::Image(pack(&ev, input)?);
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut schedule = Vec::new();
    let mut decoded = Plain::Image(input.clone());
    for (i, layer) in net.layers.iter().enumerate() {
        let need = layer_depth(layer, &value);
        let level_in = value.level();
        let wanted = match (&spec.bootstrap.schedule, spec.bootstrap.enabled) {
            (Some(list), _) => list.contains(&i),
            (None, true) => level_in < need,
            (None, false) => false,
        };
        let before_bts = ev.snapshot();
        if wanted {
            value = value.bootstrap(&ev, target)?;
            schedule.push(i);
        }
        let bootstrap_ledger = ev.snapshot().since(&before_bts);
        let level_start = value.level();
        if level_start < need {
            return Err(Error::LevelUnderflow {
                index: i,
                layer: layer_name(i, layer),
                need,
                have: level_start,
            });
        }
        let before = ev.snapshot();
        value = apply_layer(&ev, layer, &value)?;
        let ledger = ev.snapshot().since(&before);
        decoded = value.decode()?;
        let (shards, mode, duplication) = match &value {
            Value::Image(p) => (p.shard_count(), format!("{:?}", p.mode()), p.duplication()),
            Value::Features { .. } => (1, "Features".to_string(), 1),
        };
        layers.push(LayerReport {
            index: i,
            kind: layer.kind().to_string(),
            shards,
            mode,
            duplication,
            level_in,
            bootstrapped: wanted,
            level_start,
            level_out: value.level(),
            depth: level_start - value.level(),
            max_abs_error: decoded.max_abs_diff(&reference[i]),
            max_abs_error_exact: decoded.max_abs_diff(&exact[i]),
            ledger,
            bootstrap_ledger,
        });
    }

    let logits = decoded.values().to_vec();
    let oracle_logits = reference.last().map(|p| p.values().to_vec()).unwrap_or_default();
    let exact_logits = exact.last().map(|p| p.values().to_vec()).unwrap_or_default();
    let ledger = ev.snapshot();
    let noise_estimate_std = if noise.enabled && noise.effective_sigma() > 0.0 {
        Some(noise_estimate(net, input, &schedule, noise.effective_sigma(), 32, noise.seed)?)
    } else {
        None
    };
    Ok(Report {
        name: spec.name.clone(),
        slots: spec.shard_size,
        top_level: spec.top_level,
        noise,
        residual: ResidualStats::between(&logits, &oracle_logits),
        exact_residual: ResidualStats::between(&logits, &exact_logits),
        logits,
        oracle_logits,
        exact_logits,
        noise_estimate_std,
        bootstrap_schedule: schedule,
        weighted_rotations: ledger.weighted_rotations(ev.hoist_weight()),
        keyed_rotations_positive: keyed_cost(&ledger, spec.shard_size, Strategy::Positive),
        keyed_rotations_signed: keyed_cost(&ledger, spec.shard_size, Strategy::Signed),
        ledger,
        layers,
    })
}

/// Logit-residual standard deviation predicted by pushing bootstrap-sized
/// noise through the plaintext network at the given bootstrap points.
pub fn noise_estimate(
    net: &Network,
    input: &ImageTensor<f64>,
    schedule: &[usize],
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let clean = oracle_forward(net, input, Activation::Poly, None)?;
    let clean = clean.last().map(|p| p.values().to_vec()).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut residuals = Vec::with_capacity(trials * clean.len());
    for _ in 0..trials {
        let noisy = oracle_forward(net, input, Activation::Poly, Some((sigma, schedule, &mut rng)))?;
        let last = noisy.last().map(|p| p.values().to_vec()).unwrap_or_default();
        residuals.extend(last.iter().zip(&clean).map(|(a, b)| a - b));
    }
    Ok(ResidualStats::of(&residuals).std)
}

/// Deterministic uniform `[-1, 1]` input for a network.
pub fn sample_input(net: &Network, seed: u64) -> ImageTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let InputShape { channels, side } = net.spec.input;
    ImageTensor::from_fn(channels, side, |_, _, _| rng.random_range(-1.0..=1.0))
}

/// Runs the network `repetitions` times and aggregates ledgers by layer kind.
pub fn bench(net: &Network, input: &ImageTensor<f64>, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Invalid("bench needs at least one repetition".into()));
    }
    let reports = (0..repetitions).map(|_| run(net, input)).collect::<Result<Vec<_>>>()?;
    let first = &reports[0];
    let mut per_kind: BTreeMap<String, LedgerSnapshot> = BTreeMap::new();
    for l in &first.layers {
        per_kind.entry(l.kind.clone()).or_default().absorb(&l.ledger);
        if l.bootstrapped {
            per_kind.entry("bootstrap".into()).or_default().absorb(&l.bootstrap_ledger);
        }
    }
    Ok(BenchReport {
        repetitions,
        deterministic: reports.iter().all(|r| r == first),
        per_kind,
        total: first.ledger.clone(),
        layers: first.layers.clone(),
    })
}
