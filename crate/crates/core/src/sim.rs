//! Reproducible Monte Carlo measurements.
//!
//! Trial `t` of a run seeded with `seed` draws from ChaCha8 keyed by `seed` on
//! stream `t`, so trials are independent of scheduling and of each other, and
//! any subset can be replayed alone.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{compress, llr_from_side_info, ScDecoder};
use crate::construct::{select_indices, CodeSpec, Selection};
use crate::dist::JointSource;
use crate::error::{Error, Result};
use crate::gauss::GaussianKeySource;
use crate::keygen::{derive_at_a, recover_with};
use crate::layered::{
    layered_compress, DiscreteObservations, LayeredDecoder, LayeredSource, LayeredSpec,
};
use crate::sw::{sw_decode_with, sw_encode, MultiUserSource, SwCode};

/// Human-readable description of the per-trial stream derivation.
pub const SEED_DERIVATION: &str = "chacha8(key=seed, stream=trial)";

/// Trials are scheduled in chunks of this size; early stopping is checked
/// between chunks.
const CHUNK: u64 = 64;

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Inverse-CDF sampler of `(x, y)` pairs.
#[derive(Debug, Clone)]
pub struct Sampler {
    cdf: Vec<f64>,
    outcomes: Vec<(u32, u64)>,
}

impl Sampler {
    pub fn new(ls: &LayeredSource) -> Self {
        let mut acc = 0.0;
        let (cdf, outcomes) = ls
            .entries()
            .filter(|e| e.2 > 0.0)
            .map(|(x, y, p)| {
                acc += p;
                (acc, (x, y))
            })
            .unzip();
        Self { cdf, outcomes }
    }

    pub fn binary(s: &JointSource) -> Self {
        Self::new(&LayeredSource::from_binary(s))
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> (u32, u64) {
        let total = *self.cdf.last().expect("sources have mass");
        let u = rng.random::<f64>() * total;
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        self.outcomes[i]
    }

    pub fn block<R: Rng>(&self, rng: &mut R, len: usize) -> (Vec<u32>, Vec<u64>) {
        (0..len).map(|_| self.draw(rng)).unzip()
    }
}

/// Runs `trials` independent trials in parallel and returns their outcomes in
/// trial order. `state` builds per-thread scratch such as decoders.
/// Evaluation stops after the first chunk at which `stop` holds for the
/// outcomes so far; outcomes after that chunk are dropped.
pub fn run_trials<S, T, I, F, P>(
    trials: u64,
    seed: u64,
    state: I,
    run: F,
    stop: P,
) -> Result<Vec<T>>
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &mut ChaCha8Rng) -> Result<T> + Sync + Send,
    P: Fn(&[T]) -> bool,
    T: Send,
{
    let mut out = Vec::with_capacity(trials.min(1 << 20) as usize);
    // Chunks are batched so that every thread has work between stop checks.
    let batch = CHUNK * rayon::current_num_threads() as u64;
    let mut start = 0;
    while start < trials {
        let end = (start + batch).min(trials);
        let part: Vec<T> = (start..end)
            .into_par_iter()
            .map_init(&state, |s, t| run(s, &mut trial_rng(seed, t)))
            .collect::<Result<_>>()?;
        out.extend(part);
        if stop(&out) {
            break;
        }
        start = end;
    }
    Ok(out)
}

fn never<T>(_: &[T]) -> bool {
    false
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorCounts {
    pub trials: u64,
    pub block_errors: u64,
    pub bit_errors: u64,
}

impl ErrorCounts {
    fn add(mut self, block: bool, bits: u64) -> Self {
        self.trials += 1;
        self.block_errors += u64::from(block);
        self.bit_errors += bits;
        self
    }

    pub fn block_error_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.block_errors as f64 / self.trials as f64
        }
    }
}

fn differing(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

fn binary_trial(
    s: &JointSource,
    sampler: &Sampler,
    dec: &mut ScDecoder,
    code: &CodeSpec,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    let (x, y) = sampler.block(rng, code.block_len());
    let x: Vec<u8> = x.into_iter().map(|v| v as u8).collect();
    let block = compress(&x, code)?;
    let llr = llr_from_side_info(s, &y)?;
    let xh = dec.decode(llr.values(), block.payload())?;
    Ok(differing(&x, &xh))
}

/// Block and bit errors of compressing binary blocks drawn from `s`.
pub fn simulate_binary(
    s: &JointSource,
    code: &CodeSpec,
    trials: u64,
    seed: u64,
) -> Result<ErrorCounts> {
    let sampler = Sampler::binary(s);
    let bits = run_trials(
        trials,
        seed,
        || ScDecoder::new(code),
        |dec, rng| binary_trial(s, &sampler, dec, code, rng),
        never,
    )?;
    Ok(bits
        .into_iter()
        .fold(ErrorCounts::default(), |c, b| c.add(b > 0, b)))
}

/// Like [`simulate_binary`], but stops once more than `max_block_errors`
/// blocks have failed. The returned trial count says how far it got.
pub fn simulate_binary_until(
    s: &JointSource,
    code: &CodeSpec,
    trials: u64,
    seed: u64,
    max_block_errors: u64,
) -> Result<ErrorCounts> {
    let sampler = Sampler::binary(s);
    let bits = run_trials(
        trials,
        seed,
        || ScDecoder::new(code),
        |dec, rng| binary_trial(s, &sampler, dec, code, rng),
        |done: &[u64]| done.iter().filter(|&&b| b > 0).count() as u64 > max_block_errors,
    )?;
    Ok(bits
        .into_iter()
        .fold(ErrorCounts::default(), |c, b| c.add(b > 0, b)))
}

/// Errors of successive decoding next to isolated (genie-aided) errors of
/// each layer, measured on the same draws.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LayeredCounts {
    pub trials: u64,
    /// Blocks with any wrong symbol under estimate feed-forward.
    pub block_errors: u64,
    /// Wrong blocks per layer under estimate feed-forward.
    pub layer_errors: Vec<u64>,
    /// Wrong blocks per layer when lower layers are known exactly.
    pub isolated_errors: Vec<u64>,
}

impl LayeredCounts {
    fn new(m: usize) -> Self {
        Self {
            layer_errors: vec![0; m],
            isolated_errors: vec![0; m],
            ..Self::default()
        }
    }

    fn add(mut self, fed: &[bool], isolated: &[bool]) -> Self {
        self.trials += 1;
        self.block_errors += u64::from(fed.iter().any(|&e| e));
        for (c, &e) in self.layer_errors.iter_mut().zip(fed) {
            *c += u64::from(e);
        }
        for (c, &e) in self.isolated_errors.iter_mut().zip(isolated) {
            *c += u64::from(e);
        }
        self
    }

    pub fn max_isolated(&self) -> u64 {
        self.isolated_errors.iter().copied().max().unwrap_or(0)
    }
}

type LayerOutcome = (Vec<bool>, Vec<bool>);

pub fn simulate_layered(
    ls: &LayeredSource,
    spec: &LayeredSpec,
    trials: u64,
    seed: u64,
) -> Result<LayeredCounts> {
    let sampler = Sampler::new(ls);
    let outcomes = run_trials(
        trials,
        seed,
        || LayeredDecoder::new(spec),
        |dec, rng| -> Result<LayerOutcome> {
            let (x, y) = sampler.block(rng, spec.block_len());
            let blocks = layered_compress(spec, &x)?;
            let payloads: Vec<&[u8]> = blocks.iter().map(|b| b.payload()).collect();
            let obs = DiscreteObservations::new(ls, &y)?;
            let fed = dec.decode(&payloads, &obs, None)?;
            let genie = dec.decode(&payloads, &obs, Some(&x))?;
            let wrong = |planes: &[Vec<u8>]| -> Vec<bool> {
                planes
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        p.iter()
                            .zip(&x)
                            .any(|(&b, &s)| u32::from(b) != (s >> i) & 1)
                    })
                    .collect()
            };
            Ok((wrong(&fed.planes), wrong(&genie.planes)))
        },
        never,
    )?;
    Ok(outcomes
        .iter()
        .fold(LayeredCounts::new(spec.m as usize), |c, (f, g)| c.add(f, g)))
}

/// Successive decoding of all users against genie-aided decoding, where each
/// user is encoded separately from its own block.
pub fn simulate_sw(
    src: &MultiUserSource,
    code: &SwCode,
    trials: u64,
    seed: u64,
) -> Result<LayeredCounts> {
    let sampler = Sampler::new(src.as_layered());
    let m = src.users() as usize;
    let outcomes = run_trials(
        trials,
        seed,
        || LayeredDecoder::new(&code.spec),
        |dec, rng| -> Result<LayerOutcome> {
            let (x, y) = sampler.block(rng, code.spec.block_len());
            let users = src.split(&x);
            let blocks = users
                .iter()
                .enumerate()
                .map(|(i, b)| sw_encode(code, i as u32 + 1, b))
                .collect::<Result<Vec<_>>>()?;
            let fed = sw_decode_with(dec, src, &blocks, &y, None)?;
            let genie = sw_decode_with(dec, src, &blocks, &y, Some(&users))?;
            let wrong = |est: &[Vec<u8>]| -> Vec<bool> {
                est.iter().zip(&users).map(|(a, b)| a != b).collect()
            };
            Ok((wrong(&fed), wrong(&genie)))
        },
        never,
    )?;
    Ok(outcomes
        .iter()
        .fold(LayeredCounts::new(m), |c, (f, g)| c.add(f, g)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KeyCounts {
    pub trials: u64,
    /// Trials whose key estimate differs from the key anywhere.
    pub key_errors: u64,
    pub key_bit_errors: u64,
    pub key_bits: u64,
}

impl KeyCounts {
    fn add(mut self, bits: u64, len: u64) -> Self {
        self.trials += 1;
        self.key_errors += u64::from(bits > 0);
        self.key_bit_errors += bits;
        self.key_bits = len;
        self
    }

    pub fn disagreement_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.key_errors as f64 / self.trials as f64
        }
    }
}

fn key_mismatch(a: &[Vec<u8>], b: &[Vec<u8>]) -> u64 {
    a.iter().zip(b).map(|(x, y)| differing(x, y)).sum()
}

/// Key agreement over a discrete source.
pub fn simulate_keygen(
    ls: &LayeredSource,
    spec: &LayeredSpec,
    trials: u64,
    seed: u64,
) -> Result<KeyCounts> {
    let sampler = Sampler::new(ls);
    let outcomes = run_trials(
        trials,
        seed,
        || LayeredDecoder::new(spec),
        |dec, rng| -> Result<(u64, u64)> {
            let (x, y) = sampler.block(rng, spec.block_len());
            let km = derive_at_a(spec, &x)?;
            let obs = DiscreteObservations::new(ls, &y)?;
            let est = recover_with(dec, spec, &obs, &km.public)?;
            Ok((key_mismatch(&km.key, &est), km.key_len() as u64))
        },
        never,
    )?;
    Ok(outcomes
        .into_iter()
        .fold(KeyCounts::default(), |c, (b, l)| c.add(b, l)))
}

/// Key agreement from correlated Gaussian samples; terminal B decodes with
/// exact Gaussian cell posteriors.
pub fn simulate_gauss_keygen(
    g: &GaussianKeySource,
    spec: &LayeredSpec,
    trials: u64,
    seed: u64,
) -> Result<KeyCounts> {
    let outcomes = run_trials(
        trials,
        seed,
        || LayeredDecoder::new(spec),
        |dec, rng| -> Result<(u64, u64)> {
            let (xr, yr) = g.sample(rng, spec.block_len());
            let km = derive_at_a(spec, &g.symbols(&xr))?;
            let est = recover_with(dec, spec, &g.observations(&yr), &km.public)?;
            Ok((key_mismatch(&km.key, &est), km.key_len() as u64))
        },
        never,
    )?;
    Ok(outcomes
        .into_iter()
        .fold(KeyCounts::default(), |c, (b, l)| c.add(b, l)))
}

/// One row of a scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub n: u32,
    pub block_len: usize,
    /// Smallest rate (in steps of `1/N`) meeting the target, or `None` when
    /// even rate 1 misses it.
    pub rate: Option<f64>,
    /// `rate - H(X|Y)`.
    pub gap: Option<f64>,
    /// Measured block error at `rate`.
    pub block_error: Option<f64>,
    pub trials: u64,
    /// Mean encode plus decode time per block, in seconds.
    pub seconds_per_block: f64,
}

/// Smallest number of transmitted indices, with the ranking of `spec`, whose
/// block error over `trials` draws is at most `target`.
///
/// Every probe reuses the same seed, so the codes compared see the same
/// source blocks.
pub fn scaling_point(
    s: &JointSource,
    spec: &CodeSpec,
    target: f64,
    trials: u64,
    seed: u64,
) -> Result<ScalingPoint> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidParameter(format!(
            "target error {target} outside [0, 1)"
        )));
    }
    let len = spec.block_len();
    let allowed = (target * trials as f64).floor() as u64;
    let probe = |count: usize| -> Result<Option<ErrorCounts>> {
        let code = select_indices(spec, Selection::Rate(count as f64 / len as f64))?;
        let c = simulate_binary_until(s, &code, trials, seed, allowed)?;
        Ok((c.trials == trials && c.block_errors <= allowed).then_some(c))
    };
    let h = s.cond_entropy();
    // Failing `lo`, passing `hi`; rates below the entropy almost surely fail,
    // so the search gallops upward from there.
    let start = ((h * len as f64).floor() as usize).min(len);
    let mut best;
    let mut lo;
    let mut hi;
    if let Some(c) = probe(start)? {
        if start == 0 {
            return finish(s, spec, 0, Some(c), trials, seed);
        }
        best = Some(c);
        hi = start;
        lo = 0;
        if let Some(c0) = probe(0)? {
            return finish(s, spec, 0, Some(c0), trials, seed);
        }
    } else {
        lo = start;
        let mut step = (len / 256).max(1);
        loop {
            let cand = (lo + step).min(len);
            if let Some(c) = probe(cand)? {
                best = Some(c);
                hi = cand;
                break;
            }
            if cand == len {
                return finish(s, spec, len, None, trials, seed);
            }
            lo = cand;
            step *= 2;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match probe(mid)? {
            Some(c) => {
                best = Some(c);
                hi = mid;
            }
            None => lo = mid,
        }
    }
    finish(s, spec, hi, best, trials, seed)
}

fn finish(
    s: &JointSource,
    spec: &CodeSpec,
    count: usize,
    counts: Option<ErrorCounts>,
    trials: u64,
    seed: u64,
) -> Result<ScalingPoint> {
    let len = spec.block_len();
    let code = select_indices(spec, Selection::Rate(count as f64 / len as f64))?;
    let seconds_per_block = time_block(s, &code, seed)?;
    let rate = counts.map(|_| count as f64 / len as f64);
    Ok(ScalingPoint {
        n: spec.n(),
        block_len: len,
        rate,
        gap: rate.map(|r| r - s.cond_entropy()),
        block_error: counts.map(|c| c.block_error_rate()),
        trials,
        seconds_per_block,
    })
}

/// Mean wall-clock time of one encode plus decode, single-threaded.
pub fn time_block(s: &JointSource, code: &CodeSpec, seed: u64) -> Result<f64> {
    let sampler = Sampler::binary(s);
    let mut dec = ScDecoder::new(code);
    let reps = (1usize << 16).div_ceil(code.block_len()).clamp(3, 64);
    let mut rng = trial_rng(seed, u64::MAX);
    let draws: Vec<(Vec<u8>, Vec<f64>)> = (0..reps)
        .map(|_| {
            let (x, y) = sampler.block(&mut rng, code.block_len());
            let llr = llr_from_side_info(s, &y).map(|l| l.values().to_vec());
            llr.map(|l| (x.into_iter().map(|v| v as u8).collect(), l))
        })
        .collect::<Result<_>>()?;
    let start = Instant::now();
    for (x, llr) in &draws {
        let block = compress(x, code)?;
        dec.decode(llr, block.payload())?;
    }
    Ok(start.elapsed().as_secs_f64() / reps as f64)
}
