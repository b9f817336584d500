//! Equiprobable scalar quantization of a standard Gaussian and the mutual
//! information it preserves with a correlated Gaussian observation.
//!
//! `X, Y` are standard normal with correlation `rho`, so `Y = rho X + sigma N`
//! with `sigma^2 = 1 - rho^2`. The quantizer splits the line into `k` cells of
//! probability `1/k` and reconstructs each cell by its conditional mean.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layered::{LayeredSource, SymbolLikelihood};

/// `sqrt(2/pi) + 2 sqrt(2 pi)` plus a margin, the smallest admissible constant
/// in the quantization rate-loss bound.
pub const DEFAULT_LEMMA7_C: f64 = 5.811_141_110_064_866 + 1e-6;

/// Above this many cells [`mi_quantized`] switches to Monte Carlo.
pub const QUADRATURE_MAX_CELLS: usize = 4096;

/// Absolute tolerance per cell integral, in bits. With many cells the
/// per-cell share of [`MI_TOLERANCE`] is used when it is tighter.
pub const CELL_TOLERANCE: f64 = 1e-7;

/// Overall tolerance beyond which quadrature is reported as failed.
pub const MI_TOLERANCE: f64 = 1e-6;

const TAIL: f64 = 12.0;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `P(a <= Z < b)` for standard normal `Z`, evaluated on the tail that keeps
/// relative precision.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a / SQRT_2) - libm::erfc(b / SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / SQRT_2) - libm::erfc(-a / SQRT_2))
    } else {
        1.0 - normal_cdf(a) - 0.5 * libm::erfc(b / SQRT_2)
    }
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against `erfc`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.024_25;
    let x = if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement.
    let e = if x < 0.0 {
        normal_cdf(x) - p
    } else {
        (1.0 - p) - 0.5 * libm::erfc(x / SQRT_2)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Equiprobable quantizer of the standard normal with conditional-mean levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantizer {
    k: usize,
    /// `k + 1` boundaries, from `-inf` to `+inf`.
    boundaries: Vec<f64>,
    levels: Vec<f64>,
}

pub fn build_quantizer(k: usize) -> Result<Quantizer> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "quantizer needs k >= 2, got {k}"
        )));
    }
    let mut boundaries = Vec::with_capacity(k + 1);
    boundaries.push(f64::NEG_INFINITY);
    for i in 1..k {
        // Exact zero for the median keeps the symmetric cells symmetric.
        let b = if 2 * i == k {
            0.0
        } else {
            normal_quantile(i as f64 / k as f64)
        };
        boundaries.push(b);
    }
    boundaries.push(f64::INFINITY);
    let levels = boundaries
        .windows(2)
        .map(|w| k as f64 * (normal_pdf(w[0]) - normal_pdf(w[1])))
        .collect();
    Ok(Quantizer {
        k,
        boundaries,
        levels,
    })
}

impl Quantizer {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Cell `i` covers `[boundaries[i], boundaries[i+1])`.
    pub fn cell_probability(&self, i: usize) -> f64 {
        normal_interval(self.boundaries[i], self.boundaries[i + 1])
    }

    /// `E[X~^2]` with every cell weighted `1/k`.
    pub fn second_moment(&self) -> f64 {
        self.levels.iter().map(|l| l * l).sum::<f64>() / self.k as f64
    }

    /// 0-based cell of `x`; a boundary value belongs to the cell above it.
    pub fn cell_of(&self, x: f64) -> usize {
        // Interior boundaries are boundaries[1..k].
        self.boundaries[1..self.k].partition_point(|&b| b <= x)
    }

    /// `P(cell i | Y = y)` under correlation `rho`.
    pub fn cell_posterior(&self, i: usize, y: f64, rho: f64) -> f64 {
        let sigma = (1.0 - rho * rho).sqrt();
        let mean = rho * y;
        let lo = self.boundaries[i];
        let hi = self.boundaries[i + 1];
        if sigma == 0.0 {
            return f64::from(u8::from(lo <= mean && mean < hi));
        }
        normal_interval((lo - mean) / sigma, (hi - mean) / sigma)
    }
}

/// Cell indices and reconstruction levels of the samples.
pub fn quantize(q: &Quantizer, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let cells: Vec<usize> = x.iter().map(|&v| q.cell_of(v)).collect();
    let levels = cells.iter().map(|&c| q.levels[c]).collect();
    (cells, levels)
}

/// Correlation between `X~` and `Y`: `rho sqrt(E[X~^2])`.
pub fn induced_correlation(q: &Quantizer, rho: f64) -> f64 {
    rho * q.second_moment().sqrt()
}

/// `I(X;Y) = 1/2 log2 1/(1 - rho^2)`.
pub fn mi_gaussian(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "|rho| = {} must be below 1",
            rho.abs()
        )));
    }
    Ok(-0.5 * (1.0 - rho * rho).log2())
}

/// Right-hand side of the rate-loss bound
/// `I(X;Y) - (log2 e / 2) (rho^2 C / (1 - rho^2)) sqrt(ln k / k)`.
pub fn lemma7_bound(rho: f64, k: usize, c: f64) -> Result<f64> {
    let mi = mi_gaussian(rho)?;
    let kf = k as f64;
    let penalty = 0.5 / LN_2 * (rho * rho * c / (1.0 - rho * rho)) * (kf.ln() / kf).sqrt();
    Ok(mi - penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMethod {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiEstimate {
    pub bits: f64,
    /// Quadrature error estimate, or the Monte Carlo standard error.
    pub error: f64,
    pub method: MiMethod,
}

/// `I(Y; X~)` in bits.
pub fn mi_quantized(q: &Quantizer, rho: f64) -> Result<MiEstimate> {
    mi_gaussian(rho)?;
    if rho == 0.0 {
        return Ok(MiEstimate {
            bits: 0.0,
            error: 0.0,
            method: MiMethod::Quadrature,
        });
    }
    if q.k > QUADRATURE_MAX_CELLS {
        return Ok(mi_quantized_monte_carlo(q, rho, 20_000, 0x5eed));
    }
    let log_k = (q.k as f64).log2();
    let cell_tol = CELL_TOLERANCE.min(MI_TOLERANCE / q.k as f64);
    let mut total = 0.0;
    let mut err = 0.0;
    for i in 0..q.k {
        // (1/k) p(y|i) log2(p(y|i)/p(y)) = phi(y) q_i(y) log2(k q_i(y))
        let f = |y: f64| {
            let qi = q.cell_posterior(i, y, rho);
            if qi <= 0.0 {
                0.0
            } else {
                normal_pdf(y) * qi * (qi.log2() + log_k)
            }
        };
        let (v, e) = adaptive_gauss_kronrod(&f, -TAIL, TAIL, cell_tol)?;
        total += v;
        err += e;
    }
    if err > MI_TOLERANCE {
        return Err(Error::Quadrature(err));
    }
    Ok(MiEstimate {
        bits: total,
        error: err,
        method: MiMethod::Quadrature,
    })
}

/// Sample average of `sum_i q_i(Y) log2(k q_i(Y))` over `Y ~ N(0, 1)`.
pub fn mi_quantized_monte_carlo(q: &Quantizer, rho: f64, samples: usize, seed: u64) -> MiEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_k = (q.k as f64).log2();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let y = normal_quantile(rng.random::<f64>());
        let v: f64 = (0..q.k)
            .map(|i| {
                let qi = q.cell_posterior(i, y, rho);
                if qi > 0.0 {
                    qi * (qi.log2() + log_k)
                } else {
                    0.0
                }
            })
            .sum();
        s1 += v;
        s2 += v * v;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    MiEstimate {
        bits: mean,
        error: (var / n).sqrt(),
        method: MiMethod::MonteCarlo,
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for j in 0..7 {
        let x = h * GK_NODES[j];
        let s = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G7_WEIGHTS[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive 7/15-point Gauss-Kronrod quadrature. Returns the
/// integral and its error estimate.
pub fn adaptive_gauss_kronrod<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    const MAX_INTERVALS: usize = 2000;
    let (v, e) = gk15(f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if total_err <= tol {
            break;
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(total_err));
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    let value = intervals.iter().map(|iv| iv.2).sum();
    let err = intervals.iter().map(|iv| iv.3).sum();
    Ok((value, err))
}

/// Correlated Gaussian pair prepared for key agreement: `X` is quantized to
/// `2^m` equiprobable cells, and `Y` to `k_y` cells for code construction only.
#[derive(Debug, Clone)]
pub struct GaussianKeySource {
    rho: f64,
    x_quantizer: Quantizer,
    y_quantizer: Quantizer,
}

impl GaussianKeySource {
    pub fn new(rho: f64, m: u32, k_y: usize) -> Result<Self> {
        mi_gaussian(rho)?;
        if m == 0 || m > 12 {
            return Err(Error::InvalidParameter(format!("m = {m} outside 1..=12")));
        }
        Ok(Self {
            rho,
            x_quantizer: build_quantizer(1 << m)?,
            y_quantizer: build_quantizer(k_y)?,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn x_quantizer(&self) -> &Quantizer {
        &self.x_quantizer
    }

    /// Joint law of the `X` cell and the `Y` cell. Construction against this
    /// coarser `Y` only overstates the conditional entropies.
    pub fn discretized(&self) -> Result<LayeredSource> {
        let qx = &self.x_quantizer;
        let qy = &self.y_quantizer;
        let mut masses = Vec::with_capacity(qx.k * qy.k);
        for b in 0..qy.k {
            let lo = qy.boundaries[b].max(-TAIL);
            let hi = qy.boundaries[b + 1].min(TAIL);
            for a in 0..qx.k {
                let f = |y: f64| normal_pdf(y) * qx.cell_posterior(a, y, self.rho);
                let (v, _) = adaptive_gauss_kronrod(&f, lo, hi, 1e-13)?;
                masses.push((a as u32, b as u64, v));
            }
        }
        let total: f64 = masses.iter().map(|m| m.2).sum();
        let m = qx.k.trailing_zeros();
        LayeredSource::new(m, masses.into_iter().map(|(a, b, v)| (a, b, v / total)))
    }

    /// `n` i.i.d. draws of `(X, Y)`.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
        let sigma = (1.0 - self.rho * self.rho).sqrt();
        (0..n)
            .map(|_| {
                let x = normal_quantile(rng.random::<f64>());
                let z = normal_quantile(rng.random::<f64>());
                (x, self.rho * x + sigma * z)
            })
            .unzip()
    }

    /// Cell indices of real samples of `X`, as `2^m`-ary symbols.
    pub fn symbols(&self, x: &[f64]) -> Vec<u32> {
        x.iter()
            .map(|&v| self.x_quantizer.cell_of(v) as u32)
            .collect()
    }

    /// Exact cell posteriors for real-valued observations of `Y`.
    pub fn observations<'a>(&'a self, y: &'a [f64]) -> GaussianObservations<'a> {
        GaussianObservations { source: self, y }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GaussianObservations<'a> {
    source: &'a GaussianKeySource,
    y: &'a [f64],
}

impl SymbolLikelihood for GaussianObservations<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn weights(&self, t: usize, out: &mut [f64]) {
        let q = &self.source.x_quantizer;
        for (i, o) in out.iter_mut().enumerate() {
            *o = q.cell_posterior(i, self.y[t], self.source.rho);
        }
    }
}
