//! Code construction: per-index reliability of the synthetic sources.
//!
//! [`construct_degraded`] follows every `+`/`-` step with entropy binning so the
//! synthetic alphabets stay at `2k + 1` symbols; the resulting metrics are upper
//! bounds on the true conditional entropies and Bhattacharyya coefficients.
//! [`exact_construct`] computes the same quantities without binning and serves
//! as the reference for small block lengths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{binary_entropy, weighted_entropy, JointSource, SideMass, Step, TransformPath};
use crate::error::{Error, Result};

/// Posteriors closer than this are sent to the symmetric bin.
pub const EQUALITY_TOLERANCE: f64 = 1e-12;

/// Upper limit for [`BinParams::for_gap`]; the analytic choice grows like
/// `n 2^n / eps` and the binned transforms cost `O(k^2)` per node.
pub const DEFAULT_K_CAP: u32 = 64;

/// Number of entropy bins per most-likely symbol; the degraded alphabet has
/// `2k + 1` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinParams {
    k: u32,
}

impl BinParams {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(Self { k })
    }

    /// `k = ceil(n 2^n / (eps / 2))`, capped at [`DEFAULT_K_CAP`].
    pub fn for_gap(n: u32, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("gap {eps} outside (0, 1)")));
        }
        let analytic = (f64::from(n) * (1u64 << n) as f64 / (eps / 2.0)).ceil();
        let k = analytic.clamp(1.0, f64::from(DEFAULT_K_CAP)) as u32;
        Self::new(k)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn bin_count(&self) -> usize {
        2 * self.k as usize + 1
    }

    /// Bin of a side symbol with masses `(p0, p1)`: `2i + j` for entropy bin
    /// `i` in `0..k` and most-likely symbol `j`, or `2k` for the symmetric bin.
    #[inline]
    pub fn bin_of(&self, p0: f64, p1: f64) -> usize {
        let t = p0 + p1;
        let q0 = p0 / t;
        let q1 = p1 / t;
        if (q0 - q1).abs() <= EQUALITY_TOLERANCE {
            return 2 * self.k as usize;
        }
        let j = usize::from(q1 > q0);
        let h = binary_entropy(q0);
        let i = ((h * f64::from(self.k)) as usize).min(self.k as usize - 1);
        2 * i + j
    }
}

/// Reliability of one synthetic index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexMetric {
    #[serde(rename = "h")]
    pub h_upper: f64,
    #[serde(rename = "z")]
    pub z_upper: f64,
}

/// Block length `2^n`, per-index metrics, and the transmitted index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCodeSpec")]
pub struct CodeSpec {
    n: u32,
    k: Option<u32>,
    metrics: Vec<IndexMetric>,
    selected: Vec<usize>,
}

#[derive(Deserialize)]
struct RawCodeSpec {
    n: u32,
    k: Option<u32>,
    metrics: Vec<IndexMetric>,
    selected: Vec<usize>,
}

impl TryFrom<RawCodeSpec> for CodeSpec {
    type Error = Error;

    fn try_from(raw: RawCodeSpec) -> Result<Self> {
        Self::new(raw.n, raw.k, raw.metrics, raw.selected)
    }
}

impl CodeSpec {
    pub fn new(
        n: u32,
        k: Option<u32>,
        metrics: Vec<IndexMetric>,
        mut selected: Vec<usize>,
    ) -> Result<Self> {
        if n >= usize::BITS - 1 {
            return Err(Error::InvalidParameter(format!("depth {n} too large")));
        }
        let len = 1usize << n;
        if metrics.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: metrics.len(),
            });
        }
        for m in &metrics {
            let ok = |v: f64| (-1e-9..=1.0 + 1e-9).contains(&v);
            if !ok(m.h_upper) || !ok(m.z_upper) {
                return Err(Error::InvalidParameter(format!(
                    "metric ({}, {}) outside [0, 1]",
                    m.h_upper, m.z_upper
                )));
            }
        }
        selected.sort_unstable();
        selected.dedup();
        if selected.last().is_some_and(|&i| i >= len) {
            return Err(Error::InvalidParameter(
                "selected index out of range".into(),
            ));
        }
        Ok(Self {
            n,
            k,
            metrics,
            selected,
        })
    }

    /// A code with the given transmitted set and no reliability information.
    pub fn with_selected(n: u32, selected: Vec<usize>) -> Result<Self> {
        let metrics = vec![
            IndexMetric {
                h_upper: 0.0,
                z_upper: 0.0
            };
            1usize << n
        ];
        Self::new(n, None, metrics, selected)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> Option<u32> {
        self.k
    }

    pub fn block_len(&self) -> usize {
        1 << self.n
    }

    pub fn metrics(&self) -> &[IndexMetric] {
        &self.metrics
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn rate(&self) -> f64 {
        self.selected.len() as f64 / self.block_len() as f64
    }

    /// Indices not in the transmitted set, increasing.
    pub fn unselected(&self) -> Vec<usize> {
        let mask = self.selected_mask();
        (0..self.block_len()).filter(|&i| !mask[i]).collect()
    }

    pub fn selected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.block_len()];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }

    /// Mean of `h_upper` over all indices.
    pub fn mean_entropy(&self) -> f64 {
        self.metrics.iter().map(|m| m.h_upper).sum::<f64>() / self.block_len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("CodeSpec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// How the transmitted set is chosen from the metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// The `ceil(rate N)` indices with the largest `h_upper`.
    Rate(f64),
    /// Indices with `z_upper >= threshold`.
    ZThreshold(f64),
    /// Indices with `h_upper >= threshold`.
    EntropyThreshold(f64),
}

pub fn select_indices(spec: &CodeSpec, mode: Selection) -> Result<CodeSpec> {
    let check = |v: f64, what: &str| {
        if (0.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{what} {v} outside [0, 1]"
            )))
        }
    };
    let metrics = &spec.metrics;
    let selected: Vec<usize> = match mode {
        Selection::Rate(rate) => {
            check(rate, "rate")?;
            let len = spec.block_len();
            // Guard against 0.3 * 10 = 3.0000000000000004.
            let count = ((rate * len as f64 - 1e-9).ceil().max(0.0) as usize).min(len);
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &b| {
                let (ma, mb) = (metrics[a], metrics[b]);
                mb.h_upper
                    .total_cmp(&ma.h_upper)
                    .then(mb.z_upper.total_cmp(&ma.z_upper))
                    .then(a.cmp(&b))
            });
            order.truncate(count);
            order
        }
        Selection::ZThreshold(t) => {
            check(t, "z threshold")?;
            (0..spec.block_len())
                .filter(|&i| metrics[i].z_upper >= t)
                .collect()
        }
        Selection::EntropyThreshold(t) => {
            check(t, "entropy threshold")?;
            (0..spec.block_len())
                .filter(|&i| metrics[i].h_upper >= t)
                .collect()
        }
    };
    CodeSpec::new(spec.n, spec.k, spec.metrics.clone(), selected)
}

/// Merges side symbols into the `2k + 1` entropy bins.
pub fn degrade(s: &JointSource, p: BinParams) -> JointSource {
    let mut bins = vec![(0.0, 0.0); p.bin_count()];
    for sym in s.symbols() {
        let b = p.bin_of(sym.p0, sym.p1);
        bins[b].0 += sym.p0;
        bins[b].1 += sym.p1;
    }
    JointSource::from_unnormalized(
        bins.into_iter()
            .enumerate()
            .map(|(id, (p0, p1))| SideMass {
                id: id as u64,
                p0,
                p1,
            })
            .collect(),
    )
}

type Node = Vec<(f64, f64)>;

fn node_of(s: &JointSource) -> Node {
    s.symbols().iter().map(|m| (m.p0, m.p1)).collect()
}

fn node_metric(node: &[(f64, f64)]) -> IndexMetric {
    let h: f64 = node.iter().map(|&(a, b)| weighted_entropy(a, b)).sum();
    let z: f64 = node.iter().map(|&(a, b)| (a * b).sqrt()).sum();
    IndexMetric {
        h_upper: h.clamp(0.0, 1.0),
        z_upper: (2.0 * z).min(1.0),
    }
}

#[inline]
fn minus_pair(a: (f64, f64), c: (f64, f64)) -> (f64, f64) {
    (a.0 * c.0 + a.1 * c.1, a.1 * c.0 + a.0 * c.1)
}

#[inline]
fn plus_pairs(a: (f64, f64), c: (f64, f64)) -> [(f64, f64); 2] {
    [(a.0 * c.0, a.1 * c.1), (a.1 * c.0, a.0 * c.1)]
}

fn finish_bins(bins: Vec<(f64, f64)>) -> Node {
    let mut node: Node = bins.into_iter().filter(|&(a, b)| a + b > 0.0).collect();
    let total: f64 = node.iter().map(|&(a, b)| a + b).sum();
    for v in &mut node {
        v.0 /= total;
        v.1 /= total;
    }
    node
}

fn transform_degraded(node: &[(f64, f64)], step: Step, p: BinParams) -> Node {
    let mut bins = vec![(0.0, 0.0); p.bin_count()];
    let mut add = |(u0, u1): (f64, f64)| {
        if u0 + u1 > 0.0 {
            let b = p.bin_of(u0, u1);
            bins[b].0 += u0;
            bins[b].1 += u1;
        }
    };
    for &a in node {
        for &c in node {
            match step {
                Step::Minus => add(minus_pair(a, c)),
                Step::Plus => plus_pairs(a, c).into_iter().for_each(&mut add),
            }
        }
    }
    finish_bins(bins)
}

fn transform_exact(node: &[(f64, f64)], step: Step) -> Node {
    let mut out =
        Vec::with_capacity(node.len() * node.len() * if step == Step::Plus { 2 } else { 1 });
    for &a in node {
        for &c in node {
            match step {
                Step::Minus => out.push(minus_pair(a, c)),
                Step::Plus => out.extend(plus_pairs(a, c)),
            }
        }
    }
    finish_bins(out)
}

/// Metric of the transformed node, computed without materializing it.
fn transform_metric_streamed(node: &[(f64, f64)], step: Step) -> IndexMetric {
    let (mut h, mut z) = (0.0, 0.0);
    let mut acc = |(u0, u1): (f64, f64)| {
        if u0 + u1 > 0.0 {
            h += weighted_entropy(u0, u1);
            z += (u0 * u1).sqrt();
        }
    };
    for &a in node {
        for &c in node {
            match step {
                Step::Minus => acc(minus_pair(a, c)),
                Step::Plus => plus_pairs(a, c).into_iter().for_each(&mut acc),
            }
        }
    }
    IndexMetric {
        h_upper: h.clamp(0.0, 1.0),
        z_upper: (2.0 * z).min(1.0),
    }
}

fn children<F>(level: &[Node], f: F) -> Vec<Node>
where
    F: Fn(&[(f64, f64)], Step) -> Node + Sync,
{
    level
        .par_iter()
        .flat_map_iter(|node| [f(node, Step::Minus), f(node, Step::Plus)])
        .collect()
}

/// Binned construction of depth `n`: every transform is followed by
/// [`degrade`]. The root keeps the exact source.
pub fn construct_degraded(s: &JointSource, n: u32, p: BinParams) -> CodeSpec {
    let mut level = vec![node_of(s)];
    for _ in 0..n {
        level = children(&level, |node, step| transform_degraded(node, step, p));
    }
    let metrics = level.par_iter().map(|node| node_metric(node)).collect();
    CodeSpec::new(n, Some(p.k()), metrics, Vec::new()).expect("metrics have length 2^n")
}

/// Exact per-index metrics. Levels `1..n` are materialized and must fit
/// `budget` symbols each; the last level is streamed and may take up to
/// `64 * budget` pair evaluations per node.
pub fn exact_construct_with_budget(s: &JointSource, n: u32, budget: usize) -> Result<CodeSpec> {
    if n == 0 {
        let metrics = vec![node_metric(&node_of(s))];
        return CodeSpec::new(0, None, metrics, Vec::new());
    }
    let mut level = vec![node_of(s)];
    for _ in 0..n - 1 {
        let needed = level
            .iter()
            .map(|nd| 2 * (nd.len() as u128).pow(2))
            .max()
            .unwrap_or(0);
        if needed > budget as u128 {
            return Err(Error::BudgetExceeded {
                needed,
                budget: budget as u128,
            });
        }
        level = children(&level, transform_exact);
    }
    let work = level
        .iter()
        .map(|nd| 2 * (nd.len() as u128).pow(2))
        .max()
        .unwrap_or(0);
    if work > 64 * budget as u128 {
        return Err(Error::BudgetExceeded {
            needed: work,
            budget: 64 * budget as u128,
        });
    }
    let metrics = level
        .par_iter()
        .flat_map_iter(|node| {
            [
                transform_metric_streamed(node, Step::Minus),
                transform_metric_streamed(node, Step::Plus),
            ]
        })
        .collect();
    CodeSpec::new(n, None, metrics, Vec::new())
}

pub fn exact_construct(s: &JointSource, n: u32) -> Result<CodeSpec> {
    exact_construct_with_budget(s, n, crate::dist::DEFAULT_ALPHABET_BUDGET)
}

/// Worst-case Bhattacharyya evolution: `z -> z^2` on `Plus`, `z -> 2z - z^2`
/// on `Minus`.
pub fn propagate_z_bounds(z0: f64, path: &TransformPath) -> f64 {
    path.steps()
        .iter()
        .fold(z0.clamp(0.0, 1.0), |z, step| match step {
            Step::Plus => z * z,
            Step::Minus => 2.0 * z - z * z,
        })
}

/// Degraded construction to depth `tracked`, then bound propagation for the
/// remaining `n - tracked` levels. Entropies past the tracked depth are
/// bounded through `H <= log2(1 + Z)`.
pub fn construct_with_bounds(
    s: &JointSource,
    n: u32,
    tracked: u32,
    p: BinParams,
) -> Result<CodeSpec> {
    if tracked > n {
        return Err(Error::InvalidParameter(format!(
            "tracked depth {tracked} exceeds n = {n}"
        )));
    }
    let base = construct_degraded(s, tracked, p);
    let extra = n - tracked;
    let metrics = (0..1usize << n)
        .map(|i| {
            let parent = base.metrics()[i >> extra];
            if extra == 0 {
                return parent;
            }
            let tail = TransformPath::from_index(i & ((1 << extra) - 1), extra);
            let z = propagate_z_bounds(parent.z_upper, &tail);
            IndexMetric {
                h_upper: (1.0 + z).log2().min(1.0),
                z_upper: z,
            }
        })
        .collect();
    CodeSpec::new(n, Some(p.k()), metrics, Vec::new())
}
