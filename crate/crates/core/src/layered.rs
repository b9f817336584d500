//! Onion-peeling codes for sources on `2^m` symbols.
//!
//! A symbol `x` is split into bit-planes, layer 1 being the least significant
//! bit. Layer `i` is coded as a binary source whose side information is `Y`
//! together with layers `1..i`, and the decoder peels the layers in that order,
//! feeding its own estimates of the lower layers forward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{clamp_llr, compress, CompressedBlock, ScDecoder};
use crate::construct::{
    construct_degraded, exact_construct, select_indices, BinParams, CodeSpec, Selection,
};
use crate::dist::{weighted_entropy, JointSource, SideMass, MASS_TOLERANCE};
use crate::error::{Error, Result};

/// Tag stored with serialized layered codes.
pub const BIT_ORDER: &str = "lsb-first";

/// Joint law of `X` on `{0, .., 2^m - 1}` and a finite side symbol `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredSource {
    m: u32,
    /// `P(x, y)` for every `x`, keyed by `y`.
    masses: BTreeMap<u64, Vec<f64>>,
}

impl LayeredSource {
    pub fn new<I>(m: u32, masses: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u64, f64)>,
    {
        if m == 0 || m > 16 {
            return Err(Error::InvalidParameter(format!(
                "layer count {m} outside 1..=16"
            )));
        }
        let size = 1usize << m;
        let mut table: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut total = 0.0;
        for (x, y, p) in masses {
            if x as usize >= size {
                return Err(Error::InvalidDistribution(format!(
                    "symbol {x} outside 0..{size}"
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "mass {p} at ({x}, {y})"
                )));
            }
            total += p;
            table.entry(y).or_insert_with(|| vec![0.0; size])[x as usize] += p;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1"
            )));
        }
        table.retain(|_, row| row.iter().any(|&p| p > 0.0));
        Ok(Self { m, masses: table })
    }

    /// Embeds an alphabet of `size` symbols into the next power of two.
    pub fn with_alphabet_size<I>(size: u32, masses: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u64, f64)>,
    {
        if size < 2 {
            return Err(Error::InvalidParameter(format!(
                "alphabet size {size} below 2"
            )));
        }
        let m = u32::BITS - (size - 1).leading_zeros();
        let masses: Vec<_> = masses.into_iter().collect();
        if let Some(&(x, _, _)) = masses.iter().find(|(x, _, _)| *x >= size) {
            return Err(Error::InvalidDistribution(format!(
                "symbol {x} outside 0..{size}"
            )));
        }
        Self::new(m, masses)
    }

    /// Single-layer view of a binary source.
    pub fn from_binary(s: &JointSource) -> Self {
        let masses = s
            .symbols()
            .iter()
            .map(|m| (m.id, vec![m.p0, m.p1]))
            .collect();
        Self { m: 1, masses }
    }

    /// Parses lines `x y mass`.
    pub fn parse(m: u32, text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            let x = f[0]
                .parse::<u32>()
                .map_err(|e| err(format!("symbol: {e}")))?;
            let y = f[1]
                .parse::<u64>()
                .map_err(|e| err(format!("side symbol: {e}")))?;
            let p = f[2].parse::<f64>().map_err(|e| err(format!("mass: {e}")))?;
            triples.push((x, y, p));
        }
        Self::new(m, triples)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn alphabet_size(&self) -> usize {
        1 << self.m
    }

    pub fn side_symbols(&self) -> impl Iterator<Item = u64> + '_ {
        self.masses.keys().copied()
    }

    /// `P(x, y)` for all `x`, or `None` if `y` has no mass.
    pub fn row(&self, y: u64) -> Option<&[f64]> {
        self.masses.get(&y).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, u64, f64)> + '_ {
        self.masses.iter().flat_map(|(&y, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(move |(x, &p)| (x as u32, y, p))
        })
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.alphabet_size()];
        for row in self.masses.values() {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }

    /// `H(X|Y)` in bits.
    pub fn cond_entropy(&self) -> f64 {
        self.masses
            .values()
            .map(|row| {
                let t: f64 = row.iter().sum();
                row.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * (p / t).log2())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Binary source of bit `i - 1` of `X` given `Y` and the lower `i - 1`
    /// bits. The side symbol of `(y, low)` is `y * 2^(i-1) + low`.
    pub fn layer_marginal(&self, i: u32) -> Result<JointSource> {
        if i == 0 || i > self.m {
            return Err(Error::InvalidParameter(format!(
                "layer {i} outside 1..={}",
                self.m
            )));
        }
        let shift = i - 1;
        let low_mask = (1usize << shift) - 1;
        let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for (&y, row) in &self.masses {
            for (x, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let id = (y << shift) | (x & low_mask) as u64;
                let e = acc.entry(id).or_default();
                if (x >> shift) & 1 == 0 {
                    e.0 += p;
                } else {
                    e.1 += p;
                }
            }
        }
        Ok(JointSource::from_unnormalized(
            acc.into_iter()
                .map(|(id, (p0, p1))| SideMass { id, p0, p1 })
                .collect(),
        ))
    }

    /// `H(X^(i) | Y, X^(1..i-1))` for every layer.
    pub fn layer_entropies(&self) -> Vec<f64> {
        (1..=self.m)
            .map(|i| {
                self.layer_marginal(i)
                    .expect("layer in range")
                    .symbols()
                    .iter()
                    .map(|s| weighted_entropy(s.p0, s.p1))
                    .sum()
            })
            .collect()
    }
}

/// Anything that can report `P(X = x | observation at time t)` up to a
/// positive factor.
pub trait SymbolLikelihood {
    /// Number of observations (the block length).
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills `out[x]` with a value proportional to `P(X = x | obs_t)`.
    fn weights(&self, t: usize, out: &mut [f64]);
}

/// Discrete side symbols observed under a [`LayeredSource`].
#[derive(Debug, Clone, Copy)]
pub struct DiscreteObservations<'a> {
    source: &'a LayeredSource,
    y: &'a [u64],
}

impl<'a> DiscreteObservations<'a> {
    pub fn new(source: &'a LayeredSource, y: &'a [u64]) -> Result<Self> {
        if let Some(&bad) = y.iter().find(|&&id| source.row(id).is_none()) {
            return Err(Error::UnknownSymbol(bad));
        }
        Ok(Self { source, y })
    }
}

impl SymbolLikelihood for DiscreteObservations<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn weights(&self, t: usize, out: &mut [f64]) {
        out.copy_from_slice(self.source.row(self.y[t]).expect("checked on construction"));
    }
}

/// Per-layer codes of a `2^m`-ary source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredSpec {
    pub m: u32,
    pub bit_order: String,
    pub layers: Vec<CodeSpec>,
}

impl LayeredSpec {
    pub fn new(layers: Vec<CodeSpec>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidParameter("no layers".into()))?;
        if layers.iter().any(|l| l.n() != first.n()) {
            return Err(Error::InvalidParameter(
                "layers differ in block length".into(),
            ));
        }
        Ok(Self {
            m: layers.len() as u32,
            bit_order: BIT_ORDER.into(),
            layers,
        })
    }

    pub fn block_len(&self) -> usize {
        self.layers[0].block_len()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.layers.iter().map(CodeSpec::rate).collect()
    }

    pub fn sum_rate(&self) -> f64 {
        self.rates().iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("LayeredSpec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if spec.bit_order != BIT_ORDER {
            return Err(Error::InvalidParameter(format!(
                "unsupported bit order {}",
                spec.bit_order
            )));
        }
        Self::new(spec.layers)
    }
}

/// Per-layer rule for the transmitted set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSelection {
    /// Rate `H(layer) + gap`, clipped to `[0, 1]`.
    Gap(f64),
    /// The same rate on every layer.
    Rate(f64),
    ZThreshold(f64),
    EntropyThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Construction {
    Exact,
    Degraded(BinParams),
}

pub(crate) fn build_layers(
    ls: &LayeredSource,
    n: u32,
    method: Construction,
    sel: LayerSelection,
) -> Result<LayeredSpec> {
    let mut layers = Vec::with_capacity(ls.m as usize);
    for i in 1..=ls.m {
        let marginal = ls.layer_marginal(i)?;
        let spec = match method {
            Construction::Exact => exact_construct(&marginal, n)?,
            Construction::Degraded(p) => construct_degraded(&marginal, n, p),
        };
        let mode = match sel {
            LayerSelection::Gap(eps) => {
                Selection::Rate((marginal.cond_entropy() + eps).clamp(0.0, 1.0))
            }
            LayerSelection::Rate(r) => Selection::Rate(r),
            LayerSelection::ZThreshold(t) => Selection::ZThreshold(t),
            LayerSelection::EntropyThreshold(t) => Selection::EntropyThreshold(t),
        };
        layers.push(select_indices(&spec, mode)?);
    }
    LayeredSpec::new(layers)
}

/// Degraded construction of every layer.
pub fn layered_construct(
    ls: &LayeredSource,
    n: u32,
    p: BinParams,
    sel: LayerSelection,
) -> Result<LayeredSpec> {
    build_layers(ls, n, Construction::Degraded(p), sel)
}

/// Exact construction of every layer (small `n` only).
pub fn layered_construct_exact(
    ls: &LayeredSource,
    n: u32,
    sel: LayerSelection,
) -> Result<LayeredSpec> {
    build_layers(ls, n, Construction::Exact, sel)
}

/// Bit-plane `layer` (0-based) of a symbol block.
pub fn bit_plane(x: &[u32], layer: u32) -> Vec<u8> {
    x.iter().map(|&s| ((s >> layer) & 1) as u8).collect()
}

pub fn layered_compress<'c>(spec: &'c LayeredSpec, x: &[u32]) -> Result<Vec<CompressedBlock<'c>>> {
    if x.len() != spec.block_len() {
        return Err(Error::LengthMismatch {
            expected: spec.block_len(),
            got: x.len(),
        });
    }
    if let Some(&bad) = x.iter().find(|&&s| s >> spec.m != 0) {
        return Err(Error::InvalidParameter(format!(
            "symbol {bad} needs more than {} bits",
            spec.m
        )));
    }
    spec.layers
        .iter()
        .enumerate()
        .map(|(i, code)| compress(&bit_plane(x, i as u32), code))
        .collect()
}

/// Output of a layered decode.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredDecoding {
    pub symbols: Vec<u32>,
    /// Decoded bit-plane per layer.
    pub planes: Vec<Vec<u8>>,
    /// Decided transform bits per layer.
    pub u_hat: Vec<Vec<u8>>,
}

/// Reusable onion-peeling decoder.
#[derive(Debug, Clone)]
pub struct LayeredDecoder {
    decoders: Vec<ScDecoder>,
    m: u32,
}

impl LayeredDecoder {
    pub fn new(spec: &LayeredSpec) -> Self {
        Self {
            decoders: spec.layers.iter().map(ScDecoder::new).collect(),
            m: spec.m,
        }
    }

    /// Decodes all layers. Layer `i` conditions on the decoded lower layers,
    /// or on `genie`'s true symbols when given.
    pub fn decode<L: SymbolLikelihood + ?Sized>(
        &mut self,
        payloads: &[&[u8]],
        obs: &L,
        genie: Option<&[u32]>,
    ) -> Result<LayeredDecoding> {
        let len = self.decoders[0].block_len();
        if payloads.len() != self.m as usize {
            return Err(Error::LengthMismatch {
                expected: self.m as usize,
                got: payloads.len(),
            });
        }
        if obs.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: obs.len(),
            });
        }
        if let Some(g) = genie {
            if g.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    got: g.len(),
                });
            }
        }
        let size = 1usize << self.m;
        // Weights are fetched once per time index.
        let mut weights = vec![0.0; size * len];
        for (t, w) in weights.chunks_exact_mut(size).enumerate() {
            obs.weights(t, w);
        }
        let mut symbols = vec![0u32; len];
        let mut planes = Vec::with_capacity(self.m as usize);
        let mut u_hat = Vec::with_capacity(self.m as usize);
        let mut llr = vec![0.0; len];
        for layer in 0..self.m {
            let low_mask = (1u32 << layer) - 1;
            for t in 0..len {
                let low = match genie {
                    Some(g) => g[t] & low_mask,
                    None => symbols[t] & low_mask,
                };
                let w = &weights[t * size..(t + 1) * size];
                let (mut w0, mut w1) = (0.0, 0.0);
                for (x, &p) in w.iter().enumerate() {
                    let x = x as u32;
                    if x & low_mask == low {
                        if (x >> layer) & 1 == 0 {
                            w0 += p;
                        } else {
                            w1 += p;
                        }
                    }
                }
                llr[t] = clamp_llr((w0 / w1).ln());
            }
            let dec = &mut self.decoders[layer as usize];
            let plane = dec.decode(&llr, payloads[layer as usize])?;
            for (s, &b) in symbols.iter_mut().zip(&plane) {
                *s |= u32::from(b) << layer;
            }
            u_hat.push(dec.u_hat().to_vec());
            planes.push(plane);
        }
        Ok(LayeredDecoding {
            symbols,
            planes,
            u_hat,
        })
    }
}

/// Recovers the symbol block from its layer blocks and discrete side
/// information.
pub fn layered_decompress(
    ls: &LayeredSource,
    spec: &LayeredSpec,
    blocks: &[CompressedBlock<'_>],
    y: &[u64],
) -> Result<Vec<u32>> {
    let obs = DiscreteObservations::new(ls, y)?;
    let payloads: Vec<&[u8]> = blocks.iter().map(CompressedBlock::payload).collect();
    Ok(LayeredDecoder::new(spec)
        .decode(&payloads, &obs, None)?
        .symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn generic_m2() -> LayeredSource {
        let masses = [
            (0, 0, 0.20),
            (1, 0, 0.05),
            (2, 0, 0.02),
            (3, 0, 0.03),
            (0, 1, 0.04),
            (1, 1, 0.25),
            (2, 1, 0.06),
            (3, 1, 0.05),
            (0, 2, 0.03),
            (1, 2, 0.02),
            (2, 2, 0.12),
            (3, 2, 0.13),
        ];
        LayeredSource::new(2, masses).unwrap()
    }

    #[test]
    fn single_layer_is_the_source() {
        let s = JointSource::bsc(0.11);
        let ls = LayeredSource::from_binary(&s);
        assert_eq!(ls.layer_marginal(1).unwrap(), s);
    }

    #[test]
    fn noiseless_layers_have_zero_entropy() {
        let ls = LayeredSource::new(2, (0..4).map(|x| (x, u64::from(x), 0.25))).unwrap();
        assert_eq!(ls.layer_marginal(2).unwrap().cond_entropy(), 0.0);
        assert_eq!(ls.cond_entropy(), 0.0);
    }

    #[test]
    fn chain_rule_on_layers() {
        let ls = generic_m2();
        let total: f64 = ls.layer_entropies().iter().sum();
        assert_abs_diff_eq!(total, ls.cond_entropy(), epsilon = 1e-12);
        let direct: f64 = (1..=2)
            .map(|i| ls.layer_marginal(i).unwrap().cond_entropy())
            .sum();
        assert_abs_diff_eq!(direct, ls.cond_entropy(), epsilon = 1e-12);
    }

    #[test]
    fn layer_index_checked() {
        let ls = generic_m2();
        assert!(ls.layer_marginal(0).is_err());
        assert!(ls.layer_marginal(3).is_err());
    }

    #[test]
    fn layer_side_ids_pair_y_with_low_bits() {
        let ls = generic_m2();
        let l2 = ls.layer_marginal(2).unwrap();
        // y = 1, low bit 1: x in {1, 3}; bit 1 of 1 is 0, of 3 is 1.
        let s = l2.get(3).unwrap();
        assert_abs_diff_eq!(s.p0, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.p1, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn padding_to_power_of_two() {
        let ls = LayeredSource::with_alphabet_size(3, [(0, 0, 0.5), (1, 0, 0.25), (2, 0, 0.25)])
            .unwrap();
        assert_eq!(ls.m(), 2);
        assert_eq!(ls.x_marginal()[3], 0.0);
        assert!(LayeredSource::with_alphabet_size(3, [(3, 0, 1.0)]).is_err());
    }

    #[test]
    fn compress_planes_match_binary_codec() {
        let code = CodeSpec::with_selected(2, vec![0, 1]).unwrap();
        let spec = LayeredSpec::new(vec![code.clone(), code.clone()]).unwrap();
        // plane 0 = (1, 0, 1, 1), plane 1 = (0, 1, 1, 0)
        let x = [1, 2, 3, 1];
        let blocks = layered_compress(&spec, &x).unwrap();
        assert_eq!(
            blocks[0].payload(),
            compress(&[1, 0, 1, 1], &code).unwrap().payload()
        );
        assert_eq!(blocks[0].payload(), &[1, 1]);
        assert_eq!(
            blocks[1].payload(),
            compress(&[0, 1, 1, 0], &code).unwrap().payload()
        );
    }

    #[test]
    fn rate_one_roundtrip() {
        let ls = generic_m2();
        let full = CodeSpec::with_selected(3, (0..8).collect()).unwrap();
        let spec = LayeredSpec::new(vec![full.clone(), full]).unwrap();
        let x = [0, 3, 2, 1, 1, 2, 3, 0];
        let y = [2, 0, 0, 1, 2, 1, 0, 0];
        let blocks = layered_compress(&spec, &x).unwrap();
        assert_eq!(layered_decompress(&ls, &spec, &blocks, &y).unwrap(), x);
    }

    #[test]
    fn noiseless_side_info_needs_nothing() {
        let ls = LayeredSource::new(2, (0..4).map(|x| (x, u64::from(x), 0.25))).unwrap();
        let spec = layered_construct_exact(&ls, 2, LayerSelection::ZThreshold(0.5)).unwrap();
        assert_eq!(spec.sum_rate(), 0.0);
        let x = [3, 1, 0, 2];
        let y: Vec<u64> = x.iter().map(|&v| u64::from(v)).collect();
        let blocks = layered_compress(&spec, &x).unwrap();
        assert!(blocks.iter().all(|b| b.payload().is_empty()));
        assert_eq!(layered_decompress(&ls, &spec, &blocks, &y).unwrap(), x);
    }

    #[test]
    fn first_layer_code_ignores_higher_layers() {
        let a = generic_m2();
        // Same layer-1 marginal, different split of mass within layer 2.
        let b = LayeredSource::new(
            2,
            a.entries().map(|(x, y, p)| {
                let swapped = if y == 0 && (x == 0 || x == 2) {
                    x ^ 2
                } else {
                    x
                };
                (swapped, y, p)
            }),
        )
        .unwrap();
        assert_eq!(a.layer_marginal(1).unwrap(), b.layer_marginal(1).unwrap());
        assert_ne!(a.layer_marginal(2).unwrap(), b.layer_marginal(2).unwrap());
        let p = BinParams::new(8).unwrap();
        let sa = layered_construct(&a, 3, p, LayerSelection::Gap(0.1)).unwrap();
        let sb = layered_construct(&b, 3, p, LayerSelection::Gap(0.1)).unwrap();
        assert_eq!(sa.layers[0], sb.layers[0]);
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = layered_construct(
            &generic_m2(),
            3,
            BinParams::new(4).unwrap(),
            LayerSelection::Gap(0.05),
        )
        .unwrap();
        let back = LayeredSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        assert!(spec.to_json().contains("\"bit_order\": \"lsb-first\""));
    }

    #[test]
    fn unknown_side_symbol() {
        let ls = generic_m2();
        assert!(matches!(
            DiscreteObservations::new(&ls, &[0, 9]),
            Err(Error::UnknownSymbol(9))
        ));
    }

    #[test]
    fn parse_layered_source() {
        let ls = LayeredSource::parse(2, "0 0 0.5\n3 1 0.5\n").unwrap();
        assert_eq!(ls.cond_entropy(), 0.0);
        assert!(LayeredSource::parse(2, "4 0 1.0\n").is_err());
    }
}
