//! Distributed compression of `m` correlated binary sources with a single
//! decoder (corner points of the Slepian-Wolf region).
//!
//! User `i` (1-based) owns bit `i - 1` of a joint symbol, so the user order is
//! the layer order of [`LayeredSource`]: user `i` is coded against `Y` and
//! users `1..i`, and decoded from the estimates of those users.

use serde::Serialize;

use crate::codec::{compress, CompressedBlock};
use crate::construct::BinParams;
use crate::error::{Error, Result};
use crate::layered::{
    build_layers, Construction, DiscreteObservations, LayerSelection, LayeredDecoder,
    LayeredSource, LayeredSpec,
};

/// Joint law of `m` user bits and an optional decoder-side symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiUserSource {
    inner: LayeredSource,
}

impl MultiUserSource {
    /// Masses over `(bits, y)`, where bit `i - 1` of `bits` belongs to user `i`.
    pub fn new<I>(m: u32, masses: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u64, f64)>,
    {
        Ok(Self {
            inner: LayeredSource::new(m, masses)?,
        })
    }

    /// Parses lines `bits [y] mass`. `bits` lists user 1 first; a missing `y`
    /// means the decoder has no side information (a single symbol `0`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = None;
        let mut entries = Vec::new();
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
            let (bits, y, p) = match f.as_slice() {
                [b, p] => (*b, "0", *p),
                [b, y, p] => (*b, *y, *p),
                _ => return Err(err(format!("expected 2 or 3 fields, found {}", f.len()))),
            };
            if bits.is_empty() || bits.len() > 16 || !bits.bytes().all(|c| c == b'0' || c == b'1') {
                return Err(err(format!("bad bit vector {bits:?}")));
            }
            match m {
                None => m = Some(bits.len()),
                Some(len) if len != bits.len() => {
                    return Err(err(format!(
                        "bit vector has {} users, expected {len}",
                        bits.len()
                    )))
                }
                _ => {}
            }
            let x = bits
                .bytes()
                .enumerate()
                .fold(0u32, |acc, (i, c)| acc | (u32::from(c - b'0') << i));
            let y = y
                .parse::<u64>()
                .map_err(|e| err(format!("side symbol: {e}")))?;
            let p = p.parse::<f64>().map_err(|e| err(format!("mass: {e}")))?;
            entries.push((x, y, p));
        }
        let m = m.ok_or_else(|| Error::InvalidDistribution("no entries".into()))?;
        Self::new(m as u32, entries)
    }

    pub fn users(&self) -> u32 {
        self.inner.m()
    }

    pub fn as_layered(&self) -> &LayeredSource {
        &self.inner
    }

    /// `H(X[1..m] | Y)`.
    pub fn cond_entropy(&self) -> f64 {
        self.inner.cond_entropy()
    }

    /// `H(X[i] | Y, X[1..i])` per user.
    pub fn user_entropies(&self) -> Vec<f64> {
        self.inner.layer_entropies()
    }

    /// The same source with users renumbered: new user `j + 1` is old user
    /// `order[j] + 1`.
    pub fn reordered(&self, order: &[u32]) -> Result<Self> {
        let m = self.users();
        let mut seen = vec![false; m as usize];
        if order.len() != m as usize
            || order
                .iter()
                .any(|&u| u >= m || std::mem::replace(&mut seen[u as usize], true))
        {
            return Err(Error::InvalidParameter(format!(
                "{order:?} is not a permutation of 0..{m}"
            )));
        }
        let remap = |x: u32| {
            order
                .iter()
                .enumerate()
                .fold(0, |acc, (j, &u)| acc | (((x >> u) & 1) << j))
        };
        Self::new(m, self.inner.entries().map(|(x, y, p)| (remap(x), y, p)))
    }

    /// Splits joint symbols into per-user bit blocks.
    pub fn split(&self, x: &[u32]) -> Vec<Vec<u8>> {
        (0..self.users())
            .map(|i| x.iter().map(|&s| ((s >> i) & 1) as u8).collect())
            .collect()
    }
}

/// Per-user codes, user `i` built against `Y` and users `1..i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwCode {
    pub spec: LayeredSpec,
    /// `H(X[i] | Y, X[1..i])` per user.
    pub entropies: Vec<f64>,
}

impl SwCode {
    pub fn rates(&self) -> Vec<f64> {
        self.spec.rates()
    }

    pub fn sum_rate(&self) -> f64 {
        self.spec.sum_rate()
    }

    /// Rate minus conditional entropy per user.
    pub fn slacks(&self) -> Vec<f64> {
        self.rates()
            .iter()
            .zip(&self.entropies)
            .map(|(r, h)| r - h)
            .collect()
    }
}

pub fn sw_construct(
    src: &MultiUserSource,
    n: u32,
    p: BinParams,
    sel: LayerSelection,
) -> Result<SwCode> {
    let spec = build_layers(&src.inner, n, Construction::Degraded(p), sel)?;
    Ok(SwCode {
        spec,
        entropies: src.user_entropies(),
    })
}

pub fn sw_construct_exact(src: &MultiUserSource, n: u32, sel: LayerSelection) -> Result<SwCode> {
    let spec = build_layers(&src.inner, n, Construction::Exact, sel)?;
    Ok(SwCode {
        spec,
        entropies: src.user_entropies(),
    })
}

/// Encoder of user `user` (1-based); it sees only its own block.
pub fn sw_encode<'c>(code: &'c SwCode, user: u32, block: &[u8]) -> Result<CompressedBlock<'c>> {
    let layer = user
        .checked_sub(1)
        .and_then(|i| code.spec.layers.get(i as usize))
        .ok_or_else(|| {
            Error::InvalidParameter(format!("user {user} outside 1..={}", code.spec.m))
        })?;
    compress(block, layer)
}

/// Successive decoding of all users. With `genie`, user `i` is decoded from
/// the true blocks of users `1..i` instead of their estimates.
pub fn sw_decode(
    code: &SwCode,
    src: &MultiUserSource,
    blocks: &[CompressedBlock<'_>],
    y: &[u64],
    genie: Option<&[Vec<u8>]>,
) -> Result<Vec<Vec<u8>>> {
    let mut decoder = LayeredDecoder::new(&code.spec);
    sw_decode_with(&mut decoder, src, blocks, y, genie)
}

/// [`sw_decode`] reusing a decoder built from the same code.
pub fn sw_decode_with(
    decoder: &mut LayeredDecoder,
    src: &MultiUserSource,
    blocks: &[CompressedBlock<'_>],
    y: &[u64],
    genie: Option<&[Vec<u8>]>,
) -> Result<Vec<Vec<u8>>> {
    let obs = DiscreteObservations::new(&src.inner, y)?;
    let payloads: Vec<&[u8]> = blocks.iter().map(CompressedBlock::payload).collect();
    let truth = genie.map(|g| {
        let len = g.first().map_or(0, Vec::len);
        (0..len)
            .map(|t| {
                g.iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, b)| acc | (u32::from(b[t]) << i))
            })
            .collect::<Vec<u32>>()
    });
    Ok(decoder.decode(&payloads, &obs, truth.as_deref())?.planes)
}
