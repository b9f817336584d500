//! Secret-key agreement from correlated observations.
//!
//! Terminal A transforms each bit-plane of its block, publishes the transform
//! bits on the transmitted (unreliable) indices and keeps the rest as key.
//! Terminal B runs the layered decoder with the public bits as payload and
//! reads its key estimate off the decided transform bits.

use std::collections::HashMap;

use serde::Serialize;

use crate::codec::polar_transform;
use crate::construct::BinParams;
use crate::error::{Error, Result};
use crate::layered::{
    bit_plane, build_layers, Construction, DiscreteObservations, LayerSelection, LayeredDecoder,
    LayeredSource, LayeredSpec, SymbolLikelihood,
};

/// Largest `N * m` accepted by [`secrecy_audit`].
pub const AUDIT_MAX_BITS: usize = 16;

const UNIFORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyMaterial {
    /// Published transform bits per layer, increasing index order.
    pub public: Vec<Vec<u8>>,
    /// Key bits per layer, increasing index order.
    pub key: Vec<Vec<u8>>,
}

impl KeyMaterial {
    pub fn key_len(&self) -> usize {
        self.key.iter().map(Vec::len).sum()
    }
}

fn check_uniform(ls: &LayeredSource) -> Result<()> {
    let target = 1.0 / ls.alphabet_size() as f64;
    let dev = ls
        .x_marginal()
        .iter()
        .map(|p| (p - target).abs())
        .fold(0.0, f64::max);
    if dev > UNIFORM_TOLERANCE {
        return Err(Error::NonUniformMarginal(dev));
    }
    Ok(())
}

/// Per-layer public sets for a source whose `X` is uniform on `2^m` symbols.
pub fn keygen_construct(
    ls: &LayeredSource,
    n: u32,
    p: BinParams,
    sel: LayerSelection,
) -> Result<LayeredSpec> {
    check_uniform(ls)?;
    build_layers(ls, n, Construction::Degraded(p), sel)
}

pub fn keygen_construct_exact(
    ls: &LayeredSource,
    n: u32,
    sel: LayerSelection,
) -> Result<LayeredSpec> {
    check_uniform(ls)?;
    build_layers(ls, n, Construction::Exact, sel)
}

/// Key bits per source symbol: `m - sum of public rates`.
pub fn key_rate(spec: &LayeredSpec) -> f64 {
    f64::from(spec.m) - spec.sum_rate()
}

/// Public message and key at terminal A.
pub fn derive_at_a(spec: &LayeredSpec, x: &[u32]) -> Result<KeyMaterial> {
    if x.len() != spec.block_len() {
        return Err(Error::LengthMismatch {
            expected: spec.block_len(),
            got: x.len(),
        });
    }
    let mut public = Vec::with_capacity(spec.layers.len());
    let mut key = Vec::with_capacity(spec.layers.len());
    for (i, code) in spec.layers.iter().enumerate() {
        let u = polar_transform(&bit_plane(x, i as u32))?;
        let mask = code.selected_mask();
        public.push(code.selected().iter().map(|&j| u[j]).collect());
        key.push(
            u.iter()
                .zip(&mask)
                .filter(|(_, &m)| !m)
                .map(|(&b, _)| b)
                .collect(),
        );
    }
    Ok(KeyMaterial { public, key })
}

/// Key estimate at terminal B from any per-symbol likelihood.
pub fn recover_with<L: SymbolLikelihood + ?Sized>(
    decoder: &mut LayeredDecoder,
    spec: &LayeredSpec,
    obs: &L,
    public: &[Vec<u8>],
) -> Result<Vec<Vec<u8>>> {
    let payloads: Vec<&[u8]> = public.iter().map(Vec::as_slice).collect();
    let decoded = decoder.decode(&payloads, obs, None)?;
    Ok(spec
        .layers
        .iter()
        .zip(&decoded.u_hat)
        .map(|(code, u)| code.unselected().into_iter().map(|j| u[j]).collect())
        .collect())
}

/// Key estimate at terminal B from discrete side symbols.
pub fn recover_at_b(
    spec: &LayeredSpec,
    ls: &LayeredSource,
    y: &[u64],
    public: &[Vec<u8>],
) -> Result<Vec<Vec<u8>>> {
    let obs = DiscreteObservations::new(ls, y)?;
    recover_with(&mut LayeredDecoder::new(spec), spec, &obs, public)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    pub key_bits: usize,
    pub public_bits: usize,
    #[serde(rename = "H_K")]
    pub key_entropy_bits: f64,
    #[serde(rename = "H_K_given_W")]
    pub key_given_public_bits: f64,
    #[serde(rename = "I_KW")]
    pub mi_key_public_bits: f64,
}

fn entropy_of<K>(counts: &HashMap<K, f64>) -> f64 {
    counts
        .values()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

fn pack(bits: &[Vec<u8>]) -> u32 {
    bits.iter()
        .flatten()
        .fold(0u32, |acc, &b| (acc << 1) | u32::from(b))
}

/// Exact `H(K)` and `I(K;W)` by enumerating every source block under the
/// `X` marginal of `ls`.
pub fn secrecy_audit(spec: &LayeredSpec, ls: &LayeredSource) -> Result<AuditReport> {
    let len = spec.block_len();
    let m = spec.m as usize;
    if m != ls.m() as usize {
        return Err(Error::InvalidParameter(format!(
            "spec has {m} layers, source {}",
            ls.m()
        )));
    }
    let bits = len * m;
    if bits > AUDIT_MAX_BITS {
        return Err(Error::BudgetExceeded {
            needed: 1u128 << bits,
            budget: 1u128 << AUDIT_MAX_BITS,
        });
    }
    let px = ls.x_marginal();
    let mut joint: HashMap<(u32, u32), f64> = HashMap::new();
    let mut x = vec![0u32; len];
    let mut material = None;
    for word in 0u32..(1u32 << bits) {
        let mut w = word;
        let mut prob = 1.0;
        for s in x.iter_mut() {
            *s = w & ((1 << m) - 1);
            w >>= m;
            prob *= px[*s as usize];
        }
        if prob == 0.0 {
            continue;
        }
        let km = derive_at_a(spec, &x)?;
        *joint.entry((pack(&km.key), pack(&km.public))).or_default() += prob;
        material.get_or_insert(km);
    }
    let mut pk: HashMap<u32, f64> = HashMap::new();
    let mut pw: HashMap<u32, f64> = HashMap::new();
    for (&(k, w), &p) in &joint {
        *pk.entry(k).or_default() += p;
        *pw.entry(w).or_default() += p;
    }
    let (hk, hw, hkw) = (entropy_of(&pk), entropy_of(&pw), entropy_of(&joint));
    let km = material.unwrap_or(KeyMaterial {
        public: vec![],
        key: vec![],
    });
    Ok(AuditReport {
        key_bits: km.key_len(),
        public_bits: km.public.iter().map(Vec::len).sum(),
        key_entropy_bits: hk,
        key_given_public_bits: hkw - hw,
        mi_key_public_bits: (hk + hw - hkw).max(0.0),
    })
}
