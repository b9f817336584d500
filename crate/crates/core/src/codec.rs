//! Polar transform, side-information likelihoods and successive-cancellation
//! decoding for binary sources.
//!
//! The transform is `u = G_N x` with `G_N = [[1,1],[0,1]]^{⊗n}` and no
//! bit-reversal, so `u_0` is the all-`Minus` synthetic bit and `u_{N-1}` the
//! all-`Plus` one.

use crate::construct::CodeSpec;
use crate::dist::JointSource;
use crate::error::{Error, Result};

/// Magnitude limit for posterior log-ratios (natural log).
pub const LLR_CLAMP: f64 = 40.0;

/// Per-symbol posterior log-ratios `ln P(X=0|y) / P(X=1|y)`, clamped to
/// `±LLR_CLAMP`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrVector(Vec<f64>);

impl LlrVector {
    /// Clamps every value; `NaN` (a 0/0 posterior) becomes 0.
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = clamp_llr(*v);
        }
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub(crate) fn clamp_llr(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-LLR_CLAMP, LLR_CLAMP)
    }
}

/// In-place `x <- G_N x` over GF(2).
pub fn polar_transform_in_place(bits: &mut [u8]) -> Result<()> {
    let len = bits.len();
    if !len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(len));
    }
    let mut half = 1;
    while half < len {
        for block in bits.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter()) {
                *a ^= *b;
            }
        }
        half *= 2;
    }
    Ok(())
}

pub fn polar_transform(bits: &[u8]) -> Result<Vec<u8>> {
    let mut out = bits.to_vec();
    polar_transform_in_place(&mut out)?;
    Ok(out)
}

/// Posterior log-ratios of `X_t` given `Y_t = y[t]` under `s`.
pub fn llr_from_side_info(s: &JointSource, y: &[u64]) -> Result<LlrVector> {
    let values = y
        .iter()
        .map(|&id| s.posterior_llr(id).ok_or(Error::UnknownSymbol(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LlrVector::new(values))
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-ratio of `a XOR b` for independent bits with log-ratios `la`, `lb`.
#[inline]
pub(crate) fn soft_xor(la: f64, lb: f64) -> f64 {
    log_add_exp(0.0, la + lb) - log_add_exp(la, lb)
}

/// Successive-cancellation decoder for one code. Scratch buffers are reused
/// across calls; after [`ScDecoder::decode`] the decided transform bits and
/// the log-ratio each decision was based on are available.
#[derive(Debug, Clone)]
pub struct ScDecoder {
    n: u32,
    mask: Vec<bool>,
    llr: Vec<Vec<f64>>,
    u_hat: Vec<u8>,
    decision_llrs: Vec<f64>,
}

impl ScDecoder {
    pub fn new(code: &CodeSpec) -> Self {
        let n = code.n();
        let len = code.block_len();
        Self {
            n,
            mask: code.selected_mask(),
            llr: (0..=n).map(|d| vec![0.0; len >> d]).collect(),
            u_hat: vec![0; len],
            decision_llrs: vec![0.0; len],
        }
    }

    pub fn block_len(&self) -> usize {
        1 << self.n
    }

    /// Decodes one block and returns the source estimate `x̂`. Transmitted
    /// indices take their value from `payload` (in increasing index order);
    /// the others are decided by the sign of their log-ratio, ties to 0.
    pub fn decode(&mut self, llr: &[f64], payload: &[u8]) -> Result<Vec<u8>> {
        let len = self.block_len();
        if llr.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: llr.len(),
            });
        }
        let want = self.mask.iter().filter(|&&m| m).count();
        if payload.len() != want {
            return Err(Error::LengthMismatch {
                expected: want,
                got: payload.len(),
            });
        }
        self.llr[0].copy_from_slice(llr);
        let mut x_hat = vec![0u8; len];
        let mut cursor = 0;
        self.node(0, 0, &mut x_hat, payload, &mut cursor);
        Ok(x_hat)
    }

    fn node(
        &mut self,
        depth: usize,
        u_start: usize,
        out: &mut [u8],
        payload: &[u8],
        cursor: &mut usize,
    ) {
        let len = out.len();
        if len == 1 {
            let l = self.llr[depth][0];
            self.decision_llrs[u_start] = l;
            let bit = if self.mask[u_start] {
                let b = payload[*cursor] & 1;
                *cursor += 1;
                b
            } else {
                u8::from(l < 0.0)
            };
            self.u_hat[u_start] = bit;
            out[0] = bit;
            return;
        }
        let half = len / 2;
        {
            let (upper, lower) = self.llr.split_at_mut(depth + 1);
            let cur = &upper[depth];
            let next = &mut lower[0];
            for j in 0..half {
                next[j] = soft_xor(cur[j], cur[j + half]);
            }
        }
        let (first, second) = out.split_at_mut(half);
        self.node(depth + 1, u_start, first, payload, cursor);
        {
            let (upper, lower) = self.llr.split_at_mut(depth + 1);
            let cur = &upper[depth];
            let next = &mut lower[0];
            for j in 0..half {
                let la = cur[j];
                next[j] = cur[j + half] + if first[j] == 0 { la } else { -la };
            }
        }
        self.node(depth + 1, u_start + half, second, payload, cursor);
        for j in 0..half {
            first[j] ^= second[j];
        }
    }

    /// Transform bits decided in the last call.
    pub fn u_hat(&self) -> &[u8] {
        &self.u_hat
    }

    /// Log-ratio of `P(u_j | y, û_0..û_{j-1})` used at each index in the
    /// last call.
    pub fn decision_llrs(&self) -> &[f64] {
        &self.decision_llrs
    }
}

pub fn sc_decode(llr: &LlrVector, code: &CodeSpec, payload: &[u8]) -> Result<Vec<u8>> {
    ScDecoder::new(code).decode(llr.values(), payload)
}

/// Transmitted transform bits of one source block.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock<'c> {
    code: &'c CodeSpec,
    payload: Vec<u8>,
}

impl<'c> CompressedBlock<'c> {
    pub fn new(code: &'c CodeSpec, payload: Vec<u8>) -> Result<Self> {
        let want = code.selected().len();
        if payload.len() != want {
            return Err(Error::LengthMismatch {
                expected: want,
                got: payload.len(),
            });
        }
        Ok(Self { code, payload })
    }

    pub fn code(&self) -> &'c CodeSpec {
        self.code
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Big-endian block length and bit count (8 bytes each), then the payload
    /// packed MSB-first and zero-padded to a byte boundary.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.payload.len().div_ceil(8));
        out.extend_from_slice(&(self.code.block_len() as u64).to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_be_bytes());
        for chunk in self.payload.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i)));
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(code: &'c CodeSpec, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Wire(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let len = u64::from_be_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let count = u64::from_be_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if len != code.block_len() as u64 {
            return Err(Error::Wire(format!(
                "block length {len} does not match code length {}",
                code.block_len()
            )));
        }
        if count != code.selected().len() as u64 {
            return Err(Error::Wire(format!(
                "payload of {count} bits does not match {} selected indices",
                code.selected().len()
            )));
        }
        let count = count as usize;
        let body = &bytes[16..];
        if body.len() != count.div_ceil(8) {
            return Err(Error::Wire(format!(
                "expected {} payload bytes, found {}",
                count.div_ceil(8),
                body.len()
            )));
        }
        let payload = (0..count)
            .map(|i| (body[i / 8] >> (7 - i % 8)) & 1)
            .collect();
        Self::new(code, payload)
    }
}

pub fn compress<'c>(x: &[u8], code: &'c CodeSpec) -> Result<CompressedBlock<'c>> {
    if x.len() != code.block_len() {
        return Err(Error::LengthMismatch {
            expected: code.block_len(),
            got: x.len(),
        });
    }
    let u = polar_transform(x)?;
    let payload = code.selected().iter().map(|&i| u[i]).collect();
    CompressedBlock::new(code, payload)
}

pub fn decompress(block: &CompressedBlock<'_>, llr: &LlrVector) -> Result<Vec<u8>> {
    sc_decode(llr, block.code(), block.payload())
}
