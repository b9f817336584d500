//! Finite joint distributions of a binary source symbol with side information,
//! and the single-step polarization transforms on them.
//!
//! A [`JointSource`] stores the masses `P(X=0, Y=y)` and `P(X=1, Y=y)` for each
//! side symbol `y`. The `minus` transform yields the law of `(X1+X2, Y1 Y2)` and
//! the `plus` transform the law of `(X2, (Y1 Y2, X1+X2))` for two i.i.d. copies.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance on the total mass of a user-supplied distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default cap on the alphabet size produced by exact synthesis.
pub const DEFAULT_ALPHABET_BUDGET: usize = 1_000_000;

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Contribution `P(y) * h(P(X=0|y))` of one side symbol, in bits.
#[inline]
pub(crate) fn weighted_entropy(p0: f64, p1: f64) -> f64 {
    let t = p0 + p1;
    let mut h = 0.0;
    if p0 > 0.0 {
        h -= p0 * (p0 / t).log2();
    }
    if p1 > 0.0 {
        h -= p1 * (p1 / t).log2();
    }
    h
}

/// Masses of one side symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideMass {
    pub id: u64,
    pub p0: f64,
    pub p1: f64,
}

impl SideMass {
    pub fn total(&self) -> f64 {
        self.p0 + self.p1
    }
}

/// Joint law of a binary `X` and a finite side symbol `Y`.
///
/// Symbols are kept sorted by id; symbols of zero mass are dropped on
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSource {
    symbols: Vec<SideMass>,
}

impl JointSource {
    /// Builds a validated source from `(y, p0, p1)` triples.
    pub fn new<I>(masses: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, f64, f64)>,
    {
        let mut symbols = Vec::new();
        let mut total = 0.0;
        for (id, p0, p1) in masses {
            if !(p0.is_finite() && p1.is_finite()) || p0 < 0.0 || p1 < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "symbol {id} has invalid masses ({p0}, {p1})"
                )));
            }
            total += p0 + p1;
            if p0 + p1 > 0.0 {
                symbols.push(SideMass { id, p0, p1 });
            }
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1"
            )));
        }
        symbols.sort_by_key(|s| s.id);
        if symbols.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidDistribution("duplicate side symbol".into()));
        }
        Ok(Self { symbols })
    }

    /// Builds a source from unnormalized masses with distinct ids, rescaling
    /// the total to one.
    pub(crate) fn from_unnormalized(mut symbols: Vec<SideMass>) -> Self {
        symbols.retain(|s| s.p0 + s.p1 > 0.0);
        let total: f64 = symbols.iter().map(SideMass::total).sum();
        if total > 0.0 && total != 1.0 {
            for s in &mut symbols {
                s.p0 /= total;
                s.p1 /= total;
            }
        }
        if !symbols.windows(2).all(|w| w[0].id < w[1].id) {
            symbols.sort_by_key(|s| s.id);
        }
        Self { symbols }
    }

    /// Uniform `X` observed through a binary symmetric channel with crossover `p`.
    pub fn bsc(p: f64) -> Self {
        Self::from_unnormalized(vec![
            SideMass {
                id: 0,
                p0: 0.5 * (1.0 - p),
                p1: 0.5 * p,
            },
            SideMass {
                id: 1,
                p0: 0.5 * p,
                p1: 0.5 * (1.0 - p),
            },
        ])
    }

    /// Uniform `X`; `Y = X` with probability `1 - eps`, erasure symbol 2 otherwise.
    pub fn erasure(eps: f64) -> Self {
        Self::from_unnormalized(vec![
            SideMass {
                id: 0,
                p0: 0.5 * (1.0 - eps),
                p1: 0.0,
            },
            SideMass {
                id: 1,
                p0: 0.0,
                p1: 0.5 * (1.0 - eps),
            },
            SideMass {
                id: 2,
                p0: 0.5 * eps,
                p1: 0.5 * eps,
            },
        ])
    }

    /// Uniform `X` with `Y = X`.
    pub fn noiseless() -> Self {
        Self::erasure(0.0)
    }

    /// `X ~ Bernoulli(p1)` with constant side information.
    pub fn without_side_info(p1: f64) -> Self {
        Self::from_unnormalized(vec![SideMass {
            id: 0,
            p0: 1.0 - p1,
            p1,
        }])
    }

    pub fn symbols(&self) -> &[SideMass] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&SideMass> {
        self.symbols
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.symbols[i])
    }

    /// `(P(X=0), P(X=1))`.
    pub fn x_marginal(&self) -> (f64, f64) {
        self.symbols
            .iter()
            .fold((0.0, 0.0), |(a, b), s| (a + s.p0, b + s.p1))
    }

    /// Source Bhattacharyya coefficient `2 * sum_y sqrt(P(0,y) P(1,y))`.
    pub fn bhattacharyya(&self) -> f64 {
        let z: f64 = self.symbols.iter().map(|s| (s.p0 * s.p1).sqrt()).sum();
        (2.0 * z).min(1.0)
    }

    /// `H(X|Y)` in bits.
    pub fn cond_entropy(&self) -> f64 {
        let h: f64 = self
            .symbols
            .iter()
            .map(|s| weighted_entropy(s.p0, s.p1))
            .sum();
        h.clamp(0.0, 1.0)
    }

    /// Unclamped posterior log-ratio `ln P(X=0|y)/P(X=1|y)`; `None` for
    /// symbols outside the support.
    pub fn posterior_llr(&self, id: u64) -> Option<f64> {
        self.get(id).map(|s| (s.p0 / s.p1).ln())
    }

    /// Law of `(X1 + X2, (Y1, Y2))`. Output id of `(y1, y2)` is
    /// `pos(y1) * |Y| + pos(y2)` with `pos` the rank in this source.
    pub fn minus(&self) -> Self {
        let b = self.symbols.len() as u64;
        let mut out = Vec::with_capacity(self.symbols.len() * self.symbols.len());
        for (i, a) in self.symbols.iter().enumerate() {
            for (j, c) in self.symbols.iter().enumerate() {
                out.push(SideMass {
                    id: i as u64 * b + j as u64,
                    p0: a.p0 * c.p0 + a.p1 * c.p1,
                    p1: a.p1 * c.p0 + a.p0 * c.p1,
                });
            }
        }
        Self::from_unnormalized(out)
    }

    /// Law of `(X2, (Y1, Y2, X1 + X2))`. Output id of `(y1, y2, u)` is
    /// `2 * (pos(y1) * |Y| + pos(y2)) + u`.
    pub fn plus(&self) -> Self {
        let b = self.symbols.len() as u64;
        let mut out = Vec::with_capacity(2 * self.symbols.len() * self.symbols.len());
        for (i, a) in self.symbols.iter().enumerate() {
            for (j, c) in self.symbols.iter().enumerate() {
                let base = 2 * (i as u64 * b + j as u64);
                // u = x1 + x2 revealed; x2 is the new source bit.
                out.push(SideMass {
                    id: base,
                    p0: a.p0 * c.p0,
                    p1: a.p1 * c.p1,
                });
                out.push(SideMass {
                    id: base + 1,
                    p0: a.p1 * c.p0,
                    p1: a.p0 * c.p1,
                });
            }
        }
        Self::from_unnormalized(out)
    }

    /// Applies `path` step by step, refusing to build an alphabet larger than
    /// `budget`.
    pub fn synthesize(&self, path: &TransformPath, budget: usize) -> Result<Self> {
        let mut cur = self.clone();
        for step in path.steps() {
            let b = cur.len() as u128;
            let needed = match step {
                Step::Minus => b * b,
                Step::Plus => 2 * b * b,
            };
            if needed > budget as u128 {
                return Err(Error::BudgetExceeded {
                    needed,
                    budget: budget as u128,
                });
            }
            cur = match step {
                Step::Minus => cur.minus(),
                Step::Plus => cur.plus(),
            };
        }
        Ok(cur)
    }

    /// Parses the `y p0 p1` line format. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 fields, found {}",
                    fields.len()
                )));
            }
            let id = fields[0]
                .parse::<u64>()
                .map_err(|e| parse_err(format!("side symbol: {e}")))?;
            let p0 = fields[1]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("p0: {e}")))?;
            let p1 = fields[2]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("p1: {e}")))?;
            triples.push((id, p0, p1));
        }
        Self::new(triples)
    }
}

impl FromStr for JointSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for JointSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            writeln!(f, "{} {:e} {:e}", s.id, s.p0, s.p1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Minus,
    Plus,
}

/// Sequence of transforms, first step first. Index `i` at depth `n` maps to
/// the path whose step `t` is `Plus` iff bit `n - 1 - t` of `i` is set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TransformPath(Vec<Step>);

impl TransformPath {
    pub fn new(steps: Vec<Step>) -> Self {
        Self(steps)
    }

    pub fn from_index(index: usize, depth: u32) -> Self {
        let steps = (0..depth)
            .map(|t| {
                if (index >> (depth - 1 - t)) & 1 == 1 {
                    Step::Plus
                } else {
                    Step::Minus
                }
            })
            .collect();
        Self(steps)
    }

    pub fn index(&self) -> usize {
        self.0
            .iter()
            .fold(0, |acc, s| 2 * acc + usize::from(*s == Step::Plus))
    }

    pub fn steps(&self) -> &[Step] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
