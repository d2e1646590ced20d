//! Edit-distance alignment of phone sequences and sentence confusion matrices.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gap token used on either side of an alignment for insertions and deletions.
pub const PLACEHOLDER: &str = "*";

/// A non-empty sequence of phone symbols, none of which is [`PLACEHOLDER`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PhoneSeq(Vec<String>);

impl PhoneSeq {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::InvalidInput("phone sequence is empty".into()));
        }
        for s in &symbols {
            if s == PLACEHOLDER {
                return Err(Error::InvalidInput(format!(
                    "phone sequence contains reserved token `{PLACEHOLDER}`"
                )));
            }
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("invalid phone token {s:?}")));
            }
        }
        Ok(PhoneSeq(symbols))
    }

    pub fn symbols(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for PhoneSeq {
    type Err = Error;

    /// Parses whitespace-separated tokens.
    fn from_str(s: &str) -> Result<Self> {
        PhoneSeq::new(s.split_whitespace())
    }
}

impl fmt::Display for PhoneSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl TryFrom<Vec<String>> for PhoneSeq {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        PhoneSeq::new(v)
    }
}

impl From<PhoneSeq> for Vec<String> {
    fn from(p: PhoneSeq) -> Self {
        p.0
    }
}

/// One column of an alignment. `None` stands for the placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub reference: Option<String>,
    pub hypothesis: Option<String>,
}

impl AlignedPair {
    pub fn ref_token(&self) -> &str {
        self.reference.as_deref().unwrap_or(PLACEHOLDER)
    }

    pub fn hyp_token(&self) -> &str {
        self.hypothesis.as_deref().unwrap_or(PLACEHOLDER)
    }

    pub fn is_match(&self) -> bool {
        self.reference.is_some() && self.reference == self.hypothesis
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    pub cost: usize,
}

impl Alignment {
    /// Pairs rendered as `(ref, hyp)` string slices with `*` for gaps.
    pub fn tokens(&self) -> Vec<(&str, &str)> {
        self.pairs.iter().map(|p| (p.ref_token(), p.hyp_token())).collect()
    }
}

/// Minimum-edit alignment with unit costs.
///
/// Among optimal alignments the one chosen is the first in left-to-right order
/// when each step prefers a diagonal move (match or substitution), then a
/// deletion (reference token against `*`), then an insertion.
pub fn align(reference: &PhoneSeq, hypothesis: &PhoneSeq) -> Result<Alignment> {
    let r = reference.symbols();
    let h = hypothesis.symbols();
    if r.is_empty() || h.is_empty() {
        return Err(Error::InvalidInput("cannot align an empty sequence".into()));
    }
    let (n, m) = (r.len(), h.len());
    let w = m + 1;
    // Suffix table: dist[i][j] = edit distance between r[i..] and h[j..].
    let mut dist = vec![0usize; (n + 1) * w];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            dist[i * w + j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let diag = dist[(i + 1) * w + j + 1] + usize::from(r[i] != h[j]);
                let del = dist[(i + 1) * w + j] + 1;
                let ins = dist[i * w + j + 1] + 1;
                diag.min(del).min(ins)
            };
        }
    }

    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = dist[i * w + j];
        if i < n && j < m && dist[(i + 1) * w + j + 1] + usize::from(r[i] != h[j]) == here {
            pairs.push(AlignedPair {
                reference: Some(r[i].clone()),
                hypothesis: Some(h[j].clone()),
            });
            i += 1;
            j += 1;
        } else if i < n && dist[(i + 1) * w + j] + 1 == here {
            pairs.push(AlignedPair {
                reference: Some(r[i].clone()),
                hypothesis: None,
            });
            i += 1;
        } else {
            pairs.push(AlignedPair {
                reference: None,
                hypothesis: Some(h[j].clone()),
            });
            j += 1;
        }
    }
    Ok(Alignment {
        pairs,
        cost: dist[0],
    })
}

/// Joint counts of aligned (reference, hypothesis) tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    phone_set: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_alignment(alignment: &Alignment) -> Self {
        let mut m = Self::new();
        m.accumulate(alignment);
        m
    }

    fn slot(&mut self, token: &str) -> usize {
        if let Some(&k) = self.index.get(token) {
            return k;
        }
        let k = self.phone_set.len();
        self.phone_set.push(token.to_string());
        self.index.insert(token.to_string(), k);
        for row in &mut self.counts {
            row.push(0);
        }
        self.counts.push(vec![0; k + 1]);
        k
    }

    /// Adds one count per aligned pair, growing the phone set as needed.
    pub fn accumulate(&mut self, alignment: &Alignment) {
        for p in &alignment.pairs {
            let i = self.slot(p.ref_token());
            let j = self.slot(p.hyp_token());
            self.counts[i][j] += 1;
            self.total += 1;
        }
    }

    pub fn phone_set(&self) -> &[String] {
        &self.phone_set
    }

    pub fn cardinality(&self) -> usize {
        self.phone_set.len()
    }

    /// Row `i` is the reference token, column `j` the hypothesis token.
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn count(&self, reference: &str, hypothesis: &str) -> u64 {
        match (self.index.get(reference), self.index.get(hypothesis)) {
            (Some(&i), Some(&j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}
