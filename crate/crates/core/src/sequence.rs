//! Tokens, masked sequences, index sets, and the subsequence-embedding
//! counting dynamic programs behind every exact oracle.
//!
//! An *embedding* of a masked pattern `x` into a clean sequence `y` is a
//! strictly increasing index set `S` with `|S| = len(x)` such that each
//! clean token of `x` equals the token of `y` it is mapped to. A mask in `x`
//! matches any token.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token id. [`Token::MASK`] is the distinguished mask symbol and never a
/// member of any vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    pub const MASK: Token = Token(u32::MAX);

    #[inline]
    pub fn is_mask(self) -> bool {
        self == Token::MASK
    }

    #[inline]
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

#[inline]
fn matches(pattern: Token, clean: Token) -> bool {
    pattern.is_mask() || pattern == clean
}

/// A finite sequence over the vocabulary plus the mask token. The empty
/// sequence is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskedSeq(Vec<Token>);

impl MaskedSeq {
    pub fn new(tokens: Vec<Token>) -> Self {
        MaskedSeq(tokens)
    }

    pub fn empty() -> Self {
        MaskedSeq(Vec::new())
    }

    pub fn from_ids(ids: &[u32]) -> Self {
        MaskedSeq(ids.iter().map(|&i| Token(i)).collect())
    }

    pub fn masks(n: usize) -> Self {
        MaskedSeq(vec![Token::MASK; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Option<Token> {
        self.0.get(i).copied()
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }

    pub fn is_clean(&self) -> bool {
        !self.0.iter().any(|t| t.is_mask())
    }

    pub fn mask_count(&self) -> usize {
        self.0.iter().filter(|t| t.is_mask()).count()
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_mask())
            .map(|(i, _)| i)
    }

    pub fn starts_with(&self, prefix: &[Token]) -> bool {
        self.0.starts_with(prefix)
    }

    /// Inserts `v` before position `i`; `i == len` appends.
    pub fn insert_at(&self, i: usize, v: Token) -> Result<MaskedSeq> {
        if i > self.len() {
            return Err(Error::OutOfRange {
                what: "gap",
                index: i,
                len: self.len(),
            });
        }
        let mut out = Vec::with_capacity(self.len() + 1);
        out.extend_from_slice(&self.0[..i]);
        out.push(v);
        out.extend_from_slice(&self.0[i..]);
        Ok(MaskedSeq(out))
    }

    /// Replaces the token at position `i`.
    pub fn replace_at(&self, i: usize, v: Token) -> Result<MaskedSeq> {
        if i >= self.len() {
            return Err(Error::OutOfRange {
                what: "position",
                index: i,
                len: self.len(),
            });
        }
        let mut out = self.0.clone();
        out[i] = v;
        Ok(MaskedSeq(out))
    }

    /// The subsequence `self|_S` in ascending index order.
    pub fn restrict(&self, s: &IndexSet) -> Result<MaskedSeq> {
        if let Some(&last) = s.indices().last() {
            if last >= self.len() {
                return Err(Error::OutOfRange {
                    what: "index",
                    index: last,
                    len: self.len(),
                });
            }
        }
        Ok(MaskedSeq(s.indices().iter().map(|&k| self.0[k]).collect()))
    }

    pub(crate) fn push(&mut self, t: Token) {
        self.0.push(t)
    }

    pub(crate) fn set(&mut self, i: usize, t: Token) {
        self.0[i] = t
    }

    pub(crate) fn remove(&mut self, i: usize) -> Token {
        self.0.remove(i)
    }

    pub(crate) fn insert_masks(&mut self, gap: usize, count: usize) {
        self.0
            .splice(gap..gap, std::iter::repeat_n(Token::MASK, count));
    }
}

impl From<Vec<Token>> for MaskedSeq {
    fn from(v: Vec<Token>) -> Self {
        MaskedSeq(v)
    }
}

impl std::ops::Index<usize> for MaskedSeq {
    type Output = Token;
    fn index(&self, i: usize) -> &Token {
        &self.0[i]
    }
}

/// A strictly increasing list of nonnegative indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        IndexSet(indices)
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn range(n: usize) -> Self {
        IndexSet((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `s[k]` with the boundary conventions `s[-1] = -1` and
    /// `s[len] = source_len`.
    pub fn boundary(&self, k: isize, source_len: usize) -> isize {
        if k < 0 {
            -1
        } else if k as usize >= self.0.len() {
            source_len as isize
        } else {
            self.0[k as usize] as isize
        }
    }

    /// Gap size `s[i] - s[i-1] - 1` for gap position `i` in `0..=len`.
    pub fn gap(&self, i: usize, source_len: usize) -> usize {
        let hi = self.boundary(i as isize, source_len);
        let lo = self.boundary(i as isize - 1, source_len);
        (hi - lo - 1) as usize
    }
}

impl TryFrom<Vec<usize>> for IndexSet {
    type Error = String;
    fn try_from(v: Vec<usize>) -> Result<Self, String> {
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err("index set must be strictly increasing".into());
        }
        Ok(IndexSet(v))
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Vec<usize> {
        s.0
    }
}

fn ensure_clean(y: &MaskedSeq) -> Result<()> {
    if y.is_clean() {
        Ok(())
    } else {
        Err(Error::MaskInClean)
    }
}

/// Prefix and suffix embedding tables of a pattern against one clean
/// sequence. Building the tables once answers every count, per-token count,
/// and gap sum for the pair in `O(len(x) * len(y))`.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    m: usize,
    n: usize,
    // forward[k*(n+1)+j]: embeddings of x[..k] into y[..j]
    forward: Vec<u64>,
    // backward[k*(n+1)+j]: embeddings of x[k..] into y[j..]
    backward: Vec<u64>,
    x: Vec<Token>,
    y: Vec<Token>,
}

impl EmbeddingTables {
    pub fn new(x: &MaskedSeq, y: &MaskedSeq) -> Result<Self> {
        ensure_clean(y)?;
        let (m, n) = (x.len(), y.len());
        let w = n + 1;
        let mut forward = vec![0u64; (m + 1) * w];
        let mut backward = vec![0u64; (m + 1) * w];
        forward[..w].fill(1);
        for k in 1..=m {
            let xk = x[k - 1];
            for j in 1..=n {
                let mut v = forward[k * w + j - 1];
                if matches(xk, y[j - 1]) {
                    v = v
                        .checked_add(forward[(k - 1) * w + j - 1])
                        .ok_or(Error::Overflow)?;
                }
                forward[k * w + j] = v;
            }
        }
        backward[m * w..].fill(1);
        for k in (0..m).rev() {
            let xk = x[k];
            for j in (0..n).rev() {
                let mut v = backward[k * w + j + 1];
                if matches(xk, y[j]) {
                    v = v
                        .checked_add(backward[(k + 1) * w + j + 1])
                        .ok_or(Error::Overflow)?;
                }
                backward[k * w + j] = v;
            }
        }
        Ok(EmbeddingTables {
            m,
            n,
            forward,
            backward,
            x: x.tokens().to_vec(),
            y: y.tokens().to_vec(),
        })
    }

    #[inline]
    fn fwd(&self, k: usize, j: usize) -> u64 {
        self.forward[k * (self.n + 1) + j]
    }

    #[inline]
    fn bwd(&self, k: usize, j: usize) -> u64 {
        self.backward[k * (self.n + 1) + j]
    }

    /// Number of embeddings of the whole pattern.
    pub fn count(&self) -> u64 {
        self.fwd(self.m, self.n)
    }

    /// Embeddings whose `i`-th pattern position lands on token `v`.
    pub fn count_token_at(&self, i: usize, v: Token) -> Result<u64> {
        let mut acc: u128 = 0;
        for j in 0..self.n {
            if self.y[j] == v && matches(self.x[i], v) {
                acc += self.fwd(i, j) as u128 * self.bwd(i + 1, j + 1) as u128;
            }
        }
        u64::try_from(acc).map_err(|_| Error::Overflow)
    }

    /// For pattern position `i`, the embedding counts split by the clean
    /// token it lands on, as `(token, count)` pairs with nonzero counts.
    pub fn token_counts_at(&self, i: usize) -> Result<Vec<(Token, u64)>> {
        let mut out: Vec<(Token, u128)> = Vec::new();
        for j in 0..self.n {
            let v = self.y[j];
            if !matches(self.x[i], v) {
                continue;
            }
            let c = self.fwd(i, j) as u128 * self.bwd(i + 1, j + 1) as u128;
            if c == 0 {
                continue;
            }
            match out.iter_mut().find(|(t, _)| *t == v) {
                Some(e) => e.1 += c,
                None => out.push((v, c)),
            }
        }
        out.sort_by_key(|(t, _)| *t);
        out.into_iter()
            .map(|(t, c)| Ok((t, u64::try_from(c).map_err(|_| Error::Overflow)?)))
            .collect()
    }

    /// Sum over embeddings `S` of the gap `S[i] - S[i-1] - 1`, with
    /// `S[-1] = -1` and `S[len] = len(y)`.
    pub fn gap_count(&self, i: usize) -> Result<u64> {
        let (m, n) = (self.m, self.n);
        // left[a'] counts embeddings of x[..i] whose last index is a'-1
        // (a' = 0 encodes the empty prefix); right[b] counts embeddings of
        // x[i..] whose first index is b (b = n encodes the empty suffix).
        let left = |ap: usize| -> u128 {
            if i == 0 {
                (ap == 0) as u128
            } else if ap == 0 || !matches(self.x[i - 1], self.y[ap - 1]) {
                0
            } else {
                self.fwd(i - 1, ap - 1) as u128
            }
        };
        let right = |b: usize| -> u128 {
            if i == m {
                (b == n) as u128
            } else if b == n || !matches(self.x[i], self.y[b]) {
                0
            } else {
                self.bwd(i + 1, b + 1) as u128
            }
        };
        let (mut sum_left, mut sum_weighted, mut total) = (0u128, 0u128, 0u128);
        for b in 0..=n {
            let l = left(b);
            sum_left += l;
            sum_weighted += l * b as u128;
            let r = right(b);
            if r != 0 {
                // sum over a' <= b of left[a'] * (b - a')
                let slack = b as u128 * sum_left - sum_weighted;
                total = slack
                    .checked_mul(r)
                    .and_then(|v| v.checked_add(total))
                    .ok_or(Error::Overflow)?;
            }
        }
        u64::try_from(total).map_err(|_| Error::Overflow)
    }
}

/// Number of order-preserving embeddings of `x` into the clean sequence `y`.
pub fn embed_count(x: &MaskedSeq, y: &MaskedSeq) -> Result<u64> {
    if x.len() > y.len() {
        ensure_clean(y)?;
        return Ok(0);
    }
    Ok(EmbeddingTables::new(x, y)?.count())
}

/// Embeddings of `x` into `y` whose `i`-th position carries `v`.
pub fn embed_count_token_at(x: &MaskedSeq, i: usize, v: Token, y: &MaskedSeq) -> Result<u64> {
    match x.get(i) {
        None => {
            return Err(Error::OutOfRange {
                what: "position",
                index: i,
                len: x.len(),
            })
        }
        Some(t) if !t.is_mask() => return Err(Error::NotMasked(i)),
        _ => {}
    }
    if v.is_mask() {
        return Err(Error::InvalidToken(v.0));
    }
    if x.len() > y.len() {
        ensure_clean(y)?;
        return Ok(0);
    }
    EmbeddingTables::new(x, y)?.count_token_at(i, v)
}

/// Sum of gap sizes before pattern position `i` over all embeddings of `x`
/// into `y`.
pub fn gap_count(x: &MaskedSeq, i: usize, y: &MaskedSeq) -> Result<u64> {
    if i > x.len() {
        return Err(Error::OutOfRange {
            what: "gap",
            index: i,
            len: x.len(),
        });
    }
    if x.len() > y.len() {
        ensure_clean(y)?;
        return Ok(0);
    }
    EmbeddingTables::new(x, y)?.gap_count(i)
}

/// Whether at least one embedding exists (greedy leftmost matching).
pub fn embeds(x: &MaskedSeq, y: &MaskedSeq) -> bool {
    let mut j = 0;
    for &t in x.tokens() {
        while j < y.len() && !matches(t, y[j]) {
            j += 1;
        }
        if j == y.len() {
            return false;
        }
        j += 1;
    }
    true
}

/// Whether `x` matches `y` position by position (same length, masks match
/// anything).
pub fn matches_aligned(x: &MaskedSeq, y: &MaskedSeq) -> bool {
    x.len() == y.len()
        && x.tokens()
            .iter()
            .zip(y.tokens())
            .all(|(&a, &b)| matches(a, b))
}

/// Text rendering of sequences: one glyph per token id, plus a mask glyph.
/// Vocabularies too large for glyphs use space-separated decimal ids with
/// `M` for the mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Alphabet {
    Glyphs { glyphs: Vec<char>, mask: char },
    Numeric,
}

impl Alphabet {
    pub fn new(glyphs: &str, mask: char) -> Result<Self> {
        let glyphs: Vec<char> = glyphs.chars().collect();
        let mut seen = glyphs.clone();
        seen.push(mask);
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != glyphs.len() + 1 || glyphs.iter().any(|c| c.is_whitespace()) {
            return Err(Error::Config(
                "alphabet glyphs must be distinct, non-blank and differ from the mask glyph".into(),
            ));
        }
        Ok(Alphabet::Glyphs { glyphs, mask })
    }

    pub fn parse(&self, text: &str) -> Result<MaskedSeq> {
        match self {
            Alphabet::Glyphs { glyphs, mask } => text
                .chars()
                .map(|c| {
                    if c == *mask {
                        Ok(Token::MASK)
                    } else {
                        glyphs
                            .iter()
                            .position(|&g| g == c)
                            .map(|i| Token(i as u32))
                            .ok_or_else(|| Error::Config(format!("unknown glyph {c:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(MaskedSeq),
            Alphabet::Numeric => text
                .split_whitespace()
                .map(|w| {
                    if w == "M" {
                        Ok(Token::MASK)
                    } else {
                        w.parse::<u32>()
                            .map(Token)
                            .map_err(|_| Error::Config(format!("bad token id {w:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(MaskedSeq),
        }
    }

    pub fn render(&self, x: &MaskedSeq) -> String {
        match self {
            Alphabet::Glyphs { glyphs, mask } => x
                .tokens()
                .iter()
                .map(|t| {
                    if t.is_mask() {
                        *mask
                    } else {
                        glyphs.get(t.id()).copied().unwrap_or('?')
                    }
                })
                .collect(),
            Alphabet::Numeric => x
                .tokens()
                .iter()
                .map(|t| {
                    if t.is_mask() {
                        "M".to_string()
                    } else {
                        t.0.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    pub fn glyph_count(&self) -> Option<usize> {
        match self {
            Alphabet::Glyphs { glyphs, .. } => Some(glyphs.len()),
            Alphabet::Numeric => None,
        }
    }
}

impl fmt::Display for MaskedSeq {
    /// Debug-friendly rendering: ids joined by `.`, `M` for the mask, `ε`
    /// for the empty sequence.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "ε");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|t| {
                if t.is_mask() {
                    "M".into()
                } else {
                    t.0.to_string()
                }
            })
            .collect();
        write!(f, "{}", parts.join("."))
    }
}

/// Exhaustive enumeration over index sets; the reference the DP is checked
/// against.
#[cfg(test)]
pub(crate) mod brute {
    use super::*;

    pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        rec(0, n, k, &mut cur, &mut out);
        out
    }

    pub fn embeddings(x: &MaskedSeq, y: &MaskedSeq) -> Vec<Vec<usize>> {
        if x.len() > y.len() {
            return Vec::new();
        }
        subsets(y.len(), x.len())
            .into_iter()
            .filter(|s| s.iter().enumerate().all(|(k, &j)| matches(x[k], y[j])))
            .collect()
    }

    pub fn count(x: &MaskedSeq, y: &MaskedSeq) -> u64 {
        embeddings(x, y).len() as u64
    }

    pub fn count_token_at(x: &MaskedSeq, i: usize, v: Token, y: &MaskedSeq) -> u64 {
        embeddings(x, y).iter().filter(|s| y[s[i]] == v).count() as u64
    }

    pub fn gap_count(x: &MaskedSeq, i: usize, y: &MaskedSeq) -> u64 {
        embeddings(x, y)
            .iter()
            .map(|s| {
                let hi = if i == s.len() {
                    y.len() as isize
                } else {
                    s[i] as isize
                };
                let lo = if i == 0 { -1 } else { s[i - 1] as isize };
                (hi - lo - 1) as u64
            })
            .sum()
    }

    /// Every sequence over `0..vocab` of length `len`.
    pub fn all_clean(vocab: u32, len: usize) -> Vec<MaskedSeq> {
        let mut out = vec![MaskedSeq::empty()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|s| {
                    (0..vocab).map(move |v| {
                        let mut t = s.clone();
                        t.push(Token(v));
                        t
                    })
                })
                .collect();
        }
        out
    }

    /// Every pattern over `0..vocab` plus the mask, of length `len`.
    pub fn all_patterns(vocab: u32, len: usize) -> Vec<MaskedSeq> {
        all_clean(vocab + 1, len)
            .into_iter()
            .map(|s| {
                MaskedSeq(
                    s.tokens()
                        .iter()
                        .map(|t| if t.0 == vocab { Token::MASK } else { *t })
                        .collect(),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab() -> Alphabet {
        Alphabet::new("ab", 'm').unwrap()
    }

    fn s(text: &str) -> MaskedSeq {
        ab().parse(text).unwrap()
    }

    const A: Token = Token(0);
    const B: Token = Token(1);

    #[test]
    fn embed_count_examples() {
        // frozen from brute::count
        assert_eq!(embed_count(&s(""), &s("ab")).unwrap(), 1);
        assert_eq!(embed_count(&s("m"), &s("ab")).unwrap(), 2);
        assert_eq!(embed_count(&s("mm"), &s("ab")).unwrap(), 1);
        assert_eq!(embed_count(&s("a"), &s("ba")).unwrap(), 1);
        assert_eq!(embed_count(&s("m"), &s("aa")).unwrap(), 2);
        for (x, y) in [
            ("", "ab"),
            ("m", "ab"),
            ("mm", "ab"),
            ("a", "ba"),
            ("m", "aa"),
        ] {
            assert_eq!(
                embed_count(&s(x), &s(y)).unwrap(),
                brute::count(&s(x), &s(y))
            );
        }
    }

    #[test]
    fn token_at_examples() {
        assert_eq!(embed_count_token_at(&s("m"), 0, A, &s("ab")).unwrap(), 1);
        assert_eq!(embed_count_token_at(&s("m"), 0, B, &s("ab")).unwrap(), 1);
        assert_eq!(embed_count_token_at(&s("mm"), 0, B, &s("ab")).unwrap(), 0);
        assert_eq!(brute::count_token_at(&s("mm"), 0, B, &s("ab")), 0);
    }

    #[test]
    fn token_at_errors() {
        assert_eq!(
            embed_count_token_at(&s("a"), 0, A, &s("ab")),
            Err(Error::NotMasked(0))
        );
        assert!(matches!(
            embed_count_token_at(&s("m"), 1, A, &s("ab")),
            Err(Error::OutOfRange { .. })
        ));
        assert_eq!(
            embed_count_token_at(&s("m"), 0, Token::MASK, &s("ab")),
            Err(Error::InvalidToken(u32::MAX))
        );
    }

    #[test]
    fn gap_count_examples() {
        assert_eq!(gap_count(&s(""), 0, &s("ab")).unwrap(), 2);
        assert_eq!(gap_count(&s("b"), 0, &s("ab")).unwrap(), 1);
        assert_eq!(gap_count(&s("ab"), 0, &s("ab")).unwrap(), 0);
        assert!(matches!(
            gap_count(&s("a"), 2, &s("ab")),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn masks_in_clean_sequence_rejected() {
        assert_eq!(embed_count(&s("a"), &s("am")), Err(Error::MaskInClean));
        assert_eq!(embed_count(&s("aaa"), &s("m")), Err(Error::MaskInClean));
    }

    #[test]
    fn structural_edits() {
        let abc = Alphabet::new("abcd", 'm').unwrap();
        let x = abc.parse("abc").unwrap();
        let d = Token(3);
        assert_eq!(abc.render(&x.insert_at(0, d).unwrap()), "dabc");
        assert_eq!(abc.render(&x.insert_at(3, d).unwrap()), "abcd");
        assert_eq!(
            abc.render(&x.restrict(&IndexSet::new(vec![0, 2])).unwrap()),
            "ac"
        );
        assert_eq!(abc.render(&x.replace_at(1, d).unwrap()), "adc");
        assert!(x.insert_at(4, d).is_err());
        assert!(x.replace_at(3, d).is_err());
        assert!(x.restrict(&IndexSet::new(vec![3])).is_err());
    }

    #[test]
    fn index_set_boundaries() {
        let st = IndexSet::new(vec![4, 1]);
        assert_eq!(st.indices(), &[1, 4]);
        assert_eq!(st.boundary(-1, 6), -1);
        assert_eq!(st.boundary(2, 6), 6);
        assert_eq!(st.gap(0, 6), 1);
        assert_eq!(st.gap(1, 6), 2);
        assert_eq!(st.gap(2, 6), 1);
        assert!(IndexSet::try_from(vec![2, 2]).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        // C(70, 35) > 2^64
        let y = MaskedSeq::new(vec![A; 70]);
        assert_eq!(embed_count(&MaskedSeq::masks(35), &y), Err(Error::Overflow));
        assert!(embed_count(&MaskedSeq::masks(8), &y).is_ok());
    }

    #[test]
    fn exhaustive_against_enumeration() {
        for ylen in 0..=6 {
            for y in brute::all_clean(3, ylen) {
                for xlen in 0..=ylen.min(3) {
                    for x in brute::all_patterns(3, xlen) {
                        let t = EmbeddingTables::new(&x, &y).unwrap();
                        assert_eq!(t.count(), brute::count(&x, &y), "{x} in {y}");
                        assert_eq!(embeds(&x, &y), t.count() > 0);
                        for i in 0..=x.len() {
                            assert_eq!(t.gap_count(i).unwrap(), brute::gap_count(&x, i, &y));
                        }
                        for i in x.masked_positions() {
                            for v in 0..3 {
                                assert_eq!(
                                    t.count_token_at(i, Token(v)).unwrap(),
                                    brute::count_token_at(&x, i, Token(v), &y)
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    fn clean_seq(max_len: usize) -> impl Strategy<Value = MaskedSeq> {
        prop::collection::vec(0u32..3, 0..=max_len).prop_map(|v| MaskedSeq::from_ids(&v))
    }

    fn pattern(max_len: usize) -> impl Strategy<Value = MaskedSeq> {
        prop::collection::vec(0u32..4, 0..=max_len).prop_map(|v| {
            MaskedSeq::new(
                v.into_iter()
                    .map(|t| if t == 3 { Token::MASK } else { Token(t) })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn dp_matches_enumeration(y in clean_seq(8), x in pattern(8)) {
            prop_assume!(x.len() <= y.len());
            prop_assert_eq!(embed_count(&x, &y).unwrap(), brute::count(&x, &y));
        }

        #[test]
        fn gap_counts_sum_to_slack(y in clean_seq(8), x in pattern(5)) {
            let total: u64 = (0..=x.len()).map(|i| gap_count(&x, i, &y).unwrap()).sum();
            let slack = y.len().saturating_sub(x.len()) as u64;
            prop_assert_eq!(total, slack * embed_count(&x, &y).unwrap());
        }

        #[test]
        fn gap_count_is_count_with_inserted_mask(y in clean_seq(7), x in pattern(5)) {
            for i in 0..=x.len() {
                let widened = x.insert_at(i, Token::MASK).unwrap();
                prop_assert_eq!(gap_count(&x, i, &y).unwrap(), embed_count(&widened, &y).unwrap());
            }
        }

        #[test]
        fn token_counts_partition_count(y in clean_seq(7), x in pattern(5)) {
            for i in x.masked_positions() {
                let total: u64 = (0..3).map(|v| embed_count_token_at(&x, i, Token(v), &y).unwrap()).sum();
                prop_assert_eq!(total, embed_count(&x, &y).unwrap());
                let replaced = embed_count(&x.replace_at(i, Token(1)).unwrap(), &y).unwrap();
                prop_assert_eq!(embed_count_token_at(&x, i, Token(1), &y).unwrap(), replaced);
            }
        }

        #[test]
        fn alphabet_round_trip(x in pattern(10)) {
            let alpha = Alphabet::new("abc", '_').unwrap();
            prop_assert_eq!(alpha.parse(&alpha.render(&x)).unwrap(), x.clone());
            prop_assert_eq!(Alphabet::Numeric.parse(&Alphabet::Numeric.render(&x)).unwrap(), x);
        }
    }
}
