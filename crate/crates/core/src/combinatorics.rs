//! Subsets of users, member replacement and harmonic numbers.

use std::fmt;
use std::sync::RwLock;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::Rational;

/// A strictly increasing set of 1-based user indices drawn from `[K]`.
///
/// Ordering is lexicographic on the sorted members, which coincides with the
/// order produced by [`enumerate_subsets`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserSet(Vec<u32>);

impl UserSet {
    pub fn empty() -> Self {
        UserSet(Vec::new())
    }

    /// Builds a set from arbitrary members, checking range and distinctness.
    pub fn new(k: u32, members: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut v: Vec<u32> = members.into_iter().collect();
        v.sort_unstable();
        if v.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate user in {v:?}")));
        }
        if let Some(&bad) = v.iter().find(|&&u| u == 0 || u > k) {
            return Err(Error::invalid(format!("user {bad} outside 1..={k}")));
        }
        Ok(UserSet(v))
    }

    pub fn members(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, user: u32) -> bool {
        self.0.binary_search(&user).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    /// `self ∖ {user}`; unchanged when `user` is absent.
    pub fn without(&self, user: u32) -> UserSet {
        UserSet(self.0.iter().copied().filter(|&u| u != user).collect())
    }

    /// `self ∪ {user}`.
    pub fn with(&self, user: u32) -> UserSet {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&user) {
            v.insert(pos, user);
        }
        UserSet(v)
    }

    /// Bitmask over users `1..=64`.
    pub fn mask(&self) -> u64 {
        self.0.iter().fold(0u64, |m, &u| m | (1u64 << (u - 1)))
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, u) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{u}")?;
        }
        write!(f, "}}")
    }
}

/// All `size`-subsets of `[k]` in lexicographic order.
pub fn enumerate_subsets(k: u32, size: u32) -> Result<Vec<UserSet>> {
    if size > k {
        return Err(Error::invalid(format!(
            "subset size {size} exceeds K = {k}"
        )));
    }
    let size = size as usize;
    let mut out = Vec::new();
    let mut current: Vec<u32> = (1..=size as u32).collect();
    loop {
        out.push(UserSet(current.clone()));
        // advance to the next combination
        let mut i = size;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if current[i] < k - (size - 1 - i) as u32 {
                current[i] += 1;
                for j in i + 1..size {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// The `size`-subsets of `[k]` that contain `user`.
pub fn subsets_containing(k: u32, size: u32, user: u32) -> Result<Vec<UserSet>> {
    if user == 0 || user > k {
        return Err(Error::invalid(format!("user {user} outside 1..={k}")));
    }
    if size == 0 {
        return Ok(Vec::new());
    }
    let rest: Vec<u32> = (1..=k).filter(|&u| u != user).collect();
    let mut out: Vec<UserSet> = enumerate_subsets(k - 1, size - 1)?
        .into_iter()
        .map(|s| UserSet(s.0.iter().map(|&i| rest[i as usize - 1]).collect()).with(user))
        .collect();
    out.sort();
    Ok(out)
}

/// Replaces `old` by `new` inside `set`.
pub fn replace_member(set: &UserSet, old: u32, new: u32) -> Result<UserSet> {
    if !set.contains(old) {
        return Err(Error::invalid(format!("{old} is not a member of {set}")));
    }
    if set.contains(new) {
        return Err(Error::invalid(format!(
            "{new} is already a member of {set}"
        )));
    }
    Ok(set.without(old).with(new))
}

/// Exact harmonic number `H_n` together with its order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Harmonic {
    pub order: u64,
    pub value: Rational,
}

static HARMONIC_MEMO: RwLock<Vec<Rational>> = RwLock::new(Vec::new());

/// Orders above this are not memoised: their exact denominators grow like
/// `lcm(1..n)` and are only ever needed transiently.
const MEMO_LIMIT: u64 = 4096;

/// Exact `H_n = Σ_{i=1}^{n} 1/i`, memoised process-wide for small `n`.
pub fn harmonic(n: u64) -> Harmonic {
    Harmonic {
        order: n,
        value: harmonic_value(n),
    }
}

pub fn harmonic_value(n: u64) -> Rational {
    if n > MEMO_LIMIT {
        let mut h = harmonic_value(MEMO_LIMIT);
        for i in MEMO_LIMIT + 1..=n {
            h += Rational::new(BigInt::from(1), BigInt::from(i));
        }
        return h;
    }
    {
        let memo = HARMONIC_MEMO.read().unwrap_or_else(|e| e.into_inner());
        if let Some(h) = memo.get(n as usize) {
            return h.clone();
        }
    }
    let mut memo = HARMONIC_MEMO.write().unwrap_or_else(|e| e.into_inner());
    if memo.is_empty() {
        memo.push(Rational::from_integer(BigInt::from(0)));
    }
    while memo.len() <= n as usize {
        let i = memo.len() as u64;
        let next = &memo[memo.len() - 1] + Rational::new(BigInt::from(1), BigInt::from(i));
        memo.push(next);
    }
    memo[n as usize].clone()
}

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Floating `H_n`: direct summation up to 10^6, asymptotic expansion beyond.
///
/// Accepts `f64` so that astronomically large orders can be evaluated.
pub fn harmonic_f64(n: f64) -> f64 {
    if n < 1.0 {
        return 0.0;
    }
    if n <= 1.0e6 {
        let n = n.round() as u64;
        // summing small terms first limits rounding error
        return (1..=n).rev().map(|i| 1.0 / i as f64).sum();
    }
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    n.ln() + EULER_GAMMA + 0.5 * inv - inv2 / 12.0 + inv2 * inv2 / 120.0
}
