//! Placement, file splitting and XOR folding for fold order `η`.
//!
//! Each file is laid out as
//!
//! ```text
//! [ W_{n,τ_1} | W_{n,τ_2} | ... | W_{n,τ_C(K,η)} | uncached ]
//!   each subfile = [ folded part | unfolded part ]
//! ```
//!
//! with the `τ` in lexicographic order. The folded parts of the subfiles
//! requested by the members of an `(η+1)`-set `ψ` are XORed into one
//! multicast message `X_ψ`; unfolded and uncached parts travel over the
//! per-user private pipe.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::SystemParams;
use crate::combinatorics::{enumerate_subsets, UserSet};
use crate::error::{Error, Result};
use crate::rational::{binomial_q, int, Rational};

/// Every packetized file length is a multiple of this many symbols.
pub const BASE_BLOCK: u64 = 64;

/// Upper bound on symbols per file accepted by [`Packetization::for_plan`].
pub const MAX_FILE_SYMBOLS: u64 = 1 << 22;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Part sizes for one fold order, as exact fractions of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub k: u32,
    pub n: u64,
    pub cumulative: u32,
    pub eta: u32,
    pub alpha: Rational,
    pub gamma: Rational,
    /// Delivery time `T` the split is calibrated for.
    pub delivery_time: Rational,
    /// `KM/(Nη)`
    pub cached_part: Rational,
    pub uncached_part: Rational,
    /// `M/(N·C(K−1, η−1))`
    pub subfile: Rational,
    /// `(αT − (1 − KM/(Nη)))/C(K−1, η)`
    pub unfolded_per_subfile: Rational,
    pub folded_per_subfile: Rational,
    /// `(1 − γ − αT)/C(K−1, η)`
    pub folded_message: Rational,
}

impl SplitPlan {
    pub fn subfiles_per_file(&self) -> u64 {
        binomial_q(self.k as u64, self.eta as u64)
            .to_integer()
            .to_u64()
            .unwrap_or(0)
    }

    /// Fraction of its own file a user already holds.
    pub fn own_cached_per_user(&self) -> Rational {
        binomial_q(self.k as u64 - 1, self.eta as u64 - 1) * &self.subfile
    }

    /// Fraction of its file a user receives through folded messages.
    pub fn folded_per_user(&self) -> Rational {
        binomial_q(self.k as u64 - 1, self.eta as u64) * &self.folded_per_subfile
    }

    /// Fraction of its file a user receives over the private pipe (`αT`).
    pub fn residual_per_user(&self) -> Rational {
        &self.uncached_part
            + binomial_q(self.k as u64 - 1, self.eta as u64) * &self.unfolded_per_subfile
    }

    /// Size of one scalar stream of a phase-`phase` vector, as a fraction of a
    /// file. Phase `η+1` splits `X_ψ` over `K−η` streams; phase `j` carries
    /// `j−1` combinations of phase-`(j−1)` streams over `K−j+1` streams.
    pub fn stream_fraction(&self, phase: u32) -> Rational {
        assert!(
            phase > self.eta && phase <= self.k,
            "phase {phase} outside schedule"
        );
        let mut size = &self.folded_message / int((self.k - self.eta) as i64);
        for j in self.eta + 2..=phase {
            size = size * int(j as i64 - 1) / int((self.k - j + 1) as i64);
        }
        size
    }

    fn all_fractions(&self) -> Vec<Rational> {
        let mut v = vec![
            self.cached_part.clone(),
            self.uncached_part.clone(),
            self.subfile.clone(),
            self.unfolded_per_subfile.clone(),
            self.folded_per_subfile.clone(),
            self.folded_message.clone(),
        ];
        v.extend((self.eta + 1..=self.k).map(|j| self.stream_fraction(j)));
        v
    }
}

/// Splits files for fold order `eta` and delivery time `t`.
pub fn plan_split(params: &SystemParams, eta: u32, t: &Rational) -> Result<SplitPlan> {
    let g = params.delivery_gamma()?;
    let k = params.k();
    if eta < g || eta >= k {
        return Err(Error::invalid(format!(
            "η = {eta} outside [{g}, {}]",
            k - 1
        )));
    }
    let gamma = params.gamma();
    let alpha = params.alpha().clone();
    let cached_part = int(g as i64) / int(eta as i64);
    let uncached_part = Rational::one() - &cached_part;
    let subfile = &gamma / binomial_q(k as u64 - 1, eta as u64 - 1);
    let unfolded_per_subfile = (&alpha * t - &uncached_part) / binomial_q(k as u64 - 1, eta as u64);
    let folded_per_subfile = &subfile - &unfolded_per_subfile;
    let folded_message =
        (Rational::one() - &gamma - &alpha * t) / binomial_q(k as u64 - 1, eta as u64);

    for (name, v) in [
        ("unfolded part", &unfolded_per_subfile),
        ("folded part", &folded_per_subfile),
        ("folded message", &folded_message),
    ] {
        if v.is_negative() {
            return Err(Error::InfeasibleSplit(format!(
                "{name} size {v} is negative for η = {eta}, α = {alpha}, T = {t}"
            )));
        }
    }

    Ok(SplitPlan {
        k,
        n: params.n(),
        cumulative: g,
        eta,
        alpha,
        gamma,
        delivery_time: t.clone(),
        cached_part,
        uncached_part,
        subfile,
        unfolded_per_subfile,
        folded_per_subfile,
        folded_message,
    })
}

/// Symbol counts for a plan: `f_sym` is the LCM of every part's denominator
/// times [`BASE_BLOCK`], so all parts and phase streams are whole symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packetization {
    pub file_symbols: u64,
}

impl Packetization {
    pub fn for_plan(plan: &SplitPlan) -> Result<Self> {
        let lcm = plan
            .all_fractions()
            .iter()
            .fold(BigInt::one(), |acc, f| acc.lcm(f.denom()));
        let f_sym = lcm * BigInt::from(BASE_BLOCK);
        match f_sym.to_u64() {
            Some(v) if v <= MAX_FILE_SYMBOLS => Ok(Packetization { file_symbols: v }),
            _ => Err(Error::InvalidPacketization(format!(
                "{f_sym} symbols per file exceeds the limit of {MAX_FILE_SYMBOLS}"
            ))),
        }
    }

    /// Number of symbols in a part of the given fractional size.
    pub fn symbols(&self, fraction: &Rational) -> Result<usize> {
        symbols_of(fraction, self.file_symbols)
    }
}

fn symbols_of(fraction: &Rational, file_symbols: u64) -> Result<usize> {
    let v = fraction * int(file_symbols as i64);
    if !v.is_integer() || v.is_negative() {
        return Err(Error::InvalidPacketization(format!(
            "fraction {fraction} of {file_symbols} symbols is not a whole symbol count"
        )));
    }
    v.to_integer()
        .to_usize()
        .ok_or_else(|| Error::InvalidPacketization("symbol count overflow".into()))
}

/// The `N` library files, all of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Library {
    files: Vec<Vec<u8>>,
}

impl Library {
    /// Pseudorandom files; file `n` starts with `n` as little-endian `u32`.
    pub fn generate(n: u64, file_symbols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let files = (1..=n)
            .map(|idx| {
                let mut bytes = vec![0u8; file_symbols];
                rng.fill_bytes(&mut bytes);
                let tag = (idx as u32).to_le_bytes();
                let head = tag.len().min(file_symbols);
                bytes[..head].copy_from_slice(&tag[..head]);
                bytes
            })
            .collect();
        Library { files }
    }

    pub fn from_files(files: Vec<Vec<u8>>) -> Result<Self> {
        if let Some(first) = files.first() {
            if files.iter().any(|f| f.len() != first.len()) {
                return Err(Error::invalid("library files differ in length"));
            }
        }
        Ok(Library { files })
    }

    /// File `index` (1-based).
    pub fn file(&self, index: u32) -> Option<&[u8]> {
        index
            .checked_sub(1)
            .and_then(|i| self.files.get(i as usize))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn file_symbols(&self) -> usize {
        self.files.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SubfileIndex {
    pub file: u32,
    pub subset: UserSet,
}

/// Contents of every user's cache.
#[derive(Debug, Clone)]
pub struct CacheContents {
    pub k: u32,
    pub eta: u32,
    pub file_symbols: usize,
    pub subfile_symbols: usize,
    caches: Vec<BTreeMap<SubfileIndex, Vec<u8>>>,
}

impl CacheContents {
    /// Cache of `user` (1-based).
    pub fn user(&self, user: u32) -> &BTreeMap<SubfileIndex, Vec<u8>> {
        &self.caches[user as usize - 1]
    }

    pub fn get(&self, user: u32, index: &SubfileIndex) -> Option<&[u8]> {
        self.caches
            .get(user.checked_sub(1)? as usize)?
            .get(index)
            .map(Vec::as_slice)
    }

    pub fn stored_symbols(&self, user: u32) -> usize {
        self.user(user).values().map(Vec::len).sum()
    }

    pub fn manifest(&self) -> CacheManifest {
        CacheManifest {
            k: self.k,
            eta: self.eta,
            file_symbols: self.file_symbols,
            subfile_symbols: self.subfile_symbols,
            users: (1..=self.k)
                .map(|u| UserCacheManifest {
                    user: u,
                    stored_symbols: self.stored_symbols(u),
                    subfiles: self
                        .user(u)
                        .iter()
                        .map(|(idx, bytes)| SubfileRecord {
                            file: idx.file,
                            subset: idx.subset.clone(),
                            symbols: bytes.len(),
                            digest: sha256_hex(bytes),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Drops one stored subfile. Only used to exercise corrupted-cache paths.
    pub fn remove(&mut self, user: u32, index: &SubfileIndex) -> Option<Vec<u8>> {
        self.caches.get_mut(user as usize - 1)?.remove(index)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubfileRecord {
    pub file: u32,
    pub subset: UserSet,
    pub symbols: usize,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct UserCacheManifest {
    pub user: u32,
    pub stored_symbols: usize,
    pub subfiles: Vec<SubfileRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheManifest {
    pub k: u32,
    pub eta: u32,
    pub file_symbols: usize,
    pub subfile_symbols: usize,
    pub users: Vec<UserCacheManifest>,
}

/// Fills every cache: subfile `(n, τ)` goes to each user in `τ`.
pub fn place(library: &Library, params: &SystemParams, eta: u32) -> Result<CacheContents> {
    let g = params.delivery_gamma()?;
    let k = params.k();
    if eta < g || eta >= k {
        return Err(Error::invalid(format!(
            "η = {eta} outside [{g}, {}]",
            k - 1
        )));
    }
    if library.len() as u64 != params.n() {
        return Err(Error::invalid(format!(
            "library holds {} files, expected N = {}",
            library.len(),
            params.n()
        )));
    }
    let file_symbols = library.file_symbols();
    let subfile = params.gamma() / binomial_q(k as u64 - 1, eta as u64 - 1);
    let subfile_symbols = symbols_of(&subfile, file_symbols as u64)?;
    if subfile_symbols == 0 && !subfile.is_zero() {
        return Err(Error::InvalidPacketization("empty subfiles".into()));
    }

    let subsets = enumerate_subsets(k, eta)?;
    let mut caches = vec![BTreeMap::new(); k as usize];
    for file in 1..=params.n() as u32 {
        let bytes = library.file(file).expect("file index in range");
        for (pos, tau) in subsets.iter().enumerate() {
            let part = &bytes[pos * subfile_symbols..(pos + 1) * subfile_symbols];
            for user in tau.iter() {
                caches[user as usize - 1].insert(
                    SubfileIndex {
                        file,
                        subset: tau.clone(),
                    },
                    part.to_vec(),
                );
            }
        }
    }
    Ok(CacheContents {
        k,
        eta,
        file_symbols,
        subfile_symbols,
        caches,
    })
}

/// Order-`(η+1)` multicast message `X_ψ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldedMessage {
    pub psi: UserSet,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldedRecord {
    pub psi: UserSet,
    pub symbols: usize,
    pub digest: String,
}

pub fn folded_manifest(messages: &[FoldedMessage]) -> Vec<FoldedRecord> {
    messages
        .iter()
        .map(|m| FoldedRecord {
            psi: m.psi.clone(),
            symbols: m.payload.len(),
            digest: sha256_hex(&m.payload),
        })
        .collect()
}

pub(crate) fn check_requests(requests: &[u32], k: u32, n: u64) -> Result<()> {
    if requests.len() != k as usize {
        return Err(Error::invalid(format!(
            "expected {k} requests, got {}",
            requests.len()
        )));
    }
    if let Some(bad) = requests.iter().find(|&&r| r == 0 || r as u64 > n) {
        return Err(Error::invalid(format!(
            "requested file {bad} outside 1..={n}"
        )));
    }
    Ok(())
}

fn check_plan_matches(caches: &CacheContents, plan: &SplitPlan) -> Result<()> {
    if caches.k != plan.k || caches.eta != plan.eta {
        return Err(Error::invalid(format!(
            "caches built for (K, η) = ({}, {}), plan is for ({}, {})",
            caches.k, caches.eta, plan.k, plan.eta
        )));
    }
    Ok(())
}

/// Looks up `W_{file,τ}` in the cache of the first member of `τ`.
fn cached_subfile<'a>(caches: &'a CacheContents, file: u32, tau: &UserSet) -> Result<&'a [u8]> {
    let holder = tau
        .iter()
        .next()
        .ok_or_else(|| Error::CorruptedCache("empty subset".into()))?;
    let index = SubfileIndex {
        file,
        subset: tau.clone(),
    };
    caches
        .get(holder, &index)
        .ok_or_else(|| Error::CorruptedCache(format!("user {holder} lacks W_{{{file},{tau}}}")))
}

/// `X_ψ = ⊕_{k∈ψ} W^{c,f}_{R_k, ψ∖{k}}` for every `ψ` of size `η+1`.
pub fn fold(
    requests: &[u32],
    caches: &CacheContents,
    plan: &SplitPlan,
) -> Result<Vec<FoldedMessage>> {
    check_plan_matches(caches, plan)?;
    check_requests(requests, plan.k, plan.n)?;
    let folded_symbols = symbols_of(&plan.folded_per_subfile, caches.file_symbols as u64)?;
    enumerate_subsets(plan.k, plan.eta + 1)?
        .into_iter()
        .map(|psi| {
            let mut payload = vec![0u8; folded_symbols];
            for user in psi.iter() {
                let part = cached_subfile(caches, requests[user as usize - 1], &psi.without(user))?;
                if part.len() < folded_symbols {
                    return Err(Error::CorruptedCache(
                        "subfile shorter than its folded part".into(),
                    ));
                }
                for (p, b) in payload.iter_mut().zip(part) {
                    *p ^= b;
                }
            }
            Ok(FoldedMessage { psi, payload })
        })
        .collect()
}

/// What the private pipe carries to one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateDelivery {
    pub user: u32,
    pub uncached: Vec<u8>,
    /// Unfolded tail of `W_{R_k,τ}` for every `τ ∌ k`.
    pub unfolded: BTreeMap<UserSet, Vec<u8>>,
}

impl PrivateDelivery {
    pub fn total_symbols(&self) -> usize {
        self.uncached.len() + self.unfolded.values().map(Vec::len).sum::<usize>()
    }
}

/// Per-user content that bypasses folding: the uncached part of the
/// requested file plus the unfolded part of each missing subfile.
pub fn residual_demands(
    requests: &[u32],
    library: &Library,
    caches: &CacheContents,
    plan: &SplitPlan,
) -> Result<Vec<PrivateDelivery>> {
    check_plan_matches(caches, plan)?;
    check_requests(requests, plan.k, plan.n)?;
    let f = caches.file_symbols as u64;
    let folded_symbols = symbols_of(&plan.folded_per_subfile, f)?;
    let cached_symbols = symbols_of(&plan.cached_part, f)?;
    let subsets = enumerate_subsets(plan.k, plan.eta)?;
    (1..=plan.k)
        .map(|user| {
            let file = requests[user as usize - 1];
            let bytes = library
                .file(file)
                .ok_or_else(|| Error::invalid(format!("library lacks file {file}")))?;
            let mut unfolded = BTreeMap::new();
            for tau in subsets.iter().filter(|t| !t.contains(user)) {
                let part = cached_subfile(caches, file, tau)?;
                unfolded.insert(tau.clone(), part[folded_symbols..].to_vec());
            }
            Ok(PrivateDelivery {
                user,
                uncached: bytes[cached_symbols..].to_vec(),
                unfolded,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{retrospective_delivery_time, select_eta};
    use crate::rational::ratio;

    fn params(k: u32, n: u64, m: i64, alpha: Rational) -> SystemParams {
        SystemParams::new(k, n, int(m), alpha).unwrap()
    }

    fn selected_plan(p: &SystemParams) -> SplitPlan {
        let g = p.delivery_gamma().unwrap();
        let eta = select_eta(p.k(), g, p.alpha()).unwrap();
        let t = retrospective_delivery_time(p.k(), g, eta, p.alpha()).unwrap();
        plan_split(p, eta, &t).unwrap()
    }

    #[test]
    fn split_k3_alpha_zero() {
        let plan = plan_split(&params(3, 3, 1, int(0)), 1, &ratio(5, 6)).unwrap();
        assert_eq!(plan.cached_part, int(1));
        assert_eq!(plan.uncached_part, int(0));
        assert_eq!(plan.subfile, ratio(1, 3));
        assert_eq!(plan.unfolded_per_subfile, int(0));
        assert_eq!(plan.folded_per_subfile, ratio(1, 3));
        assert_eq!(plan.folded_message, ratio(1, 3));
    }

    #[test]
    fn split_k3_high_alpha() {
        let p = params(3, 3, 1, ratio(3, 4));
        let plan = plan_split(&p, 2, &ratio(2, 3)).unwrap();
        assert_eq!(plan.cached_part, ratio(1, 2));
        assert_eq!(plan.uncached_part, ratio(1, 2));
        assert_eq!(plan.subfile, ratio(1, 6));
        assert_eq!(plan.unfolded_per_subfile, int(0));
        assert_eq!(plan.folded_message, ratio(1, 6));
        assert_eq!(plan.residual_per_user(), ratio(1, 2));
    }

    #[test]
    fn eta_equal_gamma_at_zero_alpha_has_no_unfolded_part() {
        for k in 2..=8u32 {
            for m in 1..k as i64 {
                let p = params(k, k as u64, m, int(0));
                let plan = selected_plan(&p);
                assert_eq!(plan.eta, m as u32);
                assert_eq!(plan.unfolded_per_subfile, int(0));
                assert_eq!(plan.uncached_part, int(0));
            }
        }
    }

    #[test]
    fn infeasible_split_is_reported() {
        // η = 2 at α = 0 would need negative unfolded content
        let p = params(3, 3, 1, int(0));
        let t = retrospective_delivery_time(3, 1, 2, &int(0)).unwrap();
        assert!(matches!(
            plan_split(&p, 2, &t),
            Err(Error::InfeasibleSplit(_))
        ));
        assert!(plan_split(&p, 3, &t).is_err());
    }

    #[test]
    fn selected_split_is_feasible_and_conserves_bits() {
        for k in 2..=14u32 {
            for m in 1..k as i64 {
                for a in 0..=20 {
                    let p = params(k, k as u64, m, ratio(a, 20));
                    let plan = selected_plan(&p);
                    assert_eq!(&plan.cached_part + &plan.uncached_part, int(1));
                    assert_eq!(plan.folded_message, plan.folded_per_subfile);
                    let total = plan.own_cached_per_user()
                        + plan.folded_per_user()
                        + plan.residual_per_user();
                    assert_eq!(total, int(1), "K={k} M={m} α={a}/20");
                    assert_eq!(plan.residual_per_user(), p.alpha() * &plan.delivery_time);
                    assert_eq!(plan.own_cached_per_user(), p.gamma());
                }
            }
        }
    }

    #[test]
    fn packetization_is_integral() {
        let p = params(5, 5, 2, ratio(3, 10));
        let plan = selected_plan(&p);
        let pk = Packetization::for_plan(&plan).unwrap();
        assert_eq!(pk.file_symbols % BASE_BLOCK, 0);
        for f in plan.all_fractions() {
            pk.symbols(&f).unwrap();
        }
        assert!(pk.symbols(&ratio(1, 3 * pk.file_symbols as i64)).is_err());
    }

    fn k2_setup() -> (SystemParams, Library, CacheContents, SplitPlan) {
        let p = params(2, 2, 1, int(0));
        let plan = selected_plan(&p);
        let pk = Packetization::for_plan(&plan).unwrap();
        let lib = Library::generate(2, pk.file_symbols as usize, 9);
        let caches = place(&lib, &p, plan.eta).unwrap();
        (p, lib, caches, plan)
    }

    #[test]
    fn place_k2() {
        let (_, lib, caches, _) = k2_setup();
        let half = lib.file_symbols() / 2;
        let z1: Vec<_> = caches.user(1).keys().cloned().collect();
        let s1 = UserSet::new(2, [1]).unwrap();
        assert_eq!(
            z1,
            vec![
                SubfileIndex {
                    file: 1,
                    subset: s1.clone()
                },
                SubfileIndex {
                    file: 2,
                    subset: s1.clone()
                }
            ]
        );
        let idx = SubfileIndex {
            file: 2,
            subset: s1,
        };
        assert_eq!(caches.get(1, &idx).unwrap(), &lib.file(2).unwrap()[..half]);
    }

    #[test]
    fn placement_redundancy_and_size() {
        for (k, m, a) in [
            (4u32, 1i64, int(0)),
            (5, 2, int(0)),
            (5, 1, ratio(7, 10)),
            (4, 3, int(1)),
        ] {
            let p = params(k, k as u64, m, a);
            let plan = selected_plan(&p);
            let pk = Packetization::for_plan(&plan).unwrap();
            let lib = Library::generate(k as u64, pk.file_symbols as usize, 3);
            let caches = place(&lib, &p, plan.eta).unwrap();
            let per_user = k as u64
                * binomial_q(k as u64 - 1, plan.eta as u64 - 1)
                    .to_integer()
                    .to_u64()
                    .unwrap()
                * caches.subfile_symbols as u64;
            for u in 1..=k {
                assert_eq!(caches.stored_symbols(u) as u64, per_user);
                // M·f symbols
                assert_eq!(caches.stored_symbols(u) as u64, m as u64 * pk.file_symbols);
            }
            // each subfile lives at exactly η caches
            let mut holders: BTreeMap<SubfileIndex, u32> = BTreeMap::new();
            for u in 1..=k {
                for idx in caches.user(u).keys() {
                    assert!(idx.subset.contains(u));
                    *holders.entry(idx.clone()).or_default() += 1;
                }
            }
            assert!(holders.values().all(|&c| c == plan.eta));
        }
    }

    #[test]
    fn full_redundancy_when_eta_is_k_minus_one() {
        let p = params(4, 4, 3, int(0));
        let plan = selected_plan(&p);
        assert_eq!(plan.eta, 3);
        let pk = Packetization::for_plan(&plan).unwrap();
        let lib = Library::generate(4, pk.file_symbols as usize, 1);
        let caches = place(&lib, &p, 3).unwrap();
        for u in 1..=4 {
            assert!(caches.user(u).keys().all(|i| i.subset.len() == 3));
        }
    }

    #[test]
    fn fold_k2_single_message() {
        let (_, lib, caches, plan) = k2_setup();
        let msgs = fold(&[1, 2], &caches, &plan).unwrap();
        assert_eq!(msgs.len(), 1);
        let half = lib.file_symbols() / 2;
        // W_{1,{2}} ⊕ W_{2,{1}}
        let expected: Vec<u8> = lib.file(1).unwrap()[half..]
            .iter()
            .zip(&lib.file(2).unwrap()[..half])
            .map(|(a, b)| a ^ b)
            .collect();
        assert_eq!(msgs[0].payload, expected);
        assert_eq!(msgs[0].psi, UserSet::new(2, [1, 2]).unwrap());
    }

    #[test]
    fn fold_count_and_xor_decodability() {
        let p = params(5, 10, 4, int(0));
        let plan = selected_plan(&p);
        let pk = Packetization::for_plan(&plan).unwrap();
        let lib = Library::generate(10, pk.file_symbols as usize, 4);
        let caches = place(&lib, &p, plan.eta).unwrap();
        let requests = [3, 1, 9, 2, 5];
        let msgs = fold(&requests, &caches, &plan).unwrap();
        assert_eq!(msgs.len(), 10);
        let folded = pk.symbols(&plan.folded_per_subfile).unwrap();
        for msg in &msgs {
            assert_eq!(msg.payload.len(), pk.symbols(&plan.folded_message).unwrap());
            for k in msg.psi.iter() {
                let mut acc = msg.payload.clone();
                for other in msg.psi.iter().filter(|&o| o != k) {
                    let idx = SubfileIndex {
                        file: requests[other as usize - 1],
                        subset: msg.psi.without(other),
                    };
                    let part = caches.get(k, &idx).expect("partner subfile cached at k");
                    for (a, b) in acc.iter_mut().zip(part) {
                        *a ^= b;
                    }
                }
                let tau = msg.psi.without(k);
                let pos = enumerate_subsets(5, plan.eta)
                    .unwrap()
                    .iter()
                    .position(|t| *t == tau)
                    .unwrap();
                let start = pos * caches.subfile_symbols;
                let file = lib.file(requests[k as usize - 1]).unwrap();
                assert_eq!(acc, file[start..start + folded]);
            }
        }
    }

    #[test]
    fn fold_detects_missing_subfile() {
        let (_, _, mut caches, plan) = k2_setup();
        let idx = SubfileIndex {
            file: 2,
            subset: UserSet::new(2, [1]).unwrap(),
        };
        caches.remove(1, &idx);
        assert!(matches!(
            fold(&[1, 2], &caches, &plan),
            Err(Error::CorruptedCache(_))
        ));
    }

    #[test]
    fn fold_rejects_bad_requests() {
        let (_, _, caches, plan) = k2_setup();
        assert!(fold(&[1], &caches, &plan).is_err());
        assert!(fold(&[1, 3], &caches, &plan).is_err());
    }

    #[test]
    fn repeated_requests_fold_the_same_sizes() {
        let p = params(4, 4, 1, int(0));
        let plan = selected_plan(&p);
        let pk = Packetization::for_plan(&plan).unwrap();
        let lib = Library::generate(4, pk.file_symbols as usize, 5);
        let caches = place(&lib, &p, plan.eta).unwrap();
        let distinct = fold(&[1, 2, 3, 4], &caches, &plan).unwrap();
        let repeated = fold(&[2, 2, 2, 2], &caches, &plan).unwrap();
        assert_eq!(distinct.len(), repeated.len());
        assert!(distinct
            .iter()
            .zip(&repeated)
            .all(|(a, b)| a.payload.len() == b.payload.len()));
    }

    #[test]
    fn residual_sizes() {
        let (_, lib, caches, plan) = k2_setup();
        let res = residual_demands(&[1, 2], &lib, &caches, &plan).unwrap();
        assert!(res.iter().all(|r| r.total_symbols() == 0));

        let p = params(3, 3, 1, ratio(3, 4));
        let plan = selected_plan(&p);
        assert_eq!(plan.eta, 2);
        let pk = Packetization::for_plan(&plan).unwrap();
        let lib = Library::generate(3, pk.file_symbols as usize, 2);
        let caches = place(&lib, &p, 2).unwrap();
        let res = residual_demands(&[1, 2, 3], &lib, &caches, &plan).unwrap();
        for r in &res {
            assert_eq!(r.total_symbols() as u64 * 2, pk.file_symbols);
        }
    }

    #[test]
    fn manifests_serialize() {
        let (_, _, caches, plan) = k2_setup();
        let msgs = fold(&[1, 2], &caches, &plan).unwrap();
        let cache_json = serde_json::to_value(caches.manifest()).unwrap();
        assert_eq!(
            cache_json["users"][0]["subfiles"][0]["subset"],
            serde_json::json!([1])
        );
        assert_eq!(cache_json["users"].as_array().unwrap().len(), 2);
        let folded_json = serde_json::to_value(folded_manifest(&msgs)).unwrap();
        assert_eq!(folded_json[0]["digest"].as_str().unwrap().len(), 64);
    }
}
