//! Symbolic execution of the retrospective delivery phases `η+1..K` over
//! `F_p`, followed by backward decoding at every receiver.
//!
//! Phase `η+1` sends every folded message `X_ψ` as `K−η` scalar streams on
//! one vector. Each user `k` observes `L_{ψ,k} = h_k·x_ψ`. In phase `j > η+1`
//! the transmitter, knowing the past channel, forms `j−1` combinations of
//! `{L_{χ∖{m},m} : m ∈ χ}` for every `χ` of size `j` and sends them over
//! `K−j+1` streams. Receivers unwind this chain from phase `K` back to
//! `η+1`.
//!
//! The private (zero-forced) layer is not simulated symbol by symbol: it is
//! an ideal per-user pipe of rate `α` carrying the residual demands.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{achievable_t_best, retrospective_delivery_time, select_eta, SystemParams};
use crate::combinatorics::{enumerate_subsets, harmonic_value, subsets_containing, UserSet};
use crate::error::{Error, Result};
use crate::field::{combine_streams, determinant, invert, rank, to_hex, Fp, Matrix};
use crate::rational::{binomial_q, int, Rational, RationalJson};
use crate::scheme::{
    check_requests, fold, place, plan_split, residual_demands, sha256_hex, CacheContents,
    FoldedMessage, Library, Packetization, PrivateDelivery, SplitPlan, SubfileIndex,
};

const CHANNEL_STREAM: u64 = 1;
const COMBINER_STREAM: u64 = 2;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One delivery phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase {
    pub phase: u32,
    /// Scalar streams per vector, `K−j+1`.
    pub support: u32,
    /// `|Ψ_j| = C(K, j)`; the sets themselves come from [`Phase::messages`].
    pub message_count: Rational,
    /// Length of one scalar stream as a fraction of a file.
    pub stream_fraction: Rational,
    pub duration: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSchedule {
    pub k: u32,
    pub eta: u32,
    pub alpha: Rational,
    pub phases: Vec<Phase>,
}

impl Phase {
    /// Target sets `Ψ_j` in lexicographic order.
    pub fn messages(&self, k: u32) -> Result<Vec<UserSet>> {
        enumerate_subsets(k, self.phase)
    }
}

impl PhaseSchedule {
    pub fn phase(&self, j: u32) -> Option<&Phase> {
        j.checked_sub(self.eta + 1)
            .and_then(|i| self.phases.get(i as usize))
    }

    pub fn total(&self) -> Rational {
        self.phases.iter().map(|p| &p.duration).sum()
    }

    /// `(η+1)(H_K − H_η)·T_{η+1}`
    pub fn total_by_recursion(&self) -> Rational {
        let first = self
            .phases
            .first()
            .map_or_else(Rational::zero, |p| p.duration.clone());
        int(self.eta as i64 + 1)
            * (harmonic_value(self.k as u64) - harmonic_value(self.eta as u64))
            * first
    }
}

/// Phase durations for a split. With `α < 1` they follow from the common
/// layer's content at rate `1−α`; at `α = 1` the common layer is empty and
/// the durations are the recursion scaled to the plan's delivery time.
pub fn build_schedule(k: u32, eta: u32, plan: &SplitPlan) -> Result<PhaseSchedule> {
    if plan.k != k || plan.eta != eta {
        return Err(Error::invalid(format!(
            "plan is for (K, η) = ({}, {}), schedule requested for ({k}, {eta})",
            plan.k, plan.eta
        )));
    }
    let rate = Rational::one() - &plan.alpha;
    let first = if rate.is_zero() {
        &plan.delivery_time
            / (int(eta as i64 + 1) * (harmonic_value(k as u64) - harmonic_value(eta as u64)))
    } else {
        binomial_q(k as u64, eta as u64 + 1) * plan.stream_fraction(eta + 1) / &rate
    };
    let phases = (eta + 1..=k)
        .map(|j| Phase {
            phase: j,
            support: k - j + 1,
            message_count: binomial_q(k as u64, j as u64),
            stream_fraction: plan.stream_fraction(j),
            duration: &first * int(eta as i64 + 1) / int(j as i64),
        })
        .collect::<Vec<_>>();
    if !rate.is_zero() {
        for p in &phases {
            debug_assert_eq!(
                p.duration,
                &p.message_count * &p.stream_fraction / &rate,
                "phase {} duration",
                p.phase
            );
        }
    }
    Ok(PhaseSchedule {
        k,
        eta,
        alpha: plan.alpha.clone(),
        phases,
    })
}

/// Cauchy matrix `1/(x_i − y_c)` over distinct random points; every square
/// submatrix of a Cauchy matrix is nonsingular.
pub fn cauchy_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut points: Vec<Fp> = Vec::with_capacity(rows + cols);
    while points.len() < rows + cols {
        let p = Fp::random(rng);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let (xs, ys) = points.split_at(rows);
    xs.iter()
        .map(|&x| {
            ys.iter()
                .map(|&y| (x - y).inverse().expect("points are distinct"))
                .collect()
        })
        .collect()
}

/// True when deleting any single column leaves an invertible square matrix.
pub fn is_mds_combiner(m: &Matrix) -> bool {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if cols != rows + 1 {
        return false;
    }
    (0..cols).all(|drop| !determinant(&delete_column(m, drop)).is_zero())
}

fn delete_column(m: &Matrix, drop: usize) -> Matrix {
    m.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|&(c, _)| c != drop)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect()
}

/// Combination coefficients `f_1..f_{j−1}` for every phase `j ≥ η+2` and
/// every `χ` of size `j`. Column `c` of a matrix multiplies the observation
/// of the `c`-th smallest member of `χ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinerSpec {
    pub k: u32,
    pub eta: u32,
    matrices: BTreeMap<(u32, UserSet), Matrix>,
}

impl CombinerSpec {
    pub fn matrix(&self, phase: u32, chi: &UserSet) -> Option<&Matrix> {
        self.matrices.get(&(phase, chi.clone()))
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn all_mds(&self) -> bool {
        self.matrices.values().all(is_mds_combiner)
    }
}

pub fn make_combiners(k: u32, eta: u32, seed: u64) -> Result<CombinerSpec> {
    if eta == 0 || eta >= k {
        return Err(Error::invalid(format!(
            "η = {eta} outside [1, {}]",
            k.saturating_sub(1)
        )));
    }
    let mut rng = seeded(seed, COMBINER_STREAM);
    let mut matrices = BTreeMap::new();
    for j in eta + 2..=k {
        for chi in enumerate_subsets(k, j)? {
            let m = loop {
                let m = cauchy_matrix(j as usize - 1, j as usize, &mut rng);
                if is_mds_combiner(&m) {
                    break m;
                }
            };
            matrices.insert((j, chi), m);
        }
    }
    Ok(CombinerSpec { k, eta, matrices })
}

/// Source of seeded channel coefficients.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    rng: ChaCha8Rng,
    redraws: u64,
}

impl ChannelModel {
    pub fn new(seed: u64) -> Self {
        ChannelModel {
            rng: seeded(seed, CHANNEL_STREAM),
            redraws: 0,
        }
    }

    pub fn redraws(&self) -> u64 {
        self.redraws
    }

    /// `K × support` coefficients for a vector aimed at `psi`, redrawn until
    /// every decoding submatrix (one member row plus all non-member rows) is
    /// invertible. Returns the matrix and the number of redraws.
    pub fn draw(&mut self, k: u32, psi: &UserSet, support: usize) -> (Matrix, u32) {
        let mut redraws = 0;
        loop {
            let h: Matrix = (0..k)
                .map(|_| (0..support).map(|_| Fp::random(&mut self.rng)).collect())
                .collect();
            if psi
                .iter()
                .all(|u| invert(&decoding_rows(&h, k, psi, u)).is_some())
            {
                self.redraws += redraws as u64;
                return (h, redraws);
            }
            redraws += 1;
        }
    }
}

/// Observers whose equations user `user` combines to decode `x_ψ`: itself,
/// then every user outside `ψ` in ascending order.
fn decoding_observers(k: u32, psi: &UserSet, user: u32) -> Vec<u32> {
    std::iter::once(user)
        .chain((1..=k).filter(|o| !psi.contains(*o)))
        .collect()
}

fn decoding_rows(h: &Matrix, k: u32, psi: &UserSet, user: u32) -> Matrix {
    decoding_observers(k, psi, user)
        .into_iter()
        .map(|o| h[o as usize - 1].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub phase: u32,
    pub psi: UserSet,
    /// Transmitted scalar streams, one per antenna dimension in the support.
    pub streams: Vec<Vec<Fp>>,
    /// Row `u−1` holds `h_u` restricted to the support.
    pub channel: Matrix,
    /// Row `u−1` holds `L_{ψ,u}`.
    pub observations: Vec<Vec<Fp>>,
    /// Phase whose observations fed this payload.
    pub depends_on_phase: Option<u32>,
    pub redraws: u32,
}

impl Transmission {
    pub fn stream_len(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub k: u32,
    pub eta: u32,
    transmissions: Vec<Transmission>,
    index: BTreeMap<(u32, UserSet), usize>,
}

impl Transcript {
    pub fn new(k: u32, eta: u32) -> Self {
        Transcript {
            k,
            eta,
            ..Default::default()
        }
    }

    fn push(&mut self, tx: Transmission) {
        self.index
            .insert((tx.phase, tx.psi.clone()), self.transmissions.len());
        self.transmissions.push(tx);
    }

    pub fn transmissions(&self) -> &[Transmission] {
        &self.transmissions
    }

    pub fn len(&self) -> usize {
        self.transmissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transmissions.is_empty()
    }

    pub fn get(&self, phase: u32, psi: &UserSet) -> Option<&Transmission> {
        self.index
            .get(&(phase, psi.clone()))
            .map(|&i| &self.transmissions[i])
    }

    pub fn observation(&self, phase: u32, psi: &UserSet, user: u32) -> Option<&[Fp]> {
        self.get(phase, psi)
            .and_then(|tx| tx.observations.get(user as usize - 1))
            .map(Vec::as_slice)
    }

    /// Observations user `user` collected during phase `phase`.
    pub fn observation_count(&self, user: u32, phase: u32) -> usize {
        self.transmissions
            .iter()
            .filter(|tx| tx.phase == phase && tx.observations.len() >= user as usize)
            .count()
    }

    /// Every observation equals the channel applied to the payload.
    pub fn observations_consistent(&self) -> bool {
        self.transmissions
            .iter()
            .all(|tx| combine_streams(&tx.channel, &tx.streams) == tx.observations)
    }

    /// Phases never go backwards, and every retrospective payload was formed
    /// after all transmissions of the phase it depends on.
    pub fn causality_ok(&self) -> bool {
        let ordered = self
            .transmissions
            .windows(2)
            .all(|w| w[0].phase <= w[1].phase);
        let sourced =
            self.transmissions
                .iter()
                .enumerate()
                .all(|(i, tx)| match tx.depends_on_phase {
                    None => tx.phase == self.eta + 1,
                    Some(p) => {
                        p < tx.phase && self.transmissions[i..].iter().all(|later| later.phase != p)
                    }
                });
        ordered && sourced
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut put = |v: u32| hasher.update(v.to_le_bytes());
        put(self.k);
        put(self.eta);
        for tx in &self.transmissions {
            put(tx.phase);
            put(tx.psi.len() as u32);
            tx.psi.iter().for_each(&mut put);
            for row in tx.channel.iter().chain(&tx.streams).chain(&tx.observations) {
                put(row.len() as u32);
                row.iter().for_each(|v| put(v.value()));
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn export(&self) -> TranscriptExport {
        TranscriptExport {
            k: self.k,
            eta: self.eta,
            digest: self.digest(),
            slots: self
                .transmissions
                .iter()
                .map(|tx| SlotRecord {
                    phase: tx.phase,
                    psi: tx.psi.clone(),
                    support: tx.streams.len(),
                    symbols_per_stream: tx.stream_len(),
                    coefficients: tx.channel.iter().map(|row| to_hex(row)).collect(),
                    payload_digest: sha256_hex(&fp_bytes(&tx.streams)),
                    depends_on_phase: tx.depends_on_phase,
                    redraws: tx.redraws,
                })
                .collect(),
        }
    }
}

fn fp_bytes(rows: &[Vec<Fp>]) -> Vec<u8> {
    rows.iter()
        .flat_map(|r| r.iter().flat_map(|v| v.value().to_le_bytes()))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotRecord {
    pub phase: u32,
    pub psi: UserSet,
    pub support: usize,
    pub symbols_per_stream: usize,
    /// Per-user channel row, 8 hex digits per coefficient.
    pub coefficients: Vec<String>,
    pub payload_digest: String,
    pub depends_on_phase: Option<u32>,
    pub redraws: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptExport {
    pub k: u32,
    pub eta: u32,
    pub digest: String,
    pub slots: Vec<SlotRecord>,
}

/// Payload fed to [`transmit_phase`].
#[derive(Debug, Clone, Copy)]
pub enum PayloadSource<'a> {
    /// Folded messages, for phase `η+1`.
    Folded(&'a [FoldedMessage]),
    /// Combinations of the previous phase's observations, for later phases.
    Retrospective(&'a CombinerSpec),
}

fn split_streams(symbols: Vec<Fp>, parts: usize, phase: u32) -> Result<Vec<Vec<Fp>>> {
    if !symbols.len().is_multiple_of(parts) {
        return Err(Error::InvalidPacketization(format!(
            "phase {phase}: {} symbols do not split into {parts} streams",
            symbols.len()
        )));
    }
    let len = symbols.len() / parts;
    Ok(symbols
        .chunks(len.max(1))
        .map(<[Fp]>::to_vec)
        .take(parts)
        .collect())
}

/// Sends every vector of phase `j` and appends it to the transcript.
pub fn transmit_phase(
    j: u32,
    schedule: &PhaseSchedule,
    source: PayloadSource<'_>,
    channel: &mut ChannelModel,
    transcript: &mut Transcript,
) -> Result<()> {
    let phase = schedule
        .phase(j)
        .ok_or_else(|| Error::invalid(format!("phase {j} not in schedule")))?;
    if phase.stream_fraction.is_zero() {
        return Ok(());
    }
    let k = schedule.k;
    let support = phase.support as usize;
    match source {
        PayloadSource::Folded(messages) => {
            if j != schedule.eta + 1 {
                return Err(Error::invalid(format!(
                    "folded payload offered to phase {j}"
                )));
            }
            let by_psi: BTreeMap<&UserSet, &FoldedMessage> =
                messages.iter().map(|m| (&m.psi, m)).collect();
            for psi in &phase.messages(k)? {
                let msg = by_psi
                    .get(psi)
                    .ok_or_else(|| Error::invalid(format!("no folded message for ψ = {psi}")))?;
                let symbols: Vec<Fp> = msg.payload.iter().map(|&b| Fp::new(b as u64)).collect();
                let streams = split_streams(symbols, support, j)?;
                send(k, psi, streams, None, channel, transcript);
            }
        }
        PayloadSource::Retrospective(combiners) => {
            if j <= schedule.eta + 1 {
                return Err(Error::invalid(format!(
                    "retrospective payload offered to phase {j}"
                )));
            }
            for chi in &phase.messages(k)? {
                let coefs = combiners.matrix(j, chi).ok_or_else(|| {
                    Error::invalid(format!("no combiner for phase {j}, χ = {chi}"))
                })?;
                let inputs = chi
                    .iter()
                    .map(|m| {
                        transcript
                            .observation(j - 1, &chi.without(m), m)
                            .map(<[Fp]>::to_vec)
                            .ok_or_else(|| {
                                Error::invalid(format!(
                                    "phase {} observation of user {m} missing",
                                    j - 1
                                ))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let symbols = combine_streams(coefs, &inputs).concat();
                let streams = split_streams(symbols, support, j)?;
                send(k, chi, streams, Some(j - 1), channel, transcript);
            }
        }
    }
    Ok(())
}

fn send(
    k: u32,
    psi: &UserSet,
    streams: Vec<Vec<Fp>>,
    depends_on_phase: Option<u32>,
    channel: &mut ChannelModel,
    transcript: &mut Transcript,
) {
    let (h, redraws) = channel.draw(k, psi, streams.len());
    let observations = combine_streams(&h, &streams);
    transcript.push(Transmission {
        phase: psi.len() as u32,
        psi: psi.clone(),
        streams,
        channel: h,
        observations,
        depends_on_phase,
        redraws,
    });
}

/// Outcome of backward decoding at one receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserDecode {
    pub user: u32,
    pub file: Option<Vec<u8>>,
    pub error: Option<String>,
    pub singular_solves: u32,
    /// Every final solve used `K−η` independent equations.
    pub equations_sufficient: bool,
}

/// What a receiver can see: its own observations and the channel
/// coefficients, never the transmitted streams.
struct ReceiverView<'a> {
    user: u32,
    transcript: &'a Transcript,
}

impl ReceiverView<'_> {
    fn own(&self, phase: u32, psi: &UserSet) -> Option<&[Fp]> {
        self.transcript.observation(phase, psi, self.user)
    }

    fn channel(&self, phase: u32, psi: &UserSet) -> Option<&Matrix> {
        self.transcript.get(phase, psi).map(|tx| &tx.channel)
    }
}

struct DecodeState {
    singular_solves: u32,
    equations_sufficient: bool,
}

/// Receivers unwind phases `K → η+1`, then combine the folded messages with
/// their caches and private deliveries into the requested files.
pub fn backward_decode(
    transcript: &Transcript,
    caches: &CacheContents,
    combiners: &CombinerSpec,
    requests: &[u32],
    private: &[PrivateDelivery],
    plan: &SplitPlan,
) -> Vec<UserDecode> {
    (1..=plan.k)
        .map(|user| {
            let mut state = DecodeState {
                singular_solves: 0,
                equations_sufficient: true,
            };
            let result = decode_user(
                user, transcript, caches, combiners, requests, private, plan, &mut state,
            );
            let (file, error) = match result {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            UserDecode {
                user,
                file,
                error,
                singular_solves: state.singular_solves,
                equations_sufficient: state.equations_sufficient,
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn decode_user(
    user: u32,
    transcript: &Transcript,
    caches: &CacheContents,
    combiners: &CombinerSpec,
    requests: &[u32],
    private: &[PrivateDelivery],
    plan: &SplitPlan,
    state: &mut DecodeState,
) -> Result<Vec<u8>> {
    check_requests(requests, plan.k, plan.n)?;
    let (k, eta) = (plan.k, plan.eta);
    let view = ReceiverView { user, transcript };
    let f = caches.file_symbols as u64;
    let folded_symbols = symbols(&plan.folded_per_subfile, f)?;
    let active = !plan.folded_message.is_zero();

    // (phase, ψ, observer) → L_{ψ,observer}, recovered from later phases
    let mut overheard: BTreeMap<(u32, UserSet, u32), Vec<Fp>> = BTreeMap::new();
    let mut folded: BTreeMap<UserSet, Vec<u8>> = BTreeMap::new();

    for j in (eta + 1..=k).rev().filter(|_| active) {
        for psi in subsets_containing(k, j, user)? {
            let h = view.channel(j, &psi).ok_or_else(|| {
                Error::DecodeFailure(format!("no phase-{j} vector for ψ = {psi}"))
            })?;
            let observers = decoding_observers(k, &psi, user);
            let rows: Matrix = observers
                .iter()
                .map(|&o| h[o as usize - 1].clone())
                .collect();
            let values = observers
                .iter()
                .map(|&o| {
                    if o == user {
                        view.own(j, &psi).map(<[Fp]>::to_vec)
                    } else {
                        overheard.remove(&(j, psi.clone(), o))
                    }
                    .ok_or_else(|| {
                        Error::DecodeFailure(format!(
                            "user {user} lacks L from user {o} for phase {j}, ψ = {psi}"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if j == eta + 1 && rank(&rows) != (k - eta) as usize {
                state.equations_sufficient = false;
            }
            let inv = invert(&rows).ok_or_else(|| {
                state.singular_solves += 1;
                Error::DecodeFailure(format!("singular channel solve at phase {j}, ψ = {psi}"))
            })?;
            let payload = combine_streams(&inv, &values).concat();

            if j == eta + 1 {
                let bytes = payload
                    .iter()
                    .map(|v| u8::try_from(v.value()).ok())
                    .collect::<Option<Vec<u8>>>()
                    .ok_or_else(|| Error::DecodeFailure(format!("non-byte symbol in X_{psi}")))?;
                folded.insert(psi, bytes);
                continue;
            }

            let coefs = combiners.matrix(j, &psi).ok_or_else(|| {
                Error::DecodeFailure(format!("no combiner for phase {j}, ψ = {psi}"))
            })?;
            let combos = (j - 1) as usize;
            if payload.len() % combos != 0 {
                return Err(Error::DecodeFailure(format!(
                    "phase {j} payload length mismatch"
                )));
            }
            let mut rhs: Vec<Vec<Fp>> = payload
                .chunks(payload.len() / combos)
                .map(<[Fp]>::to_vec)
                .collect();
            let own_col = psi.iter().position(|m| m == user).expect("user in ψ");
            let own_prev = view.own(j - 1, &psi.without(user)).ok_or_else(|| {
                Error::DecodeFailure(format!("user {user} missed phase {}", j - 1))
            })?;
            for (row, coef_row) in rhs.iter_mut().zip(coefs) {
                let c = coef_row[own_col];
                for (r, &o) in row.iter_mut().zip(own_prev) {
                    *r = *r - c * o;
                }
            }
            let inv = invert(&delete_column(coefs, own_col)).ok_or_else(|| {
                state.singular_solves += 1;
                Error::DecodeFailure(format!("singular combiner at phase {j}, ψ = {psi}"))
            })?;
            let others: Vec<u32> = psi.iter().filter(|&m| m != user).collect();
            for (m, l) in others.into_iter().zip(combine_streams(&inv, &rhs)) {
                overheard.insert((j - 1, psi.without(m), m), l);
            }
        }
    }

    reassemble(
        user,
        caches,
        requests,
        private,
        plan,
        &folded,
        folded_symbols,
    )
}

fn symbols(fraction: &Rational, file_symbols: u64) -> Result<usize> {
    Packetization { file_symbols }.symbols(fraction)
}

fn reassemble(
    user: u32,
    caches: &CacheContents,
    requests: &[u32],
    private: &[PrivateDelivery],
    plan: &SplitPlan,
    folded: &BTreeMap<UserSet, Vec<u8>>,
    folded_symbols: usize,
) -> Result<Vec<u8>> {
    let file = requests[user as usize - 1];
    let pipe = private
        .iter()
        .find(|p| p.user == user)
        .ok_or_else(|| Error::DecodeFailure(format!("no private delivery for user {user}")))?;
    let own_cache = |file: u32, subset: UserSet| {
        let index = SubfileIndex { file, subset };
        caches.get(user, &index).ok_or_else(|| {
            Error::CorruptedCache(format!(
                "user {user} lacks W_{{{},{}}}",
                index.file, index.subset
            ))
        })
    };

    let mut out = Vec::with_capacity(caches.file_symbols);
    for tau in enumerate_subsets(plan.k, plan.eta)? {
        if tau.contains(user) {
            out.extend_from_slice(own_cache(file, tau)?);
            continue;
        }
        let psi = tau.with(user);
        let mut part = if folded_symbols == 0 {
            Vec::new()
        } else {
            folded
                .get(&psi)
                .cloned()
                .ok_or_else(|| Error::DecodeFailure(format!("X_{psi} not recovered")))?
        };
        for other in tau.iter() {
            let partner = own_cache(requests[other as usize - 1], psi.without(other))?;
            for (a, b) in part.iter_mut().zip(partner) {
                *a ^= b;
            }
        }
        let tail = pipe
            .unfolded
            .get(&tau)
            .ok_or_else(|| Error::DecodeFailure(format!("unfolded part for τ = {tau} missing")))?;
        out.extend_from_slice(&part);
        out.extend_from_slice(tail);
    }
    out.extend_from_slice(&pipe.uncached);
    if out.len() != caches.file_symbols {
        return Err(Error::DecodeFailure(format!(
            "reassembled {} symbols, expected {}",
            out.len(),
            caches.file_symbols
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub k: u32,
    pub n: u64,
    pub m: String,
    pub alpha: String,
}

/// Outcome of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub params: ParamsEcho,
    pub eta: u32,
    pub requests: Vec<u32>,
    pub seed: u64,
    pub file_symbols: u64,
    /// `max(common, private)` measured from the transcript and the pipe.
    pub duration: RationalJson,
    pub expected_duration: RationalJson,
    pub common_duration: RationalJson,
    pub private_duration: RationalJson,
    pub schedule_duration: RationalJson,
    pub decode_ok: bool,
    pub user_decoded: Vec<bool>,
    pub singular_solves: u32,
    pub channel_redraws: u64,
    pub equations_sufficient: bool,
    pub residual_bytes: Vec<u64>,
    pub expected_residual_bytes: u64,
    pub transmissions: usize,
    pub duration_ok: bool,
    pub residual_ok: bool,
    pub causality_ok: bool,
    pub transcript_digest: String,
}

impl SimReport {
    /// Conjunction of every assertion in the report.
    pub fn passed(&self) -> bool {
        self.decode_ok
            && self.singular_solves == 0
            && self.equations_sufficient
            && self.duration_ok
            && self.residual_ok
            && self.causality_ok
    }

    pub fn duration(&self) -> Result<Rational> {
        self.duration.to_rational()
    }
}

/// Every artifact of a run, for export and inspection.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub plan: SplitPlan,
    pub packetization: Packetization,
    pub library: Library,
    pub caches: CacheContents,
    pub folded: Vec<FoldedMessage>,
    pub private: Vec<PrivateDelivery>,
    pub schedule: PhaseSchedule,
    pub combiners: CombinerSpec,
    pub transcript: Transcript,
    pub decodes: Vec<UserDecode>,
    pub report: SimReport,
}

pub fn run_simulation(
    params: &SystemParams,
    requests: Option<&[u32]>,
    seed: u64,
) -> Result<SimulationRun> {
    let g = params.delivery_gamma()?;
    let k = params.k();
    let requests: Vec<u32> = requests.map_or_else(|| (1..=k).collect(), <[u32]>::to_vec);
    check_requests(&requests, k, params.n())?;

    let alpha = params.alpha().clone();
    let eta = select_eta(k, g, &alpha)?;
    let t = retrospective_delivery_time(k, g, eta, &alpha)?;
    let plan = plan_split(params, eta, &t)?;
    let packetization = Packetization::for_plan(&plan)?;
    let f_sym = packetization.file_symbols;

    let library = Library::generate(params.n(), f_sym as usize, seed);
    let caches = place(&library, params, eta)?;
    let folded = fold(&requests, &caches, &plan)?;
    let private = residual_demands(&requests, &library, &caches, &plan)?;

    let schedule = build_schedule(k, eta, &plan)?;
    let combiners = make_combiners(k, eta, seed)?;
    let mut channel = ChannelModel::new(seed);
    let mut transcript = Transcript::new(k, eta);
    for j in eta + 1..=k {
        let source = if j == eta + 1 {
            PayloadSource::Folded(&folded)
        } else {
            PayloadSource::Retrospective(&combiners)
        };
        transmit_phase(j, &schedule, source, &mut channel, &mut transcript)?;
    }

    let decodes = backward_decode(&transcript, &caches, &combiners, &requests, &private, &plan);
    let user_decoded: Vec<bool> = decodes
        .iter()
        .map(|d| d.file.as_deref() == library.file(requests[d.user as usize - 1]))
        .collect();

    let f_q = int(f_sym as i64);
    let one = Rational::one();
    let common_symbols: usize = transcript
        .transmissions()
        .iter()
        .map(Transmission::stream_len)
        .sum();
    let common_duration = if alpha == one {
        Rational::zero()
    } else {
        int(common_symbols as i64) / (&f_q * (&one - &alpha))
    };
    let residual_bytes: Vec<u64> = private.iter().map(|p| p.total_symbols() as u64).collect();
    let max_residual = residual_bytes.iter().copied().max().unwrap_or(0);
    let private_duration = if alpha.is_zero() {
        Rational::zero()
    } else {
        int(max_residual as i64) / (&f_q * &alpha)
    };
    let duration = common_duration.clone().max(private_duration.clone());
    let expected = achievable_t_best(params)?;
    let expected_residual = &alpha * &t * &f_q;
    let expected_residual_bytes = packetization.symbols(&(&alpha * &t))? as u64;

    let duration_ok = duration == expected
        && (alpha == one || common_duration == expected)
        && (alpha.is_zero() || private_duration == expected)
        && schedule.total() == expected;
    let residual_ok = residual_bytes
        .iter()
        .all(|&b| int(b as i64) == expected_residual);

    let report = SimReport {
        params: ParamsEcho {
            k,
            n: params.n(),
            m: params.m().to_string(),
            alpha: alpha.to_string(),
        },
        eta,
        requests: requests.clone(),
        seed,
        file_symbols: f_sym,
        duration: (&duration).into(),
        expected_duration: (&expected).into(),
        common_duration: (&common_duration).into(),
        private_duration: (&private_duration).into(),
        schedule_duration: (&schedule.total()).into(),
        decode_ok: user_decoded.iter().all(|&ok| ok),
        user_decoded,
        singular_solves: decodes.iter().map(|d| d.singular_solves).sum(),
        channel_redraws: channel.redraws(),
        equations_sufficient: decodes.iter().all(|d| d.equations_sufficient),
        residual_bytes,
        expected_residual_bytes,
        transmissions: transcript.len(),
        duration_ok,
        residual_ok,
        causality_ok: transcript.causality_ok(),
        transcript_digest: transcript.digest(),
    };

    Ok(SimulationRun {
        plan,
        packetization,
        library,
        caches,
        folded,
        private,
        schedule,
        combiners,
        transcript,
        decodes,
        report,
    })
}

/// Places, folds, transmits and decodes one demand vector. Requests default
/// to `(1, 2, …, K)`.
pub fn simulate(params: &SystemParams, requests: Option<&[u32]>, seed: u64) -> Result<SimReport> {
    run_simulation(params, requests, seed).map(|run| run.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    fn params(k: u32, m: i64, alpha: Rational) -> SystemParams {
        SystemParams::new(k, k as u64, int(m), alpha).unwrap()
    }

    fn plan_for(p: &SystemParams) -> SplitPlan {
        let g = p.delivery_gamma().unwrap();
        let eta = select_eta(p.k(), g, p.alpha()).unwrap();
        let t = retrospective_delivery_time(p.k(), g, eta, p.alpha()).unwrap();
        plan_split(p, eta, &t).unwrap()
    }

    #[test]
    fn schedule_k3_eta1() {
        let plan = plan_for(&params(3, 1, int(0)));
        let s = build_schedule(3, 1, &plan).unwrap();
        assert_eq!(s.phases.len(), 2);
        assert_eq!(s.phases[0].duration, ratio(1, 2));
        assert_eq!(s.phases[1].duration, ratio(1, 3));
        // T_2 : T_3 = 1 : 2/3
        assert_eq!(&s.phases[1].duration / &s.phases[0].duration, ratio(2, 3));
        assert_eq!(s.total(), ratio(5, 6));
        assert_eq!(s.total_by_recursion(), ratio(5, 6));
        assert_eq!(s.phases[0].support, 2);
        assert_eq!(s.phases[1].support, 1);
    }

    #[test]
    fn schedule_single_phase_at_top_eta() {
        let plan = plan_for(&params(4, 1, int(1)));
        assert_eq!(plan.eta, 3);
        let s = build_schedule(4, 3, &plan).unwrap();
        assert_eq!(s.phases.len(), 1);
        assert_eq!(s.total(), ratio(3, 4));
    }

    #[test]
    fn schedule_total_matches_closed_form() {
        for k in 2..=9u32 {
            for m in 1..k as i64 {
                for a in [int(0), ratio(1, 4), ratio(1, 2), ratio(3, 4), int(1)] {
                    let p = params(k, m, a);
                    let plan = plan_for(&p);
                    let s = build_schedule(k, plan.eta, &plan).unwrap();
                    assert_eq!(s.total(), plan.delivery_time);
                    assert_eq!(s.total_by_recursion(), plan.delivery_time);
                    assert_eq!(s.total(), achievable_t_best(&p).unwrap());
                }
            }
        }
    }

    #[test]
    fn schedule_rejects_mismatched_plan() {
        let plan = plan_for(&params(3, 1, int(0)));
        assert!(build_schedule(4, 1, &plan).is_err());
    }

    #[test]
    fn combiners_are_mds() {
        let c = make_combiners(3, 1, 5).unwrap();
        let chi = UserSet::new(3, [1, 2, 3]).unwrap();
        let m = c.matrix(3, &chi).unwrap();
        assert_eq!((m.len(), m[0].len()), (2, 3));
        assert!(is_mds_combiner(m));
        assert_eq!(c.len(), 1);
        assert!(make_combiners(2, 1, 5).unwrap().is_empty());
    }

    #[test]
    fn cauchy_1x2_entries_nonzero() {
        let mut rng = seeded(3, 0);
        let m = cauchy_matrix(1, 2, &mut rng);
        assert!(m[0].iter().all(|v| !v.is_zero()));
    }

    #[test]
    fn cauchy_mds_scan() {
        let mut failures = 0;
        for seed in 0..100 {
            let mut rng = seeded(seed, COMBINER_STREAM);
            for j in 2..=8usize {
                if !is_mds_combiner(&cauchy_matrix(j - 1, j, &mut rng)) {
                    failures += 1;
                }
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn mds_check_rejects_degenerate() {
        let m = vec![vec![Fp::ONE, Fp::ZERO]];
        assert!(!is_mds_combiner(&m));
        let wrong_shape = vec![vec![Fp::ONE, Fp::ONE], vec![Fp::ONE, Fp::new(2)]];
        assert!(!is_mds_combiner(&wrong_shape));
    }

    #[test]
    fn k2_single_stream_common_message() {
        let run = run_simulation(&params(2, 1, int(0)), Some(&[1, 2]), 1).unwrap();
        assert_eq!(run.transcript.len(), 1);
        let tx = &run.transcript.transmissions()[0];
        assert_eq!(tx.streams.len(), 1);
        assert!(run.report.passed());
    }

    #[test]
    fn phase_k_carries_single_scalar() {
        let run = run_simulation(&params(4, 1, int(0)), None, 2).unwrap();
        for tx in run
            .transcript
            .transmissions()
            .iter()
            .filter(|t| t.phase == 4)
        {
            assert_eq!(tx.streams.len(), 1);
        }
        for j in 2..=4 {
            let expected = run.schedule.phase(j).unwrap().messages(4).unwrap().len();
            for user in 1..=4 {
                assert_eq!(run.transcript.observation_count(user, j), expected);
            }
        }
    }

    #[test]
    fn end_to_end_k3() {
        let report = simulate(&params(3, 1, int(0)), None, 7).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.duration().unwrap(), ratio(5, 6));
        assert_eq!(report.singular_solves, 0);
    }

    #[test]
    fn end_to_end_k4_m2() {
        let report = simulate(&params(4, 2, int(0)), None, 3).unwrap();
        assert!(report.passed());
        assert_eq!(report.duration().unwrap(), ratio(7, 12));
    }

    #[test]
    fn end_to_end_with_positive_alpha() {
        for (k, m, a) in [
            (3u32, 1i64, ratio(1, 2)),
            (4, 1, ratio(1, 4)),
            (3, 1, ratio(3, 4)),
            (3, 2, int(1)),
        ] {
            let report = simulate(&params(k, m, a.clone()), None, 11).unwrap();
            assert!(report.passed(), "K={k} M={m} α={a}: {report:?}");
        }
    }

    #[test]
    fn high_alpha_gives_one_minus_gamma() {
        let report = simulate(&params(3, 1, ratio(9, 10)), None, 4).unwrap();
        assert_eq!(report.eta, 2);
        assert_eq!(report.duration().unwrap(), ratio(2, 3));
        assert!(report.passed());
    }

    #[test]
    fn transcript_is_deterministic() {
        let p = params(4, 1, int(0));
        let a = simulate(&p, None, 9).unwrap();
        let b = simulate(&p, None, 9).unwrap();
        let c = simulate(&p, None, 10).unwrap();
        assert_eq!(a.transcript_digest, b.transcript_digest);
        assert_ne!(a.transcript_digest, c.transcript_digest);
    }

    #[test]
    fn transcript_reproducible_and_causal() {
        let run = run_simulation(&params(5, 2, int(0)), Some(&[5, 4, 3, 2, 1]), 6).unwrap();
        assert!(run.transcript.observations_consistent());
        assert!(run.transcript.causality_ok());
        let export = serde_json::to_value(run.transcript.export()).unwrap();
        let slot = &export["slots"][0];
        assert_eq!(slot["phase"], 3);
        assert_eq!(slot["coefficients"].as_array().unwrap().len(), 5);
        assert_eq!(slot["coefficients"][0].as_str().unwrap().len(), 8 * 3);
    }

    #[test]
    fn causality_violation_detected() {
        let mut run = run_simulation(&params(4, 1, int(0)), None, 6).unwrap();
        let txs = &mut run.transcript.transmissions;
        let last = txs.len() - 1;
        txs.swap(0, last);
        assert!(!run.transcript.causality_ok());
    }

    #[test]
    fn tampered_observation_breaks_decoding() {
        let mut run = run_simulation(&params(3, 1, int(0)), None, 8).unwrap();
        run.transcript.transmissions[0].observations[2][0] += Fp::ONE;
        let decodes = backward_decode(
            &run.transcript,
            &run.caches,
            &run.combiners,
            &[1, 2, 3],
            &run.private,
            &run.plan,
        );
        let wrong = decodes
            .iter()
            .filter(|d| d.file.as_deref() != run.library.file(d.user))
            .count();
        assert!(wrong > 0);
    }

    #[test]
    fn repeated_requests_decode() {
        let report = simulate(&params(4, 1, int(0)), Some(&[2, 2, 2, 2]), 5).unwrap();
        assert!(report.passed());
    }

    #[test]
    fn rejects_full_cache_and_bad_requests() {
        let full = SystemParams::new(3, 3, int(3), int(0)).unwrap();
        assert!(matches!(
            simulate(&full, None, 1),
            Err(Error::NoDeliveryNeeded)
        ));
        assert!(simulate(&params(3, 1, int(0)), Some(&[1, 2]), 1).is_err());
        assert!(simulate(&params(3, 1, int(0)), Some(&[1, 2, 4]), 1).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let report = simulate(&params(2, 1, int(0)), None, 1).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: SimReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["duration"]["num"], "1");
        assert_eq!(v["duration"]["den"], "2");
    }
}
