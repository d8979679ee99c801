//! Arithmetic black box over Shamir shares.
//!
//! [`Engine`] simulates `n` computational parties in lockstep. Each party
//! owns its share store and its own random stream; the engine moves share
//! messages between them round by round and meters every message. Secrets
//! never exist in the clear inside the engine except where a protocol step
//! opens them (and those openings are logged).
//!
//! Multiplication is local product followed by resharing and Lagrange
//! recombination (degree reduction), one round per batch. Independent
//! products issued through [`Engine::product_batch`] share that round.

mod meter;
mod transcript;

pub use meter::{CostMeter, PhaseCounters};
pub use transcript::{write_jsonl, Endpoint, TranscriptRecord};

use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::seed::{rng_for, TAG_DEALER, TAG_PARTY};
use crate::shamir::{self, Share, SharingParams, SHARE_BYTES};

/// Reference to a secret-shared value held by the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SecretHandle {
    id: u32,
    degree: u8,
}

impl SecretHandle {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }
}

/// How party-local computation is driven.
///
/// Both schedules produce identical shares, counters and transcripts: each
/// party draws only from its own seeded stream and counters are written at
/// round boundaries by the scheduler alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    #[default]
    Lockstep,
    ThreadPerParty,
}

/// Deliberate defects used by the self-test's mutation harness.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    FlipEqualityPolarity,
    SkipDegreeReduction,
}

#[derive(Clone, Debug, Default)]
pub struct EngineConfig {
    pub record_transcript: bool,
    pub schedule: Schedule,
    #[doc(hidden)]
    pub mutation: Option<Mutation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenKind {
    /// A protocol value revealed to the servers.
    Reveal,
    /// The square of a joint random value, opened while making a random bit.
    ControlBitSquare,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OpenRecord {
    pub phase: String,
    pub handle: u32,
    pub value: FieldElement,
    pub kind: OpenKind,
}

/// A sharing produced by an external dealer, indexed by party (`shares[i]`
/// belongs to party `i + 1`). `None` marks a share lost in transit.
#[derive(Clone, Debug)]
pub struct Dealt {
    pub dealer: u32,
    pub shares: Vec<Option<Share>>,
}

struct Party {
    index: u8,
    store: Vec<Option<FieldElement>>,
    rng: ChaCha20Rng,
    failed: bool,
}

impl Party {
    fn point(&self) -> FieldElement {
        FieldElement::from(u64::from(self.index))
    }
}

pub struct Engine {
    params: SharingParams,
    parties: Vec<Party>,
    dealer_rng: ChaCha20Rng,
    meter: CostMeter,
    round: u64,
    phase: String,
    transcript: Vec<TranscriptRecord>,
    opens: Vec<OpenRecord>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(params: SharingParams, seed: u64) -> Self {
        Self::with_config(params, seed, EngineConfig::default())
    }

    pub fn with_config(params: SharingParams, seed: u64, config: EngineConfig) -> Self {
        let parties = (1..=params.n() as u8)
            .map(|index| Party {
                index,
                store: Vec::new(),
                rng: rng_for(seed, &[TAG_PARTY, u64::from(index)]),
                failed: false,
            })
            .collect();
        Self {
            params,
            parties,
            dealer_rng: rng_for(seed, &[TAG_DEALER]),
            meter: CostMeter::default(),
            round: 0,
            phase: String::from("default"),
            transcript: Vec::new(),
            opens: Vec::new(),
            config,
        }
    }

    pub fn params(&self) -> SharingParams {
        self.params
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn open_log(&self) -> &[OpenRecord] {
        &self.opens
    }

    pub fn mutation(&self) -> Option<Mutation> {
        self.config.mutation
    }

    pub fn phase(&self) -> &str {
        &self.phase
    }

    /// Switches the label counters are booked under; returns the old label.
    pub fn set_phase(&mut self, label: impl Into<String>) -> String {
        std::mem::replace(&mut self.phase, label.into())
    }

    /// Runs `f` under `<current>/<suffix>` and restores the label afterwards.
    pub fn in_sub_phase<T>(
        &mut self,
        suffix: &str,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let nested = format!("{}/{}", self.phase, suffix);
        let prev = self.set_phase(nested);
        let out = f(self);
        self.phase = prev;
        out
    }

    pub fn handle_count(&self) -> usize {
        self.parties[0].store.len()
    }

    pub fn live_parties(&self) -> Vec<usize> {
        self.parties
            .iter()
            .filter(|p| !p.failed)
            .map(|p| usize::from(p.index))
            .collect()
    }

    pub fn is_failed(&self, party: usize) -> bool {
        self.parties.get(party.wrapping_sub(1)).is_some_and(|p| p.failed)
    }

    /// Crash-stops a party: it no longer sends, receives or computes.
    ///
    /// A failed party cannot be brought back.
    pub fn fail_party(&mut self, party: usize) -> Result<()> {
        let idx = party.wrapping_sub(1);
        if idx >= self.parties.len() {
            return Err(Error::UnknownParty(party));
        }
        if self.parties[idx].failed {
            return Err(Error::AlreadyFailed(party));
        }
        self.parties[idx].failed = true;
        Ok(())
    }

    /// The share a party holds for `h`, if it holds one.
    pub fn share_of(&self, h: SecretHandle, party: usize) -> Result<Option<Share>> {
        self.check(h)?;
        let p = self
            .parties
            .get(party.wrapping_sub(1))
            .ok_or(Error::UnknownParty(party))?;
        Ok(p.store[h.id as usize].map(|v| Share::new(p.index, v, h.degree)))
    }

    /// Shares of `h` held by live parties, indexed by party.
    pub fn shares_of(&self, h: SecretHandle) -> Result<Vec<Option<Share>>> {
        self.check(h)?;
        Ok(self
            .parties
            .iter()
            .map(|p| {
                if p.failed {
                    None
                } else {
                    p.store[h.id as usize].map(|v| Share::new(p.index, v, h.degree))
                }
            })
            .collect())
    }

    fn check(&self, h: SecretHandle) -> Result<()> {
        if (h.id as usize) < self.handle_count() {
            Ok(())
        } else {
            Err(Error::UnknownHandle(h.id))
        }
    }

    fn alloc(&mut self, degree: u8) -> SecretHandle {
        let id = self.handle_count() as u32;
        for p in &mut self.parties {
            p.store.push(None);
        }
        SecretHandle { id, degree }
    }

    fn degree_t(&self) -> u8 {
        self.params.t() as u8
    }

    fn record(&mut self, sender: Endpoint, receiver: Endpoint, handle: u32) {
        if self.config.record_transcript {
            self.transcript.push(TranscriptRecord {
                round: self.round,
                sender,
                receiver,
                handle,
                bytes: SHARE_BYTES,
            });
        }
    }

    fn counters(&mut self) -> &mut PhaseCounters {
        let phase = self.phase.clone();
        self.meter.entry(&phase)
    }

    /// Publicly known value, held as the constant polynomial by every party.
    pub fn constant(&mut self, value: FieldElement) -> SecretHandle {
        let h = self.alloc(self.degree_t());
        for p in self.parties.iter_mut().filter(|p| !p.failed) {
            p.store[h.id as usize] = Some(value);
        }
        h
    }

    /// Shares `value` from an internal dealer to all parties.
    pub fn input(&mut self, value: FieldElement) -> Result<SecretHandle> {
        let shares = shamir::share(value, self.params, &mut self.dealer_rng);
        let dealt = Dealt {
            dealer: 0,
            shares: shares.into_iter().map(Some).collect(),
        };
        Ok(self.input_dealt(vec![dealt])?[0])
    }

    /// Registers externally dealt sharings.
    ///
    /// Live parties whose share was lost in transit get it back through a
    /// share-recovery exchange among `t + 1` holders: every holder adds a
    /// random polynomial vanishing at the missing point, and the missing
    /// party interpolates the masked shares at its own point. It learns its
    /// share and nothing else. Needs at least `t + 1` delivered shares.
    pub fn input_dealt(&mut self, sharings: Vec<Dealt>) -> Result<Vec<SecretHandle>> {
        let n = self.params.n();
        let t = self.params.t();
        for d in &sharings {
            if d.shares.len() != n {
                return Err(Error::WrongShareCount {
                    got: d.shares.len(),
                    expected: n,
                });
            }
            for (i, s) in d.shares.iter().enumerate() {
                if let Some(s) = s {
                    if usize::from(s.party) != i + 1 {
                        return Err(Error::PartyMismatch(s.party, (i + 1) as u8));
                    }
                    if usize::from(s.degree) != t {
                        return Err(Error::DegreeMismatch(t as u8, s.degree));
                    }
                }
            }
            let live_holders = d
                .shares
                .iter()
                .zip(&self.parties)
                .filter(|(s, p)| s.is_some() && !p.failed)
                .count();
            if live_holders < t + 1 {
                return Err(Error::InsufficientShares {
                    needed: t + 1,
                    got: live_holders,
                });
            }
        }

        let mut handles = Vec::with_capacity(sharings.len());
        let mut pending = Vec::new();
        for d in &sharings {
            let h = self.alloc(t as u8);
            for (i, s) in d.shares.iter().enumerate() {
                let c = self.counters();
                c.dealer_messages += 1;
                c.dealer_bytes += SHARE_BYTES as u64;
                match s {
                    Some(s) => {
                        self.record(Endpoint::Dealer(d.dealer), Endpoint::Server(s.party), h.id);
                        if !self.parties[i].failed {
                            self.parties[i].store[h.id as usize] = Some(s.value);
                        }
                    }
                    None => {
                        self.counters().dealer_dropped += 1;
                        if !self.parties[i].failed {
                            pending.push((h, i));
                        }
                    }
                }
            }
            handles.push(h);
        }
        self.recover_shares(&pending)?;
        Ok(handles)
    }

    fn recover_shares(&mut self, pending: &[(SecretHandle, usize)]) -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let t = self.params.t();
        // round 1: holders exchange masks vanishing at the missing point
        self.round += 1;
        let mut masked_jobs = Vec::with_capacity(pending.len());
        for &(h, missing) in pending {
            let slot = h.id as usize;
            let holders: Vec<usize> = (0..self.parties.len())
                .filter(|&i| !self.parties[i].failed && self.parties[i].store[slot].is_some())
                .take(t + 1)
                .collect();
            let target = self.parties[missing].point();
            let holder_points: Vec<FieldElement> =
                holders.iter().map(|&i| self.parties[i].point()).collect();
            let mut masked: Vec<FieldElement> = holders
                .iter()
                .map(|&i| self.parties[i].store[slot].expect("holder"))
                .collect();
            for &i in &holders {
                // g(x) = (x - target) * r(x), deg r = t - 1
                let coeffs: Vec<FieldElement> = (0..t)
                    .map(|_| FieldElement::random(&mut self.parties[i].rng))
                    .collect();
                for (k, &x) in holder_points.iter().enumerate() {
                    masked[k] += (x - target) * shamir::eval_poly(&coeffs, x);
                }
                for &j in holders.iter().filter(|&&j| j != i) {
                    let (from, to) = (self.parties[i].index, self.parties[j].index);
                    self.record(Endpoint::Server(from), Endpoint::Server(to), h.id);
                }
            }
            let c = self.counters();
            c.messages_between_dcc += (holders.len() * (holders.len() - 1)) as u64;
            c.bytes_between_dcc += (holders.len() * (holders.len() - 1) * SHARE_BYTES) as u64;
            masked_jobs.push((h, missing, holders, holder_points, masked));
        }
        // round 2: masked shares go to the missing party
        self.round += 1;
        for (h, missing, holders, points, masked) in masked_jobs {
            let pts: Vec<_> = points.into_iter().zip(masked).collect();
            let value = shamir::interpolate_at(&pts, self.parties[missing].point())?;
            self.parties[missing].store[h.id as usize] = Some(value);
            for &i in &holders {
                let (from, to) = (self.parties[i].index, self.parties[missing].index);
                self.record(Endpoint::Server(from), Endpoint::Server(to), h.id);
            }
            let c = self.counters();
            c.messages_between_dcc += holders.len() as u64;
            c.bytes_between_dcc += (holders.len() * SHARE_BYTES) as u64;
            c.share_recoveries += 1;
        }
        let c = self.counters();
        c.rounds += 2;
        Ok(())
    }

    /// Imports sharings produced by another engine over the same servers.
    /// Purely local: each server just carries its own shares across.
    pub fn adopt(&mut self, sharings: &[Vec<Option<Share>>]) -> Result<Vec<SecretHandle>> {
        let n = self.params.n();
        let mut out = Vec::with_capacity(sharings.len());
        for sharing in sharings {
            if sharing.len() != n {
                return Err(Error::WrongShareCount {
                    got: sharing.len(),
                    expected: n,
                });
            }
            let degree = sharing
                .iter()
                .flatten()
                .map(|s| s.degree)
                .next()
                .unwrap_or(self.degree_t());
            let h = self.alloc(degree);
            for (i, s) in sharing.iter().enumerate() {
                if let Some(s) = s {
                    if usize::from(s.party) != i + 1 {
                        return Err(Error::PartyMismatch(s.party, (i + 1) as u8));
                    }
                    if s.degree != degree {
                        return Err(Error::DegreeMismatch(degree, s.degree));
                    }
                    if !self.parties[i].failed {
                        self.parties[i].store[h.id as usize] = Some(s.value);
                    }
                }
            }
            out.push(h);
        }
        Ok(out)
    }

    pub fn export(&self, handles: &[SecretHandle]) -> Result<Vec<Vec<Option<Share>>>> {
        handles.iter().map(|&h| self.shares_of(h)).collect()
    }

    /// Applies a party-local map to the shares of `inputs`.
    fn local(
        &mut self,
        inputs: &[SecretHandle],
        f: impl Fn(&[FieldElement]) -> FieldElement,
    ) -> Result<SecretHandle> {
        let degree = inputs.first().map_or(self.degree_t(), |h| h.degree);
        for h in inputs {
            self.check(*h)?;
            if h.degree != degree {
                return Err(Error::DegreeMismatch(degree, h.degree));
            }
        }
        let out = self.alloc(degree);
        let mut buf = Vec::with_capacity(inputs.len());
        for p in self.parties.iter_mut().filter(|p| !p.failed) {
            buf.clear();
            for h in inputs {
                match p.store[h.id as usize] {
                    Some(v) => buf.push(v),
                    None => break,
                }
            }
            if buf.len() == inputs.len() {
                p.store[out.id as usize] = Some(f(&buf));
            }
        }
        Ok(out)
    }

    pub fn add(&mut self, a: SecretHandle, b: SecretHandle) -> Result<SecretHandle> {
        self.local(&[a, b], |v| v[0] + v[1])
    }

    pub fn sub(&mut self, a: SecretHandle, b: SecretHandle) -> Result<SecretHandle> {
        self.local(&[a, b], |v| v[0] - v[1])
    }

    pub fn add_const(&mut self, a: SecretHandle, c: FieldElement) -> Result<SecretHandle> {
        self.local(&[a], |v| v[0] + c)
    }

    pub fn scale(&mut self, a: SecretHandle, c: FieldElement) -> Result<SecretHandle> {
        self.local(&[a], |v| v[0] * c)
    }

    /// `constant + Σ coef_i · h_i`, computed locally.
    pub fn affine(
        &mut self,
        terms: &[(SecretHandle, FieldElement)],
        constant: FieldElement,
    ) -> Result<SecretHandle> {
        let handles: Vec<_> = terms.iter().map(|t| t.0).collect();
        let coefs: Vec<_> = terms.iter().map(|t| t.1).collect();
        self.local(&handles, |v| {
            v.iter().zip(&coefs).fold(constant, |acc, (&x, &c)| acc + x * c)
        })
    }

    /// Local sum; the empty sum is the public constant zero.
    pub fn sum(&mut self, handles: &[SecretHandle]) -> Result<SecretHandle> {
        if handles.is_empty() {
            return Ok(self.constant(FieldElement::ZERO));
        }
        self.local(handles, |v| v.iter().copied().sum())
    }

    pub fn product(&mut self, a: SecretHandle, b: SecretHandle) -> Result<SecretHandle> {
        Ok(self.product_batch(&[(a, b)])?[0])
    }

    /// Multiplies independent pairs in a single communication round.
    pub fn product_batch(
        &mut self,
        pairs: &[(SecretHandle, SecretHandle)],
    ) -> Result<Vec<SecretHandle>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.params.n();
        let t = self.params.t();
        let mut needed = 0;
        for &(a, b) in pairs {
            self.check(a)?;
            self.check(b)?;
            let degree = usize::from(a.degree) + usize::from(b.degree);
            if degree >= n {
                return Err(Error::DegreeTooHigh { degree, parties: n });
            }
            needed = needed.max(degree + 1);
        }
        let holder_flags: Vec<bool> = self
            .parties
            .iter()
            .map(|p| {
                !p.failed
                    && pairs.iter().all(|(a, b)| {
                        p.store[a.id as usize].is_some() && p.store[b.id as usize].is_some()
                    })
            })
            .collect();
        let holders: Vec<usize> = (0..n).filter(|&i| holder_flags[i]).collect();
        if holders.len() < needed {
            return Err(Error::InsufficientParties {
                live: holders.len(),
                needed,
            });
        }

        let reduce = self.config.mutation != Some(Mutation::SkipDegreeReduction);
        let receivers: Vec<usize> = (0..n).filter(|&i| !self.parties[i].failed).collect();
        let receiver_points: Vec<FieldElement> =
            receivers.iter().map(|&i| self.parties[i].point()).collect();
        let ids: Vec<(usize, usize)> = pairs
            .iter()
            .map(|(a, b)| (a.id as usize, b.id as usize))
            .collect();

        // party-local step: multiply, then reshare the degree-2t product
        let local = |p: &mut Party, is_holder: bool| -> Vec<Vec<FieldElement>> {
            if !is_holder {
                return Vec::new();
            }
            ids.iter()
                .map(|&(a, b)| {
                    let d = p.store[a].expect("holder") * p.store[b].expect("holder");
                    if !reduce {
                        return vec![d];
                    }
                    let mut coeffs = Vec::with_capacity(t + 1);
                    coeffs.push(d);
                    coeffs.extend((0..t).map(|_| FieldElement::random(&mut p.rng)));
                    receiver_points
                        .iter()
                        .map(|&x| shamir::eval_poly(&coeffs, x))
                        .collect()
                })
                .collect()
        };
        let subshares: Vec<Vec<Vec<FieldElement>>> = match self.config.schedule {
            Schedule::Lockstep => self
                .parties
                .iter_mut()
                .zip(&holder_flags)
                .map(|(p, &h)| local(p, h))
                .collect(),
            Schedule::ThreadPerParty => std::thread::scope(|s| {
                let local = &local;
                let workers: Vec<_> = self
                    .parties
                    .iter_mut()
                    .zip(&holder_flags)
                    .map(|(p, &h)| s.spawn(move || local(p, h)))
                    .collect();
                workers
                    .into_iter()
                    .map(|w| w.join().expect("party thread panicked"))
                    .collect()
            }),
        };

        // round boundary: deliver sub-shares and recombine
        self.round += 1;
        let holder_points: Vec<FieldElement> =
            holders.iter().map(|&i| self.parties[i].point()).collect();
        let lambdas = shamir::lagrange_coefficients(&holder_points, FieldElement::ZERO)?;
        let mut out = Vec::with_capacity(pairs.len());
        for k in 0..pairs.len() {
            let h = self.alloc(t as u8);
            for (r, &recv) in receivers.iter().enumerate() {
                let value = if reduce {
                    Some(
                        holders
                            .iter()
                            .zip(&lambdas)
                            .map(|(&i, &l)| l * subshares[i][k][r])
                            .sum(),
                    )
                } else {
                    subshares[recv].get(k).map(|v| v[0])
                };
                self.parties[recv].store[h.id as usize] = value;
            }
            if self.config.record_transcript {
                for &i in &holders {
                    for &j in receivers.iter().filter(|&&j| j != i) {
                        let (from, to) = (self.parties[i].index, self.parties[j].index);
                        self.record(Endpoint::Server(from), Endpoint::Server(to), h.id);
                    }
                }
            }
            out.push(h);
        }
        let fanout = holders
            .iter()
            .map(|i| receivers.iter().filter(|&j| j != i).count())
            .sum::<usize>() as u64;
        let c = self.counters();
        c.multiplications += pairs.len() as u64;
        c.rounds += 1;
        c.messages_between_dcc += fanout * pairs.len() as u64;
        c.bytes_between_dcc += fanout * (pairs.len() * SHARE_BYTES) as u64;
        Ok(out)
    }

    pub fn open(&mut self, h: SecretHandle) -> Result<FieldElement> {
        Ok(self.open_batch(&[h])?[0])
    }

    /// Every live party broadcasts its share; one round for the whole batch.
    pub fn open_batch(&mut self, handles: &[SecretHandle]) -> Result<Vec<FieldElement>> {
        self.open_batch_as(handles, OpenKind::Reveal)
    }

    fn open_batch_as(&mut self, handles: &[SecretHandle], kind: OpenKind) -> Result<Vec<FieldElement>> {
        if handles.is_empty() {
            return Ok(Vec::new());
        }
        let live = self.live_parties().len();
        let mut values = Vec::with_capacity(handles.len());
        let mut messages = 0u64;
        self.round += 1;
        for &h in handles {
            let shares: Vec<Share> = self.shares_of(h)?.into_iter().flatten().collect();
            let value = shamir::reconstruct_checked(&shares)?;
            messages += (shares.len() * (live - 1)) as u64;
            if self.config.record_transcript {
                for s in &shares {
                    for r in self.live_parties().into_iter().filter(|&r| r != usize::from(s.party)) {
                        self.record(Endpoint::Server(s.party), Endpoint::Server(r as u8), h.id);
                    }
                }
            }
            self.opens.push(OpenRecord {
                phase: self.phase.clone(),
                handle: h.id,
                value,
                kind,
            });
            values.push(value);
        }
        let c = self.counters();
        c.opens += handles.len() as u64;
        c.rounds += 1;
        c.messages_between_dcc += messages;
        c.bytes_between_dcc += messages * SHARE_BYTES as u64;
        Ok(values)
    }

    /// Sum of one fresh random sharing per live party; nobody knows the value.
    fn joint_random_batch(&mut self, count: usize) -> Result<Vec<SecretHandle>> {
        let t = self.params.t();
        let live: Vec<usize> = (0..self.parties.len())
            .filter(|&i| !self.parties[i].failed)
            .collect();
        let points: Vec<FieldElement> = live.iter().map(|&i| self.parties[i].point()).collect();
        self.round += 1;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let h = self.alloc(t as u8);
            let mut acc = vec![FieldElement::ZERO; live.len()];
            for &i in &live {
                let coeffs: Vec<FieldElement> = (0..=t)
                    .map(|_| FieldElement::random(&mut self.parties[i].rng))
                    .collect();
                for (slot, &x) in acc.iter_mut().zip(&points) {
                    *slot += shamir::eval_poly(&coeffs, x);
                }
                if self.config.record_transcript {
                    for &j in live.iter().filter(|&&j| j != i) {
                        let (from, to) = (self.parties[i].index, self.parties[j].index);
                        self.record(Endpoint::Server(from), Endpoint::Server(to), h.id);
                    }
                }
            }
            for (&i, v) in live.iter().zip(acc) {
                self.parties[i].store[h.id as usize] = Some(v);
            }
            out.push(h);
        }
        let per = (live.len() * (live.len() - 1)) as u64;
        let c = self.counters();
        c.rounds += 1;
        c.messages_between_dcc += per * count as u64;
        c.bytes_between_dcc += per * (count * SHARE_BYTES) as u64;
        Ok(out)
    }

    pub fn random_shared_bit(&mut self) -> Result<SecretHandle> {
        Ok(self.random_bits(1)?[0])
    }

    /// Uniform shared bits: square a joint random `r`, open `r²`, and map
    /// `r / sqrt(r²) ∈ {-1, 1}` affinely onto `{0, 1}`. One multiplication
    /// and one open per bit; a zero square is discarded and redrawn.
    pub fn random_bits(&mut self, count: usize) -> Result<Vec<SecretHandle>> {
        let half = FieldElement::from(2u64).inv()?;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let need = count - out.len();
            let rs = self.joint_random_batch(need)?;
            let pairs: Vec<_> = rs.iter().map(|&r| (r, r)).collect();
            let squares = self.product_batch(&pairs)?;
            let opened = self.open_batch_as(&squares, OpenKind::ControlBitSquare)?;
            for (r, s) in rs.into_iter().zip(opened) {
                if s.is_zero() {
                    continue;
                }
                let root = s.sqrt().ok_or(Error::InconsistentShares {
                    degree: self.params.t(),
                })?;
                let bit = self.affine(&[(r, root.inv()? * half)], half)?;
                out.push(bit);
            }
        }
        self.counters().random_bits += count as u64;
        Ok(out)
    }

    /// Sends the live servers' shares of `handles` to an output party.
    pub fn deliver(&mut self, handles: &[SecretHandle], recipient: Endpoint) -> Result<Vec<Vec<Share>>> {
        self.deliver_from(handles, recipient, &[])
    }

    /// Like [`Engine::deliver`], with some live servers failing to reach the
    /// recipient.
    pub fn deliver_from(
        &mut self,
        handles: &[SecretHandle],
        recipient: Endpoint,
        silent: &[usize],
    ) -> Result<Vec<Vec<Share>>> {
        let mut out = Vec::with_capacity(handles.len());
        for &h in handles {
            let shares: Vec<Share> = self
                .shares_of(h)?
                .into_iter()
                .flatten()
                .filter(|s| {
                    !self.is_failed(usize::from(s.party)) && !silent.contains(&usize::from(s.party))
                })
                .collect();
            for s in &shares {
                self.record(Endpoint::Server(s.party), recipient, h.id);
            }
            let c = self.counters();
            c.output_messages += shares.len() as u64;
            c.output_bytes += (shares.len() * SHARE_BYTES) as u64;
            out.push(shares);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fe(v: u64) -> FieldElement {
        FieldElement::new(v)
    }

    fn engine() -> Engine {
        Engine::new(SharingParams::default(), 7)
    }

    #[test]
    fn input_open_round_trip() {
        let mut e = engine();
        let h = e.input(fe(5)).unwrap();
        assert_eq!(e.open(h).unwrap(), fe(5));
        let h9 = e.input(fe(9)).unwrap();
        assert_eq!(e.open(h9).unwrap(), fe(9));
    }

    #[test]
    fn input_is_metered_as_n_dealer_messages() {
        let mut e = engine();
        e.set_phase("input");
        e.input(fe(1)).unwrap();
        let c = e.meter().phase("input");
        assert_eq!((c.dealer_messages, c.dealer_bytes), (3, 30));
        assert_eq!(c.messages_between_dcc, 0);
    }

    #[test]
    fn linear_operations() {
        let mut e = engine();
        let a = e.input(fe(10)).unwrap();
        let b = e.input(fe(32)).unwrap();
        let s = e.add(a, b).unwrap();
        assert_eq!(e.open(s).unwrap(), fe(42));
        let d = e.sub(a, b).unwrap();
        assert_eq!(e.open(d).unwrap(), -fe(22));
        let k = e.affine(&[(a, fe(3)), (b, fe(2))], fe(1)).unwrap();
        assert_eq!(e.open(k).unwrap(), fe(95));
        let z = e.sum(&[]).unwrap();
        assert_eq!(e.open(z).unwrap(), FieldElement::ZERO);
    }

    #[test]
    fn product_examples_and_meter() {
        let mut e = engine();
        e.set_phase("mul");
        let a = e.input(fe(3)).unwrap();
        let b = e.input(fe(4)).unwrap();
        let z = e.input(FieldElement::ZERO).unwrap();
        let ab = e.product(a, b).unwrap();
        let az = e.product(a, z).unwrap();
        let c = e.meter().phase("mul");
        assert_eq!(c.multiplications, 2);
        assert_eq!(c.rounds, 2);
        assert_eq!(c.messages_between_dcc, 12);
        assert_eq!(c.bytes_between_dcc, 120);
        assert_eq!(e.open(ab).unwrap(), fe(12));
        assert_eq!(e.open(az).unwrap(), FieldElement::ZERO);
    }

    #[test]
    fn batched_products_share_a_round() {
        let mut e = engine();
        let hs: Vec<_> = (0..10).map(|i| e.input(fe(i)).unwrap()).collect();
        let pairs: Vec<_> = hs.windows(2).map(|w| (w[0], w[1])).collect();
        let before = e.meter().total();
        let out = e.product_batch(&pairs).unwrap();
        let after = e.meter().total();
        assert_eq!(after.multiplications - before.multiplications, 9);
        assert_eq!(after.rounds - before.rounds, 1);
        let opened = e.open_batch(&out).unwrap();
        for (i, v) in opened.iter().enumerate() {
            assert_eq!(*v, fe(i as u64) * fe(i as u64 + 1));
        }
    }

    #[test]
    fn product_correct_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut e = engine();
        let xs: Vec<_> = (0..1000).map(|_| FieldElement::random(&mut rng)).collect();
        let ys: Vec<_> = (0..1000).map(|_| FieldElement::random(&mut rng)).collect();
        let hx: Vec<_> = xs.iter().map(|&x| e.input(x).unwrap()).collect();
        let hy: Vec<_> = ys.iter().map(|&y| e.input(y).unwrap()).collect();
        let pairs: Vec<_> = hx.into_iter().zip(hy).collect();
        let prods = e.product_batch(&pairs).unwrap();
        assert!(prods.iter().all(|h| h.degree() == 1));
        let opened = e.open_batch(&prods).unwrap();
        for ((x, y), v) in xs.iter().zip(&ys).zip(opened) {
            assert_eq!(*x * *y, v);
        }
        assert_eq!(e.meter().total().multiplications, 1000);
    }

    #[test]
    fn meter_counts_each_product() {
        let mut e = engine();
        let a = e.input(fe(2)).unwrap();
        let mut acc = a;
        for k in 1..=25u64 {
            acc = e.product(acc, a).unwrap();
            assert_eq!(e.meter().total().multiplications, k);
        }
        assert_eq!(e.open(acc).unwrap(), fe(2).pow(26));
    }

    #[test]
    fn degree_too_high_with_low_party_count() {
        // n = 3, t = 1 is fine; a degree-2 handle times degree-1 is not
        let mut e = Engine::with_config(
            SharingParams::default(),
            1,
            EngineConfig {
                mutation: Some(Mutation::SkipDegreeReduction),
                ..Default::default()
            },
        );
        let a = e.input(fe(2)).unwrap();
        let shares = e.export(&[a]).unwrap();
        let bumped: Vec<_> = shares[0]
            .iter()
            .map(|s| s.map(|s| Share::new(s.party, s.value, 2)))
            .collect();
        let hi = e.adopt(&[bumped]).unwrap()[0];
        assert_eq!(
            e.product(hi, a),
            Err(Error::DegreeTooHigh { degree: 3, parties: 3 })
        );
    }

    #[test]
    fn skipped_degree_reduction_is_detected_at_open() {
        let mut e = Engine::with_config(
            SharingParams::default(),
            1,
            EngineConfig {
                mutation: Some(Mutation::SkipDegreeReduction),
                ..Default::default()
            },
        );
        let a = e.input(fe(6)).unwrap();
        let b = e.input(fe(7)).unwrap();
        let p = e.product(a, b).unwrap();
        assert!(matches!(e.open(p), Err(Error::InconsistentShares { .. })));
    }

    #[test]
    fn open_tolerates_one_failure() {
        let mut e = engine();
        let h = e.input(fe(9)).unwrap();
        e.fail_party(2).unwrap();
        assert_eq!(e.open(h).unwrap(), fe(9));
        // the failed party still cannot take part in products when n = 3
        assert_eq!(
            e.product(h, h),
            Err(Error::InsufficientParties { live: 2, needed: 3 })
        );
    }

    #[test]
    fn fail_party_contract() {
        let mut e = engine();
        e.fail_party(1).unwrap();
        assert_eq!(e.fail_party(1), Err(Error::AlreadyFailed(1)));
        assert_eq!(e.fail_party(4), Err(Error::UnknownParty(4)));
        assert_eq!(e.live_parties(), vec![2, 3]);
        let h = e.input(fe(9)).unwrap();
        e.fail_party(3).unwrap();
        assert_eq!(e.open(h), Err(Error::InsufficientShares { needed: 2, got: 1 }));
    }

    #[test]
    fn open_below_threshold() {
        let mut e = engine();
        let lonely = vec![Some(Share::new(1, fe(5), 1)), None, None];
        let h = e.adopt(&[lonely]).unwrap()[0];
        assert_eq!(
            e.open(h),
            Err(Error::InsufficientShares { needed: 2, got: 1 })
        );
    }

    #[test]
    fn four_parties_multiply_after_one_crash() {
        let mut e = Engine::new(SharingParams::new(4, 1).unwrap(), 3);
        let a = e.input(fe(6)).unwrap();
        let b = e.input(fe(7)).unwrap();
        e.fail_party(4).unwrap();
        let p = e.product(a, b).unwrap();
        assert_eq!(e.open(p).unwrap(), fe(42));
        // three live holders, each sends to the two others
        assert_eq!(e.meter().total().messages_between_dcc, 6 + 6);
    }

    #[test]
    fn random_bits_are_bits_and_cost_two() {
        let mut e = engine();
        e.set_phase("bits");
        let bits = e.random_bits(200).unwrap();
        let c = e.meter().phase("bits");
        assert_eq!(c.mult_equivalents(), 400);
        assert_eq!(c.random_bits, 200);
        let opened = e.open_batch(&bits).unwrap();
        assert!(opened.iter().all(|b| *b == FieldElement::ZERO || *b == FieldElement::ONE));
    }

    #[test]
    fn random_bit_mean_is_balanced() {
        let mut e = engine();
        let bits = e.random_bits(10_000).unwrap();
        let ones = e
            .open_batch(&bits)
            .unwrap()
            .iter()
            .filter(|b| **b == FieldElement::ONE)
            .count();
        let mean = ones as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&mean), "mean {mean}");
    }

    #[test]
    fn lost_input_shares_are_recovered() {
        let mut e = engine();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let shares = shamir::share(fe(1234), SharingParams::default(), &mut rng);
        for lost in 0..3 {
            let mut dealt: Vec<_> = shares.iter().copied().map(Some).collect();
            dealt[lost] = None;
            let h = e.input_dealt(vec![Dealt { dealer: 1, shares: dealt }]).unwrap()[0];
            let got = e.shares_of(h).unwrap();
            assert!(got.iter().all(Option::is_some));
            // recovered share lies on the dealer's polynomial
            assert_eq!(got[lost].unwrap().value, shares[lost].value);
        }
        let c = e.meter().total();
        assert_eq!(c.share_recoveries, 3);
        assert_eq!(c.dealer_dropped, 3);
    }

    #[test]
    fn too_few_dealt_shares() {
        let mut e = engine();
        let dealt = vec![Some(Share::new(1, fe(1), 1)), None, None];
        assert_eq!(
            e.input_dealt(vec![Dealt { dealer: 1, shares: dealt }]),
            Err(Error::InsufficientShares { needed: 2, got: 1 })
        );
    }

    #[test]
    fn transcript_is_deterministic_and_complete() {
        let run = |schedule| {
            let mut e = Engine::with_config(
                SharingParams::new(5, 2).unwrap(),
                99,
                EngineConfig {
                    record_transcript: true,
                    schedule,
                    mutation: None,
                },
            );
            let a = e.input(fe(3)).unwrap();
            let b = e.input(fe(5)).unwrap();
            let p = e.product_batch(&[(a, b), (a, a)]).unwrap();
            let bits = e.random_bits(3).unwrap();
            let v = e.open_batch(&[p[0], p[1], bits[0]]).unwrap();
            let shares = e.export(&p).unwrap();
            (v, shares, e.transcript().to_vec(), e.meter().clone())
        };
        let lock = run(Schedule::Lockstep);
        assert_eq!(lock, run(Schedule::Lockstep));
        assert_eq!(lock, run(Schedule::ThreadPerParty));
        assert_eq!(lock.0[..2], [fe(15), fe(9)]);
        // 2 inputs × 5 dealer messages + 2 products × 20 messages + ...
        let dealer = lock.2.iter().filter(|r| matches!(r.sender, Endpoint::Dealer(_))).count();
        assert_eq!(dealer, 10);
        let between = lock.2.len() - dealer;
        assert_eq!(between as u64, lock.3.total().messages_between_dcc);
    }

    #[test]
    fn unknown_handle() {
        let mut e = engine();
        let mut other = engine();
        let h = other.input(fe(1)).unwrap();
        assert_eq!(e.open(h), Err(Error::UnknownHandle(0)));
    }
}
