//! Smart-meter side: scenarios, readings, tuple encoding and share
//! submission with fault injection.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abb::{Dealt, Engine, SecretHandle};
use crate::aggregation::AggregateMatrix;
use crate::costs::Algorithm;
use crate::error::{Error, Result};
use crate::field::{encode_reading, FieldElement, Reading, ELEMENT_BITS, MODULUS};
use crate::seed::{rng_for, TAG_FAULT, TAG_METER, TAG_READING, TAG_SHARE};
use crate::shamir::{self, SharingParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteAccounting {
    /// Four shares per meter per server for the bitwise-ID algorithms.
    #[default]
    Paper,
    /// Every share actually sent.
    Measured,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultMode {
    /// A meter's whole bundle to one server is lost.
    #[default]
    Bundle,
    /// Individual shares are lost.
    Share,
}

/// A simulation setup, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_servers: usize,
    pub threshold: usize,
    pub n_dno: usize,
    pub n_suppliers: usize,
    pub sigma: usize,
    pub sm_per_region: Vec<usize>,
    pub seed: u64,
    pub fault_rate: f64,
    pub algorithm: Algorithm,
    pub byte_accounting: ByteAccounting,
    /// Restricts drops to links towards this server (1-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_server: Option<usize>,
    #[serde(default)]
    pub fault_mode: FaultMode,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::InvalidScenario(e.message().to_owned()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn params(&self) -> Result<SharingParams> {
        SharingParams::new(self.n_servers, self.threshold)
    }

    pub fn total_meters(&self) -> usize {
        self.sm_per_region.iter().sum()
    }

    /// Public supplier identifiers, `1..=N_s`.
    pub fn supplier_ids(&self) -> Vec<u64> {
        (1..=self.n_suppliers as u64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if let Err(e) = self.params() {
            return bad(e.to_string());
        }
        if self.n_dno == 0 {
            return bad("n_dno must be at least 1".into());
        }
        if self.n_suppliers == 0 {
            return bad("n_suppliers must be at least 1".into());
        }
        if self.sigma == 0 || self.sigma > 32 {
            return bad(format!("sigma must be in 1..=32, got {}", self.sigma));
        }
        if (self.n_suppliers as u64) >> self.sigma != 0 {
            return bad(format!(
                "n_suppliers {} does not fit in sigma={} bits",
                self.n_suppliers, self.sigma
            ));
        }
        if self.sm_per_region.len() != self.n_dno {
            return bad(format!(
                "sm_per_region has {} entries for n_dno={}",
                self.sm_per_region.len(),
                self.n_dno
            ));
        }
        if !(0.0..=1.0).contains(&self.fault_rate) {
            return bad(format!("fault_rate must be in [0, 1], got {}", self.fault_rate));
        }
        if let Some(k) = self.fault_server {
            if k == 0 || k > self.n_servers {
                return bad(format!("fault_server {k} out of range"));
            }
        }
        // every aggregate is a sum of at most N_total readings below 2^32
        if (self.total_meters() as u128) << Reading::BITS >= u128::from(MODULUS) {
            return bad("total meter count overflows the field".into());
        }
        Ok(())
    }
}

/// Consumption and production level of a household.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub imp_max: u32,
    pub exp_max: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmartMeter {
    /// Grid-wide index, 0-based.
    pub id: u64,
    /// 1-based region.
    pub region: usize,
    pub supplier_imp: usize,
    pub supplier_exp: usize,
    pub profile: Profile,
}

/// The scenario's meters, region by region.
pub fn generate_meters(scenario: &Scenario) -> Vec<SmartMeter> {
    let mut out = Vec::with_capacity(scenario.total_meters());
    let mut id = 0u64;
    for (j, &count) in scenario.sm_per_region.iter().enumerate() {
        for _ in 0..count {
            let mut rng = rng_for(scenario.seed, &[TAG_METER, id]);
            let supplier_imp = rng.gen_range(1..=scenario.n_suppliers);
            let supplier_exp = if rng.gen_bool(0.5) {
                supplier_imp
            } else {
                rng.gen_range(1..=scenario.n_suppliers)
            };
            let imp_max = rng.gen::<u32>();
            let exp_max = if rng.gen_bool(0.4) { rng.gen::<u32>() } else { 0 };
            out.push(SmartMeter {
                id,
                region: j + 1,
                supplier_imp,
                supplier_exp,
                profile: Profile { imp_max, exp_max },
            });
            id += 1;
        }
    }
    out
}

/// Readings for one time slot, reproducible per `(seed, slot, meter)`.
pub fn generate_readings(scenario: &Scenario, meters: &[SmartMeter], slot: u64) -> Vec<(Reading, Reading)> {
    meters
        .iter()
        .map(|sm| {
            let mut rng = rng_for(scenario.seed, &[TAG_READING, slot, sm.id]);
            let imp = rng.gen_range(0..=sm.profile.imp_max);
            let exp = rng.gen_range(0..=sm.profile.exp_max);
            (Reading(imp), Reading(exp))
        })
        .collect()
}

/// Plain values a meter shares, in the order they are dealt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeterTuple {
    /// `imp bits, exp bits` (most significant first), then `E_imp, E_exp`.
    Naa(Vec<FieldElement>),
    /// `imp vector, exp vector`, each of length `N_s`.
    Niaa(Vec<FieldElement>),
}

impl MeterTuple {
    pub fn secrets(&self) -> &[FieldElement] {
        match self {
            MeterTuple::Naa(v) | MeterTuple::Niaa(v) => v,
        }
    }

    /// Plaintext check of the encoding rules.
    pub fn is_well_formed(&self, sigma: usize, n_s: usize) -> bool {
        match self {
            MeterTuple::Naa(v) => {
                v.len() == 2 * sigma + 2 && v[..2 * sigma].iter().all(|b| b.value() <= 1)
            }
            MeterTuple::Niaa(v) => {
                v.len() == 2 * n_s && v.chunks(n_s).all(|c| c.iter().filter(|x| !x.is_zero()).count() <= 1)
            }
        }
    }
}

fn id_bits(id: u64, sigma: usize) -> Result<Vec<FieldElement>> {
    if sigma < 64 && id >> sigma != 0 {
        return Err(Error::IdOverflow { id, sigma });
    }
    Ok((0..sigma).rev().map(|i| FieldElement::new((id >> i) & 1)).collect())
}

/// Bitwise IDs plus the two energies: `2σ + 2` secrets.
pub fn encode_naa(sm: &SmartMeter, readings: (Reading, Reading), sigma: usize) -> Result<MeterTuple> {
    let mut v = id_bits(sm.supplier_imp as u64, sigma)?;
    v.extend(id_bits(sm.supplier_exp as u64, sigma)?);
    v.push(encode_reading(readings.0, 1)?);
    v.push(encode_reading(readings.1, 1)?);
    Ok(MeterTuple::Naa(v))
}

/// Two one-hot vectors: `2·N_s` secrets, zeros included.
pub fn encode_niaa(sm: &SmartMeter, readings: (Reading, Reading), n_s: usize) -> Result<MeterTuple> {
    let mut v = vec![FieldElement::ZERO; 2 * n_s];
    for (offset, supplier, reading) in [(0, sm.supplier_imp, readings.0), (n_s, sm.supplier_exp, readings.1)] {
        if supplier == 0 || supplier > n_s {
            return Err(Error::VectorLengthMismatch { got: supplier, expected: n_s });
        }
        v[offset + supplier - 1] = encode_reading(reading, 1)?;
    }
    Ok(MeterTuple::Niaa(v))
}

pub fn encode(scenario: &Scenario, sm: &SmartMeter, readings: (Reading, Reading)) -> Result<MeterTuple> {
    match scenario.algorithm {
        Algorithm::Naa | Algorithm::Ncaa => encode_naa(sm, readings, scenario.sigma),
        Algorithm::Niaa => encode_niaa(sm, readings, scenario.n_suppliers),
    }
}

/// Upstream traffic of a batch of meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitStats {
    pub meters: u64,
    pub share_messages: u64,
    pub dropped_shares: u64,
    pub dropped_bundles: u64,
    /// Share bits under the four-shares-per-meter reading.
    pub paper_bits: u64,
    /// Share bits actually sent.
    pub measured_bits: u64,
}

impl std::ops::AddAssign for SubmitStats {
    fn add_assign(&mut self, o: Self) {
        self.meters += o.meters;
        self.share_messages += o.share_messages;
        self.dropped_shares += o.dropped_shares;
        self.dropped_bundles += o.dropped_bundles;
        self.paper_bits += o.paper_bits;
        self.measured_bits += o.measured_bits;
    }
}

impl SubmitStats {
    pub fn bits(&self, mode: ByteAccounting) -> u64 {
        match mode {
            ByteAccounting::Paper => self.paper_bits,
            ByteAccounting::Measured => self.measured_bits,
        }
    }
}

/// Shares each meter's tuple and deals it to the servers, losing shares
/// as the scenario's fault settings dictate. Returns one handle list per
/// meter, in input order.
pub fn submit(
    engine: &mut Engine,
    scenario: &Scenario,
    batch: &[(SmartMeter, MeterTuple)],
) -> Result<(Vec<Vec<SecretHandle>>, SubmitStats)> {
    let params = engine.params();
    let n = params.n();
    let mut stats = SubmitStats::default();
    let mut dealt = Vec::new();
    let mut widths = Vec::with_capacity(batch.len());
    for (sm, tuple) in batch {
        let mut share_rng = rng_for(scenario.seed, &[TAG_SHARE, sm.id]);
        let mut fault_rng = rng_for(scenario.seed, &[TAG_FAULT, sm.id]);
        let hit = |rng: &mut rand_chacha::ChaCha20Rng, server: usize| {
            scenario.fault_server.is_none_or(|k| k == server) && rng.gen_bool(scenario.fault_rate)
        };
        let lost_bundles: Vec<bool> = (1..=n)
            .map(|k| scenario.fault_mode == FaultMode::Bundle && hit(&mut fault_rng, k))
            .collect();
        stats.dropped_bundles += lost_bundles.iter().filter(|&&b| b).count() as u64;
        let secrets = tuple.secrets();
        for &s in secrets {
            let shares = shamir::share(s, params, &mut share_rng);
            let shares = shares
                .into_iter()
                .enumerate()
                .map(|(i, sh)| {
                    let lost = lost_bundles[i] || (scenario.fault_mode == FaultMode::Share && hit(&mut fault_rng, i + 1));
                    if lost {
                        stats.dropped_shares += 1;
                        None
                    } else {
                        Some(sh)
                    }
                })
                .collect();
            dealt.push(Dealt {
                dealer: sm.id as u32,
                shares,
            });
        }
        let per_server = match tuple {
            MeterTuple::Naa(_) => 4,
            MeterTuple::Niaa(v) => v.len() as u64,
        };
        stats.meters += 1;
        stats.share_messages += (secrets.len() * n) as u64;
        stats.paper_bits += per_server * n as u64 * u64::from(ELEMENT_BITS);
        stats.measured_bits += (secrets.len() * n) as u64 * u64::from(ELEMENT_BITS);
        widths.push(secrets.len());
    }
    let handles = engine.input_dealt(dealt)?;
    let mut out = Vec::with_capacity(batch.len());
    let mut rest = handles.as_slice();
    for w in widths {
        let (head, tail) = rest.split_at(w);
        out.push(head.to_vec());
        rest = tail;
    }
    Ok((out, stats))
}

/// Test-mode check of submitted shares; opens them, so never use it in a
/// protocol run.
pub fn validate_submission(engine: &mut Engine, handles: &[SecretHandle], form: Algorithm, sigma: usize, n_s: usize) -> Result<bool> {
    let values = engine.open_batch(handles)?;
    let tuple = match form {
        Algorithm::Naa | Algorithm::Ncaa => MeterTuple::Naa(values),
        Algorithm::Niaa => MeterTuple::Niaa(values),
    };
    Ok(tuple.is_well_formed(sigma, n_s))
}

/// Group-by sums computed in the clear.
pub fn plaintext_oracle(scenario: &Scenario, meters: &[SmartMeter], readings: &[(Reading, Reading)]) -> AggregateMatrix {
    let mut m = AggregateMatrix::zeros(scenario.n_dno, scenario.n_suppliers);
    for (sm, (imp, exp)) in meters.iter().zip(readings) {
        m.imp[sm.region - 1][sm.supplier_imp - 1] += u64::from(imp.raw());
        m.exp[sm.region - 1][sm.supplier_exp - 1] += u64::from(exp.raw());
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{niaa_region, NiaaShared, RegionBatch, RegionTuples};

    pub(crate) fn scenario() -> Scenario {
        Scenario {
            n_servers: 3,
            threshold: 1,
            n_dno: 2,
            n_suppliers: 3,
            sigma: 8,
            sm_per_region: vec![5, 5],
            seed: 42,
            fault_rate: 0.0,
            algorithm: Algorithm::Naa,
            byte_accounting: ByteAccounting::Paper,
            fault_server: None,
            fault_mode: FaultMode::Bundle,
        }
    }

    #[test]
    fn toml_round_trip() {
        let sc = scenario();
        let text = sc.to_toml().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), sc);
    }

    #[test]
    fn validation_names_the_field() {
        let sc = Scenario { n_suppliers: 0, ..scenario() };
        let err = sc.validate().unwrap_err().to_string();
        assert!(err.contains("n_suppliers"), "{err}");
        let sc = Scenario { sm_per_region: vec![1], ..scenario() };
        assert!(sc.validate().is_err());
        let sc = Scenario { n_servers: 2, ..scenario() };
        assert!(sc.validate().is_err());
        let sc = Scenario { n_suppliers: 256, ..scenario() };
        assert!(sc.validate().is_err());
        assert!(Scenario::from_toml_str("n_servers = 3\nbogus = 1").is_err());
    }

    #[test]
    fn overflow_guard() {
        // p / 2^32 is just below 2^31
        let ok = Scenario { n_dno: 1, sm_per_region: vec![(1 << 31) - 1], ..scenario() };
        assert!(ok.validate().is_ok());
        let too_many = Scenario { n_dno: 1, sm_per_region: vec![1 << 31], ..scenario() };
        assert!(too_many.validate().is_err());
    }

    #[test]
    fn readings_are_deterministic() {
        let sc = scenario();
        let meters = generate_meters(&sc);
        assert_eq!(meters.len(), 10);
        assert_eq!(generate_readings(&sc, &meters, 0), generate_readings(&sc, &meters, 0));
        assert_ne!(generate_readings(&sc, &meters, 0), generate_readings(&sc, &meters, 1));
        let flat: Vec<_> = meters
            .iter()
            .map(|m| SmartMeter { profile: Profile::default(), ..*m })
            .collect();
        assert!(generate_readings(&sc, &flat, 3).iter().all(|&(a, b)| a.raw() == 0 && b.raw() == 0));
    }

    #[test]
    fn naa_encoding() {
        let sm = SmartMeter {
            id: 0,
            region: 1,
            supplier_imp: 5,
            supplier_exp: 1,
            profile: Profile::default(),
        };
        let t = encode_naa(&sm, (Reading(9), Reading(2)), 8).unwrap();
        let v: Vec<u64> = t.secrets().iter().map(|x| x.value()).collect();
        assert_eq!(&v[..8], &[0, 0, 0, 0, 0, 1, 0, 1]);
        assert_eq!(&v[8..16], &[0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(&v[16..], &[9, 2]);
        assert_eq!(v.len(), 2 * 8 + 2);
        let wide = SmartMeter { supplier_imp: 256, ..sm };
        assert_eq!(
            encode_naa(&wide, (Reading(1), Reading(1)), 8),
            Err(Error::IdOverflow { id: 256, sigma: 8 })
        );
    }

    #[test]
    fn niaa_encoding() {
        let sm = SmartMeter {
            id: 0,
            region: 1,
            supplier_imp: 1,
            supplier_exp: 3,
            profile: Profile::default(),
        };
        let t = encode_niaa(&sm, (Reading(9), Reading(0)), 3).unwrap();
        let v: Vec<u64> = t.secrets().iter().map(|x| x.value()).collect();
        assert_eq!(v, vec![9, 0, 0, 0, 0, 0]);
        assert!(t.is_well_formed(8, 3));
        let bad = MeterTuple::Niaa([1, 1, 0, 0, 0, 0].map(FieldElement::new).to_vec());
        assert!(!bad.is_well_formed(8, 3));
        let t10 = encode_niaa(&sm, (Reading(1), Reading(1)), 10).unwrap();
        assert_eq!(t10.secrets().len(), 20);
    }

    fn encoded(sc: &Scenario) -> (Vec<SmartMeter>, Vec<(Reading, Reading)>, Vec<(SmartMeter, MeterTuple)>) {
        let meters = generate_meters(sc);
        let readings = generate_readings(sc, &meters, 0);
        let batch = meters
            .iter()
            .zip(&readings)
            .map(|(m, &r)| (*m, encode(sc, m, r).unwrap()))
            .collect();
        (meters, readings, batch)
    }

    #[test]
    fn submit_without_faults() {
        let sc = scenario();
        let (_, _, batch) = encoded(&sc);
        let mut e = Engine::new(sc.params().unwrap(), 1);
        let (handles, stats) = submit(&mut e, &sc, &batch).unwrap();
        assert_eq!(stats.dropped_shares, 0);
        assert_eq!(handles.len(), 10);
        assert!(handles.iter().all(|h| h.len() == 18));
        assert_eq!(stats.paper_bits, 12 * 10 * 63);
        assert_eq!(stats.measured_bits, 18 * 3 * 10 * 63);
        assert!(validate_submission(&mut e, &handles[0], Algorithm::Naa, 8, 3).unwrap());
    }

    #[test]
    fn dead_link_to_one_server_is_recovered() {
        let sc = Scenario {
            algorithm: Algorithm::Niaa,
            fault_rate: 1.0,
            fault_server: Some(2),
            ..scenario()
        };
        let (meters, readings, batch) = encoded(&sc);
        let mut e = Engine::new(sc.params().unwrap(), 1);
        let region1: Vec<_> = batch.iter().filter(|(m, _)| m.region == 1).cloned().collect();
        let (handles, stats) = submit(&mut e, &sc, &region1).unwrap();
        assert_eq!(stats.dropped_bundles, 5);
        assert_eq!(stats.dropped_shares, 5 * 6);
        let vectors = handles.iter().map(|h| NiaaShared::from_handles(h).unwrap()).collect();
        let row = niaa_region(&mut e, &RegionBatch { region: 1, tuples: RegionTuples::Niaa(vectors) }, 3).unwrap();
        let opened: Vec<u64> = e.open_batch(&row.imp).unwrap().iter().map(|v| v.value()).collect();
        assert_eq!(opened, plaintext_oracle(&sc, &meters, &readings).imp[0]);
    }

    #[test]
    fn drop_pattern_is_seeded() {
        let sc = Scenario { fault_rate: 0.05, fault_mode: FaultMode::Share, n_servers: 5, threshold: 1, ..scenario() };
        let (_, _, batch) = encoded(&sc);
        let run = || {
            let mut e = Engine::new(sc.params().unwrap(), 1);
            let (h, stats) = submit(&mut e, &sc, &batch).unwrap();
            (e.export(&h.concat()).unwrap(), stats)
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.1.dropped_shares > 0);
    }
}
