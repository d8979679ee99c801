//! Analytic cost model: multiplication counts per region, communication in
//! bits per network segment, CPU extrapolation, and comparison against the
//! counters of a simulated run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Naa,
    Ncaa,
    Niaa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Naa, Algorithm::Ncaa, Algorithm::Niaa];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Naa => "naa",
            Algorithm::Ncaa => "ncaa",
            Algorithm::Niaa => "niaa",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naa" => Ok(Algorithm::Naa),
            "ncaa" => Ok(Algorithm::Ncaa),
            "niaa" => Ok(Algorithm::Niaa),
            _ => Err(Error::UnknownRow(s.to_owned())),
        }
    }
}

/// Rows of the communication table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Trad,
    Dep2sa,
    Naa,
    Ncaa,
    Niaa,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::Trad,
        Protocol::Dep2sa,
        Protocol::Naa,
        Protocol::Ncaa,
        Protocol::Niaa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Trad => "trad",
            Protocol::Dep2sa => "dep2sa",
            Protocol::Naa => "naa",
            Protocol::Ncaa => "ncaa",
            Protocol::Niaa => "niaa",
        }
    }
}

impl From<Algorithm> for Protocol {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Naa => Protocol::Naa,
            Algorithm::Ncaa => Protocol::Ncaa,
            Algorithm::Niaa => Protocol::Niaa,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trad" => Ok(Protocol::Trad),
            "dep2sa" => Ok(Protocol::Dep2sa),
            "naa" => Ok(Protocol::Naa),
            "ncaa" => Ok(Protocol::Ncaa),
            "niaa" => Ok(Protocol::Niaa),
            _ => Err(Error::UnknownRow(s.to_owned())),
        }
    }
}

/// Columns of the communication table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segment {
    SmsToDcc,
    BetweenDcc,
    DccToRecipients,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::SmsToDcc, Segment::BetweenDcc, Segment::DccToRecipients];

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::SmsToDcc => "sms-to-dcc",
            Segment::BetweenDcc => "between-dcc",
            Segment::DccToRecipients => "dcc-to-recipients",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Segment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sms-to-dcc" => Ok(Segment::SmsToDcc),
            "between-dcc" => Ok(Segment::BetweenDcc),
            "dcc-to-recipients" => Ok(Segment::DccToRecipients),
            _ => Err(Error::UnknownRow(s.to_owned())),
        }
    }
}

/// Model parameters. Widths are in bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub n_d: u64,
    pub n_s: u64,
    pub sigma: u64,
    /// Smart meters per region.
    pub m: u64,
    pub x_bits: u64,
    pub share_bits: u64,
    pub c_bits: u64,
    pub cipher_bits: u64,
    pub r_bits: u64,
    pub per_mult_seconds: f64,
    pub threads: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            n_d: 14,
            n_s: 10,
            sigma: 8,
            m: 100,
            x_bits: 32,
            share_bits: 63,
            c_bits: 128,
            cipher_bits: 1024,
            r_bits: 32,
            per_mult_seconds: 20.8e-6,
            threads: 1,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("n_d", self.n_d),
            ("n_s", self.n_s),
            ("sigma", self.sigma),
            ("x_bits", self.x_bits),
            ("share_bits", self.share_bits),
            ("c_bits", self.c_bits),
            ("cipher_bits", self.cipher_bits),
            ("r_bits", self.r_bits),
            ("threads", self.threads),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidCostParams(format!("{name} must be positive")));
        }
        if !(self.per_mult_seconds.is_finite() && self.per_mult_seconds > 0.0) {
            return Err(Error::InvalidCostParams("per_mult_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn with_m(self, m: u64) -> Self {
        Self { m, ..self }
    }
}

fn log2(v: f64) -> f64 {
    if v <= 1.0 {
        0.0
    } else {
        v.log2()
    }
}

/// Multiplications per region (per stream for NAA).
pub fn formula_mults(alg: Algorithm, p: &CostParams) -> f64 {
    let m = p.m as f64;
    match alg {
        Algorithm::Naa => (p.sigma * p.m * p.n_s + p.m * p.n_s) as f64,
        Algorithm::Ncaa => 2.0 * (m * log2(m) + m),
        Algorithm::Niaa => 0.0,
    }
}

/// NCAA count with Batcher's `m·log₂²m` gates at three per item.
pub fn formula_mults_ncaa_batcher(p: &CostParams) -> f64 {
    let m = p.m as f64;
    2.0 * (m * log2(m).powi(2) * 3.0 + m)
}

/// Communication in bits for one table cell.
pub fn formula_comm(protocol: Protocol, segment: Segment, p: &CostParams) -> f64 {
    let (n_d, n_s, m) = (p.n_d as f64, p.n_s as f64, p.m as f64);
    let share = p.share_bits as f64;
    match (protocol, segment) {
        (Protocol::Trad, Segment::SmsToDcc) => 2.0 * n_d * m * p.x_bits as f64,
        (Protocol::Dep2sa, Segment::SmsToDcc) => 2.0 * n_d * m * p.cipher_bits as f64,
        (Protocol::Naa | Protocol::Ncaa, Segment::SmsToDcc) => 12.0 * n_d * m * share,
        (Protocol::Niaa, Segment::SmsToDcc) => 6.0 * n_d * m * n_s * share,

        (Protocol::Trad | Protocol::Dep2sa | Protocol::Niaa, Segment::BetweenDcc) => 0.0,
        (Protocol::Naa, Segment::BetweenDcc) => 6.0 * share * formula_mults(Algorithm::Naa, p),
        (Protocol::Ncaa, Segment::BetweenDcc) => 6.0 * share * formula_mults(Algorithm::Ncaa, p),

        (Protocol::Trad, Segment::DccToRecipients) => 6.0 * n_d * n_s * p.x_bits as f64,
        (Protocol::Dep2sa, Segment::DccToRecipients) => {
            2.0 * n_d
                * n_s
                * (2.0 * p.cipher_bits as f64 + p.x_bits as f64 + p.r_bits as f64)
        }
        (Protocol::Naa | Protocol::Ncaa | Protocol::Niaa, Segment::DccToRecipients) => {
            18.0 * n_d * n_s * share
        }
    }
}

/// [`formula_comm`] addressed by row and column name.
pub fn formula_comm_named(protocol: &str, segment: &str, p: &CostParams) -> Result<f64> {
    Ok(formula_comm(protocol.parse()?, segment.parse()?, p))
}

/// Output distribution when DNOs and suppliers fetch from a trusted TSO:
/// servers send cells to the TSO only, which forwards one ciphertext per
/// DNO and supplier.
pub fn formula_comm_trusted_tso(p: &CostParams) -> f64 {
    6.0 * (p.n_d * p.n_s * p.share_bits) as f64 + ((p.n_d + p.n_s) * p.c_bits) as f64
}

pub fn formula_total_comm(protocol: Protocol, p: &CostParams) -> f64 {
    Segment::ALL.iter().map(|&s| formula_comm(protocol, s, p)).sum()
}

/// Wall-clock estimate for `mults` multiplications spread over `threads`.
pub fn extrapolate_cpu(mults: f64, p: &CostParams) -> f64 {
    mults * p.per_mult_seconds / p.threads.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub protocol: Protocol,
    pub segment: Segment,
    pub n_d: u64,
    pub n_s: u64,
    pub sigma: u64,
    pub m: u64,
    pub formula_bits: f64,
    pub measured_bits: Option<u64>,
    pub formula_mults: Option<f64>,
    pub measured_mult_equivalents: Option<u64>,
    pub cpu_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub prime: u64,
    pub accounting: String,
    pub network: String,
    pub per_mult_seconds: f64,
    pub threads: u64,
}

/// Formula values next to measured ones.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<CostRow>,
    pub checks: Vec<Verdict>,
}

/// Analytic table for the given parameters: every protocol and segment.
pub fn formula_table(p: &CostParams) -> Vec<CostRow> {
    let mut rows = Vec::new();
    for protocol in Protocol::ALL {
        let alg = match protocol {
            Protocol::Naa => Some(Algorithm::Naa),
            Protocol::Ncaa => Some(Algorithm::Ncaa),
            Protocol::Niaa => Some(Algorithm::Niaa),
            _ => None,
        };
        for segment in Segment::ALL {
            let mults = alg.filter(|_| segment == Segment::BetweenDcc).map(|a| formula_mults(a, p));
            rows.push(CostRow {
                protocol,
                segment,
                n_d: p.n_d,
                n_s: p.n_s,
                sigma: p.sigma,
                m: p.m,
                formula_bits: formula_comm(protocol, segment, p),
                measured_bits: None,
                formula_mults: mults,
                measured_mult_equivalents: None,
                cpu_seconds: mults.map(|v| extrapolate_cpu(v, p)),
            });
        }
    }
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Requirement {
    Exact,
    Informational,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub label: String,
    pub measured: f64,
    pub formula: f64,
    pub abs_delta: f64,
    pub rel_delta: Option<f64>,
    pub requirement: Requirement,
    pub pass: Option<bool>,
}

impl Verdict {
    pub fn new(label: impl Into<String>, measured: f64, formula: f64, requirement: Requirement) -> Self {
        let abs_delta = measured - formula;
        Self {
            label: label.into(),
            measured,
            formula,
            abs_delta,
            rel_delta: (formula != 0.0).then(|| abs_delta / formula),
            requirement,
            pass: (requirement == Requirement::Exact).then_some(abs_delta == 0.0),
        }
    }
}

/// Verdicts of a report; exact requirements carry pass/fail.
pub fn compare(report: &CostReport) -> &[Verdict] {
    &report.checks
}

pub fn all_exact_pass(report: &CostReport) -> bool {
    report.checks.iter().all(|v| v.pass != Some(false))
}

/// One point of the computation curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComputePoint {
    pub m: u64,
    pub naa_mults: f64,
    pub ncaa_mults: f64,
    pub niaa_mults: f64,
    pub naa_seconds: f64,
    pub ncaa_seconds: f64,
    pub niaa_seconds: f64,
}

/// Per-region multiplications and CPU time against meters per region.
pub fn compute_series(p: &CostParams, ms: &[u64]) -> Vec<ComputePoint> {
    ms.iter()
        .map(|&m| {
            let q = p.with_m(m);
            ComputePoint {
                m,
                naa_mults: formula_mults(Algorithm::Naa, &q),
                ncaa_mults: formula_mults(Algorithm::Ncaa, &q),
                niaa_mults: formula_mults(Algorithm::Niaa, &q),
                naa_seconds: extrapolate_cpu(formula_mults(Algorithm::Naa, &q), &q),
                ncaa_seconds: extrapolate_cpu(formula_mults(Algorithm::Ncaa, &q), &q),
                niaa_seconds: extrapolate_cpu(formula_mults(Algorithm::Niaa, &q), &q),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommPoint {
    pub m: u64,
    pub protocol: Protocol,
    pub sms_to_dcc: f64,
    pub between_dcc: f64,
    pub dcc_to_recipients: f64,
    pub total: f64,
}

/// Communication per segment and in total against meters per region.
pub fn comm_series(p: &CostParams, ms: &[u64]) -> Vec<CommPoint> {
    let mut out = Vec::new();
    for &m in ms {
        let q = p.with_m(m);
        for protocol in Protocol::ALL {
            out.push(CommPoint {
                m,
                protocol,
                sms_to_dcc: formula_comm(protocol, Segment::SmsToDcc, &q),
                between_dcc: formula_comm(protocol, Segment::BetweenDcc, &q),
                dcc_to_recipients: formula_comm(protocol, Segment::DccToRecipients, &q),
                total: formula_total_comm(protocol, &q),
            });
        }
    }
    out
}

/// Parses `start:stop:step` with optional `K`/`M` suffixes, inclusive.
pub fn parse_range(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidCostParams(format!("bad range {spec:?}, want start:stop:step"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(bad());
    };
    let (start, stop, step) = (parse_count(a)?, parse_count(b)?, parse_count(c)?);
    if step == 0 || stop < start {
        return Err(bad());
    }
    Ok((0..)
        .map(|k| start + k * step)
        .take_while(|&v| v <= stop)
        .collect())
}

/// `2200000`, `2.2M`, `500K`.
pub fn parse_count(s: &str) -> Result<u64> {
    let s = s.trim();
    let (num, mult) = match s.chars().last() {
        Some('M' | 'm') => (&s[..s.len() - 1], 1e6),
        Some('K' | 'k') => (&s[..s.len() - 1], 1e3),
        _ => (s, 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| Error::InvalidCostParams(format!("not a count: {s:?}")))?;
    let scaled = (v * mult).round();
    if !(scaled.is_finite() && scaled >= 0.0) {
        return Err(Error::InvalidCostParams(format!("not a count: {s:?}")));
    }
    Ok(scaled as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mult_examples() {
        let p = CostParams::default();
        assert_eq!(formula_mults(Algorithm::Niaa, &p), 0.0);
        assert_eq!(formula_mults(Algorithm::Naa, &p.with_m(100)), 9000.0);
        assert_eq!(formula_mults(Algorithm::Naa, &p.with_m(2_200_000)), 1.98e8);
        // 2·(8·3 + 8)
        assert_eq!(formula_mults(Algorithm::Ncaa, &p.with_m(8)), 64.0);
        assert_eq!(formula_mults_ncaa_batcher(&p.with_m(8)), 2.0 * (8.0 * 9.0 * 3.0 + 8.0));
    }

    #[test]
    fn comm_examples() {
        let p = CostParams::default();
        assert_eq!(formula_comm(Protocol::Niaa, Segment::BetweenDcc, &p), 0.0);
        assert_eq!(formula_comm(Protocol::Naa, Segment::DccToRecipients, &p), 158_760.0);
        assert_eq!(
            formula_comm(Protocol::Dep2sa, Segment::DccToRecipients, &p),
            (2 * 14 * 10 * (2 * 1024 + 32 + 32)) as f64
        );
        assert_eq!(
            formula_comm_named("naa", "sms-to-dcc", &p.with_m(1)).unwrap(),
            12.0 * 14.0 * 63.0
        );
        assert_eq!(
            formula_comm_named("trad", "upstairs", &p),
            Err(Error::UnknownRow("upstairs".into()))
        );
        assert_eq!(formula_comm_trusted_tso(&p), (6 * 14 * 10 * 63 + 24 * 128) as f64);
    }

    #[test]
    fn cpu_examples() {
        let p = CostParams::default();
        assert_eq!(extrapolate_cpu(0.0, &p), 0.0);
        assert!((extrapolate_cpu(1.0, &p) - 20.8e-6).abs() < 1e-18);
        let uk = CostParams { threads: 8, ..p.with_m(2_200_000) };
        let s = extrapolate_cpu(formula_mults(Algorithm::Naa, &uk), &uk);
        assert!((s - 514.8).abs() < 1e-6, "{s}");
        assert!(s < 600.0);
    }

    #[test]
    fn ranges() {
        let ms = parse_range("0.5M:4M:0.5M").unwrap();
        assert_eq!(ms.len(), 8);
        assert_eq!(ms[0], 500_000);
        assert_eq!(ms[7], 4_000_000);
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("5:1:1").is_err());
        assert_eq!(parse_count("2200000").unwrap(), 2_200_000);
    }

    #[test]
    fn compute_series_order() {
        let ms = parse_range("0.5M:4M:0.5M").unwrap();
        let s = compute_series(&CostParams::default(), &ms);
        for w in s.windows(2) {
            assert!(w[1].naa_mults > w[0].naa_mults);
            assert!(w[1].ncaa_mults > w[0].ncaa_mults);
        }
        for pt in &s {
            assert!(pt.naa_mults >= pt.ncaa_mults && pt.ncaa_mults >= pt.niaa_mults);
            assert_eq!(pt.niaa_mults, 0.0);
        }
    }

    #[test]
    fn params_validation() {
        let p = CostParams { threads: 0, ..Default::default() };
        assert!(p.validate().is_err());
        assert!(CostParams::default().validate().is_ok());
    }

    fn params() -> impl Strategy<Value = CostParams> {
        (1u64..50, 1u64..50, 1u64..16, 1u64..100_000).prop_map(|(n_d, n_s, sigma, m)| CostParams {
            n_d,
            n_s,
            sigma,
            m,
            ..Default::default()
        })
    }

    proptest! {
        #[test]
        fn naa_linear_in_m_and_suppliers(p in params()) {
            let base = formula_mults(Algorithm::Naa, &p);
            prop_assert_eq!(formula_mults(Algorithm::Naa, &p.with_m(2 * p.m)), 2.0 * base);
            let more = CostParams { n_s: 2 * p.n_s, ..p };
            prop_assert_eq!(formula_mults(Algorithm::Naa, &more), 2.0 * base);
        }

        #[test]
        fn comm_monotone(p in params(), which in 0usize..4) {
            let bigger = match which {
                0 => CostParams { n_d: p.n_d + 1, ..p },
                1 => CostParams { n_s: p.n_s + 1, ..p },
                2 => CostParams { sigma: p.sigma + 1, ..p },
                _ => p.with_m(p.m + 1),
            };
            for protocol in Protocol::ALL {
                for segment in Segment::ALL {
                    prop_assert!(formula_comm(protocol, segment, &bigger) >= formula_comm(protocol, segment, &p));
                }
            }
        }

        #[test]
        fn cpu_inverse_in_threads(mults in 0u64..1_000_000_000, threads in 1u64..64) {
            let one = CostParams::default();
            let many = CostParams { threads, ..one };
            let a = extrapolate_cpu(mults as f64, &one);
            let b = extrapolate_cpu(mults as f64, &many);
            prop_assert!((a - b * threads as f64).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
