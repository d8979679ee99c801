//! Built-in property checks behind `metershare selftest`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::abb::{Engine, EngineConfig, Mutation};
use crate::costs::Algorithm;
use crate::field::FieldElement;
use crate::gates::{equals_public_batch, BitSharedId};
use crate::metering::{ByteAccounting, FaultMode, Scenario};
use crate::shamir::{self, SharingParams};
use crate::sim::{run_scenario, RunOptions};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, outcome: std::result::Result<(), String>) -> CheckResult {
    match outcome {
        Ok(()) => CheckResult { name, passed: true, detail: String::new() },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

/// All 2^σ × 2^σ operand pairs at σ = 8.
pub fn exhaustive_equality(mutation: Option<Mutation>) -> std::result::Result<(), String> {
    const SIGMA: usize = 8;
    for x in 0..(1u64 << SIGMA) {
        let config = EngineConfig { mutation, ..Default::default() };
        let mut e = Engine::with_config(SharingParams::default(), x, config);
        let bits = (0..SIGMA)
            .rev()
            .map(|i| e.input(FieldElement::new((x >> i) & 1)))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|err| err.to_string())?;
        let id = BitSharedId::new(bits);
        let tests: Vec<_> = (0..(1u64 << SIGMA)).map(|y| (&id, y)).collect();
        e.set_phase("eq");
        let hits = equals_public_batch(&mut e, &tests).map_err(|err| err.to_string())?;
        let c = e.meter().phase("eq");
        if c.multiplications != (SIGMA << SIGMA) as u64 || c.rounds > 4 {
            return Err(format!("x={x}: {} multiplications in {} rounds", c.multiplications, c.rounds));
        }
        let opened = e.open_batch(&hits).map_err(|err| format!("x={x}: {err}"))?;
        for (y, v) in opened.into_iter().enumerate() {
            let want = FieldElement::new(u64::from(x == y as u64));
            if v != want {
                return Err(format!("equals({x}, {y}) opened {v}"));
            }
        }
    }
    Ok(())
}

/// Share and reconstruct from every `t+1` subset.
pub fn shamir_round_trip() -> std::result::Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for (n, t) in [(3, 1), (5, 2), (7, 3)] {
        let params = SharingParams::new(n, t).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let s = FieldElement::random(&mut rng);
            let shares = shamir::share(s, params, &mut rng);
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != t + 1 {
                    continue;
                }
                let subset: Vec<_> = shares.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, s)| *s).collect();
                if shamir::reconstruct(&subset).map_err(|e| e.to_string())? != s {
                    return Err(format!("n={n} t={t} subset {mask:b} reconstructs wrongly"));
                }
            }
        }
    }
    Ok(())
}

/// NAA, NCAA and NIAA on the same meters all agree with the plaintext sums.
pub fn algorithm_equivalence(mutation: Option<Mutation>) -> std::result::Result<(), String> {
    let base = Scenario {
        n_servers: 3,
        threshold: 1,
        n_dno: 2,
        n_suppliers: 4,
        sigma: 8,
        sm_per_region: vec![12, 9],
        seed: 2024,
        fault_rate: 0.0,
        algorithm: Algorithm::Naa,
        byte_accounting: ByteAccounting::Paper,
        fault_server: None,
        fault_mode: FaultMode::Bundle,
    };
    let opts = RunOptions { mutation, record_transcript: false, ..Default::default() };
    for alg in Algorithm::ALL {
        let sc = Scenario { algorithm: alg, ..base.clone() };
        let out = run_scenario(&sc, &opts).map_err(|e| format!("{alg}: {e}"))?;
        if !out.matches_oracle() {
            return Err(format!("{alg}: aggregates differ from plaintext sums"));
        }
    }
    Ok(())
}

pub fn run_all(mutation: Option<Mutation>) -> Vec<CheckResult> {
    vec![
        result("equality exhaustive (sigma=8)", exhaustive_equality(mutation)),
        result("shamir round trip", shamir_round_trip()),
        result("three-algorithm equivalence", algorithm_equivalence(mutation)),
    ]
}
