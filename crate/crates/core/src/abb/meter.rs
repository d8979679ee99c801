use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Counters for one protocol phase.
///
/// `messages_*` count one share per message; `bytes_*` use the 10-byte
/// share wire form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounters {
    pub multiplications: u64,
    pub opens: u64,
    pub rounds: u64,
    pub messages_between_dcc: u64,
    pub bytes_between_dcc: u64,
    pub dealer_messages: u64,
    pub dealer_bytes: u64,
    pub dealer_dropped: u64,
    pub output_messages: u64,
    pub output_bytes: u64,
    pub random_bits: u64,
    pub share_recoveries: u64,
}

impl PhaseCounters {
    /// Multiplications plus opens, each open weighted as one multiplication.
    pub fn mult_equivalents(&self) -> u64 {
        self.multiplications + self.opens
    }
}

impl AddAssign for PhaseCounters {
    fn add_assign(&mut self, o: Self) {
        self.multiplications += o.multiplications;
        self.opens += o.opens;
        self.rounds += o.rounds;
        self.messages_between_dcc += o.messages_between_dcc;
        self.bytes_between_dcc += o.bytes_between_dcc;
        self.dealer_messages += o.dealer_messages;
        self.dealer_bytes += o.dealer_bytes;
        self.dealer_dropped += o.dealer_dropped;
        self.output_messages += o.output_messages;
        self.output_bytes += o.output_bytes;
        self.random_bits += o.random_bits;
        self.share_recoveries += o.share_recoveries;
    }
}

/// Monotone per-phase cost counters of one engine.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    phases: BTreeMap<String, PhaseCounters>,
}

impl CostMeter {
    pub(crate) fn entry(&mut self, phase: &str) -> &mut PhaseCounters {
        if !self.phases.contains_key(phase) {
            self.phases.insert(phase.to_owned(), PhaseCounters::default());
        }
        self.phases.get_mut(phase).expect("inserted above")
    }

    pub fn phase(&self, label: &str) -> PhaseCounters {
        self.phases.get(label).copied().unwrap_or_default()
    }

    /// Sum over `label` and all of its `label/...` sub-phases.
    pub fn phase_tree(&self, label: &str) -> PhaseCounters {
        let nested = format!("{label}/");
        let mut acc = PhaseCounters::default();
        for (k, v) in &self.phases {
            if k == label || k.starts_with(&nested) {
                acc += *v;
            }
        }
        acc
    }

    pub fn total(&self) -> PhaseCounters {
        let mut acc = PhaseCounters::default();
        for v in self.phases.values() {
            acc += *v;
        }
        acc
    }

    pub fn phases(&self) -> impl Iterator<Item = (&str, &PhaseCounters)> {
        self.phases.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Folds another meter in, prefixing its phase labels.
    pub fn absorb(&mut self, prefix: &str, other: &CostMeter) {
        for (k, v) in &other.phases {
            let label = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}{k}")
            };
            *self.entry(&label) += *v;
        }
    }
}
