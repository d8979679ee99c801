use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::Result;

/// A message endpoint in the simulated topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Endpoint {
    /// Computational party (DCC server), 1-based.
    Server(u8),
    /// Input dealer (smart meter) by global meter id.
    Dealer(u32),
    Tso,
    Dno(u16),
    Supplier(u16),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Server(i) => write!(f, "S{i}"),
            Endpoint::Dealer(i) => write!(f, "SM{i}"),
            Endpoint::Tso => write!(f, "TSO"),
            Endpoint::Dno(j) => write!(f, "DNO{j}"),
            Endpoint::Supplier(u) => write!(f, "SUP{u}"),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One share-carrying message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TranscriptRecord {
    pub round: u64,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub handle: u32,
    pub bytes: usize,
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: std::io::Write>(records: &[TranscriptRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| crate::error::Error::Serialization(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_shape() {
        let rec = TranscriptRecord {
            round: 4,
            sender: Endpoint::Server(1),
            receiver: Endpoint::Supplier(2),
            handle: 17,
            bytes: 10,
        };
        let mut buf = Vec::new();
        write_jsonl(&[rec, rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"round":4,"sender":"S1","receiver":"SUP2","handle":17,"bytes":10}"#
        );
    }
}
