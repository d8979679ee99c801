//! Region aggregation (NAA, NCAA, NIAA), grid aggregation and output
//! distribution.
//!
//! Supplier `u` (1-based) has the public identifier `u`. Region rows are
//! computed on one engine per region; the grid engine adopts their shares
//! and adds them up without interaction.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::abb::{Endpoint, Engine, SecretHandle};
use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::gates::{equals_public_batch, oblivious_permute, BitSharedId};
use crate::shamir::{self, Share};

/// One meter's submission in bitwise-ID form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NaaShared {
    pub imp_id: BitSharedId,
    pub exp_id: BitSharedId,
    pub e_imp: SecretHandle,
    pub e_exp: SecretHandle,
}

impl NaaShared {
    /// Splits handles laid out as `imp bits, exp bits, E_imp, E_exp`.
    pub fn from_handles(handles: &[SecretHandle], sigma: usize) -> Result<Self> {
        if handles.len() != 2 * sigma + 2 {
            return Err(Error::WrongTupleForm("naa"));
        }
        Ok(Self {
            imp_id: BitSharedId::new(handles[..sigma].to_vec()),
            exp_id: BitSharedId::new(handles[sigma..2 * sigma].to_vec()),
            e_imp: handles[2 * sigma],
            e_exp: handles[2 * sigma + 1],
        })
    }
}

/// One meter's submission in one-hot form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NiaaShared {
    pub imp: Vec<SecretHandle>,
    pub exp: Vec<SecretHandle>,
}

impl NiaaShared {
    /// Splits handles laid out as `imp vector, exp vector`.
    pub fn from_handles(handles: &[SecretHandle]) -> Result<Self> {
        if !handles.len().is_multiple_of(2) {
            return Err(Error::WrongTupleForm("niaa"));
        }
        let (imp, exp) = handles.split_at(handles.len() / 2);
        Ok(Self {
            imp: imp.to_vec(),
            exp: exp.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RegionTuples {
    Naa(Vec<NaaShared>),
    Niaa(Vec<NiaaShared>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionBatch {
    /// DNO index, 1-based.
    pub region: usize,
    pub tuples: RegionTuples,
}

impl RegionBatch {
    pub fn len(&self) -> usize {
        match &self.tuples {
            RegionTuples::Naa(t) => t.len(),
            RegionTuples::Niaa(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shared per-supplier sums of one region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateRow {
    pub imp: Vec<SecretHandle>,
    pub exp: Vec<SecretHandle>,
}

impl AggregateRow {
    pub fn zeros(engine: &mut Engine, n_s: usize) -> Self {
        let imp = (0..n_s).map(|_| engine.constant(FieldElement::ZERO)).collect();
        let exp = (0..n_s).map(|_| engine.constant(FieldElement::ZERO)).collect();
        Self { imp, exp }
    }

    pub fn handles(&self) -> Vec<SecretHandle> {
        self.imp.iter().chain(&self.exp).copied().collect()
    }

    pub fn from_handles(handles: &[SecretHandle]) -> Self {
        let (imp, exp) = handles.split_at(handles.len() / 2);
        Self {
            imp: imp.to_vec(),
            exp: exp.to_vec(),
        }
    }
}

/// Supplier counts an NCAA run reveals to the servers, per stream.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcaaLeakage {
    pub imp_counts: Vec<u64>,
    pub exp_counts: Vec<u64>,
}

pub const NAA_IMP_PHASE: &str = "naa.imp";
pub const NAA_EXP_PHASE: &str = "naa.exp";
pub const NCAA_IMP_PHASE: &str = "ncaa.imp";
pub const NCAA_EXP_PHASE: &str = "ncaa.exp";
pub const NIAA_PHASE: &str = "niaa";

fn naa_tuples(batch: &RegionBatch) -> Result<&[NaaShared]> {
    match &batch.tuples {
        RegionTuples::Naa(t) => Ok(t),
        RegionTuples::Niaa(_) => Err(Error::WrongTupleForm("naa/ncaa")),
    }
}

fn with_phase<T>(engine: &mut Engine, label: &str, f: impl FnOnce(&mut Engine) -> Result<T>) -> Result<T> {
    let prev = engine.set_phase(label);
    let out = f(engine);
    engine.set_phase(prev);
    out
}

fn naa_stream(
    engine: &mut Engine,
    items: &[(&BitSharedId, SecretHandle)],
    suppliers: &[u64],
) -> Result<Vec<SecretHandle>> {
    let tests: Vec<(&BitSharedId, u64)> = items
        .iter()
        .flat_map(|&(id, _)| suppliers.iter().map(move |&s| (id, s)))
        .collect();
    let hits = equals_public_batch(engine, &tests)?;
    let pairs: Vec<_> = hits
        .chunks(suppliers.len().max(1))
        .zip(items)
        .flat_map(|(row, &(_, e))| row.iter().map(move |&c| (c, e)))
        .collect();
    let routed = engine.product_batch(&pairs)?;
    (0..suppliers.len())
        .map(|u| {
            let col: Vec<_> = routed.iter().skip(u).step_by(suppliers.len()).copied().collect();
            engine.sum(&col)
        })
        .collect()
}

/// Routes every payload by secret equality tests against each supplier ID.
///
/// Costs `σ·m·N_s + m·N_s` multiplications per stream. An ID matching no
/// supplier silently lands in no bucket.
pub fn naa_region(engine: &mut Engine, batch: &RegionBatch, suppliers: &[u64]) -> Result<AggregateRow> {
    let tuples = naa_tuples(batch)?;
    let imp_items: Vec<_> = tuples.iter().map(|t| (&t.imp_id, t.e_imp)).collect();
    let exp_items: Vec<_> = tuples.iter().map(|t| (&t.exp_id, t.e_exp)).collect();
    let imp = with_phase(engine, NAA_IMP_PHASE, |e| naa_stream(e, &imp_items, suppliers))?;
    let exp = with_phase(engine, NAA_EXP_PHASE, |e| naa_stream(e, &exp_items, suppliers))?;
    Ok(AggregateRow { imp, exp })
}

fn ncaa_stream(
    engine: &mut Engine,
    items: &[(&BitSharedId, SecretHandle)],
    suppliers: &[u64],
) -> Result<(Vec<SecretHandle>, Vec<u64>)> {
    let mut rows = Vec::with_capacity(items.len());
    for &(id, e) in items {
        rows.push(vec![id.compose(engine)?, e]);
    }
    let permuted = oblivious_permute(engine, &rows)?;
    let ids: Vec<_> = permuted.iter().map(|r| r[0]).collect();
    let opened = engine.open_batch(&ids)?;
    let mut buckets = vec![Vec::new(); suppliers.len()];
    let mut counts = vec![0u64; suppliers.len()];
    for (row, id) in permuted.iter().zip(opened) {
        let u = suppliers
            .iter()
            .position(|&s| FieldElement::new(s) == id)
            .ok_or(Error::OpenedIdInvalid(id.value()))?;
        buckets[u].push(row[1]);
        counts[u] += 1;
    }
    let sums = buckets
        .iter()
        .map(|b| engine.sum(b))
        .collect::<Result<Vec<_>>>()?;
    Ok((sums, counts))
}

/// Permutes the region's rows, opens the shuffled IDs and routes payloads
/// by public comparison. Each stream gets its own permutation. The servers
/// learn how many meters each supplier has.
pub fn ncaa_region(
    engine: &mut Engine,
    batch: &RegionBatch,
    suppliers: &[u64],
) -> Result<(AggregateRow, NcaaLeakage)> {
    let tuples = naa_tuples(batch)?;
    let imp_items: Vec<_> = tuples.iter().map(|t| (&t.imp_id, t.e_imp)).collect();
    let exp_items: Vec<_> = tuples.iter().map(|t| (&t.exp_id, t.e_exp)).collect();
    let (imp, imp_counts) = with_phase(engine, NCAA_IMP_PHASE, |e| ncaa_stream(e, &imp_items, suppliers))?;
    let (exp, exp_counts) = with_phase(engine, NCAA_EXP_PHASE, |e| ncaa_stream(e, &exp_items, suppliers))?;
    Ok((AggregateRow { imp, exp }, NcaaLeakage { imp_counts, exp_counts }))
}

/// Adds the one-hot vectors position by position. No interaction.
pub fn niaa_region(engine: &mut Engine, batch: &RegionBatch, n_s: usize) -> Result<AggregateRow> {
    let RegionTuples::Niaa(vectors) = &batch.tuples else {
        return Err(Error::WrongTupleForm("niaa"));
    };
    for v in vectors {
        for len in [v.imp.len(), v.exp.len()] {
            if len != n_s {
                return Err(Error::VectorLengthMismatch { got: len, expected: n_s });
            }
        }
    }
    with_phase(engine, NIAA_PHASE, |e| {
        let mut imp = Vec::with_capacity(n_s);
        let mut exp = Vec::with_capacity(n_s);
        for u in 0..n_s {
            let col: Vec<_> = vectors.iter().map(|v| v.imp[u]).collect();
            imp.push(e.sum(&col)?);
            let col: Vec<_> = vectors.iter().map(|v| v.exp[u]).collect();
            exp.push(e.sum(&col)?);
        }
        Ok(AggregateRow { imp, exp })
    })
}

/// Grid-wide shared aggregates with all three total views.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedMatrix {
    /// `cells[j]` is region `j + 1`'s row.
    pub cells: Vec<AggregateRow>,
    pub region_totals: Vec<(SecretHandle, SecretHandle)>,
    pub supplier_totals: Vec<(SecretHandle, SecretHandle)>,
    pub grid_total: (SecretHandle, SecretHandle),
    /// `false` for regions that delivered no tuples.
    pub complete: Vec<bool>,
}

/// Adds region rows into region, supplier and grid totals. Local only.
///
/// `None` marks a region with no data; it contributes a zero row and is
/// flagged incomplete.
pub fn grid_aggregate(engine: &mut Engine, rows: Vec<Option<AggregateRow>>, n_s: usize) -> Result<SharedMatrix> {
    let complete: Vec<bool> = rows.iter().map(Option::is_some).collect();
    let mut cells = Vec::with_capacity(rows.len());
    for row in rows {
        let row = match row {
            Some(r) => r,
            None => AggregateRow::zeros(engine, n_s),
        };
        if row.imp.len() != n_s || row.exp.len() != n_s {
            return Err(Error::RowShapeMismatch);
        }
        cells.push(row);
    }
    let mut region_totals = Vec::with_capacity(cells.len());
    for row in &cells {
        region_totals.push((engine.sum(&row.imp)?, engine.sum(&row.exp)?));
    }
    let mut supplier_totals = Vec::with_capacity(n_s);
    for u in 0..n_s {
        let imp: Vec<_> = cells.iter().map(|r| r.imp[u]).collect();
        let exp: Vec<_> = cells.iter().map(|r| r.exp[u]).collect();
        supplier_totals.push((engine.sum(&imp)?, engine.sum(&exp)?));
    }
    let imp: Vec<_> = region_totals.iter().map(|t| t.0).collect();
    let exp: Vec<_> = region_totals.iter().map(|t| t.1).collect();
    let grid_total = (engine.sum(&imp)?, engine.sum(&exp)?);
    Ok(SharedMatrix {
        cells,
        region_totals,
        supplier_totals,
        grid_total,
        complete,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "role", content = "index", rename_all = "lowercase")]
pub enum Recipient {
    Tso,
    Dno(usize),
    Supplier(usize),
}

impl Recipient {
    pub fn endpoint(self) -> Endpoint {
        match self {
            Recipient::Tso => Endpoint::Tso,
            Recipient::Dno(j) => Endpoint::Dno(j as u16),
            Recipient::Supplier(u) => Endpoint::Supplier(u as u16),
        }
    }

    pub fn key(self) -> String {
        match self {
            Recipient::Tso => "tso".into(),
            Recipient::Dno(j) => format!("dno{j}"),
            Recipient::Supplier(u) => format!("supplier{u}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyPair {
    pub imp: u64,
    pub exp: u64,
}

impl std::ops::AddAssign for EnergyPair {
    fn add_assign(&mut self, o: Self) {
        self.imp += o.imp;
        self.exp += o.exp;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub region: usize,
    pub supplier: usize,
    pub imp: u64,
    pub exp: u64,
}

/// What one output party ends up with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipientBundle {
    pub recipient: Recipient,
    pub cells: Vec<Cell>,
    pub region_totals: BTreeMap<usize, EnergyPair>,
    pub supplier_totals: BTreeMap<usize, EnergyPair>,
    pub grid_total: Option<EnergyPair>,
}

impl RecipientBundle {
    /// Number of energy values held, imp and exp counted separately.
    pub fn value_count(&self) -> usize {
        2 * (self.cells.len()
            + self.region_totals.len()
            + self.supplier_totals.len()
            + usize::from(self.grid_total.is_some()))
    }
}

fn open_shares(shares: &[Share]) -> Result<u64> {
    Ok(shamir::reconstruct_checked(shares)?.value())
}

/// Sends each output party the cells it is entitled to and lets it
/// reconstruct them and derive its totals.
///
/// DNO `j` gets row `j`, supplier `u` gets column `u`, the TSO gets
/// everything. Servers send cells only, two shares per cell per server;
/// totals are sums the recipient computes itself. Servers listed in
/// `silent` fail to reach any recipient.
pub fn distribute_outputs(engine: &mut Engine, matrix: &SharedMatrix, silent: &[usize]) -> Result<Vec<RecipientBundle>> {
    let n_d = matrix.cells.len();
    let n_s = matrix.supplier_totals.len();
    let mut recipients = vec![Recipient::Tso];
    recipients.extend((1..=n_d).map(Recipient::Dno));
    recipients.extend((1..=n_s).map(Recipient::Supplier));

    let prev = engine.set_phase("output");
    let result = (|| {
        let mut bundles = Vec::with_capacity(recipients.len());
        for r in recipients {
            let coords: Vec<(usize, usize)> = match r {
                Recipient::Tso => (0..n_d).flat_map(|j| (0..n_s).map(move |u| (j, u))).collect(),
                Recipient::Dno(j) => (0..n_s).map(|u| (j - 1, u)).collect(),
                Recipient::Supplier(u) => (0..n_d).map(|j| (j, u - 1)).collect(),
            };
            let handles: Vec<_> = coords
                .iter()
                .flat_map(|&(j, u)| [matrix.cells[j].imp[u], matrix.cells[j].exp[u]])
                .collect();
            let received = engine.deliver_from(&handles, r.endpoint(), silent)?;
            let mut cells = Vec::with_capacity(coords.len());
            for (&(j, u), pair) in coords.iter().zip(received.chunks(2)) {
                cells.push(Cell {
                    region: j + 1,
                    supplier: u + 1,
                    imp: open_shares(&pair[0])?,
                    exp: open_shares(&pair[1])?,
                });
            }
            bundles.push(derive_totals(r, cells));
        }
        Ok(bundles)
    })();
    engine.set_phase(prev);
    result
}

fn derive_totals(recipient: Recipient, cells: Vec<Cell>) -> RecipientBundle {
    let mut region_totals: BTreeMap<usize, EnergyPair> = BTreeMap::new();
    let mut supplier_totals: BTreeMap<usize, EnergyPair> = BTreeMap::new();
    let mut grid = EnergyPair::default();
    for c in &cells {
        let v = EnergyPair { imp: c.imp, exp: c.exp };
        *region_totals.entry(c.region).or_default() += v;
        *supplier_totals.entry(c.supplier).or_default() += v;
        grid += v;
    }
    match recipient {
        Recipient::Tso => RecipientBundle {
            recipient,
            cells,
            region_totals,
            supplier_totals,
            grid_total: Some(grid),
        },
        Recipient::Dno(j) => RecipientBundle {
            recipient,
            cells,
            region_totals: region_totals.into_iter().filter(|(k, _)| *k == j).collect(),
            supplier_totals: BTreeMap::new(),
            grid_total: None,
        },
        Recipient::Supplier(u) => RecipientBundle {
            recipient,
            cells,
            region_totals: BTreeMap::new(),
            supplier_totals: supplier_totals.into_iter().filter(|(k, _)| *k == u).collect(),
            grid_total: None,
        },
    }
}

/// Plaintext aggregates, indexed `[region - 1][supplier - 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateMatrix {
    pub imp: Vec<Vec<u64>>,
    pub exp: Vec<Vec<u64>>,
}

impl AggregateMatrix {
    pub fn zeros(n_d: usize, n_s: usize) -> Self {
        Self {
            imp: vec![vec![0; n_s]; n_d],
            exp: vec![vec![0; n_s]; n_d],
        }
    }

    pub fn n_d(&self) -> usize {
        self.imp.len()
    }

    pub fn n_s(&self) -> usize {
        self.imp.first().map_or(0, Vec::len)
    }

    pub fn region_total(&self, j: usize) -> EnergyPair {
        EnergyPair {
            imp: self.imp[j - 1].iter().sum(),
            exp: self.exp[j - 1].iter().sum(),
        }
    }

    pub fn supplier_total(&self, u: usize) -> EnergyPair {
        EnergyPair {
            imp: self.imp.iter().map(|r| r[u - 1]).sum(),
            exp: self.exp.iter().map(|r| r[u - 1]).sum(),
        }
    }

    pub fn grid_total(&self) -> EnergyPair {
        EnergyPair {
            imp: self.imp.iter().flatten().sum(),
            exp: self.exp.iter().flatten().sum(),
        }
    }

    /// Rebuilds the matrix from the TSO's bundle.
    pub fn from_bundle(bundle: &RecipientBundle, n_d: usize, n_s: usize) -> Self {
        let mut m = Self::zeros(n_d, n_s);
        for c in &bundle.cells {
            m.imp[c.region - 1][c.supplier - 1] = c.imp;
            m.exp[c.region - 1][c.supplier - 1] = c.exp;
        }
        m
    }

    /// `region,supplier,imp,exp`, one line per cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        w.write_record(["region", "supplier", "imp", "exp"]).map_err(ser)?;
        for j in 0..self.n_d() {
            for u in 0..self.n_s() {
                w.serialize((j + 1, u + 1, self.imp[j][u], self.exp[j][u])).map_err(ser)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Bundles as one JSON object keyed by role.
pub fn bundles_to_json(bundles: &[RecipientBundle]) -> Result<String> {
    let map: BTreeMap<String, &RecipientBundle> = bundles.iter().map(|b| (b.recipient.key(), b)).collect();
    serde_json::to_string_pretty(&map).map_err(|e| Error::Serialization(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shamir::SharingParams;

    fn fe(v: u64) -> FieldElement {
        FieldElement::new(v)
    }

    fn engine() -> Engine {
        Engine::new(SharingParams::default(), 21)
    }

    fn naa_tuple(e: &mut Engine, imp_id: u64, exp_id: u64, ei: u64, ee: u64, sigma: usize) -> NaaShared {
        let mut hs = Vec::new();
        for id in [imp_id, exp_id] {
            for i in (0..sigma).rev() {
                hs.push(e.input(fe((id >> i) & 1)).unwrap());
            }
        }
        hs.push(e.input(fe(ei)).unwrap());
        hs.push(e.input(fe(ee)).unwrap());
        NaaShared::from_handles(&hs, sigma).unwrap()
    }

    fn open_row(e: &mut Engine, row: &AggregateRow) -> (Vec<u64>, Vec<u64>) {
        let imp = e.open_batch(&row.imp).unwrap().iter().map(|v| v.value()).collect();
        let exp = e.open_batch(&row.exp).unwrap().iter().map(|v| v.value()).collect();
        (imp, exp)
    }

    #[test]
    fn naa_single_meter() {
        let mut e = engine();
        let t = naa_tuple(&mut e, 3, 1, 10, 4, 8);
        let batch = RegionBatch { region: 1, tuples: RegionTuples::Naa(vec![t]) };
        let row = naa_region(&mut e, &batch, &[1, 2, 3]).unwrap();
        assert_eq!(open_row(&mut e, &row), (vec![0, 0, 10], vec![4, 0, 0]));
        assert_eq!(e.meter().phase(NAA_IMP_PHASE).multiplications, 3 * 9);
    }

    #[test]
    fn naa_empty_batch() {
        let mut e = engine();
        let batch = RegionBatch { region: 1, tuples: RegionTuples::Naa(vec![]) };
        let row = naa_region(&mut e, &batch, &[1, 2]).unwrap();
        assert_eq!(open_row(&mut e, &row), (vec![0, 0], vec![0, 0]));
        assert_eq!(e.meter().total().multiplications, 0);
    }

    #[test]
    fn ncaa_single_meter_reveals_its_supplier() {
        let mut e = engine();
        let t = naa_tuple(&mut e, 2, 2, 7, 5, 8);
        let batch = RegionBatch { region: 1, tuples: RegionTuples::Naa(vec![t]) };
        let (row, leak) = ncaa_region(&mut e, &batch, &[1, 2, 3]).unwrap();
        assert_eq!(leak.imp_counts, vec![0, 1, 0]);
        assert_eq!(open_row(&mut e, &row), (vec![0, 7, 0], vec![0, 5, 0]));
    }

    #[test]
    fn ncaa_rejects_unknown_id() {
        let mut e = engine();
        let t = naa_tuple(&mut e, 9, 1, 7, 5, 8);
        let batch = RegionBatch { region: 1, tuples: RegionTuples::Naa(vec![t]) };
        assert_eq!(
            ncaa_region(&mut e, &batch, &[1, 2, 3]).unwrap_err(),
            Error::OpenedIdInvalid(9)
        );
    }

    #[test]
    fn niaa_single_meter() {
        let mut e = engine();
        let imp = [0, 7, 0].map(|v| e.input(fe(v)).unwrap()).to_vec();
        let exp = [0, 0, 0].map(|v| e.input(fe(v)).unwrap()).to_vec();
        let before = e.meter().total();
        let batch = RegionBatch { region: 1, tuples: RegionTuples::Niaa(vec![NiaaShared { imp, exp }]) };
        let row = niaa_region(&mut e, &batch, 3).unwrap();
        let after = e.meter().total();
        assert_eq!(after.messages_between_dcc, before.messages_between_dcc);
        assert_eq!(open_row(&mut e, &row), (vec![0, 7, 0], vec![0, 0, 0]));
        assert_eq!(
            niaa_region(&mut e, &batch, 4).unwrap_err(),
            Error::VectorLengthMismatch { got: 3, expected: 4 }
        );
    }

    fn constant_row(e: &mut Engine, imp: &[u64], exp: &[u64]) -> AggregateRow {
        AggregateRow {
            imp: imp.iter().map(|&v| e.input(fe(v)).unwrap()).collect(),
            exp: exp.iter().map(|&v| e.input(fe(v)).unwrap()).collect(),
        }
    }

    #[test]
    fn grid_totals_and_distribution() {
        let mut e = engine();
        let r1 = constant_row(&mut e, &[1, 2], &[10, 20]);
        let r2 = constant_row(&mut e, &[3, 4], &[30, 40]);
        let m = grid_aggregate(&mut e, vec![Some(r1), Some(r2), None], 2).unwrap();
        assert_eq!(m.complete, vec![true, true, false]);
        let before = e.meter().total().multiplications;
        let bundles = distribute_outputs(&mut e, &m, &[]).unwrap();
        assert_eq!(e.meter().total().multiplications, before);
        // 3 servers × 2 values × (TSO + DNOs + suppliers each N_d·N_s cells)
        assert_eq!(e.meter().phase("output").output_messages, 18 * 3 * 2);

        let tso = &bundles[0];
        assert_eq!(tso.grid_total, Some(EnergyPair { imp: 10, exp: 100 }));
        let plain = AggregateMatrix::from_bundle(tso, 3, 2);
        assert_eq!(plain.imp, vec![vec![1, 2], vec![3, 4], vec![0, 0]]);
        assert_eq!(plain.supplier_total(2), EnergyPair { imp: 6, exp: 60 });

        // derived totals agree with the servers' shared totals
        let (gi, ge) = m.grid_total;
        assert_eq!(e.open_batch(&[gi, ge]).unwrap(), vec![fe(10), fe(100)]);
        for (j, &(ti, te)) in m.region_totals.iter().enumerate() {
            let want = plain.region_total(j + 1);
            assert_eq!(e.open_batch(&[ti, te]).unwrap(), vec![fe(want.imp), fe(want.exp)]);
        }
        for (u, &(ti, te)) in m.supplier_totals.iter().enumerate() {
            let want = plain.supplier_total(u + 1);
            assert_eq!(e.open_batch(&[ti, te]).unwrap(), vec![fe(want.imp), fe(want.exp)]);
        }

        for b in &bundles {
            match b.recipient {
                Recipient::Dno(j) => {
                    assert!(b.cells.iter().all(|c| c.region == j));
                    assert_eq!(b.value_count(), 2 * (2 + 1));
                }
                Recipient::Supplier(u) => {
                    assert!(b.cells.iter().all(|c| c.supplier == u));
                    assert_eq!(b.value_count(), 2 * (3 + 1));
                }
                Recipient::Tso => assert_eq!(b.value_count(), 2 * (6 + 3 + 2 + 1)),
            }
        }
    }

    #[test]
    fn two_silent_servers_starve_recipients() {
        let mut e = engine();
        let r1 = constant_row(&mut e, &[1], &[2]);
        let m = grid_aggregate(&mut e, vec![Some(r1)], 1).unwrap();
        assert_eq!(
            distribute_outputs(&mut e, &m, &[1, 3]).unwrap_err(),
            Error::InsufficientShares { needed: 2, got: 1 }
        );
        assert!(distribute_outputs(&mut e, &m, &[2]).is_ok());
    }

    #[test]
    fn csv_layout() {
        let mut m = AggregateMatrix::zeros(1, 2);
        m.imp[0][1] = 5;
        m.exp[0][0] = 3;
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "region,supplier,imp,exp\n1,1,0,3\n1,2,5,0\n");
    }
}
