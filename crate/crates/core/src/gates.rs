//! Oblivious subcircuits built on the [`Engine`]: bitwise equality against a
//! public value, and a permutation network of secret-controlled exchange
//! gates.

use crate::abb::{Engine, Mutation, SecretHandle};
use crate::error::{Error, Result};
use crate::field::FieldElement;

/// Default supplier-ID width.
pub const DEFAULT_SIGMA: usize = 8;

/// An identifier shared bit by bit, most significant bit first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitSharedId {
    pub bits: Vec<SecretHandle>,
}

impl BitSharedId {
    pub fn new(bits: Vec<SecretHandle>) -> Self {
        Self { bits }
    }

    pub fn sigma(&self) -> usize {
        self.bits.len()
    }

    /// `Σ 2^i · bit_i` as one shared value. Local, no interaction.
    pub fn compose(&self, engine: &mut Engine) -> Result<SecretHandle> {
        let sigma = self.bits.len();
        let terms: Vec<_> = self
            .bits
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, FieldElement::new(1u64 << (sigma - 1 - i))))
            .collect();
        engine.affine(&terms, FieldElement::ZERO)
    }
}

/// A permuted record: the shared supplier ID travels with its payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleRow {
    pub id_bits: BitSharedId,
    pub payload: SecretHandle,
}

impl TupleRow {
    fn items(&self) -> Vec<SecretHandle> {
        let mut v = self.id_bits.bits.clone();
        v.push(self.payload);
        v
    }

    fn from_items(mut items: Vec<SecretHandle>) -> Self {
        let payload = items.pop().expect("row has a payload");
        Self {
            id_bits: BitSharedId::new(items),
            payload,
        }
    }
}

fn check_public(y: u64, sigma: usize) -> Result<()> {
    if sigma < 64 && y >> sigma != 0 {
        return Err(Error::PublicValueTooWide { value: y, bits: sigma });
    }
    Ok(())
}

/// Shared indicator of `x == y` for public `y`.
pub fn equals_public(engine: &mut Engine, x: &BitSharedId, y: u64) -> Result<SecretHandle> {
    Ok(equals_public_batch(engine, &[(x, y)])?[0])
}

/// Runs independent equality tests side by side.
///
/// Per test, each bit becomes `x_i XOR y_i` (free, `y` is public) and the
/// bits are OR-folded onto a zero accumulator with `a + b - ab`. The fold is
/// a balanced tree, so σ bits cost σ multiplications in `⌈log₂(σ+1)⌉`
/// rounds. The OR is 1 on mismatch; the result is returned as `1 - OR`.
pub fn equals_public_batch(
    engine: &mut Engine,
    tests: &[(&BitSharedId, u64)],
) -> Result<Vec<SecretHandle>> {
    let Some(&(first, _)) = tests.first() else {
        return Ok(Vec::new());
    };
    let sigma = first.sigma();
    let one = FieldElement::ONE;
    let mut levels: Vec<Vec<SecretHandle>> = Vec::with_capacity(tests.len());
    for &(x, y) in tests {
        if x.sigma() != sigma {
            return Err(Error::LengthMismatch(sigma, x.sigma()));
        }
        check_public(y, sigma)?;
        let mut operands = Vec::with_capacity(sigma + 1);
        operands.push(engine.constant(FieldElement::ZERO));
        for (i, &bit) in x.bits.iter().enumerate() {
            let yi = (y >> (sigma - 1 - i)) & 1;
            operands.push(if yi == 0 {
                bit
            } else {
                engine.affine(&[(bit, -one)], one)?
            });
        }
        levels.push(operands);
    }

    while levels[0].len() > 1 {
        let mut pairs = Vec::new();
        for ops in &levels {
            pairs.extend(ops.chunks_exact(2).map(|c| (c[0], c[1])));
        }
        let prods = engine.product_batch(&pairs)?;
        let mut prods = prods.into_iter();
        for ops in &mut levels {
            let mut next = Vec::with_capacity(ops.len().div_ceil(2));
            for c in ops.chunks(2) {
                if let [a, b] = *c {
                    let ab = prods.next().expect("one product per pair");
                    next.push(engine.affine(&[(a, one), (b, one), (ab, -one)], FieldElement::ZERO)?);
                } else {
                    next.push(c[0]);
                }
            }
            *ops = next;
        }
    }

    let flip = engine.mutation() == Some(Mutation::FlipEqualityPolarity);
    levels
        .into_iter()
        .map(|ops| {
            if flip {
                Ok(ops[0])
            } else {
                engine.affine(&[(ops[0], -one)], one)
            }
        })
        .collect()
}

/// Conditional swap of two rows under a shared control bit.
///
/// Each item costs one multiplication: `x' = x + c(y - x)`, `y' = x + y - x'`.
pub fn exchange_gate(
    engine: &mut Engine,
    a: &[SecretHandle],
    b: &[SecretHandle],
    ctrl: SecretHandle,
) -> Result<(Vec<SecretHandle>, Vec<SecretHandle>)> {
    let mut out = exchange_layer(engine, &[(a.to_vec(), b.to_vec(), ctrl)])?;
    Ok(out.pop().expect("one gate"))
}

type Gate = (Vec<SecretHandle>, Vec<SecretHandle>, SecretHandle);

fn exchange_layer(
    engine: &mut Engine,
    gates: &[Gate],
) -> Result<Vec<(Vec<SecretHandle>, Vec<SecretHandle>)>> {
    let one = FieldElement::ONE;
    let mut pairs = Vec::new();
    for (a, b, c) in gates {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch(a.len(), b.len()));
        }
        for (&x, &y) in a.iter().zip(b) {
            let diff = engine.sub(y, x)?;
            pairs.push((*c, diff));
        }
    }
    let prods = engine.product_batch(&pairs)?;
    let mut prods = prods.into_iter();
    let mut out = Vec::with_capacity(gates.len());
    for (a, b, _) in gates {
        let mut na = Vec::with_capacity(a.len());
        let mut nb = Vec::with_capacity(b.len());
        for (&x, &y) in a.iter().zip(b) {
            let p = prods.next().expect("one product per item");
            na.push(engine.add(x, p)?);
            nb.push(engine.affine(&[(y, one), (p, -one)], FieldElement::ZERO)?);
        }
        out.push((na, nb));
    }
    Ok(out)
}

/// Batcher's odd-even merge sorting network, used as a permutation network.
///
/// Built for the next power of two and pruned of every element touching a
/// wire at or beyond `n`, which leaves a valid network on `n` wires (the
/// missing wires behave as `+∞` inputs that never move). Any sorting
/// network can realise every permutation, so random controls reach all of
/// them, though not uniformly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationNetwork {
    wires: usize,
    layers: Vec<Vec<(usize, usize)>>,
}

impl PermutationNetwork {
    pub fn batcher(n: usize) -> Self {
        let size = n.max(1).next_power_of_two();
        let mut layers = Vec::new();
        let mut p = 1;
        while p < size {
            let mut k = p;
            while k >= 1 {
                let mut layer = Vec::new();
                let mut j = k % p;
                while j + k < size {
                    for i in 0..k {
                        let (lo, hi) = (i + j, i + j + k);
                        if hi < size && lo / (2 * p) == hi / (2 * p) && hi < n {
                            layer.push((lo, hi));
                        }
                    }
                    j += 2 * k;
                }
                if !layer.is_empty() {
                    layers.push(layer);
                }
                k /= 2;
            }
            p *= 2;
        }
        Self { wires: n, layers }
    }

    pub fn wires(&self) -> usize {
        self.wires
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Vec<(usize, usize)>] {
        &self.layers
    }

    /// Plaintext evaluation as a compare-exchange sorter.
    pub fn sort_plain<T: Ord + Copy>(&self, values: &mut [T]) {
        for layer in &self.layers {
            for &(lo, hi) in layer {
                if values[lo] > values[hi] {
                    values.swap(lo, hi);
                }
            }
        }
    }
}

/// Gate count of Batcher's network on `2^p` wires, `(p² - p + 4)·2^(p-2) - 1`.
pub fn batcher_gates_pow2(p: u32) -> u64 {
    match p {
        0 => 0,
        1 => 1,
        _ => (u64::from(p * p - p + 4) << (p - 2)) - 1,
    }
}

/// The `n·log₂ n` exchange-gate bound used by the analytic formulas.
pub fn nlogn_gates(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        n as f64 * (n as f64).log2()
    }
}

/// Obliviously permutes rows of equal width.
///
/// All control bits are generated up front (booked under `<phase>/ctrl`);
/// each network layer is then one batch of swap products (`<phase>/swap`).
pub fn oblivious_permute(
    engine: &mut Engine,
    rows: &[Vec<SecretHandle>],
) -> Result<Vec<Vec<SecretHandle>>> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::LengthMismatch(width, bad.len()));
    }
    let net = PermutationNetwork::batcher(rows.len());
    let mut wires = rows.to_vec();
    if net.gate_count() == 0 {
        return Ok(wires);
    }
    let ctrl = engine.in_sub_phase("ctrl", |e| e.random_bits(net.gate_count()))?;
    let mut ctrl = ctrl.into_iter();
    engine.in_sub_phase("swap", |e| {
        for layer in net.layers() {
            let gates: Vec<Gate> = layer
                .iter()
                .map(|&(lo, hi)| (wires[lo].clone(), wires[hi].clone(), ctrl.next().expect("bit per gate")))
                .collect();
            let swapped = exchange_layer(e, &gates)?;
            for (&(lo, hi), (a, b)) in layer.iter().zip(swapped) {
                wires[lo] = a;
                wires[hi] = b;
            }
        }
        Ok(())
    })?;
    Ok(wires)
}

/// [`oblivious_permute`] over ID-bit rows.
pub fn oblivious_permute_rows(engine: &mut Engine, rows: &[TupleRow]) -> Result<Vec<TupleRow>> {
    let items: Vec<_> = rows.iter().map(TupleRow::items).collect();
    Ok(oblivious_permute(engine, &items)?
        .into_iter()
        .map(TupleRow::from_items)
        .collect())
}
