//! Index multisets and the combinatorial operations driving the term
//! recursions: completion, submultiset enumeration, and ordered partitions.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Largest allowed variable index. Term counts explode combinatorially well
/// before this bound matters in practice.
pub const MAX_INDEX: usize = 64;

/// A sorted bag of perturbation-variable indices.
///
/// A multiset labels one monomial `c_I = prod_{i in I} c_i` and hence one
/// expansion term. Equality is equality of the sorted element sequences.
#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Multiset {
    elements: Vec<usize>,
}

impl<'de> Deserialize<'de> for Multiset {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let elements = Vec::<usize>::deserialize(deserializer)?;
        if elements.iter().any(|&i| i >= MAX_INDEX) {
            return Err(serde::de::Error::custom(format!(
                "multiset index out of range (max {MAX_INDEX})"
            )));
        }
        Ok(Multiset::new(elements))
    }
}

impl Multiset {
    /// Builds a multiset from an arbitrary collection of indices, sorting
    /// into canonical non-decreasing order.
    ///
    /// Panics if any index is >= [`MAX_INDEX`].
    pub fn new(mut elements: Vec<usize>) -> Self {
        assert!(
            elements.iter().all(|&i| i < MAX_INDEX),
            "multiset index out of range (max {MAX_INDEX})"
        );
        elements.sort_unstable();
        Multiset { elements }
    }

    pub fn empty() -> Self {
        Multiset { elements: Vec::new() }
    }

    /// Number of elements counting repeats, `|I|`.
    pub fn size(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// The sorted element sequence.
    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    /// Largest index present, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.elements.last().copied()
    }

    /// Per-index multiplicities as `(index, count)` pairs, indices ascending.
    pub fn multiplicities(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &e in &self.elements {
            match out.last_mut() {
                Some((idx, count)) if *idx == e => *count += 1,
                _ => out.push((e, 1)),
            }
        }
        out
    }

    /// Multiset sum `I + J`: multiplicities add. Corresponds to the monomial
    /// product `c_{I+J} = c_I * c_J`.
    pub fn msum(&self, other: &Multiset) -> Multiset {
        let mut elements = Vec::with_capacity(self.size() + other.size());
        let (mut a, mut b) = (self.elements.iter().peekable(), other.elements.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => {
                    if x <= y {
                        elements.push(x);
                        a.next();
                    } else {
                        elements.push(y);
                        b.next();
                    }
                }
                (Some(&&x), None) => {
                    elements.push(x);
                    a.next();
                }
                (None, Some(&&y)) => {
                    elements.push(y);
                    b.next();
                }
                (None, None) => break,
            }
        }
        Multiset { elements }
    }

    /// Whether `other` is a submultiset of `self` (multiplicity-wise).
    pub fn contains(&self, other: &Multiset) -> bool {
        let mut it = self.elements.iter();
        'outer: for &e in &other.elements {
            for &f in it.by_ref() {
                if f == e {
                    continue 'outer;
                }
                if f > e {
                    return false;
                }
            }
            return false;
        }
        true
    }

    /// Multiset difference `I \ J`, subtracting multiplicities.
    ///
    /// Panics if `other` is not a submultiset of `self`.
    pub fn difference(&self, other: &Multiset) -> Multiset {
        assert!(self.contains(other), "difference requires a submultiset");
        let mut remaining = other.elements.clone();
        let mut elements = Vec::with_capacity(self.size() - other.size());
        for &e in &self.elements {
            if let Some(pos) = remaining.iter().position(|&r| r == e) {
                remaining.swap_remove(pos);
            } else {
                elements.push(e);
            }
        }
        elements.sort_unstable();
        Multiset { elements }
    }

    /// All nonempty proper submultisets `J` with `J != I`, each exactly once,
    /// in canonical order. Enumeration runs an odometer over per-index
    /// multiplicity vectors, so repeated elements never produce duplicates.
    pub fn submultisets_proper(&self) -> Vec<Multiset> {
        let mut out = self.submultisets_all();
        out.retain(|j| !j.is_empty() && j != self);
        out
    }

    /// All submultisets including the empty multiset and `self`.
    fn submultisets_all(&self) -> Vec<Multiset> {
        let mults = self.multiplicities();
        let mut counts = vec![0usize; mults.len()];
        let mut out = Vec::new();
        loop {
            let mut elements = Vec::new();
            for (slot, &(idx, _)) in counts.iter().zip(&mults) {
                elements.extend(std::iter::repeat(idx).take(*slot));
            }
            out.push(Multiset { elements });
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == counts.len() {
                    out.sort_by(canonical_cmp);
                    return out;
                }
                if counts[pos] < mults[pos].1 {
                    counts[pos] += 1;
                    break;
                }
                counts[pos] = 0;
                pos += 1;
            }
        }
    }

    /// All ordered tuples `(I_1, ..., I_k)` of nonempty multisets with
    /// `I_1 + ... + I_k = self`. Empty when `|I| < k`.
    pub fn ordered_partitions(&self, k: usize) -> Vec<Vec<Multiset>> {
        assert!(k >= 1, "partition arity must be at least 1");
        if self.size() < k {
            return Vec::new();
        }
        if k == 1 {
            return vec![vec![self.clone()]];
        }
        let mut out = Vec::new();
        // first part ranges over nonempty submultisets leaving enough behind
        for first in self.submultisets_all() {
            if first.is_empty() || first.size() > self.size() - (k - 1) {
                continue;
            }
            let rest = self.difference(&first);
            for mut tail in rest.ordered_partitions(k - 1) {
                let mut tuple = Vec::with_capacity(k);
                tuple.push(first.clone());
                tuple.append(&mut tail);
                out.push(tuple);
            }
        }
        out
    }
}

impl fmt::Debug for Multiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.elements.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","))
    }
}

/// Canonical ordering: by size ascending, then lexicographic on the sorted
/// element sequence. Guarantees submultisets precede their supersets.
pub fn canonical_cmp(a: &Multiset, b: &Multiset) -> std::cmp::Ordering {
    a.size().cmp(&b.size()).then_with(|| a.elements.cmp(&b.elements))
}

impl PartialOrd for Multiset {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(canonical_cmp(self, other))
    }
}

impl Ord for Multiset {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        canonical_cmp(self, other)
    }
}

/// Smallest superset of `labels` closed under taking nonempty submultisets,
/// in canonical order with duplicates removed.
pub fn complete(labels: &[Multiset]) -> Vec<Multiset> {
    let mut closed: BTreeSet<Multiset> = BTreeSet::new();
    let mut stack: Vec<Multiset> = labels.iter().filter(|l| !l.is_empty()).cloned().collect();
    while let Some(label) = stack.pop() {
        if closed.insert(label.clone()) {
            stack.extend(label.submultisets_proper());
        }
    }
    closed.into_iter().collect()
}

/// All multisets over indices `0..r` of size `1..=n`, in canonical order.
pub fn all_up_to_order(num_variables: usize, order: usize) -> Vec<Multiset> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    fn rec(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, start: usize, r: usize, left: usize) {
        if left == 0 {
            return;
        }
        for i in start..r {
            current.push(i);
            out.push(current.clone());
            rec(out, current, i, r, left - 1);
            current.pop();
        }
    }
    let mut raw = Vec::new();
    rec(&mut raw, &mut current, 0, num_variables, order);
    out.extend(raw.into_iter().map(Multiset::new));
    out.sort_by(canonical_cmp);
    out
}

/// `C(r+n, n) - 1`: the number of monomials of order `1..=n` in `r` variables.
pub fn term_count(num_variables: usize, order: usize) -> usize {
    binomial(num_variables + order, order) - 1
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}
