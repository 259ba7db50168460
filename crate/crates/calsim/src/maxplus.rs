//! Max-plus algebra over [`Interval`] and the matrix form of the CAL relations.
//!
//! `⊕` is `max` and `⊗` is saturating `+`, with `-inf` absorbing under `⊗`
//! even against `+inf`, so `-inf` entries behave as missing edges. An entry
//! `m[i][j]` is read as an edge from `j` to `i`: node `i` depends on node `j`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::timekit::{Interval, TimeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaxPlusError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("positive cycle {0}")]
    PositiveCycle(Cycle),
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// `a ⊗ b`: saturating sum with `-inf` as annihilator.
pub fn otimes(a: Interval, b: Interval) -> Interval {
    if a.is_neg_inf() || b.is_neg_inf() {
        return Interval::NEG_INF;
    }
    a.checked_add(b).unwrap_or(Interval::INF)
}

/// `a ⊕ b`: the maximum.
pub fn oplus(a: Interval, b: Interval) -> Interval {
    a.max(b)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MaxPlusMatrix {
    n: usize,
    data: Vec<Interval>,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct MaxPlusVector(Vec<Interval>);

impl MaxPlusMatrix {
    pub fn filled(n: usize, value: Interval) -> Self {
        MaxPlusMatrix { n, data: vec![value; n * n] }
    }

    /// The all-`-inf` matrix (no edges).
    pub fn empty(n: usize) -> Self {
        Self::filled(n, Interval::NEG_INF)
    }

    /// Zeros on the diagonal, `-inf` elsewhere.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::empty(n);
        for i in 0..n {
            m.set(i, i, Interval::ZERO);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Interval>>) -> Result<Self, MaxPlusError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(MaxPlusError::Shape { expected: n, found: row.len() });
            }
            data.extend(row);
        }
        Ok(MaxPlusMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Interval) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        MaxPlusMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Interval) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Interval] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<Interval>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    fn check(&self, other: usize) -> Result<(), MaxPlusError> {
        if self.n == other {
            Ok(())
        } else {
            Err(MaxPlusError::Shape { expected: self.n, found: other })
        }
    }

    /// Elementwise `⊕`.
    pub fn oplus(&self, other: &MaxPlusMatrix) -> Result<MaxPlusMatrix, MaxPlusError> {
        self.check(other.n)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| oplus(*a, *b)).collect();
        Ok(MaxPlusMatrix { n: self.n, data })
    }
}

impl MaxPlusVector {
    pub fn new(values: Vec<Interval>) -> Self {
        MaxPlusVector(values)
    }

    pub fn filled(n: usize, v: Interval) -> Self {
        MaxPlusVector(vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Interval {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[Interval] {
        &self.0
    }

    pub fn oplus(&self, other: &MaxPlusVector) -> Result<MaxPlusVector, MaxPlusError> {
        if self.len() != other.len() {
            return Err(MaxPlusError::Shape { expected: self.len(), found: other.len() });
        }
        Ok(MaxPlusVector(self.0.iter().zip(&other.0).map(|(a, b)| oplus(*a, *b)).collect()))
    }
}

impl From<Vec<Interval>> for MaxPlusVector {
    fn from(v: Vec<Interval>) -> Self {
        MaxPlusVector(v)
    }
}

/// Matrix product `a ⊗ b`.
pub fn mp_mat_mul(a: &MaxPlusMatrix, b: &MaxPlusMatrix) -> Result<MaxPlusMatrix, MaxPlusError> {
    a.check(b.n)?;
    let n = a.n;
    let mut out = MaxPlusMatrix::empty(n);
    for i in 0..n {
        for k in 0..n {
            let mut acc = Interval::NEG_INF;
            for j in 0..n {
                acc = oplus(acc, otimes(a.get(i, j), b.get(j, k)));
            }
            out.set(i, k, acc);
        }
    }
    Ok(out)
}

/// Matrix-vector product `a ⊗ v`.
pub fn mp_mat_vec(a: &MaxPlusMatrix, v: &MaxPlusVector) -> Result<MaxPlusVector, MaxPlusError> {
    a.check(v.len())?;
    let out = (0..a.n)
        .map(|i| {
            a.row(i)
                .iter()
                .zip(v.as_slice())
                .fold(Interval::NEG_INF, |acc, (g, x)| oplus(acc, otimes(*g, *x)))
        })
        .collect();
    Ok(MaxPlusVector(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleClass {
    Negative,
    Zero,
    Positive,
}

impl fmt::Display for CycleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CycleClass::Negative => "negative",
            CycleClass::Zero => "zero",
            CycleClass::Positive => "positive",
        })
    }
}

/// A simple cycle `nodes[0] → nodes[1] → … → nodes[0]`; step `a → b` uses entry `m[b][a]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cycle {
    pub nodes: Vec<usize>,
    pub weight: Interval,
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.nodes.iter().enumerate() {
            if k > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{v}")?;
        }
        if let Some(first) = self.nodes.first() {
            write!(f, " -> {first}")?;
        }
        write!(f, " (weight {})", self.weight)
    }
}

/// `Γ ⊕ Γ² ⊕ … ⊕ Γⁿ`; its diagonal holds the heaviest closed walk through each node.
fn transitive_sum(g: &MaxPlusMatrix) -> MaxPlusMatrix {
    let mut power = g.clone();
    let mut acc = g.clone();
    for _ in 1..g.n {
        power = mp_mat_mul(&power, g).expect("square");
        acc = acc.oplus(&power).expect("square");
    }
    acc
}

/// Sign of the heaviest cycle. An acyclic matrix counts as negative.
pub fn classify_cycles(g: &MaxPlusMatrix) -> CycleClass {
    let plus = transitive_sum(g);
    let best = (0..g.n).map(|i| plus.get(i, i)).max().unwrap_or(Interval::NEG_INF);
    match best.cmp(&Interval::ZERO) {
        std::cmp::Ordering::Greater => CycleClass::Positive,
        std::cmp::Ordering::Equal => CycleClass::Zero,
        std::cmp::Ordering::Less => CycleClass::Negative,
    }
}

/// Finds a simple cycle whose weight satisfies `accept`, if the heaviest
/// closed walk through some node does.
fn find_cycle(g: &MaxPlusMatrix, accept: impl Fn(Interval) -> bool) -> Option<Cycle> {
    let n = g.n;
    for s in 0..n {
        // best[k][v]: heaviest walk of k steps from s to v.
        let mut best = vec![vec![Interval::NEG_INF; n]; n + 1];
        let mut parent = vec![vec![usize::MAX; n]; n + 1];
        best[0][s] = Interval::ZERO;
        for k in 1..=n {
            for v in 0..n {
                for u in 0..n {
                    let w = otimes(best[k - 1][u], g.get(v, u));
                    if w > best[k][v] {
                        best[k][v] = w;
                        parent[k][v] = u;
                    }
                }
            }
            if !best[k][s].is_neg_inf() && accept(best[k][s]) {
                let mut walk = vec![s];
                let mut v = s;
                for step in (1..=k).rev() {
                    v = parent[step][v];
                    walk.push(v);
                }
                walk.reverse();
                if let Some(c) = split_walk(g, &walk, &accept) {
                    return Some(c);
                }
            }
        }
    }
    None
}

/// Splits a closed walk into simple cycles and returns the first accepted one.
fn split_walk(g: &MaxPlusMatrix, walk: &[usize], accept: &impl Fn(Interval) -> bool) -> Option<Cycle> {
    let mut stack: Vec<usize> = Vec::new();
    for &v in walk {
        if let Some(pos) = stack.iter().position(|&x| x == v) {
            let nodes: Vec<usize> = stack[pos..].to_vec();
            let weight = cycle_weight(g, &nodes);
            if accept(weight) {
                return Some(Cycle { nodes, weight });
            }
            stack.truncate(pos);
        }
        stack.push(v);
    }
    None
}

pub fn cycle_weight(g: &MaxPlusMatrix, nodes: &[usize]) -> Interval {
    let k = nodes.len();
    (0..k).fold(Interval::ZERO, |acc, t| otimes(acc, g.get(nodes[(t + 1) % k], nodes[t])))
}

/// A cycle with positive weight, if any.
pub fn positive_cycle(g: &MaxPlusMatrix) -> Option<Cycle> {
    find_cycle(g, |w| w > Interval::ZERO)
}

/// A cycle with weight exactly zero, meaningful when no cycle is positive.
pub fn zero_cycle(g: &MaxPlusMatrix) -> Option<Cycle> {
    find_cycle(g, |w| w == Interval::ZERO)
}

/// `Γ* = I ⊕ Γ ⊕ … ⊕ Γⁿ⁻¹`, defined when no cycle is positive.
pub fn kleene_star(g: &MaxPlusMatrix) -> Result<MaxPlusMatrix, MaxPlusError> {
    if classify_cycles(g) == CycleClass::Positive {
        let witness = positive_cycle(g).expect("positive class has a witness");
        return Err(MaxPlusError::PositiveCycle(witness));
    }
    let n = g.n;
    let mut acc = MaxPlusMatrix::identity(n);
    let mut power = MaxPlusMatrix::identity(n);
    for _ in 1..n {
        power = mp_mat_mul(&power, g)?;
        acc = acc.oplus(&power)?;
    }
    Ok(acc)
}

/// `Γ_ij = 𝓛_ij − C̄_ij − O_j`.
pub fn build_gamma(
    latency: &MaxPlusMatrix,
    inconsistency: &MaxPlusMatrix,
    offsets: &MaxPlusVector,
) -> Result<MaxPlusMatrix, MaxPlusError> {
    latency.check(inconsistency.n)?;
    latency.check(offsets.len())?;
    let n = latency.n;
    let mut g = MaxPlusMatrix::empty(n);
    for i in 0..n {
        for j in 0..n {
            let v = latency.get(i, j).checked_sub(inconsistency.get(i, j))?.checked_sub(offsets.get(j))?;
            g.set(i, j, v);
        }
    }
    Ok(g)
}

/// `A = (I ⊕ Γ) ⊗ O`.
pub fn cal_unavailability(gamma: &MaxPlusMatrix, offsets: &MaxPlusVector) -> Result<MaxPlusVector, MaxPlusError> {
    let m = MaxPlusMatrix::identity(gamma.n).oplus(gamma)?;
    mp_mat_vec(&m, offsets)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OffsetStatus {
    /// All cycles negative: the solution is the unique fixed point.
    Unique,
    /// A zero-weight cycle exists: the returned fixed point is one of several.
    NonUnique(Cycle),
    /// A positive cycle exists: no finite solution, every offset is `inf`.
    Unbounded(Cycle),
    /// No node has physically timestamped inputs.
    NoConstraint,
}

impl fmt::Display for OffsetStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffsetStatus::Unique => f.write_str("unique solution"),
            OffsetStatus::NonUnique(c) => write!(f, "warning: solution not unique, zero-weight cycle {c}"),
            OffsetStatus::Unbounded(c) => write!(f, "unbounded: positive cycle {c}, every node waits forever"),
            OffsetStatus::NoConstraint => f.write_str("no constraint: no physically timestamped inputs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetReport {
    pub offsets: MaxPlusVector,
    pub status: OffsetStatus,
}

/// Least solution of `O = Z ⊕ ΓO`, computed as `Γ* ⊗ Z`.
pub fn pessimistic_offsets(gamma: &MaxPlusMatrix, z: &MaxPlusVector) -> Result<OffsetReport, MaxPlusError> {
    gamma.check(z.len())?;
    let n = gamma.n;
    if z.as_slice().iter().all(|v| v.is_neg_inf()) {
        return Ok(OffsetReport { offsets: MaxPlusVector::filled(n, Interval::NEG_INF), status: OffsetStatus::NoConstraint });
    }
    let status = match classify_cycles(gamma) {
        CycleClass::Positive => {
            let witness = positive_cycle(gamma).expect("positive class has a witness");
            return Ok(OffsetReport { offsets: MaxPlusVector::filled(n, Interval::INF), status: OffsetStatus::Unbounded(witness) });
        }
        CycleClass::Zero => OffsetStatus::NonUnique(zero_cycle(gamma).expect("zero class has a witness")),
        CycleClass::Negative => OffsetStatus::Unique,
    };
    let star = kleene_star(gamma)?;
    Ok(OffsetReport { offsets: mp_mat_vec(&star, z)?, status })
}

impl Serialize for MaxPlusMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaxPlusMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<Interval>>::deserialize(d)?;
        MaxPlusMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl Serialize for MaxPlusVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaxPlusVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Vec::<Interval>::deserialize(d).map(MaxPlusVector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NI: Interval = Interval::NEG_INF;

    fn v(x: i64) -> Interval {
        Interval::from_ns(x)
    }

    fn m(rows: &[&[Interval]]) -> MaxPlusMatrix {
        MaxPlusMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Repeats `S ← I ⊕ Γ S` from `S = I` until nothing changes.
    fn star_by_iteration(g: &MaxPlusMatrix) -> MaxPlusMatrix {
        let id = MaxPlusMatrix::identity(g.n());
        let mut s = id.clone();
        for _ in 0..=g.n() + 1 {
            let next = id.oplus(&mp_mat_mul(g, &s).unwrap()).unwrap();
            if next == s {
                return s;
            }
            s = next;
        }
        panic!("no convergence");
    }

    /// Repeats `O ← Z ⊕ Γ O` from all `-inf` until nothing changes.
    fn offsets_by_iteration(g: &MaxPlusMatrix, z: &MaxPlusVector) -> MaxPlusVector {
        let mut o = MaxPlusVector::filled(z.len(), NI);
        for _ in 0..=z.len() + 1 {
            let next = z.oplus(&mp_mat_vec(g, &o).unwrap()).unwrap();
            if next == o {
                return o;
            }
            o = next;
        }
        panic!("no convergence");
    }

    /// Karp's maximum cycle mean over finite entries, as an exact fraction.
    fn karp_sign(g: &MaxPlusMatrix) -> CycleClass {
        let n = g.n();
        let mut best: Option<(i128, i128)> = None;
        for s in 0..n {
            let mut d = vec![vec![None::<i128>; n]; n + 1];
            d[0][s] = Some(0);
            for k in 1..=n {
                for vtx in 0..n {
                    for u in 0..n {
                        let w = g.get(vtx, u);
                        if !w.is_finite() {
                            continue;
                        }
                        if let Some(prev) = d[k - 1][u] {
                            let cand = prev + w.as_ns() as i128;
                            if d[k][vtx].is_none_or(|c| cand > c) {
                                d[k][vtx] = Some(cand);
                            }
                        }
                    }
                }
            }
            for vtx in 0..n {
                let Some(dn) = d[n][vtx] else { continue };
                let mut worst: Option<(i128, i128)> = None;
                for k in 0..n {
                    if let Some(dk) = d[k][vtx] {
                        let frac = (dn - dk, (n - k) as i128);
                        if worst.is_none_or(|w| frac.0 * w.1 < w.0 * frac.1) {
                            worst = Some(frac);
                        }
                    }
                }
                if let Some(w) = worst {
                    if best.is_none_or(|b| w.0 * b.1 > b.0 * w.1) {
                        best = Some(w);
                    }
                }
            }
        }
        match best {
            None => CycleClass::Negative,
            Some((num, _)) if num > 0 => CycleClass::Positive,
            Some((0, _)) => CycleClass::Zero,
            Some(_) => CycleClass::Negative,
        }
    }

    #[test]
    fn identity_is_neutral() {
        let g = m(&[&[v(1), NI], &[v(-4), v(7)]]);
        assert_eq!(mp_mat_mul(&MaxPlusMatrix::identity(2), &g).unwrap(), g);
    }

    #[test]
    fn matrix_vector_product() {
        let g = m(&[&[NI, v(3)], &[NI, NI]]);
        let z = MaxPlusVector::new(vec![v(0), v(0)]);
        assert_eq!(mp_mat_vec(&g, &z).unwrap().as_slice(), &[v(3), NI]);
    }

    #[test]
    fn empty_matrix_annihilates() {
        let g = MaxPlusMatrix::empty(3);
        let x = MaxPlusVector::new(vec![Interval::INF, v(2), NI]);
        assert!(mp_mat_vec(&g, &x).unwrap().as_slice().iter().all(|e| e.is_neg_inf()));
    }

    #[test]
    fn neg_inf_absorbs_pos_inf() {
        assert_eq!(otimes(NI, Interval::INF), NI);
        assert_eq!(otimes(Interval::INF, v(-3)), Interval::INF);
    }

    #[test]
    fn shape_errors() {
        let err = mp_mat_mul(&MaxPlusMatrix::identity(2), &MaxPlusMatrix::identity(3));
        assert_eq!(err, Err(MaxPlusError::Shape { expected: 2, found: 3 }));
        let err = mp_mat_vec(&MaxPlusMatrix::identity(2), &MaxPlusVector::filled(1, v(0)));
        assert!(matches!(err, Err(MaxPlusError::Shape { .. })));
    }

    #[test]
    fn kleene_examples() {
        assert_eq!(kleene_star(&m(&[&[v(-5)]])).unwrap(), m(&[&[v(0)]]));
        let g = m(&[&[NI, v(3)], &[NI, NI]]);
        assert_eq!(kleene_star(&g).unwrap(), m(&[&[v(0), v(3)], &[NI, v(0)]]));
        match kleene_star(&m(&[&[v(1)]])) {
            Err(MaxPlusError::PositiveCycle(c)) => assert_eq!(c, Cycle { nodes: vec![0], weight: v(1) }),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_cycles(&m(&[&[NI, v(3)], &[NI, NI]])), CycleClass::Negative);
        assert_eq!(classify_cycles(&m(&[&[NI, v(2)], &[v(-2), NI]])), CycleClass::Zero);
        assert_eq!(classify_cycles(&m(&[&[NI, v(2)], &[v(-1), NI]])), CycleClass::Positive);
        assert_eq!(classify_cycles(&MaxPlusMatrix::empty(0)), CycleClass::Negative);
    }

    #[test]
    fn infinite_edge_on_cycle_is_positive() {
        let g = m(&[&[NI, Interval::INF], &[v(-100), NI]]);
        assert_eq!(classify_cycles(&g), CycleClass::Positive);
        assert_eq!(positive_cycle(&g).unwrap().weight, Interval::INF);
    }

    #[test]
    fn witness_is_a_simple_positive_cycle() {
        let g = m(&[&[NI, v(2), NI], &[NI, NI, v(-5)], &[v(4), NI, NI]]);
        let c = positive_cycle(&g).unwrap();
        assert_eq!(c.weight, v(1));
        assert_eq!(cycle_weight(&g, &c.nodes), v(1));
        let mut sorted = c.nodes.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn gamma_examples() {
        let ms = Interval::from_ms;
        let l = MaxPlusMatrix::filled(1, ms(100));
        let c = MaxPlusMatrix::filled(1, ms(100));
        let o = MaxPlusVector::filled(1, v(0));
        assert_eq!(build_gamma(&l, &c, &o).unwrap().get(0, 0), v(0));
        let cinf = MaxPlusMatrix::filled(1, Interval::INF);
        assert_eq!(build_gamma(&l, &cinf, &o).unwrap().get(0, 0), NI);
        let zeros = MaxPlusMatrix::filled(3, v(0));
        assert_eq!(build_gamma(&zeros, &zeros, &MaxPlusVector::filled(3, v(0))).unwrap(), zeros);
        let linf = MaxPlusMatrix::filled(1, Interval::INF);
        assert_eq!(build_gamma(&linf, &cinf, &o), Err(MaxPlusError::Time(TimeError::UndefinedSum)));
    }

    #[test]
    fn unavailability_examples() {
        let ms = Interval::from_ms;
        let zero = MaxPlusVector::filled(2, v(0));
        let g = m(&[&[NI, ms(-3)], &[v(0), NI]]);
        assert_eq!(cal_unavailability(&g, &zero).unwrap().as_slice(), &[v(0), v(0)]);
        let g = m(&[&[NI, ms(50)], &[ms(20), NI]]);
        assert_eq!(cal_unavailability(&g, &zero).unwrap().as_slice(), &[ms(50), ms(20)]);
        let g = m(&[&[NI, Interval::INF], &[NI, NI]]);
        assert_eq!(cal_unavailability(&g, &zero).unwrap().get(0), Interval::INF);
    }

    #[test]
    fn offsets_examples() {
        let ms = Interval::from_ms;
        let g = m(&[&[NI, ms(3)], &[NI, NI]]);
        let none = pessimistic_offsets(&g, &MaxPlusVector::filled(2, NI)).unwrap();
        assert_eq!(none.status, OffsetStatus::NoConstraint);
        assert!(none.offsets.as_slice().iter().all(|x| x.is_neg_inf()));

        let z = MaxPlusVector::filled(2, v(0));
        let report = pessimistic_offsets(&g, &z).unwrap();
        assert_eq!(report.offsets, offsets_by_iteration(&g, &z));
        assert_eq!(report.offsets.as_slice(), &[ms(3), v(0)]);
        assert_eq!(report.status, OffsetStatus::Unique);

        let pos = m(&[&[NI, v(2)], &[v(-1), NI]]);
        let report = pessimistic_offsets(&pos, &z).unwrap();
        assert!(report.offsets.as_slice().iter().all(|x| *x == Interval::INF));
        assert!(matches!(report.status, OffsetStatus::Unbounded(_)));

        let zero = m(&[&[NI, v(2)], &[v(-2), NI]]);
        let report = pessimistic_offsets(&zero, &z).unwrap();
        assert!(matches!(report.status, OffsetStatus::NonUnique(_)));
        let fixed = z.oplus(&mp_mat_vec(&zero, &report.offsets).unwrap()).unwrap();
        assert_eq!(fixed, report.offsets);
    }

    fn entry() -> impl Strategy<Value = Interval> {
        prop_oneof![
            1 => Just(NI),
            3 => (-40i64..12).prop_map(v),
        ]
    }

    fn matrix(max_n: usize) -> impl Strategy<Value = MaxPlusMatrix> {
        (1..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(entry(), n * n).prop_map(move |data| MaxPlusMatrix { n, data })
        })
    }

    fn negative_matrix(max_n: usize) -> impl Strategy<Value = MaxPlusMatrix> {
        matrix(max_n).prop_filter("negative cycles", |g| classify_cycles(g) == CycleClass::Negative)
    }

    proptest! {
        #[test]
        fn identity_left_neutral(g in matrix(5)) {
            prop_assert_eq!(mp_mat_mul(&MaxPlusMatrix::identity(g.n()), &g).unwrap(), g);
        }

        #[test]
        fn classification_matches_karp(g in matrix(5)) {
            prop_assert_eq!(classify_cycles(&g), karp_sign(&g));
        }

        #[test]
        fn star_matches_iteration(g in negative_matrix(5)) {
            prop_assert_eq!(kleene_star(&g).unwrap(), star_by_iteration(&g));
        }

        #[test]
        fn offsets_are_a_fixed_point(g in negative_matrix(5), seed in proptest::collection::vec(prop_oneof![Just(NI), (-20i64..20).prop_map(v)], 5)) {
            let z = MaxPlusVector::new(seed[..g.n()].to_vec());
            let o = pessimistic_offsets(&g, &z).unwrap().offsets;
            let rhs = z.oplus(&mp_mat_vec(&g, &o).unwrap()).unwrap();
            prop_assert_eq!(&o, &rhs);
            prop_assert_eq!(o, offsets_by_iteration(&g, &z));
        }

        #[test]
        fn unavailability_with_zero_offsets_is_row_max(g in matrix(5)) {
            let a = cal_unavailability(&g, &MaxPlusVector::filled(g.n(), v(0))).unwrap();
            for i in 0..g.n() {
                let row_max = g.row(i).iter().copied().max().unwrap();
                prop_assert_eq!(a.get(i), row_max.max(v(0)));
            }
        }

        #[test]
        fn more_inconsistency_never_more_unavailability(
            l in matrix(4),
            bump in 0i64..30,
            pick in 0usize..16,
        ) {
            let n = l.n();
            let c = MaxPlusMatrix::filled(n, v(0));
            let o = MaxPlusVector::filled(n, v(0));
            let before = cal_unavailability(&build_gamma(&l, &c, &o).unwrap(), &o).unwrap();
            let mut c2 = c.clone();
            c2.set(pick % n, (pick / n) % n, v(bump));
            let after = cal_unavailability(&build_gamma(&l, &c2, &o).unwrap(), &o).unwrap();
            for i in 0..n {
                prop_assert!(after.get(i) <= before.get(i));
            }
        }
    }
}
