//! Balanced bipartitions of a circuit's qubits minimizing the number of
//! crossing CZ gates, and the rewrite into the layered normal form
//! (alternating local block pairs separated by one crossing CZ each).

use crate::circuit::{Circuit, Gate};
use crate::error::{Error, Result};

/// Exact cut enumeration is capped at this register size.
pub const EXACT_CUT_CAP: usize = 20;

/// A balanced bipartition `A:B` with its crossing CZ list.
///
/// The balance constraint is `⌈n/2⌉ ≤ m ≤ n-1` with `m = |A|`, so the B
/// side is never larger than A and both sides are nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    side_a: Vec<usize>,
    side_b: Vec<usize>,
    /// Crossing CZs in circuit order as `(gate position, c, t)` with the
    /// original gate orientation.
    crossing: Vec<(usize, usize, usize)>,
    n: usize,
}

impl Partition {
    /// Builds the partition with the given A side, computing the crossing
    /// list. Rejects unbalanced or out-of-range sides.
    pub fn for_side_a(c: &Circuit, side_a: &[usize]) -> Result<Self> {
        let n = c.n_qubits();
        let mut sorted: Vec<usize> = side_a.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != side_a.len() {
            return Err(Error::validation("partition side A has repeated qubits"));
        }
        if sorted.iter().any(|&q| q < 1 || q > n) {
            return Err(Error::validation("partition side A out of range"));
        }
        let m = sorted.len();
        if 2 * m < n || m >= n {
            return Err(Error::validation(format!(
                "partition must satisfy ⌈n/2⌉ ≤ m ≤ n-1; got m = {m}, n = {n}"
            )));
        }
        let mut mask = 0u64;
        for &q in &sorted {
            mask |= 1 << (q - 1);
        }
        let side_b: Vec<usize> = (1..=n).filter(|&q| mask & (1 << (q - 1)) == 0).collect();
        let crossing = crossing_czs(c, mask);
        Ok(Self {
            side_a: sorted,
            side_b,
            crossing,
            n,
        })
    }

    pub fn side_a(&self) -> &[usize] {
        &self.side_a
    }

    pub fn side_b(&self) -> &[usize] {
        &self.side_b
    }

    pub fn m(&self) -> usize {
        self.side_a.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// Crossing CZs in circuit order: `(gate position, c, t)`.
    pub fn crossing(&self) -> &[(usize, usize, usize)] {
        &self.crossing
    }

    /// The denseness `D` of this partition: its crossing CZ count.
    pub fn denseness(&self) -> usize {
        self.crossing.len()
    }

    /// Whether qubit `q` lies on side A.
    pub fn contains_a(&self, q: usize) -> bool {
        self.side_a.binary_search(&q).is_ok()
    }
}

fn crossing_czs(c: &Circuit, a_mask: u64) -> Vec<(usize, usize, usize)> {
    c.gates()
        .iter()
        .enumerate()
        .filter_map(|(pos, g)| match g {
            Gate::Cz { c: a, t: b } => {
                let ina = a_mask & (1 << (a - 1)) != 0;
                let inb = a_mask & (1 << (b - 1)) != 0;
                (ina != inb).then_some((pos, *a, *b))
            }
            _ => None,
        })
        .collect()
}

fn count_crossings(cz_pairs: &[(usize, usize)], a_mask: u64) -> usize {
    cz_pairs
        .iter()
        .filter(|(a, b)| (a_mask >> (a - 1)) & 1 != (a_mask >> (b - 1)) & 1)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutMode {
    /// Enumerate every balanced bipartition (n ≤ [`EXACT_CUT_CAP`]).
    Exact,
    /// Kernighan-Lin-style swap refinement from a contiguous split.
    Heuristic,
}

/// Finds a balanced bipartition minimizing the crossing CZ count.
///
/// Exact mode returns a true minimum with deterministic tie-breaking
/// (smallest m, then lexicographically smallest side A). Heuristic mode
/// starts from the contiguous split `A = {1..⌈n/2⌉}` and greedily swaps
/// pairs across the cut while that reduces the crossing count; the result
/// is never worse than the seed but may exceed the true minimum.
pub fn find_min_cut(c: &Circuit, mode: CutMode) -> Result<Partition> {
    let n = c.n_qubits();
    if n < 2 {
        return Err(Error::validation("cut requires at least two qubits"));
    }
    let cz_pairs: Vec<(usize, usize)> = c
        .gates()
        .iter()
        .filter_map(|g| match g {
            Gate::Cz { c, t } => Some((*c, *t)),
            _ => None,
        })
        .collect();
    match mode {
        CutMode::Exact => {
            if n > EXACT_CUT_CAP {
                return Err(Error::RegisterTooLarge {
                    qubits: n,
                    cap: EXACT_CUT_CAP,
                });
            }
            let mut best: Option<(usize, Vec<usize>)> = None;
            let m_lo = n.div_ceil(2);
            for m in m_lo..n {
                for side in combinations_lex(n, m) {
                    let mut mask = 0u64;
                    for &q in &side {
                        mask |= 1 << (q - 1);
                    }
                    let cuts = count_crossings(&cz_pairs, mask);
                    // Strict improvement keeps the earliest (smallest m,
                    // then lexicographically smallest side) on ties.
                    if best.as_ref().map_or(true, |(b, _)| cuts < *b) {
                        let done = cuts == 0;
                        best = Some((cuts, side));
                        if done {
                            break;
                        }
                    }
                }
                if matches!(best, Some((0, _))) {
                    break;
                }
            }
            let (_, side) = best.expect("at least one balanced bipartition exists");
            Partition::for_side_a(c, &side)
        }
        CutMode::Heuristic => {
            let m = n.div_ceil(2);
            let mut in_a: Vec<bool> = (1..=n).map(|q| q <= m).collect();
            let mask_of = |in_a: &[bool]| {
                let mut mask = 0u64;
                for (i, &x) in in_a.iter().enumerate() {
                    if x {
                        mask |= 1 << i;
                    }
                }
                mask
            };
            let mut current = count_crossings(&cz_pairs, mask_of(&in_a));
            loop {
                let mut best_swap: Option<(usize, usize, usize)> = None;
                for a in 1..=n {
                    if !in_a[a - 1] {
                        continue;
                    }
                    for b in 1..=n {
                        if in_a[b - 1] {
                            continue;
                        }
                        let mut trial = in_a.clone();
                        trial[a - 1] = false;
                        trial[b - 1] = true;
                        let cuts = count_crossings(&cz_pairs, mask_of(&trial));
                        if cuts < current
                            && best_swap.map_or(true, |(bc, _, _)| cuts < bc)
                        {
                            best_swap = Some((cuts, a, b));
                        }
                    }
                }
                match best_swap {
                    Some((cuts, a, b)) => {
                        in_a[a - 1] = false;
                        in_a[b - 1] = true;
                        current = cuts;
                    }
                    None => break,
                }
            }
            let side: Vec<usize> = (1..=n).filter(|&q| in_a[q - 1]).collect();
            Partition::for_side_a(c, &side)
        }
    }
}

/// Size-m subsets of {1..n} in lexicographic order.
fn combinations_lex(n: usize, m: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut cur: Option<Vec<usize>> = Some((1..=m).collect());
    std::iter::from_fn(move || {
        let out = cur.clone()?;
        // Advance to the next combination.
        let mut next = out.clone();
        let mut i = m;
        loop {
            if i == 0 {
                cur = None;
                break;
            }
            if next[i - 1] < n - (m - i) {
                next[i - 1] += 1;
                for j in i..m {
                    next[j] = next[j - 1] + 1;
                }
                cur = Some(next);
                break;
            }
            i -= 1;
        }
        Some(out)
    })
}

/// Rewrites the circuit over relabeled qubits so side A occupies 1..m and
/// side B occupies m+1..n. Returns the circuit and the old→new index map
/// (`map[old-1] = new`); the new unitary equals the old one conjugated by
/// the corresponding tensor-factor permutation.
pub fn relabel(c: &Circuit, p: &Partition) -> Result<(Circuit, Vec<usize>)> {
    if p.n_qubits() != c.n_qubits() {
        return Err(Error::validation("partition does not match circuit"));
    }
    let n = c.n_qubits();
    let mut map = vec![0usize; n];
    for (i, &q) in p.side_a().iter().enumerate() {
        map[q - 1] = i + 1;
    }
    for (i, &q) in p.side_b().iter().enumerate() {
        map[q - 1] = p.m() + i + 1;
    }
    let gates = c
        .gates()
        .iter()
        .map(|g| match g {
            Gate::Single { q, u, cut_artifact } => Gate::Single {
                q: map[q - 1],
                u: u.clone(),
                cut_artifact: *cut_artifact,
            },
            Gate::Cz { c, t } => Gate::cz(map[c - 1], map[t - 1]),
        })
        .collect();
    let mut out = Circuit::new(n, gates)?;
    out.name = c.name.clone();
    Ok((out, map))
}

/// The layered normal form: `D+1` local block pairs separated by the `D`
/// crossing CZs, with side A on local qubits 1..m and side B re-indexed
/// to local qubits 1..n-m.
#[derive(Debug, Clone)]
pub struct LayeredDecomposition {
    n: usize,
    m: usize,
    blocks_v: Vec<Circuit>,
    blocks_w: Vec<Circuit>,
    /// `(c_k, t_k)` with `c_k` an A-local index in 1..m and `t_k` a
    /// B-local index in 1..n-m.
    crossings: Vec<(usize, usize)>,
}

impl LayeredDecomposition {
    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_b(&self) -> usize {
        self.n - self.m
    }

    /// The denseness of this decomposition.
    pub fn d(&self) -> usize {
        self.crossings.len()
    }

    pub fn blocks_v(&self) -> &[Circuit] {
        &self.blocks_v
    }

    pub fn blocks_w(&self) -> &[Circuit] {
        &self.blocks_w
    }

    pub fn crossings(&self) -> &[(usize, usize)] {
        &self.crossings
    }

    /// Gate count over all blocks plus crossings; equals the source
    /// circuit's gate count.
    pub fn gate_count(&self) -> usize {
        let local: usize = self
            .blocks_v
            .iter()
            .chain(&self.blocks_w)
            .map(Circuit::len)
            .sum();
        local + self.crossings.len()
    }

    /// Replays the decomposition as a flat circuit on the full register
    /// (block pair k, crossing k, ..., final block pair). The unitary
    /// equals the source circuit's.
    pub fn to_circuit(&self) -> Result<Circuit> {
        let mut out = Circuit::empty(self.n);
        let d = self.d();
        for k in 0..=d {
            for g in self.blocks_v[k].gates() {
                out.push(g.clone())?;
            }
            for g in self.blocks_w[k].embedded(self.m, self.n)?.gates() {
                out.push(g.clone())?;
            }
            if k < d {
                let (c, t) = self.crossings[k];
                out.push(Gate::cz(c, self.m + t))?;
            }
        }
        Ok(out)
    }
}

/// Scans a relabeled circuit (side A = 1..m) into its layered normal
/// form: local gates accumulate into the current block pair, and each
/// crossing CZ closes the pair and records `(c_k, t_k)`. Adjacent
/// crossing CZs produce empty blocks in between.
pub fn layerize(c: &Circuit, p: &Partition) -> Result<LayeredDecomposition> {
    let n = c.n_qubits();
    let m = p.m();
    if p.n_qubits() != n {
        return Err(Error::validation("partition does not match circuit"));
    }
    if p.side_a() != (1..=m).collect::<Vec<_>>() {
        return Err(Error::validation(
            "layerize expects a relabeled circuit with side A = {1..m}",
        ));
    }
    let mut blocks_v = Vec::new();
    let mut blocks_w = Vec::new();
    let mut crossings = Vec::new();
    let mut cur_v = Circuit::empty(m);
    let mut cur_w = Circuit::empty(n - m);
    for g in c.gates() {
        match g {
            Gate::Single { q, u, cut_artifact } => {
                if *q <= m {
                    cur_v.push(Gate::Single {
                        q: *q,
                        u: u.clone(),
                        cut_artifact: *cut_artifact,
                    })?;
                } else {
                    cur_w.push(Gate::Single {
                        q: q - m,
                        u: u.clone(),
                        cut_artifact: *cut_artifact,
                    })?;
                }
            }
            Gate::Cz { c: a, t: b } => {
                let ina = *a <= m;
                let inb = *b <= m;
                if ina && inb {
                    cur_v.push(Gate::cz(*a, *b))?;
                } else if !ina && !inb {
                    cur_w.push(Gate::cz(a - m, b - m))?;
                } else {
                    // Crossing: close the current block pair. CZ is
                    // symmetric, so orient the A endpoint first.
                    let (ca, tb) = if ina { (*a, *b - m) } else { (*b, *a - m) };
                    blocks_v.push(std::mem::replace(&mut cur_v, Circuit::empty(m)));
                    blocks_w.push(std::mem::replace(&mut cur_w, Circuit::empty(n - m)));
                    crossings.push((ca, tb));
                }
            }
        }
    }
    blocks_v.push(cur_v);
    blocks_w.push(cur_w);
    if crossings.len() != p.denseness() {
        return Err(Error::internal(format!(
            "layer scan found {} crossings, partition reports {}",
            crossings.len(),
            p.denseness()
        )));
    }
    Ok(LayeredDecomposition {
        n,
        m,
        blocks_v,
        blocks_w,
        crossings,
    })
}
