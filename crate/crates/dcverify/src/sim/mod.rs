//! Dense statevector and density-matrix simulation with Kraus-channel
//! noise, controlled sub-circuit application, Pauli-basis measurement and
//! preparation, and register permutation.
//!
//! Two engines back the same operations: [`Statevector`] (pure states,
//! noise realized by stochastic Kraus unraveling) and [`DensityMatrix`]
//! (exact channel expectations). Noise-free circuits give identical Born
//! distributions on both. A state is single-owner mutable; independent
//! shots build independent states.

pub mod noise;

pub use noise::NoiseModel;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{gates, Circuit, Gate, Unitary1Q};
use crate::error::{Error, Result};
use crate::linalg::{C64, ONE, ZERO};

type Mat2 = [[C64; 2]; 2];

fn conj2(m: &Mat2) -> Mat2 {
    [
        [m[0][0].conj(), m[0][1].conj()],
        [m[1][0].conj(), m[1][1].conj()],
    ]
}

// --- raw kernels on flattened amplitude arrays -------------------------

pub(crate) fn apply_1q_raw(amps: &mut [C64], bit: usize, m: &Mat2) {
    let mask = 1usize << bit;
    for i0 in 0..amps.len() {
        if i0 & mask == 0 {
            let i1 = i0 | mask;
            let a0 = amps[i0];
            let a1 = amps[i1];
            amps[i0] = m[0][0] * a0 + m[0][1] * a1;
            amps[i1] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

pub(crate) fn apply_controlled_1q_raw(amps: &mut [C64], ctrl_bit: usize, tgt_bit: usize, m: &Mat2) {
    let cmask = 1usize << ctrl_bit;
    let tmask = 1usize << tgt_bit;
    for i0 in 0..amps.len() {
        if i0 & cmask != 0 && i0 & tmask == 0 {
            let i1 = i0 | tmask;
            let a0 = amps[i0];
            let a1 = amps[i1];
            amps[i0] = m[0][0] * a0 + m[0][1] * a1;
            amps[i1] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

/// Sign flip on every index whose bits all match `mask` (CZ, CCZ, ...).
pub(crate) fn apply_phase_flip_raw(amps: &mut [C64], mask: usize) {
    for (i, a) in amps.iter_mut().enumerate() {
        if i & mask == mask {
            *a = -*a;
        }
    }
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::validation("permutation length mismatch"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p < 1 || p > n || seen[p - 1] {
            return Err(Error::validation("register permutation is not a bijection"));
        }
        seen[p - 1] = true;
    }
    Ok(())
}

/// The cyclic shift sending qubit `i` to `i+1 (mod r)` within a register
/// of size `r` (as a 1-based permutation map).
pub fn cyclic_shift(r: usize) -> Vec<usize> {
    (1..=r).map(|i| i % r + 1).collect()
}

// --- statevector --------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Statevector {
    n: usize,
    amps: Vec<C64>,
}

impl Statevector {
    pub fn zero(n: usize) -> Self {
        Self::basis(n, 0)
    }

    pub fn basis(n: usize, index: usize) -> Self {
        let dim = 1usize << n;
        assert!(index < dim, "basis index out of range");
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Self { n, amps }
    }

    pub fn from_amplitudes(n: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::validation("amplitude vector length mismatch"));
        }
        let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-10 {
            return Err(Error::validation(format!(
                "statevector norm² = {norm_sq}, expected 1"
            )));
        }
        Ok(Self { n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn bit(&self, q: usize) -> usize {
        debug_assert!(q >= 1 && q <= self.n, "qubit {q} out of range");
        q - 1
    }

    pub(crate) fn apply_1q_mat(&mut self, q: usize, m: &Mat2) {
        let bit = self.bit(q);
        apply_1q_raw(&mut self.amps, bit, m);
    }

    pub fn apply_1q(&mut self, q: usize, u: &Unitary1Q) {
        self.apply_1q_mat(q, u.entries());
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let mask = (1 << self.bit(a)) | (1 << self.bit(b));
        apply_phase_flip_raw(&mut self.amps, mask);
    }

    pub fn apply_gate(&mut self, gate: &Gate) {
        match gate {
            Gate::Single { q, u, .. } => self.apply_1q(*q, u),
            Gate::Cz { c, t } => self.apply_cz(*c, *t),
        }
    }

    pub fn apply_circuit_ideal(&mut self, c: &Circuit) {
        assert!(c.n_qubits() <= self.n, "circuit register exceeds state");
        for g in c.gates() {
            self.apply_gate(g);
        }
    }

    /// Applies the circuit gate by gate; after each gate its noise channel
    /// is sampled (stochastic Kraus unraveling).
    pub fn apply_circuit(
        &mut self,
        c: &Circuit,
        nm: &NoiseModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        assert!(c.n_qubits() <= self.n, "circuit register exceeds state");
        for g in c.gates() {
            self.apply_gate(g);
            nm.after_gate_sv(self, g, rng)?;
        }
        Ok(())
    }

    fn controlled_gate(&mut self, control: usize, gate: &Gate) {
        let cbit = self.bit(control);
        match gate {
            Gate::Single { q, u, .. } => {
                let tbit = self.bit(*q);
                apply_controlled_1q_raw(&mut self.amps, cbit, tbit, u.entries());
            }
            Gate::Cz { c, t } => {
                let mask = (1 << cbit) | (1 << self.bit(*c)) | (1 << self.bit(*t));
                apply_phase_flip_raw(&mut self.amps, mask);
            }
        }
    }

    /// Applies `Λ(gate)` for every gate of `c`, controlled on `control`
    /// (which must not collide with the circuit's data qubits). With
    /// `anti` the control is conjugated by X, so the circuit fires on the
    /// control's |0⟩ branch.
    pub fn apply_controlled(
        &mut self,
        control: usize,
        c: &Circuit,
        anti: bool,
        nm: &NoiseModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        self.check_control(control, c)?;
        if anti {
            self.apply_1q(control, &gates::x());
        }
        for g in c.gates() {
            self.controlled_gate(control, g);
            let mut support = vec![control];
            support.extend(g.qubits());
            nm.after_support_sv(self, &support, rng)?;
        }
        if anti {
            self.apply_1q(control, &gates::x());
        }
        Ok(())
    }

    pub fn apply_controlled_ideal(&mut self, control: usize, c: &Circuit, anti: bool) -> Result<()> {
        self.check_control(control, c)?;
        if anti {
            self.apply_1q(control, &gates::x());
        }
        for g in c.gates() {
            self.controlled_gate(control, g);
        }
        if anti {
            self.apply_1q(control, &gates::x());
        }
        Ok(())
    }

    fn check_control(&self, control: usize, c: &Circuit) -> Result<()> {
        if control < 1 || control > self.n {
            return Err(Error::validation("control qubit out of range"));
        }
        for g in c.gates() {
            if g.qubits().contains(&control) {
                return Err(Error::validation(
                    "control qubit collides with controlled circuit data",
                ));
            }
        }
        Ok(())
    }

    pub fn prob_one(&self, q: usize) -> f64 {
        let mask = 1usize << self.bit(q);
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    fn collapse(&mut self, q: usize, outcome: bool, prob: f64) -> Result<()> {
        if prob <= 1e-300 {
            return Err(Error::internal(
                "attempted collapse onto a zero-probability branch",
            ));
        }
        let mask = 1usize << self.bit(q);
        let scale = C64::new(1.0 / prob.sqrt(), 0.0);
        for (i, a) in self.amps.iter_mut().enumerate() {
            if (i & mask != 0) == outcome {
                *a *= scale;
            } else {
                *a = ZERO;
            }
        }
        Ok(())
    }

    /// Samples a joint Z-basis outcome for `qubits` (collapsing the state)
    /// and applies independent classical readout flips to the reported
    /// bits. Returns `(reported, true_outcomes)`.
    pub fn measure_z_raw(
        &mut self,
        qubits: &[usize],
        rng: &mut ChaCha8Rng,
        readout_flip: f64,
    ) -> Result<(Vec<bool>, Vec<bool>)> {
        let mut reported = Vec::with_capacity(qubits.len());
        let mut actual = Vec::with_capacity(qubits.len());
        for &q in qubits {
            let p1 = self.prob_one(q);
            let bit = rng.gen::<f64>() < p1;
            self.collapse(q, bit, if bit { p1 } else { 1.0 - p1 })?;
            actual.push(bit);
            reported.push(if readout_flip > 0.0 && rng.gen::<f64>() < readout_flip {
                !bit
            } else {
                bit
            });
        }
        Ok((reported, actual))
    }

    pub fn measure_z(
        &mut self,
        qubits: &[usize],
        rng: &mut ChaCha8Rng,
        readout_flip: f64,
    ) -> Result<Vec<bool>> {
        Ok(self.measure_z_raw(qubits, rng, readout_flip)?.0)
    }

    /// Tensor-extends the register: `other`'s qubits are appended above
    /// `self`'s (occupying indices n+1..n+n').
    pub fn append(&self, other: &Statevector) -> Statevector {
        let n = self.n + other.n;
        let mut amps = vec![ZERO; 1 << n];
        for (hi, b) in other.amps.iter().enumerate() {
            if *b == ZERO {
                continue;
            }
            for (lo, a) in self.amps.iter().enumerate() {
                amps[(hi << self.n) | lo] = a * b;
            }
        }
        Statevector { n, amps }
    }

    /// Extracts the sub-register `keep` (in order: `keep[0]` becomes qubit
    /// 1) given that every other qubit has been measured and stands at the
    /// definite value listed in `fixed`.
    pub fn extract_qubits(&self, keep: &[usize], fixed: &[(usize, bool)]) -> Result<Statevector> {
        if keep.len() + fixed.len() != self.n {
            return Err(Error::validation("extract: keep/fixed must cover register"));
        }
        let mut base = 0usize;
        for &(q, v) in fixed {
            if v {
                base |= 1 << self.bit(q);
            }
        }
        let m = keep.len();
        let mut amps = vec![ZERO; 1 << m];
        for (new_idx, slot) in amps.iter_mut().enumerate() {
            let mut full = base;
            for (pos, &q) in keep.iter().enumerate() {
                if new_idx & (1 << pos) != 0 {
                    full |= 1 << self.bit(q);
                }
            }
            *slot = self.amps[full];
        }
        let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-8 {
            return Err(Error::internal(format!(
                "extracted sub-state norm² = {norm_sq}; register not collapsed as claimed"
            )));
        }
        Ok(Statevector { n: m, amps })
    }

    /// Re-indexes amplitudes by a qubit permutation: `perm[i-1]` is the new
    /// position of qubit `i`.
    pub fn permute(&self, perm: &[usize]) -> Result<Statevector> {
        check_perm(perm, self.n)?;
        let mut amps = vec![ZERO; self.amps.len()];
        for (old, a) in self.amps.iter().enumerate() {
            let mut new = 0usize;
            for i in 0..self.n {
                if old & (1 << i) != 0 {
                    new |= 1 << (perm[i] - 1);
                }
            }
            amps[new] = *a;
        }
        Ok(Statevector { n: self.n, amps })
    }
}

// --- density matrix -----------------------------------------------------

#[derive(Debug, Clone)]
pub struct DensityMatrix {
    n: usize,
    elems: Vec<C64>, // row-major 2^n × 2^n
}

impl DensityMatrix {
    pub fn zero_state(n: usize) -> Self {
        let dim = 1usize << n;
        let mut elems = vec![ZERO; dim * dim];
        elems[0] = ONE;
        Self { n, elems }
    }

    pub fn from_pure(sv: &Statevector) -> Self {
        let dim = 1usize << sv.n;
        let mut elems = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                elems[r * dim + c] = sv.amps[r] * sv.amps[c].conj();
            }
        }
        Self { n: sv.n, elems }
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let dim = 1usize << n;
        let mut elems = vec![ZERO; dim * dim];
        let w = C64::new(1.0 / dim as f64, 0.0);
        for r in 0..dim {
            elems[r * dim + r] = w;
        }
        Self { n, elems }
    }

    pub fn from_matrix(n: usize, elems: Vec<C64>) -> Result<Self> {
        let dim = 1usize << n;
        if elems.len() != dim * dim {
            return Err(Error::validation("density matrix dimension mismatch"));
        }
        let dm = Self { n, elems };
        let tr = dm.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::validation(format!("density matrix trace = {tr}")));
        }
        for r in 0..dim {
            for c in r..dim {
                let d = (dm.elems[r * dim + c] - dm.elems[c * dim + r].conj()).norm();
                if d > 1e-10 {
                    return Err(Error::validation("density matrix is not Hermitian"));
                }
            }
        }
        Ok(dm)
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn elements(&self) -> &[C64] {
        &self.elems
    }

    pub fn trace(&self) -> f64 {
        let dim = self.dim();
        (0..dim).map(|r| self.elems[r * dim + r].re).sum()
    }

    /// Tr[ρ²]; equals Σ|ρ_rc|² for Hermitian ρ.
    pub fn purity(&self) -> f64 {
        self.elems.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn diagonal_probs(&self) -> Vec<f64> {
        let dim = self.dim();
        (0..dim).map(|r| self.elems[r * dim + r].re).collect()
    }

    fn row_bit(&self, q: usize) -> usize {
        debug_assert!(q >= 1 && q <= self.n);
        self.n + q - 1
    }

    fn col_bit(&self, q: usize) -> usize {
        debug_assert!(q >= 1 && q <= self.n);
        q - 1
    }

    /// ρ ← M ρ M† for a one-qubit operator M (not necessarily unitary).
    pub(crate) fn conjugate_1q(&mut self, q: usize, m: &Mat2) {
        let (rb, cb) = (self.row_bit(q), self.col_bit(q));
        apply_1q_raw(&mut self.elems, rb, m);
        apply_1q_raw(&mut self.elems, cb, &conj2(m));
    }

    pub fn apply_1q(&mut self, q: usize, u: &Unitary1Q) {
        self.conjugate_1q(q, u.entries());
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let rmask = (1 << self.row_bit(a)) | (1 << self.row_bit(b));
        apply_phase_flip_raw(&mut self.elems, rmask);
        let cmask = (1 << self.col_bit(a)) | (1 << self.col_bit(b));
        apply_phase_flip_raw(&mut self.elems, cmask);
    }

    pub fn apply_gate(&mut self, gate: &Gate) {
        match gate {
            Gate::Single { q, u, .. } => self.apply_1q(*q, u),
            Gate::Cz { c, t } => self.apply_cz(*c, *t),
        }
    }

    /// Applies the circuit with exact channel (Kraus-sum) noise after each
    /// gate.
    pub fn apply_circuit(&mut self, c: &Circuit, nm: &NoiseModel) -> Result<()> {
        assert!(c.n_qubits() <= self.n, "circuit register exceeds state");
        for g in c.gates() {
            self.apply_gate(g);
            nm.after_gate_dm(self, g)?;
        }
        Ok(())
    }

    fn controlled_gate(&mut self, control: usize, gate: &Gate) {
        match gate {
            Gate::Single { q, u, .. } => {
                let (rc, rt) = (self.row_bit(control), self.row_bit(*q));
                apply_controlled_1q_raw(&mut self.elems, rc, rt, u.entries());
                let (cc, ct) = (self.col_bit(control), self.col_bit(*q));
                apply_controlled_1q_raw(&mut self.elems, cc, ct, &conj2(u.entries()));
            }
            Gate::Cz { c, t } => {
                let rmask = (1 << self.row_bit(control))
                    | (1 << self.row_bit(*c))
                    | (1 << self.row_bit(*t));
                apply_phase_flip_raw(&mut self.elems, rmask);
                let cmask = (1 << self.col_bit(control))
                    | (1 << self.col_bit(*c))
                    | (1 << self.col_bit(*t));
                apply_phase_flip_raw(&mut self.elems, cmask);
            }
        }
    }

    pub fn apply_controlled(
        &mut self,
        control: usize,
        c: &Circuit,
        anti: bool,
        nm: &NoiseModel,
    ) -> Result<()> {
        for g in c.gates() {
            if g.qubits().contains(&control) {
                return Err(Error::validation(
                    "control qubit collides with controlled circuit data",
                ));
            }
        }
        if anti {
            self.apply_1q(control, &gates::x());
        }
        for g in c.gates() {
            self.controlled_gate(control, g);
            let mut support = vec![control];
            support.extend(g.qubits());
            nm.after_support_dm(self, &support)?;
        }
        if anti {
            self.apply_1q(control, &gates::x());
        }
        Ok(())
    }

    /// ρ ← Σ_i K_i ρ K_i† for a one-qubit Kraus set.
    pub fn apply_kraus_1q(&mut self, q: usize, kraus: &[Mat2]) {
        let original = self.elems.clone();
        for e in self.elems.iter_mut() {
            *e = ZERO;
        }
        for k in kraus {
            let mut branch = DensityMatrix {
                n: self.n,
                elems: original.clone(),
            };
            branch.conjugate_1q(q, k);
            for (acc, b) in self.elems.iter_mut().zip(&branch.elems) {
                *acc += b;
            }
        }
    }

    pub fn prob_one(&self, q: usize) -> f64 {
        let dim = self.dim();
        let mask = 1usize << self.col_bit(q);
        (0..dim)
            .filter(|r| r & mask != 0)
            .map(|r| self.elems[r * dim + r].re)
            .sum()
    }

    fn collapse(&mut self, q: usize, outcome: bool, prob: f64) -> Result<()> {
        if prob <= 1e-300 {
            return Err(Error::internal(
                "attempted collapse onto a zero-probability branch",
            ));
        }
        let dim = self.dim();
        let mask = 1usize << self.col_bit(q);
        let scale = C64::new(1.0 / prob, 0.0);
        for r in 0..dim {
            for c in 0..dim {
                let keep = ((r & mask != 0) == outcome) && ((c & mask != 0) == outcome);
                let e = &mut self.elems[r * dim + c];
                if keep {
                    *e *= scale;
                } else {
                    *e = ZERO;
                }
            }
        }
        Ok(())
    }

    pub fn measure_z_raw(
        &mut self,
        qubits: &[usize],
        rng: &mut ChaCha8Rng,
        readout_flip: f64,
    ) -> Result<(Vec<bool>, Vec<bool>)> {
        let mut reported = Vec::with_capacity(qubits.len());
        let mut actual = Vec::with_capacity(qubits.len());
        for &q in qubits {
            let p1 = self.prob_one(q);
            let bit = rng.gen::<f64>() < p1;
            self.collapse(q, bit, if bit { p1 } else { 1.0 - p1 })?;
            actual.push(bit);
            reported.push(if readout_flip > 0.0 && rng.gen::<f64>() < readout_flip {
                !bit
            } else {
                bit
            });
        }
        Ok((reported, actual))
    }

    pub fn measure_z(
        &mut self,
        qubits: &[usize],
        rng: &mut ChaCha8Rng,
        readout_flip: f64,
    ) -> Result<Vec<bool>> {
        Ok(self.measure_z_raw(qubits, rng, readout_flip)?.0)
    }

    /// Tensor-extends the register: `other`'s qubits are appended above.
    pub fn append(&self, other: &DensityMatrix) -> DensityMatrix {
        let n = self.n + other.n;
        let dl = self.dim();
        let dh = other.dim();
        let dim = dl * dh;
        let mut elems = vec![ZERO; dim * dim];
        for rh in 0..dh {
            for ch in 0..dh {
                let hval = other.elems[rh * dh + ch];
                if hval == ZERO {
                    continue;
                }
                for rl in 0..dl {
                    for cl in 0..dl {
                        let lval = self.elems[rl * dl + cl];
                        if lval == ZERO {
                            continue;
                        }
                        elems[((rh << self.n) | rl) * dim + ((ch << self.n) | cl)] = hval * lval;
                    }
                }
            }
        }
        DensityMatrix { n, elems }
    }

    pub fn permute(&self, perm: &[usize]) -> Result<DensityMatrix> {
        check_perm(perm, self.n)?;
        let dim = self.dim();
        let map_index = |old: usize| {
            let mut new = 0usize;
            for i in 0..self.n {
                if old & (1 << i) != 0 {
                    new |= 1 << (perm[i] - 1);
                }
            }
            new
        };
        let mut elems = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                elems[map_index(r) * dim + map_index(c)] = self.elems[r * dim + c];
            }
        }
        Ok(DensityMatrix { n: self.n, elems })
    }
}

// --- unified state -------------------------------------------------------

/// A quantum register in either representation.
#[derive(Debug, Clone)]
pub enum QuantumState {
    Pure(Statevector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn zero_pure(n: usize) -> Self {
        QuantumState::Pure(Statevector::zero(n))
    }

    pub fn zero_mixed(n: usize) -> Self {
        QuantumState::Mixed(DensityMatrix::zero_state(n))
    }

    pub fn n_qubits(&self) -> usize {
        match self {
            QuantumState::Pure(sv) => sv.n,
            QuantumState::Mixed(dm) => dm.n,
        }
    }

    /// Computational-basis outcome distribution.
    pub fn born_probs(&self) -> Vec<f64> {
        match self {
            QuantumState::Pure(sv) => sv.probs(),
            QuantumState::Mixed(dm) => dm.diagonal_probs(),
        }
    }

    /// Applies a circuit, with each gate followed by its noise channel.
    /// Noise on a statevector requires `rng` for stochastic unraveling;
    /// density matrices apply channels exactly and ignore `rng`.
    pub fn apply_circuit(
        &mut self,
        c: &Circuit,
        noise: Option<&NoiseModel>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<()> {
        match (self, noise) {
            (QuantumState::Pure(sv), Some(nm)) if nm.is_noisy() => {
                let rng = rng.ok_or_else(|| {
                    Error::simulation("noise on a statevector requires unraveling (pass an RNG)")
                })?;
                sv.apply_circuit(c, nm, rng)
            }
            (QuantumState::Pure(sv), _) => {
                sv.apply_circuit_ideal(c);
                Ok(())
            }
            (QuantumState::Mixed(dm), Some(nm)) => dm.apply_circuit(c, nm),
            (QuantumState::Mixed(dm), None) => dm.apply_circuit(c, &NoiseModel::ideal()),
        }
    }

    pub fn apply_controlled(
        &mut self,
        control: usize,
        c: &Circuit,
        anti: bool,
        noise: Option<&NoiseModel>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<()> {
        match (self, noise) {
            (QuantumState::Pure(sv), Some(nm)) if nm.is_noisy() => {
                let rng = rng.ok_or_else(|| {
                    Error::simulation("noise on a statevector requires unraveling (pass an RNG)")
                })?;
                sv.apply_controlled(control, c, anti, nm, rng)
            }
            (QuantumState::Pure(sv), _) => sv.apply_controlled_ideal(control, c, anti),
            (QuantumState::Mixed(dm), Some(nm)) => dm.apply_controlled(control, c, anti, nm),
            (QuantumState::Mixed(dm), None) => {
                dm.apply_controlled(control, c, anti, &NoiseModel::ideal())
            }
        }
    }

    pub fn measure_z(
        &mut self,
        qubits: &[usize],
        rng: &mut ChaCha8Rng,
        readout_flip: f64,
    ) -> Result<Vec<bool>> {
        match self {
            QuantumState::Pure(sv) => sv.measure_z(qubits, rng, readout_flip),
            QuantumState::Mixed(dm) => dm.measure_z(qubits, rng, readout_flip),
        }
    }

    pub fn permute(&self, perm: &[usize]) -> Result<QuantumState> {
        Ok(match self {
            QuantumState::Pure(sv) => QuantumState::Pure(sv.permute(perm)?),
            QuantumState::Mixed(dm) => QuantumState::Mixed(dm.permute(perm)?),
        })
    }
}

// --- Pauli-basis settings ------------------------------------------------

/// One of the eight Clifford rotations `C_l = S^{δ(l₁,1)δ(l₂,0)} ·
/// H^{δ(l₁+l₂,1)} · X^{l₃}` selecting a Pauli measurement basis and the
/// matching prepared state `C_l|0⟩`. Settings 110/111 coincide with
/// 000/001.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliBasisSetting {
    pub l1: bool,
    pub l2: bool,
    pub l3: bool,
}

impl PauliBasisSetting {
    pub fn from_index(idx: usize) -> Self {
        assert!(idx < 8);
        Self {
            l1: idx & 4 != 0,
            l2: idx & 2 != 0,
            l3: idx & 1 != 0,
        }
    }

    pub fn index(&self) -> usize {
        (self.l1 as usize) << 2 | (self.l2 as usize) << 1 | self.l3 as usize
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..8).map(Self::from_index)
    }

    /// Whether the cut-qubit outcome `o` carries a sign: the exponent
    /// `(1 + δ(l₁,0)δ(l₂,0))·o` is even exactly when l₁ = l₂ = 0.
    pub fn uses_o_sign(&self) -> bool {
        self.l1 || self.l2
    }

    /// The gates of `C_l` in application order (X first).
    pub fn clifford_gates(&self) -> Vec<Unitary1Q> {
        let mut gs = Vec::new();
        if self.l3 {
            gs.push(gates::x());
        }
        if (self.l1 as u8 + self.l2 as u8) == 1 {
            gs.push(gates::h());
        }
        if self.l1 && !self.l2 {
            gs.push(gates::s());
        }
        gs
    }

    /// The gates of `C_l†` in application order.
    pub fn clifford_dagger_gates(&self) -> Vec<Unitary1Q> {
        let mut gs: Vec<Unitary1Q> = self.clifford_gates().into_iter().rev().collect();
        for g in gs.iter_mut() {
            *g = g.dagger();
        }
        gs
    }

    /// Dense 2×2 matrix of `C_l`.
    pub fn matrix(&self) -> Vec<C64> {
        let mut sv0 = Statevector::basis(1, 0);
        let mut sv1 = Statevector::basis(1, 1);
        for g in self.clifford_gates() {
            sv0.apply_1q(1, &g);
            sv1.apply_1q(1, &g);
        }
        vec![sv0.amps[0], sv1.amps[0], sv0.amps[1], sv1.amps[1]]
    }
}

impl std::fmt::Display for PauliBasisSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}{}{}",
            self.l1 as u8, self.l2 as u8, self.l3 as u8
        )
    }
}

/// The single-qubit pure state `C_l|0⟩`.
pub fn prepare_pauli_state(l: &PauliBasisSetting) -> Statevector {
    let mut sv = Statevector::zero(1);
    for g in l.clifford_gates() {
        sv.apply_1q(1, &g);
    }
    sv
}

/// Measures `qubit` in the `C_l` basis: applies `C_l†` and measures Z.
/// Equivalent to projecting onto `C_l|o⟩`.
pub fn measure_pauli_basis(
    state: &mut QuantumState,
    qubit: usize,
    l: &PauliBasisSetting,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    let n = state.n_qubits();
    let mut rot = Circuit::empty(n);
    for g in l.clifford_dagger_gates() {
        rot.push(Gate::single(qubit, g))?;
    }
    state.apply_circuit(&rot, None, None)?;
    Ok(state.measure_z(&[qubit], rng, 0.0)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::linear_graph_state_circuit;
    use crate::linalg::max_abs_diff;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn x_flips_zero() {
        let mut sv = Statevector::zero(1);
        sv.apply_1q(1, &gates::x());
        assert_eq!(sv.amps[1], ONE);
    }

    #[test]
    fn graph_state_overlap_is_one() {
        let mut sv = Statevector::zero(2);
        sv.apply_circuit_ideal(&linear_graph_state_circuit(2));
        // ⟨ψ|ψ⟩ against an independently constructed target.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [h * h, h * h, h * h, -h * h];
        for (a, e) in sv.amps.iter().zip(expected) {
            assert!((a - C64::new(e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn full_depolarization_gives_maximally_mixed() {
        let mut dm = DensityMatrix::zero_state(1);
        let c = Circuit::new(1, vec![Gate::single(1, gates::x())]).unwrap();
        let nm = NoiseModel::depolarizing(1.0, 0.0);
        dm.apply_circuit(&c, &nm).unwrap();
        assert!(max_abs_diff(&dm.elems, DensityMatrix::maximally_mixed(1).elements()) < 1e-12);
    }

    #[test]
    fn measure_definite_one() {
        let mut sv = Statevector::basis(1, 1);
        let bits = sv.measure_z(&[1], &mut rng(0), 0.0).unwrap();
        assert_eq!(bits, vec![true]);
    }

    #[test]
    fn measure_plus_state_is_unbiased() {
        let mut count = 0u32;
        let shots = 100_000;
        let mut r = rng(42);
        for _ in 0..shots {
            let mut sv = Statevector::zero(1);
            sv.apply_1q(1, &gates::h());
            if sv.measure_z(&[1], &mut r, 0.0).unwrap()[0] {
                count += 1;
            }
        }
        let p = count as f64 / shots as f64;
        // Binomial 3σ ≈ 0.0047 around 0.5.
        assert!((p - 0.5).abs() < 0.01, "P(1) = {p}");
    }

    #[test]
    fn readout_flip_one_inverts() {
        let mut sv = Statevector::zero(1);
        let bits = sv.measure_z(&[1], &mut rng(1), 1.0).unwrap();
        assert_eq!(bits, vec![true]);
    }

    #[test]
    fn controlled_circuit_fires_on_one() {
        let x1 = Circuit::new(1, vec![Gate::single(1, gates::x())]).unwrap();
        // Control |0⟩: data unchanged.
        let mut sv = Statevector::zero(2);
        sv.apply_controlled_ideal(2, &x1, false).unwrap();
        assert_eq!(sv.amps[0], ONE);
        // Control |1⟩: X applied.
        let mut sv = Statevector::basis(2, 2);
        sv.apply_controlled_ideal(2, &x1, false).unwrap();
        assert_eq!(sv.amps[3], ONE);
        // Anti-control |0⟩ fires.
        let mut sv = Statevector::zero(2);
        sv.apply_controlled_ideal(2, &x1, true).unwrap();
        assert_eq!(sv.amps[1], ONE);
    }

    #[test]
    fn controlled_matches_dense_controlled_matrix() {
        use crate::circuit::tests::random_circuit;
        let mut r = rng(5);
        let c = random_circuit(2, 6, &mut r);
        let u = c.unitary().unwrap();
        // Λ(U) on (data=1..2, control=3) against dense block matrix.
        let dim = 8;
        let mut dense = crate::linalg::eye(dim);
        for rr in 0..4 {
            for cc in 0..4 {
                dense[(rr | 4) * dim + (cc | 4)] = u[rr * 4 + cc];
                if rr != cc {
                    dense[(rr | 4) * dim + cc] = ZERO;
                }
            }
        }
        for col in 0..dim {
            let mut sv = Statevector::basis(3, col);
            sv.apply_controlled_ideal(3, &c, false).unwrap();
            for row in 0..dim {
                let want = dense[row * dim + col];
                assert!((sv.amps[row] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn pauli_basis_states() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let cases: [(usize, [C64; 2]); 6] = [
            (0b000, [ONE, ZERO]),
            (0b001, [ZERO, ONE]),
            (0b010, [C64::new(h, 0.0), C64::new(h, 0.0)]),
            (0b011, [C64::new(h, 0.0), C64::new(-h, 0.0)]),
            (0b100, [C64::new(h, 0.0), C64::new(0.0, h)]),
            (0b101, [C64::new(h, 0.0), C64::new(0.0, -h)]),
        ];
        for (idx, want) in cases {
            let l = PauliBasisSetting::from_index(idx);
            let sv = prepare_pauli_state(&l);
            for (a, w) in sv.amps.iter().zip(want) {
                assert!((a - w).norm() < 1e-12, "setting {l}");
            }
        }
        // Settings 110 and 111 repeat 000 and 001.
        assert_eq!(
            PauliBasisSetting::from_index(0b110).matrix(),
            PauliBasisSetting::from_index(0b000).matrix()
        );
        assert_eq!(
            PauliBasisSetting::from_index(0b111).matrix(),
            PauliBasisSetting::from_index(0b001).matrix()
        );
    }

    #[test]
    fn pauli_basis_measurements_are_deterministic_on_eigenstates() {
        // C=I on |0⟩.
        let mut st = QuantumState::Pure(Statevector::zero(1));
        let o = measure_pauli_basis(&mut st, 1, &PauliBasisSetting::from_index(0), &mut rng(2))
            .unwrap();
        assert!(!o);
        // C=H on |+⟩.
        let mut sv = Statevector::zero(1);
        sv.apply_1q(1, &gates::h());
        let mut st = QuantumState::Pure(sv);
        let o = measure_pauli_basis(&mut st, 1, &PauliBasisSetting::from_index(0b010), &mut rng(3))
            .unwrap();
        assert!(!o);
        // C=SH on |+i⟩.
        let st0 = prepare_pauli_state(&PauliBasisSetting::from_index(0b100));
        let mut st = QuantumState::Pure(st0);
        let o = measure_pauli_basis(&mut st, 1, &PauliBasisSetting::from_index(0b100), &mut rng(4))
            .unwrap();
        assert!(!o);
    }

    #[test]
    fn permutation_swap_and_cycle() {
        // |01⟩ (qubit 1 set) swapped → |10⟩ (qubit 2 set).
        let sv = Statevector::basis(2, 0b01);
        let swapped = sv.permute(&[2, 1]).unwrap();
        assert_eq!(swapped.amps[0b10], ONE);
        // Identity permutation leaves a random state unchanged.
        let mut r = rng(6);
        let mut sv = Statevector::zero(3);
        sv.apply_circuit_ideal(&crate::circuit::tests::random_circuit(3, 8, &mut r));
        let same = sv.permute(&[1, 2, 3]).unwrap();
        assert!(max_abs_diff(&sv.amps, &same.amps) < 1e-15);
        // A cyclic shift applied r times is the identity.
        let shift = cyclic_shift(3);
        let mut cur = sv.clone();
        for _ in 0..3 {
            cur = cur.permute(&shift).unwrap();
        }
        assert!(max_abs_diff(&sv.amps, &cur.amps) < 1e-12);
    }

    #[test]
    fn statevector_and_density_matrix_agree_noise_free() {
        use crate::circuit::tests::random_circuit;
        let mut r = rng(7);
        let c = random_circuit(3, 10, &mut r);
        let mut sv = Statevector::zero(3);
        sv.apply_circuit_ideal(&c);
        let mut dm = DensityMatrix::zero_state(3);
        dm.apply_circuit(&c, &NoiseModel::ideal()).unwrap();
        let probs_sv = sv.probs();
        let probs_dm = dm.diagonal_probs();
        for (a, b) in probs_sv.iter().zip(&probs_dm) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn trace_preserved_under_noise() {
        use crate::circuit::tests::random_circuit;
        let mut r = rng(8);
        let c = random_circuit(3, 12, &mut r);
        let mut nm = NoiseModel::depolarizing(0.03, 0.05);
        nm.gamma = 0.02;
        let mut dm = DensityMatrix::zero_state(3);
        dm.apply_circuit(&c, &nm).unwrap();
        assert!((dm.trace() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn depolarizing_never_increases_purity() {
        use crate::circuit::tests::random_circuit;
        let mut r = rng(9);
        for _ in 0..10 {
            let c = random_circuit(2, 6, &mut r);
            let mut dm = DensityMatrix::zero_state(2);
            dm.apply_circuit(&c, &NoiseModel::ideal()).unwrap();
            let before = dm.purity();
            noise::depolarize_dm(&mut dm, &[1], 0.2);
            let after = dm.purity();
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn unraveling_matches_exact_channel_marginals() {
        // One noisy circuit, 10^5 trajectories vs exact diagonal.
        let c = Circuit::new(
            2,
            vec![
                Gate::single(1, gates::h()),
                Gate::cz(1, 2),
                Gate::single(2, gates::h()),
            ],
        )
        .unwrap();
        let mut nm = NoiseModel::depolarizing(0.05, 0.1);
        nm.gamma = 0.05;

        let mut dm = DensityMatrix::zero_state(2);
        dm.apply_circuit(&c, &nm).unwrap();
        let exact = dm.diagonal_probs();

        let shots = 100_000usize;
        let mut counts = [0u32; 4];
        let mut r = rng(10);
        for _ in 0..shots {
            let mut sv = Statevector::zero(2);
            sv.apply_circuit(&c, &nm, &mut r).unwrap();
            let bits = sv.measure_z(&[1, 2], &mut r, 0.0).unwrap();
            counts[(bits[0] as usize) | (bits[1] as usize) << 1] += 1;
        }
        for (i, &cnt) in counts.iter().enumerate() {
            let p = cnt as f64 / shots as f64;
            let sigma = (exact[i] * (1.0 - exact[i]) / shots as f64).sqrt();
            assert!(
                (p - exact[i]).abs() < 3.5 * sigma.max(1e-4),
                "bin {i}: sampled {p}, exact {}",
                exact[i]
            );
        }
    }

    #[test]
    fn noise_on_statevector_without_rng_is_an_error() {
        let mut st = QuantumState::zero_pure(1);
        let c = Circuit::new(1, vec![Gate::single(1, gates::h())]).unwrap();
        let nm = NoiseModel::depolarizing(0.1, 0.0);
        let err = st.apply_circuit(&c, Some(&nm), None).unwrap_err();
        assert!(err.to_string().contains("unraveling"));
    }
}
