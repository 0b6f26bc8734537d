//! Half-operators V_i / W_j built from a layered decomposition, the
//! generalized stabilizers ŝ_k = U Z^k U†, and dense checks of the
//! reconstruction identities behind the space cut.
//!
//! The crossing CZ expands into four diagonal terms with weight 1/2:
//! `CZ = ½ Σ_{i,j} (−1)^{ij} σ(i)⊗σ(j)` with σ(0)=I, σ(1)=Z. Collecting
//! one choice bit per crossing yields the half-operators
//! `V_i = v^(D+1) Π_k σ_{c_k}(i_k) v^(k)` (side A, analogously W_j on
//! side B) and the 4^D-term sum `U = 2^{-D} Σ (−1)^{i·j} V_i ⊗ W_j`.
//!
//! Half-operators are represented as circuits, never as matrices, so the
//! estimator can apply them gate-by-gate under noise; dense matrices
//! appear only in oracle and validation paths.

use crate::bits::Bits;
use crate::circuit::{gates, Circuit, Gate};
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::partition::LayeredDecomposition;

/// Dense checks and stabilizer matrices are capped at this register size.
pub const DENSE_CHECK_CAP: usize = 10;

/// The four diagonal expansion terms of CZ: `(i, j, sign)`, each carrying
/// weight 1/2.
pub fn cz_term_expansion() -> [(u8, u8, i8); 4] {
    [(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, -1)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// One half-unitary: the local blocks of one side with σ(bit) insertions
/// at the crossing endpoints.
#[derive(Debug, Clone)]
pub struct HalfOperator {
    pub side: Side,
    pub bits: Bits,
    pub circuit: Circuit,
}

/// Builds V_i (side A) or W_j (side B): block 1, then for each crossing k
/// a Z at the local crossing endpoint iff bit k is set, then block k+1.
/// Inserted Z gates are tagged as cut artifacts.
pub fn build_half_operator(l: &LayeredDecomposition, side: Side, bits: &Bits) -> Result<HalfOperator> {
    if bits.len() != l.d() {
        return Err(Error::validation(format!(
            "half-operator bit length {} does not match denseness {}",
            bits.len(),
            l.d()
        )));
    }
    let (blocks, width) = match side {
        Side::A => (l.blocks_v(), l.m()),
        Side::B => (l.blocks_w(), l.n_b()),
    };
    let mut circuit = Circuit::empty(width);
    for (k, block) in blocks.iter().enumerate() {
        if k > 0 && bits.get(k) {
            let q = match side {
                Side::A => l.crossings()[k - 1].0,
                Side::B => l.crossings()[k - 1].1,
            };
            circuit.push(Gate::Single {
                q,
                u: gates::z(),
                cut_artifact: true,
            })?;
        }
        for g in block.gates() {
            circuit.push(g.clone())?;
        }
    }
    Ok(HalfOperator {
        side,
        bits: *bits,
        circuit,
    })
}

/// Dense unitary of one half-operator.
pub fn half_unitary(l: &LayeredDecomposition, side: Side, bits: &Bits) -> Result<Vec<C64>> {
    build_half_operator(l, side, bits)?.circuit.unitary()
}

/// Max-abs deviation of the 4^D-term tensor sum from the source unitary:
/// `‖U − 2^{-D} Σ_{i,j} (−1)^{i·j} V_i ⊗ W_j‖_max`, evaluated densely.
pub fn reconstruct_check(l: &LayeredDecomposition) -> Result<f64> {
    let n = l.n_qubits();
    if n > DENSE_CHECK_CAP {
        return Err(Error::RegisterTooLarge {
            qubits: n,
            cap: DENSE_CHECK_CAP,
        });
    }
    let d = l.d();
    let dim = 1usize << n;
    let (da, db) = (1usize << l.m(), 1usize << l.n_b());

    let v: Vec<Vec<C64>> = Bits::all(d)
        .map(|i| half_unitary(l, Side::A, &i))
        .collect::<Result<_>>()?;
    let w: Vec<Vec<C64>> = Bits::all(d)
        .map(|j| half_unitary(l, Side::B, &j))
        .collect::<Result<_>>()?;

    let weight = 1.0 / (1u64 << d) as f64;
    let mut sum = linalg::zeros(dim);
    for (iv, i) in Bits::all(d).enumerate() {
        for (jv, j) in Bits::all(d).enumerate() {
            let sign = if i.parity_and(&j) { -weight } else { weight };
            let term = linalg::kron(&w[jv], db, &v[iv], da);
            for (acc, t) in sum.iter_mut().zip(term) {
                *acc += C64::new(sign, 0.0) * t;
            }
        }
    }
    let u = l.to_circuit()?.unitary()?;
    Ok(linalg::max_abs_diff(&sum, &u))
}

/// Diagonal of Z^k on n qubits: entry x is (−1)^{⊕ x_i k_i}.
fn z_string_signs(k: &Bits, n: usize) -> Vec<f64> {
    let dim = 1usize << n;
    (0..dim)
        .map(|x| {
            if (x as u64 & k.value()).count_ones() % 2 == 1 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Dense generalized stabilizer `ŝ_k = U Z^k U†` of the circuit's output
/// state; Hermitian with ŝ_k² = I.
pub fn stabilizer_matrix(target: &Circuit, k: &Bits) -> Result<Vec<C64>> {
    let n = target.n_qubits();
    if n > DENSE_CHECK_CAP {
        return Err(Error::RegisterTooLarge {
            qubits: n,
            cap: DENSE_CHECK_CAP,
        });
    }
    if k.len() != n {
        return Err(Error::validation("selector length must equal qubit count"));
    }
    let dim = 1usize << n;
    let u = target.unitary()?;
    let signs = z_string_signs(k, n);
    // U·Z^k scales the columns of U; then multiply by U†.
    let mut uz = u.clone();
    for r in 0..dim {
        for c in 0..dim {
            uz[r * dim + c] *= C64::new(signs[c], 0.0);
        }
    }
    Ok(linalg::matmul(&uz, &linalg::dagger(&u, dim), dim))
}

/// Max-abs deviation of `|ψ⟩⟨ψ|` from the uniform stabilizer average
/// `2^{-n} Σ_k ŝ_k`, with every ŝ_k built independently.
pub fn stabilizer_expansion_check(target: &Circuit) -> Result<f64> {
    let n = target.n_qubits();
    if n > 8 {
        return Err(Error::RegisterTooLarge { qubits: n, cap: 8 });
    }
    let dim = 1usize << n;
    let mut sum = linalg::zeros(dim);
    for k in Bits::all(n) {
        let s = stabilizer_matrix(target, &k)?;
        for (acc, t) in sum.iter_mut().zip(s) {
            *acc += t;
        }
    }
    let weight = C64::new(1.0 / dim as f64, 0.0);
    for e in sum.iter_mut() {
        *e *= weight;
    }
    let mut psi = crate::sim::Statevector::zero(n);
    psi.apply_circuit_ideal(target);
    let mut proj = linalg::zeros(dim);
    for r in 0..dim {
        for c in 0..dim {
            proj[r * dim + c] = psi.amplitudes()[r] * psi.amplitudes()[c].conj();
        }
    }
    Ok(linalg::max_abs_diff(&sum, &proj))
}

// --- Pauli form of Clifford stabilizers ---------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// A signed Pauli product `sign · P₁⊗P₂⊗…⊗P_n` (sign ±1; Hermitian).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PauliString {
    pub ops: Vec<Pauli>,
    pub sign: i8,
}

impl PauliString {
    pub fn is_identity(&self) -> bool {
        self.ops.iter().all(|p| *p == Pauli::I)
    }
}

impl std::fmt::Display for PauliString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", if self.sign < 0 { "-" } else { "+" })?;
        for p in &self.ops {
            write!(f, "{p:?}")?;
        }
        Ok(())
    }
}

/// Decodes `ŝ_k = U Z^k U†` as a signed Pauli product, failing when the
/// target is not Clifford. The sign is asserted real: a Hermitian ŝ_k
/// cannot carry ±i.
pub fn stabilizer_pauli_string(target: &Circuit, k: &Bits) -> Result<PauliString> {
    let n = target.n_qubits();
    let dim = 1usize << n;
    let m = stabilizer_matrix(target, k)?;

    // Column 0 of a Pauli product has a single nonzero entry: its row
    // flags the X/Y positions, its value is sign·i^{#Y}.
    let col0: Vec<C64> = (0..dim).map(|r| m[r * dim]).collect();
    let mut row0 = None;
    for (r, v) in col0.iter().enumerate() {
        if v.norm() > 1e-6 {
            if row0.is_some() {
                return Err(Error::validation(
                    "target is not Clifford: stabilizer is not a Pauli product",
                ));
            }
            row0 = Some(r);
        }
    }
    let row0 = row0.ok_or_else(|| Error::validation("stabilizer has an empty column"))?;
    let v0 = col0[row0];

    let mut ops = Vec::with_capacity(n);
    for q in 0..n {
        let flips = row0 >> q & 1 == 1;
        // Column e_q: the qubit-q factor acts on |1⟩; the value ratio
        // against v0 is +1 for I/X and −1 for Z/Y.
        let col_idx = 1usize << q;
        let row_idx = row0 ^ col_idx;
        let v = m[row_idx * dim + col_idx];
        if v.norm() < 1e-6 {
            return Err(Error::validation(
                "target is not Clifford: stabilizer is not a Pauli product",
            ));
        }
        let ratio = v / v0;
        let negative = (ratio.re + 1.0).abs() < 1e-6;
        if !negative && (ratio.re - 1.0).abs() > 1e-6 || ratio.im.abs() > 1e-6 {
            return Err(Error::validation(
                "target is not Clifford: stabilizer is not a Pauli product",
            ));
        }
        ops.push(match (flips, negative) {
            (false, false) => Pauli::I,
            (false, true) => Pauli::Z,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
        });
    }
    let y_count = ops.iter().filter(|p| **p == Pauli::Y).count();
    let sign_c = v0 / linalg::I.powu(y_count as u32);
    if sign_c.im.abs() > 1e-8 {
        return Err(Error::internal(
            "stabilizer decoded with imaginary sign; Hermitian ŝ_k cannot carry ±i",
        ));
    }
    let sign = if sign_c.re > 0.0 { 1i8 } else { -1i8 };

    // Verify the decode densely: U·Z^k must equal P·U exactly.
    let u = target.unitary()?;
    let signs = z_string_signs(k, n);
    let mut max_dev = 0.0f64;
    for r in 0..dim {
        // Row r of P·U is phase(r)·U[partner(r), ·].
        let mut partner = r;
        let mut phase = C64::new(sign as f64, 0.0);
        for (q, p) in ops.iter().enumerate() {
            let bit = r >> q & 1 == 1;
            match p {
                Pauli::I => {}
                Pauli::X => partner ^= 1 << q,
                Pauli::Z => {
                    if bit {
                        phase = -phase;
                    }
                }
                Pauli::Y => {
                    // Row picture: (Y)[r][partner] with partner = r⊕1:
                    // ⟨1|Y|0⟩ = i, ⟨0|Y|1⟩ = −i.
                    partner ^= 1 << q;
                    phase *= if bit { linalg::I } else { -linalg::I };
                }
            }
        }
        for c in 0..dim {
            let lhs = u[r * dim + c] * C64::new(signs[c], 0.0);
            let rhs = phase * u[partner * dim + c];
            max_dev = max_dev.max((lhs - rhs).norm());
        }
    }
    if max_dev > 1e-9 {
        return Err(Error::validation(format!(
            "target is not Clifford: decoded Pauli mismatch {max_dev:.3e}"
        )));
    }
    Ok(PauliString { ops, sign })
}

// --- symmetry-reduction certificate --------------------------------------

/// Certifies the quadruple-collapsing symmetry: every inserted Z commutes
/// through the blocks after its crossing (so `V_i = Z^i V_0`), and
/// conjugating `V_0 Z_a V_0†` by the Z at a crossing endpoint flips the
/// sign exactly when `a` is that endpoint (likewise on side B). When this
/// holds, each selector k needs only the single quadruple
/// `(i, j, i′, j′) = (κ_B, κ_A, 0, 0)` built from k's bits at the
/// crossing endpoints.
pub fn reduction_applicable(l: &LayeredDecomposition) -> Result<bool> {
    let d = l.d();
    if d == 0 {
        return Ok(true);
    }
    if l.m() > 8 || l.n_b() > 8 {
        // Certification is dense; decline rather than guess.
        return Ok(false);
    }
    for (side, width) in [(Side::A, l.m()), (Side::B, l.n_b())] {
        let dim = 1usize << width;
        let base = half_unitary(l, side, &Bits::zero(d))?;
        let based = linalg::dagger(&base, dim);
        // Endpoint of each crossing on this side.
        let endpoint = |r: usize| match side {
            Side::A => l.crossings()[r - 1].0,
            Side::B => l.crossings()[r - 1].1,
        };
        for r in 1..=d {
            let vr = half_unitary(l, side, &Bits::unit(r, d))?;
            let cbit = endpoint(r) - 1;
            // (1) single-insertion pull-through: V_{e_r} = Z_{c_r}·V_0.
            let mut zv = base.clone();
            for row in 0..dim {
                if row >> cbit & 1 == 1 {
                    for x in &mut zv[row * dim..(row + 1) * dim] {
                        *x = -*x;
                    }
                }
            }
            if linalg::max_abs_diff(&vr, &zv) > 1e-10 {
                return Ok(false);
            }
            // (2) conjugation signs of M_a = V_0 Z_a V_0†.
            for a in 1..=width {
                let mut zcols = base.clone();
                for row in 0..dim {
                    for c in 0..dim {
                        if c >> (a - 1) & 1 == 1 {
                            zcols[row * dim + c] = -zcols[row * dim + c];
                        }
                    }
                }
                let ma = linalg::matmul(&zcols, &based, dim);
                let want_neg = a == endpoint(r);
                for row in 0..dim {
                    for c in 0..dim {
                        let e = ma[row * dim + c];
                        if e.norm() < 1e-10 {
                            continue;
                        }
                        let conj_sign = (row >> cbit & 1) ^ (c >> cbit & 1) == 1;
                        if conj_sign != want_neg {
                            return Ok(false);
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::circuit::tests::{random_circuit, random_unitary};
    use crate::circuit::linear_graph_state_circuit;
    use crate::linalg::{eye, kron, mat2_to_dense, matmul, max_abs_diff, pauli_x, pauli_y, pauli_z};
    use crate::partition::{find_min_cut, layerize, relabel, CutMode, Partition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn layered(c: &Circuit) -> LayeredDecomposition {
        let p = find_min_cut(c, CutMode::Exact).unwrap();
        let (r, _) = relabel(c, &p).unwrap();
        let rp = Partition::for_side_a(&r, &(1..=p.m()).collect::<Vec<_>>()).unwrap();
        layerize(&r, &rp).unwrap()
    }

    /// Random circuit with a designed cut: local gates on {1..m} and
    /// {m+1..n} plus exactly `d` crossing CZs.
    pub(crate) fn random_layered(
        n: usize,
        m: usize,
        d: usize,
        gates_per_block: usize,
        rng: &mut ChaCha8Rng,
    ) -> LayeredDecomposition {
        let mut c = Circuit::empty(n);
        let local = |c: &mut Circuit, rng: &mut ChaCha8Rng| {
            for _ in 0..gates_per_block {
                let q = rng.gen_range(1..=n);
                c.push(Gate::single(q, random_unitary(rng))).unwrap();
                if rng.gen_bool(0.3) {
                    // A local CZ inside one side.
                    let (lo, hi) = if rng.gen_bool(0.5) && m >= 2 {
                        (1, m)
                    } else if n - m >= 2 {
                        (m + 1, n)
                    } else if m >= 2 {
                        (1, m)
                    } else {
                        continue;
                    };
                    let a = rng.gen_range(lo..=hi);
                    let mut b = rng.gen_range(lo..=hi);
                    while b == a {
                        b = rng.gen_range(lo..=hi);
                    }
                    c.push(Gate::cz(a, b)).unwrap();
                }
            }
        };
        local(&mut c, rng);
        for _ in 0..d {
            let a = rng.gen_range(1..=m);
            let b = rng.gen_range(m + 1..=n);
            c.push(Gate::cz(a, b)).unwrap();
            local(&mut c, rng);
        }
        let p = Partition::for_side_a(&c, &(1..=m).collect::<Vec<_>>()).unwrap();
        layerize(&c, &p).unwrap()
    }

    #[test]
    fn cz_expansion_reconstructs_cz() {
        let z = mat2_to_dense(&pauli_z());
        let id = eye(2);
        let mut sum = vec![C64::new(0.0, 0.0); 16];
        for (i, j, sign) in cz_term_expansion() {
            let a = if i == 1 { &z } else { &id };
            let b = if j == 1 { &z } else { &id };
            // Qubit 1 (σ(i)) on the low bit.
            let term = kron(b, 2, a, 2);
            for (acc, t) in sum.iter_mut().zip(term) {
                *acc += C64::new(0.5 * sign as f64, 0.0) * t;
            }
        }
        let cz = Circuit::new(2, vec![Gate::cz(1, 2)]).unwrap().unitary().unwrap();
        assert_eq!(sum, cz); // exact diagonal arithmetic, zero float error
    }

    #[test]
    fn half_operator_shapes() {
        // D=0: V is the single block.
        let mut c = Circuit::empty(2);
        c.push(Gate::single(1, gates::h())).unwrap();
        let p = Partition::for_side_a(&c, &[1]).unwrap();
        let l = layerize(&c, &p).unwrap();
        let v = build_half_operator(&l, Side::A, &Bits::zero(0)).unwrap();
        assert_eq!(v.circuit.len(), 1);

        // Two-qubit graph state, i=1: V₁ = Z·H on one qubit.
        let l = layered(&linear_graph_state_circuit(2));
        let v1 = build_half_operator(&l, Side::A, &Bits::from_value(1, 1)).unwrap();
        let expected = matmul(
            &mat2_to_dense(&pauli_z()),
            &mat2_to_dense(gates::h().entries()),
            2,
        );
        assert!(max_abs_diff(&v1.circuit.unitary().unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn reconstruction_is_exact_for_graph_state() {
        let l = layered(&linear_graph_state_circuit(2));
        assert!(reconstruct_check(&l).unwrap() < 1e-12);
    }

    #[test]
    fn reconstruction_on_random_layered_circuits() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (n, m, d) in [(4, 2, 2), (5, 3, 3), (6, 3, 3)] {
            let l = random_layered(n, m, d, 2, &mut rng);
            let dev = reconstruct_check(&l).unwrap();
            assert!(dev < 1e-9, "n={n} d={d}: deviation {dev}");
        }
    }

    #[test]
    fn stabilizers_of_two_qubit_graph_state() {
        let c = linear_graph_state_circuit(2);
        let zx = kron(&mat2_to_dense(&pauli_x()), 2, &mat2_to_dense(&pauli_z()), 2);
        let xz = kron(&mat2_to_dense(&pauli_z()), 2, &mat2_to_dense(&pauli_x()), 2);
        let yy = kron(&mat2_to_dense(&pauli_y()), 2, &mat2_to_dense(&pauli_y()), 2);
        // k = k₁k₂: "01" selects Z₂ conjugated, giving Z on qubit 1 and X
        // on qubit 2 (low bit).
        let s01 = stabilizer_matrix(&c, &"01".parse().unwrap()).unwrap();
        assert!(max_abs_diff(&s01, &zx) < 1e-12);
        let s10 = stabilizer_matrix(&c, &"10".parse().unwrap()).unwrap();
        assert!(max_abs_diff(&s10, &xz) < 1e-12);
        let s11 = stabilizer_matrix(&c, &"11".parse().unwrap()).unwrap();
        assert!(max_abs_diff(&s11, &yy) < 1e-12);
        // k = 0 gives the identity.
        let s00 = stabilizer_matrix(&c, &"00".parse().unwrap()).unwrap();
        assert!(max_abs_diff(&s00, &eye(4)) < 1e-12);
    }

    #[test]
    fn stabilizers_square_to_identity_and_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let c = random_circuit(3, 9, &mut rng);
        let dim = 8;
        let mats: Vec<Vec<C64>> = (1..=3)
            .map(|i| stabilizer_matrix(&c, &Bits::unit(i, 3)).unwrap())
            .collect();
        for m in &mats {
            assert!(max_abs_diff(&matmul(m, m, dim), &eye(dim)) < 1e-10);
            // Hermitian.
            assert!(max_abs_diff(m, &linalg::dagger(m, dim)) < 1e-10);
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let ab = matmul(&mats[i], &mats[j], dim);
                let ba = matmul(&mats[j], &mats[i], dim);
                assert!(max_abs_diff(&ab, &ba) < 1e-10);
            }
        }
    }

    #[test]
    fn stabilizers_fix_the_target_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let c = random_circuit(3, 9, &mut rng);
        let mut psi = crate::sim::Statevector::zero(3);
        psi.apply_circuit_ideal(&c);
        for k in Bits::all(3) {
            let s = stabilizer_matrix(&c, &k).unwrap();
            let spsi = linalg::matvec(&s, psi.amplitudes(), 8);
            let dev: f64 = spsi
                .iter()
                .zip(psi.amplitudes())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(dev < 1e-10, "k={k}: ‖(ŝ−I)ψ‖∞ = {dev}");
        }
    }

    #[test]
    fn expansion_check_small_cases() {
        // n=1, U=H: |+⟩⟨+| = (I+X)/2.
        let mut c = Circuit::empty(1);
        c.push(Gate::single(1, gates::h())).unwrap();
        assert!(stabilizer_expansion_check(&c).unwrap() < 1e-12);
        // Graph state via its four stabilizers.
        assert!(stabilizer_expansion_check(&linear_graph_state_circuit(2)).unwrap() < 1e-12);
        // Random 4-qubit circuit.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let c = random_circuit(4, 12, &mut rng);
        assert!(stabilizer_expansion_check(&c).unwrap() < 1e-9);
    }

    #[test]
    fn pauli_decode_of_graph_state_stabilizers() {
        let c = linear_graph_state_circuit(2);
        let p01 = stabilizer_pauli_string(&c, &"01".parse().unwrap()).unwrap();
        assert_eq!(p01.ops, vec![Pauli::Z, Pauli::X]);
        assert_eq!(p01.sign, 1);
        let p11 = stabilizer_pauli_string(&c, &"11".parse().unwrap()).unwrap();
        assert_eq!(p11.ops, vec![Pauli::Y, Pauli::Y]);
        assert_eq!(p11.sign, 1);
    }

    #[test]
    fn pauli_decode_rejects_non_clifford() {
        let mut c = linear_graph_state_circuit(2);
        c.push(Gate::single(1, gates::t())).unwrap();
        assert!(stabilizer_pauli_string(&c, &"01".parse().unwrap()).is_err());
    }

    #[test]
    fn reduction_certificate_for_graph_states() {
        for n in [2usize, 4, 6] {
            let l = layered(&linear_graph_state_circuit(n));
            assert!(reduction_applicable(&l).unwrap(), "n={n}");
        }
        // Generic random blocks break the certificate.
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let l = random_layered(4, 2, 2, 2, &mut rng);
        assert!(!reduction_applicable(&l).unwrap());
    }

    #[test]
    fn reduced_quadruple_identity_for_graph_state() {
        // Under the certificate, ŝ_k = (−1)^{κ_A·κ_B} Q†_{κ_B,κ_A} Z^k Q_{0,0}.
        let c = linear_graph_state_circuit(4);
        let l = layered(&c);
        let rl = l.to_circuit().unwrap();
        assert!(reduction_applicable(&l).unwrap());
        let d = l.d();
        let n = l.n_qubits();
        let (da, db) = (1usize << l.m(), 1usize << l.n_b());
        for k in Bits::all(n) {
            let mut ka = Bits::zero(d);
            let mut kb = Bits::zero(d);
            for r in 1..=d {
                let (c_r, t_r) = l.crossings()[r - 1];
                ka = ka.with_bit(r, k.get(c_r));
                kb = kb.with_bit(r, k.get(l.m() + t_r));
            }
            let vi = half_unitary(&l, Side::A, &kb).unwrap();
            let wj = half_unitary(&l, Side::B, &ka).unwrap();
            let v0 = half_unitary(&l, Side::A, &Bits::zero(d)).unwrap();
            let w0 = half_unitary(&l, Side::B, &Bits::zero(d)).unwrap();
            let dim = 1usize << n;
            let q_dag = kron(&wj, db, &vi, da);
            let q00 = linalg::dagger(&kron(&w0, db, &v0, da), dim);
            let signs = z_string_signs(&k, n);
            let mut zq = q00;
            for r in 0..dim {
                for cc in 0..dim {
                    zq[r * dim + cc] *= C64::new(signs[r], 0.0);
                }
            }
            let mut rhs = matmul(&q_dag, &zq, dim);
            if kb.parity_and(&ka) {
                for e in rhs.iter_mut() {
                    *e = -*e;
                }
            }
            let s = stabilizer_matrix(&rl, &k).unwrap();
            let dev = max_abs_diff(&s, &rhs);
            assert!(dev < 1e-9, "k={k}: deviation {dev}");
        }
    }

    #[test]
    fn stabilizer_matches_quadruple_average() {
        // ŝ_k equals the 16^D-term average 4^{-D} Σ (−1)^{i·j+i′·j′}
        // Q†_{i,j} Z^k Q_{i′,j′} densely.
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let l = random_layered(3, 2, 2, 1, &mut rng);
        let rl = l.to_circuit().unwrap();
        let n = l.n_qubits();
        let d = l.d();
        let dim = 1usize << n;
        let (da, db) = (1usize << l.m(), 1usize << l.n_b());
        let v: Vec<Vec<C64>> = Bits::all(d)
            .map(|i| half_unitary(&l, Side::A, &i).unwrap())
            .collect();
        let w: Vec<Vec<C64>> = Bits::all(d)
            .map(|j| half_unitary(&l, Side::B, &j).unwrap())
            .collect();
        let k: Bits = "101".parse().unwrap();
        let signs = z_string_signs(&k, n);
        let mut sum = linalg::zeros(dim);
        let weight = 1.0 / (1u64 << (2 * d)) as f64;
        for (ivi, i) in Bits::all(d).enumerate() {
            for (jvi, j) in Bits::all(d).enumerate() {
                let qdag = kron(&w[jvi], db, &v[ivi], da);
                for (ipv, ip) in Bits::all(d).enumerate() {
                    for (jpv, jp) in Bits::all(d).enumerate() {
                        let q = linalg::dagger(&kron(&w[jpv], db, &v[ipv], da), dim);
                        let mut zq = q;
                        for r in 0..dim {
                            for cc in 0..dim {
                                zq[r * dim + cc] *= C64::new(signs[r], 0.0);
                            }
                        }
                        let term = matmul(&qdag, &zq, dim);
                        let par = i.parity_and(&j) ^ ip.parity_and(&jp);
                        let wgt = C64::new(if par { -weight } else { weight }, 0.0);
                        for (acc, t) in sum.iter_mut().zip(term) {
                            *acc += wgt * t;
                        }
                    }
                }
            }
        }
        let s = stabilizer_matrix(&rl, &k).unwrap();
        assert!(max_abs_diff(&s, &sum) < 1e-9);
    }
}
