//! Circuit intermediate representation over the gate set
//! {single-qubit unitaries, CZ}.
//!
//! Qubit indices are 1-based throughout. The ordering convention is that
//! qubit 1 is the least significant bit of a computational-basis index, so
//! a bit string `z = z₁z₂…z_n` maps qubit `i` to bit `i-1` of the index.
//! Gate matrices are stored explicitly even for named gates; parameterized
//! labels such as `Rz(0.5)` are resolved to matrices at parse time, so the
//! IR downstream is parameter-free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE, ZERO};
use crate::sim::Statevector;

/// Unitarity / validation tolerance for 2×2 gate matrices.
pub const UNITARITY_TOL: f64 = 1e-10;

/// Dense-matrix cap for [`Circuit::unitary`].
pub const DENSE_UNITARY_CAP: usize = 12;

/// A single-qubit unitary with an optional symbolic label.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary1Q {
    entries: [[C64; 2]; 2],
    label: Option<String>,
}

impl Unitary1Q {
    /// Builds a gate from an explicit matrix, rejecting matrices whose
    /// `U·U†` deviates from the identity by more than [`UNITARITY_TOL`].
    pub fn new(entries: [[C64; 2]; 2], label: Option<String>) -> Result<Self> {
        let dense = linalg::mat2_to_dense(&entries);
        let dev = linalg::unitarity_deviation(&dense, 2);
        if dev > UNITARITY_TOL {
            return Err(Error::validation(format!(
                "matrix for {} is not unitary (deviation {dev:.3e})",
                label.as_deref().unwrap_or("<unnamed gate>")
            )));
        }
        Ok(Self { entries, label })
    }

    pub fn entries(&self) -> &[[C64; 2]; 2] {
        &self.entries
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn dagger(&self) -> Self {
        let e = &self.entries;
        let entries = [
            [e[0][0].conj(), e[1][0].conj()],
            [e[0][1].conj(), e[1][1].conj()],
        ];
        let label = match self.label.as_deref() {
            Some("I") | Some("X") | Some("Y") | Some("Z") | Some("H") => self.label.clone(),
            Some("S") => Some("Sdg".to_string()),
            Some("Sdg") => Some("S".to_string()),
            Some("T") => Some("Tdg".to_string()),
            Some("Tdg") => Some("T".to_string()),
            _ => None,
        };
        Self { entries, label }
    }
}

/// Built-in gate library. Labels without explicit matrices in a circuit
/// document must resolve here.
pub mod gates {
    use super::*;

    fn build(entries: [[C64; 2]; 2], label: &str) -> Unitary1Q {
        Unitary1Q::new(entries, Some(label.to_string())).expect("library gates are unitary")
    }

    pub fn i() -> Unitary1Q {
        build([[ONE, ZERO], [ZERO, ONE]], "I")
    }

    pub fn x() -> Unitary1Q {
        build([[ZERO, ONE], [ONE, ZERO]], "X")
    }

    pub fn y() -> Unitary1Q {
        build([[ZERO, -linalg::I], [linalg::I, ZERO]], "Y")
    }

    pub fn z() -> Unitary1Q {
        build([[ONE, ZERO], [ZERO, -ONE]], "Z")
    }

    pub fn h() -> Unitary1Q {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        build([[s, s], [s, -s]], "H")
    }

    pub fn s() -> Unitary1Q {
        build([[ONE, ZERO], [ZERO, linalg::I]], "S")
    }

    pub fn sdg() -> Unitary1Q {
        build([[ONE, ZERO], [ZERO, -linalg::I]], "Sdg")
    }

    pub fn t() -> Unitary1Q {
        build(
            [[ONE, ZERO], [ZERO, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]],
            "T",
        )
    }

    pub fn tdg() -> Unitary1Q {
        build(
            [[ONE, ZERO], [ZERO, C64::from_polar(1.0, -std::f64::consts::FRAC_PI_4)]],
            "Tdg",
        )
    }

    pub fn rz(theta: f64) -> Unitary1Q {
        build(
            [
                [C64::from_polar(1.0, -theta / 2.0), ZERO],
                [ZERO, C64::from_polar(1.0, theta / 2.0)],
            ],
            &format!("Rz({theta})"),
        )
    }

    pub fn rx(theta: f64) -> Unitary1Q {
        let c = C64::new((theta / 2.0).cos(), 0.0);
        let s = C64::new(0.0, -(theta / 2.0).sin());
        build([[c, s], [s, c]], &format!("Rx({theta})"))
    }

    pub fn ry(theta: f64) -> Unitary1Q {
        let c = C64::new((theta / 2.0).cos(), 0.0);
        let s = C64::new((theta / 2.0).sin(), 0.0);
        build([[c, -s], [s, c]], &format!("Ry({theta})"))
    }

    /// Resolves a label, including parameterized forms like `Rz(0.25)`.
    pub fn by_label(label: &str) -> Option<Unitary1Q> {
        match label {
            "I" => return Some(i()),
            "X" => return Some(x()),
            "Y" => return Some(y()),
            "Z" => return Some(z()),
            "H" => return Some(h()),
            "S" => return Some(s()),
            "Sdg" => return Some(sdg()),
            "T" => return Some(t()),
            "Tdg" => return Some(tdg()),
            _ => {}
        }
        let (name, rest) = label.split_once('(')?;
        let arg = rest.strip_suffix(')')?;
        let theta: f64 = arg.trim().parse().ok()?;
        match name {
            "Rz" => Some(rz(theta)),
            "Rx" => Some(rx(theta)),
            "Ry" => Some(ry(theta)),
            _ => None,
        }
    }
}

/// A gate instance placed in a circuit.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Single {
        q: usize,
        u: Unitary1Q,
        /// True for σ(1)=Z gates inserted by the space-cut construction.
        /// Noise models can optionally treat those as free (virtual) gates;
        /// by default they are noisy like any other gate.
        cut_artifact: bool,
    },
    Cz {
        c: usize,
        t: usize,
    },
}

impl Gate {
    pub fn single(q: usize, u: Unitary1Q) -> Self {
        Gate::Single {
            q,
            u,
            cut_artifact: false,
        }
    }

    pub fn cz(c: usize, t: usize) -> Self {
        Gate::Cz { c, t }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::Single { q, .. } => vec![*q],
            Gate::Cz { c, t } => vec![*c, *t],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Gate::Single { q, .. } => {
                if *q < 1 || *q > n {
                    return Err(Error::validation(format!(
                        "gate qubit {q} out of range 1..={n}"
                    )));
                }
            }
            Gate::Cz { c, t } => {
                if *c < 1 || *c > n || *t < 1 || *t > n {
                    return Err(Error::validation(format!(
                        "CZ qubits ({c},{t}) out of range 1..={n}"
                    )));
                }
                if c == t {
                    return Err(Error::validation("CZ control equals target"));
                }
            }
        }
        Ok(())
    }

    fn shifted(&self, offset: usize) -> Gate {
        match self {
            Gate::Single { q, u, cut_artifact } => Gate::Single {
                q: q + offset,
                u: u.clone(),
                cut_artifact: *cut_artifact,
            },
            Gate::Cz { c, t } => Gate::Cz {
                c: c + offset,
                t: t + offset,
            },
        }
    }
}

/// An ordered gate list over a fixed register.
///
/// Circuit values are immutable once constructed and are safe to share
/// across concurrent workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
    pub name: Option<String>,
}

impl Circuit {
    pub fn new(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::validation("circuit must have at least one qubit"));
        }
        for g in &gates {
            g.validate(n_qubits)?;
        }
        Ok(Self {
            n_qubits,
            gates,
            name: None,
        })
    }

    pub fn empty(n_qubits: usize) -> Self {
        Self::new(n_qubits, Vec::new()).expect("n_qubits >= 1")
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        self.gates.push(gate);
        Ok(())
    }

    /// Concatenation: `self` first, then `other` (same register).
    pub fn concat(&self, other: &Circuit) -> Result<Circuit> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::validation("concat register mismatch"));
        }
        let mut gates = self.gates.clone();
        gates.extend(other.gates.iter().cloned());
        Circuit::new(self.n_qubits, gates)
    }

    /// The adjoint circuit: gates reversed, each inverted.
    pub fn dagger(&self) -> Circuit {
        let gates = self
            .gates
            .iter()
            .rev()
            .map(|g| match g {
                Gate::Single { q, u, cut_artifact } => Gate::Single {
                    q: *q,
                    u: u.dagger(),
                    cut_artifact: *cut_artifact,
                },
                Gate::Cz { c, t } => Gate::Cz { c: *c, t: *t },
            })
            .collect();
        Circuit {
            n_qubits: self.n_qubits,
            gates,
            name: None,
        }
    }

    /// The same gate sequence re-indexed into a larger register, with
    /// local qubit `q` mapped to `q + offset`.
    pub fn embedded(&self, offset: usize, total_qubits: usize) -> Result<Circuit> {
        if self.n_qubits + offset > total_qubits {
            return Err(Error::validation(format!(
                "cannot embed {}-qubit circuit at offset {offset} into {total_qubits} qubits",
                self.n_qubits
            )));
        }
        let gates = self.gates.iter().map(|g| g.shifted(offset)).collect();
        Circuit::new(total_qubits, gates)
    }

    /// Dense `2^n × 2^n` unitary of the gate sequence, built by applying
    /// the circuit to every computational basis state. Capped at
    /// [`DENSE_UNITARY_CAP`] qubits.
    pub fn unitary(&self) -> Result<Vec<C64>> {
        if self.n_qubits > DENSE_UNITARY_CAP {
            return Err(Error::RegisterTooLarge {
                qubits: self.n_qubits,
                cap: DENSE_UNITARY_CAP,
            });
        }
        let dim = 1usize << self.n_qubits;
        let mut out = linalg::zeros(dim);
        for col in 0..dim {
            let mut sv = Statevector::basis(self.n_qubits, col);
            sv.apply_circuit_ideal(self);
            for (row, amp) in sv.amplitudes().iter().enumerate() {
                out[row * dim + col] = *amp;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CircuitDoc::from(self)).expect("serializable")
    }
}

/// Builds the circuit preparing the n-qubit linear graph state: H on every
/// qubit followed by CZ(i, i+1) for i = 1..n-1.
pub fn linear_graph_state_circuit(n: usize) -> Circuit {
    assert!(n >= 1, "linear graph state needs at least one qubit");
    let mut gates = Vec::with_capacity(2 * n - 1);
    for q in 1..=n {
        gates.push(Gate::single(q, gates::h()));
    }
    for q in 1..n {
        gates.push(Gate::cz(q, q + 1));
    }
    let mut c = Circuit::new(n, gates).expect("valid by construction");
    c.name = Some(format!("linear-graph-{n}"));
    c
}

// --- JSON schema ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    gates: Vec<GateDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum GateDoc {
    Single {
        q: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        matrix: Option<[[[f64; 2]; 2]; 2]>,
    },
    Cz {
        c: usize,
        t: usize,
    },
}

impl From<&Circuit> for CircuitDoc {
    fn from(c: &Circuit) -> Self {
        let gates = c
            .gates
            .iter()
            .map(|g| match g {
                Gate::Single { q, u, .. } => {
                    let e = u.entries();
                    let row = |r: &[C64; 2]| [[r[0].re, r[0].im], [r[1].re, r[1].im]];
                    GateDoc::Single {
                        q: *q,
                        label: u.label().map(str::to_string),
                        matrix: Some([row(&e[0]), row(&e[1])]),
                    }
                }
                Gate::Cz { c, t } => GateDoc::Cz { c: *c, t: *t },
            })
            .collect();
        CircuitDoc {
            n: c.n_qubits,
            name: c.name.clone(),
            gates,
        }
    }
}

/// Parses a circuit JSON document:
///
/// ```json
/// {"n": 2, "name": "bell", "gates": [
///   {"kind": "single", "q": 1, "label": "H"},
///   {"kind": "cz", "c": 1, "t": 2}
/// ]}
/// ```
///
/// A `single` gate may carry an explicit 2×2 `matrix` of `[re, im]` pairs;
/// the matrix is required when the label is absent or not in the built-in
/// library.
pub fn parse_circuit(text: &str) -> Result<Circuit> {
    let doc: CircuitDoc =
        serde_json::from_str(text).map_err(|e| Error::parse(format!("bad circuit JSON: {e}")))?;
    let mut gates = Vec::with_capacity(doc.gates.len());
    for (pos, g) in doc.gates.into_iter().enumerate() {
        match g {
            GateDoc::Single { q, label, matrix } => {
                let u = match matrix {
                    Some(m) => {
                        let conv = |r: [f64; 2]| C64::new(r[0], r[1]);
                        Unitary1Q::new(
                            [
                                [conv(m[0][0]), conv(m[0][1])],
                                [conv(m[1][0]), conv(m[1][1])],
                            ],
                            label,
                        )?
                    }
                    None => {
                        let label = label.ok_or_else(|| {
                            Error::parse(format!("gate {pos}: label or matrix required"))
                        })?;
                        gates::by_label(&label).ok_or_else(|| {
                            Error::parse(format!(
                                "gate {pos}: unknown label {label:?} without explicit matrix"
                            ))
                        })?
                    }
                };
                gates.push(Gate::single(q, u));
            }
            GateDoc::Cz { c, t } => gates.push(Gate::cz(c, t)),
        }
    }
    let mut circuit = Circuit::new(doc.n, gates)?;
    circuit.name = doc.name;
    Ok(circuit)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::{kron, mat2_to_dense, max_abs_diff, pauli_x, unitarity_deviation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_unitary(rng: &mut ChaCha8Rng) -> Unitary1Q {
        // Haar-ish SU(2) times a phase, exactly unitary by construction.
        let t: f64 = rng.gen::<f64>() * std::f64::consts::FRAC_PI_2;
        let (a, b) = (t.cos(), t.sin());
        let p1 = C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU);
        let p2 = C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU);
        let g = C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU);
        Unitary1Q::new(
            [
                [g * p1 * a, g * p2 * b],
                [g * (-p2.conj()) * b, g * p1.conj() * a],
            ],
            None,
        )
        .unwrap()
    }

    pub(crate) fn random_circuit(n: usize, n_gates: usize, rng: &mut ChaCha8Rng) -> Circuit {
        let mut c = Circuit::empty(n);
        for _ in 0..n_gates {
            if n >= 2 && rng.gen_bool(0.4) {
                let a = rng.gen_range(1..=n);
                let mut b = rng.gen_range(1..=n);
                while b == a {
                    b = rng.gen_range(1..=n);
                }
                c.push(Gate::cz(a, b)).unwrap();
            } else {
                let q = rng.gen_range(1..=n);
                c.push(Gate::single(q, random_unitary(rng))).unwrap();
            }
        }
        c
    }

    #[test]
    fn parse_two_qubit_graph_state_doc() {
        let text = r#"{"n": 2, "gates": [
            {"kind": "single", "q": 1, "label": "H"},
            {"kind": "single", "q": 2, "label": "H"},
            {"kind": "cz", "c": 1, "t": 2}
        ]}"#;
        let c = parse_circuit(text).unwrap();
        assert_eq!(c.n_qubits(), 2);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn parse_empty_identity_circuit() {
        let c = parse_circuit(r#"{"n": 1, "gates": []}"#).unwrap();
        assert_eq!(c.n_qubits(), 1);
        assert!(c.is_empty());
    }

    #[test]
    fn parse_rejects_cz_on_same_qubit() {
        let err = parse_circuit(r#"{"n": 2, "gates": [{"kind": "cz", "c": 1, "t": 1}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("control equals target"));
    }

    #[test]
    fn parse_rejects_non_unitary_matrix() {
        let text = r#"{"n": 1, "gates": [{"kind": "single", "q": 1,
            "matrix": [[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[0.5,0.0]]]}]}"#;
        assert!(parse_circuit(text).is_err());
    }

    #[test]
    fn parse_rejects_out_of_range_qubit() {
        let text = r#"{"n": 2, "gates": [{"kind": "single", "q": 3, "label": "H"}]}"#;
        assert!(parse_circuit(text).is_err());
    }

    #[test]
    fn unitary_of_x_and_cz() {
        let cx = Circuit::new(1, vec![Gate::single(1, gates::x())]).unwrap();
        assert_eq!(cx.unitary().unwrap(), mat2_to_dense(&pauli_x()));

        let ccz = Circuit::new(2, vec![Gate::cz(1, 2)]).unwrap();
        let m = ccz.unitary().unwrap();
        let mut expected = linalg::eye(4);
        expected[3 * 4 + 3] = -ONE;
        assert_eq!(m, expected);
    }

    #[test]
    fn random_circuit_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_circuit(3, 10, &mut rng);
        let m = c.unitary().unwrap();
        assert!(unitarity_deviation(&m, 8) < 1e-9);
    }

    #[test]
    fn linear_graph_state_shapes() {
        let c2 = linear_graph_state_circuit(2);
        assert_eq!(c2.len(), 3);
        let c1 = linear_graph_state_circuit(1);
        assert_eq!(c1.len(), 1);
        let c4 = linear_graph_state_circuit(4);
        assert_eq!(
            c4.gates().iter().filter(|g| matches!(g, Gate::Cz { .. })).count(),
            3
        );
    }

    #[test]
    fn json_round_trip_preserves_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let c = random_circuit(3, 8, &mut rng);
            let back = parse_circuit(&c.to_json()).unwrap();
            let d = max_abs_diff(&c.unitary().unwrap(), &back.unitary().unwrap());
            assert!(d < 1e-12, "round-trip deviation {d}");
        }
    }

    #[test]
    fn concat_unitary_is_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_circuit(2, 5, &mut rng);
        let b = random_circuit(2, 5, &mut rng);
        let ab = a.concat(&b).unwrap();
        // Gates of b act after a, so U = U_b · U_a.
        let prod = linalg::matmul(&b.unitary().unwrap(), &a.unitary().unwrap(), 4);
        assert!(max_abs_diff(&ab.unitary().unwrap(), &prod) < 1e-12);
    }

    #[test]
    fn dagger_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = random_circuit(2, 6, &mut rng);
        let id = c.concat(&c.dagger()).unwrap().unitary().unwrap();
        assert!(max_abs_diff(&id, &linalg::eye(4)) < 1e-10);
    }

    #[test]
    fn embedded_keeps_gates_on_shifted_qubits() {
        let x1 = Circuit::new(1, vec![Gate::single(1, gates::x())]).unwrap();
        let emb = x1.embedded(1, 2).unwrap();
        // X on qubit 2 = X ⊗ I with qubit 1 on the low bit.
        let expected = kron(&mat2_to_dense(&pauli_x()), 2, &linalg::eye(2), 2);
        assert!(max_abs_diff(&emb.unitary().unwrap(), &expected) < 1e-12);
    }
}
