//! The protocol engine: three nested sampling levels over selectors k,
//! quadruples (i, j, i′, j′), and per-setting shots; the split two-block
//! circuits producing ±1 statistics β′; the joint (n+1)-qubit ancilla
//! test producing α; the shot-budget calculator; and the direct Pauli
//! baseline estimator for Clifford targets.
//!
//! Estimator layout (all in relabeled space, side A = 1..m):
//!
//! * Block 1 acts on (data 1..n, ancilla n+1): H and X on the ancilla
//!   interleaved with the controlled half-adjoints Λ(V†_i), Λ(V†_i′);
//!   side A and the ancilla are then measured (the ancilla in the C_l
//!   basis, giving `o`).
//! * Block 2 acts on (B-local 1..n-m, prepared qubit at n-m+1): the
//!   prepared qubit starts in C_l|0⟩ and drives Λ(W†_j), Λ(W†_j′)
//!   before H and a Z measurement giving `b`; the B side gives z_B.
//! * β′ = (−1)^{(1+δ(l₁,0)δ(l₂,0))·o}·α with α = +1 iff
//!   ⊕ z_i k_i = i·j ⊕ i′·j′ ⊕ b.
//!
//! Three modes trade faithfulness against variance: `Sampled` draws all
//! three levels at random; `Enumerated` replaces the k and quadruple
//! sampling by exact averages but keeps sampled shots; `Analytic`
//! computes every expectation exactly from the density-matrix engine.
//! Estimates are NOT clamped to [0, 1]; out-of-range values are flagged,
//! not hidden.
//!
//! Shot randomness comes from counter-based ChaCha streams keyed by
//! (seed, domain, level-1 index, level-2 index, setting, shot index), so
//! results are bit-identical regardless of worker scheduling.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bits::Bits;
use crate::circuit::{gates, Circuit, Gate, Unitary1Q};
use crate::decompose::{self, build_half_operator, Side};
use crate::error::{Error, Result};
use crate::partition::{find_min_cut, layerize, relabel, CutMode, LayeredDecomposition, Partition,
                       EXACT_CUT_CAP};
use crate::sim::{DensityMatrix, NoiseModel, PauliBasisSetting, Statevector};

/// Density-matrix (analytic-mode) register cap: data + two ancillas.
pub const ANALYTIC_REGISTER_CAP: usize = 12;

/// Cap on the number of circuit executions an enumerated run may plan.
pub const ENUM_WORK_CAP: u128 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// Faithful three-level sampling (k, quadruples, shots).
    Sampled,
    /// Exact averages over k and quadruples, sampled shots.
    Enumerated,
    /// Exact expectations throughout; no shots, no variance.
    Analytic,
}

impl std::fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorMode::Sampled => write!(f, "sampled"),
            EstimatorMode::Enumerated => write!(f, "enumerated"),
            EstimatorMode::Analytic => write!(f, "analytic"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Target accuracy ε ∈ (0, 1), used when shot counts are derived.
    pub epsilon: f64,
    /// Failure probability δ ∈ (0, 1).
    pub delta: f64,
    /// Level shot counts; 0 means derive T from `required_shots`.
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub mode: EstimatorMode,
    pub seed: u64,
    /// Noise afflicting the measurement-device circuits (controlled
    /// half-adjoints, H, X, basis rotations, readout).
    pub noise: NoiseModel,
    /// Noise afflicting the target-circuit gates preparing ρ_out.
    pub state_noise: NoiseModel,
    /// Collapse the quadruple space to one term per k whenever the
    /// decomposition certifies the commuting-Z symmetry.
    pub use_reduction: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delta: 0.05,
            t1: 0,
            t2: 0,
            t3: 0,
            mode: EstimatorMode::Enumerated,
            seed: 0,
            noise: NoiseModel::ideal(),
            state_noise: NoiseModel::ideal(),
            use_reduction: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::validation("epsilon must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta must lie in (0, 1)"));
        }
        self.noise.validate()?;
        self.state_noise.validate()
    }
}

/// Shot budget derived from the concentration analysis: per-level count
/// `T = ⌈(4/ε_h²)·ln(640/(δ·ε_h⁴))⌉` with `ε_h = ε/(2(5·4^D + 1))`, and
/// `8T³` total state copies. The total saturates at `u128::MAX` for
/// parameter ranges where it overflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotBudget {
    pub epsilon_h: f64,
    pub t: u64,
    pub total_copies: u128,
}

pub fn required_shots(epsilon: f64, delta: f64, d: usize) -> Result<ShotBudget> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::validation("epsilon and delta must lie in (0, 1)"));
    }
    let a = 5.0 * 4f64.powi(d as i32) + 1.0;
    let epsilon_h = epsilon / (2.0 * a);
    let t_real = (4.0 / (epsilon_h * epsilon_h))
        * (640.0 / (delta * epsilon_h.powi(4))).ln();
    if !t_real.is_finite() || t_real >= u64::MAX as f64 {
        return Err(Error::validation(
            "derived shot count overflows; parameters out of practical range",
        ));
    }
    let t = t_real.ceil() as u64;
    let total_copies = (t as u128)
        .checked_pow(3)
        .and_then(|c| c.checked_mul(8))
        .unwrap_or(u128::MAX);
    Ok(ShotBudget {
        epsilon_h,
        t,
        total_copies,
    })
}

/// One quadruple of selector strings, each of length D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quad {
    pub i: Bits,
    pub j: Bits,
    pub ip: Bits,
    pub jp: Bits,
}

impl Quad {
    pub fn zero(d: usize) -> Self {
        let z = Bits::zero(d);
        Self {
            i: z,
            j: z,
            ip: z,
            jp: z,
        }
    }

    /// The sign selector `i·j ⊕ i′·j′`.
    pub fn phase(&self) -> bool {
        self.i.parity_and(&self.j) ^ self.ip.parity_and(&self.jp)
    }

    /// All 16^D quadruples in counting order.
    pub fn all(d: usize) -> impl Iterator<Item = Quad> {
        assert!(4 * d < 63, "quadruple enumeration out of range");
        (0..(1u64 << (4 * d))).map(move |v| Self::unpack(v, d))
    }

    pub fn sample(d: usize, rng: &mut ChaCha8Rng) -> Quad {
        let v = if d == 0 { 0 } else { rng.gen_range(0..(1u64 << (4 * d))) };
        Self::unpack(v, d)
    }

    pub fn pack(&self) -> u64 {
        let d = self.i.len();
        self.i.value()
            | self.j.value() << d
            | self.ip.value() << (2 * d)
            | self.jp.value() << (3 * d)
    }

    fn unpack(v: u64, d: usize) -> Quad {
        let mask = if d == 0 { 0 } else { (1u64 << d) - 1 };
        Quad {
            i: Bits::from_value(v & mask, d),
            j: Bits::from_value(v >> d & mask, d),
            ip: Bits::from_value(v >> (2 * d) & mask, d),
            jp: Bits::from_value(v >> (3 * d) & mask, d),
        }
    }
}

/// One split-circuit shot: selectors, basis setting, raw outcomes, and
/// the derived ±1 statistic.
#[derive(Debug, Clone, Copy)]
pub struct ShotRecord {
    pub k: Bits,
    pub i: Bits,
    pub j: Bits,
    pub ip: Bits,
    pub jp: Bits,
    pub l: PauliBasisSetting,
    /// Cut-qubit outcome in the C_l basis (block 1 ancilla).
    pub o: bool,
    /// Block-2 ancilla outcome.
    pub b: bool,
    /// Data outcomes, A side then B side.
    pub z: Bits,
    pub beta_prime: i8,
}

impl ShotRecord {
    pub fn new(k: Bits, quad: &Quad, l: PauliBasisSetting, o: bool, b: bool, z: Bits) -> Self {
        let alpha_positive = z.parity_and(&k) == (quad.phase() ^ b);
        let mut beta = if alpha_positive { 1i8 } else { -1 };
        if l.uses_o_sign() && o {
            beta = -beta;
        }
        Self {
            k,
            i: quad.i,
            j: quad.j,
            ip: quad.ip,
            jp: quad.jp,
            l,
            o,
            b,
            z,
            beta_prime: beta,
        }
    }

    pub fn csv_header() -> &'static str {
        "k,i,j,ip,jp,l,o,b,z,beta"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.k,
            self.i,
            self.j,
            self.ip,
            self.jp,
            self.l,
            self.o as u8,
            self.b as u8,
            self.z,
            self.beta_prime
        )
    }
}

/// The aggregated estimate with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct FidelityEstimate {
    pub f_est: f64,
    pub mode: EstimatorMode,
    pub n: usize,
    pub m: usize,
    pub denseness: usize,
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    /// Number of simulated state copies consumed (0 in analytic mode).
    pub shots_used: u64,
    pub reduction_applied: bool,
    /// Raw estimates may leave [0, 1] at low shot counts; flagged, never
    /// clamped.
    pub out_of_range: bool,
    /// Estimated Re Tr[ρ ŝ_k] per selector (enumerated/analytic: every k;
    /// sampled: the drawn k's in order).
    pub per_k: Vec<(Bits, f64)>,
    pub wall_time_s: f64,
}

// --- RNG streams ----------------------------------------------------------

const DOM_K_CHOICE: u8 = 1;
const DOM_QUAD_CHOICE: u8 = 2;
const DOM_BETA: u8 = 3;
const DOM_ALPHA: u8 = 4;
const DOM_DIRECT: u8 = 5;

/// Counter-based stream: every (domain, a, b, c) tuple owns an
/// independent ChaCha stream derived from the run seed.
pub(crate) fn stream_rng(seed: u64, domain: u8, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    assert!(c < 1 << 56, "stream counter exceeds 56 bits");
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = domain;
    key[9..17].copy_from_slice(&a.to_le_bytes());
    key[17..25].copy_from_slice(&b.to_le_bytes());
    key[25..32].copy_from_slice(&c.to_le_bytes()[..7]);
    ChaCha8Rng::from_seed(key)
}

fn gate_circuit(n: usize, q: usize, u: Unitary1Q) -> Circuit {
    Circuit::new(n, vec![Gate::single(q, u)]).expect("valid single-gate circuit")
}

fn rotation_circuit(n: usize, q: usize, rots: &[Unitary1Q]) -> Circuit {
    let gates = rots.iter().map(|u| Gate::single(q, u.clone())).collect();
    Circuit::new(n, gates).expect("valid rotation circuit")
}

/// The four dagger half-circuits of one quadruple (local indexing).
struct QuadOps {
    phase: bool,
    v_i_dag: Circuit,
    v_ip_dag: Circuit,
    w_j_dag: Circuit,
    w_jp_dag: Circuit,
}

/// A configured run: target, cut, layered decomposition, and estimator
/// settings. Construction fixes the partition, so repeated calls reuse
/// identical structure.
pub struct Protocol {
    original: Circuit,
    relabeled: Circuit,
    partition: Partition,
    permutation: Vec<usize>,
    layered: LayeredDecomposition,
    reduction_certified: bool,
    config: EstimatorConfig,
}

impl Protocol {
    pub fn new(target: &Circuit, config: EstimatorConfig) -> Result<Self> {
        let mode = if target.n_qubits() <= EXACT_CUT_CAP {
            CutMode::Exact
        } else {
            CutMode::Heuristic
        };
        let partition = find_min_cut(target, mode)?;
        Self::with_partition(target, partition, config)
    }

    pub fn with_partition(
        target: &Circuit,
        partition: Partition,
        config: EstimatorConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (relabeled, permutation) = relabel(target, &partition)?;
        let contiguous: Vec<usize> = (1..=partition.m()).collect();
        let relabeled_partition = Partition::for_side_a(&relabeled, &contiguous)?;
        let layered = layerize(&relabeled, &relabeled_partition)?;
        let reduction_certified = decompose::reduction_applicable(&layered)?;
        Ok(Self {
            original: target.clone(),
            relabeled,
            partition,
            permutation,
            layered,
            reduction_certified,
            config,
        })
    }

    pub fn original(&self) -> &Circuit {
        &self.original
    }

    pub fn relabeled(&self) -> &Circuit {
        &self.relabeled
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn layered(&self) -> &LayeredDecomposition {
        &self.layered
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// Whether the quadruple-collapsing symmetry is certified AND enabled.
    pub fn reduction_active(&self) -> bool {
        self.config.use_reduction && self.reduction_certified
    }

    fn n(&self) -> usize {
        self.layered.n_qubits()
    }

    fn m(&self) -> usize {
        self.layered.m()
    }

    fn n_b(&self) -> usize {
        self.layered.n_b()
    }

    pub fn denseness(&self) -> usize {
        self.layered.d()
    }

    /// The single surviving quadruple for selector k under the certified
    /// symmetry: `(i, j, i′, j′) = (κ_B, κ_A, 0, 0)` where κ_A/κ_B take
    /// k's bits at the crossing endpoints.
    pub fn reduced_quad(&self, k: &Bits) -> Quad {
        let d = self.layered.d();
        let mut ka = Bits::zero(d);
        let mut kb = Bits::zero(d);
        for r in 1..=d {
            let (c, t) = self.layered.crossings()[r - 1];
            ka = ka.with_bit(r, k.get(c));
            kb = kb.with_bit(r, k.get(self.m() + t));
        }
        Quad {
            i: kb,
            j: ka,
            ip: Bits::zero(d),
            jp: Bits::zero(d),
        }
    }

    /// Effective per-level shot counts: zeros resolve to the derived T.
    pub fn resolved_budgets(&self) -> Result<(u64, u64, u64)> {
        let c = &self.config;
        if c.t1 > 0 && c.t2 > 0 && c.t3 > 0 {
            return Ok((c.t1, c.t2, c.t3));
        }
        let budget = required_shots(c.epsilon, c.delta, self.denseness())?;
        let pick = |v: u64| if v > 0 { v } else { budget.t };
        Ok((pick(c.t1), pick(c.t2), pick(c.t3)))
    }

    /// Exact ρ_out: the relabeled target applied to |0^n⟩ under the
    /// state-preparation noise, as a density matrix.
    pub fn prepare_rho(&self) -> Result<DensityMatrix> {
        let n = self.n();
        if n + 2 > ANALYTIC_REGISTER_CAP {
            return Err(Error::RegisterTooLarge {
                qubits: n + 2,
                cap: ANALYTIC_REGISTER_CAP,
            });
        }
        let mut dm = DensityMatrix::zero_state(n);
        dm.apply_circuit(&self.relabeled, &self.config.state_noise)?;
        Ok(dm)
    }

    fn quad_ops(&self, quad: &Quad) -> Result<QuadOps> {
        let v_i = build_half_operator(&self.layered, Side::A, &quad.i)?;
        let v_ip = build_half_operator(&self.layered, Side::A, &quad.ip)?;
        let w_j = build_half_operator(&self.layered, Side::B, &quad.j)?;
        let w_jp = build_half_operator(&self.layered, Side::B, &quad.jp)?;
        Ok(QuadOps {
            phase: quad.phase(),
            v_i_dag: v_i.circuit.dagger(),
            v_ip_dag: v_ip.circuit.dagger(),
            w_j_dag: w_j.circuit.dagger(),
            w_jp_dag: w_jp.circuit.dagger(),
        })
    }

    // --- sampled split shots ------------------------------------------

    /// Runs one split-circuit shot for (k, quadruple, l): block 1 on the
    /// A side plus ancilla, a fresh C_l|0⟩ qubit, block 2 on the B side.
    pub fn run_beta_shot(
        &self,
        k: &Bits,
        quad: &Quad,
        l: &PauliBasisSetting,
        rng: &mut ChaCha8Rng,
    ) -> Result<ShotRecord> {
        let ops = self.quad_ops(quad)?;
        self.beta_shot_with_ops(&ops, k, quad, l, rng)
    }

    fn beta_shot_with_ops(
        &self,
        ops: &QuadOps,
        k: &Bits,
        quad: &Quad,
        l: &PauliBasisSetting,
        rng: &mut ChaCha8Rng,
    ) -> Result<ShotRecord> {
        let (n, m, nb) = (self.n(), self.m(), self.n_b());
        if k.len() != n {
            return Err(Error::validation("selector length must equal qubit count"));
        }
        let dev = &self.config.noise;
        let anc1 = n + 1;

        // Fresh copy of ρ_out with the block-1 ancilla |0⟩.
        let mut sv = Statevector::zero(n + 1);
        sv.apply_circuit(&self.relabeled.embedded(0, n + 1)?, &self.config.state_noise, rng)?;

        sv.apply_circuit(&gate_circuit(n + 1, anc1, gates::h()), dev, rng)?;
        sv.apply_circuit(&gate_circuit(n + 1, anc1, gates::x()), dev, rng)?;
        sv.apply_controlled(anc1, &ops.v_i_dag.embedded(0, n + 1)?, false, dev, rng)?;
        sv.apply_circuit(&gate_circuit(n + 1, anc1, gates::x()), dev, rng)?;
        sv.apply_controlled(anc1, &ops.v_ip_dag.embedded(0, n + 1)?, false, dev, rng)?;

        let a_qubits: Vec<usize> = (1..=m).collect();
        let (za_reported, za_true) = sv.measure_z_raw(&a_qubits, rng, dev.readout_flip)?;
        sv.apply_circuit(
            &rotation_circuit(n + 1, anc1, &l.clifford_dagger_gates()),
            dev,
            rng,
        )?;
        let (o_reported, o_true) = sv.measure_z_raw(&[anc1], rng, dev.readout_flip)?;

        // Collapse block 1 away and keep the B side.
        let mut fixed: Vec<(usize, bool)> = a_qubits
            .iter()
            .zip(&za_true)
            .map(|(&q, &v)| (q, v))
            .collect();
        fixed.push((anc1, o_true[0]));
        let keep: Vec<usize> = (m + 1..=n).collect();
        let b_state = sv.extract_qubits(&keep, &fixed)?;

        // Block 2: B side plus the prepared qubit at local n-m+1.
        let anc2 = nb + 1;
        let mut sv2 = b_state.append(&Statevector::zero(1));
        sv2.apply_circuit(&rotation_circuit(nb + 1, anc2, &l.clifford_gates()), dev, rng)?;
        sv2.apply_circuit(&gate_circuit(nb + 1, anc2, gates::x()), dev, rng)?;
        sv2.apply_controlled(anc2, &ops.w_j_dag.embedded(0, nb + 1)?, false, dev, rng)?;
        sv2.apply_circuit(&gate_circuit(nb + 1, anc2, gates::x()), dev, rng)?;
        sv2.apply_controlled(anc2, &ops.w_jp_dag.embedded(0, nb + 1)?, false, dev, rng)?;
        sv2.apply_circuit(&gate_circuit(nb + 1, anc2, gates::h()), dev, rng)?;

        let b_qubits: Vec<usize> = (1..=nb).collect();
        let zb = sv2.measure_z(&b_qubits, rng, dev.readout_flip)?;
        let b = sv2.measure_z(&[anc2], rng, dev.readout_flip)?[0];

        let z = Bits::from_bools(&za_reported).concat(&Bits::from_bools(&zb));
        Ok(ShotRecord::new(*k, quad, *l, o_reported[0], b, z))
    }

    /// Runs the unsplit (n+1)-qubit ancilla-test circuit once and returns
    /// α ∈ {−1, +1}. Serves as a mid-level oracle between the split
    /// estimator and dense algebra.
    pub fn run_alpha_shot(&self, k: &Bits, quad: &Quad, rng: &mut ChaCha8Rng) -> Result<i8> {
        let n = self.n();
        let m = self.m();
        let dev = &self.config.noise;
        let anc = n + 1;
        let ops = self.quad_ops(quad)?;

        let mut sv = Statevector::zero(n + 1);
        sv.apply_circuit(&self.relabeled.embedded(0, n + 1)?, &self.config.state_noise, rng)?;
        sv.apply_circuit(&gate_circuit(n + 1, anc, gates::h()), dev, rng)?;
        sv.apply_controlled(anc, &ops.v_i_dag.embedded(0, n + 1)?, true, dev, rng)?;
        sv.apply_controlled(anc, &ops.w_j_dag.embedded(m, n + 1)?, true, dev, rng)?;
        sv.apply_controlled(anc, &ops.v_ip_dag.embedded(0, n + 1)?, false, dev, rng)?;
        sv.apply_controlled(anc, &ops.w_jp_dag.embedded(m, n + 1)?, false, dev, rng)?;
        sv.apply_circuit(&gate_circuit(n + 1, anc, gates::h()), dev, rng)?;

        let all: Vec<usize> = (1..=n + 1).collect();
        let bits = sv.measure_z(&all, rng, dev.readout_flip)?;
        let z = Bits::from_bools(&bits[..n]);
        let b = bits[n];
        let alpha_positive = z.parity_and(k) == (ops.phase ^ b);
        Ok(if alpha_positive { 1 } else { -1 })
    }

    // --- analytic expectations ------------------------------------------

    /// Exact diagonal outcome distribution of the split pair for one
    /// (quadruple, l): register (data 1..n, block-1 ancilla n+1, block-2
    /// prepared qubit n+2), all channels applied exactly.
    fn beta_distribution(
        &self,
        rho: &DensityMatrix,
        ops: &QuadOps,
        l: &PauliBasisSetting,
    ) -> Result<Vec<f64>> {
        let (n, m, nb) = (self.n(), self.m(), self.n_b());
        let dev = &self.config.noise;
        let anc1 = n + 1;

        // Block 1 on (data, anc1).
        let mut dm = rho.append(&DensityMatrix::zero_state(1));
        dm.apply_circuit(&gate_circuit(n + 1, anc1, gates::h()), dev)?;
        dm.apply_circuit(&gate_circuit(n + 1, anc1, gates::x()), dev)?;
        dm.apply_controlled(anc1, &ops.v_i_dag.embedded(0, n + 1)?, false, dev)?;
        dm.apply_circuit(&gate_circuit(n + 1, anc1, gates::x()), dev)?;
        dm.apply_controlled(anc1, &ops.v_ip_dag.embedded(0, n + 1)?, false, dev)?;
        dm.apply_circuit(
            &rotation_circuit(n + 1, anc1, &l.clifford_dagger_gates()),
            dev,
        )?;

        // Fresh prepared qubit: |0⟩ rotated by the noisy C_l gates.
        let mut prep = DensityMatrix::zero_state(1);
        prep.apply_circuit(&rotation_circuit(1, 1, &l.clifford_gates()), dev)?;
        let mut dm = dm.append(&prep);

        // Block 2 on (B side at m+1.., prepared qubit n+2).
        let anc2 = n + 2;
        let total = n + 2;
        debug_assert_eq!(nb + 1 + m + 1, total);
        dm.apply_circuit(&gate_circuit(total, anc2, gates::x()), dev)?;
        dm.apply_controlled(anc2, &ops.w_j_dag.embedded(m, total)?, false, dev)?;
        dm.apply_circuit(&gate_circuit(total, anc2, gates::x()), dev)?;
        dm.apply_controlled(anc2, &ops.w_jp_dag.embedded(m, total)?, false, dev)?;
        dm.apply_circuit(&gate_circuit(total, anc2, gates::h()), dev)?;

        Ok(dm.diagonal_probs())
    }

    /// E[β(l)] for one selector from a shared outcome distribution;
    /// classical readout flips enter as exact damping factors on the
    /// parity-contributing bits.
    fn expected_beta(&self, dist: &[f64], k: &Bits, phase: bool, l: &PauliBasisSetting) -> f64 {
        let n = self.n();
        let uses_o = l.uses_o_sign();
        let f = self.config.noise.readout_flip;
        let damp = (1.0 - 2.0 * f).powi(k.popcount() as i32 + 1 + uses_o as i32);
        let kmask = k.value() as usize;
        let mut acc = 0.0;
        for (x, p) in dist.iter().enumerate() {
            let z = x & ((1 << n) - 1);
            let o = x >> n & 1 == 1;
            let b = x >> (n + 1) & 1 == 1;
            let mut neg = (z & kmask).count_ones() % 2 == 1;
            neg ^= phase;
            neg ^= b;
            if uses_o && o {
                neg = !neg;
            }
            acc += if neg { -*p } else { *p };
        }
        acc * damp
    }

    /// Exact Σ_l E[β(l)]/2 for (k, quadruple) against a given ρ_out; the
    /// analytic value of the cross-term estimator.
    pub fn expected_beta_sum(&self, rho: &DensityMatrix, k: &Bits, quad: &Quad) -> Result<f64> {
        let ops = self.quad_ops(quad)?;
        let mut sum = 0.0;
        for l in PauliBasisSetting::all() {
            let dist = self.beta_distribution(rho, &ops, &l)?;
            sum += self.expected_beta(&dist, k, ops.phase, &l) / 2.0;
        }
        Ok(sum)
    }

    /// Exact E[α] of the joint ancilla-test circuit against a given
    /// ρ_out.
    pub fn expected_alpha(&self, rho: &DensityMatrix, k: &Bits, quad: &Quad) -> Result<f64> {
        let n = self.n();
        let m = self.m();
        let dev = &self.config.noise;
        let anc = n + 1;
        let ops = self.quad_ops(quad)?;

        let mut dm = rho.append(&DensityMatrix::zero_state(1));
        dm.apply_circuit(&gate_circuit(n + 1, anc, gates::h()), dev)?;
        dm.apply_controlled(anc, &ops.v_i_dag.embedded(0, n + 1)?, true, dev)?;
        dm.apply_controlled(anc, &ops.w_j_dag.embedded(m, n + 1)?, true, dev)?;
        dm.apply_controlled(anc, &ops.v_ip_dag.embedded(0, n + 1)?, false, dev)?;
        dm.apply_controlled(anc, &ops.w_jp_dag.embedded(m, n + 1)?, false, dev)?;
        dm.apply_circuit(&gate_circuit(n + 1, anc, gates::h()), dev)?;

        let f = dev.readout_flip;
        let damp = (1.0 - 2.0 * f).powi(k.popcount() as i32 + 1);
        let kmask = k.value() as usize;
        let mut acc = 0.0;
        for (x, p) in dm.diagonal_probs().iter().enumerate() {
            let z = x & ((1 << n) - 1);
            let b = x >> n & 1 == 1;
            let mut neg = (z & kmask).count_ones() % 2 == 1;
            neg ^= ops.phase;
            neg ^= b;
            acc += if neg { -*p } else { *p };
        }
        Ok(acc * damp)
    }

    // --- cross-term estimation -------------------------------------------

    /// Estimates the cross term for (k, quadruple): the real part of
    /// `(−1)^{i·j+i′·j′} Tr[ρ_out Q†_{i,j} Z^k Q_{i′,j′}]`.
    ///
    /// Analytic mode returns Σ_l E[β(l)]/2 exactly; otherwise T3 shots per
    /// basis setting give `Σ_l Σ_s β′_s(l) / (2·T3)`.
    pub fn estimate_cross_term(&self, k: &Bits, quad: &Quad) -> Result<f64> {
        if self.config.mode == EstimatorMode::Analytic {
            let rho = self.prepare_rho()?;
            return self.expected_beta_sum(&rho, k, quad);
        }
        let (_, _, t3) = self.resolved_budgets()?;
        let (value, _) = self.cross_term_sampled(k, quad, t3, k.value(), quad.pack(), None)?;
        Ok(value)
    }

    /// Sampled cross-term estimate with externally assigned stream
    /// indices; optionally collects the raw shot records.
    fn cross_term_sampled(
        &self,
        k: &Bits,
        quad: &Quad,
        t3: u64,
        stream_a: u64,
        stream_b: u64,
        mut sink: Option<&mut Vec<ShotRecord>>,
    ) -> Result<(f64, u64)> {
        let ops = self.quad_ops(quad)?;
        let seed = self.config.seed;
        let mut sum = 0i64;
        for l in PauliBasisSetting::all() {
            let lidx = l.index() as u64;
            if let Some(records) = sink.as_deref_mut() {
                let shot_records: Vec<ShotRecord> = (0..t3)
                    .into_par_iter()
                    .map(|s| {
                        let mut rng =
                            stream_rng(seed, DOM_BETA, stream_a, stream_b * 8 + lidx, s);
                        self.beta_shot_with_ops(&ops, k, quad, &l, &mut rng)
                    })
                    .collect::<Result<_>>()?;
                sum += shot_records
                    .iter()
                    .map(|r| r.beta_prime as i64)
                    .sum::<i64>();
                records.extend(shot_records);
            } else {
                sum += (0..t3)
                    .into_par_iter()
                    .map(|s| {
                        let mut rng =
                            stream_rng(seed, DOM_BETA, stream_a, stream_b * 8 + lidx, s);
                        self.beta_shot_with_ops(&ops, k, quad, &l, &mut rng)
                            .map(|r| r.beta_prime as i64)
                    })
                    .try_reduce(|| 0, |a, b| Ok(a + b))?;
            }
        }
        Ok((sum as f64 / (2.0 * t3 as f64), 8 * t3))
    }

    fn check_enumeration_budget(&self, shots_per_setting: u64) -> Result<()> {
        let n = self.n();
        let d = self.denseness();
        if n > 24 || (!self.reduction_active() && 4 * d > 24) {
            return Err(Error::validation(
                "enumerated mode is limited to small selector spaces",
            ));
        }
        let quads: u128 = if self.reduction_active() {
            1
        } else {
            1u128 << (4 * d)
        };
        let work = (1u128 << n) * quads * 8 * shots_per_setting.max(1) as u128;
        if work > ENUM_WORK_CAP {
            return Err(Error::BudgetExceeded {
                required: work,
                cap: ENUM_WORK_CAP,
            });
        }
        Ok(())
    }

    /// Runs the full three-level estimation and aggregates F_est.
    pub fn estimate_fidelity(&self) -> Result<FidelityEstimate> {
        Ok(self.run(false)?.0)
    }

    /// Same as [`Protocol::estimate_fidelity`] but also returns every raw
    /// shot record (empty in analytic mode).
    pub fn estimate_fidelity_with_records(&self) -> Result<(FidelityEstimate, Vec<ShotRecord>)> {
        self.run(true)
    }

    fn run(&self, want_records: bool) -> Result<(FidelityEstimate, Vec<ShotRecord>)> {
        let start = Instant::now();
        let n = self.n();
        let d = self.denseness();
        let (t1, t2, t3) = self.resolved_budgets()?;
        let reduction = self.reduction_active();
        let scale = 1.0 / (1u64 << (2 * d)) as f64; // 4^{-D}
        let mut records: Vec<ShotRecord> = Vec::new();
        let mut per_k: Vec<(Bits, f64)> = Vec::new();
        let mut shots_used: u64 = 0;

        let f_est = match self.config.mode {
            EstimatorMode::Analytic => {
                self.check_enumeration_budget(1)?;
                let rho = self.prepare_rho()?;
                if reduction {
                    for k in Bits::all(n) {
                        let quad = self.reduced_quad(&k);
                        let val = self.expected_beta_sum(&rho, &k, &quad)?;
                        per_k.push((k, val));
                    }
                } else {
                    // One distribution per (quadruple, setting) serves
                    // every selector.
                    let mut acc = vec![0.0; 1 << n];
                    for quad in Quad::all(d) {
                        let ops = self.quad_ops(&quad)?;
                        for l in PauliBasisSetting::all() {
                            let dist = self.beta_distribution(&rho, &ops, &l)?;
                            for (kv, k) in Bits::all(n).enumerate() {
                                acc[kv] += self.expected_beta(&dist, &k, ops.phase, &l) / 2.0;
                            }
                        }
                    }
                    for (kv, k) in Bits::all(n).enumerate() {
                        per_k.push((k, acc[kv] * scale));
                    }
                }
                per_k.iter().map(|(_, v)| *v).sum::<f64>() / (1u64 << n) as f64
            }
            EstimatorMode::Enumerated => {
                self.check_enumeration_budget(t3)?;
                let sink = want_records.then_some(&mut records);
                let mut sink = sink;
                for (kidx, k) in Bits::all(n).enumerate() {
                    let val = if reduction {
                        let quad = self.reduced_quad(&k);
                        let (v, s) = self.cross_term_sampled(
                            &k,
                            &quad,
                            t3,
                            kidx as u64,
                            quad.pack(),
                            sink.as_deref_mut(),
                        )?;
                        shots_used += s;
                        v
                    } else {
                        let mut sum = 0.0;
                        for (qidx, quad) in Quad::all(d).enumerate() {
                            let (v, s) = self.cross_term_sampled(
                                &k,
                                &quad,
                                t3,
                                kidx as u64,
                                qidx as u64,
                                sink.as_deref_mut(),
                            )?;
                            shots_used += s;
                            sum += v;
                        }
                        sum * scale
                    };
                    per_k.push((k, val));
                }
                per_k.iter().map(|(_, v)| *v).sum::<f64>() / (1u64 << n) as f64
            }
            EstimatorMode::Sampled => {
                let sink = want_records.then_some(&mut records);
                let mut sink = sink;
                let mut level1 = 0.0;
                for i1 in 0..t1 {
                    let mut kr = stream_rng(self.config.seed, DOM_K_CHOICE, i1, 0, 0);
                    let k = Bits::from_value(kr.gen_range(0..(1u64 << n)), n);
                    let mut level2 = 0.0;
                    for i2 in 0..t2 {
                        let quad = if reduction {
                            self.reduced_quad(&k)
                        } else {
                            let mut qr =
                                stream_rng(self.config.seed, DOM_QUAD_CHOICE, i1, i2, 0);
                            Quad::sample(d, &mut qr)
                        };
                        let (v, s) = self.cross_term_sampled(
                            &k,
                            &quad,
                            t3,
                            i1,
                            i2,
                            sink.as_deref_mut(),
                        )?;
                        shots_used += s;
                        level2 += v;
                    }
                    let f_k = if reduction {
                        level2 / t2 as f64
                    } else {
                        level2 / t2 as f64 / scale // 4^D × mean
                    };
                    per_k.push((k, f_k));
                    level1 += f_k;
                }
                level1 / t1 as f64
            }
        };

        let estimate = FidelityEstimate {
            f_est,
            mode: self.config.mode,
            n,
            m: self.m(),
            denseness: d,
            t1,
            t2,
            t3,
            epsilon: self.config.epsilon,
            delta: self.config.delta,
            seed: self.config.seed,
            shots_used,
            reduction_applied: reduction,
            out_of_range: f_est < -1e-12 || f_est > 1.0 + 1e-12,
            per_k,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        Ok((estimate, records))
    }
}

/// Direct estimation of Re Tr[ρ_out ŝ_k] for Clifford targets: ŝ_k is a
/// signed Pauli product, so each qubit is measured in its local Pauli
/// basis and the ±1 eigenvalues are multiplied. The identity selector
/// returns 1 with no measurements.
pub fn direct_pauli_estimate(
    target: &Circuit,
    k: &Bits,
    shots: u64,
    config: &EstimatorConfig,
) -> Result<f64> {
    use crate::decompose::Pauli;
    config.validate()?;
    let pauli = decompose::stabilizer_pauli_string(target, k)?;
    if pauli.is_identity() {
        return Ok(pauli.sign as f64);
    }
    if shots == 0 {
        return Err(Error::validation("direct estimation needs at least one shot"));
    }
    let n = target.n_qubits();
    let mut measured: Vec<usize> = Vec::new();
    let mut basis_rotation = Circuit::empty(n);
    for (idx, p) in pauli.ops.iter().enumerate() {
        let q = idx + 1;
        match p {
            Pauli::I => continue,
            Pauli::X => basis_rotation.push(Gate::single(q, gates::h()))?,
            Pauli::Y => {
                basis_rotation.push(Gate::single(q, gates::sdg()))?;
                basis_rotation.push(Gate::single(q, gates::h()))?;
            }
            Pauli::Z => {}
        }
        measured.push(q);
    }
    let seed = config.seed;
    let sum: i64 = (0..shots)
        .into_par_iter()
        .map(|s| -> Result<i64> {
            let mut rng = stream_rng(seed, DOM_DIRECT, k.value(), 0, s);
            let mut sv = Statevector::zero(n);
            sv.apply_circuit(target, &config.state_noise, &mut rng)?;
            sv.apply_circuit(&basis_rotation, &config.noise, &mut rng)?;
            let bits = sv.measure_z(&measured, &mut rng, config.noise.readout_flip)?;
            let parity = bits.iter().filter(|&&x| x).count() % 2 == 1;
            Ok(if parity { -1 } else { 1 })
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(pauli.sign as f64 * sum as f64 / shots as f64)
}
