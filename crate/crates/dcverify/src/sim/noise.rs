//! Per-gate noise channels: depolarizing, amplitude damping, classical
//! readout flips, and user-supplied Kraus sets keyed by gate label.
//!
//! Channel conventions:
//!
//! * Depolarizing with probability `p` on a `w`-qubit support replaces the
//!   touched marginal by the maximally mixed state:
//!   `ρ → (1-p)·ρ + p·(I/2^w ⊗ Tr_w ρ)`. In Kraus form the identity keeps
//!   weight `1 - p·(4^w - 1)/4^w` and each non-identity Pauli string on
//!   the support carries weight `p/4^w`.
//! * Single-qubit gates draw `p1`, CZ and controlled operations draw `p2`
//!   over their full support; amplitude damping `gamma` acts per touched
//!   qubit after every gate.
//! * `readout_flip` is a classical per-bit flip applied to reported
//!   measurement outcomes only (the post-measurement state collapses on
//!   the true outcome).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::Gate;
use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE, ZERO};

use super::{DensityMatrix, Statevector};

pub type Kraus1q = [[C64; 2]; 2];

#[derive(Debug, Clone, Default)]
pub struct NoiseModel {
    /// Depolarizing probability after each single-qubit gate.
    pub p1: f64,
    /// Depolarizing probability after each CZ (and, with the control
    /// included in the support, after each controlled operation).
    pub p2: f64,
    /// Amplitude-damping parameter applied per touched qubit per gate.
    pub gamma: f64,
    /// Classical bit-flip probability per measured qubit.
    pub readout_flip: f64,
    /// Kraus sets applied instead of the defaults for single-qubit gates
    /// with a matching label.
    pub custom: Vec<(String, Vec<Kraus1q>)>,
    /// Treat inserted cut-artifact Z gates as free (virtual) gates.
    pub skip_cut_artifacts: bool,
}

impl NoiseModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn depolarizing(p1: f64, p2: f64) -> Self {
        Self {
            p1,
            p2,
            ..Self::default()
        }
    }

    pub fn is_noisy(&self) -> bool {
        self.p1 > 0.0
            || self.p2 > 0.0
            || self.gamma > 0.0
            || self.readout_flip > 0.0
            || !self.custom.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p1", self.p1),
            ("p2", self.p2),
            ("gamma", self.gamma),
            ("readout_flip", self.readout_flip),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!(
                    "noise parameter {name} = {v} outside [0, 1]"
                )));
            }
        }
        for (label, set) in &self.custom {
            // Completeness Σ K†K = I.
            let mut acc = linalg::zeros(2);
            for k in set {
                let kd = linalg::dagger(&linalg::mat2_to_dense(k), 2);
                let kk = linalg::matmul(&kd, &linalg::mat2_to_dense(k), 2);
                for (a, b) in acc.iter_mut().zip(kk) {
                    *a += b;
                }
            }
            let dev = linalg::max_abs_diff(&acc, &linalg::eye(2));
            if dev > 1e-10 {
                return Err(Error::validation(format!(
                    "custom Kraus set for {label:?} is not trace preserving (deviation {dev:.3e})"
                )));
            }
        }
        Ok(())
    }

    fn custom_for(&self, label: Option<&str>) -> Option<&[Kraus1q]> {
        let label = label?;
        self.custom
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, set)| set.as_slice())
    }

    pub(crate) fn after_gate_dm(&self, dm: &mut DensityMatrix, gate: &Gate) -> Result<()> {
        match gate {
            Gate::Single { q, u, cut_artifact } => {
                if *cut_artifact && self.skip_cut_artifacts {
                    return Ok(());
                }
                if let Some(set) = self.custom_for(u.label()) {
                    dm.apply_kraus_1q(*q, set);
                    return Ok(());
                }
                self.after_support_dm(dm, &[*q])
            }
            Gate::Cz { c, t } => self.after_support_dm(dm, &[*c, *t]),
        }
    }

    pub(crate) fn after_support_dm(&self, dm: &mut DensityMatrix, support: &[usize]) -> Result<()> {
        let p = if support.len() == 1 { self.p1 } else { self.p2 };
        if p > 0.0 {
            depolarize_dm(dm, support, p);
        }
        if self.gamma > 0.0 {
            for &q in support {
                dm.apply_kraus_1q(q, &amplitude_damping_kraus(self.gamma));
            }
        }
        Ok(())
    }

    pub(crate) fn after_gate_sv(
        &self,
        sv: &mut Statevector,
        gate: &Gate,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        match gate {
            Gate::Single { q, u, cut_artifact } => {
                if *cut_artifact && self.skip_cut_artifacts {
                    return Ok(());
                }
                if let Some(set) = self.custom_for(u.label()) {
                    return stochastic_kraus_1q(sv, *q, set, rng);
                }
                self.after_support_sv(sv, &[*q], rng)
            }
            Gate::Cz { c, t } => self.after_support_sv(sv, &[*c, *t], rng),
        }
    }

    pub(crate) fn after_support_sv(
        &self,
        sv: &mut Statevector,
        support: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let p = if support.len() == 1 { self.p1 } else { self.p2 };
        if p > 0.0 {
            depolarize_sv(sv, support, p, rng);
        }
        if self.gamma > 0.0 {
            for &q in support {
                stochastic_kraus_1q(sv, q, &amplitude_damping_kraus(self.gamma), rng)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn amplitude_damping_kraus(gamma: f64) -> [Kraus1q; 2] {
    [
        [[ONE, ZERO], [ZERO, C64::new((1.0 - gamma).sqrt(), 0.0)]],
        [[ZERO, C64::new(gamma.sqrt(), 0.0)], [ZERO, ZERO]],
    ]
}

fn pauli_mat(code: usize) -> [[C64; 2]; 2] {
    match code {
        1 => linalg::pauli_x(),
        2 => linalg::pauli_y(),
        3 => linalg::pauli_z(),
        _ => linalg::pauli_i(),
    }
}

/// Exact depolarizing channel on a density matrix: uniform Pauli twirl at
/// total error weight `p` over the support.
pub(crate) fn depolarize_dm(dm: &mut DensityMatrix, support: &[usize], p: f64) {
    let branches = 1usize << (2 * support.len());
    let weight = C64::new(p / branches as f64, 0.0);
    let keep = C64::new(1.0 - p, 0.0);
    let original = dm.clone();
    for e in dm.elems.iter_mut() {
        *e *= keep;
    }
    for code in 0..branches {
        let mut branch = original.clone();
        for (pos, &q) in support.iter().enumerate() {
            let pc = (code >> (2 * pos)) & 3;
            if pc != 0 {
                branch.conjugate_1q(q, &pauli_mat(pc));
            }
        }
        for (acc, b) in dm.elems.iter_mut().zip(&branch.elems) {
            *acc += weight * b;
        }
    }
}

/// Stochastic unraveling of the depolarizing channel on a statevector.
pub(crate) fn depolarize_sv(sv: &mut Statevector, support: &[usize], p: f64, rng: &mut ChaCha8Rng) {
    if rng.gen::<f64>() >= p {
        return;
    }
    let branches = 1usize << (2 * support.len());
    let code = rng.gen_range(0..branches);
    for (pos, &q) in support.iter().enumerate() {
        let pc = (code >> (2 * pos)) & 3;
        if pc != 0 {
            sv.apply_1q_mat(q, &pauli_mat(pc));
        }
    }
}

/// Samples one Kraus branch by Born weight and renormalizes.
pub(crate) fn stochastic_kraus_1q(
    sv: &mut Statevector,
    q: usize,
    kraus: &[Kraus1q],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut best: Option<(f64, Statevector)> = None;
    for k in kraus {
        let mut branch = sv.clone();
        branch.apply_1q_mat(q, k);
        let prob = branch.norm_sq();
        if best.as_ref().map_or(true, |(bp, _)| prob > *bp) {
            best = Some((prob, branch.clone()));
        }
        cum += prob;
        if u < cum {
            if prob <= 1e-300 {
                return Err(Error::internal("selected a zero-probability Kraus branch"));
            }
            let scale = C64::new(1.0 / prob.sqrt(), 0.0);
            for a in branch.amps.iter_mut() {
                *a *= scale;
            }
            *sv = branch;
            return Ok(());
        }
    }
    // Float leakage (Σ prob marginally below u): take the dominant branch.
    let (prob, mut branch) =
        best.ok_or_else(|| Error::internal("empty Kraus set"))?;
    if prob <= 1e-300 {
        return Err(Error::internal("selected a zero-probability Kraus branch"));
    }
    let scale = C64::new(1.0 / prob.sqrt(), 0.0);
    for a in branch.amps.iter_mut() {
        *a *= scale;
    }
    *sv = branch;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn amplitude_damping_is_trace_preserving() {
        let set = amplitude_damping_kraus(0.3);
        let mut acc = linalg::zeros(2);
        for k in set {
            let kd = linalg::dagger(&linalg::mat2_to_dense(&k), 2);
            let kk = linalg::matmul(&kd, &linalg::mat2_to_dense(&k), 2);
            for (a, b) in acc.iter_mut().zip(kk) {
                *a += b;
            }
        }
        assert!(linalg::max_abs_diff(&acc, &linalg::eye(2)) < 1e-12);
    }

    #[test]
    fn amplitude_damping_drains_excited_state() {
        let mut dm = DensityMatrix::zero_state(1);
        dm.apply_1q(1, &crate::circuit::gates::x());
        dm.apply_kraus_1q(1, &amplitude_damping_kraus(1.0));
        // Fully damped |1⟩⟨1| becomes |0⟩⟨0|.
        assert!((dm.diagonal_probs()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn custom_kraus_validation_rejects_non_tp_sets() {
        let mut nm = NoiseModel::ideal();
        nm.custom.push((
            "H".to_string(),
            vec![[[C64::new(0.5, 0.0), ZERO], [ZERO, C64::new(0.5, 0.0)]]],
        ));
        assert!(nm.validate().is_err());
    }

    #[test]
    fn two_qubit_depolarizing_mixes_pair() {
        let mut dm = DensityMatrix::zero_state(2);
        depolarize_dm(&mut dm, &[1, 2], 1.0);
        assert!(
            linalg::max_abs_diff(dm.elements(), DensityMatrix::maximally_mixed(2).elements())
                < 1e-12
        );
    }

    #[test]
    fn stochastic_damping_matches_channel_statistics() {
        let gamma = 0.4;
        let shots = 50_000;
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut ones = 0u32;
        for _ in 0..shots {
            let mut sv = Statevector::basis(1, 1);
            stochastic_kraus_1q(&mut sv, 1, &amplitude_damping_kraus(gamma), &mut r).unwrap();
            if sv.measure_z(&[1], &mut r, 0.0).unwrap()[0] {
                ones += 1;
            }
        }
        let p = ones as f64 / shots as f64;
        let expect = 1.0 - gamma;
        let sigma = (expect * (1.0 - expect) / shots as f64).sqrt();
        assert!((p - expect).abs() < 4.0 * sigma, "p = {p}");
    }
}
