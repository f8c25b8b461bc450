//! Reference states: thermal, bath-connected thermal and hybridized ground states.

use std::collections::VecDeque;

use ndarray::Array2;

use super::fidelity_subspace;
use crate::bathlib::PseudomodeParams;
use crate::modelkit::{CompositeModel, CouplingSchedule, GroundInfo};
use crate::tensorops::{degeneracy_tol, eig_hermitian, eig_hermitian_matrix, Op, C64, ONE};
use crate::{Error, Result};

/// `e^{−βH} / Tr e^{−βH}`.
pub fn gibbs_state(h_s: &Op, beta: f64) -> Result<Op> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Argument(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    let eig = eig_hermitian(h_s)?;
    let all: Vec<usize> = (0..eig.dim()).collect();
    Op::new(h_s.layout().clone(), boltzmann(&eig, beta, &all))
}

fn boltzmann(eig: &crate::tensorops::EigDecomp, beta: f64, levels: &[usize]) -> Array2<C64> {
    let e0 = eig.values[0];
    let d = eig.dim();
    let weights: Vec<f64> = levels
        .iter()
        .map(|&k| (-beta * (eig.values[k] - e0)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let mut diag = Array2::zeros((d, d));
    for (&k, w) in levels.iter().zip(&weights) {
        diag[[k, k]] = C64::new(w / z, 0.0);
    }
    eig.from_eigenbasis(&diag)
}

/// Gibbs state restricted to the levels reachable from the ground manifold
/// through transitions with `|⟨ψ_i|Q|ψ_j⟩|² > weight_threshold`. Returns the
/// state and the reachable levels.
pub fn restricted_gibbs_state(
    h_s: &Op,
    q: &Op,
    beta: f64,
    ground: &GroundInfo,
    weight_threshold: f64,
) -> Result<(Op, Vec<usize>)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Argument(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    let eig = &ground.eig;
    let d = eig.dim();
    let qe = eig.to_eigenbasis(q.data());
    let tol = degeneracy_tol(eig.values[0]);
    let mut reached = vec![false; d];
    let mut queue: VecDeque<usize> = (0..ground.degeneracy).collect();
    queue.iter().for_each(|&k| reached[k] = true);
    while let Some(i) = queue.pop_front() {
        for j in 0..d {
            let linked = (eig.values[i] - eig.values[j]).abs() > tol
                && qe[[i, j]].norm_sqr() > weight_threshold;
            if linked && !reached[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    let levels: Vec<usize> = (0..d).filter(|&k| reached[k]).collect();
    Ok((
        Op::new(h_s.layout().clone(), boltzmann(eig, beta, &levels))?,
        levels,
    ))
}

/// Ground fidelities of the unrestricted and bath-connected Gibbs states.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsReference {
    pub beta: f64,
    pub unrestricted: f64,
    pub restricted: f64,
    pub connected_levels: usize,
}

pub fn gibbs_reference(
    h_s: &Op,
    q: &Op,
    beta: f64,
    ground: &GroundInfo,
    weight_threshold: f64,
) -> Result<GibbsReference> {
    let full = gibbs_state(h_s, beta)?;
    let (restricted, levels) = restricted_gibbs_state(h_s, q, beta, ground, weight_threshold)?;
    Ok(GibbsReference {
        beta,
        unrestricted: fidelity_subspace(&full, ground)?.value,
        restricted: fidelity_subspace(&restricted, ground)?.value,
        connected_levels: levels.len(),
    })
}

/// Ground fidelity of the system part of the ground state of
/// `H_s + ω a†a + λ Q (a + a†)`.
pub fn hybridized_reference(
    system: &Op,
    q: &Op,
    mode: &PseudomodeParams,
    ground: &GroundInfo,
) -> Result<f64> {
    let model = CompositeModel::new(
        system.clone(),
        q.clone(),
        vec![*mode],
        ONE,
        CouplingSchedule::default(),
    )?;
    let eig = eig_hermitian_matrix(model.h_total().data())?;
    let ket = eig.vector(0);
    let full = Op::projector(&model.layout, &ket)?;
    let reduced = crate::tensorops::trace_out_trailing(full.data(), mode.truncation);
    let rho_s = Op::new(system.layout().clone(), reduced)?;
    Ok(fidelity_subspace(&rho_s, ground)?.value)
}

/// `½ Σ |eig(a − b)|`.
pub fn trace_distance(a: &Op, b: &Op) -> Result<f64> {
    let diff = a - b;
    let eig = eig_hermitian_matrix(diff.hermitian_part().data())?;
    Ok(0.5 * eig.values.iter().map(|x| x.abs()).sum::<f64>())
}
