//! Secular Bloch-Redfield (Born-Markov-secular) reference dynamics.
//!
//! With one jump operator `|ψ_i⟩⟨ψ_j|` per transition the equation splits into
//! a Pauli rate equation for the populations and independently decaying
//! coherences, so it is propagated exactly between samples.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use super::{check_grid, Evolution, Probes, Trajectory};
use crate::tensorops::{degeneracy_tol, EigDecomp, Op, C64, I};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    pub gap: f64,
    /// `|⟨ψ_lower|Q|ψ_upper⟩|²`.
    pub weight: f64,
    /// `S(gap)`, clipped at zero.
    pub down_rate: f64,
    /// `S(−gap)`, clipped at zero.
    pub up_rate: f64,
}

#[derive(Clone, Debug)]
pub struct BmsGenerator {
    pub eig: EigDecomp,
    pub transitions: Vec<Transition>,
    /// Largest magnitude removed when clipping a negative spectrum value.
    pub max_rate_clip: f64,
    pub n_clipped: usize,
}

/// Build the transition table for `Q` and spectrum `S`.
pub fn bms_build(eig: &EigDecomp, q: &Op, spectrum: impl Fn(f64) -> f64) -> Result<BmsGenerator> {
    let d = eig.dim();
    if q.dim() != d {
        return Err(Error::Dimension(format!(
            "Q has dimension {} but the spectrum has {d} levels",
            q.dim()
        )));
    }
    let qe = eig.to_eigenbasis(q.data());
    let tol = degeneracy_tol(eig.values[0]);
    let mut transitions = Vec::new();
    let (mut max_rate_clip, mut n_clipped) = (0.0f64, 0usize);
    let mut clip = |s: f64| {
        if s < 0.0 {
            max_rate_clip = max_rate_clip.max(-s);
            n_clipped += 1;
            0.0
        } else {
            s
        }
    };
    for lower in 0..d {
        for upper in lower + 1..d {
            let gap = eig.values[upper] - eig.values[lower];
            if gap <= tol {
                continue;
            }
            let weight = qe[[lower, upper]].norm_sqr();
            let (down, up) = (spectrum(gap), spectrum(-gap));
            if !down.is_finite() || !up.is_finite() {
                return Err(Error::Numeric(format!("spectrum is not finite at ±{gap}")));
            }
            transitions.push(Transition {
                lower,
                upper,
                gap,
                weight,
                down_rate: clip(down),
                up_rate: clip(up),
            });
        }
    }
    Ok(BmsGenerator {
        eig: eig.clone(),
        transitions,
        max_rate_clip,
        n_clipped,
    })
}

impl BmsGenerator {
    /// Pauli rate matrix `W` with `ṗ = W p`.
    pub fn rate_matrix(&self) -> DMatrix<f64> {
        let d = self.eig.dim();
        let mut w = DMatrix::zeros(d, d);
        for tr in &self.transitions {
            let down = tr.weight * tr.down_rate;
            let up = tr.weight * tr.up_rate;
            w[(tr.lower, tr.upper)] += down;
            w[(tr.upper, tr.upper)] -= down;
            w[(tr.upper, tr.lower)] += up;
            w[(tr.lower, tr.lower)] -= up;
        }
        w
    }

    fn propagate(&self, rho: &mut Array2<C64>, dt: f64, w: &DMatrix<f64>) {
        let d = self.eig.dim();
        let p = DVector::from_fn(d, |k, _| rho[[k, k]].re);
        let p = (w * dt).exp() * p;
        let e = &self.eig.values;
        for a in 0..d {
            for b in 0..d {
                if a == b {
                    rho[[a, a]] = C64::new(p[a], 0.0);
                } else {
                    let decay = 0.5 * (w[(a, a)] + w[(b, b)]);
                    rho[[a, b]] *= (-I * (e[a] - e[b]) * dt + decay * dt).exp();
                }
            }
        }
    }
}

/// Evolve `ρ_s` under the secular equation and sample the probes.
pub fn bms_evolve(
    genr: &BmsGenerator,
    rho_s0: &Op,
    t_grid: &[f64],
    probes: &Probes,
) -> Result<Evolution> {
    check_grid(t_grid)?;
    if rho_s0.dim() != genr.eig.dim() {
        return Err(Error::Dimension(
            "initial state does not match the system dimension".into(),
        ));
    }
    let layout = rho_s0.layout().clone();
    let w = genr.rate_matrix();
    let mut rho = genr.eig.to_eigenbasis(rho_s0.data());
    let mut traj = Trajectory::new(probes.names());
    let record = |rho: &Array2<C64>, t: f64, traj: &mut Trajectory| -> Result<Op> {
        let site = Op::new(layout.clone(), genr.eig.from_eigenbasis(rho))?;
        let trace_dev = (site.trace() - 1.0).norm();
        let (values, clip, herm) = probes.measure(&site)?;
        traj.push(t, &values, trace_dev, herm, clip);
        Ok(site)
    };
    let mut last = record(&rho, 0.0, &mut traj)?;
    for win in t_grid.windows(2) {
        genr.propagate(&mut rho, win[1] - win[0], &w);
        last = record(&rho, win[1], &mut traj)?;
    }
    Ok(Evolution {
        trajectory: traj,
        final_state: last,
    })
}

/// Stationary state from the null space of the rate matrix. Coherences
/// between distinct levels vanish in the long-time limit.
pub fn bms_stationary(genr: &BmsGenerator, layout: &crate::tensorops::SpaceLayout) -> Result<Op> {
    let w = genr.rate_matrix();
    let d = w.nrows();
    let svd = w.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD of the rate matrix failed".into()))?;
    let k = (0..d)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .expect("non-empty spectrum");
    let mut p: Vec<f64> = v_t.row(k).iter().copied().collect();
    let sum: f64 = p.iter().sum();
    if sum.abs() < 1e-300 {
        return Err(Error::Numeric("stationary populations sum to zero".into()));
    }
    p.iter_mut().for_each(|x| *x /= sum);
    let diag = Array2::from_shape_fn((d, d), |(a, b)| {
        if a == b {
            C64::new(p[a], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Op::new(layout.clone(), genr.eig.from_eigenbasis(&diag))
}
