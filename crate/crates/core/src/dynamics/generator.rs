//! The literal pseudo-Lindblad generator on the full space.

use ndarray::Array2;

use crate::modelkit::{coupling_at, CompositeModel};
use crate::tensorops::{kron, trace_out_trailing, Op, C64, I};
use crate::{Error, Result};

/// `−i(Hρ − ρH) + Σ_j Γ_j (a_j ρ a_j† − ½{a_j†a_j, ρ})` with the same `H(t)` on
/// both sides of the commutator.
pub fn generator_apply(model: &CompositeModel, t: f64, rho: &Op) -> Result<Op> {
    if rho.layout() != &model.layout {
        return Err(Error::Dimension(
            "state does not match the model layout".into(),
        ));
    }
    let h = model.h_at(t);
    let jumps = jump_terms(model);
    Op::new(
        model.layout.clone(),
        apply_dense(h.data(), &jumps, rho.data()),
    )
}

/// `(Γ, a, a†a)` for every damped mode.
pub(super) fn jump_terms(model: &CompositeModel) -> Vec<(f64, Array2<C64>, Array2<C64>)> {
    model
        .collapses
        .iter()
        .map(|(rate, a)| {
            let ad = a.dagger();
            (*rate, a.data().clone(), ad.data().dot(a.data()))
        })
        .collect()
}

fn apply_dense(
    h: &Array2<C64>,
    jumps: &[(f64, Array2<C64>, Array2<C64>)],
    rho: &Array2<C64>,
) -> Array2<C64> {
    let mut out = (h.dot(rho) - rho.dot(h)).mapv(|z| -I * z);
    for (rate, a, ada) in jumps {
        let ad = a.t().mapv(|z| z.conj());
        let jump = a.dot(rho).dot(&ad);
        let anti = ada.dot(rho) + rho.dot(ada);
        out = out + (jump - anti.mapv(|z| 0.5 * z)).mapv(|z| z * *rate);
    }
    out
}

/// Dense superoperator on row-major vectorized states, `vec(AρB) = (A ⊗ Bᵀ) vec(ρ)`.
/// Only intended for small spaces.
pub fn liouvillian_matrix(model: &CompositeModel, t: f64) -> Array2<C64> {
    let d = model.layout.total_dim();
    let id = Array2::<C64>::eye(d);
    let h = model.h_at(t).into_data();
    let mut l = (kron(&h, &id) - kron(&id, &h.t().to_owned())).mapv(|z| -I * z);
    for (rate, a, ada) in jump_terms(model) {
        let a_conj = a.mapv(|z| z.conj());
        let term = kron(&a, &a_conj)
            - (kron(&ada, &id) + kron(&id, &ada.t().to_owned())).mapv(|z| 0.5 * z);
        l = l + term.mapv(|z| z * rate);
    }
    l
}

/// Classical RK4 on the literal generator.
pub(crate) struct LiteralRk4 {
    layout: crate::tensorops::SpaceLayout,
    system_layout: crate::tensorops::SpaceLayout,
    h_free: Array2<C64>,
    h_int: Array2<C64>,
    schedule: crate::modelkit::CouplingSchedule,
    jumps: Vec<(f64, Array2<C64>, Array2<C64>)>,
    mode_dim: usize,
    h_max: f64,
    t: f64,
    rho: Array2<C64>,
}

impl LiteralRk4 {
    pub fn new(model: &CompositeModel, rho0: &Op, h_max: f64) -> Self {
        Self {
            layout: model.layout.clone(),
            system_layout: model.system.layout().clone(),
            h_free: model.h_free.data().clone(),
            h_int: model.h_int.data().clone(),
            schedule: model.schedule.clone(),
            jumps: jump_terms(model),
            mode_dim: model.mode_dim(),
            h_max,
            t: 0.0,
            rho: rho0.data().clone(),
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn advance(&mut self, t_end: f64) -> crate::Result<()> {
        for (a, b) in super::frame::constant_pieces(&self.schedule, self.t, t_end) {
            let scale = coupling_at(&self.schedule, a);
            let h = &self.h_free + &self.h_int.mapv(|z| z * scale);
            let n = ((b - a) / self.h_max - 1e-9).ceil().max(1.0) as usize;
            let dt = (b - a) / n as f64;
            for _ in 0..n {
                let f = |r: &Array2<C64>| apply_dense(&h, &self.jumps, r);
                let k1 = f(&self.rho);
                let k2 = f(&(&self.rho + &k1.mapv(|z| z * (0.5 * dt))));
                let k3 = f(&(&self.rho + &k2.mapv(|z| z * (0.5 * dt))));
                let k4 = f(&(&self.rho + &k3.mapv(|z| z * dt)));
                self.rho =
                    &self.rho + &(k1 + (k2 + k3).mapv(|z| 2.0 * z) + k4).mapv(|z| z * (dt / 6.0));
            }
        }
        self.t = t_end;
        Ok(())
    }

    pub fn reduced_system(&self) -> Op {
        let reduced = trace_out_trailing(&self.rho, self.mode_dim);
        Op::new(self.system_layout.clone(), reduced).expect("reduced state matches system layout")
    }

    pub fn trace(&self) -> C64 {
        self.rho.diag().sum()
    }

    pub fn state(&self) -> Op {
        Op::new(self.layout.clone(), self.rho.clone()).expect("state matches layout")
    }
}
