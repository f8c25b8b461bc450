//! Transverse-field Ising system and its coupling to damped ancilla modes.

use ndarray::Array2;

use serde::{Deserialize, Serialize};

use crate::bathlib::{
    fit_matsubara, to_pseudomodes, ExpFitResult, FitWindow, PseudomodeParams, UnderdampedBath,
};
use crate::tensorops::{
    annihilation_matrix, degeneracy_tol, eig_hermitian, kron, pauli, EigDecomp, Op, PauliAxis,
    SpaceLayout, C64, ONE,
};
use crate::{Error, Result};

/// `H_s = g Σ σ_z^{(j)} − J Σ σ_x^{(j)} σ_x^{(j+1)}` with open boundaries,
/// probed through `Q = c_x σ_x + c_y σ_y + c_z σ_z` on the last site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsingSpec {
    pub n_sites: usize,
    pub g: f64,
    pub j: f64,
    pub q_coeffs: [f64; 3],
}

pub const DEFAULT_Q_COEFFS: [f64; 3] = [1.0, 1.1, 0.9];

impl IsingSpec {
    pub fn new(n_sites: usize, g: f64, j: f64) -> Result<Self> {
        Self::with_q(n_sites, g, j, DEFAULT_Q_COEFFS)
    }

    pub fn with_q(n_sites: usize, g: f64, j: f64, q_coeffs: [f64; 3]) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::Argument(format!(
                "Ising chain needs at least 2 sites, got {n_sites}"
            )));
        }
        if !(g > 0.0) {
            return Err(Error::Argument(format!(
                "transverse field g must be positive, got {g}"
            )));
        }
        Ok(Self {
            n_sites,
            g,
            j,
            q_coeffs,
        })
    }

    pub fn layout(&self) -> SpaceLayout {
        SpaceLayout::qubits(self.n_sites).expect("qubit layout is always valid")
    }
}

pub fn build_ising(spec: &IsingSpec) -> Result<Op> {
    build_ising_raw(spec.n_sites, spec.g, spec.j)
}

/// Same Hamiltonian without the `g > 0` requirement (used for limits).
pub fn build_ising_raw(n_sites: usize, g: f64, j: f64) -> Result<Op> {
    let layout = SpaceLayout::qubits(n_sites)?;
    let mut h = Op::zeros(&layout);
    for site in 0..n_sites {
        h = &h + &(&pauli(&layout, site, PauliAxis::Z)? * g);
    }
    for site in 0..n_sites.saturating_sub(1) {
        let xx =
            pauli(&layout, site, PauliAxis::X)?.matmul(&pauli(&layout, site + 1, PauliAxis::X)?)?;
        h = &h - &(&xx * j);
    }
    Ok(h)
}

pub fn build_q(spec: &IsingSpec) -> Result<Op> {
    let layout = spec.layout();
    let last = spec.n_sites - 1;
    let [cx, cy, cz] = spec.q_coeffs;
    let mut q = &pauli(&layout, last, PauliAxis::X)? * cx;
    q = &q + &(&pauli(&layout, last, PauliAxis::Y)? * cy);
    q = &q + &(&pauli(&layout, last, PauliAxis::Z)? * cz);
    Ok(q)
}

/// Ground manifold of a system Hamiltonian.
#[derive(Clone, Debug)]
pub struct GroundInfo {
    pub e_ground: f64,
    /// Gap from the ground manifold to the first level above it.
    pub e01: f64,
    pub projector: Op,
    pub degeneracy: usize,
    pub eig: EigDecomp,
}

/// A level joins the ground manifold when its distance to `E_0` is at most
/// this fraction of the gap to the level above it.
pub const QUASI_DEGENERACY_RATIO: f64 = 0.1;

pub fn ground_info(h_s: &Op) -> Result<GroundInfo> {
    ground_info_with_ratio(h_s, QUASI_DEGENERACY_RATIO)
}

/// Ground manifold with an explicit quasi-degeneracy ratio; `0` keeps only
/// numerically exact degeneracies.
pub fn ground_info_with_ratio(h_s: &Op, ratio: f64) -> Result<GroundInfo> {
    let eig = eig_hermitian(h_s)?;
    let e = &eig.values;
    let e0 = e[0];
    let exact = degeneracy_tol(e0);
    let mut deg = 1;
    while deg < e.len() {
        let spread = e[deg] - e0;
        let joins = if spread <= exact {
            true
        } else {
            match e.get(deg + 1) {
                Some(&next) => spread <= ratio * (next - e[deg]),
                None => false,
            }
        };
        if !joins {
            break;
        }
        deg += 1;
    }
    if deg == e.len() {
        return Err(Error::DegenerateSpectrum(
            "all levels belong to the ground manifold; no gap".into(),
        ));
    }
    let mut projector = Op::zeros(h_s.layout());
    for k in 0..deg {
        projector = &projector + &Op::projector(h_s.layout(), &eig.vector(k))?;
    }
    Ok(GroundInfo {
        e_ground: e0,
        e01: e[deg] - e0,
        projector,
        degeneracy: deg,
        eig,
    })
}

/// Piecewise-constant scale applied to every system–mode coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSchedule {
    segments: Vec<(f64, f64)>,
}

impl Default for CouplingSchedule {
    fn default() -> Self {
        Self {
            segments: vec![(0.0, 1.0)],
        }
    }
}

impl CouplingSchedule {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.first().is_none_or(|&(t0, _)| t0 != 0.0) {
            return Err(Error::Argument(
                "schedule must start with a segment at t = 0".into(),
            ));
        }
        if segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Argument(
                "schedule start times must be strictly increasing".into(),
            ));
        }
        if segments.iter().any(|&(_, s)| !(s >= 0.0)) {
            return Err(Error::Argument(
                "schedule scales must be non-negative".into(),
            ));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// Times at which the scale changes (excluding `t = 0`).
    pub fn switch_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments[1..].iter().map(|s| s.0)
    }

    pub fn is_constant(&self) -> bool {
        self.segments.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

/// Scale of the segment active at `t` (right-continuous).
pub fn coupling_at(schedule: &CouplingSchedule, t: f64) -> f64 {
    schedule
        .segments
        .iter()
        .rev()
        .find(|&&(start, _)| t >= start)
        .map_or(schedule.segments[0].1, |s| s.1)
}

/// System plus damped modes, `H = H_s + Σ ω_j a_j†a_j + Q ⊗ Σ_j λ̄^{p_j} λ_j (a_j + a_j†)`.
#[derive(Clone, Debug)]
pub struct CompositeModel {
    pub layout: SpaceLayout,
    pub system: Op,
    pub q: Op,
    pub modes: Vec<PseudomodeParams>,
    pub lambda_bar: C64,
    pub schedule: CouplingSchedule,
    /// `H_s + Σ ω_j a_j†a_j` on the full space.
    pub h_free: Op,
    /// Coupling term at unit schedule scale.
    pub h_int: Op,
    /// `(Γ_j^L, a_j)` on the full space.
    pub collapses: Vec<(f64, Op)>,
}

impl CompositeModel {
    pub fn new(
        system: Op,
        q: Op,
        modes: Vec<PseudomodeParams>,
        lambda_bar: C64,
        schedule: CouplingSchedule,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Argument("at least one mode is required".into()));
        }
        if system.layout() != q.layout() {
            return Err(Error::Dimension("Q must act on the system space".into()));
        }
        for m in &modes {
            PseudomodeParams::new(
                m.omega,
                m.lam,
                m.lindblad_rate,
                m.truncation,
                m.lambda_bar_power,
            )?;
        }
        let truncations: Vec<usize> = modes.iter().map(|m| m.truncation).collect();
        let mode_layout = SpaceLayout::new(
            truncations
                .iter()
                .enumerate()
                .map(|(k, &d)| (format!("a{}", k + 1), d)),
        )?;
        let layout = system.layout().join(&mode_layout)?;
        let ops = ModeOperators::new(&modes, lambda_bar);

        let ds = system.dim();
        let h_free =
            kron(system.data(), &Array2::eye(ops.dim)) + kron(&Array2::eye(ds), &ops.number_energy);
        let h_int = kron(q.data(), &ops.coupling);
        let collapses = modes
            .iter()
            .zip(&ops.lowering)
            .map(|(m, a)| {
                Ok((
                    m.lindblad_rate,
                    Op::new(layout.clone(), kron(&Array2::eye(ds), a))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            h_free: Op::new(layout.clone(), h_free)?,
            h_int: Op::new(layout.clone(), h_int)?,
            layout,
            system,
            q,
            modes,
            lambda_bar,
            schedule,
            collapses,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.system.dim()
    }

    pub fn mode_dim(&self) -> usize {
        self.modes.iter().map(|m| m.truncation).product()
    }

    /// Coupling prefactor `λ̄^{p_j} λ_j` of each mode.
    pub fn coupling_amplitudes(&self) -> Vec<C64> {
        self.modes
            .iter()
            .map(|m| self.lambda_bar.powi(m.lambda_bar_power as i32) * m.lam)
            .collect()
    }

    /// Hamiltonian at unit coupling scale.
    pub fn h_total(&self) -> Op {
        &self.h_free + &self.h_int
    }

    /// Hamiltonian with the schedule scale active at `t`.
    pub fn h_at(&self, t: f64) -> Op {
        &self.h_free + &(&self.h_int * coupling_at(&self.schedule, t))
    }

    pub fn is_physical(&self) -> bool {
        self.lambda_bar.im == 0.0
    }

    /// `ρ_s ⊗ |0…0⟩⟨0…0|`.
    pub fn product_with_vacuum(&self, rho_s: &Op) -> Result<Op> {
        if rho_s.layout() != self.system.layout() {
            return Err(Error::Dimension(
                "initial system state does not match the system space".into(),
            ));
        }
        let dm = self.mode_dim();
        let mut vac = Array2::zeros((dm, dm));
        vac[[0, 0]] = ONE;
        Op::new(self.layout.clone(), kron(rho_s.data(), &vac))
    }
}

/// Mode-space operators (mode factors only, flattened in declaration order).
#[derive(Clone, Debug)]
pub(crate) struct ModeOperators {
    pub dim: usize,
    /// Lowering operator of each mode.
    pub lowering: Vec<Array2<C64>>,
    /// `Σ ω_j a_j†a_j`.
    pub number_energy: Array2<C64>,
    /// `X = Σ_j λ̄^{p_j} λ_j (a_j + a_j†)` at unit scale.
    pub coupling: Array2<C64>,
}

impl ModeOperators {
    pub fn new(modes: &[PseudomodeParams], lambda_bar: C64) -> Self {
        let dims: Vec<usize> = modes.iter().map(|m| m.truncation).collect();
        let dim: usize = dims.iter().product();
        let mut lowering = Vec::with_capacity(modes.len());
        for k in 0..modes.len() {
            let left: usize = dims[..k].iter().product();
            let right: usize = dims[k + 1..].iter().product();
            lowering.push(kron(
                &kron(&Array2::eye(left), &annihilation_matrix(dims[k])),
                &Array2::eye(right),
            ));
        }
        let mut number_energy = Array2::zeros((dim, dim));
        let mut coupling = Array2::<C64>::zeros((dim, dim));
        for (m, a) in modes.iter().zip(&lowering) {
            let ad = a.t().mapv(|z| z.conj());
            number_energy = number_energy + ad.dot(a).mapv(|z| z * m.omega);
            let amp = lambda_bar.powi(m.lambda_bar_power as i32) * m.lam;
            coupling = coupling + (a + &ad).mapv(|z| z * amp);
        }
        Self {
            dim,
            lowering,
            number_energy,
            coupling,
        }
    }
}

/// Assemble the system + ancilla model for the Ising chain.
pub fn assemble(
    spec: &IsingSpec,
    modes: &[PseudomodeParams],
    lambda_bar: C64,
    schedule: CouplingSchedule,
) -> Result<CompositeModel> {
    CompositeModel::new(
        build_ising(spec)?,
        build_q(spec)?,
        modes.to_vec(),
        lambda_bar,
        schedule,
    )
}

/// Resonance of the bath, absolute or relative to the system gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Omega0 {
    Absolute(f64),
    E01Multiple(f64),
}

/// Bath width, absolute or relative to the resonance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Width {
    Absolute(f64),
    Omega0Multiple(f64),
}

/// Bath parameters that may depend on the system gap; `λ = prefactor·g·√Ω`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BathRecipe {
    pub omega0: Omega0,
    pub gamma: Width,
    pub lambda_prefactor: f64,
    pub beta: f64,
}

impl BathRecipe {
    pub fn resolve(&self, e01: f64, g: f64) -> Result<UnderdampedBath> {
        let omega0 = match self.omega0 {
            Omega0::Absolute(w) => w,
            Omega0::E01Multiple(k) => k * e01,
        };
        let gamma = match self.gamma {
            Width::Absolute(w) => w,
            Width::Omega0Multiple(k) => k * omega0,
        };
        UnderdampedBath::with_lambda_prefactor(self.lambda_prefactor * g, gamma, omega0, self.beta)
    }
}

/// Everything needed to build the ancilla model for one system.
#[derive(Clone, Debug)]
pub struct PreparedBath {
    pub ground: GroundInfo,
    pub bath: UnderdampedBath,
    pub fit: ExpFitResult,
    pub modes: Vec<PseudomodeParams>,
}

/// Ground info, resolved bath, Matsubara fit and pseudomode parameters.
pub fn prepare_bath(
    spec: &IsingSpec,
    recipe: &BathRecipe,
    n_fit_terms: usize,
    window: FitWindow,
    truncations: &[usize],
) -> Result<PreparedBath> {
    let ground = ground_info(&build_ising(spec)?)?;
    let bath = recipe.resolve(ground.e01, spec.g)?;
    let fit = fit_matsubara(&bath, n_fit_terms, window)?;
    let modes = to_pseudomodes(&bath, &fit, truncations)?;
    Ok(PreparedBath {
        ground,
        bath,
        fit,
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorops::{I, ZERO};
    use approx::assert_abs_diff_eq;

    fn eigenvalues(h: &Op) -> Vec<f64> {
        eig_hermitian(h).unwrap().values
    }

    #[test]
    fn two_site_limits() {
        let e = eigenvalues(&build_ising(&IsingSpec::new(2, 1.0, 0.0).unwrap()).unwrap());
        for (got, want) in e.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        let e = eigenvalues(&build_ising_raw(2, 0.0, 1.0).unwrap());
        for (got, want) in e.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(IsingSpec::new(1, 1.0, 1.0).is_err());
        assert!(IsingSpec::new(3, 0.0, 1.0).is_err());
    }

    #[test]
    fn coupling_operator() {
        let spec = IsingSpec::new(3, 1.0, 5.0).unwrap();
        let q = build_q(&spec).unwrap();
        assert!(q.hermiticity_defect() < 1e-15);
        assert!(q.trace().norm() < 1e-14);
        let norm = (1.0f64 + 1.21 + 0.81).sqrt();
        let e = eigenvalues(&q);
        assert!(e[..4].iter().all(|x| (x + norm).abs() < 1e-12));
        assert!(e[4..].iter().all(|x| (x - norm).abs() < 1e-12));
        let plain = IsingSpec::with_q(3, 1.0, 5.0, [1.0, 0.0, 0.0]).unwrap();
        let x = pauli(&plain.layout(), 2, PauliAxis::X).unwrap();
        assert_eq!(build_q(&plain).unwrap().max_diff(&x).unwrap(), 0.0);
    }

    #[test]
    fn ground_info_of_two_site_ferromagnet() {
        let gi = ground_info(&build_ising_raw(2, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(gi.degeneracy, 2);
        assert_abs_diff_eq!(gi.e01, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gi.projector.trace().re, 2.0, epsilon = 1e-12);
        let p2 = gi.projector.matmul(&gi.projector).unwrap();
        assert!(p2.max_diff(&gi.projector).unwrap() < 1e-9);
    }

    #[test]
    fn fully_degenerate_spectrum_is_rejected() {
        let l = SpaceLayout::qubits(2).unwrap();
        assert!(matches!(
            ground_info(&Op::identity(&l)),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn exact_ratio_keeps_split_doublet_apart() {
        let h = build_ising(&IsingSpec::new(5, 1.0, 5.0).unwrap()).unwrap();
        assert_eq!(ground_info(&h).unwrap().degeneracy, 2);
        assert_eq!(ground_info_with_ratio(&h, 0.0).unwrap().degeneracy, 1);
    }

    #[test]
    fn schedule_lookup() {
        let s = CouplingSchedule::default();
        assert_eq!(coupling_at(&s, 0.0), 1.0);
        assert_eq!(coupling_at(&s, 1e6), 1.0);
        let q = CouplingSchedule::new(vec![(0.0, 1.0), (800.0, 0.478)]).unwrap();
        assert_eq!(coupling_at(&q, 799.0), 1.0);
        assert_eq!(coupling_at(&q, 800.0), 0.478);
        assert!(CouplingSchedule::new(vec![(1.0, 1.0)]).is_err());
        assert!(CouplingSchedule::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(CouplingSchedule::new(vec![(0.0, -1.0)]).is_err());
    }

    fn modes() -> Vec<PseudomodeParams> {
        vec![
            PseudomodeParams::new(1.3, 0.4, 0.9, 3, 0).unwrap(),
            PseudomodeParams::new(0.0, 0.2, 1.5, 2, 1).unwrap(),
            PseudomodeParams::new(0.0, 0.1, 6.0, 2, 1).unwrap(),
        ]
    }

    #[test]
    fn physical_model_is_hermitian() {
        let spec = IsingSpec::new(3, 1.0, 2.0).unwrap();
        let m = assemble(&spec, &modes(), ONE, CouplingSchedule::default()).unwrap();
        assert_eq!(m.layout.total_dim(), 8 * 12);
        assert!(m.h_total().hermiticity_defect() < 1e-12);
        assert!(assemble(&spec, &[], ONE, CouplingSchedule::default()).is_err());
    }

    #[test]
    fn imaginary_lambda_bar_antihermitian_part() {
        let spec = IsingSpec::new(2, 1.0, 2.0).unwrap();
        let md = modes();
        let m = assemble(&spec, &md, I, CouplingSchedule::default()).unwrap();
        let h = m.h_total();
        let anti = (&h - &h.dagger()).scale(C64::new(0.5, 0.0));
        // i·Q ⊗ Σ_{j≥2} λ_j (a_j + a_j†)
        let ops = ModeOperators::new(&md, ONE);
        let mut x = Array2::<C64>::zeros((ops.dim, ops.dim));
        for (mm, a) in md.iter().zip(&ops.lowering).skip(1) {
            x = x + (a + &a.t().mapv(|z| z.conj())).mapv(|z| z * mm.lam);
        }
        let expected = kron(m.q.data(), &x).mapv(|z| z * I);
        let diff = anti.data() - &expected;
        assert!(diff.iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn parity_conserved_only_without_symmetry_breaking() {
        let md = modes();
        for (coeffs, conserved) in [([1.0, 0.0, 0.0], true), (DEFAULT_Q_COEFFS, false)] {
            let spec = IsingSpec::with_q(3, 1.0, 2.0, coeffs).unwrap();
            let m = assemble(&spec, &md, ONE, CouplingSchedule::default()).unwrap();
            let dims: Vec<usize> = md.iter().map(|m| m.truncation).collect();
            let total_quanta = |flat: usize| {
                let mut rem = flat;
                let mut sum = 0;
                for &d in dims.iter().rev() {
                    sum += rem % d;
                    rem /= d;
                }
                sum
            };
            let spin_parity: Array2<C64> = (0..3)
                .map(|s| pauli(&spec.layout(), s, PauliAxis::Z).unwrap().into_data())
                .reduce(|a, b| a.dot(&b))
                .unwrap();
            let mode_parity =
                Array2::from_diag(&ndarray::Array1::from_iter((0..m.mode_dim()).map(|k| {
                    if total_quanta(k) % 2 == 0 {
                        ONE
                    } else {
                        -ONE
                    }
                })));
            let p = Op::new(m.layout.clone(), kron(&spin_parity, &mode_parity)).unwrap();
            let c = m.h_total().commutator(&p).unwrap().max_abs();
            assert_eq!(c < 1e-12, conserved, "coeffs {coeffs:?}: |[H, P]| = {c}");
        }
    }

    #[test]
    fn coupling_is_linear_in_lambda_bar() {
        let spec = IsingSpec::new(2, 1.0, 2.0).unwrap();
        let md = modes();
        let h0 = assemble(&spec, &md, ZERO, CouplingSchedule::default())
            .unwrap()
            .h_total();
        let d1 = &assemble(&spec, &md, ONE, CouplingSchedule::default())
            .unwrap()
            .h_total()
            - &h0;
        let z = C64::new(0.3, -0.7);
        let dz = &assemble(&spec, &md, z, CouplingSchedule::default())
            .unwrap()
            .h_total()
            - &h0;
        // The resonant mode carries no λ̄, so subtract its contribution first.
        let mut only_first = md.clone();
        for m in only_first.iter_mut().skip(1) {
            m.lam = 0.0;
        }
        let res = &assemble(&spec, &only_first, ONE, CouplingSchedule::default())
            .unwrap()
            .h_total()
            - &h0;
        let lin1 = &d1 - &res;
        let linz = &dz - &res;
        assert!(linz.max_diff(&lin1.scale(z)).unwrap() < 1e-13);
    }
}
