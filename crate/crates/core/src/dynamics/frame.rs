//! Exponential RK4 (ETDRK4) in the eigenbasis of the free generator.
//!
//! The free part (system Hamiltonian and damped modes) is
//! diagonal in the coordinates `u = S⁻¹ρ`, where `ρ` is written in the
//! eigenbasis of `H_s` times the Fock basis and `S` is the tensor product
//! of the per-mode eigenvector maps. The coupling `−i s(t)[Q ⊗ X, ρ]` is
//! evaluated in `ρ` coordinates. Row/column index of both is `s · d_m + m`
//! (system level `s`, flattened Fock index `m`).
//!
//! A stationary state of the full generator is an exact fixed point of
//! the step, whatever the step size.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Zip};

use crate::modelkit::{coupling_at, CompositeModel, CouplingSchedule, ModeOperators};
use crate::tensorops::{
    eig_hermitian, max_abs, trace_out_trailing, Op, SpaceLayout, C64, I, ONE, ZERO,
};
use crate::{Error, Result};

/// Sub-intervals of `[t0, t1]` on which the schedule scale is constant.
pub(crate) fn constant_pieces(schedule: &CouplingSchedule, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![t0];
    cuts.extend(schedule.switch_times().filter(|&ts| ts > t0 && ts < t1));
    cuts.push(t1);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    target: (u32, u32),
    source: (u32, u32),
    coeff: C64,
}

/// Elementwise ETDRK4 coefficients for one step size.
#[derive(Clone, Debug)]
struct StepCoeffs {
    h: f64,
    e: Array2<C64>,
    e_half: Array2<C64>,
    q: Array2<C64>,
    b1: Array2<C64>,
    b23: Array2<C64>,
    b4: Array2<C64>,
}

pub struct FramePropagator {
    layout: SpaceLayout,
    system_layout: SpaceLayout,
    basis: Array2<C64>,
    q_frame: Array2<C64>,
    q_frame_t: Array2<C64>,
    /// Nonzero entries `(row, col, value)` of the mode coupling `X`.
    coupling: Vec<(usize, usize, C64)>,
    /// Diagonal of the mode parity `P` when the state satisfies `ρ† = PρP`.
    reflection: Option<Vec<f64>>,
    /// Eigenvalue of the free generator for every entry of `u`.
    rates: Array2<C64>,
    /// `ρ = S u` and `u = S⁻¹ ρ`, block by block.
    to_rho: Vec<Entry>,
    to_u: Vec<Entry>,
    mode_dim: usize,
    schedule: CouplingSchedule,
    h_max: f64,
    coeffs: Vec<StepCoeffs>,
    t: f64,
    u: Array2<C64>,
}

impl FramePropagator {
    pub fn new(model: &CompositeModel, rho0: &Op, h_max: f64) -> Result<Self> {
        if rho0.layout() != &model.layout {
            return Err(Error::Dimension(
                "initial state does not match the model layout".into(),
            ));
        }
        if !(h_max > 0.0) {
            return Err(Error::Argument(format!(
                "step size must be positive, got {h_max}"
            )));
        }
        let eig = eig_hermitian(&model.system)?;
        let q_frame = eig.to_eigenbasis(model.q.data());
        let ops = ModeOperators::new(&model.modes, model.lambda_bar);
        let coupling = ops
            .coupling
            .indexed_iter()
            .filter(|(_, z)| **z != ZERO)
            .map(|((r, c), z)| (r, c, *z))
            .collect();
        let dims: Vec<usize> = model.modes.iter().map(|m| m.truncation).collect();
        let (forward, inverse): (Vec<_>, Vec<_>) =
            dims.iter().map(|&n| mode_eigenvectors(n)).unzip();
        let mode_rates = mode_rate_table(model, &dims);
        let e = &eig.values;
        let dm = ops.dim;
        let d = e.len() * dm;
        let rates = Array2::from_shape_fn((d, d), |(r, c)| {
            -I * (e[r / dm] - e[c / dm]) + mode_rates[(r % dm) * dm + c % dm]
        });
        let mut p = Self {
            layout: model.layout.clone(),
            system_layout: model.system.layout().clone(),
            q_frame_t: q_frame.t().to_owned(),
            q_frame,
            coupling,
            reflection: None,
            rates,
            to_rho: combine(&dims, &forward),
            to_u: combine(&dims, &inverse),
            mode_dim: dm,
            schedule: model.schedule.clone(),
            h_max,
            coeffs: Vec::new(),
            t: 0.0,
            u: Array2::zeros((0, 0)),
            basis: eig.vectors,
        };
        let ud = p.basis.t().mapv(|z| z.conj());
        let rho = p.conjugate_system(&ud, rho0.data());
        p.reflection = reflection_signs(model).filter(|signs| {
            let sign = |r: usize| signs[r % dm];
            let defect = (0..d)
                .flat_map(|r| (0..d).map(move |c| (r, c)))
                .map(|(r, c)| (rho[[r, c]].conj() - sign(r) * sign(c) * rho[[c, r]]).norm())
                .fold(0.0, f64::max);
            defect <= 1e-14 * max_abs(&rho).max(1.0)
        });
        p.u = p.apply_entries(&p.to_u, &rho);
        Ok(p)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `(A ⊗ I) ρ (A ⊗ I)†` for a system-space matrix `A`.
    fn conjugate_system(&self, a: &Array2<C64>, rho: &Array2<C64>) -> Array2<C64> {
        let left = left_system(a, rho, self.mode_dim);
        let ad_t = a.mapv(|z| z.conj());
        transposed(&left_system(&ad_t, &transposed(&left), self.mode_dim))
    }

    pub fn advance(&mut self, t_end: f64) -> Result<()> {
        if t_end < self.t {
            return Err(Error::Argument(format!(
                "cannot integrate backwards from {} to {t_end}",
                self.t
            )));
        }
        for (a, b) in constant_pieces(&self.schedule, self.t, t_end) {
            let scale = coupling_at(&self.schedule, a);
            let n = ((b - a) / self.h_max - 1e-9).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            let k = self.step_coeffs(h);
            for _ in 0..n {
                self.u = self.step(&self.coeffs[k], scale);
            }
        }
        self.t = t_end;
        if self
            .u
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Integration(format!(
                "state became non-finite before t = {t_end}; reduce the step size"
            )));
        }
        Ok(())
    }

    fn step(&self, c: &StepCoeffs, scale: f64) -> Array2<C64> {
        let u = &self.u;
        if scale == 0.0 {
            return &c.e * u;
        }
        let half = |x: &Array2<C64>, n: &Array2<C64>| {
            let mut out = Array2::zeros(x.raw_dim());
            Zip::from(&mut out)
                .and(x)
                .and(&c.e_half)
                .and(n)
                .and(&c.q)
                .for_each(|o, &x, &e, &n, &q| {
                    *o = e * x + q * n;
                });
            out
        };
        let nu = self.nonlinear(u, scale);
        let a = half(u, &nu);
        let na = self.nonlinear(&a, scale);
        let b = half(u, &na);
        let nb = self.nonlinear(&b, scale);
        let mut mix = nb.clone();
        Zip::from(&mut mix)
            .and(&nu)
            .for_each(|m, &n| *m = 2.0 * *m - n);
        let cc = half(&a, &mix);
        let nc = self.nonlinear(&cc, scale);
        let mut out = Array2::zeros(u.raw_dim());
        Zip::from(&mut out)
            .and(u)
            .and(&c.e)
            .and(&nu)
            .and(&c.b1)
            .for_each(|o, &x, &e, &n1, &b1| {
                *o = e * x + b1 * n1;
            });
        Zip::from(&mut out)
            .and(&na)
            .and(&nb)
            .and(&c.b23)
            .for_each(|o, &n2, &n3, &b| *o += b * (n2 + n3));
        Zip::from(&mut out)
            .and(&nc)
            .and(&c.b4)
            .for_each(|o, &n4, &b| *o += b * n4);
        out
    }

    /// The coupling term in `u` coordinates.
    fn nonlinear(&self, u: &Array2<C64>, scale: f64) -> Array2<C64> {
        let rho = self.apply_entries(&self.to_rho, u);
        self.apply_entries(&self.to_u, &self.interaction(&rho, scale))
    }

    fn step_coeffs(&mut self, h: f64) -> usize {
        if let Some(k) = self.coeffs.iter().position(|c| c.h == h) {
            return k;
        }
        let mut c = StepCoeffs {
            h,
            e: Array2::zeros(self.rates.raw_dim()),
            e_half: Array2::zeros(self.rates.raw_dim()),
            q: Array2::zeros(self.rates.raw_dim()),
            b1: Array2::zeros(self.rates.raw_dim()),
            b23: Array2::zeros(self.rates.raw_dim()),
            b4: Array2::zeros(self.rates.raw_dim()),
        };
        let hc = C64::new(h, 0.0);
        for (ix, &lam) in self.rates.indexed_iter() {
            let [p0, p1, p2, p3] = phi(hc * lam);
            let [h0, h1, _, _] = phi(0.5 * hc * lam);
            c.e[ix] = p0;
            c.e_half[ix] = h0;
            c.q[ix] = 0.5 * hc * h1;
            c.b1[ix] = hc * (p1 - 3.0 * p2 + 4.0 * p3);
            c.b23[ix] = hc * (2.0 * p2 - 4.0 * p3);
            c.b4[ix] = hc * (4.0 * p3 - p2);
        }
        if self.coeffs.len() >= 4 {
            self.coeffs.remove(0);
        }
        self.coeffs.push(c);
        self.coeffs.len() - 1
    }
    /// `−i s [Q̃ ⊗ X, ρ]`.
    fn interaction(&self, rho: &Array2<C64>, scale: f64) -> Array2<C64> {
        let f = -I * scale;
        let left = self.apply_coupling(&self.q_frame, rho);
        let Some(signs) = &self.reflection else {
            // ρV = ((Q̃ᵀ ⊗ X) ρᵀ)ᵀ since X is symmetric.
            let right = transposed(&self.apply_coupling(&self.q_frame_t, &transposed(rho)));
            let mut out = left;
            ndarray::Zip::from(&mut out)
                .and(&right)
                .for_each(|x, &r| *x = f * (*x - r));
            return out;
        };
        // With ρ† = PρP and V† = PVP: ρV = P (Vρ)† P.
        let d = rho.nrows();
        let dm = self.mode_dim;
        let a = left.as_slice().expect("standard layout");
        let mut out = vec![ZERO; d * d];
        for r in 0..d {
            let pr = signs[r % dm];
            for c in 0..d {
                out[r * d + c] = f * (a[r * d + c] - pr * signs[c % dm] * a[c * d + r].conj());
            }
        }
        Array2::from_shape_vec((d, d), out).expect("shape matches buffer")
    }

    /// `(q ⊗ X) ρ`.
    fn apply_coupling(&self, q: &Array2<C64>, rho: &Array2<C64>) -> Array2<C64> {
        let dm = self.mode_dim;
        let z = left_system(q, rho, dm);
        let d = z.ncols();
        let src = z.as_slice().expect("standard layout");
        let mut out = vec![ZERO; d * d];
        for s in 0..q.nrows() {
            for &(m, k, x) in &self.coupling {
                let dst = &mut out[(s * dm + m) * d..(s * dm + m + 1) * d];
                let row = &src[(s * dm + k) * d..(s * dm + k + 1) * d];
                dst.iter_mut().zip(row).for_each(|(o, &v)| *o += x * v);
            }
        }
        Array2::from_shape_vec((d, d), out).expect("shape matches buffer")
    }

    /// Block-wise sparse map applied to every `(s, s')` system block.
    fn apply_entries(&self, entries: &[Entry], x: &Array2<C64>) -> Array2<C64> {
        let dm = self.mode_dim;
        let d = x.nrows();
        let ds = d / dm;
        let src = x.as_slice().expect("state is stored in standard layout");
        let mut out = vec![ZERO; d * d];
        for s1 in 0..ds {
            for s2 in 0..ds {
                let (r0, c0) = (s1 * dm, s2 * dm);
                for e in entries {
                    let t = (r0 + e.target.0 as usize) * d + c0 + e.target.1 as usize;
                    let sidx = (r0 + e.source.0 as usize) * d + c0 + e.source.1 as usize;
                    out[t] += e.coeff * src[sidx];
                }
            }
        }
        Array2::from_shape_vec((d, d), out).expect("shape matches buffer")
    }

    fn frame_state(&self) -> Array2<C64> {
        self.apply_entries(&self.to_rho, &self.u)
    }

    /// Reduced system state in the site basis.
    pub fn reduced_system(&self) -> Op {
        let red = trace_out_trailing(&self.frame_state(), self.mode_dim);
        let ud = self.basis.t().mapv(|z| z.conj());
        let site = self.basis.dot(&red).dot(&ud);
        Op::new(self.system_layout.clone(), site).expect("reduced state matches system layout")
    }

    pub fn trace(&self) -> C64 {
        self.frame_state().diag().sum()
    }

    /// Full state in the site ⊗ Fock basis.
    pub fn state(&self) -> Op {
        Op::new(
            self.layout.clone(),
            self.conjugate_system(&self.basis, &self.frame_state()),
        )
        .expect("state matches layout")
    }
}

/// Mode parity making `V† = PVP`: trivial for real `λ̄`, odd in the
/// `λ̄`-carrying modes for imaginary `λ̄`. `None` for other couplings.
fn reflection_signs(model: &CompositeModel) -> Option<Vec<f64>> {
    let lb = model.lambda_bar;
    let flip = match (lb.re == 0.0, lb.im == 0.0) {
        (_, true) => false,
        (true, false) => true,
        (false, false) => return None,
    };
    let dims: Vec<usize> = model.modes.iter().map(|m| m.truncation).collect();
    let dm: usize = dims.iter().product();
    Some(
        (0..dm)
            .map(|flat| {
                let mut rem = flat;
                let mut odd = 0;
                for (k, &n) in dims.iter().enumerate().rev() {
                    if flip && model.modes[k].lambda_bar_power % 2 == 1 {
                        odd += rem % n;
                    }
                    rem /= n;
                }
                if odd % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect(),
    )
}

/// `φ_0..φ_3` with `φ_0 = e^z`, `φ_{k+1}(z) = (φ_k(z) − 1/k!)/z`.
fn phi(z: C64) -> [C64; 4] {
    if z.norm() < 0.5 {
        // φ_k(z) = Σ_n z^n / (n + k)!
        let mut out = [ZERO; 4];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut term = ONE / (1..=k).map(|j| j as f64).product::<f64>();
            let mut sum = term;
            for n in 1..40 {
                term = term * z / (n + k) as f64;
                sum += term;
                if term.norm() < 1e-18 * sum.norm() {
                    break;
                }
            }
            *slot = sum;
        }
        return out;
    }
    let p0 = z.exp();
    let p1 = (p0 - 1.0) / z;
    let p2 = (p1 - 1.0) / z;
    let p3 = (p2 - 0.5) / z;
    [p0, p1, p2, p3]
}

/// Eigenvalue of the damped-mode generators for each flattened `(m, m')`
/// pair: `Σ_j −iω_j(k_j − l_j) − Γ_j(k_j + l_j)/2`.
fn mode_rate_table(model: &CompositeModel, dims: &[usize]) -> Vec<C64> {
    let dm: usize = dims.iter().product();
    let digits = |mut flat: usize| {
        let mut out = vec![0usize; dims.len()];
        for (slot, &n) in out.iter_mut().zip(dims).rev() {
            *slot = flat % n;
            flat /= n;
        }
        out
    };
    let mut table = vec![ZERO; dm * dm];
    for m in 0..dm {
        let ks = digits(m);
        for mp in 0..dm {
            let ls = digits(mp);
            table[m * dm + mp] = model
                .modes
                .iter()
                .zip(ks.iter().zip(&ls))
                .map(|(mode, (&k, &l))| {
                    C64::new(
                        -0.5 * mode.lindblad_rate * (k + l) as f64,
                        -mode.omega * (k as f64 - l as f64),
                    )
                })
                .sum();
        }
    }
    table
}

type PairMap = Vec<(usize, usize, usize, usize, f64)>;

/// Eigenvector map `S` of one damped mode and its inverse, as entries
/// `(k', l') ← (k, l)`. The eigenvector led by `|k⟩⟨l|` has components
/// `c_n` on `|k−n⟩⟨l−n|` with `c_n = −√((k−n+1)(l−n+1))/n · c_{n−1}`,
/// independent of the mode frequency and damping rate.
fn mode_eigenvectors(n: usize) -> (PairMap, PairMap) {
    let mut s = DMatrix::<f64>::zeros(n * n, n * n);
    for k in 0..n {
        for l in 0..n {
            let mut c = 1.0;
            s[(k * n + l, k * n + l)] = c;
            for j in 1..=k.min(l) {
                c *= -(((k - j + 1) * (l - j + 1)) as f64).sqrt() / j as f64;
                s[((k - j) * n + l - j, k * n + l)] = c;
            }
        }
    }
    let inv = s
        .clone()
        .try_inverse()
        .expect("eigenvector map is unit triangular");
    let entries = |m: &DMatrix<f64>| {
        let mut list = Vec::new();
        for r in 0..n * n {
            for c in 0..n * n {
                if m[(r, c)].abs() > 1e-15 {
                    list.push((r / n, r % n, c / n, c % n, m[(r, c)]));
                }
            }
        }
        list
    };
    (entries(&s), entries(&inv))
}

/// Tensor product of per-mode pair maps as flattened block entries.
fn combine(dims: &[usize], per_mode: &[PairMap]) -> Vec<Entry> {
    let mut entries = vec![Entry {
        target: (0, 0),
        source: (0, 0),
        coeff: ONE,
    }];
    for (&n, list) in dims.iter().zip(per_mode) {
        let n = n as u32;
        let mut next = Vec::with_capacity(entries.len() * list.len());
        for e in &entries {
            for &(k, l, k2, l2, c) in list {
                next.push(Entry {
                    target: (e.target.0 * n + k as u32, e.target.1 * n + l as u32),
                    source: (e.source.0 * n + k2 as u32, e.source.1 * n + l2 as u32),
                    coeff: e.coeff * c,
                });
            }
        }
        entries = next;
    }
    entries.sort_by_key(|e| (e.target, e.source));
    entries
}

/// `(q ⊗ I_{inner}) ρ` via one product on the reshaped state.
fn left_system(q: &Array2<C64>, rho: &Array2<C64>, inner: usize) -> Array2<C64> {
    let d = rho.nrows();
    let ds = q.nrows();
    let std = rho.as_standard_layout();
    let r: ArrayView2<C64> = std
        .view()
        .into_shape_with_order((ds, inner * d))
        .expect("system dimension divides state");
    q.dot(&r)
        .into_shape_with_order((d, d))
        .expect("product keeps the element count")
}

fn transposed(a: &Array2<C64>) -> Array2<C64> {
    a.t().as_standard_layout().into_owned()
}
