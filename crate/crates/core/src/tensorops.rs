//! Dense operator algebra over composite qubit/boson Hilbert spaces.
//!
//! Factors are ordered as they are declared in a [`SpaceLayout`]; the first
//! factor is the most significant one in the flattened index, so for the
//! models built in this crate the spins come first and the modes last.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Tolerance used to group exactly (numerically) degenerate eigenvalues.
pub fn degeneracy_tol(e0: f64) -> f64 {
    1e-9 * e0.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Factor {
    pub label: String,
    pub dim: usize,
}

/// Ordered tensor-product structure of a Hilbert space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpaceLayout {
    factors: Vec<Factor>,
    total_dim: usize,
}

impl SpaceLayout {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let factors: Vec<Factor> = factors
            .into_iter()
            .map(|(label, dim)| Factor {
                label: label.into(),
                dim,
            })
            .collect();
        if factors.is_empty() {
            return Err(Error::Argument("layout needs at least one factor".into()));
        }
        for (k, f) in factors.iter().enumerate() {
            if f.dim < 2 {
                return Err(Error::Dimension(format!(
                    "factor `{}` has dimension {} (< 2)",
                    f.label, f.dim
                )));
            }
            if factors[..k].iter().any(|g| g.label == f.label) {
                return Err(Error::Argument(format!(
                    "duplicate factor label `{}`",
                    f.label
                )));
            }
        }
        let total_dim = factors.iter().map(|f| f.dim).product();
        Ok(Self { factors, total_dim })
    }

    /// `n` qubits labelled `s1..sN`.
    pub fn qubits(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|k| (format!("s{k}"), 2)))
    }

    /// `n` qubits followed by bosonic modes `a1..aK` with the given Fock truncations.
    pub fn spins_and_modes(n: usize, truncations: &[usize]) -> Result<Self> {
        let spins = (1..=n).map(|k| (format!("s{k}"), 2));
        let modes = truncations
            .iter()
            .enumerate()
            .map(|(k, &d)| (format!("a{}", k + 1), d));
        Self::new(spins.chain(modes))
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn dim(&self, factor: usize) -> Result<usize> {
        self.factors.get(factor).map(|f| f.dim).ok_or_else(|| {
            Error::Dimension(format!(
                "factor index {factor} out of range ({} factors)",
                self.n_factors()
            ))
        })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.label == label)
    }

    /// Layout made of the listed factors, in ascending factor order.
    pub fn sub_layout(&self, keep: &[usize]) -> Result<Self> {
        let keep = self.normalize_keep(keep)?;
        Self::new(
            keep.iter()
                .map(|&k| (self.factors[k].label.clone(), self.factors[k].dim)),
        )
    }

    /// Concatenation `self ⊗ other`.
    pub fn join(&self, other: &SpaceLayout) -> Result<Self> {
        Self::new(
            self.factors
                .iter()
                .chain(other.factors.iter())
                .map(|f| (f.label.clone(), f.dim)),
        )
    }

    fn normalize_keep(&self, keep: &[usize]) -> Result<Vec<usize>> {
        if keep.is_empty() {
            return Err(Error::Argument("keep set must be non-empty".into()));
        }
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if let Some(&bad) = keep.iter().find(|&&k| k >= self.n_factors()) {
            return Err(Error::Dimension(format!("factor index {bad} out of range")));
        }
        Ok(keep)
    }

    /// Product of the dimensions of factors strictly before / after `factor`.
    fn split_dims(&self, factor: usize) -> (usize, usize) {
        let left = self.factors[..factor].iter().map(|f| f.dim).product();
        let right = self.factors[factor + 1..].iter().map(|f| f.dim).product();
        (left, right)
    }
}

impl fmt::Display for SpaceLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|x| format!("{}:{}", x.label, x.dim))
            .collect();
        write!(f, "[{}]", parts.join(" ⊗ "))
    }
}

/// Dense operator on a [`SpaceLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Op {
    layout: SpaceLayout,
    data: Array2<C64>,
}

impl Op {
    pub fn new(layout: SpaceLayout, data: Array2<C64>) -> Result<Self> {
        let d = layout.total_dim();
        if data.dim() != (d, d) {
            return Err(Error::Dimension(format!(
                "matrix shape {:?} does not match layout {layout} (dim {d})",
                data.dim()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self {
            layout: layout.clone(),
            data: Array2::zeros((d, d)),
        }
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self {
            layout: layout.clone(),
            data: Array2::eye(d),
        }
    }

    /// Projector `|ψ⟩⟨ψ|` for a (not necessarily normalized) state vector.
    pub fn projector(layout: &SpaceLayout, psi: &[C64]) -> Result<Self> {
        let d = layout.total_dim();
        if psi.len() != d {
            return Err(Error::Dimension(format!(
                "state of length {} for dim {d}",
                psi.len()
            )));
        }
        let data = Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj());
        Ok(Self {
            layout: layout.clone(),
            data,
        })
    }

    /// `I ⊗ … ⊗ local ⊗ … ⊗ I` with `local` acting on `factor`.
    pub fn embed(layout: &SpaceLayout, factor: usize, local: &Array2<C64>) -> Result<Self> {
        let d = layout.dim(factor)?;
        if local.dim() != (d, d) {
            return Err(Error::Dimension(format!(
                "local operator shape {:?} does not match factor {factor} of dim {d}",
                local.dim()
            )));
        }
        let (left, right) = layout.split_dims(factor);
        let data = kron(&kron(&Array2::eye(left), local), &Array2::eye(right));
        Ok(Self {
            layout: layout.clone(),
            data,
        })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<C64> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn dagger(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            data: self.data.t().mapv(|z| z.conj()),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            data: self.data.t().to_owned(),
        }
    }

    fn check_same(&self, other: &Op) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Dimension(format!(
                "layout mismatch: {} vs {}",
                self.layout, other.layout
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Op) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            data: self.data.dot(&other.data),
        })
    }

    pub fn commutator(&self, other: &Op) -> Result<Self> {
        self.check_same(other)?;
        let data = self.data.dot(&other.data) - other.data.dot(&self.data);
        Ok(Self {
            layout: self.layout.clone(),
            data,
        })
    }

    /// `self ⊗ other` on the joined layout.
    pub fn kron(&self, other: &Op) -> Result<Self> {
        Ok(Self {
            layout: self.layout.join(&other.layout)?,
            data: kron(&self.data, &other.data),
        })
    }

    pub fn scale(&self, z: C64) -> Self {
        Self {
            layout: self.layout.clone(),
            data: self.data.mapv(|x| x * z),
        }
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    /// `max |A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.data)
    }

    pub fn max_diff(&self, other: &Op) -> Result<f64> {
        self.check_same(other)?;
        Ok(max_abs(&(&self.data - &other.data)))
    }

    /// Hermitian part `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Self {
        let data = (&self.data + &self.data.t().mapv(|z| z.conj())).mapv(|z| z * 0.5);
        Self {
            layout: self.layout.clone(),
            data,
        }
    }

    pub fn apply(&self, psi: &[C64]) -> Result<Vec<C64>> {
        if psi.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "state of length {} for dim {}",
                psi.len(),
                self.dim()
            )));
        }
        Ok(self
            .data
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(psi).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl Add for &Op {
    type Output = Op;

    /// Panics on layout mismatch; use [`Op::max_diff`]-style checked helpers
    /// where layouts come from user input.
    fn add(self, rhs: &Op) -> Op {
        assert_eq!(self.layout, rhs.layout, "layout mismatch in Op addition");
        Op {
            layout: self.layout.clone(),
            data: &self.data + &rhs.data,
        }
    }
}

impl Sub for &Op {
    type Output = Op;

    fn sub(self, rhs: &Op) -> Op {
        assert_eq!(self.layout, rhs.layout, "layout mismatch in Op subtraction");
        Op {
            layout: self.layout.clone(),
            data: &self.data - &rhs.data,
        }
    }
}

impl Mul for &Op {
    type Output = Op;

    fn mul(self, rhs: &Op) -> Op {
        self.matmul(rhs).expect("layout mismatch in Op product")
    }
}

impl Mul<C64> for &Op {
    type Output = Op;

    fn mul(self, z: C64) -> Op {
        self.scale(z)
    }
}

impl Mul<f64> for &Op {
    type Output = Op;

    fn mul(self, x: f64) -> Op {
        self.scale(C64::new(x, 0.0))
    }
}

impl Neg for &Op {
    type Output = Op;

    fn neg(self) -> Op {
        self.scale(-ONE)
    }
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == ZERO {
            continue;
        }
        out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
            .zip_mut_with(b, |o, &y| *o = x * y);
    }
    out
}

pub(crate) fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub(crate) fn hermiticity_defect(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

pub fn pauli_matrix(axis: PauliAxis) -> Array2<C64> {
    let r = |x: f64| C64::new(x, 0.0);
    match axis {
        PauliAxis::X => ndarray::arr2(&[[ZERO, ONE], [ONE, ZERO]]),
        PauliAxis::Y => ndarray::arr2(&[[ZERO, -I], [I, ZERO]]),
        PauliAxis::Z => ndarray::arr2(&[[r(1.0), ZERO], [ZERO, r(-1.0)]]),
    }
}

/// Pauli operator on qubit factor `site`.
pub fn pauli(layout: &SpaceLayout, site: usize, axis: PauliAxis) -> Result<Op> {
    let d = layout.dim(site)?;
    if d != 2 {
        return Err(Error::Dimension(format!(
            "factor {site} has dim {d}, not a qubit"
        )));
    }
    Op::embed(layout, site, &pauli_matrix(axis))
}

/// Truncated annihilation operator with `⟨k−1|a|k⟩ = √k`.
pub fn annihilation_matrix(n: usize) -> Array2<C64> {
    let mut a = Array2::zeros((n, n));
    for k in 1..n {
        a[[k - 1, k]] = C64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn annihilation(layout: &SpaceLayout, mode: usize) -> Result<Op> {
    let n = layout.dim(mode)?;
    Op::embed(layout, mode, &annihilation_matrix(n))
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct EigDecomp {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: Array2<C64>,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k).to_vec()
    }

    /// `V† A V`, i.e. `A` expressed in the eigenbasis.
    pub fn to_eigenbasis(&self, a: &Array2<C64>) -> Array2<C64> {
        let vd = self.vectors.t().mapv(|z| z.conj());
        vd.dot(a).dot(&self.vectors)
    }

    /// `V A V†`, the inverse of [`EigDecomp::to_eigenbasis`].
    pub fn from_eigenbasis(&self, a: &Array2<C64>) -> Array2<C64> {
        let vd = self.vectors.t().mapv(|z| z.conj());
        self.vectors.dot(a).dot(&vd)
    }

    /// Consecutive runs of eigenvalues equal within `tol`.
    pub fn degenerate_groups(&self, tol: f64) -> Vec<std::ops::Range<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=self.values.len() {
            if k == self.values.len() || self.values[k] - self.values[start] > tol {
                groups.push(start..k);
                start = k;
            }
        }
        groups
    }
}

pub fn eig_hermitian(h: &Op) -> Result<EigDecomp> {
    eig_hermitian_matrix(h.data())
}

pub(crate) fn eig_hermitian_matrix(h: &Array2<C64>) -> Result<EigDecomp> {
    let scale = max_abs(h);
    let defect = hermiticity_defect(h);
    if defect > 1e-9 * scale.max(f64::MIN_POSITIVE) && defect > 0.0 {
        return Err(Error::Hermiticity(format!(
            "max |H − H†| = {defect:.3e} exceeds 1e-9·‖H‖ = {:.3e}",
            1e-9 * scale
        )));
    }
    let n = h.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (h[[i, j]] + h[[j, i]].conj()));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    Ok(EigDecomp { values, vectors })
}

/// Reduced operator on the factors listed in `keep`.
pub fn partial_trace(rho: &Op, keep: &[usize]) -> Result<Op> {
    let layout = rho.layout();
    let keep = layout.normalize_keep(keep)?;
    let sub = layout.sub_layout(&keep)?;
    let dims: Vec<usize> = layout.factors().iter().map(|f| f.dim).collect();
    let d = layout.total_dim();

    // Split each flat index into (kept index, traced index).
    let mut kept_idx = vec![0usize; d];
    let mut traced_idx = vec![0usize; d];
    for (flat, (ki, ti)) in kept_idx.iter_mut().zip(traced_idx.iter_mut()).enumerate() {
        let mut rem = flat;
        let (mut k, mut t, mut kmul, mut tmul) = (0, 0, 1, 1);
        for f in (0..dims.len()).rev() {
            let digit = rem % dims[f];
            rem /= dims[f];
            if keep.binary_search(&f).is_ok() {
                k += digit * kmul;
                kmul *= dims[f];
            } else {
                t += digit * tmul;
                tmul *= dims[f];
            }
        }
        *ki = k;
        *ti = t;
    }

    let ds = sub.total_dim();
    let mut out = Array2::<C64>::zeros((ds, ds));
    for r in 0..d {
        let row = rho.data().row(r);
        for c in 0..d {
            if traced_idx[r] == traced_idx[c] {
                out[[kept_idx[r], kept_idx[c]]] += row[c];
            }
        }
    }
    Op::new(sub, out)
}

/// Trace over the trailing factors of a block-structured matrix: the state is
/// indexed as `(outer, inner)` with `inner` of size `inner_dim`.
pub(crate) fn trace_out_trailing(rho: &Array2<C64>, inner_dim: usize) -> Array2<C64> {
    let outer = rho.nrows() / inner_dim;
    Array2::from_shape_fn((outer, outer), |(s, t)| {
        (0..inner_dim)
            .map(|m| rho[[s * inner_dim + m, t * inner_dim + m]])
            .sum()
    })
}

/// `Tr(A ρ)`.
pub fn expect(a: &Op, rho: &Op) -> Result<C64> {
    a.check_same(rho)?;
    Ok(trace_of_product(a.data(), rho.data()))
}

pub(crate) fn trace_of_product(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    a.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| row.iter().zip(b.column(i)).map(|(x, y)| x * y).sum::<C64>())
        .sum()
}
