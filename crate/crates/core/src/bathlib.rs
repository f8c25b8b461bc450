//! Bath spectra, damped-mode correlations and the Matsubara correction.
//!
//! Conventions: a mode with Lindblad rate `Γ^L` has a free correlation
//! function decaying at `Γ^L/2`, so its spectrum is a Lorentzian of
//! half-width `Γ^L/2` and area `2π·λ_j²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::quad::{integrate_to_infinity, QuadOptions};
use crate::simplex::{self, SimplexOptions};
use crate::tensorops::C64;
use crate::{Error, Result};

/// Underdamped Brownian-motion spectral density
/// `J(ω) = λ²γω / [(ω² − ω0²)² + γ²ω²]` at inverse temperature `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnderdampedBath {
    pub lam: f64,
    pub gamma: f64,
    pub omega0: f64,
    /// `f64::INFINITY` for zero temperature.
    pub beta: f64,
}

impl UnderdampedBath {
    pub fn new(lam: f64, gamma: f64, omega0: f64, beta: f64) -> Result<Self> {
        if !(lam > 0.0 && gamma > 0.0) {
            return Err(Error::Argument(format!(
                "need lam > 0 and gamma > 0 (lam={lam}, gamma={gamma})"
            )));
        }
        if !(omega0 > gamma / 2.0) {
            return Err(Error::Argument(format!(
                "omega0 = {omega0} must exceed gamma/2 = {} (underdamped regime)",
                gamma / 2.0
            )));
        }
        if !(beta > 0.0) {
            return Err(Error::Argument(format!(
                "beta must be positive or +inf, got {beta}"
            )));
        }
        Ok(Self {
            lam,
            gamma,
            omega0,
            beta,
        })
    }

    pub fn zero_temperature(lam: f64, gamma: f64, omega0: f64) -> Result<Self> {
        Self::new(lam, gamma, omega0, f64::INFINITY)
    }

    /// Bath with coupling given as `λ = prefactor·√Ω`, the parametrisation
    /// used for all the Ising benchmarks.
    pub fn with_lambda_prefactor(
        prefactor: f64,
        gamma: f64,
        omega0: f64,
        beta: f64,
    ) -> Result<Self> {
        let omega_sq = omega0 * omega0 - gamma * gamma / 4.0;
        if omega_sq <= 0.0 {
            return Err(Error::Argument(format!(
                "omega0 = {omega0} must exceed gamma/2 = {}",
                gamma / 2.0
            )));
        }
        Self::new(prefactor * omega_sq.sqrt().sqrt(), gamma, omega0, beta)
    }

    /// `Γ = γ/2`.
    pub fn big_gamma(&self) -> f64 {
        self.gamma / 2.0
    }

    /// `Ω = √(ω0² − Γ²)`.
    pub fn omega(&self) -> f64 {
        (self.omega0 * self.omega0 - self.big_gamma().powi(2)).sqrt()
    }

    pub fn is_zero_temperature(&self) -> bool {
        self.beta.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    /// `λ_j²`.
    pub amp: f64,
    /// `γ_j`, the decay rate of the correlation.
    pub rate: f64,
}

/// Sampling window for the Matsubara fit, in units of `1/Γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub t_min: f64,
    pub t_max: f64,
    pub n_points: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            t_min: 1e-4,
            t_max: 10.0,
            n_points: 256,
        }
    }
}

impl FitWindow {
    /// `t = 0` followed by `n_points` log-spaced times in `[t_min, t_max]/Γ`.
    pub fn times(&self, big_gamma: f64) -> Vec<f64> {
        let (lo, hi) = ((self.t_min / big_gamma).ln(), (self.t_max / big_gamma).ln());
        let n = self.n_points.max(2);
        std::iter::once(0.0)
            .chain((0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFitResult {
    /// Sorted by ascending rate.
    pub terms: Vec<ExpTerm>,
    pub window: FitWindow,
    /// Root-mean-square residual over the window, relative to `|M(0)|`.
    pub rms_residual: f64,
}

impl ExpFitResult {
    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|x| x.amp * (-x.rate * t.abs()).exp())
            .sum()
    }
}

/// Serialized form of a bath fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BathFitDocument {
    pub bath: BathParams,
    pub terms: Vec<ExpTerm>,
    pub window: FitWindow,
    pub rms_residual: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BathParams {
    pub lam: f64,
    pub gamma: f64,
    pub omega0: f64,
}

impl BathFitDocument {
    pub fn new(bath: &UnderdampedBath, fit: &ExpFitResult) -> Self {
        Self {
            bath: BathParams {
                lam: bath.lam,
                gamma: bath.gamma,
                omega0: bath.omega0,
            },
            terms: fit.terms.clone(),
            window: fit.window,
            rms_residual: fit.rms_residual,
        }
    }
}

/// One damped bosonic ancilla.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudomodeParams {
    pub omega: f64,
    pub lam: f64,
    pub lindblad_rate: f64,
    pub truncation: usize,
    /// Exponent of `λ̄` multiplying the coupling: 0 for the resonant mode,
    /// 1 for the fitted Matsubara modes.
    pub lambda_bar_power: u8,
}

impl PseudomodeParams {
    pub fn new(
        omega: f64,
        lam: f64,
        lindblad_rate: f64,
        truncation: usize,
        lambda_bar_power: u8,
    ) -> Result<Self> {
        if !(lindblad_rate > 0.0) {
            return Err(Error::Argument(format!(
                "lindblad rate must be positive, got {lindblad_rate}"
            )));
        }
        if truncation < 2 {
            return Err(Error::Argument(format!(
                "Fock truncation must be >= 2, got {truncation}"
            )));
        }
        if lambda_bar_power > 1 {
            return Err(Error::Argument("lambda_bar_power must be 0 or 1".into()));
        }
        Ok(Self {
            omega,
            lam,
            lindblad_rate,
            truncation,
            lambda_bar_power,
        })
    }
}

pub fn spectral_density(bath: &UnderdampedBath, w: f64) -> f64 {
    let UnderdampedBath {
        lam, gamma, omega0, ..
    } = *bath;
    lam * lam * gamma * w / ((w * w - omega0 * omega0).powi(2) + gamma * gamma * w * w)
}

/// `S(ω) = 2J(ω)[n_th(ω) + 1]`.
pub fn power_spectrum(bath: &UnderdampedBath, w: f64) -> Result<f64> {
    if bath.is_zero_temperature() {
        return Ok(if w > 0.0 {
            2.0 * spectral_density(bath, w)
        } else {
            0.0
        });
    }
    if w == 0.0 {
        return Err(Error::Singularity(
            "S(0) at finite temperature (Bose factor diverges)".into(),
        ));
    }
    // n_th + 1 = 1 / (1 − e^{−βω}), stable for either sign of ω.
    Ok(-2.0 * spectral_density(bath, w) / (-bath.beta * w).exp_m1())
}

/// Free correlation `C(t) = λ_j² e^{−iω_j t − Γ^L t/2}`, with `C(−t) = C(t)*`.
pub fn damped_mode_correlation(mode: &PseudomodeParams, t: f64) -> C64 {
    let c = mode.lam
        * mode.lam
        * C64::new(-0.5 * mode.lindblad_rate * t.abs(), -mode.omega * t.abs()).exp();
    if t < 0.0 {
        c.conj()
    } else {
        c
    }
}

/// Spectrum of a mode, weighted by `(λ̄²)^power`.
pub fn mode_spectrum(mode: &PseudomodeParams, lambda_bar_sq: f64, w: f64) -> f64 {
    let half = 0.5 * mode.lindblad_rate;
    let weight = lambda_bar_sq.powi(mode.lambda_bar_power as i32);
    weight * mode.lam * mode.lam * mode.lindblad_rate / ((w - mode.omega).powi(2) + half * half)
}

/// Resonant Lorentzian `S_a1(ω) = λ²Γ / (Ω[(ω − Ω)² + Γ²])`.
pub fn resonant_spectrum(bath: &UnderdampedBath, w: f64) -> f64 {
    let (g, om) = (bath.big_gamma(), bath.omega());
    bath.lam * bath.lam * g / (om * ((w - om).powi(2) + g * g))
}

/// `|(Ω + iΓ)² + x²|²`.
fn matsubara_denominator(bath: &UnderdampedBath, x: f64) -> f64 {
    let (g, om) = (bath.big_gamma(), bath.omega());
    (x * x + om * om - g * g).powi(2) + 4.0 * om * om * g * g
}

fn matsubara_quad() -> QuadOptions {
    QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-12,
        max_intervals: 4000,
    }
}

fn require_zero_temperature(bath: &UnderdampedBath) -> Result<()> {
    if bath.is_zero_temperature() {
        Ok(())
    } else {
        Err(Error::Argument(
            "the Matsubara correction is only implemented at zero temperature".into(),
        ))
    }
}

/// Zero-temperature Matsubara correlation
/// `M(t) = −(γλ²/π) ∫₀^∞ x e^{−xt} / |(Ω+iΓ)² + x²|² dx`.
pub fn matsubara_ct(bath: &UnderdampedBath, t: f64) -> Result<f64> {
    require_zero_temperature(bath)?;
    if t < 0.0 {
        return Err(Error::Argument(format!(
            "matsubara_ct needs t >= 0, got {t}"
        )));
    }
    let scale = 1.0 / (t + 1.0 / bath.omega());
    let r = integrate_to_infinity(
        |x| x * (-x * t).exp() / matsubara_denominator(bath, x),
        0.0,
        scale,
        matsubara_quad(),
    )
    .map_err(|e| Error::Numeric(format!("M(t={t}): {e}")))?;
    Ok(-bath.gamma * bath.lam * bath.lam / PI * r.value)
}

/// Fourier transform `∫ e^{iωt} M(|t|) dt`, evaluated through the
/// x-representation `−(2γλ²/π) ∫ x² / (|(Ω+iΓ)²+x²|² (x² + ω²)) dx`.
pub fn matsubara_spectrum(bath: &UnderdampedBath, w: f64) -> Result<f64> {
    require_zero_temperature(bath)?;
    let scale = bath.omega().max(w.abs());
    let r = integrate_to_infinity(
        |x| x * x / (matsubara_denominator(bath, x) * (x * x + w * w)),
        0.0,
        scale,
        matsubara_quad(),
    )
    .map_err(|e| Error::Numeric(format!("M(ω={w}): {e}")))?;
    Ok(-2.0 * bath.gamma * bath.lam * bath.lam / PI * r.value)
}

/// Limit on `rms_residual` accepted by [`fit_matsubara`].
pub const FIT_QUALITY_LIMIT: f64 = 0.05;

/// Fit `|M(t)|` on the window by `n_terms` decaying exponentials.
pub fn fit_matsubara(
    bath: &UnderdampedBath,
    n_terms: usize,
    window: FitWindow,
) -> Result<ExpFitResult> {
    require_zero_temperature(bath)?;
    let ts = window.times(bath.big_gamma());
    let ys = ts
        .iter()
        .map(|&t| matsubara_ct(bath, t).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    let g = bath.big_gamma();
    let base = [g / 4.0, g, 4.0 * g, bath.omega0];
    let extra = [g / 16.0, 4.0 * bath.omega0];
    let seeds = seed_rates(&base, &extra, n_terms, 8);
    let (terms, rms) = fit_exponentials(&ts, &ys, &seeds, ys[0])?;
    if rms >= FIT_QUALITY_LIMIT {
        return Err(Error::FitQuality {
            rms,
            limit: FIT_QUALITY_LIMIT,
        });
    }
    Ok(ExpFitResult {
        terms,
        window,
        rms_residual: rms,
    })
}

/// Up to `count` distinct `n`-subsets of the seed rates, base set first.
fn seed_rates(base: &[f64], extra: &[f64], n: usize, count: usize) -> Vec<Vec<f64>> {
    fn combos(pool: &[f64], n: usize, start: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for k in start..pool.len() {
            cur.push(pool[k]);
            combos(pool, n, k + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    combos(base, n, 0, &mut Vec::new(), &mut out);
    let full: Vec<f64> = base.iter().chain(extra).copied().collect();
    let mut all = Vec::new();
    combos(&full, n, 0, &mut Vec::new(), &mut all);
    for c in all {
        if out.len() >= count {
            break;
        }
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out.truncate(count);
    if out.is_empty() {
        // More terms than seed rates: geometric ladder around the base rates.
        let lo = base.iter().copied().fold(f64::INFINITY, f64::min);
        out.push((0..n).map(|k| lo * 4f64.powi(k as i32)).collect());
    }
    out
}

/// Least-squares fit of `ys ≈ Σ a_k e^{−r_k t}` with `a_k, r_k > 0`.
///
/// Rates are optimised by Nelder–Mead in log space from each seed; for
/// given rates the amplitudes solve a non-negative linear least-squares
/// problem. Residuals are normalised by `scale`. Returns the terms sorted
/// by rate and the rms of the normalised residual.
pub fn fit_exponentials(
    ts: &[f64],
    ys: &[f64],
    seeds: &[Vec<f64>],
    scale: f64,
) -> Result<(Vec<ExpTerm>, f64)> {
    if ts.len() != ys.len() || ts.is_empty() {
        return Err(Error::Argument(
            "fit data must be non-empty with matching lengths".into(),
        ));
    }
    if !(scale > 0.0) {
        return Err(Error::Argument(format!(
            "fit scale must be positive, got {scale}"
        )));
    }
    let n_pts = ts.len() as f64;
    let objective = |log_rates: &[f64]| -> f64 {
        let rates: Vec<f64> = log_rates.iter().map(|l| l.exp()).collect();
        let (_, sse) = nonneg_amplitudes(ts, ys, &rates, scale);
        sse / n_pts
    };

    let opts = SimplexOptions {
        max_evals: 8000,
        f_tol: 1e-16,
        x_tol: 1e-11,
    };
    let mut best: Option<simplex::SimplexResult> = None;
    for seed in seeds {
        let x0: Vec<f64> = seed.iter().map(|r| r.ln()).collect();
        let mut r = simplex::minimize(objective, &x0, 0.5, opts);
        // Restart from the optimum to escape simplex collapse.
        for _ in 0..3 {
            let again = simplex::minimize(objective, &r.x, 0.1, opts);
            let improved = again.value < r.value * (1.0 - 1e-12);
            r = if again.value <= r.value { again } else { r };
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::Fit("no seed rates supplied".into()))?;
    let rates: Vec<f64> = best.x.iter().map(|l| l.exp()).collect();
    let (amps, sse) = nonneg_amplitudes(ts, ys, &rates, scale);
    let mut terms: Vec<ExpTerm> = amps
        .into_iter()
        .zip(rates)
        .filter(|(a, _)| *a > 0.0)
        .map(|(amp, rate)| ExpTerm { amp, rate })
        .collect();
    if terms.is_empty() {
        return Err(Error::Fit("all fitted amplitudes vanished".into()));
    }
    terms.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    Ok((terms, (sse / n_pts).sqrt()))
}

/// Non-negative least squares for the amplitudes at fixed rates, by
/// enumerating active sets (the number of terms is small). Returns the
/// amplitudes and the sum of squared normalised residuals.
fn nonneg_amplitudes(ts: &[f64], ys: &[f64], rates: &[f64], scale: f64) -> (Vec<f64>, f64) {
    let n = rates.len();
    let basis: Vec<Vec<f64>> = rates
        .iter()
        .map(|r| ts.iter().map(|t| (-r * t).exp()).collect())
        .collect();
    let sse_of = |amps: &[f64]| -> f64 {
        ts.iter()
            .enumerate()
            .map(|(i, _)| {
                let fit: f64 = (0..n).map(|k| amps[k] * basis[k][i]).sum();
                ((fit - ys[i]) / scale).powi(2)
            })
            .sum()
    };
    let mut best_amps = vec![0.0; n];
    let mut best_sse = sse_of(&best_amps);
    for mask in 1u32..(1 << n) {
        let active: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        let m = active.len();
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for (a, &ka) in active.iter().enumerate() {
            rhs[a] = basis[ka].iter().zip(ys).map(|(b, y)| b * y).sum();
            for (b, &kb) in active.iter().enumerate() {
                gram[a][b] = basis[ka].iter().zip(&basis[kb]).map(|(x, y)| x * y).sum();
            }
        }
        let Some(sol) = solve_small(gram, rhs) else {
            continue;
        };
        if sol.iter().any(|&a| !(a >= 0.0)) {
            continue;
        }
        let mut amps = vec![0.0; n];
        for (a, &k) in active.iter().enumerate() {
            amps[k] = sol[a];
        }
        let sse = sse_of(&amps);
        if sse < best_sse {
            best_sse = sse;
            best_amps = amps;
        }
    }
    (best_amps, best_sse)
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let norm = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-14 * norm {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Default Fock truncations: the resonant mode keeps three levels, fitted
/// modes two.
pub fn default_truncations(n_fit_terms: usize) -> Vec<usize> {
    std::iter::once(3)
        .chain(std::iter::repeat_n(2, n_fit_terms))
        .collect()
}

/// Resonant mode followed by one mode per fitted exponential.
pub fn to_pseudomodes(
    bath: &UnderdampedBath,
    fit: &ExpFitResult,
    truncations: &[usize],
) -> Result<Vec<PseudomodeParams>> {
    if truncations.len() != fit.terms.len() + 1 {
        return Err(Error::Argument(format!(
            "{} truncations given for {} modes",
            truncations.len(),
            fit.terms.len() + 1
        )));
    }
    let om = bath.omega();
    let mut modes = vec![PseudomodeParams::new(
        om,
        bath.lam / (2.0 * om).sqrt(),
        bath.gamma,
        truncations[0],
        0,
    )?];
    for (term, &n) in fit.terms.iter().zip(&truncations[1..]) {
        modes.push(PseudomodeParams::new(
            0.0,
            term.amp.sqrt(),
            2.0 * term.rate,
            n,
            1,
        )?);
    }
    Ok(modes)
}

/// `S_fit(ω) = Σ_j S_{a_j}(ω)` at the given `λ̄²`.
pub fn s_fit(modes: &[PseudomodeParams], lambda_bar_sq: f64, w: f64) -> f64 {
    modes
        .iter()
        .map(|m| mode_spectrum(m, lambda_bar_sq, w))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TempFlag {
    Finite,
    /// `S(−ω)` vanishes (or is negative) within numerical noise.
    Zero,
    /// `S(ω) = S(−ω)`.
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveTemperature {
    pub value: f64,
    pub flag: TempFlag,
}

/// `T_eff(ω) = ω / ln[S(ω)/S(−ω)]`.
pub fn t_eff(s: impl Fn(f64) -> f64, w: f64) -> Result<EffectiveTemperature> {
    if w == 0.0 {
        return Err(Error::Domain("T_eff is undefined at ω = 0".into()));
    }
    let (sp, sm) = (s(w), s(-w));
    if !(sp > 0.0) {
        return Err(Error::Domain(format!(
            "S(ω) = {sp:e} must be positive at ω = {w}"
        )));
    }
    if sm <= 1e-14 * sp {
        return Ok(EffectiveTemperature {
            value: 0.0,
            flag: TempFlag::Zero,
        });
    }
    let lr = (sp / sm).ln();
    if lr.abs() <= 1e-14 {
        return Ok(EffectiveTemperature {
            value: f64::INFINITY.copysign(w),
            flag: TempFlag::Infinite,
        });
    }
    Ok(EffectiveTemperature {
        value: w / lr,
        flag: TempFlag::Finite,
    })
}
