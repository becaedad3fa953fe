//! Closed-form performance of the cache-aided MISO BC.
//!
//! Everything with rational inputs is evaluated exactly in [`Rational`];
//! only expressions involving logarithms or exponentials (the large-K
//! approximations and the D-CSIT load report) go through `f64`.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::combinatorics::{harmonic_f64, harmonic_value};
use crate::error::{Error, Result};
use crate::rational::{as_u64, floor_u64, int, to_f64, Rational};

/// `(K, N, M, α)` problem instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemParams {
    k: u32,
    n: u64,
    m: Rational,
    alpha: Rational,
}

impl SystemParams {
    pub fn new(k: u32, n: u64, m: Rational, alpha: Rational) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if n < k as u64 {
            return Err(Error::invalid(format!("N = {n} must be at least K = {k}")));
        }
        if m.is_negative() || m > int(n as i64) {
            return Err(Error::invalid(format!("M = {m} must lie in [0, N]")));
        }
        if alpha.is_negative() || alpha > Rational::one() {
            return Err(Error::invalid(format!(
                "alpha = {alpha} must lie in [0, 1]"
            )));
        }
        Ok(SystemParams { k, n, m, alpha })
    }

    /// Instance with cumulative cache `Γ`, i.e. `M = Γ·N/K`.
    pub fn with_cumulative_cache(k: u32, n: u64, cumulative: u32, alpha: Rational) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        let m = Rational::new(BigInt::from(cumulative as u64 * n), BigInt::from(k));
        Self::new(k, n, m, alpha)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> &Rational {
        &self.m
    }

    pub fn alpha(&self) -> &Rational {
        &self.alpha
    }

    /// `γ = M/N`.
    pub fn gamma(&self) -> Rational {
        &self.m / int(self.n as i64)
    }

    /// `Γ = K·M/N`.
    pub fn cumulative_cache(&self) -> Rational {
        self.gamma() * int(self.k as i64)
    }

    /// Integer `Γ ∈ {1, …, K−1}` required by the delivery scheme.
    pub fn delivery_gamma(&self) -> Result<u32> {
        let g = self.cumulative_cache();
        let g = as_u64(&g).ok_or_else(|| {
            Error::invalid(format!("cumulative cache K·M/N = {g} is not an integer"))
        })?;
        if g == self.k as u64 {
            return Err(Error::NoDeliveryNeeded);
        }
        if g == 0 {
            return Err(Error::invalid("cumulative cache K·M/N must be at least 1"));
        }
        Ok(g as u32)
    }

    pub fn with_alpha(&self, alpha: Rational) -> Result<Self> {
        Self::new(self.k, self.n, self.m.clone(), alpha)
    }
}

fn check_gamma_range(k: u32, gamma_cum: u32) -> Result<()> {
    if gamma_cum == 0 || gamma_cum >= k {
        return Err(Error::invalid(format!(
            "Γ = {gamma_cum} must lie in 1..={}",
            k.saturating_sub(1)
        )));
    }
    Ok(())
}

/// `α_{b,η} = (η−Γ) / (Γ(H_K − H_η − 1) + η)`: the CSIT quality from which
/// fold order `η` becomes usable.
pub fn alpha_breakpoint(k: u32, gamma_cum: u32, eta: u32) -> Result<Rational> {
    if gamma_cum == 0 || eta < gamma_cum || eta >= k {
        return Err(Error::invalid(format!(
            "need 1 <= Γ <= η <= K-1, got Γ = {gamma_cum}, η = {eta}, K = {k}"
        )));
    }
    let tail = harmonic_value(k as u64) - harmonic_value(eta as u64) - Rational::one();
    let num = int(eta as i64 - gamma_cum as i64);
    let den = int(gamma_cum as i64) * tail + int(eta as i64);
    Ok(num / den)
}

/// Breakpoints for `η = Γ, …, K−1`, in that order.
pub fn breakpoints(k: u32, gamma_cum: u32) -> Result<Vec<Rational>> {
    check_gamma_range(k, gamma_cum)?;
    (gamma_cum..k)
        .map(|eta| alpha_breakpoint(k, gamma_cum, eta))
        .collect()
}

/// Largest `η ∈ [Γ, K−1]` with `α_{b,η} ≤ α`; ties go to the larger `η`.
pub fn select_eta(k: u32, gamma_cum: u32, alpha: &Rational) -> Result<u32> {
    check_gamma_range(k, gamma_cum)?;
    let mut eta = gamma_cum;
    for candidate in gamma_cum + 1..k {
        if alpha_breakpoint(k, gamma_cum, candidate)? <= *alpha {
            eta = candidate;
        } else {
            break;
        }
    }
    Ok(eta)
}

/// Delivery time of the fold-order-`η` scheme,
/// `(K−Γ)(H_K−H_η) / ((K−η) + α(η + K(H_K−H_η−1)))`.
pub fn retrospective_delivery_time(
    k: u32,
    gamma_cum: u32,
    eta: u32,
    alpha: &Rational,
) -> Result<Rational> {
    check_gamma_range(k, gamma_cum)?;
    if eta < gamma_cum || eta >= k {
        return Err(Error::invalid(format!(
            "η = {eta} outside [{gamma_cum}, {}]",
            k - 1
        )));
    }
    let kq = int(k as i64);
    let tail = harmonic_value(k as u64) - harmonic_value(eta as u64);
    let num = int(k as i64 - gamma_cum as i64) * &tail;
    let den =
        int(k as i64 - eta as i64) + alpha * (int(eta as i64) + kq * (tail - Rational::one()));
    Ok(num / den)
}

/// Best achievable delivery time: `max{1−γ, T_η}` with `η` from [`select_eta`].
pub fn achievable_t_best(params: &SystemParams) -> Result<Rational> {
    let g = params.delivery_gamma()?;
    let eta = select_eta(params.k, g, &params.alpha)?;
    let t = retrospective_delivery_time(params.k, g, eta, &params.alpha)?;
    let floor = Rational::one() - params.gamma();
    Ok(if t > floor { t } else { floor })
}

/// Delivery time of the `η = Γ` scheme whose placement ignores `α`.
pub fn achievable_t_simple(params: &SystemParams) -> Result<Rational> {
    let g = params.delivery_gamma()?;
    let one_minus_gamma = Rational::one() - params.gamma();
    let tail = harmonic_value(params.k as u64) - harmonic_value(g as u64);
    let alpha = &params.alpha;
    let den = alpha * &tail + (Rational::one() - alpha) * &one_minus_gamma;
    Ok(one_minus_gamma * tail / den)
}

/// Per-user DoF `α + (1−α)(1−γ)/(H_K − H_Γ)` of the simple scheme.
pub fn dof(params: &SystemParams) -> Result<Rational> {
    let g = params.delivery_gamma()?;
    let tail = harmonic_value(params.k as u64) - harmonic_value(g as u64);
    let alpha = &params.alpha;
    Ok(alpha + (Rational::one() - alpha) * (Rational::one() - params.gamma()) / tail)
}

/// Large-K DoF with `H_n ≈ log n`: `α + (1−α)(1−γ)/log(1/γ)`.
pub fn dof_log_approx(gamma: f64, alpha: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("γ = {gamma} must lie in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} must lie in [0, 1]"
        )));
    }
    Ok(alpha + (1.0 - alpha) * (1.0 - gamma) / (1.0 / gamma).ln())
}

/// Largest `s` used by the lower bound: `min(⌊N/M⌋, K)`.
fn lower_bound_range(params: &SystemParams) -> u64 {
    let k = params.k as u64;
    if params.m.is_zero() {
        return k;
    }
    let ratio = int(params.n as i64) / &params.m;
    floor_u64(&ratio).map_or(k, |s| s.min(k)).max(1)
}

/// Individual lower-bound terms `(H_s − M·s/⌊N/s⌋)/(H_s·α + 1 − α)`, keyed by `s`.
pub fn lower_bound_terms(params: &SystemParams) -> Vec<(u64, Rational)> {
    let alpha = &params.alpha;
    (1..=lower_bound_range(params))
        .map(|s| {
            let h = harmonic_value(s);
            let blocks = int((params.n / s) as i64);
            let num = &h - &params.m * int(s as i64) / blocks;
            let den = &h * alpha + Rational::one() - alpha;
            (s, num / den)
        })
        .collect()
}

/// Lower bound on the optimal delivery time (maximum over all terms).
pub fn lower_bound_t(params: &SystemParams) -> Rational {
    lower_bound_terms(params)
        .into_iter()
        .map(|(_, t)| t)
        .max()
        .unwrap_or_else(Rational::zero)
}

/// Sum-DoF bound `sα + (s/H_s)(1 − α + d_m)` for `s` users with a side link
/// of capacity `d_m`.
pub fn sum_dof_upper(s: u64, alpha: f64, d_m: f64) -> Result<f64> {
    if s == 0 {
        return Err(Error::invalid("s must be at least 1"));
    }
    if !(0.0..=1.0).contains(&alpha) || d_m.is_nan() || d_m < 0.0 {
        return Err(Error::invalid(format!(
            "need alpha in [0,1] and d_m >= 0, got {alpha}, {d_m}"
        )));
    }
    let h = to_f64(&harmonic_value(s));
    Ok(s as f64 * alpha + (s as f64 / h) * (1.0 - alpha + d_m))
}

/// `T_best / T_lower`.
pub fn gap(params: &SystemParams) -> Result<f64> {
    let t = achievable_t_best(params)?;
    let lower = lower_bound_t(params);
    if !lower.is_positive() {
        return Err(Error::UndefinedGap);
    }
    Ok(to_f64(&(t / lower)))
}

/// Cache-aided CSIT reduction
/// `δ_α = (1−α)(H_Γ − γH_K) / ((H_K − 1)(H_K − H_Γ))`.
///
/// Returned raw: `α + δ_α` may exceed 1 for large `γ`.
pub fn csit_reduction(params: &SystemParams) -> Result<Rational> {
    if params.k < 2 {
        return Err(Error::invalid("CSIT reduction needs K >= 2"));
    }
    let g = params.delivery_gamma()?;
    let hk = harmonic_value(params.k as u64);
    let hg = harmonic_value(g as u64);
    let num = (Rational::one() - &params.alpha) * (&hg - params.gamma() * &hk);
    let den = (&hk - Rational::one()) * (&hk - &hg);
    Ok(num / den)
}

/// Floating [`csit_reduction`] for orders too large for exact harmonics.
/// `cumulative` is `Γ = Kγ` and need not be an integer here.
pub fn csit_reduction_f64(k: f64, cumulative: f64, alpha: f64) -> Result<f64> {
    if k.is_nan() || cumulative.is_nan() || k < 2.0 || cumulative < 1.0 || cumulative >= k {
        return Err(Error::invalid(format!(
            "need K >= 2 and 1 <= Γ < K, got {k}, {cumulative}"
        )));
    }
    let hk = harmonic_f64(k);
    let hg = harmonic_f64(cumulative);
    let gamma = cumulative / k;
    Ok((1.0 - alpha) * (hg - gamma * hk) / ((hk - 1.0) * (hk - hg)))
}

/// `α_{b,K−1} = (K(1−γ) − 1)/((K−1)(1−γ))`: beyond this CSIT quality the
/// delivery time is already `1−γ`.
pub fn alpha_max_needed(k: u32, gamma: &Rational) -> Result<Rational> {
    if k < 2 {
        return Err(Error::invalid("needs K >= 2"));
    }
    if !gamma.is_positive() || *gamma >= Rational::one() {
        return Err(Error::invalid(format!("γ = {gamma} must lie in (0, 1)")));
    }
    let rest = Rational::one() - gamma;
    Ok((int(k as i64) * &rest - Rational::one()) / (int(k as i64 - 1) * rest))
}

/// Cache fraction `e^{−1/α}` that, with delayed CSIT only, matches the
/// large-K DoF of `α`-quality current CSIT.
pub fn gamma_substitute(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} must lie in (0, 1]"
        )));
    }
    Ok((-1.0 / alpha).exp())
}

/// Delayed-CSIT scalars and their normalised load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcsitLoad {
    pub k: u64,
    pub cumulative: u64,
    pub coherence: f64,
    /// `L(Γ) = Σ_{j=Γ+1}^{K} (K−j+1)(K−j)/j`
    pub scalars: f64,
    /// `Q(Γ) = L(Γ)/(T_c·K)`
    pub load: f64,
}

/// Term `(K−j+1)(K−j)/j` split as integer quotient plus remainder fraction.
fn dcsit_term(k: u64, j: u64) -> (u128, u64) {
    let p = (k - j + 1) as u128 * (k - j) as u128;
    ((p / j as u128), (p % j as u128) as u64)
}

/// Series `L(Γ)`, summed exactly as a rational.
pub fn dcsit_scalar_count_exact(k: u64, cumulative: u64) -> Result<Rational> {
    if cumulative > k {
        return Err(Error::invalid(format!("Γ = {cumulative} exceeds K = {k}")));
    }
    let mut total = Rational::zero();
    for j in cumulative + 1..=k {
        let (q, r) = dcsit_term(k, j);
        total += Rational::from_integer(BigInt::from(q))
            + Rational::new(BigInt::from(r), BigInt::from(j));
    }
    Ok(total)
}

/// Series `L(Γ)` in floating point: integer parts are accumulated exactly,
/// fractional parts with compensated summation.
pub fn dcsit_scalar_count(k: u64, cumulative: u64) -> Result<f64> {
    if cumulative > k {
        return Err(Error::invalid(format!("Γ = {cumulative} exceeds K = {k}")));
    }
    let mut whole: u128 = 0;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for j in cumulative + 1..=k {
        let (q, r) = dcsit_term(k, j);
        whole += q;
        let x = r as f64 / j as f64;
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    Ok(whole as f64 + (sum + comp))
}

/// Closed-form expression `(K²+K)(H_K−H_Γ) − K(1−γ)(3K−Kγ−1)/2` that has
/// circulated for `L(Γ)`. It does not agree with the series (at `K = 3,
/// Γ = 0` it gives 10 against 7) and is kept only so reports can show the
/// discrepancy.
pub fn dcsit_count_closed_form(k: u64, cumulative: u64) -> f64 {
    let kf = k as f64;
    let gamma = cumulative as f64 / kf;
    (kf * kf + kf) * (harmonic_f64(kf) - harmonic_f64(cumulative as f64))
        - kf * (1.0 - gamma) * (3.0 * kf - kf * gamma - 1.0) / 2.0
}

pub fn dcsit_load(k: u64, cumulative: u64, coherence: f64) -> Result<DcsitLoad> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if coherence.is_nan() || coherence <= 0.0 {
        return Err(Error::invalid(format!(
            "coherence time {coherence} must be positive"
        )));
    }
    let scalars = dcsit_scalar_count(k, cumulative)?;
    Ok(DcsitLoad {
        k,
        cumulative,
        coherence,
        scalars,
        load: scalars / (coherence * k as f64),
    })
}

/// Zero-forcing feedback load `Q_ZF = K²/(T_c·K) = K/T_c`.
pub fn zf_load(k: u64, coherence: f64) -> Result<f64> {
    if k == 0 || coherence.is_nan() || coherence <= 0.0 {
        return Err(Error::invalid("need K >= 1 and positive coherence time"));
    }
    Ok(k as f64 / coherence)
}

/// Floating-point counterpart of [`performance_point`] for large grid scans,
/// with `H_1..H_{max_k}` tabulated once.
#[derive(Debug, Clone)]
pub struct FastEvaluator {
    harmonics: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastPoint {
    pub eta: u32,
    pub t_best: f64,
    pub t_lower: f64,
    /// `s` attaining the lower bound.
    pub lower_argmax: u64,
    pub gap: f64,
}

impl FastEvaluator {
    pub fn new(max_k: u32) -> Self {
        let mut harmonics = Vec::with_capacity(max_k as usize + 1);
        harmonics.push(0.0);
        for i in 1..=max_k as usize {
            harmonics.push(harmonics[i - 1] + 1.0 / i as f64);
        }
        FastEvaluator { harmonics }
    }

    fn h(&self, n: u64) -> f64 {
        self.harmonics[n as usize]
    }

    /// Point for `K` users, `N` files and cumulative cache `Γ` (so `M = ΓN/K`).
    pub fn point(&self, k: u32, n: u64, cumulative: u32, alpha: f64) -> Result<FastPoint> {
        if k as usize >= self.harmonics.len() {
            return Err(Error::invalid(format!(
                "K = {k} beyond the tabulated range"
            )));
        }
        check_gamma_range(k, cumulative)?;
        if n < k as u64 {
            return Err(Error::invalid(format!("N = {n} must be at least K = {k}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!(
                "alpha = {alpha} must lie in [0, 1]"
            )));
        }
        let (kf, g) = (k as f64, cumulative as f64);
        let hk = self.h(k as u64);
        let breakpoint =
            |eta: u32| (eta as f64 - g) / (g * (hk - self.h(eta as u64) - 1.0) + eta as f64);
        // grid alphas often sit exactly on a breakpoint; resolve ties upward as the exact path does
        let mut eta = cumulative;
        while eta + 1 < k && breakpoint(eta + 1) <= alpha + 1e-12 {
            eta += 1;
        }
        let tail = hk - self.h(eta as u64);
        let t = (kf - g) * tail / ((kf - eta as f64) + alpha * (eta as f64 + kf * (tail - 1.0)));
        let t_best = t.max(1.0 - g / kf);

        let m = g * n as f64 / kf;
        let s_max = if m == 0.0 {
            k as u64
        } else {
            ((n as f64 / m).floor() as u64).clamp(1, k as u64)
        };
        let (mut t_lower, mut lower_argmax) = (f64::NEG_INFINITY, 1);
        for s in 1..=s_max {
            let hs = self.h(s);
            let term = (hs - m * s as f64 / (n / s) as f64) / (hs * alpha + 1.0 - alpha);
            if term > t_lower {
                t_lower = term;
                lower_argmax = s;
            }
        }
        if t_lower <= 0.0 {
            return Err(Error::UndefinedGap);
        }
        Ok(FastPoint {
            eta,
            t_best,
            t_lower,
            lower_argmax,
            gap: t_best / t_lower,
        })
    }
}

/// All headline quantities for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformancePoint {
    pub t_simple: Rational,
    pub t_best: Rational,
    pub t_lower: Rational,
    pub dof: Rational,
    pub eta: u32,
    pub gap: f64,
}

impl PerformancePoint {
    pub fn t_lower_f64(&self) -> f64 {
        to_f64(&self.t_lower)
    }

    pub fn dof_f64(&self) -> f64 {
        to_f64(&self.dof)
    }
}

pub fn performance_point(params: &SystemParams) -> Result<PerformancePoint> {
    let g = params.delivery_gamma()?;
    let eta = select_eta(params.k, g, &params.alpha)?;
    let t_best = achievable_t_best(params)?;
    let t_lower = lower_bound_t(params);
    if !t_lower.is_positive() {
        return Err(Error::UndefinedGap);
    }
    let gap = to_f64(&(&t_best / &t_lower));
    Ok(PerformancePoint {
        t_simple: achievable_t_simple(params)?,
        t_best,
        t_lower,
        dof: dof(params)?,
        eta,
        gap,
    })
}
