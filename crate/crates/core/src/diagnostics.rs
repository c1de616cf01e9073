//! Lyapunov functionals, Wasserstein distances to a Dirac mass, the
//! critical-size prediction and least-squares estimators for the long-time
//! rates of a run.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{Record, TimeSeries};
use crate::rates::{DepolyProfile, RateModel};
use crate::state::SystemState;

/// Critical size `x̄` solving `ρ₀ x̄ + d(x̄) = M`, and `V̄ = d(x̄)`.
pub fn predict_xbar(m: f64, rho0: f64, d: &DepolyProfile) -> Result<(f64, f64)> {
    if !d.is_increasing() {
        return Err(Error::Regime("critical size needs an increasing depolymerization rate".into()));
    }
    let x = predict_xbar_with(m, rho0, d.at_zero(), |x| d.value(x))?;
    Ok((x, d.value(x)))
}

/// Bisection for the root of `rho0 x + d(x) = m` on `[0, (m − d0)/rho0]`,
/// for any nondecreasing `d` with `d(0) = d0`.
pub fn predict_xbar_with(m: f64, rho0: f64, d0: f64, d: impl Fn(f64) -> f64) -> Result<f64> {
    if !(rho0 > 0.0) {
        return Err(Error::InvalidArgument(format!("rho0 must be positive, got {rho0}")));
    }
    if m <= d0 {
        return Err(Error::Regime(format!(
            "M = {m} <= d(0) = {d0}: no positive critical size, all mass returns to monomers"
        )));
    }
    let f = |x: f64| rho0 * x + d(x) - m;
    let (mut lo, mut hi) = (0.0, (m - d0) / rho0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1e-300) * 1e-3 {
            break;
        }
    }
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// `W_p(u, ρ δ_x̄)` for a density on a grid; the coupling with a Dirac is forced.
pub fn wasserstein_to_dirac(state: &SystemState, xbar: f64, p: u32) -> f64 {
    let dx = state.grid.dx();
    wasserstein_to_dirac_weighted(
        state.u.iter().enumerate().map(|(i, &u)| (state.grid.center(i), u * dx)),
        xbar,
        p,
    )
}

/// Same for weighted points `(x_j, w_j)`.
pub fn wasserstein_to_dirac_weighted(
    points: impl IntoIterator<Item = (f64, f64)>,
    xbar: f64,
    p: u32,
) -> f64 {
    assert!(p == 1 || p == 2, "only p = 1, 2 are supported");
    let s: f64 = points.into_iter().map(|(x, w)| (x - xbar).abs().powi(p as i32) * w).sum();
    s.powf(1.0 / p as f64)
}

/// `W_p` between two weighted point sets of equal total weight, by walking
/// the two quantile functions. Points need not be sorted.
pub fn wasserstein_between(a: &[(f64, f64)], b: &[(f64, f64)], p: u32) -> Result<f64> {
    assert!(p == 1 || p == 2, "only p = 1, 2 are supported");
    let sorted = |pts: &[(f64, f64)]| {
        let mut v: Vec<(f64, f64)> = pts.iter().copied().filter(|&(_, w)| w > 0.0).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let wa: f64 = a.iter().map(|p| p.1).sum();
    let wb: f64 = b.iter().map(|p| p.1).sum();
    if (wa - wb).abs() > 1e-9 * wa.max(wb) {
        return Err(Error::InvalidArgument(format!("total weights differ: {wa} vs {wb}")));
    }
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().map_or(0.0, |p| p.1), b.first().map_or(0.0, |p| p.1));
    let mut s = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        s += (a[i].0 - b[j].0).abs().powi(p as i32) * m;
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            ra = a.get(i).map_or(0.0, |p| p.1);
        }
        if rb <= 0.0 {
            j += 1;
            rb = b.get(j).map_or(0.0, |p| p.1);
        }
    }
    Ok(s.powf(1.0 / p as f64))
}

/// Cell centers with weights `u_i Δx`.
pub fn weighted_cells(state: &SystemState) -> Vec<(f64, f64)> {
    let dx = state.grid.dx();
    state.u.iter().enumerate().map(|(i, &u)| (state.grid.center(i), u * dx)).collect()
}

/// Monomer entropy `H = Σ k(x_i) u_i Δx + (V² − d(0)²)/2` with `k = ∫_0^x d`.
///
/// `V` is clamped to `d(0)` from below (outside the domain of the monomer
/// term); the second value reports whether that happened.
pub fn entropy_h(state: &SystemState, d: &DepolyProfile) -> (f64, bool) {
    let dx = state.grid.dx();
    let polymers: f64 = state
        .u
        .iter()
        .enumerate()
        .map(|(i, u)| d.antiderivative(state.grid.center(i)) * u)
        .sum::<f64>()
        * dx;
    let d0 = d.at_zero();
    let clamped = state.v < d0;
    if clamped && d.is_increasing() {
        debug!("entropy: V = {} below d(0) = {d0}, clamped", state.v);
    }
    let v = state.v.max(d0);
    (polymers + 0.5 * (v * v - d0 * d0), clamped)
}

/// `Σ (V − d(x_i))² u_i Δx`, the entropy dissipation for `k = ∫ d`.
pub fn dissipation(state: &SystemState, d: &DepolyProfile) -> f64 {
    let dx = state.grid.dx();
    state
        .u
        .iter()
        .enumerate()
        .map(|(i, u)| (state.v - d.value(state.grid.center(i))).powi(2) * u)
        .sum::<f64>()
        * dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AsymptoticResult {
    /// Concentration at the critical size (pure transport, increasing `d`).
    T23,
    /// Nucleation with `d(0) > 0`.
    T24D0Pos,
    /// Nucleation with `d(0) = 0`.
    T24D0Zero,
    /// Shattering under fragmentation.
    T26,
    /// `ρ (V − d(0)) → d'(0)(M − d(0))`.
    L39,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitReport {
    pub estimator: String,
    pub fitted: f64,
    pub theory: f64,
    pub relative_error: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
}

impl RateFitReport {
    fn new(estimator: &str, fitted: f64, theory: f64, window: (f64, f64), r_squared: f64) -> Self {
        let relative_error = if theory != 0.0 {
            (fitted - theory).abs() / theory.abs()
        } else {
            (fitted - theory).abs()
        };
        RateFitReport { estimator: estimator.into(), fitted, theory, relative_error, window, r_squared }
    }

    pub fn within(&self, tol: f64) -> bool {
        self.relative_error <= tol
    }
}

/// Least-squares line `y = a + b s`; returns `(a, b, R²)`.
pub fn linear_fit(s: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = s.len() as f64;
    let ms = s.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in s.iter().zip(y) {
        sxx += (a - ms) * (a - ms);
        sxy += (a - ms) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * ms;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (intercept, slope, r2)
}

fn window_records(series: &TimeSeries, window: Option<(f64, f64)>) -> Result<(Vec<&Record>, (f64, f64))> {
    let t_end = series
        .last()
        .map(|r| r.t)
        .ok_or_else(|| Error::InsufficientData("empty series".into()))?;
    let (a, b) = window.unwrap_or((0.5 * t_end, t_end));
    let recs: Vec<&Record> = series.records.iter().filter(|r| r.t >= a - 1e-12 && r.t <= b + 1e-12).collect();
    if recs.len() < 3 || b <= a {
        return Err(Error::InsufficientData(format!(
            "window [{a}, {b}] holds {} samples, need 3",
            recs.len()
        )));
    }
    for r in &recs {
        if ![r.t, r.v, r.rho, r.m1, r.m2].iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("series value at t={}", r.t)));
        }
    }
    Ok((recs, (a, b)))
}

/// Fit the long-time functionals of one asymptotic result over a window
/// (default: the trailing half of the run).
pub fn fit_rates(
    series: &TimeSeries,
    model: &RateModel,
    result: AsymptoticResult,
    window: Option<(f64, f64)>,
) -> Result<Vec<RateFitReport>> {
    let (recs, win) = window_records(series, window)?;
    let d = &model.depoly;
    let d0 = d.at_zero();
    let slope0 = d.derivative(0.0);
    let m = series.m;
    let i0 = model.nucleation.i0 as f64;
    let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let mut out = Vec::new();
    match result {
        AsymptoticResult::T23 => {
            let rho0 = series.records[0].rho;
            let (xbar, vbar) = predict_xbar(m, rho0, d)?;
            let w2: Vec<f64> = recs
                .iter()
                .map(|r| r.w2.map(f64::ln).unwrap_or(f64::NAN))
                .collect();
            if w2.iter().any(|x| !x.is_finite()) {
                return Err(Error::InsufficientData(format!("series lacks positive W2 against x̄ = {xbar}")));
            }
            let (_, slope, r2) = linear_fit(&t, &w2);
            out.push(RateFitReport::new("log_w2_slope", slope, -slope0, win, r2));
            let v_end = recs.last().map(|r| r.v).unwrap_or(f64::NAN);
            out.push(RateFitReport::new("v_limit", v_end, vbar, win, 1.0));
        }
        AsymptoticResult::T24D0Pos => {
            if !(d0 > 0.0) {
                return Err(Error::Regime("d(0) > 0 required".into()));
            }
            let rho: Vec<f64> = recs.iter().map(|r| r.rho).collect();
            let (_, slope, r2) = linear_fit(&t, &rho);
            out.push(RateFitReport::new("rho_over_t", slope, d0.powf(i0), win, r2));
            out.push(limit_fit(
                "t_times_v_minus_d0",
                &recs,
                |r| r.t * (r.v - d0),
                |t| 1.0 / t,
                slope0 / d0.powf(i0) * (m - d0),
                win,
            ));
        }
        AsymptoticResult::T24D0Zero => {
            if d0 != 0.0 {
                return Err(Error::Regime("d(0) = 0 required".into()));
            }
            let q = 1.0 / (i0 + 1.0);
            let s: Vec<f64> = t.iter().map(|t| t.powf(q)).collect();
            let rho: Vec<f64> = recs.iter().map(|r| r.rho).collect();
            let (_, slope, r2) = linear_fit(&s, &rho);
            let theory = (1.0 + i0).powf(q) * (slope0 * m).powf(i0 * q);
            out.push(RateFitReport::new("rho_over_t_pow", slope, theory, win, r2));
            out.push(limit_fit(
                "t_pow_times_v",
                &recs,
                |r| r.t.powf(q) * r.v,
                |t| t.powf(-q),
                (slope0 * m / (1.0 + i0)).powf(q),
                win,
            ));
        }
        AsymptoticResult::T26 => {
            let (_, b_m) = model
                .frag
                .lower_bound()
                .ok_or_else(|| Error::Regime("fragmentation required".into()))?;
            let logs: Vec<f64> = recs.iter().map(|r| r.rho.ln()).collect();
            let (_, slope, r2) = linear_fit(&t, &logs);
            out.push(RateFitReport::new("log_rho_slope", slope, b_m, win, r2));
        }
        AsymptoticResult::L39 => {
            out.push(limit_fit(
                "rho_times_v_minus_d0",
                &recs,
                |r| r.rho * (r.v - d0),
                |t| 1.0 / t,
                slope0 * (m - d0),
                win,
            ));
        }
    }
    Ok(out)
}

/// Fit `y(t) = L + c s(t)` with a decaying correction `s` and report `L`.
fn limit_fit(
    name: &str,
    recs: &[&Record],
    y: impl Fn(&Record) -> f64,
    s: impl Fn(f64) -> f64,
    theory: f64,
    win: (f64, f64),
) -> RateFitReport {
    let ys: Vec<f64> = recs.iter().map(|r| y(r)).collect();
    let ss: Vec<f64> = recs.iter().map(|r| s(r.t)).collect();
    let (limit, _, r2) = linear_fit(&ss, &ys);
    RateFitReport::new(name, limit, theory, win, r2)
}

/// Envelope `0 < V − d(0) ≤ C t e^{−B_m t}`: `C` is fitted on `fit_window` as
/// the largest ratio observed there, and the bound is evaluated at the last
/// record, which may lie outside the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub c: f64,
    pub t_check: f64,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

pub fn shattering_envelope(
    series: &TimeSeries,
    model: &RateModel,
    fit_window: (f64, f64),
) -> Result<EnvelopeCheck> {
    let (_, b_m) = model
        .frag
        .lower_bound()
        .ok_or_else(|| Error::Regime("fragmentation required".into()))?;
    let d0 = model.depoly.at_zero();
    let (recs, _) = window_records(series, Some(fit_window))?;
    let c = recs
        .iter()
        .map(|r| (r.v - d0) / (r.t * (-b_m * r.t).exp()))
        .fold(0.0, f64::max);
    let last = series.last().ok_or_else(|| Error::InsufficientData("empty series".into()))?;
    let bound = c * last.t * (-b_m * last.t).exp();
    let value = last.v - d0;
    Ok(EnvelopeCheck { c, t_check: last.t, value, bound, passed: value > 0.0 && value <= bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Decay {
    pub passed: bool,
    pub m2_start: f64,
    pub m2_end: f64,
    /// Fitted `κ` in `M₂ ∝ e^{−κ t}` over the trailing half.
    pub constant: f64,
}

/// Second-moment decay `M₂(t_end) < M₂(0)/100`, with the fitted exponential constant.
pub fn m2_decay_check(series: &TimeSeries, model: &RateModel) -> Result<M2Decay> {
    if !model.depoly.is_increasing() {
        return Err(Error::Regime("second-moment decay applies to increasing d".into()));
    }
    let first = series.records.first().ok_or_else(|| Error::InsufficientData("empty series".into()))?;
    let last = series.last().unwrap();
    if first.m2 == 0.0 && last.m2 == 0.0 {
        return Ok(M2Decay { passed: true, m2_start: 0.0, m2_end: 0.0, constant: 0.0 });
    }
    let (recs, _) = window_records(series, None)?;
    let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let logs: Vec<f64> = recs.iter().map(|r| r.m2.max(f64::MIN_POSITIVE).ln()).collect();
    let (_, slope, _) = linear_fit(&t, &logs);
    let passed = last.m2 < first.m2 / 100.0;
    if !passed {
        warn!("M2 decayed from {:e} to {:e} only", first.m2, last.m2);
    }
    Ok(M2Decay { passed, m2_start: first.m2, m2_end: last.m2, constant: -slope })
}
