//! Parametric reaction rates: depolymerization `d(x)`, fragmentation rate
//! `B(x)` with its daughter kernel `κ(y, x)`, and the nucleation boundary
//! flux `ε V^{i₀}`.
//!
//! Only the validated families below are supported. Each carries the
//! constants needed by the asymptotic results (α, β, B_m, B_M, γ, ...), and
//! [`validate_assumptions`] turns the hypothesis lists into a machine-checked
//! report.

use serde::{Deserialize, Serialize};

use crate::error::{Bound, Error, Result};

/// Depolymerization rate profile `d(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepolyProfile {
    /// `d(x) = d0 + alpha * x`.
    LinearIncreasing { d0: f64, alpha: f64 },
    /// `d(x) = d_inf + c_d * (1 + x)^(-n)`.
    DecayingInverse { d_inf: f64, c_d: f64, n: u32 },
}

impl DepolyProfile {
    pub fn check(&self) -> Result<()> {
        match *self {
            DepolyProfile::LinearIncreasing { d0, alpha } => {
                if !(d0 >= 0.0 && d0.is_finite()) {
                    return Err(Error::InvalidArgument(format!("d0 must be >= 0, got {d0}")));
                }
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
                }
            }
            DepolyProfile::DecayingInverse { d_inf, c_d, n } => {
                if !(d_inf > 0.0 && d_inf.is_finite()) {
                    return Err(Error::InvalidArgument(format!("d_inf must be > 0, got {d_inf}")));
                }
                if !(c_d > 0.0 && c_d.is_finite()) {
                    return Err(Error::InvalidArgument(format!("c_d must be > 0, got {c_d}")));
                }
                if n == 0 {
                    return Err(Error::InvalidArgument("n must be a positive integer".into()));
                }
            }
        }
        Ok(())
    }

    /// Checked evaluation of `d(x)`.
    pub fn eval_d(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::NegativeSize(x));
        }
        Ok(self.value(x))
    }

    /// Unchecked `d(x)`; callers guarantee `x >= 0`.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            DepolyProfile::LinearIncreasing { d0, alpha } => d0 + alpha * x,
            DepolyProfile::DecayingInverse { d_inf, c_d, n } => {
                d_inf + c_d * (1.0 + x).powi(-(n as i32))
            }
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            DepolyProfile::LinearIncreasing { alpha, .. } => alpha,
            DepolyProfile::DecayingInverse { c_d, n, .. } => {
                -(n as f64) * c_d * (1.0 + x).powi(-(n as i32) - 1)
            }
        }
    }

    /// `d(0)`.
    pub fn at_zero(&self) -> f64 {
        self.value(0.0)
    }

    /// `inf_x d(x)`: `d(0)` for increasing profiles, `d(∞)` for decaying ones.
    pub fn infimum(&self) -> f64 {
        match *self {
            DepolyProfile::LinearIncreasing { d0, .. } => d0,
            DepolyProfile::DecayingInverse { d_inf, .. } => d_inf,
        }
    }

    /// `sup_x d(x)`, infinite for increasing profiles.
    pub fn supremum(&self) -> f64 {
        match *self {
            DepolyProfile::LinearIncreasing { .. } => f64::INFINITY,
            DepolyProfile::DecayingInverse { d_inf, c_d, .. } => d_inf + c_d,
        }
    }

    pub fn is_increasing(&self) -> bool {
        matches!(self, DepolyProfile::LinearIncreasing { .. })
    }

    /// The unique `x >= 0` with `d(x) = v`.
    pub fn eval_d_inverse(&self, v: f64) -> Result<f64> {
        if v.is_nan() {
            return Err(Error::NonFinite("rate passed to d^-1".into()));
        }
        match *self {
            DepolyProfile::LinearIncreasing { d0, alpha } => {
                if v < d0 {
                    return Err(Error::OutOfRange { value: v, bound: Bound::Lower, limit: d0 });
                }
                if v.is_infinite() {
                    return Err(Error::OutOfRange {
                        value: v,
                        bound: Bound::Upper,
                        limit: f64::INFINITY,
                    });
                }
                Ok((v - d0) / alpha)
            }
            DepolyProfile::DecayingInverse { d_inf, c_d, n } => {
                // d(∞) is never attained
                if v <= d_inf {
                    return Err(Error::OutOfRange { value: v, bound: Bound::Lower, limit: d_inf });
                }
                if v > d_inf + c_d {
                    return Err(Error::OutOfRange {
                        value: v,
                        bound: Bound::Upper,
                        limit: d_inf + c_d,
                    });
                }
                let x = (c_d / (v - d_inf)).powf(1.0 / n as f64) - 1.0;
                Ok(x.max(0.0))
            }
        }
    }

    /// `k(x) = ∫_0^x d(s) ds`, the convex weight of the monomer entropy.
    pub fn antiderivative(&self, x: f64) -> f64 {
        match *self {
            DepolyProfile::LinearIncreasing { d0, alpha } => d0 * x + 0.5 * alpha * x * x,
            DepolyProfile::DecayingInverse { d_inf, c_d, n } => {
                let tail = if n == 1 {
                    (1.0 + x).ln()
                } else {
                    let m = n as f64 - 1.0;
                    (1.0 - (1.0 + x).powf(-m)) / m
                };
                d_inf * x + c_d * tail
            }
        }
    }
}

/// Total fragmentation rate `B(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FragRate {
    /// No fragmentation (pure Lifshitz–Slyozov dynamics).
    None,
    /// `B(x) = b_m`.
    Constant { b_m: f64 },
    /// `B(x) = b * min(x, x_sat)^gamma`.
    SaturatedPower { b: f64, gamma: f64, x_sat: f64 },
}

/// Daughter distribution of a binary split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `κ(y, x) = 1/y` on `[0, y]`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragProfile {
    pub rate: FragRate,
    #[serde(default)]
    pub kernel: Kernel,
}

impl FragProfile {
    pub const NONE: FragProfile = FragProfile { rate: FragRate::None, kernel: Kernel::Uniform };

    pub fn constant(b_m: f64) -> Self {
        FragProfile { rate: FragRate::Constant { b_m }, kernel: Kernel::Uniform }
    }

    pub fn saturated_power(b: f64, gamma: f64, x_sat: f64) -> Self {
        FragProfile {
            rate: FragRate::SaturatedPower { b, gamma, x_sat },
            kernel: Kernel::Uniform,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self.rate {
            FragRate::None => Ok(()),
            FragRate::Constant { b_m } if b_m > 0.0 && b_m.is_finite() => Ok(()),
            FragRate::Constant { b_m } => {
                Err(Error::InvalidArgument(format!("b_m must be > 0, got {b_m}")))
            }
            FragRate::SaturatedPower { b, gamma, x_sat } => {
                if b > 0.0 && gamma > 0.0 && x_sat > 0.0 && b.is_finite() && x_sat.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "saturated power needs b, gamma, x_sat > 0 (got {b}, {gamma}, {x_sat})"
                    )))
                }
            }
        }
    }

    #[inline]
    pub fn rate(&self, x: f64) -> f64 {
        match self.rate {
            FragRate::None => 0.0,
            FragRate::Constant { b_m } => b_m,
            FragRate::SaturatedPower { b, gamma, x_sat } => b * x.clamp(0.0, x_sat).powf(gamma),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.rate, FragRate::None)
    }

    /// `sup_x B(x)`.
    pub fn sup_rate(&self) -> f64 {
        match self.rate {
            FragRate::None => 0.0,
            FragRate::Constant { b_m } => b_m,
            FragRate::SaturatedPower { b, gamma, x_sat } => b * x_sat.powf(gamma),
        }
    }

    /// Threshold size `𝒜` above which `B >= B_m`, and that `B_m`.
    pub fn lower_bound(&self) -> Option<(f64, f64)> {
        match self.rate {
            FragRate::None => None,
            FragRate::Constant { b_m } => Some((0.0, b_m)),
            FragRate::SaturatedPower { b, gamma, x_sat } => {
                let a = x_sat.min(1.0);
                Some((a, b * a.powf(gamma)))
            }
        }
    }

    /// `∫_0^x κ(y, z) (z/y)^k dz`.
    pub fn kernel_partial_moment(&self, y: f64, x: f64, k: u32) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::InvalidArgument(format!("parent size must be > 0, got {y}")));
        }
        if x < 0.0 {
            return Err(Error::NegativeSize(x));
        }
        if x > y {
            return Err(Error::InvalidArgument(format!("fragment size {x} exceeds parent {y}")));
        }
        match self.kernel {
            Kernel::Uniform => {
                let kp1 = k as f64 + 1.0;
                Ok((x / y).powi(k as i32 + 1) / kp1)
            }
        }
    }

    /// `a_k(x) = 1 - 2 ∫_0^x κ(x, y) (y/x)^k dy`.
    pub fn a_coefficient(&self, x: f64, k: u32) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidArgument(format!("size must be > 0, got {x}")));
        }
        Ok(1.0 - 2.0 * self.kernel_partial_moment(x, x, k)?)
    }

    /// `|∫_x^{x0} κ(y, z) dz|` for the kernel, used by the Hölder-type hypothesis.
    pub fn kernel_interval_mass(&self, y: f64, x: f64, x0: f64) -> f64 {
        match self.kernel {
            Kernel::Uniform => {
                let lo = x.min(x0).clamp(0.0, y);
                let hi = x.max(x0).clamp(0.0, y);
                (hi - lo) / y
            }
        }
    }
}

/// Nucleation boundary flux `ε V^{i₀}`, active only while `V > d(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NucleationSpec {
    pub epsilon: u8,
    pub i0: u32,
}

impl NucleationSpec {
    pub const OFF: NucleationSpec = NucleationSpec { epsilon: 0, i0: 1 };

    pub fn new(epsilon: u8, i0: u32) -> Result<Self> {
        let spec = NucleationSpec { epsilon, i0 };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.epsilon > 1 {
            return Err(Error::InvalidArgument(format!("epsilon must be 0 or 1, got {}", self.epsilon)));
        }
        if self.i0 == 0 {
            return Err(Error::InvalidArgument("i0 must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.epsilon == 1
    }

    /// Inflow at `x = 0`; zero unless `v > d0` strictly.
    #[inline]
    pub fn flux(&self, v: f64, d0: f64) -> f64 {
        if self.epsilon == 1 && v - d0 > 0.0 {
            v.powi(self.i0 as i32)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub depoly: DepolyProfile,
    pub frag: FragProfile,
    pub nucleation: NucleationSpec,
}

impl RateModel {
    pub fn new(depoly: DepolyProfile, frag: FragProfile, nucleation: NucleationSpec) -> Result<Self> {
        let model = RateModel { depoly, frag, nucleation };
        model.check()?;
        Ok(model)
    }

    /// Pure Lifshitz–Slyozov: no fragmentation, no nucleation.
    pub fn lifshitz_slyozov(depoly: DepolyProfile) -> Self {
        RateModel { depoly, frag: FragProfile::NONE, nucleation: NucleationSpec::OFF }
    }

    pub fn check(&self) -> Result<()> {
        self.depoly.check()?;
        self.frag.check()?;
        self.nucleation.check()
    }

    pub fn is_pure_ls(&self) -> bool {
        self.frag.is_none() && !self.nucleation.is_active()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Increasing depolymerization (concentration or shattering results).
    Increasing,
    /// Decreasing depolymerization balanced by fragmentation (steady state).
    DecreasingWithFragmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Witness constants found while checking the hypotheses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Witnesses {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub b_min: Option<f64>,
    pub b_min_threshold: Option<f64>,
    pub b_max: Option<f64>,
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub kernel_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub regime: Regime,
    pub checks: Vec<AssumptionCheck>,
    pub witnesses: Witnesses,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(AssumptionCheck { name: name.into(), passed, detail: detail.into() });
    }
}

// sample points for the pointwise checks
fn probe_sizes() -> impl Iterator<Item = f64> {
    (0..=400).map(|i| {
        let s = i as f64 / 400.0;
        1e-3 * (1e6f64).powf(s) - 1e-3
    })
}

/// Check a model against the hypotheses of the chosen regime.
pub fn validate_assumptions(model: &RateModel, regime: Regime) -> AssumptionReport {
    let mut report = AssumptionReport { regime, checks: Vec::new(), witnesses: Witnesses::default() };
    let d = model.depoly;
    let frag = model.frag;

    match model.check() {
        Ok(()) => report.push("parameters well formed", true, "all parameters in range"),
        Err(e) => report.push("parameters well formed", false, e.to_string()),
    }

    // kernel normalization: unit number and half mass
    let mut kernel_ok = true;
    for y in [1e-3, 0.5, 1.0, 7.0, 1e3] {
        let n0 = frag.kernel_partial_moment(y, y, 0).unwrap_or(f64::NAN);
        let n1 = frag.kernel_partial_moment(y, y, 1).unwrap_or(f64::NAN);
        kernel_ok &= (n0 - 1.0).abs() <= 1e-14 && (n1 - 0.5).abs() <= 1e-14;
    }
    report.push(
        "kernel normalization",
        kernel_ok,
        "∫κ(y,x)dx = 1 and ∫xκ(y,x)dx = y/2 on sampled y",
    );

    match regime {
        Regime::Increasing => {
            match d {
                DepolyProfile::LinearIncreasing { alpha, .. } => {
                    report.witnesses.alpha = Some(alpha);
                    report.witnesses.beta = Some(alpha);
                    report.push(
                        "depolymerization increasing with bounded slope",
                        alpha > 0.0,
                        format!("0 < alpha = {alpha} <= d' <= beta = {alpha}"),
                    );
                }
                DepolyProfile::DecayingInverse { .. } => report.push(
                    "depolymerization increasing with bounded slope",
                    false,
                    "d is decreasing; slope bounds 0 < alpha <= d' fail",
                ),
            }
            match frag.rate {
                FragRate::None => report.push(
                    "fragmentation rate bounded below",
                    true,
                    "no fragmentation (not applicable)",
                ),
                FragRate::Constant { b_m } => {
                    report.witnesses.b_min = Some(b_m);
                    report.witnesses.b_min_threshold = Some(0.0);
                    report.witnesses.b_max = Some(b_m);
                    report.push(
                        "fragmentation rate bounded below",
                        b_m > 0.0,
                        format!("B(x) >= B_m = {b_m} for all x >= 0"),
                    );
                }
                FragRate::SaturatedPower { .. } => report.push(
                    "fragmentation rate bounded below",
                    false,
                    "B(0) = 0, no positive lower bound on all sizes",
                ),
            }
        }
        Regime::DecreasingWithFragmentation => {
            match d {
                DepolyProfile::DecayingInverse { d_inf, c_d, n } => {
                    let decreasing = probe_sizes()
                        .collect::<Vec<_>>()
                        .windows(2)
                        .all(|w| d.value(w[1]) < d.value(w[0]) || w[1] == w[0]);
                    report.push(
                        "depolymerization strictly decreasing",
                        decreasing && d_inf > 0.0,
                        format!("d' < 0 everywhere, d > d_inf = {d_inf} > 0"),
                    );
                    let kappa = c_d * 2f64.powi(-(n as i32));
                    let tail_ok = probe_sizes()
                        .filter(|&x| x >= 1.0)
                        .all(|x| d.value(x) - d_inf >= kappa * x.powi(-(n as i32)) * (1.0 - 1e-12));
                    report.push(
                        "depolymerization polynomial tail",
                        tail_ok,
                        format!("d(x) - d_inf >= {kappa} x^-{n} for x >= 1"),
                    );
                }
                DepolyProfile::LinearIncreasing { alpha, .. } => {
                    report.push(
                        "depolymerization strictly decreasing",
                        false,
                        format!("d' = {alpha} > 0"),
                    );
                    report.push(
                        "depolymerization polynomial tail",
                        false,
                        "d is unbounded, no finite d(∞)",
                    );
                }
            }

            let c = frag.a_coefficient(1.0, 2).unwrap_or(f64::NAN);
            let a2_ok = probe_sizes().filter(|&x| x > 0.0).all(|x| {
                frag.a_coefficient(x, 2).map(|a| a >= c - 1e-14).unwrap_or(false)
            });
            report.witnesses.c = Some(c);
            report.push(
                "kernel does not charge endpoints",
                a2_ok && c > 0.0,
                format!("a_2(x) >= c = {c}"),
            );

            match frag.lower_bound() {
                Some((a, b_m)) if b_m > 0.0 => {
                    report.witnesses.b_min = Some(b_m);
                    report.witnesses.b_min_threshold = Some(a);
                    report.push(
                        "fragmentation rate bounded below for large sizes",
                        true,
                        format!("B(x) >= B_m = {b_m} for x >= {a}"),
                    );
                }
                _ => report.push(
                    "fragmentation rate bounded below for large sizes",
                    false,
                    "no positive lower bound",
                ),
            }
            let b_max = frag.sup_rate();
            report.witnesses.b_max = Some(b_max);
            report.push(
                "fragmentation rate bounded above",
                b_max.is_finite() && b_max > 0.0,
                format!("sup B = {b_max}"),
            );

            match frag.rate {
                FragRate::SaturatedPower { b, gamma, .. } => {
                    // the uniform kernel gives Hölder exponent 1, so the joint
                    // exponent is capped there
                    let g = gamma.min(1.0);
                    report.witnesses.gamma = Some(g);
                    report.witnesses.kernel_c = Some(1.0);
                    let bound_ok = probe_sizes()
                        .filter(|&x| x > 0.0)
                        .all(|x| frag.rate(x) * x.powf(-g) <= b.max(frag.sup_rate()) * (1.0 + 1e-12));
                    let holder_ok = [0.3, 1.0, 4.0].iter().all(|&y| {
                        [0.0, 0.1, 0.25].iter().all(|&x| {
                            let x0 = 0.2;
                            frag.kernel_interval_mass(y, x, x0)
                                <= (1.0f64).min(((x - x0).abs() / y).powf(g)) + 1e-14
                        })
                    });
                    report.push(
                        "fragmentation vanishes at small sizes",
                        bound_ok && holder_ok,
                        format!("B(x) x^-{g} bounded; |∫κ| <= C |x - x0|^{g} / y^{g} with C = 1"),
                    );
                }
                _ => report.push(
                    "fragmentation vanishes at small sizes",
                    false,
                    "B(x) x^-gamma is unbounded near 0 for every gamma > 0",
                ),
            }
        }
    }

    match model.nucleation.check() {
        Ok(()) => report.push(
            "nucleation parameters",
            true,
            format!("epsilon = {}, i0 = {}", model.nucleation.epsilon, model.nucleation.i0),
        ),
        Err(e) => report.push("nucleation parameters", false, e.to_string()),
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LIN: DepolyProfile = DepolyProfile::LinearIncreasing { d0: 0.5, alpha: 1.0 };
    const DEC: DepolyProfile = DepolyProfile::DecayingInverse { d_inf: 0.2, c_d: 1.0, n: 2 };

    #[test]
    fn evaluates_profiles() {
        assert_relative_eq!(LIN.eval_d(0.75).unwrap(), 1.25);
        assert_relative_eq!(DEC.eval_d(0.0).unwrap(), 1.2);
        assert_relative_eq!(DEC.eval_d(1.0).unwrap(), 0.45);
        assert!(matches!(LIN.eval_d(-1.0), Err(Error::NegativeSize(_))));
    }

    #[test]
    fn inverts_profiles() {
        assert_relative_eq!(LIN.eval_d_inverse(1.25).unwrap(), 0.75);
        assert_relative_eq!(DEC.eval_d_inverse(0.45).unwrap(), 1.0, epsilon = 1e-14);
        match DEC.eval_d_inverse(0.1) {
            Err(Error::OutOfRange { bound: Bound::Lower, limit, .. }) => assert_eq!(limit, 0.2),
            other => panic!("expected lower-bound error, got {other:?}"),
        }
        assert!(matches!(
            DEC.eval_d_inverse(1.3),
            Err(Error::OutOfRange { bound: Bound::Upper, .. })
        ));
        assert!(matches!(
            LIN.eval_d_inverse(0.4),
            Err(Error::OutOfRange { bound: Bound::Lower, .. })
        ));
    }

    #[test]
    fn kernel_moments() {
        let f = FragProfile::constant(1.0);
        assert_eq!(f.kernel_partial_moment(2.0, 2.0, 0).unwrap(), 1.0);
        assert_eq!(f.kernel_partial_moment(2.0, 2.0, 1).unwrap(), 0.5);
        assert_eq!(f.kernel_partial_moment(2.0, 1.0, 0).unwrap(), 0.5);
        assert!(f.kernel_partial_moment(2.0, 3.0, 0).is_err());
    }

    #[test]
    fn a_coefficients() {
        let f = FragProfile::constant(1.0);
        for x in [0.1, 1.0, 42.0] {
            assert_relative_eq!(f.a_coefficient(x, 2).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(f.a_coefficient(x, 1).unwrap(), 0.0);
            assert_eq!(f.a_coefficient(x, 0).unwrap(), -1.0);
        }
        assert!(f.a_coefficient(0.0, 1).is_err());
    }

    #[test]
    fn antiderivative_matches_quadrature() {
        for d in [LIN, DEC, DepolyProfile::DecayingInverse { d_inf: 0.1, c_d: 2.0, n: 1 }] {
            let x = 3.7;
            let n = 20_000;
            let h = x / n as f64;
            let quad: f64 = (0..n).map(|i| d.value((i as f64 + 0.5) * h) * h).sum();
            assert_relative_eq!(d.antiderivative(x), quad, max_relative = 1e-8);
        }
    }

    #[test]
    fn strict_heaviside_for_nucleation() {
        let nuc = NucleationSpec::new(1, 2).unwrap();
        assert_eq!(nuc.flux(1.0, 1.0), 0.0);
        assert_eq!(nuc.flux(2.0, 1.0), 4.0);
        assert_eq!(NucleationSpec::OFF.flux(2.0, 1.0), 0.0);
        assert!(NucleationSpec::new(2, 1).is_err());
        assert!(NucleationSpec::new(1, 0).is_err());
    }

    #[test]
    fn validates_increasing_regime() {
        let model = RateModel::new(LIN, FragProfile::constant(0.5), NucleationSpec::new(1, 2).unwrap()).unwrap();
        let r = validate_assumptions(&model, Regime::Increasing);
        assert!(r.all_passed(), "{r:?}");
        assert_eq!(r.witnesses.alpha, Some(1.0));
        assert_eq!(r.witnesses.beta, Some(1.0));
        assert_eq!(r.witnesses.b_min, Some(0.5));
    }

    #[test]
    fn validates_decreasing_regime() {
        let model = RateModel::new(
            DEC,
            FragProfile::saturated_power(1.0, 1.0, 10.0),
            NucleationSpec::OFF,
        )
        .unwrap();
        let r = validate_assumptions(&model, Regime::DecreasingWithFragmentation);
        assert!(r.all_passed(), "{r:?}");
        assert_relative_eq!(r.witnesses.c.unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.witnesses.gamma, Some(1.0));
    }

    #[test]
    fn rejects_increasing_profile_for_steady_regime() {
        let model = RateModel::new(LIN, FragProfile::constant(0.5), NucleationSpec::OFF).unwrap();
        let r = validate_assumptions(&model, Regime::DecreasingWithFragmentation);
        let failed: Vec<_> = r.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"depolymerization strictly decreasing"));
    }

    #[test]
    fn saturated_power_bounds() {
        let f = FragProfile::saturated_power(1.0, 1.0, 10.0);
        assert_eq!(f.rate(3.0), 3.0);
        assert_eq!(f.rate(30.0), 10.0);
        assert_eq!(f.sup_rate(), 10.0);
        assert_eq!(f.lower_bound(), Some((1.0, 1.0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverse_roundtrip(x in 0.0f64..1e3, which in 0usize..3) {
                let d = [LIN, DEC, DepolyProfile::DecayingInverse { d_inf: 0.05, c_d: 3.0, n: 1 }][which];
                let back = d.eval_d_inverse(d.value(x));
                // decaying profiles flatten out; compare in rate space there
                match d {
                    DepolyProfile::LinearIncreasing { .. } => {
                        prop_assert!((back.unwrap() - x).abs() <= 1e-12 * x.max(1.0));
                    }
                    _ => {
                        let y = back.unwrap();
                        prop_assert!((d.value(y) - d.value(x)).abs() <= 1e-12 * d.value(x));
                        if x < 50.0 {
                            prop_assert!((y - x).abs() <= 1e-9 * x.max(1.0));
                        }
                    }
                }
            }

            #[test]
            fn monotone_profiles(x1 in 0.0f64..100.0, dx in 1e-6f64..10.0) {
                let x2 = x1 + dx;
                let inc = LIN.value(x2) - LIN.value(x1);
                prop_assert!(inc >= 1.0 * dx * (1.0 - 1e-9) && inc <= 1.0 * dx * (1.0 + 1e-9));
                prop_assert!(DEC.value(x2) < DEC.value(x1));
            }

            #[test]
            fn kernel_identities(y in 1e-6f64..1e6) {
                let f = FragProfile::constant(1.0);
                prop_assert_eq!(f.kernel_partial_moment(y, y, 0).unwrap(), 1.0);
                prop_assert_eq!(f.kernel_partial_moment(y, y, 1).unwrap(), 0.5);
                prop_assert_eq!(f.a_coefficient(y, 1).unwrap(), 0.0);
            }
        }
    }
}
