//! Lagrangian solver for pure transport: particles ride the characteristics
//! `dX/dt = V − d(X)` with `V = M − Σ w_j X_j` recomputed at every stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{Record, TimeSeries};
use crate::rates::DepolyProfile;
use crate::state::{SizeGrid, SystemState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub v: f64,
    pub t: f64,
    pub m: f64,
    /// Initial positions.
    pub z: Vec<f64>,
    /// Initial density at each `z`, when built from a density.
    pub u0: Option<Vec<f64>>,
}

impl ParticleEnsemble {
    /// Particles at `z` with weights `w`; `V(0) = m − Σ w z`.
    pub fn new(z: Vec<f64>, weights: Vec<f64>, m: f64) -> Result<Self> {
        if z.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: z.len(), got: weights.len() });
        }
        if let Some(&bad) = z.iter().chain(&weights).find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!("positions and weights must be >= 0, found {bad}")));
        }
        let v = m - z.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>();
        if v < 0.0 {
            return Err(Error::InvalidArgument(format!("polymer mass exceeds M = {m}")));
        }
        Ok(ParticleEnsemble { positions: z.clone(), weights, v, t: 0.0, m, z, u0: None })
    }

    /// One particle per occupied cell of an Eulerian state.
    pub fn from_state(state: &SystemState) -> Result<Self> {
        let grid = state.grid;
        let dx = grid.dx();
        let (mut z, mut w, mut u0) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &u) in state.u.iter().enumerate() {
            if u > 0.0 {
                z.push(grid.center(i));
                w.push(u * dx);
                u0.push(u);
            }
        }
        let mut e = Self::new(z, w, state.total_mass())?;
        e.v = state.v;
        e.t = state.t;
        e.u0 = Some(u0);
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn number(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn polymer_mass(&self) -> f64 {
        polymer_mass(&self.positions, &self.weights)
    }

    pub fn total_mass(&self) -> f64 {
        self.v + self.polymer_mass()
    }

    fn monomers(&self, x: &[f64]) -> f64 {
        self.m - polymer_mass(x, &self.weights)
    }

    fn velocity(&self, x: &[f64], d: &DepolyProfile, out: &mut [f64]) {
        let v = self.monomers(x);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = v - d.value(xi);
        }
    }

    /// One classical RK4 step.
    pub fn evolve(&mut self, d: &DepolyProfile, dt: f64) -> Result<()> {
        let n = self.len();
        let x0 = self.positions.clone();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut stage = vec![0.0; n];
        self.velocity(&x0, d, &mut k[0]);
        for (s, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..n {
                stage[i] = x0[i] + c * dt * k[s - 1][i];
            }
            self.velocity(&stage, d, &mut k[s]);
        }
        for i in 0..n {
            let x = x0[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("particle {i} at t = {}", self.t + dt)));
            }
            self.positions[i] = x.max(0.0);
        }
        self.v = self.monomers(&self.positions);
        self.t += dt;
        Ok(())
    }

    /// Step size resolving the fastest linear rate `sup|d'| + ρ`.
    pub fn suggested_dt(&self, d: &DepolyProfile) -> f64 {
        let slope = match *d {
            DepolyProfile::LinearIncreasing { alpha, .. } => alpha,
            DepolyProfile::DecayingInverse { .. } => d.derivative(0.0).abs(),
        };
        0.05 / (slope + self.number()).max(1e-12)
    }

    /// `g = Σ w_j |X_ref − X_j|²` for the particle that started at `z_ref`.
    pub fn entropy_g(&self, z_ref: f64) -> Result<f64> {
        let r = self
            .z
            .iter()
            .position(|&z| (z - z_ref).abs() <= 1e-12 * z_ref.abs().max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("no particle started at {z_ref}")))?;
        let xr = self.positions[r];
        Ok(self.positions.iter().zip(&self.weights).map(|(x, w)| w * (xr - x).powi(2)).sum())
    }

    /// Largest relative gap between the Eulerian density at `X_j` and
    /// `u₀(z_j) e^{αt}`, over particles with at least 1% of the top weight.
    pub fn representation_check(&self, eulerian: &SystemState, d: &DepolyProfile) -> Result<f64> {
        let DepolyProfile::LinearIncreasing { alpha, .. } = *d else {
            return Err(Error::Regime("representation check needs a linear d".into()));
        };
        let u0 = self
            .u0
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("ensemble has no initial density".into()))?;
        let top = self.weights.iter().cloned().fold(0.0, f64::max);
        let growth = (alpha * self.t).exp();
        let mut worst: f64 = 0.0;
        for j in 0..self.len() {
            if self.weights[j] < 0.01 * top {
                continue;
            }
            let exact = u0[j] * growth;
            let approx = interpolate(&eulerian.grid, &eulerian.u, self.positions[j]);
            worst = worst.max((approx - exact).abs() / exact);
        }
        Ok(worst)
    }

    fn record(&self, d: &DepolyProfile, w2_target: Option<f64>) -> Record {
        let d0 = d.at_zero();
        let (mut rho, mut m1, mut m2, mut k, mut diss) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &w) in self.positions.iter().zip(&self.weights) {
            rho += w;
            m1 += x * w;
            m2 += 0.5 * x * x * w;
            k += d.antiderivative(x) * w;
            diss += (self.v - d.value(x)).powi(2) * w;
        }
        let v = self.v.max(d0);
        Record {
            t: self.t,
            v: self.v,
            rho,
            m1,
            m2,
            h: k + 0.5 * (v * v - d0 * d0),
            leak: 0.0,
            clipped: 0.0,
            dissipation: diss,
            w2: w2_target.map(|xb| {
                crate::diagnostics::wasserstein_to_dirac_weighted(
                    self.positions.iter().cloned().zip(self.weights.iter().cloned()),
                    xb,
                    2,
                )
            }),
        }
    }
}

fn polymer_mass(x: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(w).map(|(x, w)| x * w).sum()
}

/// Linear interpolation of cell-centered values, zero outside the grid.
fn interpolate(grid: &SizeGrid, u: &[f64], x: f64) -> f64 {
    let s = x / grid.dx() - 0.5;
    if s <= 0.0 {
        return if x >= 0.0 { u[0] } else { 0.0 };
    }
    let i = s.floor() as usize;
    if i + 1 >= u.len() {
        return if x <= grid.x_max() { u[u.len() - 1] } else { 0.0 };
    }
    let f = s - i as f64;
    (1.0 - f) * u[i] + f * u[i + 1]
}

/// Output of a Lagrangian run.
#[derive(Debug, Clone)]
pub struct LagrangianRun {
    pub series: TimeSeries,
    pub ensemble: ParticleEnsemble,
    /// Rows `(t, X, V, g)` at each output time.
    pub trajectory: Vec<(f64, Vec<f64>, f64, f64)>,
    pub z_ref: f64,
}

impl LagrangianRun {
    /// CSV with columns `t,X_1..X_n,V,g`.
    pub fn trajectory_csv(&self) -> String {
        let n = self.ensemble.len();
        let mut out = String::from("t");
        for j in 1..=n {
            out.push_str(&format!(",X_{j}"));
        }
        out.push_str(",V,g\n");
        for (t, x, v, g) in &self.trajectory {
            out.push_str(&format!("{t:e}"));
            for xi in x {
                out.push_str(&format!(",{xi:e}"));
            }
            out.push_str(&format!(",{v:e},{g:e}\n"));
        }
        out
    }
}

/// Integrate to `t_end`, sampling every `stride`. `g` is tracked for the
/// particle nearest the median of the weights.
pub fn run(
    mut ensemble: ParticleEnsemble,
    d: &DepolyProfile,
    t_end: f64,
    stride: f64,
    dt: Option<f64>,
    w2_target: Option<f64>,
) -> Result<LagrangianRun> {
    if !(t_end > 0.0 && stride > 0.0) {
        return Err(Error::InvalidArgument("t_end and stride must be positive".into()));
    }
    let dt_max = dt.unwrap_or_else(|| ensemble.suggested_dt(d));
    let z_ref = median_particle(&ensemble);
    let mut series = TimeSeries { m: ensemble.m, ..Default::default() };
    let mut trajectory = Vec::new();
    let sample = |e: &ParticleEnsemble, series: &mut TimeSeries, traj: &mut Vec<_>| -> Result<()> {
        series.records.push(e.record(d, w2_target));
        let g = if e.is_empty() { 0.0 } else { e.entropy_g(z_ref)? };
        traj.push((e.t, e.positions.clone(), e.v, g));
        let err = (e.total_mass() - e.m).abs() / e.m;
        series.max_conservation_error = series.max_conservation_error.max(err);
        Ok(())
    };
    sample(&ensemble, &mut series, &mut trajectory)?;
    let n_out = (t_end / stride - 1e-9).ceil().max(1.0) as usize;
    let t0 = ensemble.t;
    for k in 1..=n_out {
        let target = (t0 + k as f64 * stride).min(t0 + t_end);
        let steps = ((target - ensemble.t) / dt_max).ceil().max(1.0) as usize;
        let h = (target - ensemble.t) / steps as f64;
        for _ in 0..steps {
            ensemble.evolve(d, h)?;
            series.steps += 1;
        }
        ensemble.t = target;
        sample(&ensemble, &mut series, &mut trajectory)?;
    }
    Ok(LagrangianRun { series, ensemble, trajectory, z_ref })
}

fn median_particle(e: &ParticleEnsemble) -> f64 {
    let total = e.number();
    let mut acc = 0.0;
    for (z, w) in e.z.iter().zip(&e.weights) {
        acc += w;
        if acc >= 0.5 * total {
            return *z;
        }
    }
    e.z.first().cloned().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LIN: DepolyProfile = DepolyProfile::LinearIncreasing { d0: 0.5, alpha: 1.0 };

    #[test]
    fn single_particle_reaches_critical_size() {
        let e = ParticleEnsemble::new(vec![0.0], vec![1.0], 2.0).unwrap();
        let r = run(e, &LIN, 30.0, 1.0, None, None).unwrap();
        assert_relative_eq!(r.ensemble.positions[0], 0.75, epsilon = 1e-9);
        assert_relative_eq!(r.ensemble.v, 1.25, epsilon = 1e-9);
    }

    #[test]
    fn affine_rate_contracts_at_alpha() {
        // X1 − X2 solves y' = −α y exactly for affine d
        let e = ParticleEnsemble::new(vec![0.1, 2.0], vec![0.3, 0.2], 3.0).unwrap();
        let r = run(e, &LIN, 5.0, 0.5, None, None).unwrap();
        for (t, x, _, _) in &r.trajectory {
            let gap = (x[1] - x[0]).abs();
            let exact = 1.9 * (-t).exp();
            assert!((gap - exact).abs() <= 1e-8 * 1.9, "t={t}: {gap} vs {exact}");
        }
    }

    #[test]
    fn weightless_particles_follow_scalar_ode() {
        let e = ParticleEnsemble::new(vec![0.0, 3.0], vec![0.0, 0.0], 2.0).unwrap();
        let r = run(e, &LIN, 30.0, 5.0, None, None).unwrap();
        assert_eq!(r.ensemble.v, 2.0);
        for x in &r.ensemble.positions {
            assert_relative_eq!(*x, LIN.eval_d_inverse(2.0).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn g_definition_and_decay() {
        let z: Vec<f64> = (0..40).map(|i| 0.05 * i as f64).collect();
        let w: Vec<f64> = z.iter().map(|z| 0.1 * (1.0 + z)).collect();
        let e = ParticleEnsemble::new(z.clone(), w.clone(), 12.0).unwrap();
        let g0 = e.entropy_g(z[20]).unwrap();
        let direct: f64 = z.iter().zip(&w).map(|(x, wi)| wi * (z[20] - x).powi(2)).sum();
        assert_relative_eq!(g0, direct, max_relative = 1e-14);
        assert!(e.entropy_g(0.333).is_err());

        let r = run(e, &LIN, 10.0, 0.5, None, None).unwrap();
        let g0 = r.trajectory[0].3;
        for (t, _, _, g) in &r.trajectory {
            assert!(*g <= g0 * (-2.0 * t).exp() * 1.01, "t={t}");
        }
        let single = ParticleEnsemble::new(vec![1.0], vec![1.0], 2.0).unwrap();
        let r = run(single, &LIN, 2.0, 1.0, None, None).unwrap();
        assert!(r.trajectory.iter().all(|row| row.3 == 0.0));
    }

    #[test]
    fn representation_at_start_is_exact() {
        let grid = SizeGrid::new(2.0, 256).unwrap();
        let u = grid.sample(|x| (-((x - 0.6) / 0.1).powi(2)).exp());
        let s = SystemState::new(grid, 1.5, u).unwrap();
        let e = ParticleEnsemble::from_state(&s).unwrap();
        assert_eq!(e.representation_check(&s, &LIN).unwrap(), 0.0);
        let dec = DepolyProfile::DecayingInverse { d_inf: 0.2, c_d: 1.0, n: 2 };
        assert!(matches!(e.representation_check(&s, &dec), Err(Error::Regime(_))));
    }

    #[test]
    fn trajectory_csv_layout() {
        let e = ParticleEnsemble::new(vec![0.5, 1.0], vec![1.0, 1.0], 3.0).unwrap();
        let r = run(e, &LIN, 1.0, 0.5, None, None).unwrap();
        let csv = r.trajectory_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,X_1,X_2,V,g"));
        assert_eq!(lines.count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ordering_bounds_and_conservation(
            mut z in proptest::collection::vec(0.0f64..3.0, 2..12),
            w in proptest::collection::vec(0.0f64..0.3, 12),
            extra in 0.0f64..3.0,
            alpha in 0.3f64..2.0,
        ) {
            z.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let w = w[..z.len()].to_vec();
            let d = DepolyProfile::LinearIncreasing { d0: 0.2, alpha };
            let m = polymer_mass(&z, &w) + 0.2 + extra;
            let e = ParticleEnsemble::new(z.clone(), w, m).unwrap();
            let r = run(e, &d, 4.0, 0.25, None, None).unwrap();
            for (_, x, v, _) in &r.trajectory {
                for j in 1..x.len() {
                    prop_assert!(x[j - 1] <= x[j] + 1e-12);
                }
                for (xj, zj) in x.iter().zip(&z) {
                    prop_assert!(*xj <= zj + m / alpha);
                }
                prop_assert!(*v >= 0.0);
            }
            prop_assert!(r.series.max_conservation_error <= 1e-12);
        }
    }
}
