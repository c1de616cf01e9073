//! Explicit conservative finite-volume integration of the coupled
//! monomer/polymer system.
//!
//! Transport `∂_x((V − d(x))u)` is first-order upwind on the face velocity,
//! fragmentation is added explicitly, and `V` is closed algebraically from
//! total mass conservation rather than integrated from its own ODE. Mass that
//! crosses `x_max` is booked as leaked; polymers that shrink through `x = 0`
//! are absorbed and their (vanishing) mass returns to the monomer pool via the
//! closure.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::diagnostics;
use crate::error::{Error, Result};
use crate::fragmentation::FragOperator;
use crate::rates::RateModel;
use crate::state::SystemState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub cfl: f64,
    pub frag_stability: f64,
    pub t_end: f64,
    pub output_stride: f64,
    pub leak_tolerance: f64,
    pub conservation_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cfl: 0.9,
            frag_stability: 0.1,
            t_end: 10.0,
            output_stride: 0.1,
            leak_tolerance: 1e-6,
            conservation_tolerance: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("cfl", self.cfl),
            ("frag_stability", self.frag_stability),
            ("t_end", self.t_end),
            ("output_stride", self.output_stride),
            ("leak_tolerance", self.leak_tolerance),
            ("conservation_tolerance", self.conservation_tolerance),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")));
            }
        }
        if self.cfl > 1.0 || self.frag_stability > 1.0 {
            return Err(Error::InvalidArgument("cfl and frag_stability must be <= 1".into()));
        }
        Ok(())
    }
}

/// Optional measurements taken at every output time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Probes {
    /// Record `W₂(u, ρ δ_x)` against this size.
    pub w2_target: Option<f64>,
    /// Keep a full state every `n`-th output record.
    pub snapshot_every: Option<usize>,
}

/// One output sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub v: f64,
    pub rho: f64,
    pub m1: f64,
    pub m2: f64,
    pub h: f64,
    pub leak: f64,
    pub clipped: f64,
    pub dissipation: f64,
    pub w2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Total mass of the run.
    pub m: f64,
    pub records: Vec<Record>,
    pub snapshots: Vec<SystemState>,
    /// Number of polymers absorbed at `x = 0`.
    pub absorbed_number: f64,
    /// Largest `|V + Σ x u Δx + leaked − M| / M` seen at any step.
    pub max_conservation_error: f64,
    pub steps: u64,
}

impl TimeSeries {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.t)
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// CSV with columns `t,V,rho,M1,M2,H,leak,clipped`, plus `W2` when probed.
    pub fn to_csv(&self) -> String {
        let with_w2 = self.records.iter().any(|r| r.w2.is_some());
        let mut out = String::from("t,V,rho,M1,M2,H,leak,clipped");
        if with_w2 {
            out.push_str(",W2");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.v, r.rho, r.m1, r.m2, r.h, r.leak, r.clipped
            ));
            if with_w2 {
                out.push_str(&format!(",{:e}", r.w2.unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

/// What happened during one explicit step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub inflow_number: f64,
    pub absorbed_number: f64,
    pub leaked_mass: f64,
    pub clipped_mass: f64,
}

/// Owns the per-run bookkeeping for one scenario.
#[derive(Debug, Clone)]
pub struct Integrator {
    model: RateModel,
    op: FragOperator,
    options: SolverOptions,
    m: f64,
    d_faces: Vec<f64>,
    centers: Vec<f64>,
    leaked_mass: f64,
    clipped_mass: f64,
    absorbed_number: f64,
    b_max: f64,
    polymer: f64,
}

impl Integrator {
    /// Prepare an integrator; the total mass is taken from `initial`.
    pub fn new(model: RateModel, initial: &SystemState, options: SolverOptions) -> Result<Self> {
        model.check()?;
        options.check()?;
        let grid = initial.grid;
        let op = FragOperator::assemble(grid, &model.frag)?;
        let b_max = op.max_loss();
        let d_faces = (0..=grid.len()).map(|k| model.depoly.value(grid.face(k))).collect();
        let centers = grid.centers().collect();
        let m = initial.total_mass();
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("total mass must be positive, got {m}")));
        }
        Ok(Integrator {
            model,
            op,
            options,
            m,
            d_faces,
            centers,
            leaked_mass: 0.0,
            clipped_mass: 0.0,
            absorbed_number: 0.0,
            b_max,
            polymer: initial.polymer_mass(),
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.m
    }

    pub fn leaked_mass(&self) -> f64 {
        self.leaked_mass
    }

    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    pub fn absorbed_number(&self) -> f64 {
        self.absorbed_number
    }

    pub fn operator(&self) -> &FragOperator {
        &self.op
    }

    /// Largest face speed `|V − d|` over faces that touch an occupied cell
    /// (or the inflow face while nucleation is on), the largest outgoing
    /// speed of a cell, and `ρ`.
    fn max_face_speed(&self, state: &SystemState) -> (f64, f64, f64) {
        let n = state.u.len();
        let v = state.v;
        let mut max_speed: f64 = 0.0;
        let mut max_out: f64 = 0.0;
        let mut number = 0.0;
        let d0 = self.d_faces[0];
        if self.model.nucleation.flux(v, d0) > 0.0 {
            max_speed = max_speed.max((v - d0).abs());
        }
        for i in 0..n {
            if state.u[i] == 0.0 {
                continue;
            }
            number += state.u[i];
            let left = v - self.d_faces[i];
            let right = v - self.d_faces[i + 1];
            max_speed = max_speed.max(left.abs()).max(right.abs());
            max_out = max_out.max(right.max(0.0) + (-left).max(0.0));
        }
        (max_speed, max_out, number * state.grid.dx())
    }

    /// Largest step satisfying the transport, monomer and fragmentation limits.
    pub fn stable_dt(&self, state: &SystemState) -> f64 {
        let dx = state.grid.dx();
        let (speed, out, rho) = self.max_face_speed(state);
        let mut dt = f64::INFINITY;
        if speed > 0.0 {
            dt = dt.min(self.options.cfl * dx / speed);
        }
        if out > 0.0 {
            // keeps every cell's outgoing fraction below cfl
            dt = dt.min(self.options.cfl * dx / out);
        }
        // V relaxes at rate ρ through the mass closure; an explicit step
        // overshoots it once ρ dt exceeds 2
        if rho > 0.0 {
            dt = dt.min(self.options.cfl / rho);
        }
        if self.b_max > 0.0 {
            dt = dt.min(self.options.frag_stability / self.b_max);
        }
        dt
    }

    /// Advance `state` by `dt`.
    pub fn step(&mut self, state: &mut SystemState, dt: f64) -> Result<StepReport> {
        let n = state.u.len();
        if n != self.centers.len() {
            return Err(Error::DimensionMismatch { expected: self.centers.len(), got: n });
        }
        let limit = self.stable_dt(state);
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, limit });
        }
        self.advance(state, dt)
    }

    /// One step with `dt` already known to be stable. Fragmentation, transport
    /// and the polymer mass share a single right-to-left sweep.
    fn advance(&mut self, state: &mut SystemState, dt: f64) -> Result<StepReport> {
        let n = state.u.len();
        let dx = state.grid.dx();
        let v = state.v;
        let d0 = self.d_faces[0];
        let u = &mut state.u;
        let mut report = StepReport::default();

        let inflow = self.model.nucleation.flux(v, d0);
        let v0 = v - d0;
        let flux0 = if inflow > 0.0 {
            inflow
        } else if v0 < 0.0 {
            v0 * u[0]
        } else {
            0.0
        };
        if flux0 > 0.0 {
            report.inflow_number = flux0 * dt;
        } else if flux0 < 0.0 {
            report.absorbed_number = -flux0 * dt;
        }
        let vn = v - self.d_faces[n];
        let flux_n = if vn > 0.0 { vn * u[n - 1] } else { 0.0 };
        report.leaked_mass = flux_n * dt * self.centers[n - 1];

        let (off, diag, loss) = self.op.columns();
        let ratio = dt / dx;
        let mut right = flux_n;
        let mut suffix = 0.0;
        let mut polymer = 0.0;
        let mut finite = true;
        for i in (0..n).rev() {
            let old = u[i];
            let left = if i == 0 {
                flux0
            } else {
                let vel = v - self.d_faces[i];
                if vel > 0.0 { vel * u[i - 1] } else { vel * old }
            };
            let frag = suffix + (diag[i] - loss[i]) * old;
            suffix += off[i] * old;
            let mut next = old + ratio * (left - right) + dt * frag;
            if next < 0.0 {
                report.clipped_mass += -next * self.centers[i] * dx;
                next = 0.0;
            } else if next < f64::MIN_POSITIVE {
                // subnormal tails carry no mass and make every pass slow
                next = 0.0;
            }
            finite &= next.is_finite();
            polymer += next * self.centers[i];
            u[i] = next;
            right = left;
        }
        let polymer = polymer * dx;

        self.leaked_mass += report.leaked_mass;
        self.clipped_mass += report.clipped_mass;
        self.absorbed_number += report.absorbed_number;

        let new_v = self.m - self.leaked_mass - polymer;
        state.t += dt;
        if !new_v.is_finite() || !finite {
            return Err(Error::NonFinite(format!("state at t={}", state.t)));
        }
        if new_v < 0.0 {
            return Err(Error::BlowUp { t: state.t, v: new_v });
        }
        state.v = new_v;
        self.polymer = polymer;
        Ok(report)
    }

    fn record(&self, state: &SystemState, probes: &Probes) -> Record {
        let (h, _) = diagnostics::entropy_h(state, &self.model.depoly);
        Record {
            t: state.t,
            v: state.v,
            rho: state.number(),
            m1: state.polymer_mass(),
            m2: state.moment(2.0),
            h,
            leak: self.leaked_mass,
            clipped: self.clipped_mass,
            dissipation: diagnostics::dissipation(state, &self.model.depoly),
            w2: probes.w2_target.map(|x| diagnostics::wasserstein_to_dirac(state, x, 2)),
        }
    }

    /// Integrate to `t_end`, sampling every `output_stride`.
    pub fn run(&mut self, state: &mut SystemState, probes: &Probes) -> Result<TimeSeries> {
        let opts = self.options;
        let mut series = TimeSeries { m: self.m, ..Default::default() };
        let push = |this: &Self, s: &SystemState, series: &mut TimeSeries| {
            let k = series.records.len();
            series.records.push(this.record(s, probes));
            if let Some(every) = probes.snapshot_every {
                if every > 0 && k.is_multiple_of(every) {
                    series.snapshots.push(s.clone());
                }
            }
        };
        push(self, state, &mut series);
        let n_out = (opts.t_end / opts.output_stride - 1e-9).ceil().max(1.0) as usize;
        let t0 = state.t;
        for k in 1..=n_out {
            let target = (t0 + k as f64 * opts.output_stride).min(t0 + opts.t_end);
            while state.t < target {
                let remaining = target - state.t;
                let dt = self.stable_dt(state).min(remaining);
                self.advance(state, dt)?;
                if remaining - dt < 1e-12 * target.max(1.0) {
                    state.t = target;
                }
                series.steps += 1;
                let err = (self.polymer + state.v + self.leaked_mass - self.m).abs() / self.m;
                series.max_conservation_error = series.max_conservation_error.max(err);
                if err > opts.conservation_tolerance {
                    return Err(Error::ConservationDrift { t: state.t, drift: err });
                }
                if self.leaked_mass > opts.leak_tolerance * self.m {
                    let occupied = state.u.iter().rposition(|&x| x > 0.0).unwrap_or(0);
                    let x_max = state.grid.x_max();
                    return Err(Error::LeakOverflow {
                        t: state.t,
                        leaked: self.leaked_mass,
                        allowed: opts.leak_tolerance * self.m,
                        x_max_suggested: (2.0 * x_max).max(2.0 * state.grid.center(occupied)),
                    });
                }
            }
            push(self, state, &mut series);
        }
        series.absorbed_number = self.absorbed_number;
        if self.clipped_mass > 0.0 {
            warn!("clipped {:e} mass of negative density", self.clipped_mass);
        }
        Ok(series)
    }
}

/// Convenience wrapper: build an integrator and run it from `initial`.
pub fn run(
    model: RateModel,
    initial: &SystemState,
    options: SolverOptions,
    probes: &Probes,
) -> Result<(TimeSeries, SystemState)> {
    let mut integrator = Integrator::new(model, initial, options)?;
    let mut state = initial.clone();
    let series = integrator.run(&mut state, probes)?;
    Ok((series, state))
}

/// Compare a finite-difference `dV/dt` with `−V ρ + ∫ d u` at snapshot times.
///
/// Returns the largest mismatch relative to the largest right-hand side.
pub fn consistency_check_dvdt(series: &TimeSeries, model: &RateModel) -> Result<f64> {
    let snaps = &series.snapshots;
    if snaps.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 snapshots, have {}",
            snaps.len()
        )));
    }
    let rhs = |s: &SystemState| {
        let dx = s.grid.dx();
        s.u
            .iter()
            .enumerate()
            .map(|(i, ui)| (model.depoly.value(s.grid.center(i)) - s.v) * ui)
            .sum::<f64>()
            * dx
    };
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for w in snaps.windows(3) {
        let fd = (w[2].v - w[0].v) / (w[2].t - w[0].t);
        let r = rhs(&w[1]);
        worst = worst.max((fd - r).abs());
        scale = scale.max(r.abs());
    }
    if scale == 0.0 {
        return Ok(worst);
    }
    Ok(worst / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{DepolyProfile, FragProfile, NucleationSpec};
    use crate::state::SizeGrid;

    fn gaussian(grid: SizeGrid, center: f64, width: f64, number: f64) -> Vec<f64> {
        let norm = number / (width * (2.0 * std::f64::consts::PI).sqrt());
        grid.sample(|x| norm * (-0.5 * ((x - center) / width).powi(2)).exp())
    }

    #[test]
    fn vacuum_stays_put() {
        let grid = SizeGrid::new(4.0, 64).unwrap();
        let model = RateModel::lifshitz_slyozov(DepolyProfile::LinearIncreasing { d0: 0.5, alpha: 1.0 });
        let init = SystemState::vacuum(grid, 1.3);
        let opts = SolverOptions { t_end: 1.0, output_stride: 0.25, ..Default::default() };
        let (series, end) = run(model, &init, opts, &Probes::default()).unwrap();
        assert_eq!(end.v, 1.3);
        assert!(end.u.iter().all(|&x| x == 0.0));
        assert_eq!(series.records.len(), 5);
    }

    #[test]
    fn no_inflow_at_threshold() {
        let grid = SizeGrid::new(4.0, 64).unwrap();
        let model = RateModel::new(
            DepolyProfile::LinearIncreasing { d0: 1.0, alpha: 1.0 },
            FragProfile::NONE,
            NucleationSpec::new(1, 1).unwrap(),
        )
        .unwrap();
        let mut state = SystemState::vacuum(grid, 1.0);
        let mut integ = Integrator::new(model, &state, SolverOptions::default()).unwrap();
        let report = integ.step(&mut state, 1e-3).unwrap();
        assert_eq!(report.inflow_number, 0.0);
        assert!(state.u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_oversized_step() {
        let grid = SizeGrid::new(4.0, 64).unwrap();
        let model = RateModel::lifshitz_slyozov(DepolyProfile::LinearIncreasing { d0: 0.5, alpha: 1.0 });
        let mut state = SystemState::new(grid, 1.0, gaussian(grid, 1.0, 0.2, 1.0)).unwrap();
        let mut integ = Integrator::new(model, &state, SolverOptions::default()).unwrap();
        let limit = integ.stable_dt(&state);
        assert!(matches!(integ.step(&mut state, 2.0 * limit), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn conserves_mass_with_everything_on() {
        let grid = SizeGrid::new(6.0, 256).unwrap();
        let model = RateModel::new(
            DepolyProfile::LinearIncreasing { d0: 0.3, alpha: 0.8 },
            FragProfile::constant(0.4),
            NucleationSpec::new(1, 2).unwrap(),
        )
        .unwrap();
        let init = SystemState::new(grid, 1.5, gaussian(grid, 1.0, 0.3, 0.5)).unwrap();
        let opts = SolverOptions { t_end: 5.0, output_stride: 0.5, ..Default::default() };
        let (series, end) = run(model, &init, opts, &Probes::default()).unwrap();
        let m = init.total_mass();
        assert!((end.total_mass() + end_leak(&series) - m).abs() <= 1e-10 * m);
        assert!(series.max_conservation_error <= 1e-10);
        assert_eq!(series.last().unwrap().clipped, 0.0);
    }

    fn end_leak(series: &TimeSeries) -> f64 {
        series.last().unwrap().leak
    }

    #[test]
    fn absorbs_at_zero_when_monomers_are_scarce() {
        // M <= d(0): every polymer depolymerizes and V -> M
        let grid = SizeGrid::new(3.0, 256).unwrap();
        let model = RateModel::lifshitz_slyozov(DepolyProfile::LinearIncreasing { d0: 2.0, alpha: 1.0 });
        let init = SystemState::new(grid, 1.0, gaussian(grid, 1.0, 0.2, 0.5)).unwrap();
        let m = init.total_mass();
        let opts = SolverOptions { t_end: 8.0, output_stride: 0.5, ..Default::default() };
        let (series, end) = run(model, &init, opts, &Probes::default()).unwrap();
        assert!(series.absorbed_number > 0.49);
        assert!((end.v - m).abs() < 1e-3);
    }

    #[test]
    fn leak_overflow_suggests_larger_grid() {
        let grid = SizeGrid::new(1.0, 64).unwrap();
        let model = RateModel::lifshitz_slyozov(DepolyProfile::LinearIncreasing { d0: 0.1, alpha: 0.1 });
        let init = SystemState::new(grid, 5.0, gaussian(grid, 0.5, 0.1, 1.0)).unwrap();
        let opts = SolverOptions { t_end: 5.0, output_stride: 0.5, ..Default::default() };
        match run(model, &init, opts, &Probes::default()) {
            Err(Error::LeakOverflow { x_max_suggested, .. }) => assert!(x_max_suggested >= 2.0),
            other => panic!("expected leak overflow, got {other:?}"),
        }
    }

    #[test]
    fn number_grows_with_nucleation() {
        let grid = SizeGrid::new(4.0, 256).unwrap();
        let model = RateModel::new(
            DepolyProfile::LinearIncreasing { d0: 1.0, alpha: 1.0 },
            FragProfile::NONE,
            NucleationSpec::new(1, 1).unwrap(),
        )
        .unwrap();
        let init = SystemState::vacuum(grid, 3.0);
        let opts = SolverOptions { t_end: 10.0, output_stride: 0.5, ..Default::default() };
        let (series, _) = run(model, &init, opts, &Probes::default()).unwrap();
        for w in series.records.windows(2) {
            assert!(w[1].rho >= w[0].rho);
            assert!(w[1].v >= 1.0 - 10.0 * grid.dx());
        }
    }

    #[test]
    fn step_respects_monomer_relaxation_rate() {
        // a dense, slow population: transport alone would allow a huge step
        let grid = SizeGrid::new(1.0, 100).unwrap();
        let model = RateModel::lifshitz_slyozov(DepolyProfile::LinearIncreasing { d0: 0.5, alpha: 0.01 });
        let mut u = vec![0.0; 100];
        u[50] = 5000.0;
        let state = SystemState::new(grid, 0.505, u).unwrap();
        let integ = Integrator::new(model, &state, SolverOptions::default()).unwrap();
        let rho = state.number();
        assert!(integ.stable_dt(&state) * rho <= 0.9 + 1e-12);
    }

    #[test]
    fn monomers_settle_without_ringing() {
        let grid = SizeGrid::new(4.0, 512).unwrap();
        let model = RateModel::new(
            DepolyProfile::LinearIncreasing { d0: 1.0, alpha: 1.0 },
            FragProfile::NONE,
            NucleationSpec::new(1, 1).unwrap(),
        )
        .unwrap();
        let init = SystemState::vacuum(grid, 3.0);
        let opts = SolverOptions { t_end: 100.0, output_stride: 1.0, ..Default::default() };
        let (series, _) = run(model, &init, opts, &Probes::default()).unwrap();
        let tail: Vec<f64> = series.records.iter().filter(|r| r.t >= 50.0).map(|r| r.v).collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-9), "V should decrease towards d(0)");
        assert!(tail.iter().all(|&v| v > 1.0));
    }

    #[test]
    fn dvdt_consistency_on_vacuum_and_ls_run() {
        let grid = SizeGrid::new(4.0, 64).unwrap();
        let model = RateModel::lifshitz_slyozov(DepolyProfile::LinearIncreasing { d0: 0.5, alpha: 1.0 });
        let init = SystemState::vacuum(grid, 1.0);
        let opts = SolverOptions { t_end: 1.0, output_stride: 0.1, ..Default::default() };
        let probes = Probes { snapshot_every: Some(1), ..Default::default() };
        let (series, _) = run(model, &init, opts, &probes).unwrap();
        assert_eq!(consistency_check_dvdt(&series, &model).unwrap(), 0.0);

        let short = TimeSeries { snapshots: series.snapshots[..2].to_vec(), ..series.clone() };
        assert!(consistency_check_dvdt(&short, &model).is_err());
    }
}
