//! Uniform size grid, Eulerian system state and moment functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centered discretization of `[0, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeGrid {
    x_max: f64,
    n_cells: usize,
}

impl SizeGrid {
    pub fn new(x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("x_max must be > 0, got {x_max}")));
        }
        if n_cells < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 cells, got {n_cells}")));
        }
        Ok(SizeGrid { x_max, n_cells })
    }

    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n_cells == 0
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.x_max / self.n_cells as f64
    }

    /// Center of cell `i`.
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    /// Left face of cell `i`; `face(n_cells)` is `x_max`.
    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn centers(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_cells).map(move |i| self.center(i))
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn cell_of(&self, x: f64) -> usize {
        ((x / self.dx()).floor().max(0.0) as usize).min(self.n_cells - 1)
    }

    /// Cell averages of `f` sampled at centers.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.centers().map(f).collect()
    }
}

/// Time, monomer concentration `V` and cell densities `u_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    pub v: f64,
    pub u: Vec<f64>,
    pub grid: SizeGrid,
}

impl SystemState {
    pub fn new(grid: SizeGrid, v: f64, u: Vec<f64>) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: u.len() });
        }
        if let Some(bad) = u.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!("densities must be finite and >= 0, found {bad}")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("monomer concentration must be >= 0, got {v}")));
        }
        Ok(SystemState { t: 0.0, v, u, grid })
    }

    pub fn vacuum(grid: SizeGrid, v: f64) -> Self {
        SystemState { t: 0.0, v, u: vec![0.0; grid.len()], grid }
    }

    /// `M_n = (1/n) Σ x_i^n u_i Δx`.
    pub fn moment(&self, n: f64) -> f64 {
        assert!(n > 0.0, "moment order must be positive");
        moment_of(&self.grid, &self.u, n)
    }

    /// `ρ = Σ u_i Δx`.
    pub fn number(&self) -> f64 {
        self.u.iter().sum::<f64>() * self.grid.dx()
    }

    /// Polymerized mass `Σ x_i u_i Δx`.
    pub fn polymer_mass(&self) -> f64 {
        polymer_mass_of(&self.grid, &self.u)
    }

    /// `V + Σ x_i u_i Δx`.
    pub fn total_mass(&self) -> f64 {
        self.v + self.polymer_mass()
    }

    /// CSV snapshot: metadata comment line, `x,u` header, one row per cell.
    pub fn to_snapshot_csv(&self, m: f64) -> String {
        let mut out = String::with_capacity(32 * self.u.len());
        out.push_str(&format!("# t={:e},V={:e},M={:e}\n", self.t, self.v, m));
        out.push_str("x,u\n");
        for (i, ui) in self.u.iter().enumerate() {
            out.push_str(&format!("{:e},{:e}\n", self.grid.center(i), ui));
        }
        out
    }

    /// Parse a snapshot written by [`to_snapshot_csv`](Self::to_snapshot_csv).
    /// Returns the state and the recorded total mass.
    pub fn from_snapshot_csv(text: &str) -> Result<(SystemState, f64)> {
        let mut meta = None;
        let mut xs = Vec::new();
        let mut us = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if meta.is_none() && rest.contains("t=") {
                    meta = Some(parse_meta(rest)?);
                }
                continue;
            }
            if !saw_header {
                if line.replace(' ', "") != "x,u" {
                    return Err(Error::Parse(format!("line {}: expected header `x,u`", lineno + 1)));
                }
                saw_header = true;
                continue;
            }
            let mut parts = line.split(',');
            let (Some(x), Some(u), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("line {}: expected two columns", lineno + 1)));
            };
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            xs.push(parse(x)?);
            us.push(parse(u)?);
        }
        let (t, v, m) = meta.ok_or_else(|| Error::Parse("missing `# t=...,V=...,M=...` line".into()))?;
        if xs.len() < 2 {
            return Err(Error::Parse("snapshot needs at least two cells".into()));
        }
        let dx = xs[1] - xs[0];
        let grid = SizeGrid::new(dx * xs.len() as f64, xs.len())?;
        for (i, &x) in xs.iter().enumerate() {
            if (x - grid.center(i)).abs() > 1e-6 * dx.max(1e-300) + 1e-9 * x.abs() {
                return Err(Error::Parse(format!("row {}: snapshot grid is not uniform", i + 1)));
            }
        }
        let mut state = SystemState::new(grid, v, us)?;
        state.t = t;
        Ok((state, m))
    }
}

fn parse_meta(rest: &str) -> Result<(f64, f64, f64)> {
    let (mut t, mut v, mut m) = (None, None, None);
    for kv in rest.split(',') {
        let Some((k, val)) = kv.split_once('=') else { continue };
        let val: f64 = val
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("metadata `{kv}`: {e}")))?;
        match k.trim() {
            "t" => t = Some(val),
            "V" => v = Some(val),
            "M" => m = Some(val),
            _ => {}
        }
    }
    match (t, v, m) {
        (Some(t), Some(v), Some(m)) => Ok((t, v, m)),
        _ => Err(Error::Parse("metadata line needs t, V and M".into())),
    }
}

pub(crate) fn moment_of(grid: &SizeGrid, u: &[f64], n: f64) -> f64 {
    let dx = grid.dx();
    u.iter().enumerate().map(|(i, ui)| grid.center(i).powf(n) * ui).sum::<f64>() * dx / n
}

pub(crate) fn polymer_mass_of(grid: &SizeGrid, u: &[f64]) -> f64 {
    let dx = grid.dx();
    u.iter().enumerate().map(|(i, ui)| grid.center(i) * ui).sum::<f64>() * dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exp_state() -> SystemState {
        let grid = SizeGrid::new(40.0, 4096).unwrap();
        SystemState::new(grid, 0.0, grid.sample(|x| (-x).exp())).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = SizeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.dx(), 0.5);
        assert_eq!(g.center(0), 0.25);
        assert_eq!(g.face(4), 2.0);
        assert_eq!(g.cell_of(1.1), 2);
        assert_eq!(g.cell_of(5.0), 3);
        assert!(SizeGrid::new(1.0, 1).is_err());
        assert!(SizeGrid::new(-1.0, 4).is_err());
    }

    #[test]
    fn moments_of_exponential() {
        let s = exp_state();
        assert!((s.moment(1.0) - 1.0).abs() < 1e-3);
        assert!((s.moment(2.0) - 1.0).abs() < 1e-3);
        assert!((s.number() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn vacuum_and_single_cell() {
        let grid = SizeGrid::new(8.0, 8).unwrap();
        let s = SystemState::vacuum(grid, 2.0);
        assert_eq!(s.moment(1.0), 0.0);
        assert_eq!(s.number(), 0.0);
        assert_eq!(s.total_mass(), 2.0);

        // cell 3 has center 3.5; use a grid whose center sits at 3
        let grid = SizeGrid::new(6.0, 3).unwrap();
        let mut u = vec![0.0; 3];
        u[1] = 1.0 / grid.dx();
        let s = SystemState::new(grid, 1.0, u).unwrap();
        assert_relative_eq!(s.total_mass(), 4.0);
        let mut u = vec![0.0; 3];
        u[2] = 2.0 / grid.dx();
        assert_relative_eq!(SystemState::new(grid, 0.0, u).unwrap().number(), 2.0);
    }

    #[test]
    fn rejects_negative_density() {
        let grid = SizeGrid::new(1.0, 2).unwrap();
        assert!(SystemState::new(grid, 0.0, vec![0.0, -1.0]).is_err());
        assert!(SystemState::new(grid, 0.0, vec![0.0]).is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let grid = SizeGrid::new(3.0, 16).unwrap();
        let mut s = SystemState::new(grid, 0.7, grid.sample(|x| x * (-x).exp())).unwrap();
        s.t = 1.5;
        let text = s.to_snapshot_csv(2.0);
        assert!(text.starts_with("# t="));
        let (back, m) = SystemState::from_snapshot_csv(&text).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(back.t, 1.5);
        assert_eq!(back.u, s.u);
        assert_relative_eq!(back.grid.dx(), grid.dx(), max_relative = 1e-12);
        assert!(SystemState::from_snapshot_csv("x,u\n0.5,1\n").is_err());
    }

    proptest! {
        #[test]
        fn moment_monotone_under_domination(
            base in proptest::collection::vec(0.0f64..10.0, 32),
            extra in proptest::collection::vec(0.0f64..10.0, 32),
            n in 0.1f64..4.0,
        ) {
            let grid = SizeGrid::new(5.0, 32).unwrap();
            let lo = SystemState::new(grid, 0.0, base.clone()).unwrap();
            let hi_u: Vec<f64> = base.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let hi = SystemState::new(grid, 0.0, hi_u).unwrap();
            prop_assert!(hi.moment(n) >= lo.moment(n));
        }
    }
}
