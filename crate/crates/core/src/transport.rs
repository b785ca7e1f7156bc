//! Closed-form puff transport and its cell-averaged discretization.
//!
//! The mean concentration after an instantaneous release in uniform wind
//! with constant eddy diffusivities is an anisotropic Gaussian advected with
//! the wind. Cell means are obtained by composite Simpson integration over
//! a square grid whose cells are 3x3-point stencils.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Release hypothesis plus the ambient conditions it evolves under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Release location, meters.
    pub x_c: f64,
    pub y_c: f64,
    /// Released mass, grams.
    pub m_c: f64,
    /// Mean wind components, m/s.
    pub u: f64,
    pub v: f64,
    /// Eddy diffusivities, m^2/s.
    pub k_x: f64,
    pub k_y: f64,
    /// Time since release at which the field is observed, seconds.
    pub t_obs: f64,
}

impl Scenario {
    /// The release used throughout the reference comparison: 1.83 g from
    /// (-389.00, 185.37) m with winds (2.44, 0.74) m/s, observed at 500 s.
    pub fn reference() -> Self {
        Self {
            x_c: -389.00,
            y_c: 185.37,
            m_c: 1.83,
            u: 2.44,
            v: 0.74,
            k_x: 5.0,
            k_y: 5.0,
            t_obs: 500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.x_c, self.y_c, self.m_c, self.u, self.v, self.k_x, self.k_y, self.t_obs,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("scenario has non-finite fields".into()));
        }
        if self.k_x <= 0.0 || self.k_y <= 0.0 {
            return Err(Error::Domain(format!(
                "diffusivities must be positive, got ({}, {})",
                self.k_x, self.k_y
            )));
        }
        if self.t_obs <= 0.0 {
            return Err(Error::Domain(format!("t_obs must be positive, got {}", self.t_obs)));
        }
        if self.m_c < 0.0 {
            return Err(Error::Domain(format!("mass must be non-negative, got {}", self.m_c)));
        }
        Ok(())
    }

    pub fn with_mass(self, m_c: f64) -> Self {
        Self { m_c, ..self }
    }
}

fn check_time_and_diffusivity(s: &Scenario, t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if !(s.k_x > 0.0 && s.k_y > 0.0) {
        return Err(Error::Domain(format!(
            "diffusivities must be positive, got ({}, {})",
            s.k_x, s.k_y
        )));
    }
    Ok(())
}

/// Mean concentration (g/m^2) at `(x, y)` a time `t` after release.
pub fn concentration_at(s: &Scenario, x: f64, y: f64, t: f64) -> Result<f64> {
    check_time_and_diffusivity(s, t)?;
    let dx = x - s.x_c - s.u * t;
    let dy = y - s.y_c - s.v * t;
    let prefactor = s.m_c / (4.0 * PI * t * (s.k_x * s.k_y).sqrt());
    Ok(prefactor * (-dx * dx / (4.0 * s.k_x * t) - dy * dy / (4.0 * s.k_y * t)).exp())
}

/// Advected center of the puff.
pub fn plume_center(s: &Scenario, t: f64) -> (f64, f64) {
    (s.x_c + s.u * t, s.y_c + s.v * t)
}

/// Square grid of `n_points x n_points` uniformly spaced points.
///
/// Consecutive point triples along each axis form one cell, so there are
/// `(n_points - 1) / 2` cells per side, each of width `2 * spacing`, centered
/// on the middle point of its stencil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub center: (f64, f64),
    pub extent: f64,
    pub n_points: usize,
}

/// How the plume-following grid is positioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridAnchor {
    /// Grid center exactly at the advected puff center.
    Exact,
    /// Grid corner snapped to a multiple of the cell width, so cell centers
    /// sit on the fixed lattice `(k + 1/2) * cell_width` and do not move as
    /// the release point varies. The grid stays within half a cell of the
    /// puff center.
    #[default]
    Lattice,
}

/// Side length and resolution of the plume-following computational grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub extent: f64,
    pub n_points: usize,
    #[serde(default)]
    pub anchor: GridAnchor,
}

impl GridConfig {
    pub const DESK: GridConfig = GridConfig { extent: 1500.0, n_points: 201, anchor: GridAnchor::Lattice };
    pub const PAPER_SCALE: GridConfig = GridConfig { extent: 1500.0, n_points: 1001, anchor: GridAnchor::Lattice };

    pub fn with_points(self, n_points: usize) -> Self {
        Self { n_points, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        build_grid((0.0, 0.0), self.extent, self.n_points).map(|_| ())
    }

    /// Grid center used for a puff centered at `(px, py)`.
    pub fn center_for(&self, (px, py): (f64, f64)) -> (f64, f64) {
        match self.anchor {
            GridAnchor::Exact => (px, py),
            GridAnchor::Lattice => {
                let w = 2.0 * self.extent / (self.n_points - 1) as f64;
                let half = 0.5 * self.extent;
                let snap = |p: f64| ((p - half) / w).round() * w + half;
                (snap(px), snap(py))
            }
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::DESK
    }
}

pub fn build_grid(center: (f64, f64), extent: f64, n_points: usize) -> Result<Grid> {
    if n_points < 3 || n_points % 2 == 0 {
        return Err(Error::Config(format!(
            "grid needs an odd number of points >= 3, got {n_points}"
        )));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Config(format!("grid extent must be positive, got {extent}")));
    }
    if !center.0.is_finite() || !center.1.is_finite() {
        return Err(Error::Config("grid center must be finite".into()));
    }
    Ok(Grid { center, extent, n_points })
}

impl Grid {
    pub fn spacing(&self) -> f64 {
        self.extent / (self.n_points - 1) as f64
    }

    pub fn cells_per_side(&self) -> usize {
        (self.n_points - 1) / 2
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.spacing()
    }

    fn axis_points(&self, origin: f64) -> Vec<f64> {
        let h = self.spacing();
        let start = origin - 0.5 * self.extent;
        (0..self.n_points).map(|k| start + k as f64 * h).collect()
    }

    pub fn x_points(&self) -> Vec<f64> {
        self.axis_points(self.center.0)
    }

    pub fn y_points(&self) -> Vec<f64> {
        self.axis_points(self.center.1)
    }

    /// Cell centers along x (every other grid point, starting at index 1).
    pub fn cell_centers_x(&self) -> Vec<f64> {
        self.x_points().into_iter().skip(1).step_by(2).collect()
    }

    pub fn cell_centers_y(&self) -> Vec<f64> {
        self.y_points().into_iter().skip(1).step_by(2).collect()
    }
}

/// Cell-averaged concentrations on a grid, stored row-major (`iy * n + ix`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationField {
    pub grid: Grid,
    pub centers_x: Vec<f64>,
    pub centers_y: Vec<f64>,
    pub values: Vec<f64>,
}

impl ConcentrationField {
    pub fn cell_area(&self) -> f64 {
        let w = self.grid.cell_width();
        w * w
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// `(x_i, y_i, c_i)` for every cell.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.centers_x.len();
        self.values.iter().enumerate().map(move |(i, &c)| {
            (self.centers_x[i % n], self.centers_y[i / n], c)
        })
    }

    pub fn scaled(&self, alpha: f64) -> ConcentrationField {
        ConcentrationField {
            values: self.values.iter().map(|c| alpha * c).collect(),
            ..self.clone()
        }
    }
}

/// Per-cell Simpson averages of an arbitrary integrand.
///
/// Each cell mean is `sum_ab w_a w_b f(x_a, y_b) / 36` with `w = [1, 4, 1]`,
/// i.e. the 2-D Simpson integral over the cell divided by its area.
pub fn simpson_cell_means<F>(grid: &Grid, f: F) -> ConcentrationField
where
    F: Fn(f64, f64) -> f64,
{
    const W: [f64; 3] = [1.0, 4.0, 1.0];
    let xs = grid.x_points();
    let ys = grid.y_points();
    let n = grid.cells_per_side();
    let mut values = Vec::with_capacity(n * n);
    for cy in 0..n {
        for cx in 0..n {
            let mut acc = 0.0;
            for (b, wb) in W.iter().enumerate() {
                let y = ys[2 * cy + b];
                for (a, wa) in W.iter().enumerate() {
                    acc += wa * wb * f(xs[2 * cx + a], y);
                }
            }
            values.push(acc / 36.0);
        }
    }
    ConcentrationField {
        grid: *grid,
        centers_x: grid.cell_centers_x(),
        centers_y: grid.cell_centers_y(),
        values,
    }
}

/// Simpson averages of a 1-D profile over consecutive 3-point stencils.
fn stencil_means(points: &[f64], profile: impl Fn(f64) -> f64) -> Vec<f64> {
    let vals: Vec<f64> = points.iter().map(|&p| profile(p)).collect();
    vals.windows(3)
        .step_by(2)
        .map(|w| (w[0] + 4.0 * w[1] + w[2]) / 6.0)
        .collect()
}

/// Cell-averaged puff concentrations on `grid` at time `t`.
///
/// The puff factorizes into an x profile times a y profile and the 2-D
/// Simpson weights are a tensor product, so the cell means are computed as
/// products of 1-D stencil means.
pub fn cell_concentrations(s: &Scenario, grid: &Grid, t: f64) -> Result<ConcentrationField> {
    check_time_and_diffusivity(s, t)?;
    let (px, py) = plume_center(s, t);
    let prefactor = s.m_c / (4.0 * PI * t * (s.k_x * s.k_y).sqrt());
    let (ax, ay) = (4.0 * s.k_x * t, 4.0 * s.k_y * t);
    let mx = stencil_means(&grid.x_points(), |x| (-(x - px) * (x - px) / ax).exp());
    let my = stencil_means(&grid.y_points(), |y| (-(y - py) * (y - py) / ay).exp());
    let mut values = Vec::with_capacity(mx.len() * my.len());
    for gy in &my {
        for gx in &mx {
            values.push(prefactor * gx * gy);
        }
    }
    Ok(ConcentrationField {
        grid: *grid,
        centers_x: grid.cell_centers_x(),
        centers_y: grid.cell_centers_y(),
        values,
    })
}

/// Builds the grid around the puff at `t` and evaluates cell means.
pub fn plume_field(s: &Scenario, cfg: &GridConfig, t: f64) -> Result<ConcentrationField> {
    let grid = build_grid(cfg.center_for(plume_center(s, t)), cfg.extent, cfg.n_points)?;
    cell_concentrations(s, &grid, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simple() -> Scenario {
        Scenario { x_c: 0.0, y_c: 0.0, m_c: 1.0, u: 2.0, v: 0.0, k_x: 5.0, k_y: 5.0, t_obs: 500.0 }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn value_at_advected_center() {
        let c = concentration_at(&simple(), 1000.0, 0.0, 500.0).unwrap();
        assert!(rel(c, 1.0 / (10000.0 * PI)) < 1e-14);
        assert!((c - 3.1831e-5).abs() < 1e-9);
    }

    #[test]
    fn unit_exponent_displacement() {
        let s = simple();
        let center = concentration_at(&s, 1000.0, 0.0, 500.0).unwrap();
        let off = concentration_at(&s, 1000.0 + (4.0f64 * 5.0 * 500.0).sqrt(), 0.0, 500.0).unwrap();
        assert!(rel(off, center * (-1.0f64).exp()) < 1e-13);
    }

    #[test]
    fn reference_scenario_center_value() {
        let s = Scenario::reference();
        let (px, py) = plume_center(&s, 500.0);
        let c = concentration_at(&s, px, py, 500.0).unwrap();
        assert!(rel(c, 1.83 / (10000.0 * PI)) < 1e-14);
        assert!((c - 5.8251e-5).abs() < 1e-9);
    }

    #[test]
    fn non_positive_time_or_diffusivity_is_rejected() {
        let s = simple();
        assert!(matches!(concentration_at(&s, 0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(concentration_at(&s, 0.0, 0.0, -1.0), Err(Error::Domain(_))));
        let bad = Scenario { k_y: 0.0, ..s };
        assert!(matches!(concentration_at(&bad, 0.0, 0.0, 1.0), Err(Error::Domain(_))));
        let grid = build_grid((0.0, 0.0), 10.0, 5).unwrap();
        assert!(cell_concentrations(&bad, &grid, 1.0).is_err());
    }

    #[test]
    fn plume_center_examples() {
        assert_eq!(plume_center(&simple(), 0.0), (0.0, 0.0));
        let (x, y) = plume_center(&Scenario::reference(), 500.0);
        assert!((x - 831.0).abs() < 1e-9 && (y - 555.37).abs() < 1e-9);
        let corner = Scenario { x_c: -500.0, y_c: 250.0, u: 4.0, v: 1.0, ..simple() };
        assert_eq!(plume_center(&corner, 500.0), (1500.0, 750.0));
    }

    #[test]
    fn grid_spacing_examples() {
        let g = build_grid((0.0, 0.0), 1500.0, 1001).unwrap();
        assert!((g.spacing() - 1.5).abs() < 1e-12);
        assert_eq!(g.cells_per_side(), 500);

        let g = build_grid((0.0, 0.0), 2.0, 3).unwrap();
        assert_eq!(g.x_points(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.cell_centers_x(), vec![0.0]);

        let g = build_grid((831.0, 555.37), 1500.0, 201).unwrap();
        assert!((g.spacing() - 7.5).abs() < 1e-12);
        assert_eq!(g.cells_per_side(), 100);
        let ys = g.y_points();
        assert!((ys[0] - (555.37 - 750.0)).abs() < 1e-9);
        assert!((ys[200] - (555.37 + 750.0)).abs() < 1e-9);
    }

    #[test]
    fn invalid_grids_are_configuration_errors() {
        assert!(matches!(build_grid((0.0, 0.0), 10.0, 4), Err(Error::Config(_))));
        assert!(matches!(build_grid((0.0, 0.0), 10.0, 1), Err(Error::Config(_))));
        assert!(matches!(build_grid((0.0, 0.0), 0.0, 5), Err(Error::Config(_))));
    }

    #[test]
    fn simpson_is_exact_for_constants_and_low_order_polynomials() {
        let g = build_grid((3.0, -2.0), 12.0, 9).unwrap();
        let field = simpson_cell_means(&g, |_, _| 2.5);
        assert!(field.values.iter().all(|&c| (c - 2.5).abs() < 1e-14));

        // Exact cell mean of x^2 y^3 + x y over [a, b] x [c, d].
        let f = |x: f64, y: f64| x * x * y * y * y + x * y;
        let field = simpson_cell_means(&g, f);
        let half = g.cell_width() / 2.0;
        for (x, y, c) in field.cells() {
            let (a, b, cc, d) = (x - half, x + half, y - half, y + half);
            let ix2 = (b.powi(3) - a.powi(3)) / 3.0;
            let iy3 = (d.powi(4) - cc.powi(4)) / 4.0;
            let ix = (b * b - a * a) / 2.0;
            let iy = (d * d - cc * cc) / 2.0;
            let exact = (ix2 * iy3 + ix * iy) / ((b - a) * (d - cc));
            assert!((c - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{c} vs {exact}");
        }
    }

    #[test]
    fn separable_path_matches_generic_simpson() {
        let s = Scenario::reference();
        let grid = build_grid(plume_center(&s, 500.0), 1500.0, 101).unwrap();
        let fast = cell_concentrations(&s, &grid, 500.0).unwrap();
        let slow = simpson_cell_means(&grid, |x, y| concentration_at(&s, x, y, 500.0).unwrap());
        let peak = fast.values.iter().cloned().fold(0.0, f64::max);
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).abs() <= 1e-13 * peak);
        }
        assert_eq!(fast.centers_x, slow.centers_x);
    }

    #[test]
    fn reference_field_conserves_mass() {
        let s = Scenario::reference();
        let field = plume_field(&s, &GridConfig::DESK, 500.0).unwrap();
        assert!(field.values.iter().all(|&c| c >= 0.0));
        assert!(rel(field.total_mass(), 1.83) < 1e-3);
        let fine = plume_field(&s, &GridConfig::PAPER_SCALE, 500.0).unwrap();
        assert!(rel(fine.total_mass(), 1.83) < 1e-3);
    }

    #[test]
    fn truncated_plume_loses_mass() {
        let s = Scenario::reference();
        let grid = build_grid(plume_center(&s, 500.0), 150.0, 21).unwrap();
        let field = cell_concentrations(&s, &grid, 500.0).unwrap();
        assert!(field.total_mass() < 1.83);
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        (-500.0..0.0f64, -250.0..250.0f64, 1.0..5.0f64, 2.0..4.0f64, -1.0..1.0f64, 1.0..10.0f64, 1.0..10.0f64)
            .prop_map(|(x_c, y_c, m_c, u, v, k_x, k_y)| Scenario { x_c, y_c, m_c, u, v, k_x, k_y, t_obs: 500.0 })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mass_is_conserved_on_wide_grids(s in arb_scenario()) {
            let spread = (2.0 * s.k_x.max(s.k_y) * s.t_obs).sqrt();
            let grid = build_grid(plume_center(&s, s.t_obs), 20.0 * spread, 201).unwrap();
            let field = cell_concentrations(&s, &grid, s.t_obs).unwrap();
            prop_assert!(rel(field.total_mass(), s.m_c) < 1e-3);
        }

        #[test]
        fn translation_equivariance(s in arb_scenario(), dx in -100.0..100.0f64, dy in -100.0..100.0f64, qx in 0.0..2000.0f64, qy in -800.0..800.0f64) {
            let a = concentration_at(&s, qx, qy, 500.0).unwrap();
            let moved = Scenario { x_c: s.x_c + dx, y_c: s.y_c + dy, ..s };
            let b = concentration_at(&moved, qx + dx, qy + dy, 500.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300) + 1e-300);
        }

        #[test]
        fn quarter_turn_symmetry(x_c in -500.0..0.0f64, y_c in -250.0..250.0f64, k in 1.0..10.0f64, rx in -200.0..200.0f64, ry in -200.0..200.0f64) {
            let s = Scenario { x_c, y_c, m_c: 2.0, u: 0.0, v: 0.0, k_x: k, k_y: k, t_obs: 500.0 };
            let a = concentration_at(&s, x_c + rx, y_c + ry, 500.0).unwrap();
            let b = concentration_at(&s, x_c - ry, y_c + rx, 500.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn decreases_along_rays(s in arb_scenario(), angle in 0.0..std::f64::consts::TAU, r in 0.0..300.0f64, dr in 0.1..50.0f64) {
            let (px, py) = plume_center(&s, 500.0);
            let (cs, sn) = (angle.cos(), angle.sin());
            let near = concentration_at(&s, px + r * cs, py + r * sn, 500.0).unwrap();
            let far = concentration_at(&s, px + (r + dr) * cs, py + (r + dr) * sn, 500.0).unwrap();
            let peak = concentration_at(&s, px, py, 500.0).unwrap();
            prop_assert!(far <= near);
            prop_assert!(near <= peak);
        }
    }
}
