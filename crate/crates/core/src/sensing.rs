//! NaI detector response to a gridded Cs-137 field.
//!
//! Expected counts sum the inverse-square, air-attenuated flux from every
//! cell over one dwell period on top of a uniform background; a measurement
//! is one Poisson draw per detector.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::transport::{plume_field, ConcentrationField, GridConfig, Scenario};

/// One stationary detector and its physical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub position: (f64, f64),
    /// Face area, m^2.
    pub face_area: f64,
    pub intrinsic_efficiency: f64,
    /// Seconds per measurement.
    pub dwell_time: f64,
    /// Background counts per second.
    pub background_rate: f64,
}

impl DetectorSpec {
    /// 3"x3" NaI detector at 662 keV: 0.0058 m^2 face, efficiency 0.62,
    /// 0.1 s dwell, 300 cps background.
    pub fn nai_3x3(position: (f64, f64)) -> Self {
        Self {
            position,
            face_area: 0.0058,
            intrinsic_efficiency: 0.62,
            dwell_time: 0.1,
            background_rate: 300.0,
        }
    }

    pub fn background_counts(&self) -> f64 {
        self.background_rate * self.dwell_time
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.face_area > 0.0
            && self.intrinsic_efficiency > 0.0
            && self.intrinsic_efficiency <= 1.0
            && self.dwell_time > 0.0
            && self.background_rate >= 0.0
            && self.position.0.is_finite()
            && self.position.1.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid detector specification {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants {
    /// Bq per gram.
    pub specific_activity: f64,
    /// Linear attenuation coefficient of air, 1/m.
    pub attenuation: f64,
}

impl PhysicsConstants {
    /// Cs-137 specific activity with 662 keV attenuation in sea-level dry air.
    pub const CS137_AIR: PhysicsConstants =
        PhysicsConstants { specific_activity: 3.214e12, attenuation: 9.95e-3 };

    pub fn validate(&self) -> Result<()> {
        if self.specific_activity > 0.0 && self.attenuation >= 0.0 && self.attenuation.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid physics constants {self:?}")))
        }
    }
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self::CS137_AIR
    }
}

/// One snapshot of integer counts across a detector array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub detector_ids: Vec<usize>,
    pub counts: Vec<u64>,
    pub t_obs: f64,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Plume contribution to one detector, excluding background.
fn signal_counts(
    field: &ConcentrationField,
    d: &DetectorSpec,
    detector: usize,
    pc: &PhysicsConstants,
) -> Result<f64> {
    let (rx, ry) = d.position;
    let n = field.centers_x.len();
    let mu = pc.attenuation;
    let mut sum = 0.0;
    for (row, &cy) in field.values.chunks_exact(n).zip(&field.centers_y) {
        let dy2 = (ry - cy) * (ry - cy);
        for (&c, &cx) in row.iter().zip(&field.centers_x) {
            let r2 = (rx - cx) * (rx - cx) + dy2;
            if r2 == 0.0 {
                return Err(Error::Singularity { detector, x: rx, y: ry });
            }
            if c == 0.0 {
                continue;
            }
            sum += c * (-mu * r2.sqrt()).exp() / r2;
        }
    }
    let scale = pc.specific_activity * d.dwell_time * d.intrinsic_efficiency * d.face_area
        / (4.0 * PI)
        * field.cell_area();
    Ok(scale * sum)
}

/// Mean counts registered by `d` during one dwell period.
pub fn expected_counts(
    field: &ConcentrationField,
    d: &DetectorSpec,
    pc: &PhysicsConstants,
) -> Result<f64> {
    expected_counts_indexed(field, d, 0, pc)
}

fn expected_counts_indexed(
    field: &ConcentrationField,
    d: &DetectorSpec,
    detector: usize,
    pc: &PhysicsConstants,
) -> Result<f64> {
    if field.is_empty() {
        return Err(Error::Domain("empty concentration field".into()));
    }
    if !d.position.0.is_finite() || !d.position.1.is_finite() {
        return Err(Error::Domain("detector position must be finite".into()));
    }
    Ok(signal_counts(field, d, detector, pc)? + d.background_counts())
}

/// One Poisson draw with the given mean.
pub fn sample_counts<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::Domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

/// Expected counts for every detector, with the grid centered on the puff.
pub fn expected_array(
    s: &Scenario,
    detectors: &[DetectorSpec],
    pc: &PhysicsConstants,
    grid: &GridConfig,
) -> Result<Vec<f64>> {
    s.validate()?;
    let field = plume_field(s, grid, s.t_obs)?;
    detectors
        .iter()
        .enumerate()
        .map(|(i, d)| expected_counts_indexed(&field, d, i, pc))
        .collect()
}

/// Poisson draws around the given means; detector `i` uses its own stream
/// derived from `seed` and `i`.
pub fn sample_array(means: &[f64], t_obs: f64, seed: u64) -> Result<MeasurementVector> {
    let counts = means
        .iter()
        .enumerate()
        .map(|(i, &m)| sample_counts(m, &mut rng::stream(seed, &[tag::DETECTOR, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementVector { detector_ids: (0..means.len()).collect(), counts, t_obs })
}

/// Simulates one measurement snapshot of the array for scenario `s`.
pub fn observe_array(
    s: &Scenario,
    detectors: &[DetectorSpec],
    pc: &PhysicsConstants,
    grid: &GridConfig,
    seed: u64,
) -> Result<MeasurementVector> {
    let means = expected_array(s, detectors, pc, grid)?;
    sample_array(&means, s.t_obs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{build_grid, simpson_cell_means};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_cell(mass: f64) -> ConcentrationField {
        // One 2 m x 2 m cell centered at the origin.
        let grid = build_grid((0.0, 0.0), 2.0, 3).unwrap();
        simpson_cell_means(&grid, |_, _| mass / 4.0)
    }

    fn reference_layout() -> Vec<DetectorSpec> {
        let xs = [2000.0 / 12.0, 500.0, 2000.0 * 5.0 / 12.0, 2000.0 * 7.0 / 12.0, 1500.0, 2000.0 * 11.0 / 12.0];
        let mut out = Vec::new();
        for y in [-500.0, 0.0, 500.0] {
            for x in xs {
                out.push(DetectorSpec::nai_3x3((x, y)));
            }
        }
        out
    }

    #[test]
    fn background_only_for_empty_plume() {
        let field = single_cell(0.0);
        let d = DetectorSpec::nai_3x3((100.0, 0.0));
        let e = expected_counts(&field, &d, &PhysicsConstants::CS137_AIR).unwrap();
        assert!((e - 30.0).abs() < 1e-12);
    }

    #[test]
    fn single_cell_at_one_kilometer() {
        let field = single_cell(1.0);
        let d = DetectorSpec::nai_3x3((1000.0, 0.0));
        let pc = PhysicsConstants::CS137_AIR;
        let e = expected_counts(&field, &d, &pc).unwrap();
        let oracle = 3.214e12 * 0.1 * 0.62 * 0.0058 / (4.0 * PI * 1.0e6) * (-9.95f64).exp();
        assert!(((e - 30.0) - oracle).abs() < 1e-15);
        assert!((e - 30.0044).abs() < 1e-4, "{e}");
    }

    #[test]
    fn signal_is_linear_in_concentration() {
        let s = Scenario::reference();
        let field = plume_field(&s, &GridConfig::DESK, 500.0).unwrap();
        let pc = PhysicsConstants::CS137_AIR;
        for d in reference_layout() {
            let base = expected_counts(&field, &d, &pc).unwrap() - 30.0;
            let doubled = expected_counts(&field.scaled(2.0), &d, &pc).unwrap() - 30.0;
            // Subtracting the background of 30 costs a few ulps of 30.
            assert!((doubled - 2.0 * base).abs() <= 1e-12 * base.abs() + 1e-13);
        }
    }

    #[test]
    fn attenuation_strictly_reduces_signal() {
        let field = plume_field(&Scenario::reference(), &GridConfig::DESK, 500.0).unwrap();
        let d = DetectorSpec::nai_3x3((500.0, 500.0));
        let mut last = f64::INFINITY;
        for mu in [0.0, 1e-3, 5e-3, 9.95e-3, 2e-2] {
            let pc = PhysicsConstants { attenuation: mu, ..PhysicsConstants::CS137_AIR };
            let sig = expected_counts(&field, &d, &pc).unwrap() - 30.0;
            assert!(sig > 0.0 && sig < last);
            last = sig;
        }
    }

    #[test]
    fn detector_on_cell_center_is_rejected() {
        let field = single_cell(1.0);
        let d = DetectorSpec::nai_3x3((0.0, 0.0));
        assert!(matches!(
            expected_counts(&field, &d, &PhysicsConstants::CS137_AIR),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn poisson_degenerate_and_invalid_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_counts(0.0, &mut rng).unwrap(), 0);
        assert!(matches!(sample_counts(-1.0, &mut rng), Err(Error::Domain(_))));
        assert!(sample_counts(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn poisson_moments_at_background_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000usize;
        let draws: Vec<f64> = (0..n).map(|_| sample_counts(30.0, &mut rng).unwrap() as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 30.0).abs() < 3.0 * (30.0 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 30.0).abs() < 0.02 * 30.0, "var {var}");
    }

    #[test]
    fn poisson_large_mean_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000usize;
        let lambda = 4.0e5;
        let draws: Vec<f64> = (0..n).map(|_| sample_counts(lambda, &mut rng).unwrap() as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - lambda).abs() < 4.0 * (lambda / n as f64).sqrt());
        assert!((var / lambda - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_mass_array_sees_background() {
        let s = Scenario::reference().with_mass(0.0);
        let dets = reference_layout();
        let means = expected_array(&s, &dets, &PhysicsConstants::CS137_AIR, &GridConfig::DESK).unwrap();
        assert!(means.iter().all(|&m| (m - 30.0).abs() < 1e-12));
    }

    #[test]
    fn nearest_detectors_see_most_counts() {
        let s = Scenario::reference();
        let dets = reference_layout();
        let means = expected_array(&s, &dets, &PhysicsConstants::CS137_AIR, &GridConfig::DESK).unwrap();
        let (cx, cy) = (831.0, 555.37);
        let dist: Vec<f64> = dets
            .iter()
            .map(|d| ((d.position.0 - cx).powi(2) + (d.position.1 - cy).powi(2)).sqrt())
            .collect();
        let mut by_dist: Vec<usize> = (0..dets.len()).collect();
        by_dist.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap());
        let mut by_counts: Vec<usize> = (0..dets.len()).collect();
        by_counts.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap());
        // Ordering agrees wherever the signal is resolvable above background.
        let resolvable = means.iter().filter(|&&m| m - 30.0 > 1e-6).count();
        assert!(resolvable >= 3);
        assert_eq!(by_dist[..resolvable], by_counts[..resolvable]);
        assert!(means.iter().all(|&m| m >= 30.0));
    }

    #[test]
    fn observation_is_reproducible() {
        let s = Scenario::reference();
        let dets = reference_layout();
        let pc = PhysicsConstants::CS137_AIR;
        let a = observe_array(&s, &dets, &pc, &GridConfig::DESK, 99).unwrap();
        let b = observe_array(&s, &dets, &pc, &GridConfig::DESK, 99).unwrap();
        let c = observe_array(&s, &dets, &pc, &GridConfig::DESK, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 18);
    }
}
