//! Scenario sampling and training-set construction.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sensing::{observe_array, DetectorSpec, MeasurementVector, PhysicsConstants};
use crate::transport::{GridConfig, Scenario};

/// Detector positions of the stationary array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorArrayLayout {
    pub positions: Vec<(f64, f64)>,
}

impl DetectorArrayLayout {
    /// 6x3 cell-centered grid over the 2000 m x 1500 m sensor region
    /// downwind of the release area.
    pub fn default_layout() -> Self {
        let xs: Vec<f64> = (0..6).map(|i| (2 * i + 1) as f64 * 2000.0 / 12.0).collect();
        let mut positions = Vec::with_capacity(18);
        for y in [-500.0, 0.0, 500.0] {
            for &x in &xs {
                positions.push((x, y));
            }
        }
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Detectors at every layout position sharing `template`'s constants.
    pub fn detectors(&self, template: &DetectorSpec) -> Vec<DetectorSpec> {
        self.positions
            .iter()
            .map(|&position| DetectorSpec { position, ..*template })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Config("detector layout is empty".into()));
        }
        for (i, a) in self.positions.iter().enumerate() {
            if !a.0.is_finite() || !a.1.is_finite() {
                return Err(Error::Config(format!("detector {i} has a non-finite position")));
            }
            if self.positions[..i].contains(a) {
                return Err(Error::Config(format!("detector {i} duplicates an earlier position")));
            }
        }
        Ok(())
    }
}

impl Default for DetectorArrayLayout {
    fn default() -> Self {
        Self::default_layout()
    }
}

/// Uniform sampling box for release scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBounds {
    pub x_c: (f64, f64),
    pub y_c: (f64, f64),
    pub m_c: (f64, f64),
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub k_x: f64,
    pub k_y: f64,
    pub t_obs: f64,
}

impl Default for ScenarioBounds {
    fn default() -> Self {
        Self {
            x_c: (-500.0, 0.0),
            y_c: (-250.0, 250.0),
            m_c: (1.0, 5.0),
            u: (2.0, 4.0),
            v: (-1.0, 1.0),
            k_x: 5.0,
            k_y: 5.0,
            t_obs: 500.0,
        }
    }
}

/// Everything needed to turn a scenario into a measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSetup {
    pub layout: DetectorArrayLayout,
    /// Detector constants shared by every array position.
    pub detector: DetectorSpec,
    pub physics: PhysicsConstants,
    pub grid: GridConfig,
    pub bounds: ScenarioBounds,
}

impl Default for SimulationSetup {
    fn default() -> Self {
        Self {
            layout: DetectorArrayLayout::default_layout(),
            detector: DetectorSpec::nai_3x3((0.0, 0.0)),
            physics: PhysicsConstants::CS137_AIR,
            grid: GridConfig::DESK,
            bounds: ScenarioBounds::default(),
        }
    }
}

impl SimulationSetup {
    pub fn detectors(&self) -> Vec<DetectorSpec> {
        self.layout.detectors(&self.detector)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.detector.validate()?;
        self.physics.validate()?;
        self.grid.validate()
    }

    pub fn observe(&self, s: &Scenario, seed: u64) -> Result<MeasurementVector> {
        observe_array(s, &self.detectors(), &self.physics, &self.grid, seed)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn sample_scenario<R: Rng + ?Sized>(rng: &mut R, bounds: &ScenarioBounds) -> Scenario {
    let x_c = uniform(rng, bounds.x_c);
    let y_c = uniform(rng, bounds.y_c);
    let m_c = uniform(rng, bounds.m_c);
    let u = uniform(rng, bounds.u);
    let v = uniform(rng, bounds.v);
    Scenario { x_c, y_c, m_c, u, v, k_x: bounds.k_x, k_y: bounds.k_y, t_obs: bounds.t_obs }
}

/// Network input: winds followed by log-counts, zero counts mapped to ln 1.
pub fn make_features(m: &MeasurementVector, u: f64, v: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len() + 2);
    out.push(u);
    out.push(v);
    out.extend(m.counts.iter().map(|&c| (c.max(1) as f64).ln()));
    out
}

pub fn counts_to_features(counts: &[u64], u: f64, v: f64, out: &mut [f64]) {
    out[0] = u;
    out[1] = v;
    for (o, &c) in out[2..].iter_mut().zip(counts) {
        *o = (c.max(1) as f64).ln();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// One simulated release: winds, raw counts and the release parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub u: f64,
    pub v: f64,
    pub counts: Vec<u64>,
    pub x_c: f64,
    pub y_c: f64,
    pub m_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Sample>,
    pub n_detectors: usize,
    pub seed: u64,
    pub split: SplitTag,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_detectors + 2
    }

    pub fn features(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), self.n_features()));
        for (mut row, s) in out.outer_iter_mut().zip(&self.rows) {
            counts_to_features(&s.counts, s.u, s.v, row.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn targets(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), 3));
        for (mut row, s) in out.outer_iter_mut().zip(&self.rows) {
            row[0] = s.x_c;
            row[1] = s.y_c;
            row[2] = s.m_c;
        }
        out
    }

    fn subset(&self, range: std::ops::Range<usize>, split: SplitTag) -> Dataset {
        Dataset {
            rows: self.rows[range].to_vec(),
            n_detectors: self.n_detectors,
            seed: self.seed,
            split,
        }
    }
}

/// Generates row `index` of a dataset; depends only on `(seed, index)`.
pub fn generate_row(index: usize, seed: u64, setup: &SimulationSetup) -> Result<Sample> {
    let scenario = sample_scenario(&mut rng::stream(seed, &[tag::SCENARIO, index as u64]), &setup.bounds);
    let meas_seed = rng::derive_seed(seed, &[tag::MEASUREMENT, index as u64]);
    let m = setup
        .observe(&scenario, meas_seed)
        .map_err(|e| Error::Row { row: index, source: Box::new(e) })?;
    Ok(Sample {
        u: scenario.u,
        v: scenario.v,
        counts: m.counts,
        x_c: scenario.x_c,
        y_c: scenario.y_c,
        m_c: scenario.m_c,
    })
}

pub fn generate_dataset(n: usize, seed: u64, setup: &SimulationSetup) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    setup.validate()?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| generate_row(i, seed, setup))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { rows, n_detectors: setup.layout.len(), seed, split: SplitTag::Full })
}

/// Contiguous train/validation/test partition. Validation and test get
/// `floor(N * r)` rows; the remainder goes to training.
pub fn split_dataset(d: &Dataset, ratios: [f64; 3]) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let n = d.len();
    let n_val = (n as f64 * ratios[1]).floor() as usize;
    let n_test = (n as f64 * ratios[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} rows with ratios {ratios:?} leaves an empty partition"
        )));
    }
    Ok((
        d.subset(0..n_train, SplitTag::Train),
        d.subset(n_train..n_train + n_val, SplitTag::Validation),
        d.subset(n_train + n_val..n, SplitTag::Test),
    ))
}

/// Per-column z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Config("cannot fit a scaler on zero rows".into()));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let std: Vec<f64> = data.std_axis(Axis(0), 0.0).to_vec();
        if let Some(col) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("column {col} has zero variance")));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &mut Array2<f64>) {
        for mut row in data.outer_iter_mut() {
            self.apply_row(row.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    pub fn invert(&self, data: &mut Array2<f64>) {
        for mut row in data.outer_iter_mut() {
            self.invert_row(row.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = *x * s + m;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: ColumnScaler,
    pub targets: ColumnScaler,
}

/// Fits feature and target scalers on the training split.
pub fn fit_normalizer(train: &Dataset) -> Result<Normalizer> {
    Ok(Normalizer {
        features: ColumnScaler::fit(train.features().view())?,
        targets: ColumnScaler::fit(train.targets().view())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_layout_geometry() {
        let l = DetectorArrayLayout::default_layout();
        assert_eq!(l.len(), 18);
        l.validate().unwrap();
        for &(x, y) in &l.positions {
            assert!(x > 0.0 && x <= 2000.0 && (-750.0..=750.0).contains(&y));
            assert!(l.positions.iter().any(|&(x2, y2)| x2 == x && y2 == -y));
        }
        let xs: Vec<f64> = l.positions[..6].iter().map(|p| p.0).collect();
        for (a, b) in xs.iter().zip([166.67, 500.0, 833.33, 1166.67, 1500.0, 1833.33]) {
            assert!((a - b).abs() < 0.01);
        }
    }

    #[test]
    fn duplicate_positions_are_rejected() {
        let l = DetectorArrayLayout { positions: vec![(1.0, 2.0), (1.0, 2.0)] };
        assert!(l.validate().is_err());
    }

    #[test]
    fn scenario_sampling_respects_bounds_and_moments() {
        let bounds = ScenarioBounds::default();
        let mut rng = rng::stream(11, &[]);
        let n = 100_000;
        let draws: Vec<Scenario> = (0..n).map(|_| sample_scenario(&mut rng, &bounds)).collect();
        assert!(draws.iter().all(|s| (-500.0..=0.0).contains(&s.x_c)));
        assert!(draws.iter().all(|s| (-250.0..=250.0).contains(&s.y_c)));
        assert!(draws.iter().all(|s| (2.0..=4.0).contains(&s.u) && (-1.0..=1.0).contains(&s.v)));
        assert!(draws.iter().all(|s| s.k_x == 5.0 && s.k_y == 5.0 && s.t_obs == 500.0));
        let mean_m = draws.iter().map(|s| s.m_c).sum::<f64>() / n as f64;
        // Uniform(1, 5): sd = 4 / sqrt(12).
        let se = 4.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean_m - 3.0).abs() < 3.0 * se, "{mean_m}");
    }

    #[test]
    fn scenario_sampling_is_deterministic() {
        let b = ScenarioBounds::default();
        let a: Vec<Scenario> = { let mut r = rng::stream(3, &[]); (0..5).map(|_| sample_scenario(&mut r, &b)).collect() };
        let c: Vec<Scenario> = { let mut r = rng::stream(3, &[]); (0..5).map(|_| sample_scenario(&mut r, &b)).collect() };
        assert_eq!(a, c);
    }

    #[test]
    fn features_take_logs_with_guard() {
        let m = MeasurementVector { detector_ids: (0..18).collect(), counts: vec![30; 18], t_obs: 500.0 };
        let f = make_features(&m, 3.0, 0.0);
        assert_eq!(f.len(), 20);
        assert_eq!(&f[..2], &[3.0, 0.0]);
        assert!(f[2..].iter().all(|&x| (x - 3.4012).abs() < 1e-4));

        let mut m = m;
        m.counts[0] = 0;
        m.counts[1] = 1;
        let f = make_features(&m, 3.0, 0.0);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn rows_depend_only_on_seed_and_index() {
        let setup = SimulationSetup::default();
        let d = generate_dataset(3, 17, &setup).unwrap();
        let again = generate_dataset(1, 17, &setup).unwrap();
        assert_eq!(d.rows[0], again.rows[0]);
        assert_eq!(d.rows[2], generate_row(2, 17, &setup).unwrap());
        assert_ne!(d.rows[0], d.rows[1]);
        assert!(generate_dataset(0, 17, &setup).is_err());
    }

    #[test]
    fn generated_features_are_sane() {
        let setup = SimulationSetup::default();
        let d = generate_dataset(300, 5, &setup).unwrap();
        let f = d.features();
        assert_eq!(f.ncols(), 20);
        for row in f.outer_iter() {
            assert!((2.0..=4.0).contains(&row[0]) && (-1.0..=1.0).contains(&row[1]));
            assert!(row.iter().skip(2).all(|&x| x.is_finite() && (0.0..=1e7f64.ln()).contains(&x)));
        }
        let t = d.targets();
        assert!(t.column(2).iter().all(|&m| (1.0..=5.0).contains(&m)));
    }

    fn toy(n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| Sample { u: i as f64, v: 0.0, counts: vec![i as u64 + 1; 2], x_c: -(i as f64), y_c: i as f64, m_c: 1.0 + i as f64 })
            .collect();
        Dataset { rows, n_detectors: 2, seed: 0, split: SplitTag::Full }
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split_dataset(&toy(4), [0.5, 0.25, 0.25]).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (2, 1, 1));
        assert_eq!(a.split, SplitTag::Train);
        let (a, b, c) = split_dataset(&toy(11), [0.5, 0.25, 0.25]).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 2, 2));
        let mut all: Vec<Sample> = a.rows.clone();
        all.extend(b.rows);
        all.extend(c.rows);
        assert_eq!(all, toy(11).rows);
        assert!(split_dataset(&toy(2), [0.5, 0.25, 0.25]).is_err());
        assert!(split_dataset(&toy(8), [0.5, 0.25, 0.3]).is_err());
    }

    #[test]
    fn paper_scale_split_arithmetic() {
        let n = 400_000usize;
        let val = (n as f64 * 0.25).floor() as usize;
        assert_eq!((n - 2 * val, val, val), (200_000, 100_000, 100_000));
    }

    #[test]
    fn zero_variance_column_is_rejected() {
        let d = toy(5);
        let mut f = d.features();
        f.column_mut(1).fill(0.0);
        assert!(matches!(ColumnScaler::fit(f.view()), Err(Error::Config(_))));
    }

    #[test]
    fn normalizer_centers_training_data() {
        let setup = SimulationSetup::default();
        let d = generate_dataset(400, 8, &setup).unwrap();
        let (train, _, test) = split_dataset(&d, [0.5, 0.25, 0.25]).unwrap();
        let norm = fit_normalizer(&train).unwrap();
        let mut t = train.targets();
        norm.targets.apply(&mut t);
        for col in t.columns() {
            assert!(col.mean().unwrap().abs() < 1e-12);
        }
        // Held-out rows come from the same distribution.
        let mut tt = test.targets();
        norm.targets.apply(&mut tt);
        let se = 1.0 / (tt.nrows() as f64).sqrt();
        for col in tt.columns() {
            assert!(col.mean().unwrap().abs() < 4.0 * se);
        }
    }

    proptest! {
        #[test]
        fn scaler_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e4..1e4f64, 4), 3..20)) {
            let n = rows.len();
            let flat: Vec<f64> = rows.concat();
            let data = Array2::from_shape_vec((n, 4), flat).unwrap();
            if let Ok(sc) = ColumnScaler::fit(data.view()) {
                let mut x = data.clone();
                sc.apply(&mut x);
                sc.invert(&mut x);
                for (a, b) in x.iter().zip(data.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }
}
