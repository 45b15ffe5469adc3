//! Synthetic sheet-forming simulator: a smooth parametric strain/thickness
//! field on a `G×G` element grid, six-zone FLD classification, FLD-style
//! rendering and the scalar formability criteria.
//!
//! Element `(i, j)` (row, column) has its center at
//! `x = (j + 0.5) / G`, `y = (i + 0.5) / G`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::imaging::RgbImage;
use crate::params::{ParamError, ParameterSpace, ParameterSpec};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("the strain model needs at least {0} parameters, got {1}")]
    TooFewParameters(usize, usize),
    #[error("exponent p must be a positive even integer, got {0}")]
    BadExponent(u32),
    #[error("initial thickness must be positive, got {0}")]
    BadThickness(f64),
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("non-finite strain at element {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of parameters that drive the strain model directly; further
/// parameters perturb the major strain linearly.
pub const CORE_PARAMETERS: usize = 6;

/// Coefficients of the parametric strain field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrainModel {
    pub minor_amplitude: f64,
    pub minor_base: f64,
    pub minor_gain: f64,
    pub major_base: f64,
    pub major_gain: f64,
    pub bump_gain: f64,
    pub center_base: f64,
    pub center_gain: f64,
    pub width_base: f64,
    pub width_gain: f64,
    pub extra_gain: f64,
}

impl Default for StrainModel {
    fn default() -> Self {
        Self {
            minor_amplitude: 0.12,
            minor_base: 0.5,
            minor_gain: 0.8,
            major_base: 0.05,
            major_gain: 0.25,
            bump_gain: 0.45,
            center_base: 0.3,
            center_gain: 0.4,
            width_base: 0.02,
            width_gain: 0.08,
            extra_gain: 0.02,
        }
    }
}

/// Forming limit curves: crack `φ_s(ε2) = a_s + b_s·|ε2|`, wrinkle
/// `φ_w(ε2) = a_w + b_w·ε2`, safety margin `s`. The insufficient-stretch band
/// is `[φ_w + s, φ_w + s + stretch_floor)`; `None` disables it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flc {
    pub crack_intercept: f64,
    pub crack_slope: f64,
    pub wrinkle_intercept: f64,
    pub wrinkle_slope: f64,
    pub margin: f64,
    pub stretch_floor: Option<f64>,
}

impl Default for Flc {
    fn default() -> Self {
        Self {
            crack_intercept: 0.30,
            crack_slope: 0.8,
            wrinkle_intercept: 0.0,
            wrinkle_slope: -1.0,
            margin: 0.05,
            stretch_floor: Some(0.02),
        }
    }
}

impl Flc {
    pub fn phi_s(&self, e2: f64) -> f64 {
        self.crack_intercept + self.crack_slope * e2.abs()
    }

    pub fn phi_w(&self, e2: f64) -> f64 {
        self.wrinkle_intercept + self.wrinkle_slope * e2
    }

    /// Upper edge of the safe band.
    pub fn theta_s(&self, e2: f64) -> f64 {
        self.phi_s(e2) - self.margin
    }

    /// Lower edge of the safe band.
    pub fn theta_w(&self, e2: f64) -> f64 {
        self.phi_w(e2) + self.margin
    }

    /// Checks `φ_s > φ_w` and a nonempty safe band for `|ε2| ≤ 0.5`.
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.margin >= 0.0) {
            return Err(SimError::Config(format!("margin must be ≥ 0, got {}", self.margin)));
        }
        if let Some(f) = self.stretch_floor {
            if !(f >= 0.0) {
                return Err(SimError::Config(format!("stretch_floor must be ≥ 0, got {f}")));
            }
        }
        for k in 0..=100 {
            let e2 = -0.5 + k as f64 * 0.01;
            if !(self.theta_s(e2) > self.theta_w(e2)) {
                return Err(SimError::Config(format!(
                    "forming limit curves cross or leave no safe band at ε2 = {e2}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    Crack,
    RiskOfCrack,
    Safe,
    InsufficientStretch,
    WrinkleTendency,
    Wrinkles,
}

impl Zone {
    pub const ALL: [Zone; 6] = [
        Zone::Crack,
        Zone::RiskOfCrack,
        Zone::Safe,
        Zone::InsufficientStretch,
        Zone::WrinkleTendency,
        Zone::Wrinkles,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneColors {
    pub crack: [u8; 3],
    pub risk_of_crack: [u8; 3],
    pub safe: [u8; 3],
    pub insufficient_stretch: [u8; 3],
    pub wrinkle_tendency: [u8; 3],
    pub wrinkles: [u8; 3],
}

impl Default for ZoneColors {
    fn default() -> Self {
        Self {
            crack: [255, 0, 0],
            risk_of_crack: [255, 165, 0],
            safe: [0, 255, 0],
            insufficient_stretch: [160, 160, 160],
            wrinkle_tendency: [0, 200, 255],
            wrinkles: [0, 0, 255],
        }
    }
}

impl ZoneColors {
    pub fn color(&self, zone: Zone) -> [u8; 3] {
        match zone {
            Zone::Crack => self.crack,
            Zone::RiskOfCrack => self.risk_of_crack,
            Zone::Safe => self.safe,
            Zone::InsufficientStretch => self.insufficient_stretch,
            Zone::WrinkleTendency => self.wrinkle_tendency,
            Zone::Wrinkles => self.wrinkles,
        }
    }
}

/// Working region in normalized `[0, 1]²` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkingRegion {
    Disk { cx: f64, cy: f64, radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Default for WorkingRegion {
    fn default() -> Self {
        WorkingRegion::Disk {
            cx: 0.5,
            cy: 0.5,
            radius: 0.45,
        }
    }
}

impl WorkingRegion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            WorkingRegion::Disk { cx, cy, radius } => {
                (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius
            }
            WorkingRegion::Polygon { vertices } => {
                // Even-odd ray casting.
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let [xi, yi] = vertices[i];
                    let [xj, yj] = vertices[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

pub const SIMULATOR_CONFIG_VERSION: u32 = 1;

/// Everything needed to regenerate ground truth; serialized into the run
/// directory and hashed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub version: u32,
    pub grid: usize,
    pub h0: f64,
    pub model: StrainModel,
    pub flc: Flc,
    pub colors: ZoneColors,
    pub region: WorkingRegion,
    pub punch_color: [u8; 3],
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            version: SIMULATOR_CONFIG_VERSION,
            grid: 32,
            h0: 0.8,
            model: StrainModel::default(),
            flc: Flc::default(),
            colors: ZoneColors::default(),
            region: WorkingRegion::default(),
            punch_color: [200, 40, 200],
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.version != SIMULATOR_CONFIG_VERSION {
            return Err(SimError::Config(format!(
                "unsupported simulator config version {}",
                self.version
            )));
        }
        if self.grid == 0 {
            return Err(SimError::Config("grid must be ≥ 1".into()));
        }
        if !(self.h0 > 0.0) {
            return Err(SimError::BadThickness(self.h0));
        }
        self.flc.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    pub grid: usize,
    pub h0: f64,
    pub eps1: Vec<f64>,
    pub eps2: Vec<f64>,
    pub thickness: Vec<f64>,
}

impl StrainField {
    pub fn len(&self) -> usize {
        self.eps1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps1.is_empty()
    }

    pub fn center(&self, element: usize) -> (f64, f64) {
        element_center(self.grid, element)
    }

    /// CSV with header `x,y,eps1,eps2,h_e`, one row per element.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,eps1,eps2,h_e")?;
        for e in 0..self.len() {
            let (x, y) = self.center(e);
            writeln!(
                w,
                "{x},{y},{},{},{}",
                self.eps1[e], self.eps2[e], self.thickness[e]
            )?;
        }
        Ok(())
    }
}

pub fn element_center(grid: usize, element: usize) -> (f64, f64) {
    let (i, j) = (element / grid, element % grid);
    ((j as f64 + 0.5) / grid as f64, (i as f64 + 0.5) / grid as f64)
}

/// Evaluate the strain model at `theta` (raw units, inside `space`).
pub fn simulate(
    theta: &[f64],
    space: &ParameterSpace,
    cfg: &SimulatorConfig,
) -> Result<StrainField, SimError> {
    cfg.validate()?;
    let t = space.normalize(theta)?;
    if t.len() < CORE_PARAMETERS {
        return Err(SimError::TooFewParameters(CORE_PARAMETERS, t.len()));
    }
    let m = &cfg.model;
    let g = cfg.grid;
    let minor = m.minor_amplitude * (m.minor_base + m.minor_gain * t[0]);
    let cx = m.center_base + m.center_gain * t[3];
    let cy = m.center_base + m.center_gain * t[4];
    let width = m.width_base + m.width_gain * t[5];
    let extra: f64 = t[CORE_PARAMETERS..].iter().map(|v| m.extra_gain * (v - 0.5)).sum();
    let base = m.major_base + m.major_gain * t[1] + extra;
    let n = g * g;
    let (mut eps1, mut eps2, mut thickness) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for e in 0..n {
        let (x, y) = element_center(g, e);
        let e2 = minor * (2.0 * x - 1.0);
        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
        let e1 = base + m.bump_gain * t[2] * (-r2 / width).exp();
        if !(e1.is_finite() && e2.is_finite()) {
            return Err(SimError::NonFinite(e));
        }
        eps1.push(e1);
        eps2.push(e2);
        thickness.push(cfg.h0 * (-(e1 + e2)).exp());
    }
    Ok(StrainField {
        grid: g,
        h0: cfg.h0,
        eps1,
        eps2,
        thickness,
    })
}

pub fn classify(e1: f64, e2: f64, flc: &Flc) -> Zone {
    let (phi_s, phi_w) = (flc.phi_s(e2), flc.phi_w(e2));
    let (theta_s, theta_w) = (flc.theta_s(e2), flc.theta_w(e2));
    if e1 > phi_s {
        Zone::Crack
    } else if e1 > theta_s {
        Zone::RiskOfCrack
    } else if e1 >= theta_w {
        match flc.stretch_floor {
            Some(f) if e1 < theta_w + f => Zone::InsufficientStretch,
            _ => Zone::Safe,
        }
    } else if e1 >= phi_w {
        Zone::WrinkleTendency
    } else {
        Zone::Wrinkles
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneLabelGrid {
    pub grid: usize,
    pub labels: Vec<Zone>,
}

impl ZoneLabelGrid {
    pub fn uniform(grid: usize, zone: Zone) -> Self {
        Self {
            grid,
            labels: vec![zone; grid * grid],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Zone {
        self.labels[i * self.grid + j]
    }

    pub fn set(&mut self, i: usize, j: usize, zone: Zone) {
        self.labels[i * self.grid + j] = zone;
    }

    pub fn transpose(&self) -> Self {
        let g = self.grid;
        let labels = (0..g * g).map(|e| self.get(e % g, e / g)).collect();
        Self { grid: g, labels }
    }

    pub fn count(&self, zone: Zone) -> usize {
        self.labels.iter().filter(|&&z| z == zone).count()
    }
}

pub fn classify_elements(field: &StrainField, flc: &Flc) -> ZoneLabelGrid {
    ZoneLabelGrid {
        grid: field.grid,
        labels: field
            .eps1
            .iter()
            .zip(&field.eps2)
            .map(|(&e1, &e2)| classify(e1, e2, flc))
            .collect(),
    }
}

/// Nearest-neighbor upscaling of the label grid; pixels whose centers fall
/// outside `region` are white.
pub fn render_fld_image(
    labels: &ZoneLabelGrid,
    colors: &ZoneColors,
    height: usize,
    width: usize,
    region: Option<&WorkingRegion>,
) -> RgbImage {
    let g = labels.grid;
    let mut img = RgbImage::filled(width, height, [255, 255, 255]);
    for py in 0..height {
        let i = py * g / height;
        let y = (py as f64 + 0.5) / height as f64;
        for px in 0..width {
            let x = (px as f64 + 0.5) / width as f64;
            if region.is_some_and(|r| !r.contains(x, y)) {
                continue;
            }
            let j = px * g / width;
            img.set(px, py, colors.color(labels.get(i, j)));
        }
    }
    img
}

/// Punch outline image: working region in `punch_color` on white.
pub fn render_punch_image(cfg: &SimulatorConfig, height: usize, width: usize) -> RgbImage {
    let mut img = RgbImage::filled(width, height, [255, 255, 255]);
    for py in 0..height {
        let y = (py as f64 + 0.5) / height as f64;
        for px in 0..width {
            let x = (px as f64 + 0.5) / width as f64;
            if cfg.region.contains(x, y) {
                img.set(px, py, cfg.punch_color);
            }
        }
    }
    img
}

fn check_exponent(p: u32) -> Result<i32, SimError> {
    if p == 0 || p % 2 != 0 {
        return Err(SimError::BadExponent(p));
    }
    Ok(p as i32)
}

/// `(Σ_e ((h_e − h_0)/h_0)^p)^{1/p}`.
pub fn thinning_objective(field: &StrainField, p: u32) -> Result<f64, SimError> {
    let pi = check_exponent(p)?;
    if !(field.h0 > 0.0) {
        return Err(SimError::BadThickness(field.h0));
    }
    let sum: f64 = field
        .thickness
        .iter()
        .map(|h| ((h - field.h0) / field.h0).powi(pi))
        .sum();
    Ok(sum.powf(1.0 / p as f64))
}

/// Distance of each element's major strain from the safe band, aggregated as
/// a `p`-norm.
pub fn fld_objective(field: &StrainField, flc: &Flc, p: u32) -> Result<f64, SimError> {
    let pi = check_exponent(p)?;
    let sum: f64 = field
        .eps1
        .iter()
        .zip(&field.eps2)
        .map(|(&e1, &e2)| {
            let (ts, tw) = (flc.theta_s(e2), flc.theta_w(e2));
            if e1 > ts {
                (e1 - ts).powi(pi)
            } else if e1 < tw {
                (tw - e1).powi(pi)
            } else {
                0.0
            }
        })
        .sum();
    Ok(sum.powf(1.0 / p as f64))
}

/// `(n_crack, n_wrinkle)`.
pub fn count_defects(labels: &ZoneLabelGrid) -> (usize, usize) {
    (labels.count(Zone::Crack), labels.count(Zone::Wrinkles))
}

/// Defect counts restricted to elements whose centers lie in `region`, plus
/// the number of such elements.
pub fn count_defects_in(labels: &ZoneLabelGrid, region: &WorkingRegion) -> (usize, usize, usize) {
    let (mut crack, mut wrinkle, mut total) = (0, 0, 0);
    for (e, z) in labels.labels.iter().enumerate() {
        let (x, y) = element_center(labels.grid, e);
        if !region.contains(x, y) {
            continue;
        }
        total += 1;
        match z {
            Zone::Crack => crack += 1,
            Zone::Wrinkles => wrinkle += 1,
            _ => {}
        }
    }
    (crack, wrinkle, total)
}

/// The twelve material/process parameters, ordered so that the first six
/// drive the strain model: binder friction `f2` scales the minor-strain
/// spread, blank holder force `BHF` lifts the baseline stretch, strength
/// coefficient `K` sets the bump amplitude, punch/die friction `f1` and
/// drawing speed `v` place the bump, hardening exponent `N` sets its width.
/// The rest perturb the major strain slightly.
pub fn table1_parameters() -> ParameterSpace {
    let p = ParameterSpec::uniform;
    ParameterSpace::new(vec![
        p("f2", 0.08, 0.16),
        p("BHF", 20.0, 60.0),
        p("K", 450.0, 650.0),
        p("f1", 0.08, 0.16),
        p("v", 1000.0, 5000.0),
        p("N", 0.15, 0.30),
        p("E", 190.0, 220.0),
        p("u", 0.27, 0.32),
        p("R00", 1.2, 2.0),
        p("R45", 1.0, 1.8),
        p("R90", 1.4, 2.4),
        p("F", 100.0, 400.0),
    ])
    .expect("static bounds are valid")
}
