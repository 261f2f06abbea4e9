//! Experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use codedfocus::autofocus::{Bounds, CostMode};
use codedfocus::encoding::ScanPlan;
use codedfocus::geometry::{DetectorGeometry, Instrument, MaskShift};
use codedfocus::io::{read_json, MaskFile, PoseFile};
use codedfocus::recon::ReconConfig;
use codedfocus::simulator::SampleModel;
use codedfocus::{Error, Mask, Pixel, Pose, Result, Sample};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub distance_um: f64,
    pub side_length_um: f64,
    pub pixels_per_side: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let d = DetectorGeometry::<f64>::default();
        Self {
            distance_um: d.distance_above_sample,
            side_length_um: d.side_length,
            pixels_per_side: d.pixels_per_side,
        }
    }
}

/// Where the aperture pattern comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSource {
    /// Mask JSON file.
    File { path: PathBuf },
    /// De Bruijn pattern of the given order.
    DeBruijn {
        order: u32,
        #[serde(default = "one")]
        bar_width_um: f64,
        #[serde(default = "default_mask_thickness")]
        thickness_um: f64,
        #[serde(default)]
        t_one: f64,
        #[serde(default = "one")]
        t_zero: f64,
        #[serde(default)]
        cyclic: bool,
    },
}

impl Default for MaskSource {
    fn default() -> Self {
        Self::DeBruijn {
            order: 10,
            bar_width_um: 1.0,
            thickness_um: default_mask_thickness(),
            t_one: 0.0,
            t_zero: 1.0,
            cyclic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub step_size_um: f64,
    pub n_steps: usize,
    /// Unit stage direction in the (x, z) plane.
    #[serde(default = "default_direction")]
    pub direction: [f64; 2],
    #[serde(default)]
    pub start_offset_um: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { step_size_um: 1.0, n_steps: 400, direction: default_direction(), start_offset_um: -200.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Half-width of the angle search interval around the initial pose.
    pub rotation_deg: f64,
    /// Half-width of the translation search interval around the initial pose.
    pub translation_um: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { rotation_deg: 3.0, translation_um: 300.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    #[serde(default)]
    pub initial: PoseFile,
    #[serde(default)]
    pub bounds: BoundsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rotation_deg: f64,
    pub translation_um: f64,
    pub max_cycles: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rotation_deg: 0.01, translation_um: 1.0, max_cycles: 100 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSetting {
    #[default]
    SecondMoment,
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSettings {
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_range_um: Option<[f64; 2]>,
    /// Thickness of the calibration sample; seeds the solver when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_thickness_um: Option<f64>,
    #[serde(default)]
    pub cost: CostSetting,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self { window: 24, depth_range_um: None, sample_thickness_um: None, cost: CostSetting::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSpec {
    /// Uniform slab centered on the origin behind every configured pixel.
    Calibration {
        #[serde(default = "default_sample_thickness")]
        thickness_um: f64,
        #[serde(default = "default_peak")]
        peak: f64,
    },
    /// Point source at one depth behind every configured pixel.
    Delta {
        depth_um: f64,
        #[serde(default = "default_peak")]
        peak: f64,
    },
    /// Sample model JSON file.
    File { path: PathBuf },
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self::Calibration { thickness_um: default_sample_thickness(), peak: default_peak() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Aperture pose the scan is simulated with.
    #[serde(default)]
    pub pose: PoseFile,
    #[serde(default)]
    pub sample: SampleSpec,
    #[serde(default = "yes")]
    pub noise: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_background")]
    pub background: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            pose: PoseFile::default(),
            sample: SampleSpec::default(),
            noise: true,
            seed: 0,
            background: default_background(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Everything a command needs besides its flags. Lengths are μm, angles
/// degrees. Relative paths are taken relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default = "default_standoff")]
    pub standoff_um: f64,
    #[serde(default)]
    pub mask: MaskSource,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub pose: PoseConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub recon: ReconSettings,
    /// Pixels whose Poisson SNR falls below this are not used for focusing.
    #[serde(default)]
    pub snr_min: f64,
    /// Number of equal scan segments the autofocus treats separately.
    #[serde(default = "one_usize")]
    pub bins: usize,
    /// Pixels to simulate; when non-empty, also the pixels to focus on.
    #[serde(default)]
    pub pixels: Vec<Pixel>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            standoff_um: default_standoff(),
            mask: MaskSource::default(),
            scan: ScanConfig::default(),
            pose: PoseConfig::default(),
            tolerances: Tolerances::default(),
            recon: ReconSettings::default(),
            snr_min: 0.0,
            bins: 1,
            pixels: Vec::new(),
            simulation: SimulationConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_mask_thickness() -> f64 {
    4.6
}
fn default_direction() -> [f64; 2] {
    [0.0, -1.0]
}
fn default_sample_thickness() -> f64 {
    10.0
}
fn default_peak() -> f64 {
    20_000.0
}
fn default_background() -> f64 {
    10.0
}
fn default_standoff() -> f64 {
    1000.0
}

impl ExperimentConfig {
    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate().map_err(|e| match e {
            e @ Error::Io { .. } => e,
            other => Error::parse(path, other),
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MaskSource::File { path } = &mut self.mask {
            fix(path);
        }
        if let SampleSpec::File { path } = &mut self.simulation.sample {
            fix(path);
        }
        if let Some(p) = &mut self.paths.dataset {
            fix(p);
        }
        if let Some(p) = &mut self.paths.out_dir {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.detector.distance_um, "detector.distance_um")?;
        positive(self.detector.side_length_um, "detector.side_length_um")?;
        if self.detector.pixels_per_side == 0 {
            return Err(Error::invalid("detector.pixels_per_side must be positive"));
        }
        positive(self.standoff_um, "standoff_um")?;
        if self.standoff_um >= self.detector.distance_um {
            return Err(Error::invalid("the aperture must sit below the detector"));
        }
        positive(self.pose.bounds.rotation_deg, "pose.bounds.rotation_deg")?;
        positive(self.pose.bounds.translation_um, "pose.bounds.translation_um")?;
        positive(self.tolerances.rotation_deg, "tolerances.rotation_deg")?;
        positive(self.tolerances.translation_um, "tolerances.translation_um")?;
        if self.recon.window == 0 {
            return Err(Error::invalid("recon.window must be positive"));
        }
        if let Some(t) = self.recon.sample_thickness_um {
            positive(t, "recon.sample_thickness_um")?;
        }
        if let Some([lo, hi]) = self.recon.depth_range_um {
            if !(lo < hi) {
                return Err(Error::invalid("recon.depth_range_um must be increasing"));
            }
        }
        if !(self.snr_min >= 0.0) {
            return Err(Error::invalid("snr_min must be non-negative"));
        }
        if self.bins == 0 {
            return Err(Error::invalid("bins must be positive"));
        }
        if !(self.simulation.background >= 0.0) {
            return Err(Error::invalid("simulation.background must be non-negative"));
        }
        let det = self.detector();
        if let Some(p) = self.pixels.iter().find(|p| !det.contains(**p)) {
            return Err(Error::invalid(format!("pixel {p} lies outside the detector")));
        }
        self.plan().validate()?;
        self.pose.initial.to_pose::<f64>()?;
        self.simulation.pose.to_pose::<f64>()?;
        for path in self.referenced_files() {
            if !path.exists() {
                let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist");
                return Err(Error::io(path, missing));
            }
        }
        if let MaskSource::DeBruijn { .. } = self.mask {
            self.mask()?;
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let MaskSource::File { path } = &self.mask {
            out.push(path.as_path());
        }
        if let SampleSpec::File { path } = &self.simulation.sample {
            out.push(path.as_path());
        }
        if let Some(p) = &self.paths.dataset {
            out.push(p.as_path());
        }
        out
    }

    pub fn detector(&self) -> DetectorGeometry<f64> {
        DetectorGeometry {
            distance_above_sample: self.detector.distance_um,
            side_length: self.detector.side_length_um,
            pixels_per_side: self.detector.pixels_per_side,
        }
    }

    pub fn instrument(&self) -> Instrument<f64> {
        Instrument { detector: self.detector(), standoff: self.standoff_um }
    }

    pub fn mask(&self) -> Result<Mask> {
        match &self.mask {
            MaskSource::File { path } => codedfocus::io::read_mask(path),
            &MaskSource::DeBruijn { order, bar_width_um, thickness_um, t_one, t_zero, cyclic } => {
                let file = MaskFile {
                    order: Some(order),
                    bits: codedfocus::mask::generate_de_bruijn(order)?,
                    bar_width_um,
                    thickness_um,
                    t_one,
                    t_zero,
                    cyclic,
                };
                file.to_mask::<f64>()
            }
        }
    }

    pub fn plan(&self) -> ScanPlan<f64> {
        ScanPlan {
            step_size: self.scan.step_size_um,
            n_steps: self.scan.n_steps,
            direction: MaskShift { x: self.scan.direction[0], z: self.scan.direction[1] },
            start_offset: self.scan.start_offset_um,
        }
    }

    pub fn initial_pose(&self) -> Result<Pose> {
        self.pose.initial.to_pose()
    }

    pub fn bounds(&self, init: &Pose) -> Bounds<f64> {
        Bounds::around(init, self.pose.bounds.rotation_deg, self.pose.bounds.translation_um)
    }

    pub fn recon_config(&self) -> ReconConfig<f64> {
        ReconConfig { window: self.recon.window, depth_range: self.recon.depth_range_um.map(|[a, b]| (a, b)) }
    }

    pub fn cost_mode(&self) -> CostMode {
        match self.recon.cost {
            CostSetting::SecondMoment => CostMode::SecondMoment,
            CostSetting::Variance => CostMode::Variance,
        }
    }

    /// The configured sample; `override_path` replaces the configured spec.
    pub fn sample(&self, override_path: Option<&Path>) -> Result<Sample> {
        let spec = match override_path {
            Some(p) => SampleSpec::File { path: p.to_path_buf() },
            None => self.simulation.sample.clone(),
        };
        let needs_pixels = || {
            if self.pixels.is_empty() {
                Err(Error::invalid("the config lists no pixels to simulate"))
            } else {
                Ok(())
            }
        };
        let sample = match spec {
            SampleSpec::Calibration { thickness_um, peak } => {
                needs_pixels()?;
                SampleModel::calibration(&self.pixels, thickness_um, self.scan.step_size_um, peak)?
            }
            SampleSpec::Delta { depth_um, peak } => {
                needs_pixels()?;
                SampleModel::delta(&self.pixels, depth_um, peak)
            }
            SampleSpec::File { path } => {
                let s: Sample = read_json(&path)?;
                s.validate().map_err(|e| Error::parse(&path, e))?;
                s
            }
        };
        let det = self.detector();
        if let Some(s) = sample.scatterers.iter().find(|s| !det.contains(s.pixel)) {
            return Err(Error::invalid(format!("sample pixel {} lies outside the detector", s.pixel)));
        }
        Ok(sample)
    }
}
