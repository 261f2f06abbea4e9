//! Forward model of the microscope: coded-aperture scans of a virtual sample
//! with Poisson counting noise, and a scanned-wire (differential aperture)
//! baseline with its frame-difference reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::dataset::{ExposureMeta, ScanDataset};
use crate::encoding::{assemble_coding_matrix, ScanPlan};
use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, Instrument, Pixel, Pose6Dof};
use crate::mask::ApertureMask;
use crate::recon::grid_depth;
use crate::scalar::Real;

/// Largest count a 16-bit detector pixel records.
pub const SATURATION: f64 = 65_535.0;

/// Depth-resolved source feeding one detector pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer<T> {
    pub pixel: Pixel,
    /// Strictly increasing depths, μm.
    pub depth_um: Vec<T>,
    /// Relative intensity per depth; scaled to unit sum when simulated.
    pub profile: Vec<T>,
    /// Counts of the whole profile seen through a fully open aperture.
    pub peak: T,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleModel<T> {
    pub scatterers: Vec<Scatterer<T>>,
}

/// Grid-bin centers whose depth lies within `thickness / 2` of `center`.
pub fn slab_depths<T: Real>(center: T, thickness: T, bin: T) -> Vec<T> {
    let half = thickness * T::lit(0.5) + bin * T::lit(1e-9);
    let lo = ((center - half) / bin - T::lit(0.5)).ceil().to_i64().unwrap_or(0);
    let hi = ((center + half) / bin - T::lit(0.5)).floor().to_i64().unwrap_or(-1);
    (lo..=hi).map(|k| grid_depth(k, bin)).collect()
}

impl<T: Real> SampleModel<T> {
    /// Uniform slab of `thickness` centered on the origin behind every pixel,
    /// sampled on depth bins of width `bin`.
    pub fn calibration(pixels: &[Pixel], thickness: T, bin: T, peak: T) -> Result<Self> {
        let depths = slab_depths(T::zero(), thickness, bin);
        if depths.is_empty() {
            return Err(Error::invalid("calibration slab thinner than one depth bin"));
        }
        Ok(Self::uniform(pixels, depths, peak))
    }

    /// Single-depth source behind every pixel.
    pub fn delta(pixels: &[Pixel], depth: T, peak: T) -> Self {
        Self::uniform(pixels, vec![depth], peak)
    }

    fn uniform(pixels: &[Pixel], depths: Vec<T>, peak: T) -> Self {
        let scatterers = pixels
            .iter()
            .map(|&pixel| Scatterer {
                pixel,
                profile: vec![T::one(); depths.len()],
                depth_um: depths.clone(),
                peak,
            })
            .collect();
        Self { scatterers }
    }

    pub fn pixels(&self) -> Vec<Pixel> {
        self.scatterers.iter().map(|s| s.pixel).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.scatterers {
            if s.depth_um.is_empty() || s.depth_um.len() != s.profile.len() {
                return Err(Error::invalid(format!("scatterer at {} needs one intensity per depth", s.pixel)));
            }
            if s.depth_um.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::invalid("scatterer depths must be strictly increasing"));
            }
            if s.profile.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
                return Err(Error::invalid("scatterer intensities must be finite and non-negative"));
            }
            if !(s.peak >= T::zero()) || !s.peak.is_finite() {
                return Err(Error::invalid("peak counts must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

impl<T: Real> Scatterer<T> {
    fn weights(&self) -> Vec<T> {
        let total: T = self.profile.iter().copied().sum();
        if total > T::zero() {
            self.profile.iter().map(|&v| v / total).collect()
        } else {
            vec![T::zero(); self.profile.len()]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    /// Expected counts, unrounded.
    None,
    /// Independent Poisson counts; each pixel draws from its own stream of
    /// a ChaCha generator seeded with `seed`.
    Poisson { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exposure<T> {
    /// Counts per frame added to every pixel.
    pub background: T,
    pub noise: Noise,
    /// Counts are clipped here after sampling.
    pub saturation: T,
}

impl<T: Real> Default for Exposure<T> {
    fn default() -> Self {
        Self { background: T::lit(10.0), noise: Noise::None, saturation: T::lit(SATURATION) }
    }
}

impl<T: Real> Exposure<T> {
    pub fn poisson(seed: u64) -> Self {
        Self { noise: Noise::Poisson { seed }, ..Self::default() }
    }

    fn meta(&self) -> ExposureMeta {
        let (noise, seed) = match self.noise {
            Noise::None => (false, None),
            Noise::Poisson { seed } => (true, Some(seed)),
        };
        ExposureMeta { background: Some(self.background.f64()), seed, noise, source: None }
    }

    /// Turns expected counts into recorded counts for `pixel`.
    fn record(&self, det: &DetectorGeometry<T>, pixel: Pixel, expected: Vec<T>) -> Vec<T> {
        let sampled = match self.noise {
            Noise::None => expected,
            Noise::Poisson { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((pixel.row * det.pixels_per_side + pixel.col) as u64);
                expected.into_iter().map(|lambda| T::lit(poisson_sample(lambda.f64(), &mut rng))).collect()
            }
        };
        sampled.into_iter().map(|v| v.min(self.saturation)).collect()
    }
}

/// Poisson variate by inversion of the exact cumulative distribution.
pub fn poisson_sample(lambda: f64, rng: &mut impl Rng) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    let u: f64 = rng.gen();
    let dist = Poisson::new(lambda).expect("positive finite rate");
    dist.inverse_cdf(u) as f64
}

/// Coded-aperture scan of `sample`: each pixel records
/// `background + peak * (A s)` at every step, optionally with Poisson noise,
/// clipped at saturation.
pub fn simulate_scan<T: Real>(
    sample: &SampleModel<T>,
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    inst: &Instrument<T>,
    plan: &ScanPlan<T>,
    exposure: &Exposure<T>,
) -> Result<ScanDataset<T>> {
    sample.validate()?;
    plan.validate()?;
    let series = sample
        .scatterers
        .par_iter()
        .map(|s| {
            let a = assemble_encoding(mask, pose, inst, s.pixel, plan, &s.depth_um)?;
            let w = s.weights();
            let expected = (0..plan.n_steps)
                .map(|m| {
                    let open: T = a.iter().zip(&w).map(|(col, &wj)| col[m] * wj).sum();
                    exposure.background + s.peak * open
                })
                .collect();
            Ok(exposure.record(&inst.detector, s.pixel, expected))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanDataset {
        step_size: plan.step_size,
        direction: plan.direction,
        start_offset: plan.start_offset,
        pixels: sample.pixels(),
        series,
        exposure: exposure.meta(),
    })
}

/// Columns of the coding matrix for arbitrary (not necessarily
/// overdetermined) depth sets.
fn assemble_encoding<T: Real>(
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    inst: &Instrument<T>,
    pixel: Pixel,
    plan: &ScanPlan<T>,
    depths: &[T],
) -> Result<Vec<Vec<T>>> {
    depths
        .iter()
        .map(|&z| {
            let a = assemble_coding_matrix(mask, pose, inst, pixel, plan, &[z])?;
            Ok((0..plan.n_steps).map(|m| a.entries[(m, 0)]).collect())
        })
        .collect()
}

/// Opaque wire at the aperture standoff, long along x, scanned in z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wire<T> {
    pub width: T,
}

impl<T: Real> Wire<T> {
    /// Center of the wire (lab z) at scan step `m`.
    fn center(plan: &ScanPlan<T>, m: usize) -> T {
        plan.direction.z * plan.offset_of(m)
    }
}

/// Height fraction at which rays toward `pixel` cross the wire plane, and
/// the pixel's z coordinate.
fn wire_projection<T: Real>(inst: &Instrument<T>, pixel: Pixel) -> Result<(T, T)> {
    let p = inst.detector.pixel_center(pixel)?;
    Ok((inst.standoff / p.y, p.z))
}

/// Scanned-wire measurement of `sample`; the wire replaces the coded
/// aperture and has no pose.
pub fn simulate_differential_aperture<T: Real>(
    sample: &SampleModel<T>,
    wire: Wire<T>,
    inst: &Instrument<T>,
    plan: &ScanPlan<T>,
    exposure: &Exposure<T>,
) -> Result<ScanDataset<T>> {
    sample.validate()?;
    plan.validate()?;
    if !(wire.width > T::zero()) {
        return Err(Error::invalid("wire width must be positive"));
    }
    if plan.direction.z == T::zero() {
        return Err(Error::invalid("the wire must move along z"));
    }
    let half = wire.width * T::lit(0.5);
    let series = sample
        .scatterers
        .par_iter()
        .map(|s| {
            let (frac, pz) = wire_projection(inst, s.pixel)?;
            let crossings: Vec<T> = s.depth_um.iter().map(|&z| z + frac * (pz - z)).collect();
            let w = s.weights();
            let expected = (0..plan.n_steps)
                .map(|m| {
                    let c = Wire::center(plan, m);
                    let open: T = crossings
                        .iter()
                        .zip(&w)
                        .filter(|(&zc, _)| (zc - c).abs() > half)
                        .map(|(_, &wj)| wj)
                        .sum();
                    exposure.background + s.peak * open
                })
                .collect();
            Ok(exposure.record(&inst.detector, s.pixel, expected))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanDataset {
        step_size: plan.step_size,
        direction: plan.direction,
        start_offset: plan.start_offset,
        pixels: sample.pixels(),
        series,
        exposure: exposure.meta(),
    })
}

/// Depth profile of one pixel on a fixed depth grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthProfile<T> {
    pub pixel: Pixel,
    pub depth_axis: Vec<T>,
    pub signal: Vec<T>,
}

/// Frame-difference reconstruction of a wire scan.
///
/// A drop between consecutive frames is intensity newly hidden by the
/// leading wire edge, a rise is intensity uncovered by the trailing edge.
/// Each change is deposited at the grid bin of the depth whose ray crosses
/// the wire plane where that edge was; the two edge estimates are averaged.
/// The grid has bins of one scan step covering `depth_range`.
pub fn recover_differential<T: Real>(
    dataset: &ScanDataset<T>,
    wire: Wire<T>,
    inst: &Instrument<T>,
    depth_range: (T, T),
) -> Result<Vec<DepthProfile<T>>> {
    dataset.validate()?;
    let plan = dataset.plan();
    let bin = plan.step_size;
    let k_lo = (depth_range.0 / bin - T::lit(0.5)).ceil().to_i64().unwrap_or(0);
    let k_hi = (depth_range.1 / bin - T::lit(0.5)).floor().to_i64().unwrap_or(-1);
    if k_hi < k_lo {
        return Err(Error::invalid("depth range holds no bins"));
    }
    let depth_axis: Vec<T> = (k_lo..=k_hi).map(|k| grid_depth(k, bin)).collect();
    let half = wire.width * T::lit(0.5);
    let forward = if plan.direction.z > T::zero() { T::one() } else { -T::one() };

    dataset
        .pixels
        .iter()
        .zip(&dataset.series)
        .map(|(&pixel, d)| {
            let (frac, pz) = wire_projection(inst, pixel)?;
            let mut signal = vec![T::zero(); depth_axis.len()];
            let mut deposit = |edge_a: T, edge_b: T, amount: T| {
                let zc = (edge_a + edge_b) * T::lit(0.5);
                let depth = (zc - frac * pz) / (T::one() - frac);
                let k = (depth / bin - T::lit(0.5)).round().to_i64().unwrap_or(i64::MIN);
                if (k_lo..=k_hi).contains(&k) {
                    let i = (k - k_lo) as usize;
                    signal[i] = signal[i] + amount * T::lit(0.5);
                }
            };
            for m in 0..d.len() - 1 {
                let (c0, c1) = (Wire::center(&plan, m), Wire::center(&plan, m + 1));
                let change = d[m + 1] - d[m];
                if change < T::zero() {
                    deposit(c0 + forward * half, c1 + forward * half, -change);
                } else if change > T::zero() {
                    deposit(c0 - forward * half, c1 - forward * half, change);
                }
            }
            Ok(DepthProfile { pixel, depth_axis: depth_axis.clone(), signal })
        })
        .collect()
}
