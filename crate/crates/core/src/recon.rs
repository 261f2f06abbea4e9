//! Per-pixel recovery of the aperture offset and the depth-resolved signal.
//!
//! Depths live on a fixed grid of bins of one scan step, centered at
//! `(k + 1/2) * step`. A candidate offset is a window of `N` consecutive
//! grid bins; its pattern offset is the mid-slab coordinate hit by the ray
//! from the window's first bin at the first scan step. All windows of one
//! pixel share a single banded Gram matrix, and candidates are visited in
//! order of their unconstrained least-squares residual, which bounds the
//! non-negative residual from below; the search stops once no remaining
//! window can beat the best one found.

use std::collections::BTreeMap;

use crate::encoding::{fill_column, usable_for_scan, ScanPlan};
use crate::error::{Error, Result};
use crate::geometry::{aperture_position_to_depth, pixel_ray, Instrument, Pixel, PosedAperture, Pose6Dof, SlabTrace};
use crate::linalg::{dot, Cholesky};
use crate::mask::{ApertureMask, TransmissionTable};
use crate::nnls::{gram_residual_sq, nnls_gram};
use crate::scalar::Real;

/// Window size and optional depth limits of the offset search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconConfig<T> {
    /// Depth bins `N` per candidate window.
    pub window: usize,
    /// Depth interval (μm) candidate windows must lie in. Required for
    /// cyclic masks, where it defaults to one pattern period centered on the
    /// origin.
    pub depth_range: Option<(T, T)>,
}

impl<T: Real> Default for ReconConfig<T> {
    fn default() -> Self {
        Self { window: 24, depth_range: None }
    }
}

/// Recovered signal of one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSignal<T> {
    pub pixel: Pixel,
    /// Pattern coordinate (μm) of the window start at the first scan step.
    pub offset_um: T,
    /// Grid index of the first bin of the window.
    pub window_start: i64,
    pub signal: Vec<T>,
    pub depth_axis: Vec<T>,
    /// `||A s - d||_2`.
    pub residual: T,
}

impl<T: Real> DepthSignal<T> {
    pub fn total(&self) -> T {
        self.signal.iter().copied().sum()
    }
}

/// Center of depth-grid bin `k`.
pub fn grid_depth<T: Real>(k: i64, bin: T) -> T {
    (T::from_i64(k).expect("grid index") + T::lit(0.5)) * bin
}

/// Boxcar spanning `thickness` around `center`, smoothed with a 3-bin
/// triangular kernel `[1, 2, 1] / 4`. Used as a warm start for the solver.
pub fn smoothed_boxcar<T: Real>(depth_axis: &[T], center: T, thickness: T) -> Vec<T> {
    let half = thickness * T::lit(0.5);
    let raw: Vec<T> = depth_axis
        .iter()
        .map(|&z| if (z - center).abs() <= half { T::one() } else { T::zero() })
        .collect();
    let n = raw.len();
    let q = T::lit(0.25);
    (0..n)
        .map(|i| {
            let l = if i > 0 { raw[i - 1] } else { T::zero() };
            let r = if i + 1 < n { raw[i + 1] } else { T::zero() };
            q * l + T::lit(0.5) * raw[i] + q * r
        })
        .collect()
}

/// Coding columns of every usable grid bin for one pixel under one pose.
#[derive(Clone, Debug)]
pub struct PixelSystem<T> {
    pub pixel: Pixel,
    /// Grid index of column 0.
    pub first_bin: i64,
    pub bin: T,
    columns: Vec<Vec<T>>,
    traces: Vec<SlabTrace<T>>,
    n_steps: usize,
}

impl<T: Real> PixelSystem<T> {
    /// Builds the columns for all grid bins whose rays stay on the mask for
    /// the whole scan (and inside `depth_range`, if set).
    pub fn build(
        mask: &ApertureMask<T>,
        pose: &Pose6Dof<T>,
        inst: &Instrument<T>,
        pixel: Pixel,
        plan: &ScanPlan<T>,
        config: &ReconConfig<T>,
    ) -> Result<Self> {
        plan.validate()?;
        let bin = plan.step_size;
        let posed = PosedAperture::new(pose, mask, inst.standoff);
        let (base, step) = (plan.base_shift(), plan.step_shift());
        let trace_at = |k: i64| -> Result<Option<SlabTrace<T>>> {
            let ray = pixel_ray(&inst.detector, pixel, grid_depth(k, bin))?;
            let trace = posed.trace(&ray, base, step);
            Ok(trace.filter(|t| usable_for_scan(t, mask, plan.n_steps)))
        };

        let range = match config.depth_range {
            Some(r) => Some(r),
            None if mask.cyclic => {
                let half = mask.length() * T::lit(0.5);
                Some((-half, half))
            }
            None => None,
        };
        let (k_lo, k_hi) = match range {
            Some((lo, hi)) => {
                let k_lo = (lo / bin - T::lit(0.5)).ceil().to_i64().unwrap_or(0);
                let k_hi = (hi / bin - T::lit(0.5)).floor().to_i64().unwrap_or(-1);
                (k_lo, k_hi)
            }
            None => search_span(mask, pose, inst, pixel, plan)?,
        };

        // The usable bins form one contiguous run; keep the longest.
        let mut best: (i64, Vec<SlabTrace<T>>) = (k_lo, Vec::new());
        let mut run: (i64, Vec<SlabTrace<T>>) = (k_lo, Vec::new());
        for k in k_lo..=k_hi {
            match trace_at(k)? {
                Some(t) => run.1.push(t),
                None => {
                    if run.1.len() > best.1.len() {
                        best = std::mem::replace(&mut run, (k + 1, Vec::new()));
                    } else {
                        run = (k + 1, Vec::new());
                    }
                }
            }
        }
        if run.1.len() > best.1.len() {
            best = run;
        }
        let (first_bin, traces) = best;
        let table = TransmissionTable::new(mask);
        let columns = traces
            .iter()
            .map(|t| {
                let mut col = vec![T::zero(); plan.n_steps];
                fill_column(t, &table, &mut col);
                col
            })
            .collect();
        Ok(Self { pixel, first_bin, bin, columns, traces, n_steps: plan.n_steps })
    }

    pub fn n_bins(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.columns[j]
    }

    pub fn depth_of(&self, j: usize) -> T {
        grid_depth(self.first_bin + j as i64, self.bin)
    }

    /// Mid-slab pattern coordinate of column `j` at the first scan step.
    pub fn offset_of(&self, j: usize) -> T {
        self.traces[j].at(T::zero()).mid()
    }

    /// Exhaustive offset search followed by NNLS on the best window.
    pub fn recover(&self, d: &[T], window: usize, init: Option<&[T]>) -> Result<DepthSignal<T>> {
        if d.len() != self.n_steps {
            return Err(Error::invalid(format!(
                "series has {} samples, scan has {} steps",
                d.len(),
                self.n_steps
            )));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series must be finite"));
        }
        if window == 0 || window > self.n_steps {
            return Err(Error::invalid("window must be in 1..=n_steps"));
        }
        if let Some(init) = init {
            if init.len() != window {
                return Err(Error::invalid("initial signal must match the window size"));
            }
        }
        let k = self.n_bins();
        if k < window {
            return Err(Error::NoCandidates { row: self.pixel.row, col: self.pixel.col });
        }
        let atd: Vec<T> = self.columns.iter().map(|c| dot(c, d)).collect();
        let dtd = dot(d, d);
        // Banded Gram: band[i][o] = <col_i, col_{i+o}> for o < window.
        let band: Vec<Vec<T>> = (0..k)
            .map(|i| {
                (0..window.min(k - i))
                    .map(|o| dot(&self.columns[i], &self.columns[i + o]))
                    .collect()
            })
            .collect();
        let gram_at = |w: usize| {
            let band = &band;
            move |i: usize, j: usize| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                band[w + a][b - a]
            }
        };

        let n_windows = k - window + 1;
        let pivot = T::lit(1e-12);
        let mut bounds: Vec<(T, usize, Option<Vec<T>>)> = (0..n_windows)
            .map(|w| {
                let b = &atd[w..w + window];
                match Cholesky::factor(window, gram_at(w), pivot) {
                    Some(ch) => {
                        let z = ch.solve(b);
                        let lb = (dtd - dot(b, &z)).max(T::zero());
                        let feasible = z.iter().all(|&v| v >= T::zero());
                        (lb, w, feasible.then_some(z))
                    }
                    None => (T::zero(), w, None),
                }
            })
            .collect();
        bounds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));

        let tie = T::lit(1e-10) * dtd + T::min_positive_value();
        let mut best: Option<(T, usize, Vec<T>)> = None;
        for (lb, w, ls) in bounds {
            if let Some((best_rss, _, _)) = &best {
                if lb > *best_rss + tie {
                    break;
                }
            }
            let b = &atd[w..w + window];
            let s = match ls {
                Some(z) => z,
                None => nnls_gram(window, gram_at(w), b, init)?.x,
            };
            let rss = gram_residual_sq(gram_at(w), b, dtd, &s);
            let better = match &best {
                None => true,
                Some((best_rss, best_w, _)) => {
                    rss < *best_rss - tie || ((rss - *best_rss).abs() <= tie && w < *best_w)
                }
            };
            if better {
                best = Some((rss, w, s));
            }
        }
        let (_, w, signal) = best.expect("at least one window");
        let residual = self.direct_residual(w, &signal, d);
        Ok(DepthSignal {
            pixel: self.pixel,
            offset_um: self.offset_of(w),
            window_start: self.first_bin + w as i64,
            depth_axis: (0..window).map(|j| self.depth_of(w + j)).collect(),
            signal,
            residual,
        })
    }

    fn direct_residual(&self, w: usize, s: &[T], d: &[T]) -> T {
        let mut rss = T::zero();
        for (m, &dm) in d.iter().enumerate() {
            let pred: T = s.iter().enumerate().map(|(j, &sj)| self.columns[w + j][m] * sj).sum();
            rss = rss + (pred - dm) * (pred - dm);
        }
        rss.sqrt()
    }
}

/// Grid-index span that can hold usable bins for a non-cyclic mask, padded
/// by a few bins and later trimmed by exact validity checks.
fn search_span<T: Real>(
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    inst: &Instrument<T>,
    pixel: Pixel,
    plan: &ScanPlan<T>,
) -> Result<(i64, i64)> {
    let len = mask.length();
    let z_a = aperture_position_to_depth(inst, mask, pose, pixel, T::zero());
    let z_b = aperture_position_to_depth(inst, mask, pose, pixel, len);
    let (Some(z_a), Some(z_b)) = (z_a, z_b) else {
        return Err(Error::NoCandidates { row: pixel.row, col: pixel.col });
    };
    let (lo, hi) = if z_a < z_b { (z_a, z_b) } else { (z_b, z_a) };
    // Stage travel shifts the usable range by at most the scan length.
    let travel = (plan.start_offset.abs() + plan.step_size * T::from_usize_lossy(plan.n_steps)) * T::lit(1.1);
    let bin = plan.step_size;
    let k_lo = ((lo - travel) / bin).floor().to_i64().unwrap_or(0) - 2;
    let k_hi = ((hi + travel) / bin).ceil().to_i64().unwrap_or(0) + 2;
    Ok((k_lo, k_hi))
}

/// Recovers the window offset and non-negative depth signal of one pixel
/// from its normalized series `d`.
pub fn recover_offset_and_signal<T: Real>(
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    inst: &Instrument<T>,
    pixel: Pixel,
    plan: &ScanPlan<T>,
    d: &[T],
    config: &ReconConfig<T>,
    init: Option<&[T]>,
) -> Result<DepthSignal<T>> {
    PixelSystem::build(mask, pose, inst, pixel, plan, config)?.recover(d, config.window, init)
}

/// Depth where the cumulative signal first reaches half of its total.
///
/// Each bin's mass is spread uniformly between the midpoints to its
/// neighbours (the end bins extend by half of the adjacent spacing), and
/// the cumulative curve is interpolated linearly inside the bin that
/// crosses half mass.
pub fn median_position<T: Real>(signal: &[T], depth_axis: &[T]) -> Result<T> {
    if signal.len() != depth_axis.len() || signal.is_empty() {
        return Err(Error::invalid("signal and depth axis must be non-empty and equal length"));
    }
    let total: T = signal.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::EmptySignal);
    }
    let n = depth_axis.len();
    let half_width = |i: usize, upper: bool| -> T {
        let neighbour = if upper {
            if i + 1 < n { Some(depth_axis[i + 1]) } else if i > 0 { Some(T::lit(2.0) * depth_axis[i] - depth_axis[i - 1]) } else { None }
        } else if i > 0 {
            Some(depth_axis[i - 1])
        } else if n > 1 {
            Some(T::lit(2.0) * depth_axis[0] - depth_axis[1])
        } else {
            None
        };
        neighbour.map_or(T::lit(0.5), |z| (z - depth_axis[i]).abs() * T::lit(0.5))
    };
    let target = total * T::lit(0.5);
    let mut cum = T::zero();
    for i in 0..n {
        let s = signal[i];
        if s > T::zero() && cum + s >= target {
            let lo = depth_axis[i] - half_width(i, false);
            let hi = depth_axis[i] + half_width(i, true);
            return Ok(lo + (target - cum) / s * (hi - lo));
        }
        cum = cum + s;
    }
    Ok(depth_axis[n - 1])
}

/// Sum of signals on their common depth grid of bin width `bin`, dense
/// over the covered bins. Returns the depth axis and the summed profile.
pub fn sum_profiles<T: Real>(signals: &[DepthSignal<T>], bin: T) -> Result<(Vec<T>, Vec<T>)> {
    let mut summed: BTreeMap<i64, T> = BTreeMap::new();
    for s in signals {
        for (i, &v) in s.signal.iter().enumerate() {
            let slot = summed.entry(s.window_start + i as i64).or_insert_with(T::zero);
            *slot = *slot + v;
        }
    }
    let (Some((&lo, _)), Some((&hi, _))) = (summed.first_key_value(), summed.last_key_value()) else {
        return Err(Error::EmptySignal);
    };
    let axis = (lo..=hi).map(|k| grid_depth(k, bin)).collect();
    let profile = (lo..=hi).map(|k| summed.get(&k).copied().unwrap_or_else(T::zero)).collect();
    Ok((axis, profile))
}

/// Full width at half maximum of a sampled profile, with linear
/// interpolation of both half-maximum crossings around the peak.
pub fn fwhm<T: Real>(profile: &[T], axis: &[T]) -> Result<T> {
    if profile.len() != axis.len() || profile.len() < 2 {
        return Err(Error::invalid("profile needs at least two samples"));
    }
    let (peak_i, peak) = profile
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if !(peak > T::zero()) {
        return Err(Error::EmptySignal);
    }
    let half = peak * T::lit(0.5);
    let cross = |a: usize, b: usize| {
        let (va, vb) = (profile[a], profile[b]);
        axis[a] + (half - va) / (vb - va) * (axis[b] - axis[a])
    };
    let mut left = axis[0];
    for i in (0..peak_i).rev() {
        if profile[i] < half {
            left = cross(i, i + 1);
            break;
        }
    }
    let mut right = axis[axis.len() - 1];
    for i in peak_i + 1..profile.len() {
        if profile[i] < half {
            right = cross(i - 1, i);
            break;
        }
    }
    Ok(right - left)
}
