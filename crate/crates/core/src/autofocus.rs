//! Aperture autofocus: the pose is tuned until the depth-resolved signals of
//! a calibration sample line up at the origin.
//!
//! The cost of a pose is the mean squared median depth over all selected
//! (pixel, scan bin) entries. It is minimized by cyclic coordinate descent
//! with an interval-halving line search per coordinate.

use rayon::prelude::*;

use crate::dataset::ScanDataset;
use crate::encoding::normalize_measurements;
use crate::error::{Error, Result};
use crate::geometry::{Coordinate, Instrument, Pixel, Pose6Dof};
use crate::mask::ApertureMask;
use crate::recon::{median_position, smoothed_boxcar, DepthSignal, PixelSystem, ReconConfig};
use crate::scalar::Real;
use crate::simulator::SATURATION;

/// Poisson signal-to-noise ratio of a pixel whose brightest frame has
/// `peak` counts.
pub fn poisson_snr<T: Real>(peak: T) -> T {
    if peak > T::zero() {
        peak / peak.sqrt()
    } else {
        T::zero()
    }
}

/// Pixels of `dataset` with Poisson SNR of at least `min_snr`, brightest
/// first. Dark and saturated pixels are never selected.
pub fn select_pixels<T: Real>(dataset: &ScanDataset<T>, min_snr: T) -> Result<Vec<(Pixel, T)>> {
    let saturated = T::lit(SATURATION);
    let mut picked: Vec<(Pixel, T)> = dataset
        .pixels
        .iter()
        .zip(&dataset.series)
        .filter_map(|(&p, s)| {
            if s.iter().any(|v| !(*v >= T::zero())) {
                return None;
            }
            let peak = s.iter().copied().fold(T::zero(), T::max);
            let snr = poisson_snr(peak);
            (peak > T::zero() && peak < saturated && snr >= min_snr).then_some((p, snr))
        })
        .collect();
    if picked.is_empty() {
        return Err(Error::NoPixels);
    }
    picked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(picked)
}

/// How recovered positions are turned into a cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CostMode {
    /// Mean squared distance from the origin.
    #[default]
    SecondMoment,
    /// Variance about the mean position; blind to a common depth offset.
    Variance,
}

/// Per-coordinate search intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds<T> {
    pub lo: Pose6Dof<T>,
    pub hi: Pose6Dof<T>,
}

impl<T: Real> Bounds<T> {
    /// `center ± angle` degrees and `center ± translation` μm.
    pub fn around(center: &Pose6Dof<T>, angle: T, translation: T) -> Self {
        let mut lo = *center;
        let mut hi = *center;
        for c in Coordinate::ALL {
            let r = if c.is_rotation() { angle } else { translation };
            // Written directly so that wide angular bounds are not wrapped.
            set_raw(&mut lo, c, center.get(c) - r);
            set_raw(&mut hi, c, center.get(c) + r);
        }
        Self { lo, hi }
    }

    pub fn interval(&self, c: Coordinate) -> (T, T) {
        (self.lo.get(c), self.hi.get(c))
    }

    pub fn contains(&self, pose: &Pose6Dof<T>) -> bool {
        Coordinate::ALL.iter().all(|&c| {
            let (lo, hi) = self.interval(c);
            lo <= pose.get(c) && pose.get(c) <= hi
        })
    }
}

fn set_raw<T: Real>(pose: &mut Pose6Dof<T>, c: Coordinate, v: T) {
    match c {
        Coordinate::Surge => pose.surge = v,
        Coordinate::Sway => pose.sway = v,
        Coordinate::Heave => pose.heave = v,
        Coordinate::Yaw => pose.yaw = v,
        Coordinate::Pitch => pose.pitch = v,
        Coordinate::Roll => pose.roll = v,
    }
}

/// One normalized series of one pixel in one scan bin.
#[derive(Clone, Debug)]
struct Entry<T> {
    bin: usize,
    pixel: Pixel,
    series: Vec<T>,
}

/// Everything the autofocus needs besides the pose.
#[derive(Clone, Debug)]
pub struct FocusProblem<T> {
    pub bins: Vec<ScanDataset<T>>,
    pub pixels: Vec<Pixel>,
    pub mask: ApertureMask<T>,
    pub instrument: Instrument<T>,
    pub recon: ReconConfig<T>,
    /// Defaults to `init ± 3°` and `init ± 300 μm` when unset.
    pub bounds: Option<Bounds<T>>,
    /// Degrees.
    pub tol_rot: T,
    /// μm.
    pub tol_trans: T,
    pub max_cycles: usize,
    pub order: Vec<Coordinate>,
    pub cost_mode: CostMode,
    /// Thickness of the calibration sample, used to seed the solver.
    pub sample_thickness: Option<T>,
    entries: Vec<Entry<T>>,
    skipped: usize,
}

impl<T: Real> FocusProblem<T> {
    /// Normalizes every (bin, pixel) series; pixels with too little contrast
    /// in a bin are left out of that bin.
    pub fn new(
        bins: Vec<ScanDataset<T>>,
        pixels: Vec<Pixel>,
        mask: ApertureMask<T>,
        instrument: Instrument<T>,
    ) -> Result<Self> {
        mask.validate()?;
        if bins.is_empty() {
            return Err(Error::invalid("no scan bins"));
        }
        if pixels.is_empty() {
            return Err(Error::NoPixels);
        }
        let mut entries = Vec::new();
        let mut skipped = 0;
        for (b, ds) in bins.iter().enumerate() {
            ds.validate()?;
            for &pixel in &pixels {
                let raw = ds
                    .series_of(pixel)
                    .ok_or_else(|| Error::invalid(format!("pixel {pixel} missing from scan bin {b}")))?;
                match normalize_measurements(raw) {
                    Ok(series) => entries.push(Entry { bin: b, pixel, series }),
                    Err(Error::DegenerateContrast { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::NoSignal(format!("all {skipped} pixel series have degenerate contrast")));
        }
        Ok(Self {
            bins,
            pixels,
            mask,
            instrument,
            recon: ReconConfig::default(),
            bounds: None,
            tol_rot: T::lit(0.01),
            tol_trans: T::one(),
            max_cycles: 100,
            order: Coordinate::DESCENT_ORDER.to_vec(),
            cost_mode: CostMode::SecondMoment,
            sample_thickness: None,
            entries,
            skipped,
        })
    }

    /// Number of usable (pixel, bin) series.
    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    /// Series dropped for degenerate contrast.
    pub fn n_skipped(&self) -> usize {
        self.skipped
    }

    /// `(bin, pixel)` of every usable series, in evaluation order.
    pub fn entry_keys(&self) -> Vec<(usize, Pixel)> {
        self.entries.iter().map(|e| (e.bin, e.pixel)).collect()
    }

    pub fn tolerance(&self, c: Coordinate) -> T {
        if c.is_rotation() {
            self.tol_rot
        } else {
            self.tol_trans
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rot > T::zero() && self.tol_trans > T::zero()) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        let mut order = self.order.clone();
        order.sort_by_key(|c| c.name());
        order.dedup();
        if order.len() != self.order.len() || self.order.is_empty() {
            return Err(Error::invalid("coordinate order must list distinct coordinates"));
        }
        if self.recon.window == 0 {
            return Err(Error::invalid("reconstruction window must be positive"));
        }
        Ok(())
    }

    /// Recovers every entry under `pose`.
    pub fn recover_all(&self, pose: &Pose6Dof<T>) -> Vec<Result<DepthSignal<T>>> {
        let init = self.sample_thickness.map(|t| {
            let n = self.recon.window;
            let bin = self.bins[0].step_size;
            let axis: Vec<T> = (0..n).map(|j| T::from_usize_lossy(j) * bin).collect();
            let center = T::from_usize_lossy(n - 1) * bin * T::lit(0.5);
            smoothed_boxcar(&axis, center, t)
        });
        self.entries
            .par_iter()
            .map(|e| {
                let plan = self.bins[e.bin].plan();
                let system = PixelSystem::build(&self.mask, pose, &self.instrument, e.pixel, &plan, &self.recon)?;
                system.recover(&e.series, self.recon.window, init.as_deref())
            })
            .collect()
    }

    /// Median depth of every entry under `pose`; `None` where recovery failed
    /// or found no signal.
    pub fn positions(&self, pose: &Pose6Dof<T>) -> Vec<Option<T>> {
        self.recover_all(pose)
            .into_iter()
            .map(|r| r.ok().and_then(|s| median_position(&s.signal, &s.depth_axis).ok()))
            .collect()
    }

    fn cost_of_positions(&self, positions: &[Option<T>]) -> T {
        if positions.iter().any(Option::is_none) {
            return T::infinity();
        }
        let p: Vec<T> = positions.iter().map(|v| v.expect("checked")).collect();
        let n = T::from_usize_lossy(p.len());
        let center = match self.cost_mode {
            CostMode::SecondMoment => T::zero(),
            CostMode::Variance => p.iter().copied().sum::<T>() / n,
        };
        p.iter().map(|&v| (v - center) * (v - center)).sum::<T>() / n
    }
}

/// Cost of `pose`: mean squared median depth (or its variance, per
/// [`CostMode`]). Poses under which some entry cannot be recovered cost
/// `+inf`.
pub fn focus_cost<T: Real>(pose: &Pose6Dof<T>, problem: &FocusProblem<T>) -> Result<T> {
    if problem.n_entries() < 2 {
        return Err(Error::NoSignal(format!(
            "need at least two usable pixel series, have {}",
            problem.n_entries()
        )));
    }
    Ok(problem.cost_of_positions(&problem.positions(pose)))
}

/// Mean and sample standard deviation.
pub fn mean_std<T: Real>(values: &[T]) -> (T, T) {
    let n = values.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let mean = values.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    if n == 1 {
        return (mean, T::zero());
    }
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, (ss / T::from_usize_lossy(n - 1)).sqrt())
}

/// Outcome of [`binary_line_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct LineSearch<T> {
    pub x: T,
    pub value: T,
    pub halvings: usize,
    pub evaluations: usize,
    /// Active interval before each halving and after the last one.
    pub intervals: Vec<(T, T)>,
}

/// Interval-halving minimization of a unimodal `f` on `[lo, hi]`.
///
/// The middle value is compared with both boundary values: if it is closer
/// to the lower boundary's value the upper half is dropped, and vice versa.
/// When both distances agree to within `1e-12` (relative), the midpoints of
/// the two halves are evaluated and the half with the smaller one is kept,
/// the lower half on a tie. Halving stops once the interval is no wider than
/// `tol`. The result is the final midpoint unless some earlier evaluation
/// was strictly lower. Boundary values are carried forward, so each halving
/// costs one evaluation outside ambiguous steps.
pub fn binary_line_search<T: Real, F>(mut f: F, lo: T, hi: T, tol: T) -> Result<LineSearch<T>>
where
    F: FnMut(T) -> Result<T>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("line search needs a finite interval with lo < hi"));
    }
    if !(tol > T::zero()) {
        return Err(Error::invalid("line search tolerance must be positive"));
    }
    let half = T::lit(0.5);
    let (mut a, mut b) = (lo, hi);
    let mut evaluations = 0;
    let mut best: Option<(T, T)> = None;
    let mut eval = |x: T, evaluations: &mut usize| -> Result<T> {
        let v = f(x)?;
        *evaluations += 1;
        if best.map_or(true, |(_, bv)| v < bv) {
            best = Some((x, v));
        }
        Ok(v)
    };
    let mut fa = eval(a, &mut evaluations)?;
    let mut fb = eval(b, &mut evaluations)?;
    let mut halvings = 0;
    let mut intervals = vec![(a, b)];
    let gap = |u: T, v: T| if u == v { T::zero() } else { (u - v).abs() };
    while b - a > tol {
        let m = (a + b) * half;
        let fm = eval(m, &mut evaluations)?;
        let (to_a, to_b) = (gap(fm, fa), gap(fm, fb));
        let scale = T::one().max(to_a.abs()).max(to_b.abs());
        let keep_lower = if to_a.is_nan() || to_b.is_nan() || (to_a - to_b).abs() <= T::lit(1e-12) * scale {
            let q1 = eval((a + m) * half, &mut evaluations)?;
            let q3 = eval((m + b) * half, &mut evaluations)?;
            !(q3 < q1)
        } else {
            to_a < to_b
        };
        if keep_lower {
            b = m;
            fb = fm;
        } else {
            a = m;
            fa = fm;
        }
        halvings += 1;
        intervals.push((a, b));
    }
    let mid = (a + b) * half;
    let mid_value = eval(mid, &mut evaluations)?;
    // Report the best point seen; the final midpoint wins ties.
    let (x, value) = match best {
        Some((x, v)) if v < mid_value => (x, v),
        _ => (mid, mid_value),
    };
    Ok(LineSearch { x, value, halvings, evaluations, intervals })
}

/// Upper bound on the halvings [`binary_line_search`] performs.
pub fn max_halvings<T: Real>(lo: T, hi: T, tol: T) -> usize {
    ((hi - lo) / tol).log2().ceil().max(T::zero()).to_usize().unwrap_or(usize::MAX)
}

/// Per-cycle record of the coordinate descent.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord<T> {
    /// 0 for the initial pose.
    pub cycle: usize,
    pub pose: Pose6Dof<T>,
    pub cost: T,
    /// Absolute change of each coordinate during the cycle, in descent order.
    pub changes: Vec<(Coordinate, T)>,
    /// Same changes divided by the coordinate tolerance.
    pub relative_changes: Vec<(Coordinate, T)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocusTrace<T> {
    pub cycles: Vec<CycleRecord<T>>,
    pub converged: bool,
    /// Median depth per (pixel, bin) entry at the final pose.
    pub positions: Vec<T>,
    pub mean: T,
    pub std: T,
    pub evaluations: usize,
}

impl<T: Real> FocusTrace<T> {
    pub fn final_pose(&self) -> Pose6Dof<T> {
        self.cycles.last().map(|c| c.pose).unwrap_or_default()
    }

    pub fn final_cost(&self) -> T {
        self.cycles.last().map_or(T::nan(), |c| c.cost)
    }

    /// True when no cycle raised the cost.
    pub fn is_monotone(&self) -> bool {
        self.cycles.windows(2).all(|w| w[1].cost <= w[0].cost)
    }
}

/// A failed descent: the cause and the cycles completed before it.
#[derive(Debug)]
pub struct FocusFailure<T> {
    pub trace: FocusTrace<T>,
    pub error: Error,
}

/// Cyclic coordinate descent on [`focus_cost`] from `init`.
///
/// Each coordinate is line-searched over its whole bound interval; the
/// result is taken only if it lowers the cost. The descent stops after a
/// cycle in which every coordinate moved less than its tolerance, or after
/// `max_cycles`.
pub fn coordinate_descent<T: Real>(
    problem: &FocusProblem<T>,
    init: Pose6Dof<T>,
) -> std::result::Result<FocusTrace<T>, Box<FocusFailure<T>>> {
    let mut trace = FocusTrace {
        cycles: Vec::new(),
        converged: false,
        positions: Vec::new(),
        mean: T::nan(),
        std: T::nan(),
        evaluations: 0,
    };
    let fail = |trace: FocusTrace<T>, error: Error| Box::new(FocusFailure { trace, error });
    if let Err(e) = problem.validate() {
        return Err(fail(trace, e));
    }
    let bounds = problem
        .bounds
        .unwrap_or_else(|| Bounds::around(&init, T::lit(3.0), T::lit(300.0)));
    if !bounds.contains(&init) {
        return Err(fail(trace, Error::invalid("initial pose lies outside the search bounds")));
    }
    let mut pose = init;
    let mut cost = match focus_cost(&pose, problem) {
        Ok(c) => c,
        Err(e) => return Err(fail(trace, e)),
    };
    trace.evaluations += 1;
    trace.cycles.push(CycleRecord { cycle: 0, pose, cost, changes: Vec::new(), relative_changes: Vec::new() });

    for cycle in 1..=problem.max_cycles {
        let mut changes = Vec::with_capacity(problem.order.len());
        for &c in &problem.order {
            let (lo, hi) = bounds.interval(c);
            let before = pose.get(c);
            let search = binary_line_search(
                |v| {
                    let mut trial = pose;
                    set_raw(&mut trial, c, v);
                    focus_cost(&trial, problem)
                },
                lo,
                hi,
                problem.tolerance(c),
            );
            let search = match search {
                Ok(s) => s,
                Err(e) => return Err(fail(trace, e)),
            };
            trace.evaluations += search.evaluations;
            let margin = T::lit(1e-12) * cost.abs();
            if search.value < cost - margin {
                set_raw(&mut pose, c, search.x);
                cost = search.value;
            }
            changes.push((c, (pose.get(c) - before).abs()));
        }
        let relative_changes = changes.iter().map(|&(c, d)| (c, d / problem.tolerance(c))).collect();
        let done = changes.iter().all(|&(c, d)| d < problem.tolerance(c));
        trace.cycles.push(CycleRecord { cycle, pose, cost, changes, relative_changes });
        if done {
            trace.converged = true;
            break;
        }
    }

    let positions: Vec<T> = problem.positions(&pose).into_iter().flatten().collect();
    let (mean, std) = mean_std(&positions);
    trace.positions = positions;
    trace.mean = mean;
    trace.std = std;
    Ok(trace)
}

/// One point of a sensitivity sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint<T> {
    pub value: T,
    /// Sum of squared fit residuals over all entries.
    pub data_fidelity: T,
    /// The autofocus cost.
    pub signal_fidelity: T,
}

/// Evaluates both fidelity terms while `coordinate` of `base` runs over
/// `values`.
pub fn sweep<T: Real>(
    problem: &FocusProblem<T>,
    base: &Pose6Dof<T>,
    coordinate: Coordinate,
    values: &[T],
) -> Result<Vec<SweepPoint<T>>> {
    if problem.n_entries() < 2 {
        return Err(Error::NoSignal("need at least two usable pixel series".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut pose = *base;
            set_raw(&mut pose, coordinate, value);
            let fits = problem.recover_all(&pose);
            let data_fidelity = fits.iter().fold(T::zero(), |acc, r| match r {
                Ok(s) => acc + s.residual * s.residual,
                Err(_) => T::infinity(),
            });
            let positions: Vec<Option<T>> = fits
                .into_iter()
                .map(|r| r.ok().and_then(|s| median_position(&s.signal, &s.depth_axis).ok()))
                .collect();
            Ok(SweepPoint { value, data_fidelity, signal_fidelity: problem.cost_of_positions(&positions) })
        })
        .collect()
}

/// `n` evenly spaced values from `lo` to `hi`; `n = 1` gives the midpoint.
pub fn sweep_values<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![(lo + hi) * T::lit(0.5)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1))
            .collect(),
    }
}
