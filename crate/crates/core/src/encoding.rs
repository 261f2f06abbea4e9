//! Per-pixel coding matrices and intensity normalization.

use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, trace_scan, Instrument, MaskShift, Pixel, Pose6Dof, SlabTrace};
use crate::linalg::Matrix;
use crate::mask::{ApertureMask, TransmissionTable};
use crate::scalar::Real;

/// Stage motion of the aperture during a scan.
///
/// At step `m` the aperture is displaced by
/// `(start_offset + m * step_size) * direction` from its pose. The default
/// direction is `-z`: the pattern then slides past a fixed ray toward
/// increasing pattern coordinate, which gives the coding matrix its
/// sliding-window (Hankel) layout over increasing depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPlan<T> {
    pub step_size: T,
    pub n_steps: usize,
    /// Unit vector in the xz-plane.
    pub direction: MaskShift<T>,
    pub start_offset: T,
}

impl<T: Real> ScanPlan<T> {
    pub fn new(step_size: T, n_steps: usize) -> Self {
        Self {
            step_size,
            n_steps,
            direction: MaskShift::along_z(-T::one()),
            start_offset: T::zero(),
        }
    }

    pub fn with_start(mut self, start_offset: T) -> Self {
        self.start_offset = start_offset;
        self
    }

    pub fn with_direction(mut self, x: T, z: T) -> Self {
        self.direction = MaskShift { x, z };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::invalid("scan step size must be positive"));
        }
        if self.n_steps < 2 {
            return Err(Error::invalid("a scan needs at least two steps"));
        }
        let d = self.direction;
        let norm = (d.x * d.x + d.z * d.z).sqrt();
        if (norm - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::invalid("scan direction must be a unit vector"));
        }
        if !self.start_offset.is_finite() {
            return Err(Error::invalid("scan start offset must be finite"));
        }
        Ok(())
    }

    pub fn base_shift(&self) -> MaskShift<T> {
        MaskShift { x: self.direction.x * self.start_offset, z: self.direction.z * self.start_offset }
    }

    pub fn step_shift(&self) -> MaskShift<T> {
        MaskShift { x: self.direction.x * self.step_size, z: self.direction.z * self.step_size }
    }

    /// Scan offset (μm along `direction`) of step `m`.
    pub fn offset_of(&self, m: usize) -> T {
        self.start_offset + T::from_usize_lossy(m) * self.step_size
    }
}

/// `M x N` operator mapping a depth signal to a pixel's scan series.
#[derive(Clone, Debug, PartialEq)]
pub struct CodingMatrix<T> {
    /// Row = scan step, column = depth bin; entries in `[0, 1]`.
    pub entries: Matrix<T>,
    pub depth_axis: Vec<T>,
}

impl<T: Real> CodingMatrix<T> {
    pub fn n_steps(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_depths(&self) -> usize {
        self.entries.ncols()
    }
}

/// Slab trace of the ray from `(0, 0, depth)` to `pixel` over the scan.
pub fn trace_depth<T: Real>(
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    inst: &Instrument<T>,
    pixel: Pixel,
    plan: &ScanPlan<T>,
    depth: T,
) -> Result<Option<SlabTrace<T>>> {
    let ray = pixel_ray(&inst.detector, pixel, depth)?;
    Ok(trace_scan(&ray, pose, mask, inst.standoff, plan.base_shift(), plan.step_shift()))
}

/// True when the trace stays valid over all `n_steps` steps.
pub fn usable_for_scan<T: Real>(trace: &SlabTrace<T>, mask: &ApertureMask<T>, n_steps: usize) -> bool {
    // Validity is convex in the step index; checking the ends decides it.
    trace.valid_at(T::zero(), mask) && trace.valid_at(T::from_usize_lossy(n_steps - 1), mask)
}

/// First scan step at which the trace is unusable, if any.
pub fn first_invalid_step<T: Real>(
    trace: Option<&SlabTrace<T>>,
    mask: &ApertureMask<T>,
    n_steps: usize,
) -> Option<usize> {
    let Some(trace) = trace else { return Some(0) };
    if usable_for_scan(trace, mask, n_steps) {
        return None;
    }
    (0..n_steps).find(|&m| !trace.valid_at(T::from_usize_lossy(m), mask)).or(Some(n_steps - 1))
}

/// Fills `out[m]` with the effective transmission at every scan step.
pub fn fill_column<T: Real>(trace: &SlabTrace<T>, table: &TransmissionTable<'_, T>, out: &mut [T]) {
    table.fill_affine(trace.entry, trace.exit, trace.per_step, out);
}

/// Entry `(m, n)` is the effective transmission along the ray from
/// `(0, 0, depth_axis[n])` to `pixel` with the stage at scan step `m`.
pub fn assemble_coding_matrix<T: Real>(
    mask: &ApertureMask<T>,
    pose: &Pose6Dof<T>,
    inst: &Instrument<T>,
    pixel: Pixel,
    plan: &ScanPlan<T>,
    depth_axis: &[T],
) -> Result<CodingMatrix<T>> {
    plan.validate()?;
    let n = depth_axis.len();
    let m = plan.n_steps;
    if n == 0 {
        return Err(Error::invalid("empty depth axis"));
    }
    if depth_axis.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("depth axis must be strictly increasing"));
    }
    if m < n {
        return Err(Error::invalid(format!("coding matrix must be overdetermined: {m} steps < {n} depths")));
    }
    let mut entries = Matrix::zeros(m, n);
    let mut column = vec![T::zero(); m];
    let table = TransmissionTable::new(mask);
    for (j, &depth) in depth_axis.iter().enumerate() {
        let trace = trace_depth(mask, pose, inst, pixel, plan, depth)?;
        if let Some(step) = first_invalid_step(trace.as_ref(), mask, m) {
            return Err(Error::ApertureMiss { step, depth_um: depth.f64() });
        }
        fill_column(trace.as_ref().expect("checked"), &table, &mut column);
        for (i, &v) in column.iter().enumerate() {
            entries[(i, j)] = v;
        }
    }
    Ok(CodingMatrix { entries, depth_axis: depth_axis.to_vec() })
}

/// Affine min/max normalization of a raw intensity series.
///
/// `mu0 = d_min + 2 sqrt(d_min)` and `mu1 = d_max - 2 sqrt(d_max)` estimate the
/// mean fully-blocked and fully-open levels under Poisson statistics; the
/// series is mapped to `(d - mu0) / (mu1 - mu0)` without clamping.
pub fn normalize_measurements<T: Real>(d_raw: &[T]) -> Result<Vec<T>> {
    let (mu0, mu1) = normalization_levels(d_raw)?;
    let scale = mu1 - mu0;
    Ok(d_raw.iter().map(|&v| (v - mu0) / scale).collect())
}

/// The `(mu0, mu1)` pair used by [`normalize_measurements`].
pub fn normalization_levels<T: Real>(d_raw: &[T]) -> Result<(T, T)> {
    if d_raw.is_empty() {
        return Err(Error::invalid("empty intensity series"));
    }
    if d_raw.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::invalid("intensities must be finite and non-negative"));
    }
    let dmin = d_raw.iter().copied().fold(T::infinity(), T::min);
    let dmax = d_raw.iter().copied().fold(T::neg_infinity(), T::max);
    let two = T::lit(2.0);
    let mu0 = dmin + two * dmin.sqrt();
    let mu1 = dmax - two * dmax.sqrt();
    if !(mu1 > mu0) {
        return Err(Error::DegenerateContrast { mu0: mu0.f64(), mu1: mu1.f64() });
    }
    Ok((mu0, mu1))
}
