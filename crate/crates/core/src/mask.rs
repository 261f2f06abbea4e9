//! Coded-aperture bar pattern and its transmission profile.
//!
//! The pattern is a binary sequence of bar cells laid out along the scan
//! axis. A `1` is an absorbing bar, a `0` an open cell. Transmission along
//! an oblique ray is the path-length average of the piecewise-constant
//! profile over the stretch of pattern the ray crosses inside the slab.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest de Bruijn order accepted by [`generate_de_bruijn`].
pub const MAX_DE_BRUIJN_ORDER: u32 = 16;

/// Binary de Bruijn sequence B(2, order) built with the greedy prefer-one
/// rule.
///
/// Starting from the all-zero word of length `order`, each next bit is `1`
/// if the resulting window has not been seen yet, otherwise `0`. The run
/// stops when neither extension is new; the output is the first `2^order`
/// bits of that run, which read cyclically contain every `order`-bit word
/// exactly once.
pub fn generate_de_bruijn(order: u32) -> Result<Vec<u8>> {
    if !(1..=MAX_DE_BRUIJN_ORDER).contains(&order) {
        return Err(Error::invalid(format!(
            "de Bruijn order must be in 1..={MAX_DE_BRUIJN_ORDER}, got {order}"
        )));
    }
    let len = 1usize << order;
    let mask = len - 1;
    let mut seen = vec![false; len];
    let mut out = vec![0u8; order as usize];
    seen[0] = true;
    let mut word = 0usize;
    loop {
        let one = ((word << 1) | 1) & mask;
        let zero = (word << 1) & mask;
        let (bit, next) = if !seen[one] {
            (1, one)
        } else if !seen[zero] {
            (0, zero)
        } else {
            break;
        };
        seen[next] = true;
        word = next;
        out.push(bit);
    }
    // The greedy run has length 2^order + order - 1; its first 2^order bits
    // form the cyclic sequence.
    out.truncate(len);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApertureMask<T> {
    /// 1 = absorbing bar, 0 = open cell.
    pub bits: Vec<u8>,
    /// Width of one cell along the pattern axis, μm.
    pub bar_width: T,
    /// Slab thickness along the mask normal, μm.
    pub thickness: T,
    pub transmission_one: T,
    pub transmission_zero: T,
    /// Pattern coordinates wrap around the sequence when set; otherwise the
    /// mask ends at `[0, len)`.
    pub cyclic: bool,
    /// De Bruijn order the bits were built with, if any.
    pub order: Option<u32>,
}

impl<T: Real> ApertureMask<T> {
    pub fn new(
        bits: Vec<u8>,
        bar_width: T,
        thickness: T,
        transmission_one: T,
        transmission_zero: T,
    ) -> Result<Self> {
        let mask = Self {
            bits,
            bar_width,
            thickness,
            transmission_one,
            transmission_zero,
            cyclic: false,
            order: None,
        };
        mask.validate()?;
        Ok(mask)
    }

    /// De Bruijn mask with 1 μm bars, 4.6 μm thickness, ideal absorption.
    pub fn de_bruijn(order: u32) -> Result<Self> {
        let bits = generate_de_bruijn(order)?;
        let mut mask = Self::new(bits, T::one(), T::lit(4.6), T::zero(), T::one())?;
        mask.order = Some(order);
        Ok(mask)
    }

    pub fn with_thickness(mut self, thickness: T) -> Self {
        self.thickness = thickness;
        self
    }

    pub fn with_bar_width(mut self, bar_width: T) -> Self {
        self.bar_width = bar_width;
        self
    }

    pub fn with_transmission(mut self, one: T, zero: T) -> Self {
        self.transmission_one = one;
        self.transmission_zero = zero;
        self
    }

    pub fn with_cyclic(mut self, cyclic: bool) -> Self {
        self.cyclic = cyclic;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits.is_empty() {
            return Err(Error::invalid("mask has no bits"));
        }
        if self.bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask bits must be 0 or 1"));
        }
        if let Some(order) = self.order {
            if self.bits.len() < order as usize {
                return Err(Error::invalid("mask shorter than its de Bruijn order"));
            }
        }
        if !(self.bar_width > T::zero()) || !self.bar_width.is_finite() {
            return Err(Error::invalid("bar width must be positive"));
        }
        if !(self.thickness >= T::zero()) || !self.thickness.is_finite() {
            return Err(Error::invalid("thickness must be non-negative"));
        }
        let (one, zero) = (self.transmission_one, self.transmission_zero);
        if !(T::zero() <= one && one < zero && zero <= T::one()) {
            return Err(Error::invalid(
                "transmissivities must satisfy 0 <= t_one < t_zero <= 1",
            ));
        }
        Ok(())
    }

    pub fn len_bits(&self) -> usize {
        self.bits.len()
    }

    /// Physical pattern length, μm.
    pub fn length(&self) -> T {
        T::from_usize_lossy(self.bits.len()) * self.bar_width
    }

    fn coefficient(&self, bit: u8) -> T {
        if bit == 1 {
            self.transmission_one
        } else {
            self.transmission_zero
        }
    }

    /// Cell index containing `u`, wrapped cyclically onto the pattern.
    ///
    /// Wrapping applies to every coordinate; the non-cyclic extent is
    /// enforced by ray tracing, not here.
    fn cell(&self, u: T) -> usize {
        let n = self.bits.len() as i64;
        let k = (u / self.bar_width).floor().to_i64().unwrap_or(0);
        if (0..n).contains(&k) {
            k as usize
        } else {
            k.rem_euclid(n) as usize
        }
    }

    /// Transmission coefficient of the cell containing pattern coordinate `u`.
    pub fn transmissivity_at(&self, u: T) -> T {
        self.coefficient(self.bits[self.cell(u)])
    }

    /// Path-length weighted mean transmission over `[u_entry, u_exit]`
    /// (either order), integrated exactly over the piecewise-constant cells.
    pub fn effective_transmission(&self, u_entry: T, u_exit: T) -> T {
        let (lo, hi) = if u_entry <= u_exit { (u_entry, u_exit) } else { (u_exit, u_entry) };
        let span = hi - lo;
        if !(span > T::zero()) {
            return self.transmissivity_at(lo);
        }
        let w = self.bar_width;
        let first = (lo / w).floor();
        let last = (hi / w).floor();
        if first == last {
            return self.transmissivity_at(lo);
        }
        let mut acc = T::zero();
        let mut k = first;
        while k <= last {
            let a = (k * w).max(lo);
            let b = ((k + T::one()) * w).min(hi);
            if b > a {
                acc = acc + (b - a) * self.transmissivity_at(a + (b - a) * T::lit(0.5));
            }
            k = k + T::one();
        }
        acc / span
    }
}

/// Running integral of a mask's transmission profile, for fast path
/// averages over many segments of the same mask.
#[derive(Clone, Debug)]
pub struct TransmissionTable<'a, T> {
    mask: &'a ApertureMask<T>,
    /// Per cell: integral over all earlier cells (cell units) and the cell's
    /// own coefficient.
    cells: Vec<(T, T)>,
    total: T,
}

impl<'a, T: Real> TransmissionTable<'a, T> {
    pub fn new(mask: &'a ApertureMask<T>) -> Self {
        let mut cells = Vec::with_capacity(mask.bits.len());
        let mut acc = T::zero();
        for &b in &mask.bits {
            let c = mask.coefficient(b);
            cells.push((acc, c));
            acc = acc + c;
        }
        Self { mask, cells, total: acc }
    }

    fn cell(&self, k: i64) -> (T, T) {
        let n = self.cells.len() as i64;
        if (0..n).contains(&k) {
            self.cells[k as usize]
        } else {
            let (before, c) = self.cells[k.rem_euclid(n) as usize];
            let periods = T::from_i64(k.div_euclid(n)).expect("period count");
            (before + periods * self.total, c)
        }
    }

    /// Integral from 0 to `u` in cell units, given `k = floor(u / bar_width)`
    /// and `x = u / bar_width`.
    fn integral_in_cell(&self, x: T, k: i64, k_t: T) -> T {
        let (before, c) = self.cell(k);
        before + (x - k_t) * c
    }

    /// Same value as [`ApertureMask::effective_transmission`] up to rounding.
    pub fn mean(&self, u_entry: T, u_exit: T) -> T {
        let mut out = [T::zero()];
        self.fill_affine(u_entry, u_exit, T::zero(), &mut out);
        out[0]
    }

    /// `out[m] = mean(entry + m * rate, exit + m * rate)`, tracking the cell
    /// indices incrementally instead of flooring every coordinate.
    pub fn fill_affine(&self, entry: T, exit: T, rate: T, out: &mut [T]) {
        let w = self.mask.bar_width;
        let (lo0, hi0) = if entry <= exit { (entry, exit) } else { (exit, entry) };
        let (lo0, hi0, rate) = (lo0 / w, hi0 / w, rate / w);
        let mut k_lo = lo0.floor();
        let mut k_hi = hi0.floor();
        let track = |k: &mut T, x: T| {
            while *k + T::one() <= x {
                *k = *k + T::one();
            }
            while *k > x {
                *k = *k - T::one();
            }
        };
        let (t_min, t_max) = (self.mask.transmission_one, self.mask.transmission_zero);
        for (m, o) in out.iter_mut().enumerate() {
            let shift = T::from_usize_lossy(m) * rate;
            let (lo, hi) = (lo0 + shift, hi0 + shift);
            track(&mut k_lo, lo);
            track(&mut k_hi, hi);
            let ki_lo = k_lo.to_i64().unwrap_or(0);
            *o = if !(hi > lo) || k_lo == k_hi {
                self.cell(ki_lo).1
            } else {
                let ki_hi = k_hi.to_i64().unwrap_or(0);
                let v = (self.integral_in_cell(hi, ki_hi, k_hi) - self.integral_in_cell(lo, ki_lo, k_lo)) / (hi - lo);
                v.max(t_min).min(t_max)
            };
        }
    }
}
