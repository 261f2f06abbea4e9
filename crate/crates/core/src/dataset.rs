//! Raw scan series and their on-disk form: a CSV matrix (rows = scan steps,
//! columns = pixels) next to a JSON sidecar with the scan metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::ScanPlan;
use crate::error::{Error, Result};
use crate::geometry::{MaskShift, Pixel};
use crate::scalar::Real;

/// Acquisition settings recorded with a dataset. Purely informational.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExposureMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Raw intensity series of a set of pixels over one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanDataset<T> {
    pub step_size: T,
    pub direction: MaskShift<T>,
    /// Stage offset of the first step, μm along `direction`.
    pub start_offset: T,
    pub pixels: Vec<Pixel>,
    /// `series[i][m]`: counts of `pixels[i]` at step `m`.
    pub series: Vec<Vec<T>>,
    pub exposure: ExposureMeta,
}

impl<T: Real> ScanDataset<T> {
    pub fn n_steps(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.len() != self.series.len() {
            return Err(Error::invalid("one series per pixel required"));
        }
        let n = self.n_steps();
        if self.series.iter().any(|s| s.len() != n) {
            return Err(Error::invalid("all series must have the same length"));
        }
        self.plan().validate()
    }

    pub fn plan(&self) -> ScanPlan<T> {
        ScanPlan {
            step_size: self.step_size,
            n_steps: self.n_steps(),
            direction: self.direction,
            start_offset: self.start_offset,
        }
    }

    pub fn series_of(&self, pixel: Pixel) -> Option<&[T]> {
        self.pixels.iter().position(|&p| p == pixel).map(|i| self.series[i].as_slice())
    }

    /// Same scan restricted to `pixels` (in that order).
    pub fn select(&self, pixels: &[Pixel]) -> Result<Self> {
        let series = pixels
            .iter()
            .map(|&p| {
                self.series_of(p)
                    .map(<[T]>::to_vec)
                    .ok_or_else(|| Error::invalid(format!("pixel {p} not in dataset")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { pixels: pixels.to_vec(), series, ..self.clone() })
    }

    /// Splits the scan into `n_bins` contiguous runs of equal length. Each
    /// part keeps the step metadata and starts at its own stage offset.
    pub fn bin_scan(&self, n_bins: usize) -> Result<Vec<Self>> {
        let n = self.n_steps();
        if n_bins == 0 || n % n_bins != 0 {
            return Err(Error::invalid(format!("{n} steps cannot be split into {n_bins} equal bins")));
        }
        let len = n / n_bins;
        Ok((0..n_bins)
            .map(|b| Self {
                start_offset: self.start_offset + T::from_usize_lossy(b * len) * self.step_size,
                series: self.series.iter().map(|s| s[b * len..(b + 1) * len].to_vec()).collect(),
                ..self.clone()
            })
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    step_size_um: f64,
    direction: [f64; 2],
    pixel_coords: Vec<(usize, usize)>,
    #[serde(default)]
    start_offset_um: f64,
    #[serde(default)]
    exposure_meta: ExposureMeta,
}

/// Sidecar path belonging to a CSV path: same stem, `.json` extension.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

impl<T: Real> ScanDataset<T> {
    /// Writes `csv` and its sidecar.
    pub fn write(&self, csv: &Path) -> Result<()> {
        self.validate()?;
        let mut w = csv::Writer::from_path(csv).map_err(|e| csv_error(csv, e))?;
        let header: Vec<String> = self.pixels.iter().map(|p| format!("r{}_c{}", p.row, p.col)).collect();
        w.write_record(&header).map_err(|e| csv_error(csv, e))?;
        for m in 0..self.n_steps() {
            w.write_record(self.series.iter().map(|s| s[m].f64().to_string()))
                .map_err(|e| csv_error(csv, e))?;
        }
        w.flush().map_err(|e| Error::io(csv, e))?;

        let side = Sidecar {
            step_size_um: self.step_size.f64(),
            direction: [self.direction.x.f64(), self.direction.z.f64()],
            pixel_coords: self.pixels.iter().map(|p| (p.row, p.col)).collect(),
            start_offset_um: self.start_offset.f64(),
            exposure_meta: self.exposure.clone(),
        };
        let path = sidecar_path(csv);
        let json = serde_json::to_string_pretty(&side).map_err(|e| Error::parse(&path, e))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads `csv` and its sidecar.
    pub fn read(csv: &Path) -> Result<Self> {
        let path = sidecar_path(csv);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;

        let mut r = csv::Reader::from_path(csv).map_err(|e| csv_error(csv, e))?;
        let n_cols = r.headers().map_err(|e| csv_error(csv, e))?.len();
        if n_cols != side.pixel_coords.len() {
            return Err(Error::parse(
                csv,
                format!("{n_cols} columns but {} pixel coordinates in the sidecar", side.pixel_coords.len()),
            ));
        }
        let mut series = vec![Vec::new(); n_cols];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(csv, e))?;
            for (i, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(csv, format!("row {}: bad number {field:?}", line + 2)))?;
                series[i].push(T::lit(v));
            }
        }
        let ds = Self {
            step_size: T::lit(side.step_size_um),
            direction: MaskShift { x: T::lit(side.direction[0]), z: T::lit(side.direction[1]) },
            start_offset: T::lit(side.start_offset_um),
            pixels: side.pixel_coords.into_iter().map(|(row, col)| Pixel { row, col }).collect(),
            series,
            exposure: side.exposure_meta,
        };
        ds.validate().map_err(|e| Error::parse(csv, e))?;
        Ok(ds)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        }
    } else {
        Error::parse(path, e)
    }
}
