//! JSON wire formats for masks, poses, recovered signals and focus traces.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autofocus::{CycleRecord, FocusTrace};
use crate::error::{Error, Result};
use crate::geometry::{Coordinate, Pixel, Pose6Dof};
use crate::mask::ApertureMask;
use crate::recon::DepthSignal;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    pub bits: Vec<u8>,
    pub bar_width_um: f64,
    pub thickness_um: f64,
    pub t_one: f64,
    pub t_zero: f64,
    #[serde(default)]
    pub cyclic: bool,
}

impl<T: Real> From<&ApertureMask<T>> for MaskFile {
    fn from(m: &ApertureMask<T>) -> Self {
        Self {
            order: m.order,
            bits: m.bits.clone(),
            bar_width_um: m.bar_width.f64(),
            thickness_um: m.thickness.f64(),
            t_one: m.transmission_one.f64(),
            t_zero: m.transmission_zero.f64(),
            cyclic: m.cyclic,
        }
    }
}

impl MaskFile {
    pub fn to_mask<T: Real>(&self) -> Result<ApertureMask<T>> {
        let mask = ApertureMask {
            bits: self.bits.clone(),
            bar_width: T::lit(self.bar_width_um),
            thickness: T::lit(self.thickness_um),
            transmission_one: T::lit(self.t_one),
            transmission_zero: T::lit(self.t_zero),
            cyclic: self.cyclic,
            order: self.order,
        };
        mask.validate()?;
        Ok(mask)
    }
}

/// Missing coordinates default to zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseFile {
    pub surge_um: f64,
    pub sway_um: f64,
    pub heave_um: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl<T: Real> From<&Pose6Dof<T>> for PoseFile {
    fn from(p: &Pose6Dof<T>) -> Self {
        Self {
            surge_um: p.surge.f64(),
            sway_um: p.sway.f64(),
            heave_um: p.heave.f64(),
            yaw_deg: p.yaw.f64(),
            pitch_deg: p.pitch.f64(),
            roll_deg: p.roll.f64(),
        }
    }
}

impl PoseFile {
    pub fn to_pose<T: Real>(&self) -> Result<Pose6Dof<T>> {
        let pose = Pose6Dof {
            surge: T::lit(self.surge_um),
            sway: T::lit(self.sway_um),
            heave: T::lit(self.heave_um),
            yaw: T::lit(self.yaw_deg),
            pitch: T::lit(self.pitch_deg),
            roll: T::lit(self.roll_deg),
        };
        if !pose.is_finite() {
            return Err(Error::invalid("pose values must be finite"));
        }
        Ok(pose.normalized())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalFile {
    pub pixel: Pixel,
    pub offset_um: f64,
    pub residual: f64,
    pub depth_um: Vec<f64>,
    pub signal: Vec<f64>,
}

impl<T: Real> From<&DepthSignal<T>> for SignalFile {
    fn from(s: &DepthSignal<T>) -> Self {
        Self {
            pixel: s.pixel,
            offset_um: s.offset_um.f64(),
            residual: s.residual.f64(),
            depth_um: s.depth_axis.iter().map(|v| v.f64()).collect(),
            signal: s.signal.iter().map(|v| v.f64()).collect(),
        }
    }
}

/// Per-coordinate values keyed by coordinate name.
type CoordinateMap = std::collections::BTreeMap<String, f64>;

fn coordinate_map<T: Real>(values: &[(Coordinate, T)]) -> CoordinateMap {
    values.iter().map(|(c, v)| (c.name().to_string(), v.f64())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleLine {
    pub cycle: usize,
    pub pose: PoseFile,
    pub cost: f64,
    pub changes: CoordinateMap,
    pub relative_changes: CoordinateMap,
}

impl<T: Real> From<&CycleRecord<T>> for CycleLine {
    fn from(c: &CycleRecord<T>) -> Self {
        Self {
            cycle: c.cycle,
            pose: PoseFile::from(&c.pose),
            cost: c.cost.f64(),
            changes: coordinate_map(&c.changes),
            relative_changes: coordinate_map(&c.relative_changes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub summary: bool,
    pub converged: bool,
    pub cycles: usize,
    pub evaluations: usize,
    pub final_pose: PoseFile,
    pub final_cost: f64,
    /// Median depth per (bin, pixel) entry, μm.
    pub positions_um: Vec<f64>,
    pub entries: Vec<(usize, Pixel)>,
    pub mean_um: f64,
    pub std_um: f64,
}

/// Trace as JSON lines: one record per cycle, then a summary record.
pub fn trace_to_json_lines<T: Real>(trace: &FocusTrace<T>, entries: &[(usize, Pixel)]) -> String {
    let mut out = String::new();
    for c in &trace.cycles {
        out += &serde_json::to_string(&CycleLine::from(c)).expect("serializable");
        out.push('\n');
    }
    let summary = SummaryLine {
        summary: true,
        converged: trace.converged,
        cycles: trace.cycles.len().saturating_sub(1),
        evaluations: trace.evaluations,
        final_pose: PoseFile::from(&trace.final_pose()),
        final_cost: trace.final_cost().f64(),
        positions_um: trace.positions.iter().map(|v| v.f64()).collect(),
        entries: entries.to_vec(),
        mean_um: trace.mean.f64(),
        std_um: trace.std.f64(),
    };
    out += &serde_json::to_string(&summary).expect("serializable");
    out.push('\n');
    out
}

pub fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<ApertureMask<f64>> {
    read_json::<MaskFile>(path)?.to_mask().map_err(|e| Error::parse(path, e))
}

pub fn read_pose(path: &Path) -> Result<Pose6Dof<f64>> {
    read_json::<PoseFile>(path)?.to_pose().map_err(|e| Error::parse(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let m = ApertureMask::<f64>::de_bruijn(5).unwrap().with_cyclic(true);
        let f = MaskFile::from(&m);
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"bar_width_um\":1.0"));
        let back: MaskFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_mask::<f64>().unwrap(), m);
    }

    #[test]
    fn mask_without_order_or_cyclic_parses() {
        let f: MaskFile = serde_json::from_str(
            r#"{"bits":[0,1,1],"bar_width_um":2.0,"thickness_um":0,"t_one":0.1,"t_zero":0.9}"#,
        )
        .unwrap();
        let m = f.to_mask::<f64>().unwrap();
        assert!(!m.cyclic);
        assert_eq!(m.order, None);
    }

    #[test]
    fn invalid_mask_file_rejected() {
        let f: MaskFile =
            serde_json::from_str(r#"{"bits":[0,3],"bar_width_um":1,"thickness_um":0,"t_one":0,"t_zero":1}"#).unwrap();
        assert!(f.to_mask::<f64>().is_err());
    }

    #[test]
    fn pose_field_names() {
        let p = Pose6Dof { surge: 1.0, sway: 2.0, heave: 3.0, yaw: 4.0, pitch: 5.0, roll: 6.0 };
        let v = serde_json::to_value(PoseFile::from(&p)).unwrap();
        assert_eq!(v["surge_um"], 1.0);
        assert_eq!(v["roll_deg"], 6.0);
        let back: PoseFile = serde_json::from_value(v).unwrap();
        assert_eq!(back.to_pose::<f64>().unwrap(), p);
    }

    #[test]
    fn partial_pose_defaults_to_zero_and_rejects_typos() {
        let p: PoseFile = serde_json::from_str(r#"{"pitch_deg": -0.5}"#).unwrap();
        assert_eq!(p, PoseFile { pitch_deg: -0.5, ..PoseFile::default() });
        assert!(serde_json::from_str::<PoseFile>(r#"{"pich_deg": 1}"#).is_err());
    }

    #[test]
    fn signal_field_names() {
        let s = DepthSignal {
            pixel: Pixel::new(3, 4),
            offset_um: 12.5,
            window_start: 0,
            signal: vec![0.0, 1.0],
            depth_axis: vec![0.5, 1.5],
            residual: 0.25,
        };
        let v = serde_json::to_value(SignalFile::from(&s)).unwrap();
        assert_eq!(v["pixel"]["row"], 3);
        assert_eq!(v["depth_um"][1], 1.5);
        assert_eq!(v["offset_um"], 12.5);
    }
}
