//! Command implementations. Each returns the exit code on success paths
//! that still report something (non-convergence), or an error.

use std::fs;
use std::path::{Path, PathBuf};

use codedfocus::autofocus::{coordinate_descent, select_pixels, sweep as run_sweep, sweep_values, FocusProblem};
use codedfocus::io::{read_pose, trace_to_json_lines, write_json, PoseFile, SignalFile};
use codedfocus::recon::{fwhm, median_position, sum_profiles};
use codedfocus::simulator::{simulate_scan, Exposure, Noise};
use codedfocus::{Dataset, Error, Pixel, Pose, Problem, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::{exit, AutofocusArgs, Common, DataArgs, ReconstructArgs, SimulateArgs, SweepArgs};

/// File name of simulated scans inside the output directory.
pub const SCAN_FILE: &str = "scan.csv";

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn simulate(args: &SimulateArgs) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.common.config)?;
    let sample = cfg.sample(args.sample.as_deref())?;
    let mask = cfg.mask()?;
    let pose = cfg.simulation.pose.to_pose()?;
    let noise = if args.noiseless || !cfg.simulation.noise {
        Noise::None
    } else {
        Noise::Poisson { seed: args.seed.unwrap_or(cfg.simulation.seed) }
    };
    let exposure = Exposure { background: cfg.simulation.background, noise, ..Exposure::default() };
    let mut ds = simulate_scan(&sample, &mask, &pose, &cfg.instrument(), &cfg.plan(), &exposure)?;
    ds.exposure.source = Some("simulation".into());

    let dir = out_dir(&args.common, &cfg)?;
    let csv = dir.join(SCAN_FILE);
    ds.write(&csv)?;
    write_json(&dir.join("true_pose.json"), &PoseFile::from(&pose))?;
    println!("wrote {} ({} steps x {} pixels)", csv.display(), ds.n_steps(), ds.pixels.len());
    Ok(exit::OK)
}

fn load_dataset(data: &DataArgs, cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = data
        .dataset
        .clone()
        .or_else(|| cfg.paths.dataset.clone())
        .ok_or_else(|| Error::invalid("no dataset given (--dataset or paths.dataset)"))?;
    Dataset::read(&path)
}

/// Pixels passing the SNR cut, restricted to the configured list if any.
fn usable_pixels(ds: &Dataset, data: &DataArgs, cfg: &ExperimentConfig) -> Result<Vec<Pixel>> {
    let snr_min = data.snr_min.unwrap_or(cfg.snr_min);
    let mut pixels: Vec<Pixel> = select_pixels(ds, snr_min)?.into_iter().map(|(p, _)| p).collect();
    if !cfg.pixels.is_empty() {
        pixels.retain(|p| cfg.pixels.contains(p));
    }
    if pixels.is_empty() {
        return Err(Error::NoPixels);
    }
    Ok(pixels)
}

fn build_problem(data: &DataArgs, cfg: &ExperimentConfig) -> Result<Problem> {
    let ds = load_dataset(data, cfg)?;
    let pixels = usable_pixels(&ds, data, cfg)?;
    let bins = ds.bin_scan(data.bins.unwrap_or(cfg.bins))?;
    let mut problem = FocusProblem::new(bins, pixels, cfg.mask()?, cfg.instrument())?;
    problem.recon = cfg.recon_config();
    problem.tol_rot = cfg.tolerances.rotation_deg;
    problem.tol_trans = cfg.tolerances.translation_um;
    problem.max_cycles = cfg.tolerances.max_cycles;
    problem.cost_mode = cfg.cost_mode();
    problem.sample_thickness = cfg.recon.sample_thickness_um;
    Ok(problem)
}

pub fn autofocus(args: &AutofocusArgs) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.common.config)?;
    let mut problem = build_problem(&args.data, &cfg)?;
    let init = cfg.initial_pose()?;
    problem.bounds = Some(cfg.bounds(&init));
    let dir = out_dir(&args.common, &cfg)?;
    let keys = problem.entry_keys();

    let (trace, failure) = match coordinate_descent(&problem, init) {
        Ok(t) => (t, None),
        Err(f) => (f.trace, Some(f.error)),
    };
    write_text(&dir.join("trace.jsonl"), &trace_to_json_lines(&trace, &keys))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let pose = trace.final_pose();
    write_json(&dir.join("pose.json"), &PoseFile::from(&pose))?;
    println!(
        "cost {:.6} after {} cycles ({} evaluations); positions mean {:.3} um, std {:.3} um",
        trace.final_cost(),
        trace.cycles.len() - 1,
        trace.evaluations,
        trace.mean,
        trace.std
    );
    if trace.converged {
        Ok(exit::OK)
    } else {
        eprintln!("autofocus did not converge within {} cycles; best pose written", problem.max_cycles);
        Ok(exit::NOT_CONVERGED)
    }
}

pub fn sweep(args: &SweepArgs) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.common.config)?;
    if args.points == 0 {
        return Err(Error::invalid("--points must be positive"));
    }
    let base = match &args.pose {
        Some(p) => read_pose(p)?,
        None => cfg.initial_pose()?,
    };
    let problem = build_problem(&args.data, &cfg)?;
    let values = sweep_values(args.range.0, args.range.1, args.points);
    let points = run_sweep(&problem, &base, args.coordinate, &values)?;

    let dir = out_dir(&args.common, &cfg)?;
    let path = dir.join(format!("sweep_{}.csv", args.coordinate));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    let io = |e: csv::Error| Error::parse(&path, e);
    w.write_record(["value", "data_fidelity", "signal_fidelity"]).map_err(io)?;
    for p in &points {
        w.write_record([p.value.to_string(), p.data_fidelity.to_string(), p.signal_fidelity.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("wrote {} ({} points)", path.display(), points.len());
    Ok(exit::OK)
}

#[derive(Serialize)]
struct PixelReport {
    bin: usize,
    pixel: Pixel,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_um: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset_um: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ReconstructReport {
    pose: PoseFile,
    fwhm_um: Option<f64>,
    summed_median_um: Option<f64>,
    recovered: usize,
    failed: usize,
    pixels: Vec<PixelReport>,
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<i32> {
    let cfg = ExperimentConfig::load(&args.common.config)?;
    let pose: Pose = read_pose(&args.pose)?;
    let ds = load_dataset(&args.data, &cfg)?;
    let pixels = usable_pixels(&ds, &args.data, &cfg)?;
    let bins = ds.bin_scan(args.data.bins.unwrap_or(cfg.bins))?;
    let step = bins[0].step_size;
    let n_bins = bins.len();
    let mut problem = FocusProblem::new(bins, pixels.clone(), cfg.mask()?, cfg.instrument())?;
    problem.recon = cfg.recon_config();
    problem.sample_thickness = cfg.recon.sample_thickness_um;

    let dir = out_dir(&args.common, &cfg)?;
    let signal_dir = dir.join("signals");
    fs::create_dir_all(&signal_dir).map_err(|e| Error::io(&signal_dir, e))?;

    let keys = problem.entry_keys();
    let mut reports = Vec::new();
    let mut signals = Vec::new();
    for ((bin, pixel), fit) in keys.iter().copied().zip(problem.recover_all(&pose)) {
        let mut report = PixelReport { bin, pixel, median_um: None, offset_um: None, residual: None, error: None };
        match fit {
            Ok(s) => {
                let name = format!("b{bin}_r{}_c{}.json", pixel.row, pixel.col);
                write_json(&signal_dir.join(name), &SignalFile::from(&s))?;
                report.median_um = median_position(&s.signal, &s.depth_axis).ok();
                report.offset_um = Some(s.offset_um);
                report.residual = Some(s.residual);
                signals.push(s);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        reports.push(report);
    }
    for bin in 0..n_bins {
        for &pixel in &pixels {
            if !keys.contains(&(bin, pixel)) {
                reports.push(PixelReport {
                    bin,
                    pixel,
                    median_um: None,
                    offset_um: None,
                    residual: None,
                    error: Some("degenerate modulation contrast".into()),
                });
            }
        }
    }
    let recovered = reports.iter().filter(|r| r.error.is_none()).count();
    if recovered == 0 {
        return Err(Error::NoSignal("no pixel could be reconstructed".into()));
    }

    let (axis, profile) = sum_profiles(&signals, step)?;
    let path = dir.join("summed_profile.csv");
    let mut text = String::from("depth_um,signal\n");
    for (z, v) in axis.iter().zip(&profile) {
        text += &format!("{z},{v}\n");
    }
    write_text(&path, &text)?;

    let report = ReconstructReport {
        pose: PoseFile::from(&pose),
        fwhm_um: fwhm(&profile, &axis).ok(),
        summed_median_um: median_position(&profile, &axis).ok(),
        recovered,
        failed: reports.len() - recovered,
        pixels: reports,
    };
    write_json(&dir.join("report.json"), &report)?;
    match report.fwhm_um {
        Some(w) => println!("summed profile FWHM {w:.2} um from {recovered} signals"),
        None => println!("summed profile has no peak; {recovered} signals"),
    }
    Ok(exit::OK)
}
