use codedfocus::autofocus::{coordinate_descent, focus_cost, FocusProblem};
use codedfocus::dataset::ScanDataset;
use codedfocus::encoding::{normalize_measurements, ScanPlan};
use codedfocus::geometry::{Instrument, Pose6Dof};
use codedfocus::linalg::dot;
use codedfocus::nnls::nnls_solve;
use codedfocus::linalg::Matrix;
use codedfocus::recon::{median_position, PixelSystem, ReconConfig};
use codedfocus::simulator::{
    recover_differential, simulate_differential_aperture, simulate_scan, Exposure, SampleModel, Scatterer, Wire,
};
use codedfocus::{Coordinate, Mask, Pixel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn order8_system(steps: usize, window: usize) -> PixelSystem<f64> {
    let mask = Mask::de_bruijn(8).unwrap().with_thickness(0.0).with_cyclic(true);
    let plan = ScanPlan::new(1.0, steps);
    let cfg = ReconConfig { window, depth_range: None };
    PixelSystem::build(&mask, &Pose6Dof::identity(), &Instrument::default(), Pixel::new(1024, 1024), &plan, &cfg)
        .unwrap()
}

fn synthesize(sys: &PixelSystem<f64>, start: usize, s: &[f64]) -> Vec<f64> {
    let m = sys.column(0).len();
    (0..m).map(|i| s.iter().enumerate().map(|(j, &v)| v * sys.column(start + j)[i]).sum()).collect()
}

#[test]
fn noiseless_round_trip_is_exact() {
    let window = 4;
    let sys = order8_system(32, window);
    let truth = [0.3, 1.0, 0.0, 0.6];
    for start in [0, 17, 101, sys.n_bins() - window] {
        let d = synthesize(&sys, start, &truth);
        let got = sys.recover(&d, window, None).unwrap();
        assert_eq!(got.window_start, sys.first_bin + start as i64);
        assert_eq!(got.offset_um, sys.offset_of(start));
        for (a, b) in got.signal.iter().zip(truth) {
            assert!((a - b).abs() <= 1e-6, "{:?}", got.signal);
        }
        assert!(got.residual < 1e-9);
    }
}

#[test]
fn zero_data_gives_zero_signal_at_the_first_offset() {
    let sys = order8_system(32, 4);
    let got = sys.recover(&[0.0; 32], 4, None).unwrap();
    assert_eq!(got.signal, vec![0.0; 4]);
    assert_eq!(got.residual, 0.0);
    assert_eq!(got.window_start, sys.first_bin);
}

#[test]
fn one_percent_noise_keeps_the_offset() {
    let window = 4;
    let sys = order8_system(32, window);
    let truth = [0.3, 1.0, 0.2, 0.6];
    let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for start in [5, 60, 190] {
        let clean = synthesize(&sys, start, &truth);
        let scale = clean.iter().map(|v| v.abs()).fold(0.0, f64::max);
        // Box-Muller normal deviates.
        let d: Vec<f64> = clean
            .iter()
            .map(|&v| {
                let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                v + 0.01 * scale * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let got = sys.recover(&d, window, None).unwrap();
        assert_eq!(got.window_start, sys.first_bin + start as i64);
        let err = got.signal.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(err / norm <= 0.05, "relative error {}", err / norm);
    }
}

/// Branch and bound must return the same window as solving every window.
#[test]
fn offset_search_matches_exhaustive_enumeration() {
    let window = 3;
    let sys = order8_system(24, window);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let d: Vec<f64> = (0..24).map(|_| rng.gen_range(-0.2..1.2)).collect();
        let mut best = (f64::INFINITY, 0);
        for w in 0..=sys.n_bins() - window {
            let a = Matrix::from_fn(24, window, |i, j| sys.column(w + j)[i]);
            let s = nnls_solve(&a, &d).unwrap();
            let r: Vec<f64> = a.mul_vec(&s).iter().zip(&d).map(|(p, q)| p - q).collect();
            let rss = dot(&r, &r);
            if rss < best.0 - 1e-9 {
                best = (rss, w);
            }
        }
        let got = sys.recover(&d, window, None).unwrap();
        assert!((got.residual * got.residual - best.0).abs() <= 1e-8 * (1.0 + best.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recovered_signal_is_nonnegative_and_no_worse_than_zero(
        d in proptest::collection::vec(-1.0f64..2.0, 20),
    ) {
        let sys = order8_system(20, 3);
        let got = sys.recover(&d, 3, None).unwrap();
        prop_assert!(got.signal.iter().all(|&v| v >= 0.0));
        prop_assert!(got.residual <= dot(&d, &d).sqrt() + 1e-12);
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Correlation of the recovered profile with the truth, and the minimum raw count.
fn profile_recovery(pixel: Pixel, depths: &[f64], profile: &[f64], exact_scaling: bool) -> (f64, f64) {
    let inst = Instrument::<f64>::default();
    let mask = Mask::de_bruijn(10).unwrap();
    let pose = Pose6Dof { surge: 12.0, heave: -8.0, pitch: 0.4, ..Pose6Dof::identity() };
    let plan = ScanPlan::new(1.0, 400).with_start(-200.0);
    let window = 16;
    let cfg = ReconConfig { window, depth_range: None };
    let peak = 30_000.0;
    let sample = SampleModel {
        scatterers: vec![Scatterer { pixel, depth_um: depths.to_vec(), profile: profile.to_vec(), peak }],
    };
    let ds = simulate_scan(&sample, &mask, &pose, &inst, &plan, &Exposure::default()).unwrap();
    let d = if exact_scaling {
        ds.series[0].iter().map(|v| (v - 10.0) / peak).collect()
    } else {
        normalize_measurements(&ds.series[0]).unwrap()
    };
    let sys = PixelSystem::build(&mask, &pose, &inst, pixel, &plan, &cfg).unwrap();
    let got = sys.recover(&d, window, None).unwrap();
    let on_truth: Vec<f64> = depths
        .iter()
        .map(|z| got.depth_axis.iter().position(|a| (a - z).abs() < 1e-9).map_or(0.0, |i| got.signal[i]))
        .collect();
    let floor = ds.series[0].iter().copied().fold(f64::INFINITY, f64::min);
    (correlation(&on_truth, profile), floor)
}

const PROFILE_PIXELS: [Pixel; 3] = [Pixel::new(500, 700), Pixel::new(1024, 1024), Pixel::new(1600, 1400)];

/// Narrow sources seen at moderate obliquity leave fully blocked steps in the
/// scan, so the count extremes pin the affine scaling.
#[test]
fn narrow_profile_survives_count_normalization() {
    let depths: Vec<f64> = (0..6).map(|k| k as f64 - 2.5).collect();
    let profile = [0.0, 0.0, 0.5, 1.0, 0.4, 0.0];
    for pixel in [Pixel::new(500, 700), Pixel::new(1300, 1200), Pixel::new(1400, 800), Pixel::new(800, 1500)] {
        let (r, floor) = profile_recovery(pixel, &depths, &profile, false);
        assert_eq!(floor, 10.0, "pixel {pixel} never fully blocked");
        assert!(r >= 0.999, "pixel {pixel}: correlation {r}");
    }
}

/// A wide source never sees a fully blocked step, so only the known
/// background and peak give the right scaling.
#[test]
fn wide_profile_recovers_its_shape_under_exact_scaling() {
    let depths: Vec<f64> = (0..16).map(|k| k as f64 - 7.5).collect();
    let profile: Vec<f64> = depths.iter().map(|z| (-(z - 1.0) * (z - 1.0) / 8.0).exp()).collect();
    for pixel in PROFILE_PIXELS {
        let (r, _) = profile_recovery(pixel, &depths, &profile, true);
        assert!(r >= 0.999, "pixel {pixel}: correlation {r}");
    }
}

fn wire_setup() -> (Instrument<f64>, Wire<f64>, ScanPlan<f64>) {
    (Instrument::default(), Wire { width: 20.0 }, ScanPlan::new(1.0, 600).with_start(-300.0))
}

#[test]
fn wire_scan_of_a_point_source_recovers_a_delta() {
    let (inst, wire, plan) = wire_setup();
    let pixels = [Pixel::new(800, 1024), Pixel::new(1300, 600)];
    for depth in [-20.5, 3.5, 41.5] {
        let sample = SampleModel::delta(&pixels, depth, 5000.0);
        let ds = simulate_differential_aperture(&sample, wire, &inst, &plan, &Exposure::default()).unwrap();
        for p in recover_differential(&ds, wire, &inst, (-100.0, 100.0)).unwrap() {
            let total: f64 = p.signal.iter().sum();
            let at = p.depth_axis.iter().position(|&z| z == depth).unwrap();
            assert!((p.signal[at] - total).abs() < 1e-9 * total, "pixel {}: {:?}", p.pixel, p.signal);
            assert!((total - 5000.0).abs() < 1e-6);
        }
    }
}

#[test]
fn wire_scan_of_a_slab_recovers_the_boxcar() {
    let (inst, wire, plan) = wire_setup();
    let pixels = [Pixel::new(900, 1100)];
    let sample = SampleModel::calibration(&pixels, 10.0, 1.0, 5000.0).unwrap();
    let ds = simulate_differential_aperture(&sample, wire, &inst, &plan, &Exposure::default()).unwrap();
    let p = &recover_differential(&ds, wire, &inst, (-50.0, 50.0)).unwrap()[0];
    for (&z, &v) in p.depth_axis.iter().zip(&p.signal) {
        let inside = z.abs() < 5.0;
        let edge = (z.abs() - 5.0).abs() <= 1.0;
        if !edge {
            let want = if inside { 500.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-6, "depth {z}: {v}");
        }
    }
    let median = median_position(&p.signal, &p.depth_axis).unwrap();
    assert!(median.abs() <= 1.0);
}

fn focus_problem(sample: &SampleModel<f64>, pose: &Pose6Dof<f64>) -> FocusProblem<f64> {
    let inst = Instrument::default();
    let mask = Mask::de_bruijn(10).unwrap();
    let plan = ScanPlan::new(1.0, 400).with_start(-200.0);
    let ds: ScanDataset<f64> = simulate_scan(sample, &mask, pose, &inst, &plan, &Exposure::default()).unwrap();
    let mut problem = FocusProblem::new(vec![ds], sample.pixels(), mask, inst).unwrap();
    problem.recon.window = 12;
    problem
}

const FOCUS_PIXELS: [Pixel; 4] =
    [Pixel::new(300, 500), Pixel::new(700, 1500), Pixel::new(1300, 900), Pixel::new(1750, 1300)];

#[test]
fn point_source_at_the_origin_is_in_focus_at_the_true_pose() {
    let truth = Pose6Dof { surge: 20.0, heave: 10.0, pitch: -0.7, yaw: 0.4, ..Pose6Dof::identity() };
    let sample = SampleModel::delta(&FOCUS_PIXELS, 0.0, 20_000.0);
    let problem = focus_problem(&sample, &truth);
    let at_truth = focus_cost(&truth, &problem).unwrap();
    assert!(at_truth <= 0.25, "cost {at_truth}");
    let off = focus_cost(&truth.with(Coordinate::Surge, 70.0), &problem).unwrap();
    assert!(off > at_truth);
}

#[test]
fn descent_from_the_truth_stays_in_focus() {
    let truth = Pose6Dof { surge: 20.0, heave: 10.0, pitch: -0.7, ..Pose6Dof::identity() };
    let sample = SampleModel::calibration(&FOCUS_PIXELS, 10.0, 1.0, 20_000.0).unwrap();
    let mut problem = focus_problem(&sample, &truth);
    problem.sample_thickness = Some(10.0);
    problem.max_cycles = 3;
    let trace = coordinate_descent(&problem, truth).unwrap();
    assert!(trace.is_monotone());
    assert!(trace.final_cost() <= trace.cycles[0].cost);
    assert!(trace.std <= 1.0);
}

#[test]
fn surge_settles_in_the_first_cycle() {
    let truth = Pose6Dof { surge: 20.0, heave: 10.0, pitch: -0.7, ..Pose6Dof::identity() };
    let sample = SampleModel::calibration(&FOCUS_PIXELS, 10.0, 1.0, 20_000.0).unwrap();
    let mut problem = focus_problem(&sample, &truth);
    problem.sample_thickness = Some(10.0);
    problem.max_cycles = 2;
    let init = truth.with(Coordinate::Surge, 120.0);
    let trace = coordinate_descent(&problem, init).unwrap();
    assert!(trace.is_monotone());
    // Surge carries most of the focus error, so the first cycle removes
    // nearly all of it; later cycles only trade small amounts against the
    // weakly observable rotations.
    let start_error = (init.surge - truth.surge).abs();
    let first_move = (trace.cycles[1].pose.surge - init.surge).abs();
    let after_first = (trace.cycles[1].pose.surge - truth.surge).abs();
    assert!(after_first <= 0.05 * start_error, "surge error {after_first} after cycle 1");
    let moved_later = (trace.cycles[2].pose.surge - trace.cycles[1].pose.surge).abs();
    assert!(moved_later <= 0.1 * first_move, "surge moved {moved_later} in cycle 2");
}
