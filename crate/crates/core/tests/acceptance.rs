//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use echoarray::acquisition::{
    capture_snapshots, decimation_latency, pdm_decimate, pdm_modulate, run_pings,
    synthesize_capture, CaptureParams, PingSchedule, ReflectorTarget,
};
use echoarray::beamforming::{
    bartlett_power, doa_peaks, mvdr_power, power_map, psf, Beamformer, GridSpec, MvdrSolver,
    PsfMetrics, DEFAULT_SAMPLE_LOADING,
};
use echoarray::framing::{
    encode_frame, encode_frame_into, parse_stream, stream_throughput_bench, Frame, StreamEvent,
    StreamParser,
};
use echoarray::geometry::{steering_vector, ArrayGeometry, Direction};
use echoarray::signal_model::{covariance_analytic, sample_covariance, Scene};
use echoarray::waveform::{generate_chirp, ChirpSpec, PcmTrace, Window};
use echoarray::{CARRIER_HZ, PCM_RATE_HZ, PDM_RATE_HZ, SPEED_OF_SOUND};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex64, FftPlanner};

// Pinned tolerances.
const PSF_SIGNAL_POWER: f64 = 1.0;
const PSF_NOISE_POWER: f64 = 0.01;
const PSF_PEAK_CELLS: f64 = 1.0;
const PSF_RUNTIME: Duration = Duration::from_secs(30);
const CLOSED_FORM_REL_TOL: f64 = 1e-9;
const DOMINANCE_SLACK: f64 = 1e-12;
const DISTORTIONLESS_TOL: f64 = 1e-9;
const RANGE_TRUE_M: f64 = 1.0;
const RANGE_TOL_M: f64 = 2e-3;
const RANGE_PINGS: usize = 30;
const RANGE_SNR_DB: f64 = 20.0;
const RANGE_DELAY_S: f64 = 5.831e-3;
const RANGE_DELAY_TOL_SAMPLES: f64 = 1.0;
const RANGE_RUNTIME: Duration = Duration::from_secs(10);
const ROUND_TRIP_MIN_CORRELATION: f64 = 0.99;
const ROUND_TRIP_MIN_SNR_DB: f64 = 60.0;
const FRAMING_RANDOM_FRAMES: usize = 1000;
const FRAMING_PARTITIONS: usize = 200;
const THROUGHPUT_MIN_BPS: f64 = 16.0 * PDM_RATE_HZ / 8.0;
const THROUGHPUT_DURATION: Duration = Duration::from_secs(1);
const E2E_SNAPSHOTS: usize = 834;
const E2E_PEAK_CELLS: f64 = 2.0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dir(az: f64, el: f64) -> Direction {
    Direction::new(az, el).unwrap()
}

fn within_cells(found: Direction, truth: Direction, cells: f64, step: f64) -> bool {
    (found.azimuth_deg() - truth.azimuth_deg()).abs() <= cells * step + 1e-9
        && (found.elevation_deg() - truth.elevation_deg()).abs() <= cells * step + 1e-9
}

const PLACEMENTS: [(f64, f64); 3] = [(0.0, 0.0), (30.0, 0.0), (-45.0, -15.0)];

fn psf_pair(
    source: Direction,
) -> (
    (echoarray::beamforming::PowerMap, PsfMetrics),
    (echoarray::beamforming::PowerMap, PsfMetrics),
) {
    let g = ArrayGeometry::default_sensor();
    let grid = GridSpec::default();
    let run = |bf| {
        psf(
            &g,
            source,
            PSF_SIGNAL_POWER,
            PSF_NOISE_POWER,
            bf,
            &grid,
            CARRIER_HZ,
            SPEED_OF_SOUND,
        )
        .unwrap()
    };
    (
        run(Beamformer::Bartlett),
        run(Beamformer::Mvdr { loading: 0.0 }),
    )
}

fn criterion_psf() -> Outcome {
    let start = Instant::now();
    let grid = GridSpec::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for (az, el) in PLACEMENTS {
        let s = dir(az, el);
        let ((_, b), (_, m)) = psf_pair(s);
        let peaks_ok = within_cells(b.peak_direction, s, PSF_PEAK_CELLS, grid.az_step)
            && within_cells(m.peak_direction, s, PSF_PEAK_CELLS, grid.az_step);
        let widths_ok = m.mainlobe_width_az_deg < b.mainlobe_width_az_deg
            && m.mainlobe_width_el_deg < b.mainlobe_width_el_deg;
        let sidelobe_ok = m.peak_sidelobe_db < b.peak_sidelobe_db;
        pass &= peaks_ok && widths_ok && sidelobe_ok;
        notes.push(format!(
            "({az},{el}): width az {:.2}/{:.2} el {:.2}/{:.2} deg, sidelobe {:.1}/{:.1} dB (mvdr/bartlett)",
            m.mainlobe_width_az_deg,
            b.mainlobe_width_az_deg,
            m.mainlobe_width_el_deg,
            b.mainlobe_width_el_deg,
            m.peak_sidelobe_db,
            b.peak_sidelobe_db
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < PSF_RUNTIME;
    notes.push(format!("{:.1} s", elapsed.as_secs_f64()));
    outcome(pass, notes.join("; "))
}

fn criterion_closed_form() -> Outcome {
    let g = ArrayGeometry::default_sensor();
    let (sd, sv) = (1.0, 0.1);
    let r = covariance_analytic(
        &g,
        &Scene::single(Direction::BORESIGHT, sd, sv).unwrap(),
        CARRIER_HZ,
        SPEED_OF_SOUND,
    )
    .unwrap();
    let d = steering_vector(&g, Direction::BORESIGHT, CARRIER_HZ, SPEED_OF_SOUND).unwrap();
    let expected = sd + sv / g.len() as f64;
    let got = mvdr_power(&r, &d, 0.0).unwrap();
    let rel = (got - expected).abs() / expected;
    outcome(
        rel <= CLOSED_FORM_REL_TOL,
        format!("mvdr {got:.12} vs {expected:.12}, rel err {rel:.2e}"),
    )
}

fn criterion_dominance() -> Outcome {
    let g = ArrayGeometry::default_sensor();
    let grid = GridSpec::default();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_dist: f64 = 0.0;
    let mut nodes = 0usize;
    for (az, el) in PLACEMENTS {
        let scene = Scene::single(dir(az, el), PSF_SIGNAL_POWER, PSF_NOISE_POWER).unwrap();
        let r = covariance_analytic(&g, &scene, CARRIER_HZ, SPEED_OF_SOUND).unwrap();
        let solver = MvdrSolver::new(&r, 0.0).unwrap();
        for e in grid.elevations() {
            for a in grid.azimuths() {
                let d = steering_vector(&g, dir(a, e), CARRIER_HZ, SPEED_OF_SOUND).unwrap();
                let pb = bartlett_power(&r, &d).unwrap();
                let pm = solver.power(&d);
                worst_gap = worst_gap.max(pm - pb);
                let w = solver.weights(&d);
                worst_dist = worst_dist.max((w.response(&d) - Complex64::new(1.0, 0.0)).norm());
                nodes += 1;
            }
        }
    }
    outcome(
        worst_gap <= DOMINANCE_SLACK && worst_dist <= DISTORTIONLESS_TOL,
        format!("{nodes} nodes, max(mvdr - bartlett) = {worst_gap:.3e}, max |w^H d - 1| = {worst_dist:.3e}"),
    )
}

fn criterion_range() -> Outcome {
    let start = Instant::now();
    let g = ArrayGeometry::default_sensor();
    let chirp = generate_chirp(&ChirpSpec::default(), Window::None).unwrap();
    let target = ReflectorTarget::new(Direction::BORESIGHT, RANGE_TRUE_M, 1.0).unwrap();
    let schedule = PingSchedule {
        ping_rate_hz: 10.0,
        duration_s: RANGE_PINGS as f64 / 10.0,
        snr_db: RANGE_SNR_DB,
        c_mps: SPEED_OF_SOUND,
        seed: 2024,
    };
    let pings = run_pings(&g, &target, &chirp, &schedule, |_| {}).unwrap();
    let expected_index = RANGE_DELAY_S * PCM_RATE_HZ;
    let worst_range = pings
        .iter()
        .map(|p| (p.estimate.range_m - RANGE_TRUE_M).abs())
        .fold(0.0, f64::max);
    let worst_index = pings
        .iter()
        .map(|p| (p.estimate.peak_index as f64 - expected_index).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        pings.len() == RANGE_PINGS
            && worst_range <= RANGE_TOL_M
            && worst_index <= RANGE_DELAY_TOL_SAMPLES
            && elapsed < RANGE_RUNTIME,
        format!(
            "{} pings, max range error {:.3} mm, max delay offset {:.2} samples from {:.1}, {:.1} s",
            pings.len(),
            worst_range * 1e3,
            worst_index,
            expected_index,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_round_trip() -> Outcome {
    const SEGMENT: usize = 7120; // 40 kHz lands on bin 1024 exactly
    const SETTLE: usize = 256;
    let lat = decimation_latency(16);
    let n = SETTLE + SEGMENT + lat + 64;
    let x: Vec<f64> = (0..n)
        .map(|k| 0.5 * (2.0 * PI * CARRIER_HZ * k as f64 / PCM_RATE_HZ).sin())
        .collect();
    let pdm = pdm_modulate(
        &PcmTrace::new(x.clone(), PCM_RATE_HZ).unwrap(),
        PDM_RATE_HZ,
        0,
        11,
    )
    .unwrap();
    let y = pdm_decimate(&pdm, 16).unwrap().into_samples();

    let xs = &x[SETTLE..SETTLE + SEGMENT];
    let ys = &y[SETTLE + lat..SETTLE + lat + SEGMENT];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(ys) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    let corr = sxy / (sxx * syy).sqrt();

    let mut spec: Vec<Complex64> = ys.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(SEGMENT)
        .process(&mut spec);
    let bin = (CARRIER_HZ * SEGMENT as f64 / PCM_RATE_HZ).round() as usize;
    let lo = (30e3 * SEGMENT as f64 / PCM_RATE_HZ).round() as usize;
    let hi = (50e3 * SEGMENT as f64 / PCM_RATE_HZ).round() as usize;
    let signal = spec[bin].norm_sqr();
    let noise: f64 = (lo..=hi)
        .filter(|&k| k != bin)
        .map(|k| spec[k].norm_sqr())
        .sum();
    let snr = 10.0 * (signal / noise).log10();
    outcome(
        corr >= ROUND_TRIP_MIN_CORRELATION && snr >= ROUND_TRIP_MIN_SNR_DB,
        format!("correlation {corr:.6}, in-band (30-50 kHz) SNR {snr:.1} dB"),
    )
}

fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let ch = rng.random_range(1..=16u8);
    let spc = 8 * rng.random_range(1..=64u32);
    let mut payload = vec![0u8; ch as usize * spc as usize / 8];
    rng.fill(payload.as_mut_slice());
    Frame::new(rng.random(), rng.random(), ch, spc, payload).unwrap()
}

fn frames_of(events: &[StreamEvent]) -> Vec<Frame> {
    events
        .iter()
        .filter_map(|e| match e {
            StreamEvent::Frame(f) => Some(f.clone()),
            _ => None,
        })
        .collect()
}

fn criterion_framing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();

    // identity
    let frames: Vec<Frame> = (0..FRAMING_RANDOM_FRAMES)
        .map(|_| random_frame(&mut rng))
        .collect();
    let identity = frames
        .iter()
        .all(|f| parse_stream(&encode_frame(f)).0 == vec![StreamEvent::Frame(f.clone())]);
    if !identity {
        failures.push("identity");
    }

    // chunking invariance over a stream with interleaved garbage
    let mut stream = Vec::new();
    for f in frames.iter().take(50) {
        encode_frame_into(f, &mut stream);
        let junk = rng.random_range(0..5);
        stream.extend((0..junk).map(|_| rng.random::<u8>()));
    }
    let whole = parse_stream(&stream);
    let chunking = (0..FRAMING_PARTITIONS).all(|_| {
        let mut p = StreamParser::new();
        let mut events = Vec::new();
        let mut at = 0;
        while at < stream.len() {
            let step = rng.random_range(1..=2048).min(stream.len() - at);
            events.extend(p.feed(&stream[at..at + step]));
            at += step;
        }
        events.extend(p.finish());
        (events, p.stats()) == whole
    });
    if !chunking {
        failures.push("chunking");
    }

    // corruption with exact loss accounting: 100 sequential frames, drop
    // frame 40 by CRC, splice 3 garbage bytes after frame 70
    let mut seq_stream = Vec::new();
    let mut boundaries = Vec::new();
    for s in 0..100u32 {
        let f = Frame::new(s, s as u64 * 4096, 16, 64, vec![(s as u8) ^ 0x3C; 128]).unwrap();
        boundaries.push(seq_stream.len());
        encode_frame_into(&f, &mut seq_stream);
        if s == 70 {
            seq_stream.extend([0x00, 0xA5, 0x5A]);
        }
    }
    let flen = 24 + 128 + 4;
    seq_stream[boundaries[40] + 24 + 77] ^= 0x04;
    let (events, stats) = parse_stream(&seq_stream);
    let got: Vec<u32> = frames_of(&events).iter().map(|f| f.sequence).collect();
    let expected: Vec<u32> = (0..100).filter(|&s| s != 40).collect();
    let recovery = got == expected
        && stats.frames_ok == 99
        && stats.frames_lost == 1
        && stats.crc_errors == 1
        && stats.resyncs == 2
        && stats.bytes_discarded == (flen + 3) as u64;
    if !recovery {
        failures.push("recovery");
    }

    // exhaustive single-bit detection on an 8-byte payload
    let f = Frame::new(9, 1234, 1, 64, (1..=8).collect()).unwrap();
    let clean = encode_frame(&f);
    let detected = (0..clean.len() * 8).all(|bit| {
        let mut b = clean.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        frames_of(&parse_stream(&b).0).is_empty()
    });
    if !detected {
        failures.push("crc");
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{FRAMING_RANDOM_FRAMES} round trips, {FRAMING_PARTITIONS} partitions, loss accounting {stats:?}, {} bit flips",
                clean.len() * 8
            )
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn criterion_throughput() -> Outcome {
    let report = stream_throughput_bench(4096, THROUGHPUT_DURATION).unwrap();
    let bps = report.bytes_per_second();
    outcome(
        bps >= THROUGHPUT_MIN_BPS && echoarray::aggregate_pdm_rate_bps() < echoarray::LINK_BUDGET_BPS,
        format!(
            "{:.1} MB/s ({:.0} Mb/s) vs required {:.1} MB/s; aggregate {:.1} Mb/s < link {:.0} Mb/s",
            bps / 1e6,
            report.megabits_per_second(),
            THROUGHPUT_MIN_BPS / 1e6,
            echoarray::aggregate_pdm_rate_bps() / 1e6,
            echoarray::LINK_BUDGET_BPS / 1e6
        ),
    )
}

fn criterion_end_to_end() -> Outcome {
    let g = ArrayGeometry::default_sensor();
    let chirp = generate_chirp(&ChirpSpec::default(), Window::None).unwrap();
    let target = ReflectorTarget::new(Direction::BORESIGHT, 1.0, 1.0).unwrap();
    let params = CaptureParams::new(4096, 20.0, 8);
    let capture = synthesize_capture(&g, &target, &chirp, &params).unwrap();
    let gate_start = (2.0 * 1.0 / SPEED_OF_SOUND * PCM_RATE_HZ).round() as usize;
    let block =
        capture_snapshots(&capture, CARRIER_HZ, 8_000.0, gate_start, E2E_SNAPSHOTS).unwrap();
    let r = sample_covariance(&block);
    let grid = GridSpec::default();
    let map = power_map(
        &g,
        &r,
        Beamformer::Mvdr {
            loading: DEFAULT_SAMPLE_LOADING,
        },
        &grid,
        CARRIER_HZ,
        SPEED_OF_SOUND,
    )
    .unwrap();
    let peaks = doa_peaks(&map, 3, 5.0);
    let Some(top) = peaks.first() else {
        return outcome(false, "no peak found");
    };
    outcome(
        block.n_snapshots() >= 256
            && within_cells(
                top.direction,
                Direction::BORESIGHT,
                E2E_PEAK_CELLS,
                grid.az_step,
            ),
        format!(
            "{} snapshots, top peak at ({:.1}, {:.1}) deg",
            block.n_snapshots(),
            top.direction.azimuth_deg(),
            top.direction.elevation_deg()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("psf reproduction", criterion_psf),
        ("closed-form mvdr power", criterion_closed_form),
        (
            "mvdr dominance and distortionless response",
            criterion_dominance,
        ),
        ("range experiment", criterion_range),
        ("acquisition round trip", criterion_round_trip),
        ("framing property suite", criterion_framing),
        ("parser throughput", criterion_throughput),
        ("end-to-end doa", criterion_end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {:<44} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
