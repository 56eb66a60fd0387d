use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use echoarray::acquisition::{
    pdm_decimate, pdm_modulate, run_pings, synthesize_capture, CaptureParams, PdmStream,
    PingSchedule, ReflectorTarget,
};
use echoarray::beamforming::{
    doa_peaks, power_map, psf as psf_scan, Beamformer, GridSpec, PowerMap,
};
use echoarray::framing::{
    encode_frame_into, stream_throughput_bench, Frame, StreamEvent, StreamParser,
};
use echoarray::geometry::{ArrayGeometry, Direction};
use echoarray::signal_model::{
    covariance_analytic, sample_covariance, synthesize_snapshots, Scene, SceneFile,
};
use echoarray::waveform::{generate_chirp, ChirpSpec, PcmTrace, Window};
use echoarray::{DECIMATION, PCM_RATE_HZ, PDM_RATE_HZ};

use crate::config::RunConfig;
use crate::CliError;

/// Offset separating the PDM dither seeds from the capture noise seeds.
const PDM_SEED_OFFSET: u64 = 1 << 32;

fn geometry(cfg: &RunConfig) -> Result<ArrayGeometry, CliError> {
    let csv = cfg.str("geometry.csv");
    if !csv.is_empty() {
        return ArrayGeometry::read_csv(csv)
            .map_err(|e| CliError::Usage(format!("geometry.csv: {e}")));
    }
    Ok(ArrayGeometry::uniform_circular(
        cfg.get("geometry.elements")?,
        cfg.get("geometry.diameter_m")?,
    )?)
}

fn grid(cfg: &RunConfig) -> Result<GridSpec, CliError> {
    let g = GridSpec {
        az_min: cfg.get("grid.az_min")?,
        az_max: cfg.get("grid.az_max")?,
        az_step: cfg.get("grid.az_step")?,
        el_min: cfg.get("grid.el_min")?,
        el_max: cfg.get("grid.el_max")?,
        el_step: cfg.get("grid.el_step")?,
    };
    g.validate()?;
    Ok(g)
}

fn beamformer(name: &str, cfg: &RunConfig) -> Result<Beamformer, CliError> {
    match name.trim() {
        "bartlett" => Ok(Beamformer::Bartlett),
        "mvdr" => Ok(Beamformer::Mvdr {
            loading: cfg.get("beamformer.loading")?,
        }),
        other => Err(CliError::Usage(format!(
            "unknown beamformer `{other}` (expected bartlett or mvdr)"
        ))),
    }
}

fn direction(az: f64, el: f64) -> Result<Direction, CliError> {
    Ok(Direction::new(az, el)?)
}

/// `az,el; az,el; ...`
fn parse_sources(text: &str) -> Result<Vec<Direction>, CliError> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let bad = || CliError::Usage(format!("psf.sources: expected `az,el`, got `{pair}`"));
            let (a, e) = pair.split_once(',').ok_or_else(bad)?;
            direction(
                a.trim().parse().map_err(|_| bad())?,
                e.trim().parse().map_err(|_| bad())?,
            )
        })
        .collect()
}

fn chirp_spec(cfg: &RunConfig) -> Result<(ChirpSpec, Window), CliError> {
    let spec = ChirpSpec {
        f_start_hz: cfg.get("chirp.f_start_hz")?,
        f_end_hz: cfg.get("chirp.f_end_hz")?,
        duration_s: cfg.get("chirp.duration_s")?,
        sample_rate_hz: PCM_RATE_HZ,
    };
    spec.validate()?;
    let window = cfg.str("chirp.window").parse::<Window>()?;
    Ok((spec, window))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_map(map: &PowerMap, out: &Path, stem: &str) -> Result<(), CliError> {
    map.write_csv(create(&out.join(format!("{stem}.csv")))?)?;
    map.write_pgm(create(&out.join(format!("{stem}.pgm")))?)?;
    Ok(())
}

fn write_trace_csv(trace: &PcmTrace, path: &Path) -> Result<(), CliError> {
    trace.write_csv(create(path)?)?;
    Ok(())
}

fn angle_tag(d: Direction) -> String {
    format!("az{}_el{}", d.azimuth_deg(), d.elevation_deg())
}

pub fn psf(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = geometry(cfg)?;
    let grid = grid(cfg)?;
    let sources = parse_sources(cfg.str("psf.sources"))?;
    let beamformers = cfg
        .str("psf.beamformers")
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|b| beamformer(b, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    if sources.is_empty() || beamformers.is_empty() {
        eprintln!("warning: no PSF sources or beamformers configured; nothing to do");
        return Ok(());
    }
    let (f, c) = (cfg.get("frequency_hz")?, cfg.get("c_mps")?);
    let (sd, sv) = (cfg.get("psf.signal_power")?, cfg.get("psf.noise_power")?);
    for &src in &sources {
        for &bf in &beamformers {
            let (map, metrics) = psf_scan(&g, src, sd, sv, bf, &grid, f, c)?;
            let stem = format!("psf_{}_{}", bf.name(), angle_tag(src));
            write_map(&map, out, &stem)?;
            let mut w = create(&out.join(format!("{stem}_metrics.txt")))?;
            writeln!(w, "beamformer = {bf}")?;
            writeln!(w, "source_azimuth_deg = {}", src.azimuth_deg())?;
            writeln!(w, "source_elevation_deg = {}", src.elevation_deg())?;
            writeln!(w, "{metrics}")?;
            println!(
                "{stem}: peak ({}, {}), width {:.2} x {:.2} deg, sidelobe {:.1} dB",
                metrics.peak_direction.azimuth_deg(),
                metrics.peak_direction.elevation_deg(),
                metrics.mainlobe_width_az_deg,
                metrics.mainlobe_width_el_deg,
                metrics.peak_sidelobe_db
            );
        }
    }
    Ok(())
}

pub fn scan(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = geometry(cfg)?;
    let grid = grid(cfg)?;
    let file = cfg.str("scene.file");
    let (scene, f, c) = if file.is_empty() {
        let desired = direction(
            cfg.get("scene.azimuth_deg")?,
            cfg.get("scene.elevation_deg")?,
        )?;
        let scene = Scene::single(
            desired,
            cfg.get("scene.power")?,
            cfg.get("scene.noise_power")?,
        )?;
        (scene, cfg.get("frequency_hz")?, cfg.get("c_mps")?)
    } else {
        let sf = SceneFile::read(file).map_err(|e| CliError::Usage(format!("scene.file: {e}")))?;
        (sf.scene, sf.frequency_hz, sf.c_mps)
    };
    let snapshots: usize = cfg.get("scan.snapshots")?;
    let r = if snapshots == 0 {
        covariance_analytic(&g, &scene, f, c)?
    } else {
        let block = synthesize_snapshots(&g, &scene, f, c, snapshots, cfg.get("seed")?)?;
        sample_covariance(&block)
    };
    let bf = beamformer(cfg.str("scan.beamformer"), cfg)?;
    let map = power_map(&g, &r, bf, &grid, f, c)?;
    write_map(&map, out, &format!("scan_{}", bf.name()))?;

    let peaks = doa_peaks(
        &map,
        cfg.get("scan.max_peaks")?,
        cfg.get("scan.min_separation_deg")?,
    );
    let mut w = create(&out.join("peaks.csv"))?;
    writeln!(w, "rank,azimuth_deg,elevation_deg,power_linear,power_db")?;
    for (k, p) in peaks.iter().enumerate() {
        let db = 10.0 * (p.power / map.max()).log10();
        writeln!(
            w,
            "{},{},{},{:e},{:.4}",
            k + 1,
            p.direction.azimuth_deg(),
            p.direction.elevation_deg(),
            p.power,
            db
        )?;
        println!(
            "peak {}: ({}, {}) deg, {db:.2} dB",
            k + 1,
            p.direction.azimuth_deg(),
            p.direction.elevation_deg()
        );
    }
    if peaks.is_empty() {
        println!("no peaks found");
    }
    Ok(())
}

pub fn chirp(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (spec, window) = chirp_spec(cfg)?;
    let trace = generate_chirp(&spec, window)?;
    write_trace_csv(&trace, &out.join("chirp.csv"))?;
    trace.write_to(create(&out.join("chirp.pcm"))?)?;
    println!(
        "chirp: {} samples at {} Hz, {} -> {} Hz",
        trace.len(),
        trace.sample_rate_hz(),
        spec.f_start_hz,
        spec.f_end_hz
    );
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = geometry(cfg)?;
    let (spec, window) = chirp_spec(cfg)?;
    let template = generate_chirp(&spec, window)?;
    let target = ReflectorTarget::new(
        direction(
            cfg.get("simulate.azimuth_deg")?,
            cfg.get("simulate.elevation_deg")?,
        )?,
        cfg.get("simulate.range_m")?,
        cfg.get("simulate.strength")?,
    )?;
    let schedule = PingSchedule {
        ping_rate_hz: cfg.get("simulate.ping_rate_hz")?,
        duration_s: cfg.get("simulate.duration_s")?,
        snr_db: cfg.get("simulate.snr_db")?,
        c_mps: cfg.get("c_mps")?,
        seed: cfg.get("seed")?,
    };
    let mut first = None;
    let pings = run_pings(&g, &target, &template, &schedule, |t| {
        first = Some(t.clone())
    })?;

    let mut w = create(&out.join("ranges.csv"))?;
    writeln!(
        w,
        "ping,time_s,echo_start_sample,delay_s,range_m,peak_to_noise_db"
    )?;
    for p in &pings {
        let e = &p.estimate;
        writeln!(
            w,
            "{},{},{},{:.9},{:.6},{:.2}",
            p.index, p.time_s, e.peak_index, e.delay_s, e.range_m, e.peak_to_noise_db
        )?;
    }
    w.flush()?;

    write_trace_csv(&template, &out.join("transmit.csv"))?;
    if let Some(rx) = &first {
        write_trace_csv(rx, &out.join("received.csv"))?;
    }
    if pings.is_empty() {
        println!("0 pings");
    } else {
        let mean = pings.iter().map(|p| p.estimate.range_m).sum::<f64>() / pings.len() as f64;
        let worst = pings
            .iter()
            .map(|p| (p.estimate.range_m - target.range_m()).abs())
            .fold(0.0, f64::max);
        println!(
            "{} pings, mean range {mean:.4} m, max error {:.2} mm",
            pings.len(),
            worst * 1e3
        );
    }

    if cfg.flag("simulate.frames")? && !pings.is_empty() {
        let n = write_frames(
            &g,
            &target,
            &template,
            &schedule,
            cfg.get("simulate.frame_samples")?,
            out,
        )?;
        println!("{n} frames written to frames.bin");
    }
    Ok(())
}

/// Emulates the acquisition of the first ping: every channel scaled to half
/// full scale, modulated to PDM and cut into frames.
fn write_frames(
    g: &ArrayGeometry,
    target: &ReflectorTarget,
    template: &PcmTrace,
    schedule: &PingSchedule,
    frame_samples: u32,
    out: &Path,
) -> Result<usize, CliError> {
    if frame_samples == 0 || !frame_samples.is_multiple_of(8) {
        return Err(CliError::Usage(format!(
            "simulate.frame_samples must be a positive multiple of 8, got {frame_samples}"
        )));
    }
    let params = CaptureParams {
        window_samples: schedule.window_samples(template.sample_rate_hz()),
        emission_marker: 0,
        snr_db: schedule.snr_db,
        c_mps: schedule.c_mps,
        seed: schedule.seed,
    };
    let capture = synthesize_capture(g, target, template, &params)?;
    let peak = capture
        .channels()
        .iter()
        .flat_map(|c| c.samples().iter().map(|x| x.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let streams = capture
        .channels()
        .iter()
        .enumerate()
        .map(|(l, ch)| {
            let scaled = PcmTrace::new(
                ch.samples().iter().map(|x| 0.5 * x / peak).collect(),
                ch.sample_rate_hz(),
            )?;
            pdm_modulate(
                &scaled,
                PDM_RATE_HZ,
                l as u16,
                schedule.seed.wrapping_add(PDM_SEED_OFFSET + l as u64),
            )
        })
        .collect::<echoarray::Result<Vec<_>>>()?;

    let per = frame_samples as usize / 8;
    let n_frames = streams[0].bytes().len() / per;
    let mut bytes = Vec::new();
    for k in 0..n_frames {
        let parts = streams
            .iter()
            .map(|s| {
                PdmStream::from_packed(
                    s.bytes()[k * per..(k + 1) * per].to_vec(),
                    frame_samples as usize,
                    s.rate_hz(),
                    s.channel(),
                )
            })
            .collect::<echoarray::Result<Vec<_>>>()?;
        let frame = Frame::from_channels(k as u32, k as u64 * frame_samples as u64, &parts)?;
        encode_frame_into(&frame, &mut bytes);
    }
    std::fs::write(out.join("frames.bin"), &bytes)?;
    Ok(n_frames)
}

pub fn decode(cfg: &RunConfig, out: &Path, input: Option<&Path>) -> Result<(), CliError> {
    let rate: u64 = cfg.get("decode.rate_hz")?;
    let decimate = cfg.flag("decode.decimate")?;
    let mut reader: Box<dyn Read> = match input {
        None => Box::new(std::io::stdin().lock()),
        Some(p) if p.as_os_str() == "-" => Box::new(std::io::stdin().lock()),
        Some(p) => Box::new(
            File::open(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?,
        ),
    };

    let mut parser = StreamParser::new();
    let mut channels: Vec<Vec<u8>> = Vec::new();
    let mut bits_per_channel = 0usize;
    let mut shape_error = None;
    let mut handle = |e: StreamEvent| match e {
        StreamEvent::Frame(f) => {
            if channels.is_empty() {
                channels = vec![Vec::new(); f.channel_count() as usize];
            }
            if f.channel_count() as usize != channels.len() {
                shape_error.get_or_insert(format!(
                    "frame {} has {} channels, stream started with {}",
                    f.sequence,
                    f.channel_count(),
                    channels.len()
                ));
                return;
            }
            let per = f.samples_per_channel() as usize / 8;
            for (l, ch) in channels.iter_mut().enumerate() {
                ch.extend_from_slice(&f.payload()[l * per..(l + 1) * per]);
            }
            bits_per_channel += f.samples_per_channel() as usize;
        }
        StreamEvent::CrcMismatch { sequence } => {
            eprintln!("crc mismatch: frame with sequence {sequence} dropped")
        }
        StreamEvent::Resync { bytes } => eprintln!("resync: skipped {bytes} bytes"),
    };
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(CliError::Usage(format!("cannot read input: {e}"))),
        };
        parser.feed_with(&buf[..n], &mut handle);
    }
    for e in parser.finish() {
        handle(e);
    }
    if let Some(msg) = shape_error {
        return Err(CliError::Data(msg));
    }

    for (l, bytes) in channels.into_iter().enumerate() {
        let stream = PdmStream::from_packed(bytes, bits_per_channel, rate, l as u16)?;
        stream.write_to(create(&out.join(format!("ch{l:02}.pdm")))?)?;
        if decimate {
            let pcm = pdm_decimate(&stream, DECIMATION)?;
            pcm.write_to(create(&out.join(format!("ch{l:02}.pcm")))?)?;
        }
    }
    let stats = parser.stats();
    std::fs::write(out.join("stats.txt"), format!("{stats}\n"))?;
    println!("{stats}");
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    let spc: u32 = cfg.get("bench.frame_samples")?;
    let secs: f64 = cfg.get("bench.duration_s")?;
    if !(secs > 0.0) || !secs.is_finite() {
        return Err(CliError::Usage(format!(
            "bench.duration_s must be positive, got {secs}"
        )));
    }
    let report = stream_throughput_bench(spc, Duration::from_secs_f64(secs))?;
    let required = echoarray::aggregate_pdm_rate_bps();
    println!("{report}");
    println!(
        "required {:.1} Mb/s ({} channels x {:.2} MHz PDM): {}",
        required / 1e6,
        echoarray::DEFAULT_ELEMENTS,
        PDM_RATE_HZ / 1e6,
        if report.megabits_per_second() * 1e6 >= required {
            "ok"
        } else {
            "below requirement"
        }
    );
    Ok(())
}
