use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use evkit::augment::{self, FlipAxis, Sequence};
use evkit::cmax::{estimate_intervals, CmaxConfig};
use evkit::encode::{encode_count, encode_gaussian, EncoderConfig};
use evkit::metrics::evaluate_readers;
use evkit::simgen::{make_dataset, SceneSpec};
use evkit::store::{self, import_csv, read_all, Codec, ContainerProps, Reader, Stride, WriteOptions};
use evkit::viz::{self, ExportKind};
use evkit::{GraySequence, Result};

#[derive(Parser)]
#[command(name = "evkit", version, about = "Event-camera data toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Output container directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "zstd")]
    codec: Codec,
    #[arg(long, default_value_t = 65_536)]
    chunk_size: u32,
}

impl Output {
    fn options(&self) -> WriteOptions {
        WriteOptions::new(self.codec, self.chunk_size)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print container properties and channel sizes as JSON.
    Info { container: PathBuf },
    /// Build a container from an events CSV, optional gray PNGs and flow JSON.
    ImportCsv {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        grays: Option<PathBuf>,
        #[arg(long)]
        flows: Option<PathBuf>,
        /// Sensor properties JSON.
        #[arg(long)]
        props: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Render a scene spec to a container with ground-truth flow.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Copy the `[t0, t1)` millisecond window into a new container.
    Slice {
        container: PathBuf,
        #[arg(long)]
        t0_ms: u64,
        #[arg(long)]
        t1_ms: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Encode a window into per-bin frames, written as PNGs.
    Encode {
        container: PathBuf,
        #[arg(long, value_parser = ["count", "gaussian"], default_value = "count")]
        method: String,
        #[arg(long, default_value_t = 1)]
        bins: usize,
        #[arg(long, default_value_t = 10_000.0)]
        sigma_us: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Window start; defaults to the first millisecond.
        #[arg(long)]
        t0_ms: Option<u64>,
        /// Window end; defaults to the sequence end.
        #[arg(long)]
        t1_ms: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one augmentation and write a new container.
    Augment {
        container: PathBuf,
        #[arg(long, value_parser = ["time-warp", "noise", "flip-polarity", "reverse", "flip", "crop"])]
        op: String,
        /// time-warp scale factor.
        #[arg(long, default_value_t = 1.0)]
        factor: f64,
        /// noise rate, events per pixel per second.
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        /// flip axis: horizontal or vertical.
        #[arg(long, default_value = "horizontal")]
        axis: FlipAxis,
        #[arg(long)]
        width: Option<u16>,
        #[arg(long)]
        height: Option<u16>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Export numbered PNGs per slice.
    Render {
        container: PathBuf,
        #[arg(long, value_parser = ["overlay", "flow", "encoded"])]
        kind: String,
        #[command(flatten)]
        stride: StrideArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write all events as CSV.
        #[arg(long)]
        events_csv: Option<PathBuf>,
    },
    /// Contrast-maximization flow for every stored flow interval (or every
    /// `--stride-ms` window) written as a container plus a JSON trace.
    EstimateFlow {
        container: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stride_ms: Option<u64>,
        #[arg(long)]
        smoothness_weight: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        pyramid_levels: Option<usize>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Score predicted flow against ground truth; metrics JSON on stdout.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        thresholds: Vec<f64>,
    },
}

#[derive(Args)]
#[group(multiple = false)]
struct StrideArgs {
    #[arg(long)]
    stride_ms: Option<u64>,
    #[arg(long)]
    stride_events: Option<usize>,
    #[arg(long)]
    stride_gray: Option<usize>,
}

impl StrideArgs {
    fn resolve(&self, reader: &Reader) -> Stride {
        match (self.stride_ms, self.stride_events, self.stride_gray) {
            (Some(m), _, _) => Stride::Millis(m),
            (_, Some(n), _) => Stride::Events(n),
            (_, _, Some(g)) => Stride::GrayFrames(g),
            _ if reader.num_gray() >= 2 => Stride::GrayFrames(1),
            _ => Stride::Millis(10),
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn summary(path: &Path) -> Result<serde_json::Value> {
    let r = store::open(path)?;
    Ok(json!({
        "path": path,
        "props": r.props(),
        "events": r.len(),
        "gray_frames": r.num_gray(),
        "flow_fields": r.num_flows(),
        "duration_ms": r.duration_ms(),
    }))
}

fn write_and_report(
    seq: &Sequence,
    props: &ContainerProps,
    output: &Output,
) -> Result<()> {
    store::write_sequence(&seq.events, &seq.grays, &seq.flows, props, &output.out, output.options())?;
    let s = summary(&output.out)?;
    eprintln!(
        "wrote {}: {} events, {} gray frames, {} flow fields",
        output.out.display(),
        s["events"],
        s["gray_frames"],
        s["flow_fields"]
    );
    print_json(&s)
}

fn load(path: &Path) -> Result<(Reader, Sequence)> {
    let reader = store::open(path)?;
    let (events, grays, flows) = read_all(&reader)?;
    Ok((reader, Sequence { events, grays, flows }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Info { container } => {
            let s = summary(&container)?;
            let sensor = &s["props"];
            eprintln!(
                "{}x{} sensor, thresholds +{} / -{}, {} events over {} ms",
                sensor["width"], sensor["height"], sensor["threshold_pos"], sensor["threshold_neg"], s["events"], s["duration_ms"]
            );
            print_json(&s)
        }
        Command::ImportCsv { events, grays, flows, props, output } => {
            import_csv(&events, grays.as_deref(), flows.as_deref(), &props, &output.out, output.options())?;
            print_json(&summary(&output.out)?)
        }
        Command::Simulate { spec, seed, output } => {
            let mut spec = SceneSpec::from_json(&fs::read_to_string(spec)?)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            make_dataset(&spec, &output.out, output.options())?;
            let s = summary(&output.out)?;
            eprintln!("simulated {} events into {}", s["events"], output.out.display());
            print_json(&s)
        }
        Command::Slice { container, t0_ms, t1_ms, output } => {
            let (reader, seq) = load(&container)?;
            if t1_ms <= t0_ms {
                return Err(evkit::Error::InvalidInput("t1_ms must exceed t0_ms".into()));
            }
            let (t0, t1) = (t0_ms as i64 * 1000, t1_ms as i64 * 1000);
            let keep: Vec<usize> = (0..seq.grays.len()).filter(|&i| (t0..=t1).contains(&seq.grays.ts[i])).collect();
            let out = Sequence {
                events: seq.events.between(t0, t1),
                grays: GraySequence::new(
                    keep.iter().map(|&i| seq.grays.frames[i].clone()).collect(),
                    keep.iter().map(|&i| seq.grays.ts[i]).collect(),
                ),
                flows: seq.flows.into_iter().filter(|f| f.t0 >= t0 && f.t1 <= t1).collect(),
            };
            write_and_report(&out, reader.props(), &output)
        }
        Command::Encode { container, method, bins, sigma_us, lambda, t0_ms, t1_ms, out } => {
            let reader = store::open(&container)?;
            let t0 = t0_ms.unwrap_or(0) as i64 * 1000;
            let t1 = t1_ms.unwrap_or(reader.duration_ms()) as i64 * 1000;
            let events = reader.read_events(reader.event_index_at(t0)?..reader.event_index_at(t1)?)?;
            let shape = reader.shape();
            let frames = match method.as_str() {
                "gaussian" => {
                    let config = EncoderConfig { num_bins: bins, sigma: sigma_us, lambda };
                    encode_gaussian(&events, shape, t0, t1, &config)?
                }
                _ => encode_count(&events, shape, t0, t1, bins)?,
            };
            fs::create_dir_all(&out)?;
            let mut report = Vec::new();
            for (i, f) in frames.iter().enumerate() {
                viz::write_png(out.join(format!("{i:06}.png")), &viz::render_encoded(f))?;
                report.push(json!({"t0": f.t0, "t1": f.t1, "pos_sum": f.pos.sum(), "neg_sum": f.neg.sum()}));
            }
            eprintln!("encoded {} events into {} frames", events.len(), frames.len());
            print_json(&json!(report))
        }
        Command::Augment { container, op, factor, rate, axis, width, height, seed, output } => {
            let (reader, seq) = load(&container)?;
            let shape = reader.shape();
            let mut props = reader.props().clone();
            let out = match op.as_str() {
                "time-warp" => Sequence {
                    events: augment::time_warp(&seq.events, factor)?,
                    ..Default::default()
                },
                "reverse" => Sequence {
                    events: augment::temporal_reverse(&seq.events),
                    ..Default::default()
                },
                "noise" => Sequence {
                    events: augment::inject_noise(&seq.events, shape, rate, seed)?,
                    ..seq
                },
                "flip-polarity" => Sequence {
                    events: augment::flip_polarity(&seq.events),
                    ..seq
                },
                "flip" => augment::spatial_flip(&seq, shape, axis)?,
                _ => {
                    let sensor = &props.sensor;
                    let c = augment::random_crop(
                        &seq,
                        sensor,
                        width.unwrap_or(sensor.width),
                        height.unwrap_or(sensor.height),
                        None,
                        seed,
                    )?;
                    props.sensor = c.props;
                    eprintln!("crop origin ({}, {})", c.rect.x, c.rect.y);
                    c.seq
                }
            };
            let dropped = matches!(op.as_str(), "time-warp" | "reverse");
            if dropped && (reader.num_gray() > 0 || reader.num_flows() > 0) {
                eprintln!("{op}: gray frames and flow are not carried over");
            }
            write_and_report(&out, &props, &output)
        }
        Command::Render { container, kind, stride, out, events_csv } => {
            let reader = store::open(&container)?;
            let kind: ExportKind = kind.parse()?;
            let paths = viz::export_sequence(&reader, stride.resolve(&reader), &out, kind)?;
            if let Some(csv) = events_csv {
                viz::export_events_csv(&reader.read_events(0..reader.len())?, csv)?;
            }
            eprintln!("wrote {} frames to {}", paths.len(), out.display());
            print_json(&json!({"frames": paths.len()}))
        }
        Command::EstimateFlow {
            container,
            config,
            stride_ms,
            smoothness_weight,
            max_iters,
            pyramid_levels,
            trace,
            output,
        } => {
            let mut cfg = match config {
                Some(p) => CmaxConfig::from_json(&fs::read_to_string(p)?)?,
                None => CmaxConfig::default(),
            };
            if let Some(w) = smoothness_weight {
                cfg.smoothness_weight = w;
            }
            if let Some(n) = max_iters {
                cfg.max_iters = n;
            }
            if let Some(n) = pyramid_levels {
                cfg.pyramid_levels = n;
            }
            let (reader, seq) = load(&container)?;
            let mut props = reader.props().clone();
            let intervals: Vec<(i64, i64)> = match stride_ms {
                None if reader.num_flows() > 0 => reader.flow_intervals().to_vec(),
                stride => {
                    let m = stride.unwrap_or(50).max(1);
                    props.sensor.flow_rate_hz = 1000.0 / m as f64;
                    let n = reader.duration_ms().div_ceil(m) as i64;
                    (0..n).map(|k| (k * m as i64 * 1000, (k + 1) * m as i64 * 1000)).collect()
                }
            };
            let (flows, traces) = estimate_intervals(&reader, &intervals, &cfg)?;
            props.meta = json!({"source": "estimate-flow", "input": container, "config": cfg});
            let out = Sequence { flows, ..seq };
            store::write_sequence(&out.events, &out.grays, &out.flows, &props, &output.out, output.options())?;
            if let Some(path) = trace {
                fs::write(path, serde_json::to_string_pretty(&traces)?)?;
            }
            eprintln!("estimated {} flow fields", out.flows.len());
            print_json(&json!({
                "flow_fields": out.flows.len(),
                "estimated": traces.iter().filter(|t| t.estimated).count(),
                "out": output.out,
            }))
        }
        Command::Eval { pred, gt, thresholds } => {
            let report = evaluate_readers(&store::open(&pred)?, &store::open(&gt)?, &thresholds)?;
            match &report {
                Some(r) => eprintln!("AEE {:.4} px over {} pixels", r.aee, r.n_pixels),
                None => eprintln!("no event pixels to evaluate"),
            }
            print_json(&serde_json::to_value(report)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
