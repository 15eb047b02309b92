//! The `evpoint` command line. [`run`] parses arguments, executes one
//! command and returns the process exit code: 0 on success, 1 for usage
//! errors, 2 for data errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use eventpoint::evaluation::{disparity_report, iou_matching_score, reprojection_eval, Pipeline};
use eventpoint::event_model::{EventStream, Micros, TemporalWindow};
use eventpoint::features::{describe_frame, match_features, ExtractParams, MatchMode, MatchParams, NetworkDetector};
use eventpoint::io::{self, Config};
use eventpoint::network::{forward_frame, WeightSet};
use eventpoint::representation::{encode_window, encode_window_tencode, GrayMode, Representation};
use eventpoint::selfsup::{train_descriptor, train_detector, HarrisDetector, LossHistory, Sample, TrainConfig};
use eventpoint::{gradcheck, synth, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(name = "evpoint", version, about = "Event-camera interest points: encode, train, detect, match, evaluate")]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true, env = "EVPOINT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic event stream with known planar motion.
    Synth(SynthArgs),
    /// Encode one event window into a frame.
    Encode(EncodeArgs),
    /// Train the encoder and detector head on pseudo-labels.
    TrainDetector(TrainDetectorArgs),
    /// Train the encoder and descriptor head on triplet consistency.
    TrainDescriptor(TrainDescriptorArgs),
    /// Extract keypoints and descriptors from a frame.
    Detect(DetectArgs),
    /// Match two feature files.
    Match(MatchArgs),
    /// Homography reprojection error between two windows of a stream.
    EvalReproj(EvalReprojArgs),
    /// Matching precision against a disparity map.
    EvalDisparity(EvalDisparityArgs),
    /// Fraction of matches inside both object masks.
    EvalIou(EvalIouArgs),
    /// Finite-difference check of every layer and loss.
    Gradcheck(GradcheckArgs),
    /// Encoding and forward-pass throughput.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Configuration file; its [synth] section describes the scene.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output stream (`.csv` selects the text codec).
    #[arg(long, default_value = "events.evs")]
    out: PathBuf,
    /// Also write the planar-pattern mask at this timestamp (µs).
    #[arg(long)]
    mask_at: Option<Micros>,
    #[arg(long, default_value = "mask.pgm")]
    mask_out: PathBuf,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    events: PathBuf,
    /// Window center, µs.
    #[arg(long)]
    t_base: Micros,
    /// Window length, µs.
    #[arg(long, default_value_t = 20_000)]
    dt: Micros,
    /// tencode, tsurface or twindow.
    #[arg(long, default_value = "tencode")]
    rep: Representation,
    /// Defaults to frame.ppm for Tencode and frame.pgm otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainDetectorArgs {
    #[arg(long, num_args = 1.., required = true)]
    events: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "detector.epw")]
    out: PathBuf,
    /// Starting weights; a fresh initialization otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base timestamps drawn per stream.
    #[arg(long, default_value_t = 8)]
    samples_per_stream: usize,
    /// Overrides the configured number of label-then-train rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the loss history as CSV.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainDescriptorArgs {
    #[arg(long, num_args = 1.., required = true)]
    events: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value = "descriptor.epw")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    samples_per_stream: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    /// PGM, or PPM reduced to luminance.
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, default_value_t = eventpoint::features::DEFAULT_TAU_TEST)]
    tau: f32,
    /// Suppression radius, pixels; 0 disables suppression.
    #[arg(long, default_value_t = eventpoint::features::DEFAULT_NMS_RADIUS)]
    nms: f64,
    #[arg(long)]
    max_keypoints: Option<usize>,
    #[arg(long, default_value = "features.epf")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// nn or mutual.
    #[arg(long, default_value = "mutual")]
    mode: MatchMode,
    /// Nearest/second-nearest distance ratio test.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value = "matches.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalReprojArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    t1: Micros,
    #[arg(long)]
    t2: Micros,
    /// Window length after each timestamp, µs.
    #[arg(long, default_value_t = 10_000)]
    dt: Micros,
    #[arg(long)]
    weights: PathBuf,
    /// Planar-region mask applied to both endpoints.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Representation, extraction and matching settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalDisparityArgs {
    #[arg(long)]
    matches: PathBuf,
    /// `# width,height` then `x,y,d` lines.
    #[arg(long)]
    disparity: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,6,9")]
    sigma: Vec<f64>,
}

#[derive(Args, Debug)]
struct EvalIouArgs {
    #[arg(long)]
    matches: PathBuf,
    #[arg(long)]
    mask_a: PathBuf,
    #[arg(long)]
    mask_b: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Network input frame; a blank 320x240 frame when absent.
    #[arg(long)]
    frame: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Also time Tencode encoding of 20 ms windows of this stream.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Runs the command line with output on stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout())
}

pub fn run_with_output<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command, out)),
        Err(e) => Err(Error::InvalidArgument(e.to_string())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut (dyn Write + Send)) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Encode(a) => cmd_encode(a, out),
        Command::TrainDetector(a) => cmd_train_detector(a, out),
        Command::TrainDescriptor(a) => cmd_train_descriptor(a, out),
        Command::Detect(a) => cmd_detect(a, out),
        Command::Match(a) => cmd_match(a, out),
        Command::EvalReproj(a) => cmd_eval_reproj(a, out),
        Command::EvalDisparity(a) => cmd_eval_disparity(a, out),
        Command::EvalIou(a) => cmd_eval_iou(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(Error::from)?
    };
}

fn config(path: &Option<PathBuf>) -> Result<Config> {
    io::load_config_or_default(path.as_ref())
}

fn cmd_synth(a: SynthArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut scene = config(&a.config)?.synth;
    if let Some(s) = a.seed {
        scene.seed = s;
    }
    let seq = synth::generate(&scene)?;
    io::write_events(&a.out, &seq.events)?;
    say!(out, "wrote {} events to {}", seq.events.len(), a.out.display());
    if let Some(t) = a.mask_at {
        let mask = seq.planar_mask(t)?;
        io::write_mask(&a.mask_out, &mask)?;
        say!(out, "wrote mask at t={t} to {}", a.mask_out.display());
    }
    Ok(())
}

fn cmd_encode(a: EncodeArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let stream = io::read_events(&a.events)?;
    let window = TemporalWindow::centered(a.t_base, a.dt)?;
    let path = match a.rep {
        Representation::Tencode => {
            let path = a.out.unwrap_or_else(|| PathBuf::from("frame.ppm"));
            io::write_frame3(&path, &encode_window_tencode(&stream, window)?)?;
            path
        }
        rep => {
            let path = a.out.unwrap_or_else(|| PathBuf::from("frame.pgm"));
            io::write_frame1(&path, &encode_window(&stream, window, rep, GrayMode::Luminance)?)?;
            path
        }
    };
    say!(
        out,
        "encoded {} events in ({}, {}] to {}",
        stream.window_events(window).len(),
        window.start(),
        window.end(),
        path.display()
    );
    Ok(())
}

fn load_streams(paths: &[PathBuf]) -> Result<Vec<EventStream>> {
    paths.iter().map(io::read_events).collect()
}

/// Evenly spaced base timestamps on which every triplet window fits.
fn samples<'a>(streams: &'a [EventStream], cfg: &TrainConfig, per_stream: usize) -> Result<Vec<Sample<'a>>> {
    if per_stream == 0 {
        return Err(Error::InvalidArgument("samples per stream must be positive".into()));
    }
    let half = cfg.triplet.min_base();
    let mut out = Vec::new();
    for s in streams {
        let (Some(first), Some(last)) = (s.first_timestamp(), s.last_timestamp()) else {
            return Err(Error::EmptyDataset);
        };
        let (lo, hi) = ((first + half).max(half), last - half);
        if hi < lo {
            return Err(Error::Malformed(format!(
                "stream spans {} µs, shorter than one {} µs triplet",
                last - first,
                2 * half
            )));
        }
        for i in 0..per_stream {
            let f = (i as f64 + 0.5) / per_stream as f64;
            out.push(Sample {
                stream: s,
                t_base: lo + ((hi - lo) as f64 * f).round() as Micros,
            });
        }
    }
    Ok(out)
}

fn report_loss(out: &mut (dyn Write + Send), h: &LossHistory, path: &Option<PathBuf>) -> Result<()> {
    for (i, l) in h.epochs.iter().enumerate() {
        say!(out, "epoch {i}: loss {l:.6}");
    }
    if let Some(p) = path {
        io::write_loss_history(p, h)?;
    }
    Ok(())
}

fn cmd_train_detector(a: TrainDetectorArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut cfg = config(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    let rounds = a.rounds.unwrap_or(cfg.rounds);
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    let streams = load_streams(&a.events)?;
    let samples = samples(&streams, &cfg.training, a.samples_per_stream)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut w = match &a.init {
        Some(p) => io::load_weights(p)?,
        None => WeightSet::init(a.seed),
    };
    let mut history = LossHistory::default();
    for round in 0..rounds {
        // Later rounds label with the network trained so far.
        let (next, h) = if round == 0 {
            train_detector(w, &samples, &cfg.training, &HarrisDetector { params: cfg.training.harris }, &mut rng)?
        } else {
            let teacher = w.clone();
            let det = NetworkDetector {
                weights: &teacher,
                params: cfg.eval.extract,
            };
            train_detector(w, &samples, &cfg.training, &det, &mut rng)?
        };
        w = next;
        history.steps.extend(h.steps);
        history.epochs.extend(h.epochs);
    }
    report_loss(out, &history, &a.loss_out)?;
    io::save_weights(&a.out, &w)?;
    say!(out, "trained on {} samples; wrote {}", samples.len(), a.out.display());
    Ok(())
}

fn cmd_train_descriptor(a: TrainDescriptorArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut cfg = config(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    let streams = load_streams(&a.events)?;
    let samples = samples(&streams, &cfg.training, a.samples_per_stream)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let w = io::load_weights(&a.weights)?;
    let (w, h) = train_descriptor(w, &samples, &cfg.training, &mut rng)?;
    report_loss(out, &h, &a.loss_out)?;
    io::save_weights(&a.out, &w)?;
    say!(out, "trained on {} samples; wrote {}", samples.len(), a.out.display());
    Ok(())
}

fn cmd_detect(a: DetectArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let w = io::load_weights(&a.weights)?;
    let frame = io::read_gray_frame(&a.frame)?;
    let params = ExtractParams {
        tau: a.tau,
        nms_radius: a.nms,
        max_count: a.max_keypoints,
    };
    let f = describe_frame(&w, &frame, &params)?;
    io::write_features(&a.out, &f)?;
    say!(out, "{} keypoints written to {}", f.len(), a.out.display());
    Ok(())
}

fn cmd_match(a: MatchArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let fa = io::read_features(&a.a)?;
    let fb = io::read_features(&a.b)?;
    let m = match_features(&fa, &fb, &MatchParams { mode: a.mode, ratio: a.ratio })?;
    io::write_matches(&a.out, &m)?;
    say!(out, "{} matches written to {}", m.len(), a.out.display());
    Ok(())
}

fn cmd_eval_reproj(a: EvalReprojArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = config(&a.config)?;
    let stream = io::read_events(&a.events)?;
    let w = io::load_weights(&a.weights)?;
    let mask = a.mask.as_ref().map(io::read_mask).transpose()?;
    let mut pipeline = Pipeline::new(&w);
    pipeline.representation = cfg.training.representation;
    pipeline.gray = cfg.training.gray;
    pipeline.extract = cfg.eval.extract;
    pipeline.matching = cfg.eval.matching;
    let mut rc = cfg.eval.reproj;
    rc.dt = a.dt;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    match reprojection_eval(&stream, a.t1, a.t2, &pipeline, mask.as_ref(), mask.as_ref(), &rc, &mut rng)? {
        Some(o) => {
            say!(out, "matches: {}", o.matches);
            say!(out, "in mask: {}", o.kept);
            say!(out, "inliers: {}", o.inliers);
            say!(out, "reprojection error: {:.6}", o.error);
        }
        None => say!(out, "reprojection error: none (fewer than 4 usable matches)"),
    }
    Ok(())
}

fn cmd_eval_disparity(a: EvalDisparityArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    if a.sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument("sigma values must be positive".into()));
    }
    let m = io::read_matches(&a.matches)?;
    let d = io::read_disparity(&a.disparity)?;
    write!(out, "{}", disparity_report(&[(m, d)], &a.sigma))?;
    Ok(())
}

fn cmd_eval_iou(a: EvalIouArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let m = io::read_matches(&a.matches)?;
    let (ma, mb) = (io::read_mask(&a.mask_a)?, io::read_mask(&a.mask_b)?);
    match iou_matching_score(&m, &ma, &mb) {
        Some(s) => say!(out, "iou matching score: {s:.4}"),
        None => say!(out, "iou matching score: none (no matches)"),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let results = gradcheck::run_all(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let ok = r.passed(gradcheck::FD_TOLERANCE);
        failed += usize::from(!ok);
        say!(
            out,
            "{:<24} {:>6} checked  max rel error {:.3e}  {}",
            r.name,
            r.checked,
            r.max_rel_error,
            if ok { "ok" } else { "FAILED" }
        );
    }
    if failed > 0 {
        return Err(Error::Malformed(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn time_per_iter(iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..iters {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / iters as f64)
}

fn cmd_bench(a: BenchArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    if a.iters == 0 {
        return Err(Error::InvalidArgument("iters must be positive".into()));
    }
    let frame = match &a.frame {
        Some(p) => io::read_gray_frame(p)?,
        None => eventpoint::representation::Frame1::new(320, 240),
    };
    let frame = eventpoint::features::crop_to_cells(&frame)?;
    let w = WeightSet::init(a.seed);
    let s = time_per_iter(a.iters, || forward_frame(&w, &frame).map(|_| ()))?;
    say!(
        out,
        "forward {}x{}: {:.2} ms/frame, {:.1} frames/s",
        frame.width(),
        frame.height(),
        s * 1e3,
        1.0 / s
    );
    if let Some(p) = &a.events {
        bench_encoding(p, a.iters, out)?;
    }
    Ok(())
}

fn bench_encoding(path: &Path, iters: usize, out: &mut (dyn Write + Send)) -> Result<()> {
    let stream = io::read_events(path)?;
    let (Some(first), Some(last)) = (stream.first_timestamp(), stream.last_timestamp()) else {
        return Err(Error::EmptyDataset);
    };
    let window = TemporalWindow::new(first.max(last - 20_000) - 1, last)?;
    let n = stream.window_events(window).len();
    let s = time_per_iter(iters, || encode_window_tencode(&stream, window).map(|_| ()))?;
    say!(
        out,
        "tencode {} events: {:.3} ms/window, {:.1} Mevents/s",
        n,
        s * 1e3,
        n as f64 / s / 1e6
    );
    Ok(())
}
