mod image;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use iflow_core::codec::{compress, decompress, measure_aux_bits, CodecConfig, CompressReport, Container, Dequantizer, FlowDequantizer};
use iflow_core::fixedq::Precision;
use iflow_core::fixtures::{demo_model, random_bytes, random_model, sweep_fixture};
use iflow_core::layers::Tensor;
use iflow_core::model::FlowModel;
use iflow_core::par::Exec;
use iflow_core::ubcs::{bench_bandwidth, CoderKind};
use iflow_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::image::ImageHeader;

const REPORT_SCHEMA: &str = "iflow.report/1";

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_COMPRESSION: u8 = 3;
const EXIT_CORRUPT: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "iflow", version, about = "Lossless compression with numerically invertible flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress a PGM/PPM image or a raw tensor into a container
    Compress(CompressArgs),
    /// Restore the original file from a container
    Decompress(DecompressArgs),
    /// Check that a file survives compression byte for byte
    Verify(VerifyArgs),
    /// Measure uniform coder bandwidth
    BenchCoder(BenchArgs),
    /// Sweep precision (k, h) on a fixed model and report bpd or failure
    Sweep(SweepArgs),
    /// Write a model file
    ModelInit(ModelInitArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model file; a built-in demo model is used when absent
    #[arg(long)]
    model: Option<PathBuf>,
    /// Worker threads (defaults to the core count)
    #[arg(long, env = "IFLOW_THREADS")]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
}

#[derive(Args, Debug, Clone, Default)]
struct PrecisionArgs {
    /// Fractional bits of quantized values
    #[arg(long)]
    k: Option<u32>,
    /// Interpolation grid bits
    #[arg(long)]
    h: Option<u32>,
    /// MST denominator
    #[arg(long = "S", alias = "s")]
    s: Option<u64>,
    /// Splits per sample
    #[arg(long)]
    b: Option<u32>,
}

impl PrecisionArgs {
    fn apply(&self, base: Precision) -> Result<Precision> {
        let p = Precision::new(
            self.k.unwrap_or(base.k),
            self.h.unwrap_or(base.h),
            self.s.unwrap_or(base.s),
            self.b.unwrap_or(base.b),
        )?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DeqKind {
    Uniform,
    Flow,
}

#[derive(Args, Debug)]
struct EncodeOptions {
    #[command(flatten)]
    precision: PrecisionArgs,
    #[arg(long, value_enum, default_value_t = DeqKind::Uniform)]
    dequantizer: DeqKind,
    /// Seed of the auxiliary streams
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tile side in pixels
    #[arg(long, default_value_t = 16)]
    tile: usize,
    /// Independent streams (defaults to the thread count)
    #[arg(long)]
    streams: Option<usize>,
    /// Seeded words available per stream
    #[arg(long, default_value_t = iflow_core::codec::DEFAULT_INITIAL_FILL)]
    initial_fill: u64,
}

#[derive(Args, Debug)]
struct CompressArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    encode: EncodeOptions,
}

#[derive(Args, Debug)]
struct DecompressArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Original file
    #[arg(short, long)]
    input: PathBuf,
    /// Existing container to check against the input; without it the input
    /// is compressed in memory first
    #[arg(short, long)]
    container: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    encode: EncodeOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CoderChoice {
    Ubcs,
    Rans,
    Both,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = CoderChoice::Both)]
    coder: CoderChoice,
    /// Thread counts, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4])]
    threads: Vec<usize>,
    /// Symbols per run
    #[arg(long, default_value_t = 10_000_000)]
    symbols: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// lo:hi:step, inclusive
    #[arg(long, default_value = "16:32:2")]
    k_range: String,
    #[arg(long, default_value = "8:16:2")]
    h_range: String,
    /// MST denominator
    #[arg(long = "S", alias = "s", default_value_t = 1 << 16)]
    s: u64,
    /// Synthetic samples of 256 values each
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Demo,
    Random,
    Sweep,
}

#[derive(Args, Debug)]
struct ModelInitArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, value_enum, default_value_t = ModelKind::Demo)]
    kind: ModelKind,
    /// Maximum data value plus one (demo models)
    #[arg(long, default_value_t = 256)]
    range: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Layer count (random models)
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[command(flatten)]
    precision: PrecisionArgs,
}

/// What the container metadata records about its source.
#[derive(Serialize, Deserialize)]
struct Meta {
    image: ImageHeader,
    tile: usize,
}

fn init_threads(threads: Option<usize>) -> Result<usize> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        bail!(Error::Parameter("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    Ok(n)
}

fn exec() -> Exec {
    if cfg!(feature = "parallel") {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// The model to code with: the file if given, else the demo model, at the
/// requested precision.
fn resolve_model(path: Option<&Path>, channels: usize, range: (i64, i64), prec: &PrecisionArgs) -> Result<FlowModel> {
    let base = match path {
        Some(p) => FlowModel::load(p).with_context(|| format!("loading model {}", p.display()))?,
        None => demo_model(channels, range, Precision::default())?,
    };
    let precision = prec.apply(*base.precision())?;
    if precision == *base.precision() {
        Ok(base)
    } else {
        Ok(base.with_precision(precision)?)
    }
}

fn dequantizer(kind: DeqKind) -> Dequantizer {
    match kind {
        DeqKind::Uniform => Dequantizer::Uniform,
        DeqKind::Flow => Dequantizer::Flow(FlowDequantizer::default()),
    }
}

struct Encoded {
    container: Container,
    report: CompressReport,
    model: FlowModel,
    image: image::Image,
}

fn encode_file(input: &Path, common: &Common, opts: &EncodeOptions, threads: usize) -> Result<Encoded> {
    // validate overrides before touching any data
    opts.precision.apply(Precision::default())?;
    if opts.tile == 0 {
        bail!(Error::Parameter("--tile must be at least 1".into()));
    }
    let img = image::read(input)?;
    let range = img.range();
    let model = resolve_model(common.model.as_deref(), img.header.channels, range, &opts.precision)?;
    model.check_shape(img.header.channels)?;
    let tiles = image::to_tiles(&img, opts.tile);
    let meta = Meta {
        image: img.header.clone(),
        tile: opts.tile,
    };
    let cfg = CodecConfig {
        dequantizer: dequantizer(opts.dequantizer),
        range,
        seed: opts.seed,
        initial_fill: opts.initial_fill,
        streams: opts.streams.unwrap_or(threads).max(1),
        metadata: serde_json::to_vec(&meta)?,
        timing: true,
        ..Default::default()
    };
    let (container, report) = compress(&tiles, &model, &cfg, exec())?;
    Ok(Encoded {
        container,
        report,
        model,
        image: img,
    })
}

fn decode_container(bytes: &[u8], model_path: Option<&Path>) -> Result<image::Image> {
    let container = Container::from_bytes(bytes)?;
    let meta: Meta = serde_json::from_slice(&container.metadata)
        .map_err(|e| Error::Corrupt(format!("container metadata: {e}")))?;
    let base = match model_path {
        Some(p) => FlowModel::load(p).with_context(|| format!("loading model {}", p.display()))?,
        None => demo_model(meta.image.channels, container.range, Precision::default())?,
    };
    let model = if *base.precision() == container.precision {
        base
    } else {
        base.with_precision(container.precision)?
    };
    let tiles: Vec<Tensor> = decompress(&container, &model, exec())?;
    if meta.tile == 0 {
        bail!(Error::Corrupt("tile size 0".into()));
    }
    image::from_tiles(meta.image, meta.tile, &tiles).map_err(|e| Error::Corrupt(e.to_string()).into())
}

fn precision_json(p: &Precision) -> Value {
    json!({"k": p.k, "h": p.h, "S": p.s, "b": p.b})
}

fn compress_report(enc: &Encoded, input: &Path, output: Option<&Path>, threads: usize) -> Value {
    let r = &enc.report;
    let c = &r.codelength;
    let h = &enc.image.header;
    json!({
        "schema": REPORT_SCHEMA,
        "command": "compress",
        "input": input.display().to_string(),
        "output": output.map(|p| p.display().to_string()),
        "model_hash": enc.model.hash_hex(),
        "precision": precision_json(enc.model.precision()),
        "dequantizer": enc.container.dequantizer.name(),
        "shape": {"width": h.width, "height": h.height, "channels": h.channels},
        "samples": r.samples,
        "streams": enc.container.streams.len(),
        "threads": threads,
        "dims": c.dims,
        "bpd": c.bpd,
        "net_bits": c.net_bits,
        "total_bits": c.total_bits,
        "refund_bits": c.refund_bits,
        "prior_bits": c.prior_bits,
        "per_layer_bits": c.per_layer_bits,
        "aux_bits_per_dim": r.aux_bits_per_dim,
        "container_bytes": r.container_bytes,
        "timing": {
            "inference_seconds": r.inference_seconds,
            "coding_seconds": r.coding_seconds,
            "wall_seconds": r.wall_seconds,
        },
    })
}

fn print_compress_text(v: &Value) {
    println!(
        "{} -> {}: {} bytes",
        v["input"].as_str().unwrap_or(""),
        v["output"].as_str().unwrap_or("(memory)"),
        v["container_bytes"]
    );
    println!(
        "bpd {:.4}  aux bits/dim {:.2}  samples {}  streams {}",
        v["bpd"].as_f64().unwrap_or(0.0),
        v["aux_bits_per_dim"].as_f64().unwrap_or(0.0),
        v["samples"],
        v["streams"]
    );
    let dims = v["dims"].as_f64().unwrap_or(1.0).max(1.0);
    if let Some(layers) = v["per_layer_bits"].as_array() {
        for (i, b) in layers.iter().enumerate() {
            println!("  layer {i}: {:+.4} bits/dim", b.as_f64().unwrap_or(0.0) / dims);
        }
    }
    println!(
        "  prior: {:+.4} bits/dim  refund: {:.4} bits/dim",
        v["prior_bits"].as_f64().unwrap_or(0.0) / dims,
        v["refund_bits"].as_f64().unwrap_or(0.0) / dims
    );
    let t = &v["timing"];
    println!(
        "time: inference {:.3}s  coding {:.3}s  wall {:.3}s",
        t["inference_seconds"].as_f64().unwrap_or(0.0),
        t["coding_seconds"].as_f64().unwrap_or(0.0),
        t["wall_seconds"].as_f64().unwrap_or(0.0)
    );
}

fn emit(format: ReportFormat, v: &Value, text: impl FnOnce(&Value)) -> Result<()> {
    match format {
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(v)?),
        ReportFormat::Text => text(v),
    }
    Ok(())
}

fn cmd_compress(a: &CompressArgs) -> Result<u8> {
    let threads = init_threads(a.common.threads)?;
    let enc = encode_file(&a.input, &a.common, &a.encode, threads)?;
    fs::write(&a.output, enc.container.to_bytes()).with_context(|| format!("writing {}", a.output.display()))?;
    let v = compress_report(&enc, &a.input, Some(&a.output), threads);
    emit(a.common.report, &v, print_compress_text)?;
    Ok(0)
}

fn cmd_decompress(a: &DecompressArgs) -> Result<u8> {
    init_threads(a.common.threads)?;
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let img = decode_container(&bytes, a.common.model.as_deref())?;
    image::write(&a.output, &img)?;
    let v = json!({
        "schema": REPORT_SCHEMA,
        "command": "decompress",
        "input": a.input.display().to_string(),
        "output": a.output.display().to_string(),
        "shape": {"width": img.header.width, "height": img.header.height, "channels": img.header.channels},
    });
    emit(a.common.report, &v, |_| println!("{} -> {}", a.input.display(), a.output.display()))?;
    Ok(0)
}

fn cmd_verify(a: &VerifyArgs) -> Result<u8> {
    let threads = init_threads(a.common.threads)?;
    let original = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let bytes = match &a.container {
        Some(c) => fs::read(c).with_context(|| format!("reading {}", c.display()))?,
        None => encode_file(&a.input, &a.common, &a.encode, threads)?.container.to_bytes(),
    };
    let img = decode_container(&bytes, a.common.model.as_deref())?;
    let ok = image::to_bytes(&img) == original;
    let v = json!({
        "schema": REPORT_SCHEMA,
        "command": "verify",
        "input": a.input.display().to_string(),
        "container_bytes": bytes.len(),
        "identical": ok,
    });
    emit(a.common.report, &v, |_| {
        if ok {
            println!("verify: OK ({} bytes -> {} bytes)", original.len(), bytes.len());
        } else {
            println!("verify: MISMATCH");
        }
    })?;
    Ok(if ok { 0 } else { EXIT_MISMATCH })
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cmd_bench(a: &BenchArgs) -> Result<u8> {
    if a.runs == 0 || a.symbols == 0 || a.threads.contains(&0) {
        bail!(Error::Parameter("runs, symbols and thread counts must be positive".into()));
    }
    let coders: &[CoderKind] = match a.coder {
        CoderChoice::Ubcs => &[CoderKind::Ubcs],
        CoderChoice::Rans => &[CoderKind::Rans],
        CoderChoice::Both => &[CoderKind::Ubcs, CoderKind::Rans],
    };
    let mut rows = Vec::new();
    for &coder in coders {
        for &t in &a.threads {
            let mut enc = Vec::new();
            let mut dec = Vec::new();
            for run in 0..a.runs {
                let r = bench_bandwidth(coder, a.symbols, t, run as u64)?;
                enc.push(r.encode_msym_per_s());
                dec.push(r.decode_msym_per_s());
            }
            for (op, xs) in [("encode", &enc), ("decode", &dec)] {
                let (m, sd) = mean_sd(xs);
                rows.push(json!({"coder": coder.name(), "threads": t, "op": op, "mean_msym_per_s": m, "sd_msym_per_s": sd}));
            }
        }
    }
    let v = json!({
        "schema": REPORT_SCHEMA,
        "command": "bench-coder",
        "symbols": a.symbols,
        "runs": a.runs,
        "rows": rows,
    });
    emit(a.report, &v, |v| {
        println!("{:<6} {:>7} {:<7} {:>18}", "coder", "threads", "op", "M symbol/s");
        for r in v["rows"].as_array().into_iter().flatten() {
            println!(
                "{:<6} {:>7} {:<7} {:>10.1} ± {:<6.1}",
                r["coder"].as_str().unwrap_or(""),
                r["threads"],
                r["op"].as_str().unwrap_or(""),
                r["mean_msym_per_s"].as_f64().unwrap_or(0.0),
                r["sd_msym_per_s"].as_f64().unwrap_or(0.0)
            );
        }
    })?;
    Ok(0)
}

fn parse_range(s: &str) -> Result<Vec<u32>> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parameter(format!("range {s:?} must be lo:hi[:step]")))?;
    let (lo, hi, step) = match parts[..] {
        [v] => (v, v, 1),
        [lo, hi] => (lo, hi, 1),
        [lo, hi, step] if step > 0 => (lo, hi, step),
        _ => bail!(Error::Parameter(format!("range {s:?} must be lo:hi[:step]"))),
    };
    Ok((lo..=hi).step_by(step as usize).collect())
}

fn cmd_sweep(a: &SweepArgs) -> Result<u8> {
    let ks = parse_range(&a.k_range)?;
    let hs = parse_range(&a.h_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let xs: Vec<Tensor> = (0..a.samples.max(1)).map(|_| random_bytes(&mut rng, 1, 256)).collect();
    let mut grid = Vec::new();
    for &h in &hs {
        let mut row = Vec::new();
        for &k in &ks {
            let cell = match Precision::new(k, h, a.s, 1) {
                Err(_) => json!({"k": k, "h": h, "status": "invalid"}),
                Ok(p) => {
                    let model = sweep_fixture(p)?;
                    let cfg = CodecConfig {
                        seed: a.seed,
                        ..Default::default()
                    };
                    match compress(&xs, &model, &cfg, Exec::Sequential) {
                        Ok((_, r)) => json!({"k": k, "h": h, "status": "ok", "bpd": r.codelength.bpd,
                                             "aux_bits_per_dim": r.aux_bits_per_dim}),
                        Err(e) if e.is_compression_failure() => json!({"k": k, "h": h, "status": "fail"}),
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            row.push(cell);
        }
        grid.push(row);
    }
    // auxiliary bits depend on k only for this fixture; take the smallest
    // valid h for each k
    let aux: Vec<Value> = ks
        .iter()
        .map(|&k| {
            let h = hs.iter().copied().filter(|&h| h < k).find_map(|h| {
                let model = sweep_fixture(Precision::new(k, h, a.s, 1).ok()?).ok()?;
                measure_aux_bits(&model, &Dequantizer::Uniform, &xs, (0, 256), Exec::Sequential).ok()
            });
            json!({"k": k, "aux_bits_per_dim": h})
        })
        .collect();
    let v = json!({
        "schema": REPORT_SCHEMA,
        "command": "sweep",
        "S": a.s,
        "grid": grid,
        "aux": aux,
    });
    emit(a.report, &v, |v| {
        print!("{:>6}", "h\\k");
        for k in &ks {
            print!("{k:>8}");
        }
        println!();
        for row in v["grid"].as_array().into_iter().flatten() {
            print!("{:>6}", row[0]["h"]);
            for c in row.as_array().into_iter().flatten() {
                match c["status"].as_str() {
                    Some("ok") => print!("{:>8.3}", c["bpd"].as_f64().unwrap_or(0.0)),
                    Some("fail") => print!("{:>8}", "N/A"),
                    _ => print!("{:>8}", "-"),
                }
            }
            println!();
        }
        print!("{:>6}", "aux");
        for c in v["aux"].as_array().into_iter().flatten() {
            match c["aux_bits_per_dim"].as_f64() {
                Some(x) => print!("{x:>8.2}"),
                None => print!("{:>8}", "-"),
            }
        }
        println!();
    })?;
    Ok(0)
}

fn cmd_model_init(a: &ModelInitArgs) -> Result<u8> {
    let precision = a.precision.apply(Precision::default())?;
    if a.channels == 0 || a.range < 2 {
        bail!(Error::Parameter("channels must be positive and range at least 2".into()));
    }
    let model = match a.kind {
        ModelKind::Demo => demo_model(a.channels, (0, a.range), precision)?,
        ModelKind::Random => random_model(a.seed, a.channels, a.layers, precision)?,
        ModelKind::Sweep => sweep_fixture(precision)?,
    };
    model.save(&a.output)?;
    println!("{} ({} layers, hash {})", a.output.display(), model.layers().len(), model.hash_hex());
    Ok(0)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>().map(Error::root) {
        Some(Error::CompressionFailure(_)) => EXIT_COMPRESSION,
        Some(Error::Corrupt(_) | Error::HashMismatch { .. } | Error::Version(_)) => EXIT_CORRUPT,
        Some(Error::Parameter(_)) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// The error chain on one line, skipping causes already spelled out by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match &cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Verify(a) => cmd_verify(a),
        Command::BenchCoder(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ModelInit(a) => cmd_model_init(a),
    };
    match out {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
