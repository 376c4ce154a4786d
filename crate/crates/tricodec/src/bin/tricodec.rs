//! Command-line front end: encode images to .tri files, decode them back to
//! images, and run the benchmark harness.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 file I/O error,
//! 3 malformed .tri input, 4 infeasible byte budget.

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use tricodec::bitstream;
use tricodec::metrics;
use tricodec::model::Raster;
use tricodec::raster;
use tricodec::search::{self, QualityMetric, SearchConfig, OP_NAMES};
use tricodec::synth;

#[derive(Parser)]
#[command(name = "tricodec", version, about = "Triangulation-based thumbnail codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress an image (PNG or PPM) into a .tri file
    Encode(EncodeArgs),
    /// Reconstruct an image from a .tri file
    Decode(DecodeArgs),
    /// Encode a set of images across grid sizes and report quality metrics
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct EncoderOpts {
    /// Vertex grid dimension g (the grid has g x g candidate points)
    #[arg(long)]
    grid: Option<u32>,
    /// Byte budget for the encoded file
    #[arg(long)]
    budget: Option<usize>,
    /// Random seed for the stochastic search
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder algorithm
    #[arg(long, value_parser = ["baseline", "stochastic"], default_value = "stochastic")]
    algorithm: String,
    /// Mutation operator subset, letters a-g (default: all)
    #[arg(long)]
    ops: Option<String>,
    /// Distortion metric driving the search
    #[arg(long, value_parser = ["mse", "ssim"])]
    metric: Option<String>,
    /// Maximum hill-climbing iterations
    #[arg(long)]
    iters: Option<u64>,
    /// Stop after this many non-improving iterations
    #[arg(long)]
    patience: Option<u64>,
    /// Key=value config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Input image (.png or .ppm)
    input: PathBuf,
    /// Output .tri file
    output: PathBuf,
    /// Square size the input is center-cropped and resized to (0 keeps the
    /// input geometry)
    #[arg(long, default_value_t = 221)]
    size: u32,
    #[command(flatten)]
    opts: EncoderOpts,
}

#[derive(Args)]
struct DecodeArgs {
    /// Input .tri file
    input: PathBuf,
    /// Output image (.png or .ppm)
    output: PathBuf,
    /// Integer upscale factor applied during rendering
    #[arg(long, default_value_t = 1)]
    scale: u32,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of input images (every .png/.ppm inside is used)
    #[arg(long)]
    images: Option<PathBuf>,
    /// Generate this many synthetic test images instead of reading a directory
    #[arg(long)]
    synthetic: Option<u64>,
    /// Comma-separated grid dimensions to sweep
    #[arg(long, default_value = "15,30,52,70,96", value_delimiter = ',')]
    grids: Vec<u32>,
    /// Output CSV path (defaults to stdout)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// CSV of external codec results to summarize alongside ours
    /// (columns: codec,image,bytes,psnr,ssim)
    #[arg(long)]
    external_csv: Option<PathBuf>,
    /// Square size images are center-cropped and resized to
    #[arg(long, default_value_t = 221)]
    size: u32,
    /// Whether the CSV seconds column carries wall time; "off" writes 0.000
    /// so identical invocations produce byte-identical CSVs
    #[arg(long, value_parser = ["on", "off"], default_value = "on")]
    timing: String,
    #[command(flatten)]
    opts: EncoderOpts,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version are not errors
            use clap::error::ErrorKind::*;
            let _ = e.print();
            return if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let result = match cli.command {
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: 1, message: msg.into() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError { code: 2, message: format!("{}: {e}", path.display()) }
}

impl From<search::SearchError> for CliError {
    fn from(e: search::SearchError) -> CliError {
        let code = match &e {
            search::SearchError::BudgetInfeasible { .. } => 4,
            search::SearchError::BadConfig(_) | search::SearchError::TargetTooSmall(..) => 1,
            _ => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<bitstream::BitstreamError> for CliError {
    fn from(e: bitstream::BitstreamError) -> CliError {
        CliError { code: 3, message: e.to_string() }
    }
}

/// Build a search config from a config file (if any) plus flag overrides.
fn build_config(opts: &EncoderOpts) -> Result<SearchConfig, CliError> {
    let mut cfg = SearchConfig::default();
    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg = cfg.apply_key_values(&text).map_err(CliError::from)?;
    }
    if let Some(g) = opts.grid {
        cfg.grid = g;
    }
    if let Some(b) = opts.budget {
        cfg.budget_bytes = b;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(i) = opts.iters {
        cfg.max_iterations = i;
    }
    if let Some(p) = opts.patience {
        cfg.patience = p;
    }
    if let Some(m) = &opts.metric {
        cfg.metric = match m.as_str() {
            "mse" => QualityMetric::Mse,
            _ => QualityMetric::OneMinusSsim,
        };
    }
    if let Some(ops) = &opts.ops {
        cfg = cfg.with_ops(ops).map_err(CliError::from)?;
    }
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

fn ops_string(cfg: &SearchConfig) -> String {
    cfg.op_probs
        .iter()
        .zip(OP_NAMES)
        .filter(|(&p, _)| p > 0.0)
        .map(|(_, n)| n)
        .collect()
}

fn load_image(path: &Path) -> Result<Raster, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("ppm") {
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        return raster::read_ppm(std::io::BufReader::new(file))
            .map_err(|e| CliError { code: 3, message: format!("{}: {e}", path.display()) });
    }
    let img = image::open(path)
        .map_err(|e| io_err(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Raster::new(w, h);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(x, y, p.0);
    }
    Ok(out)
}

fn save_image(path: &Path, r: &Raster) -> Result<(), CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("ppm") {
        let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        return raster::write_ppm(r, std::io::BufWriter::new(file))
            .map_err(|e| io_err(path, e));
    }
    let mut img = image::RgbImage::new(r.width, r.height);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0 = r.get(x, y);
    }
    img.save(path).map_err(|e| io_err(path, e))
}

/// Center-crop to a square and resize to `size` x `size`.
fn preprocess(r: Raster, size: u32) -> Raster {
    if size == 0 || (r.width == size && r.height == size) {
        return r;
    }
    let side = r.width.min(r.height);
    let x0 = (r.width - side) / 2;
    let y0 = (r.height - side) / 2;
    let mut img = image::RgbImage::new(side, side);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0 = r.get(x0 + x, y0 + y);
    }
    let resized = image::imageops::resize(&img, size, size, image::imageops::FilterType::Triangle);
    let mut out = Raster::new(size, size);
    for (x, y, p) in resized.enumerate_pixels() {
        out.set(x, y, p.0);
    }
    out
}

fn encode_one(target: &Raster, cfg: &SearchConfig, algorithm: &str) -> Result<Vec<u8>, CliError> {
    let model = if algorithm == "baseline" {
        search::baseline_encode(target, cfg)?
    } else {
        search::stochastic_encode(target, cfg)?.model
    };
    Ok(bitstream::encode(&model)?)
}

fn cmd_encode(args: EncodeArgs) -> Result<(), CliError> {
    let cfg = build_config(&args.opts)?;
    let target = preprocess(load_image(&args.input)?, args.size);
    let bytes = encode_one(&target, &cfg, &args.opts.algorithm)?;
    fs::write(&args.output, &bytes).map_err(|e| io_err(&args.output, e))?;
    let model = bitstream::decode(&bytes)?;
    let rendered = raster::render(&model).map_err(|e| CliError { code: 3, message: e.to_string() })?;
    let report = metrics::report(&target, &rendered, bytes.len())
        .map_err(|e| CliError { code: 3, message: e.to_string() })?;
    println!(
        "{} -> {}: {} bytes, psnr {:.2} dB, ssim {:.4}",
        args.input.display(),
        args.output.display(),
        report.bytes,
        report.psnr,
        report.ssim
    );
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<(), CliError> {
    if args.scale == 0 {
        return Err(usage("--scale must be at least 1"));
    }
    let bytes = fs::read(&args.input).map_err(|e| io_err(&args.input, e))?;
    let model = bitstream::decode(&bytes)?;
    let rendered = raster::render_scaled(&model, args.scale)
        .map_err(|e| CliError { code: 3, message: e.to_string() })?;
    save_image(&args.output, &rendered)?;
    println!(
        "{} -> {}: {}x{}",
        args.input.display(),
        args.output.display(),
        rendered.width,
        rendered.height
    );
    Ok(())
}

struct BenchRow {
    image: String,
    grid: u32,
    bytes: usize,
    psnr: f64,
    ssim: f64,
    seconds: f64,
    seed: u64,
    ops: String,
}

/// Default byte budget for a grid dimension, scaled between roughly 120
/// bytes at g=15 and 420 bytes at g=96.
fn default_budget(g: u32) -> usize {
    let b = 120.0 + (g as f64 - 15.0) * 300.0 / 81.0;
    b.round().clamp(60.0, 1000.0) as usize
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let base_cfg = build_config(&args.opts)?;
    if args.grids.is_empty() {
        return Err(usage("no grid dimensions given"));
    }
    let mut images: Vec<(String, Raster)> = Vec::new();
    match (&args.images, args.synthetic) {
        (Some(dir), None) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| io_err(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
                        .unwrap_or(false)
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(usage(format!("no .png or .ppm images in {}", dir.display())));
            }
            for p in paths {
                let name = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image")
                    .to_string();
                images.push((name, preprocess(load_image(&p)?, args.size)));
            }
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(usage("--synthetic needs at least 1 image"));
            }
            for i in 0..n {
                images.push((format!("synth{i:02}"), synth_image_sized(i, args.size)));
            }
        }
        (Some(_), Some(_)) => return Err(usage("--images and --synthetic are mutually exclusive")),
        (None, None) => return Err(usage("one of --images or --synthetic is required")),
    }

    let ops = ops_string(&base_cfg);
    let jobs: Vec<(usize, u32)> = (0..images.len())
        .flat_map(|i| args.grids.iter().map(move |&g| (i, g)))
        .collect();
    let results: Result<Vec<BenchRow>, CliError> = jobs
        .par_iter()
        .map(|&(img_idx, grid)| {
            let (name, target) = &images[img_idx];
            let mut cfg = base_cfg.clone();
            cfg.grid = grid;
            if args.opts.budget.is_none() {
                cfg.budget_bytes = default_budget(grid);
            }
            cfg.validate().map_err(CliError::from)?;
            // one independent, reproducible stream per image
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(img_idx as u64);
            let start = Instant::now();
            let model = if args.opts.algorithm == "baseline" {
                search::baseline_encode(target, &cfg)?
            } else {
                search::stochastic_encode_with_rng(target, &cfg, &mut rng)?.model
            };
            let seconds = if args.timing == "off" { 0.0 } else { start.elapsed().as_secs_f64() };
            let bytes = bitstream::encode(&model)?;
            let decoded = bitstream::decode(&bytes)?;
            let rendered = raster::render(&decoded)
                .map_err(|e| CliError { code: 3, message: e.to_string() })?;
            let report = metrics::report(target, &rendered, bytes.len())
                .map_err(|e| CliError { code: 3, message: e.to_string() })?;
            Ok(BenchRow {
                image: name.clone(),
                grid,
                bytes: report.bytes,
                psnr: report.psnr,
                ssim: report.ssim,
                seconds,
                seed: cfg.seed,
                ops: ops.clone(),
            })
        })
        .collect();
    let mut rows = results?;
    rows.sort_by(|a, b| a.image.cmp(&b.image).then(a.grid.cmp(&b.grid)));

    let mut wtr: csv::Writer<Box<dyn std::io::Write>> = match &args.csv {
        Some(path) => csv::Writer::from_writer(Box::new(
            fs::File::create(path).map_err(|e| io_err(path, e))?,
        )),
        None => csv::Writer::from_writer(Box::new(std::io::stdout())),
    };
    wtr.write_record(["image", "grid", "bytes", "psnr", "ssim", "seconds", "seed", "ops"])
        .map_err(|e| usage(e.to_string()))?;
    for r in &rows {
        wtr.write_record([
            r.image.clone(),
            r.grid.to_string(),
            r.bytes.to_string(),
            format!("{:.4}", r.psnr),
            format!("{:.6}", r.ssim),
            format!("{:.3}", r.seconds),
            r.seed.to_string(),
            r.ops.clone(),
        ])
        .map_err(|e| usage(e.to_string()))?;
    }
    wtr.flush().map_err(|e| usage(e.to_string()))?;
    drop(wtr);

    // per-grid summary on stderr so it never mixes into CSV on stdout
    for &g in &args.grids {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.grid == g).collect();
        let n = sel.len() as f64;
        eprintln!(
            "grid {g}: mean {:.1} bytes, {:.2} dB psnr, {:.4} ssim over {} images",
            sel.iter().map(|r| r.bytes as f64).sum::<f64>() / n,
            sel.iter().map(|r| r.psnr).sum::<f64>() / n,
            sel.iter().map(|r| r.ssim).sum::<f64>() / n,
            sel.len()
        );
    }

    if let Some(path) = &args.external_csv {
        summarize_external(path)?;
    }
    Ok(())
}

fn synth_image_sized(index: u64, size: u32) -> Raster {
    let size = if size == 0 { 221 } else { size };
    synth::synth_image(index, size, size)
}

/// Print mean quality per codec from an external results CSV with columns
/// codec,image,bytes,psnr,ssim (header row required).
fn summarize_external(path: &Path) -> Result<(), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut per_codec: std::collections::BTreeMap<String, (f64, f64, f64, usize)> =
        std::collections::BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if record.len() < 5 {
            return Err(usage(format!(
                "{}: expected columns codec,image,bytes,psnr,ssim",
                path.display()
            )));
        }
        let parse = |i: usize| -> Result<f64, CliError> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| usage(format!("{}: bad number '{}'", path.display(), &record[i])))
        };
        let entry = per_codec.entry(record[0].to_string()).or_insert((0.0, 0.0, 0.0, 0));
        entry.0 += parse(2)?;
        entry.1 += parse(3)?;
        entry.2 += parse(4)?;
        entry.3 += 1;
    }
    for (codec, (bytes, psnr, ssim, n)) in per_codec {
        let n_f = n as f64;
        eprintln!(
            "external {codec}: mean {:.1} bytes, {:.2} dB psnr, {:.4} ssim over {n} images",
            bytes / n_f,
            psnr / n_f,
            ssim / n_f
        );
    }
    Ok(())
}
