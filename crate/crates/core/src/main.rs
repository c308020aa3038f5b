use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msreg::error::{Error, Result};
use msreg::harris::{write_keypoints_csv, DetectorConfig};
use msreg::io::{load_image, save_image};
use msreg::matching::{write_matches_csv, MatchConfig};
use msreg::pipeline::{register, ModelChoice, PipelineConfig, RegistrationResult};
use msreg::piifd::write_descriptors;
use msreg::render::{render_checkerboard, render_fusion};
use msreg::scale_space::{build_pyramid, PyramidConfig};
use msreg::synthetic::{run_bench, textured_image, BenchConfig, IntensityMode};
use msreg::transform::warp;

#[derive(Parser)]
#[command(name = "msreg", version, about = "Multi-scale Harris-PIIFD multimodal image registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving image onto a fixed image.
    Register(RegisterArgs),
    /// Synthetic ground-truth benchmark on a single source image.
    Bench(BenchArgs),
    /// Write a synthetic textured test image.
    Texture(TextureArgs),
}

#[derive(Args)]
struct TextureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, default_value = "affine")]
    model: ModelChoice,
    #[arg(long, default_value_t = 3)]
    octaves: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 1000)]
    max_points: usize,
    #[arg(long, default_value_t = 500)]
    min_points: usize,
    #[arg(long, default_value_t = 5)]
    lnms_radius: usize,
    #[arg(long, default_value_t = 40)]
    window: usize,
    #[arg(long, default_value_t = 0.85)]
    match_threshold: f64,
    #[arg(long, default_value_t = 200)]
    max_checks: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        let defaults = PipelineConfig::default();
        PipelineConfig {
            model: self.model,
            pyramid: PyramidConfig::new(self.octaves, self.layers),
            detector: DetectorConfig {
                max_points: self.max_points,
                min_points: self.min_points,
                lnms_radius: self.lnms_radius,
                ..defaults.detector
            },
            window: self.window,
            matching: MatchConfig { threshold: self.match_threshold, max_checks: self.max_checks },
            ..defaults
        }
    }
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long, default_value_t = 0)]
    fixed_band: usize,
    #[arg(long, default_value_t = 0)]
    moving_band: usize,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for interface uniformity; registration itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkerboard tile side in pixels.
    #[arg(long, default_value_t = 32)]
    tile: usize,
    /// Also write pyramid levels, keypoints and descriptors.
    #[arg(long)]
    dump: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long, default_value_t = 0)]
    band: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 30.0)]
    rotation_range: f64,
    #[arg(long, default_value = "0.7:1.4", value_parser = parse_range)]
    scale_range: (f64, f64),
    #[arg(long, default_value_t = 20.0)]
    translation_range: f64,
    /// identity, invert, gamma[:G] or affine[:A,B].
    #[arg(long, default_value = "identity")]
    intensity: IntensityMode,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Moving-image resolution divisor.
    #[arg(long, default_value_t = 1)]
    downsample: usize,
    #[arg(long, default_value_t = 2.0)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(lo > 0.0 && lo <= hi) {
        return Err("need 0 < LO <= HI".into());
    }
    Ok((lo, hi))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_report(path: &Path, args: &RegisterArgs, res: &RegistrationResult) -> Result<()> {
    let t = &res.timings;
    let m = &res.transform.matrix;
    write_with(path, |w| {
        writeln!(w, "{{")?;
        writeln!(w, "  \"fixed\": {:?},", args.fixed.display().to_string())?;
        writeln!(w, "  \"moving\": {:?},", args.moving.display().to_string())?;
        writeln!(w, "  \"model\": \"{}\",", res.transform.kind)?;
        writeln!(w, "  \"fixed_keypoints\": {},", res.fixed_keypoints.len())?;
        writeln!(w, "  \"moving_keypoints\": {},", res.moving_keypoints.len())?;
        writeln!(w, "  \"fixed_descriptors\": {},", res.fixed_descriptors)?;
        writeln!(w, "  \"moving_descriptors\": {},", res.moving_descriptors)?;
        writeln!(w, "  \"initial_matches\": {},", res.initial_matches.len())?;
        writeln!(w, "  \"filtered_matches\": {},", res.filtered_matches.len())?;
        writeln!(w, "  \"rmse\": {:?},", res.transform.rmse)?;
        let row = |r: &[f64; 3]| format!("[{:?}, {:?}, {:?}]", r[0], r[1], r[2]);
        writeln!(w, "  \"matrix\": [{}, {}, {}],", row(&m[0]), row(&m[1]), row(&m[2]))?;
        writeln!(
            w,
            "  \"timings_ms\": {{\"features\": {:.3}, \"matching\": {:.3}, \"filtering\": {:.3}, \"estimation\": {:.3}}}",
            t.features_ms, t.matching_ms, t.filtering_ms, t.estimation_ms
        )?;
        writeln!(w, "}}")
    })
}

fn dump_intermediates(dir: &Path, fixed: &msreg::image::GrayImage, moving: &msreg::image::GrayImage, cfg: &PipelineConfig, res: &RegistrationResult) -> Result<()> {
    for (name, img, kps) in [("fixed", fixed, &res.fixed_keypoints), ("moving", moving, &res.moving_keypoints)] {
        let sub = dir.join(format!("{name}_pyramid"));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let prepared = msreg::image::denoise(&msreg::image::normalize(img), cfg.denoise_sigma)?;
        let pyr = build_pyramid(&prepared, &cfg.pyramid)?;
        pyr.dump(&sub)?;
        write_with(&dir.join(format!("{name}_keypoints.csv")), |w| write_keypoints_csv(kps, w))?;
        let bundle = msreg::piifd::describe_multiscale(&pyr, kps, cfg.window);
        write_with(&dir.join(format!("{name}_descriptors.bin")), |w| write_descriptors(&bundle, w))?;
    }
    Ok(())
}

fn run_register(args: &RegisterArgs) -> Result<()> {
    let mut cfg = args.pipeline.config();
    cfg.fixed_band = args.fixed_band;
    cfg.moving_band = args.moving_band;
    let fixed = load_image(&args.fixed, args.fixed_band)?;
    let moving = load_image(&args.moving, args.moving_band)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let res = register(&fixed, &moving, &cfg)?;
    let out = &args.out;
    write_with(&out.join("transform.txt"), |w| res.transform.write_to(w))?;
    write_with(&out.join("matches.csv"), |w| {
        write_matches_csv(&res.initial_matches, &res.filtered_matches, &res.fixed_keypoints, &res.moving_keypoints, w)
    })?;
    let warped = warp(&moving, &res.transform, fixed.dims())?;
    let (fixed_n, warped_n) = (msreg::image::normalize(&fixed), msreg::image::normalize(&warped));
    save_image(&warped_n, out.join("warped.png"))?;
    save_image(&render_checkerboard(&fixed_n, &warped_n, args.tile)?, out.join("checkerboard.png"))?;
    save_image(&render_fusion(&fixed_n, &warped_n, 0.5)?, out.join("fusion.png"))?;
    write_report(&out.join("report.json"), args, &res)?;
    if args.dump {
        dump_intermediates(out, &fixed, &moving, &cfg, &res)?;
    }
    println!(
        "{} model, {} -> {} matches, rmse {:.4} px; outputs in {}",
        res.transform.kind,
        res.initial_matches.len(),
        res.filtered_matches.len(),
        res.transform.rmse,
        out.display()
    );
    Ok(())
}

fn run_bench_cmd(args: &BenchArgs) -> Result<()> {
    let source = msreg::image::normalize(&load_image(&args.source, args.band)?);
    let cfg = BenchConfig {
        trials: args.trials,
        rotation_range_deg: args.rotation_range,
        scale_range: args.scale_range,
        translation_range: args.translation_range,
        intensity: args.intensity,
        noise: args.noise,
        downsample: args.downsample.max(1),
        seed: args.seed,
        eps: args.eps,
        pipeline: args.pipeline.config(),
    };
    println!("# synthetic ground truth: moving = {}(warp(source)) + N(0, {}^2), downsample {}", cfg.intensity, cfg.noise, cfg.downsample);
    println!("{:>5} {:>8} {:>6} {:>8} {:>8} {:>9} {:>9} {:>11} {:>7}", "trial", "rot_deg", "scale", "tx", "ty", "filtered", "n_correct", "corner_rmse", "success");
    let summary = run_bench(&source, &cfg)?;
    for (i, t) in summary.trials.iter().enumerate() {
        let (nf, nc, rmse) = match &t.report {
            Some(r) => (r.n_filtered.to_string(), r.n_correct.to_string(), format!("{:.4}", r.corner_rmse)),
            None => ("-".into(), "-".into(), t.failure.clone().unwrap_or_default()),
        };
        println!(
            "{:>5} {:>8.3} {:>6.3} {:>8.3} {:>8.3} {:>9} {:>9} {:>11} {:>7}",
            i, t.rotation_deg, t.scale, t.translation.0, t.translation.1, nf, nc, rmse, t.success()
        );
    }
    let n_ok = summary.trials.iter().filter(|t| t.success()).count();
    println!(
        "summary: success {}/{} ({:.1}%), mean corner_rmse {:.4} px",
        n_ok,
        summary.trials.len(),
        100.0 * summary.success_rate,
        summary.mean_corner_rmse
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // exit code 2 is reserved for detection failures
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = match &cli.command {
        Command::Register(a) => a.pipeline.threads,
        Command::Bench(a) => a.pipeline.threads,
        Command::Texture(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let outcome = pool.install(|| match &cli.command {
        Command::Register(a) => run_register(a),
        Command::Bench(a) => run_bench_cmd(a),
        Command::Texture(a) => save_image(&textured_image(a.width, a.height, a.seed), &a.out),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
