use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use forge_core::diffusion::{NoiseSchedule, SchedulePreset};
use forge_core::io::read_image;
use forge_core::BinaryMask;
use forge_gateway::MockGateway;
use forge_pipeline::build::{make_gateway, BuildOptions};
use forge_pipeline::eval::{evaluate, load_set, RegionCrop};
use forge_pipeline::manifest::{read_manifest, MANIFEST_FILE};
use forge_pipeline::{fixtures, prompts, review, stats, PipelineConfig, PipelineError, Result};

#[derive(Parser)]
#[command(name = "forge", version, about = "Build affordance-insertion tetrads from raw images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Use the in-process mock gateway.
    #[arg(long)]
    mock: bool,
    /// Stop after committing this many sources (simulates an interruption).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input_dir = v.clone();
        }
        if let Some(v) = &self.output {
            cfg.output_dir = v.clone();
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.mock |= self.mock;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over every unprocessed input image.
    Build(RunArgs),
    /// Continue an interrupted build; requires an existing manifest.
    Resume(RunArgs),
    /// Print the per-stage cascade report for an output directory.
    Stats {
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Also compute IS/FID of kept foregrounds versus raw candidates.
        #[arg(long)]
        metrics: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mock: bool,
        /// Write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Rasterize every record's prompt into a latent-resolution position map.
    EncodePrompts {
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Destination directory; defaults to <output>/pmap.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Write forward-noised frames of an image (and mask) at chosen steps.
    NoisePreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,100,250,500,750,999")]
        steps: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "linear")]
        schedule: Schedule,
        #[arg(long)]
        dest: PathBuf,
    },
    /// Compare a generated image set against a reference set.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum, default_value = "prompt-box")]
        crop: RegionCrop,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mock: bool,
        /// Machine-readable report destination.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the review API over the candidates of an output directory.
    ServeReview {
        #[arg(long, default_value = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        token: Option<String>,
    },
    /// Serve the mock gateway over HTTP.
    ServeMockGateway {
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write the synthetic three-image input set.
    MakeFixtures {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Schedule {
    Linear,
    ScaledLinear,
}

fn load_config(path: Option<&Path>, mock: bool) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.mock |= mock;
    Ok(cfg)
}

fn addr(host: &str, port: u16) -> Result<SocketAddr> {
    format!("{host}:{port}").parse().map_err(|e| PipelineError::Config(format!("address {host}:{port}: {e}")))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| PipelineError::Io { path: path.into(), source })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(args) => run_build(&args, false),
        Command::Resume(args) => run_build(&args, true),
        Command::Stats { output, metrics, config, mock, json } => {
            let cfg = load_config(config.as_deref(), mock)?;
            let path = output.join(MANIFEST_FILE);
            let report = stats::stats(&path, &cfg.qc())?;
            print!("{}", report.render());
            let mut value = serde_json::to_value(&report).expect("report serializes");
            if metrics {
                let manifest = read_manifest(&path)?;
                let gw = make_gateway(&cfg)?;
                let m = stats::corpus_metrics(&output, &manifest, gw.as_ref())?;
                println!("\nIS kept: {:?}  IS raw: {:?}  FID kept-vs-raw: {:?}", m.inception_score_kept, m.inception_score_raw, m.fid_kept_vs_raw);
                value["metrics"] = serde_json::to_value(&m).expect("metrics serialize");
            }
            if let Some(p) = json {
                write_json(&p, &value)?;
            }
            Ok(())
        }
        Command::EncodePrompts { output, dest } => {
            let manifest = read_manifest(&output.join(MANIFEST_FILE))?;
            let dest = dest.unwrap_or_else(|| output.join("pmap"));
            let n = prompts::encode_prompts(&output, &manifest, &dest)?;
            println!("{n} position maps written to {}", dest.display());
            Ok(())
        }
        Command::NoisePreview { image, mask, steps, seed, schedule, dest } => {
            let img = read_image(&image)?;
            let mask = match mask {
                Some(p) => {
                    let m = read_image(&p)?;
                    let bits = (0..m.pixel_count()).map(|i| m.luma_at(i) >= 128.0).collect();
                    Some(BinaryMask::new(m.width(), m.height(), bits)?)
                }
                None => None,
            };
            let preset = match schedule {
                Schedule::Linear => SchedulePreset::Linear,
                Schedule::ScaledLinear => SchedulePreset::ScaledLinear,
            };
            let sched = NoiseSchedule::preset(preset, 1000)?;
            let files = prompts::noise_preview(&img, mask.as_ref(), &steps, &sched, seed, &dest)?;
            println!("{} frames written to {}", files.len(), dest.display());
            Ok(())
        }
        Command::Eval { generated, reference, crop, config, mock, report } => {
            let cfg = load_config(config.as_deref(), mock)?;
            let gw = make_gateway(&cfg)?;
            let r = evaluate(&load_set(&generated)?, &load_set(&reference)?, gw.as_ref(), crop)?;
            print!("{}", r.render());
            if let Some(p) = report {
                write_json(&p, &r)?;
            }
            Ok(())
        }
        Command::ServeReview { output, port, host, token } => {
            let state = review::app_state(&output, token)?;
            println!("review api on http://{host}:{port}/api/pending");
            forge_review::server::run_blocking(addr(&host, port)?, Arc::new(state))
                .map_err(|source| PipelineError::Io { path: output, source })
        }
        Command::ServeMockGateway { port, host } => {
            let bound = forge_gateway::server::spawn(addr(&host, port)?, Arc::new(MockGateway::new()))
                .map_err(|source| PipelineError::Io { path: PathBuf::from(&host), source })?;
            println!("mock gateway on http://{bound}");
            loop {
                std::thread::park();
            }
        }
        Command::MakeFixtures { dir } => {
            fixtures::write_fixture_set(&dir)?;
            println!("fixtures written to {}", dir.display());
            Ok(())
        }
    }
}

fn run_build(args: &RunArgs, resume: bool) -> Result<()> {
    let cfg = args.config()?;
    cfg.validate()?;
    let gw = make_gateway(&cfg)?;
    let opts = BuildOptions { stop_after: args.stop_after };
    let summary = if resume {
        forge_pipeline::resume(&cfg, gw.as_ref(), &opts)?
    } else {
        forge_pipeline::build(&cfg, gw.as_ref(), &opts)?
    };
    let c = &summary.counts;
    println!(
        "sources: {} total, {} already done, {} processed ({} failed)",
        summary.sources_total, summary.sources_already_done, summary.sources_processed, summary.sources_failed
    );
    println!("candidates: {} segmented, {} after NMS", c.segmented, c.after_nms);
    if let Some(r) = &c.cascade {
        print!("{}", r.render_table());
    }
    println!("inpainting gate kept: {}\nrecords written: {}", c.after_ssim, summary.records_out);
    if summary.interrupted {
        println!("stopped early; run `forge resume` to continue");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
