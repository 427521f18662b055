use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use patchrag::grid::{partition, BitMatrix, SourceImage, DEFAULT_CELL_SIZE};
use patchrag::harness::{
    run_and_write, run_bench, run_single, write_generated_suite, ExperimentConfig, KChoice,
    ProviderKind, ProviderSource, Providers, SuiteSpec, VariantKind,
};
use patchrag::layout::{spatial_layout, strip_layout_by_score, StripOrder};
use patchrag::providers::instance::read_suite;
use patchrag::providers::{HttpProvider, ReplayTransport, SyntheticInstance};
use patchrag::retrieval::{score_crops, top_k, EmbeddingCache, ScoreOptions};
use patchrag::search::write_trace_jsonl;
use patchrag::Error;

#[derive(Parser)]
#[command(
    name = "patchrag",
    version,
    about = "Retrieval-augmented perception over large images"
)]
struct Cli {
    /// TOML file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut an image into crops and list their rectangles.
    Tile {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CELL_SIZE)]
        cell_size: u32,
        /// Also write every crop as PNG into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every crop against a question.
    Score {
        #[command(flatten)]
        input: ImageInput,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Compose a canvas from a retention mask or the top-K crops.
    Layout {
        #[command(flatten)]
        input: ImageInput,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Mask rows of 0/1 separated by '/', e.g. "0110/1001".
        #[arg(long, conflicts_with = "k")]
        mask: Option<String>,
        /// Keep the K best-scoring crops.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value_t = LayoutKind::Spatial)]
        kind: LayoutKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for the smallest answerable canvas and answer the question.
    Search {
        #[command(flatten)]
        input: ImageInput,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Write the visit trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the selected canvas as PNG.
        #[arg(long)]
        canvas: Option<PathBuf>,
    },
    /// Generate a seeded synthetic suite.
    GenSuite {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        #[arg(long, default_value_t = 32)]
        cell_size: u32,
        #[arg(long, default_value_t = 0.5)]
        single_fraction: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run pipeline variants over a suite and write reports.
    Run {
        #[command(flatten)]
        batch: BatchArgs,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<VariantKind>>,
        /// Comma-separated K values for the fixed-K variants ("all" allowed).
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<KChoice>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare best-first search against exhaustive enumeration.
    Bench {
        #[command(flatten)]
        batch: BatchArgs,
        /// Write the comparison as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutKind {
    Spatial,
    StripScore,
    StripAppearance,
}

#[derive(Args)]
struct ImageInput {
    /// Image file (PNG, JPEG, or headered raw RGB with .raw/.rgb).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    question: Option<String>,
    #[arg(long)]
    cell_size: Option<u32>,
    /// Suite file holding the instance for the oracle provider.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Instance id inside --instance; defaults to the first one.
    #[arg(long)]
    instance_id: Option<String>,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum)]
    provider: Option<ProviderChoice>,
    /// Model server base URL.
    #[arg(long)]
    base_url: Option<String>,
    /// Replay a recorded HTTP session instead of contacting a server.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ProviderChoice {
    Oracle,
    Http,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    provider: ProviderArgs,
}

struct Resolved {
    image: SourceImage,
    question: String,
    cell_size: u32,
    providers: Providers,
}

fn load_config(path: Option<&Path>) -> patchrag::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_toml_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_provider_args(cfg: &mut ExperimentConfig, args: &ProviderArgs) {
    if let Some(p) = args.provider {
        cfg.provider = match p {
            ProviderChoice::Oracle => ProviderKind::Oracle,
            ProviderChoice::Http => ProviderKind::Http,
        };
    }
    if args.replay.is_some() {
        cfg.provider = ProviderKind::Http;
    }
    if let Some(url) = &args.base_url {
        cfg.http.base_url = url.clone();
    }
    if let Some(t) = args.threshold {
        cfg.search.threshold = t;
    }
}

fn http_providers(cfg: &ExperimentConfig, args: &ProviderArgs) -> patchrag::Result<Providers> {
    match &args.replay {
        Some(path) => {
            let transport = ReplayTransport::from_reader(BufReader::new(File::open(path)?))?;
            Ok(Providers::shared(HttpProvider::with_transport(
                transport,
                cfg.http.max_in_flight,
            )))
        }
        None => Ok(Providers::shared(HttpProvider::connect(&cfg.http)?)),
    }
}

fn provider_source(
    cfg: &ExperimentConfig,
    args: &ProviderArgs,
) -> patchrag::Result<ProviderSource> {
    match cfg.provider {
        ProviderKind::Oracle => Ok(ProviderSource::Oracle),
        ProviderKind::Http => Ok(ProviderSource::Shared(http_providers(cfg, args)?)),
    }
}

fn load_instance(path: &Path, id: Option<&str>) -> patchrag::Result<SyntheticInstance> {
    let suite = read_suite(BufReader::new(File::open(path)?))?;
    let found = match id {
        Some(id) => suite.into_iter().find(|i| i.id == id),
        None => suite.into_iter().next(),
    };
    found.ok_or_else(|| Error::InvalidInput(format!("instance not found in {}", path.display())))
}

fn resolve(
    input: &ImageInput,
    pargs: &ProviderArgs,
    cfg: &ExperimentConfig,
) -> anyhow::Result<Resolved> {
    let instance = match &input.instance {
        Some(p) => Some(load_instance(p, input.instance_id.as_deref())?),
        None => None,
    };
    let image = match (&input.image, &instance) {
        (Some(p), _) => SourceImage::load(p)?,
        (None, Some(inst)) => inst.render()?,
        (None, None) => {
            return Err(Error::InvalidInput("--image or --instance is required".into()).into())
        }
    };
    let question = match (&input.question, &instance) {
        (Some(q), _) => q.clone(),
        (None, Some(inst)) => inst.question.clone(),
        (None, None) => return Err(Error::InvalidInput("--question is required".into()).into()),
    };
    let cell_size = input
        .cell_size
        .or(instance.as_ref().map(|i| i.cell_size))
        .unwrap_or(DEFAULT_CELL_SIZE);
    let providers = match cfg.provider {
        ProviderKind::Oracle => {
            let inst = instance.ok_or_else(|| {
                Error::InvalidInput("the oracle provider needs --instance".into())
            })?;
            Providers::oracle(&inst, cfg.search.threshold)?
        }
        ProviderKind::Http => http_providers(cfg, pargs)?,
    };
    Ok(Resolved {
        image,
        question,
        cell_size,
        providers,
    })
}

fn parse_mask(text: &str) -> patchrag::Result<BitMatrix> {
    let rows: Vec<Vec<u8>> = text
        .split('/')
        .map(|r| {
            r.trim()
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => Err(Error::InvalidInput(format!("bad mask character {c:?}"))),
                })
                .collect()
        })
        .collect::<patchrag::Result<_>>()?;
    let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
    BitMatrix::from_rows(&refs)
}

fn load_suite_from(
    batch: &BatchArgs,
    cfg: &ExperimentConfig,
) -> patchrag::Result<Vec<SyntheticInstance>> {
    let path = batch
        .suite
        .clone()
        .or_else(|| cfg.suite.clone())
        .ok_or_else(|| Error::InvalidInput("--suite is required".into()))?;
    read_suite(BufReader::new(File::open(&path).map_err(|e| {
        Error::InvalidInput(format!("{}: {e}", path.display()))
    })?))
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let opts = |cfg: &ExperimentConfig| ScoreOptions {
        max_in_flight: cfg.max_in_flight,
    };
    match cli.cmd {
        Command::Tile {
            image,
            cell_size,
            out,
        } => {
            let img = SourceImage::load(&image)
                .with_context(|| format!("reading {}", image.display()))?;
            let grid = partition(img, cell_size)?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
            }
            let mut crops = Vec::new();
            for cell in grid.cells() {
                let r = grid.rect(cell.row, cell.col)?;
                if let Some(dir) = &out {
                    let crop = grid.crop_at(cell.row, cell.col)?;
                    crop.to_image()?
                        .save_png(dir.join(format!("crop_{}_{}.png", cell.row, cell.col)))?;
                }
                crops.push(json!({"row": cell.row, "col": cell.col, "x": r.x, "y": r.y, "w": r.w, "h": r.h}));
            }
            let report = json!({"rows": grid.rows(), "cols": grid.cols(), "cell_size": cell_size, "crops": crops});
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Score { input, provider } => {
            apply_provider_args(&mut cfg, &provider);
            cfg.validate()?;
            let r = resolve(&input, &provider, &cfg)?;
            let grid = partition(r.image, r.cell_size)?;
            let scores = score_crops(
                &r.question,
                &grid,
                r.providers.embed.as_ref(),
                &EmbeddingCache::new(),
                opts(&cfg),
            )?;
            let rows: Vec<Vec<f64>> = (0..scores.rows())
                .map(|i| (0..scores.cols()).map(|j| scores.get(i, j)).collect())
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({"question": r.question, "scores": rows}))?
            );
        }
        Command::Layout {
            input,
            provider,
            mask,
            k,
            kind,
            out,
        } => {
            apply_provider_args(&mut cfg, &provider);
            cfg.validate()?;
            let needs_scores = mask.is_none() || !matches!(kind, LayoutKind::Spatial);
            let (grid, scores) = if needs_scores {
                let r = resolve(&input, &provider, &cfg)?;
                let grid = partition(r.image, r.cell_size)?;
                let s = score_crops(
                    &r.question,
                    &grid,
                    r.providers.embed.as_ref(),
                    &EmbeddingCache::new(),
                    opts(&cfg),
                )?;
                (grid, Some(s))
            } else {
                let image = match (&input.image, &input.instance) {
                    (Some(p), _) => SourceImage::load(p)?,
                    (None, Some(p)) => load_instance(p, input.instance_id.as_deref())?.render()?,
                    _ => bail!(Error::InvalidInput(
                        "--image or --instance is required".into()
                    )),
                };
                (
                    partition(image, input.cell_size.unwrap_or(DEFAULT_CELL_SIZE))?,
                    None,
                )
            };
            let mask = match (mask, k) {
                (Some(m), _) => parse_mask(&m)?,
                (None, Some(k)) => top_k(scores.as_ref().expect("scored"), k)?,
                (None, None) => bail!(Error::InvalidInput("--mask or --k is required".into())),
            };
            let canvas = match kind {
                LayoutKind::Spatial => spatial_layout(&grid, &mask)?,
                LayoutKind::StripScore => strip_layout_by_score(
                    &grid,
                    &mask,
                    scores.as_ref().expect("scored"),
                    StripOrder::ScoreAscending,
                )?,
                LayoutKind::StripAppearance => strip_layout_by_score(
                    &grid,
                    &mask,
                    scores.as_ref().expect("scored"),
                    StripOrder::Appearance,
                )?,
            };
            canvas.image.save_png(&out)?;
            let placed: Vec<_> = canvas
                .placements
                .iter()
                .map(|p| json!({"canvas": [p.canvas.row, p.canvas.col], "source": [p.source.row, p.source.col]}))
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "canvas_rows": canvas.n_rows(),
                    "canvas_cols": canvas.n_cols(),
                    "width": canvas.image.width(),
                    "height": canvas.image.height(),
                    "placements": placed,
                }))?
            );
        }
        Command::Search {
            input,
            provider,
            trace,
            canvas,
        } => {
            apply_provider_args(&mut cfg, &provider);
            cfg.validate()?;
            let r = resolve(&input, &provider, &cfg)?;
            let grid_image = r.image;
            let out = run_single(
                grid_image.clone(),
                &r.question,
                r.cell_size,
                &r.providers,
                &cfg.search,
                opts(&cfg),
            )?;
            if let Some(path) = &trace {
                write_trace_jsonl(&out.trace, File::create(path)?)?;
            }
            if let Some(path) = &canvas {
                let grid = partition(grid_image, r.cell_size)?;
                let mask = BitMatrix::from_cells(
                    grid.rows(),
                    grid.cols(),
                    out.final_cells.iter().copied(),
                )?;
                spatial_layout(&grid, &mask)?.image.save_png(path)?;
            }
            let cells: Vec<[usize; 2]> = out.final_cells.iter().map(|c| [c.row, c.col]).collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "answer": out.answer,
                    "selected_k": out.selected_k,
                    "confidence": out.confidence,
                    "expansions": out.expansions,
                    "evaluations": out.evaluations,
                    "termination": format!("{:?}", out.termination),
                    "cells": cells,
                }))?
            );
        }
        Command::GenSuite {
            count,
            rows,
            cols,
            cell_size,
            single_fraction,
            seed,
            out,
        } => {
            let spec = SuiteSpec {
                count,
                grid_rows: rows,
                grid_cols: cols,
                cell_size,
                single_fraction,
                seed,
            };
            let suite = write_generated_suite(&spec, &out)?;
            eprintln!("wrote {} instances to {}", suite.len(), out.display());
        }
        Command::Run {
            batch,
            variants,
            k,
            out,
        } => {
            apply_provider_args(&mut cfg, &batch.provider);
            if let Some(w) = batch.workers {
                cfg.workers = w;
            }
            if let Some(v) = variants {
                cfg.variants = v;
            }
            if let Some(k) = k {
                cfg.k_values = k;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let suite = load_suite_from(&batch, &cfg)?;
            let source = provider_source(&cfg, &batch.provider)?;
            let report = run_and_write(&suite, &cfg, &source, &cfg.output_dir)?;
            for s in &report.summary.variants {
                let k = s.k.map(|k| format!(" k={k}")).unwrap_or_default();
                println!(
                    "{}{k}: accuracy {:.3} mean K {:.2} failures {} ({:.1} instances/min)",
                    s.variant, s.accuracy, s.mean_k_selected, s.failures, s.throughput_per_minute
                );
            }
            eprintln!("reports written to {}", cfg.output_dir.display());
        }
        Command::Bench { batch, out } => {
            apply_provider_args(&mut cfg, &batch.provider);
            if let Some(w) = batch.workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let suite = load_suite_from(&batch, &cfg)?;
            let source = provider_source(&cfg, &batch.provider)?;
            let report = run_bench(&suite, &cfg, &source)?;
            for s in [&report.search, &report.exhaustive] {
                println!(
                    "{}: accuracy {:.3} mean expansions {:.2} mean evaluations {:.2} {:.1} instances/min",
                    s.variant, s.accuracy, s.mean_expansions, s.mean_evaluations, s.throughput_per_minute
                );
            }
            println!(
                "expansion ratio {:.3} evaluation ratio {:.3} speedup {:.2}x",
                report.expansion_ratio, report.evaluation_ratio, report.speedup
            );
            if let Some(path) = out {
                std::fs::write(path, serde_json::to_vec_pretty(&report)?)?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::FailureThreshold { .. }) => 1,
        Some(Error::Provider { .. } | Error::SearchAborted { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
