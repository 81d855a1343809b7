//! Command-line driver for the build / downscale / upscale / metrics pipeline.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::backend::{connect_with, ClientOptions, EndpointSpec};
use crate::error::{Error, Result};
use crate::hier_sr::{blockwise_upscale, hierarchical_downscale, hierarchical_upscale};
use crate::io::{read_tree, read_volume, write_tree, write_volume};
use crate::metrics::{value_span, MetricReport};
use crate::octree::{build_sr_octree, BuildConfig};
use crate::resample::{Downscaler, Linear, Nearest, UpscalerHierarchy};
use crate::synthetic::{gen_synthetic, SyntheticKind};

#[derive(Debug, Parser)]
#[command(
    name = "hiersr",
    version,
    about = "SR-octree construction and hierarchical super resolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an SR-octree from a volume.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 2)]
        min_chunk: usize,
        #[arg(long, default_value_t = 0)]
        min_level: u32,
        #[arg(long, default_value_t = 3)]
        max_level: u32,
        #[arg(long, default_value = "mean")]
        downscaler: Downscaler,
        #[arg(long)]
        output: PathBuf,
    },
    /// Hierarchically downscale a tree to one uniform low-resolution grid.
    Downscale {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Hierarchical super resolution back to full resolution.
    Upscale(UpscaleArgs),
    /// Per-leaf upscaling baseline.
    UpscaleBlockwise(UpscaleArgs),
    /// Compare a reconstruction `b` against a reference `a`.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Leaf layout, enables the seam score.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Report path; `.json` gets JSON, anything else `key=value` lines.
        #[arg(long)]
        out: PathBuf,
        /// PSNR/SSIM data range; defaults to the value span of `a`.
        #[arg(long)]
        data_range: Option<f64>,
    },
    /// Print tree statistics.
    Info {
        #[arg(long)]
        tree: PathBuf,
    },
    /// Write the per-voxel leaf level as a volume.
    Levelmap {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic test volume.
    Gen {
        #[arg(long)]
        kind: SyntheticKind,
        /// e.g. 64x64x64 or 64,64
        #[arg(long, value_parser = parse_dims)]
        dims: Dims,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
struct UpscaleArgs {
    #[arg(long)]
    tree: PathBuf,
    /// Low-resolution grid; computed from the tree when omitted.
    #[arg(long)]
    lr: Option<PathBuf>,
    /// nearest | linear | model:<spec>[,<spec>...]
    #[arg(long, value_parser = parse_backend)]
    backend: Backend,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone)]
struct Dims(Vec<usize>);

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let dims: std::result::Result<Vec<usize>, _> =
        s.split(['x', ',']).map(|p| p.trim().parse()).collect();
    match dims {
        Ok(d) if (2..=3).contains(&d.len()) && d.iter().all(|&n| n > 0) => Ok(Dims(d)),
        _ => Err(format!("`{s}` is not 2 or 3 positive sizes like 64x64x64")),
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Nearest,
    Linear,
    Model(Vec<EndpointSpec>),
}

/// Splits `a,b` on commas that start a new endpoint, so exec commands may
/// contain commas of their own.
fn split_specs(list: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, _) in list.match_indices(',') {
        let rest = &list[i + 1..];
        if rest.starts_with("exec:") || rest.starts_with("tcp:") {
            out.push(&list[start..i]);
            start = i + 1;
        }
    }
    out.push(&list[start..]);
    out
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    match s {
        "nearest" => Ok(Backend::Nearest),
        "linear" => Ok(Backend::Linear),
        _ => {
            let list = s
                .strip_prefix("model:")
                .ok_or_else(|| format!("unknown backend `{s}`"))?;
            let specs = split_specs(list)
                .into_iter()
                .map(|p| p.parse::<EndpointSpec>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Backend::Model(specs))
        }
    }
}

fn hierarchy(b: &Backend) -> Result<UpscalerHierarchy> {
    Ok(match b {
        Backend::Nearest => UpscalerHierarchy::new(Box::new(Nearest)),
        Backend::Linear => UpscalerHierarchy::new(Box::new(Linear)),
        Backend::Model(specs) => {
            let mut h = UpscalerHierarchy::new(Box::new(Linear));
            for spec in specs {
                let handle = connect_with(spec, ClientOptions::default())?;
                if h.insert(spec.level, Box::new(handle)).is_some() {
                    return Err(Error::BadSpec(format!("level {} mapped twice", spec.level)));
                }
            }
            h
        }
    })
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HIERSR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("HIERSR_THREADS=`{raw}` is not a count")))?;
    // A pool may already exist when embedded; that is not an error.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Build {
            input,
            epsilon,
            min_chunk,
            min_level,
            max_level,
            downscaler,
            output,
        } => {
            let cfg = BuildConfig {
                epsilon,
                min_chunk,
                min_level,
                max_level,
                downscaler,
            };
            cfg.validate()?;
            let v = read_volume(&input)?;
            let t = build_sr_octree(&v, &cfg)?;
            write_tree(&output, &t)?;
            println!(
                "leaves: {}  reduction_factor: {:?}",
                t.leaf_count(),
                t.reduction_factor()
            );
        }
        Command::Downscale { tree, output } => {
            let t = read_tree(&tree)?;
            write_volume(&output, &hierarchical_downscale(&t)?)?;
        }
        Command::Upscale(args) => {
            let t = read_tree(&args.tree)?;
            let lr = match &args.lr {
                Some(p) => read_volume(p)?,
                None => hierarchical_downscale(&t)?,
            };
            let mut h = hierarchy(&args.backend)?;
            write_volume(&args.output, &hierarchical_upscale(&lr, &t, &mut h)?)?;
        }
        Command::UpscaleBlockwise(args) => {
            if args.lr.is_some() {
                eprintln!(
                    "warning: --lr is ignored; blockwise upscaling reads the leaves directly"
                );
            }
            let t = read_tree(&args.tree)?;
            let mut h = hierarchy(&args.backend)?;
            write_volume(&args.output, &blockwise_upscale(&t, &mut h)?)?;
        }
        Command::Metrics {
            a,
            b,
            tree,
            out,
            data_range,
        } => {
            let a = read_volume(&a)?;
            let b = read_volume(&b)?;
            let t = tree.map(|p| read_tree(&p)).transpose()?;
            let range = data_range.unwrap_or_else(|| value_span(&a));
            if !(range.is_finite() && range > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "data range {range} is not positive; pass --data-range"
                )));
            }
            let report = MetricReport::compute(&a, &b, range, t.as_ref())?;
            let text = if out.extension().is_some_and(|e| e == "json") {
                report.to_json() + "\n"
            } else {
                report.to_kv()
            };
            std::fs::write(&out, &text)?;
            print!("{}", report.to_kv());
        }
        Command::Info { tree } => {
            let t = read_tree(&tree)?;
            println!("dims: {:?}", t.full_dims());
            println!("reduction_factor: {:?}", t.reduction_factor());
            println!("maxdsl: {}", t.max_level());
            println!("mindsl: {}", t.min_level());
            println!("nodes: {}", t.node_count());
            println!("leaves: {}", t.leaf_count());
            println!("stored_voxels: {}", t.stored_voxels());
            println!("level histogram:");
            for (level, (leaves, voxels)) in t.level_histogram() {
                println!("  level {level}: {leaves} leaves covering {voxels} voxels");
            }
        }
        Command::Levelmap { tree, output } => {
            let t = read_tree(&tree)?;
            write_volume(&output, &t.level_map())?;
        }
        Command::Gen {
            kind,
            dims,
            seed,
            output,
        } => {
            write_volume(&output, &gen_synthetic(kind, &dims.0, seed)?)?;
        }
    }
    Ok(())
}

/// Runs the CLI and returns the process exit code: 0 ok, 1 runtime error,
/// 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("hiersr: {e}");
        return 2;
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hiersr: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
