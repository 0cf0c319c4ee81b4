//! Benchmark CLI for the bimanual planning library.
//!
//! Exit codes: 0 success, 2 scene/argument problems, 3 planner failure.

use bimanual::bench::{run_benchmark, run_suite, BenchError, BenchOptions, Method};
use bimanual::planners::sample_valid;
use bimanual::regions::{grow_region_robust, save_regions, GrowOptions};
use bimanual::scene::Scene;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bimanual-bench", about = "Benchmarks for dual-arm planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scene description file (TOML).
    #[arg(long)]
    scene: PathBuf,
    /// RNG seed; fixed seeds give byte-identical outputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planner time budget in seconds.
    #[arg(long, default_value_t = 30.0)]
    budget_s: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one named query; prints the report as JSON.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// ik-birrt | ik-prm | ik-trajopt | gcs-lite | projection-baseline |
        /// fullspace-trajopt-baseline
        #[arg(long)]
        method: String,
        /// Name of a query defined in the scene file.
        #[arg(long)]
        query: String,
        /// Directory for the trajectory and report files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pre-grown region file for gcs-lite.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Run methods x queries x repeats and print a summary table.
    Suite {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated method list; default: all methods.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        /// Comma-separated query names; default: all queries in the scene.
        #[arg(long, value_delimiter = ',')]
        query: Vec<String>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Grow collision-free convex regions around a query's waypoints and
    /// save them to a region file for later gcs-lite runs.
    GrowRegions {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        query: String,
        /// Output region file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a valid, collision-free configuration and print it in the
    /// scene file's query syntax.
    SampleConfig {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_scene(path: &PathBuf) -> Result<Scene, ExitCode> {
    Scene::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, ExitCode> {
    if names.is_empty() {
        return Ok(Method::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            Method::parse(n).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(2)
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.command {
        Command::Run {
            common,
            method,
            query,
            out,
            regions,
        } => {
            let scene = load_scene(&common.scene)?;
            let method = parse_methods(std::slice::from_ref(&method))?[0];
            let opts = BenchOptions {
                budget_s: common.budget_s,
                regions_file: regions,
                out_dir: out,
            };
            let (report, _) = run_benchmark(&scene, method, &query, common.seed, &opts)
                .map_err(|e| exit_for(&e))?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(if report.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Suite {
            common,
            method,
            query,
            repeats,
            out,
            regions,
        } => {
            let scene = load_scene(&common.scene)?;
            let methods = parse_methods(&method)?;
            let queries = if query.is_empty() {
                scene.queries.iter().map(|q| q.name.clone()).collect()
            } else {
                query
            };
            let opts = BenchOptions {
                budget_s: common.budget_s,
                regions_file: regions,
                out_dir: out,
            };
            let summary = run_suite(&scene, &methods, &queries, repeats, common.seed, &opts)
                .map_err(|e| exit_for(&e))?;
            print!("{}", summary.table());
            Ok(ExitCode::SUCCESS)
        }
        Command::GrowRegions { common, query, out } => {
            let scene = load_scene(&common.scene)?;
            let named = scene.query(&query).cloned().ok_or_else(|| {
                eprintln!("error: scene has no query named '{query}'");
                ExitCode::from(2)
            })?;
            let path = bimanual::planners::birrt(
                &scene,
                &bimanual::planners::PlanQuery {
                    start: named.start,
                    goal: named.goal,
                    time_budget_s: common.budget_s,
                    rng_seed: common.seed,
                },
            )
            .map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(3)
            })?;
            let path = bimanual::planners::shortcut(&scene, &path, 100, common.seed);
            let opts = GrowOptions {
                rng_seed: common.seed,
                ..GrowOptions::default()
            };
            let mut regions = Vec::new();
            for wp in &path.waypoints {
                if regions.iter().any(|r: &bimanual::regions::Region| r.contains(wp, 0.0)) {
                    continue;
                }
                let mut r =
                    grow_region_robust(&scene, wp, scene.default_branch, &opts).map_err(|e| {
                        eprintln!("error: {e}");
                        ExitCode::from(3)
                    })?;
                if let Some(first) = regions.first() {
                    r.psi_cut = first.psi_cut;
                }
                eprintln!("grew region {} ({} planes)", regions.len(), r.polytope.n_planes());
                regions.push(r);
            }
            save_regions(&out, &regions).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(2)
            })?;
            println!("wrote {} regions to {}", regions.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SampleConfig { common } => {
            let scene = load_scene(&common.scene)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let q = sample_valid(&scene, scene.default_branch, &mut rng).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(3)
            })?;
            let angles: Vec<String> = q.theta_l.angles.iter().map(|a| a.to_string()).collect();
            print!(
                "{{ theta_l = [{}], psi_r = {}",
                angles.join(", "),
                q.psi_r.radians()
            );
            if let Some(g) = q.grasp_extension {
                print!(", grasp = {g}");
            }
            println!(" }}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_for(e: &BenchError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        BenchError::UnknownMethod(_) | BenchError::UnknownQuery(_) | BenchError::Scene(_) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(code) => code,
    }
}
