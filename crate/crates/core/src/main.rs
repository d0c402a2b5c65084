use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ksfem::cli::{emit_config, exit_code_for_error, parse_config, run_command};
use ksfem::mesh::{make_domain, save_mesh, triangulate, DomainPreset, Grading};

#[derive(Parser)]
#[command(
    name = "ksfem",
    version,
    about = "Keller-Segel chemotaxis finite-element simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured simulation, writing the time-series CSV and snapshots.
    Run {
        /// Path to the run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Print the normalized config (defaults applied) and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Generate a mesh for a domain preset and report its properties.
    Mesh {
        /// Domain preset: unit_square or l_shape.
        #[arg(long)]
        domain: String,
        /// Target element diameter.
        #[arg(long)]
        h: f64,
        /// Write the mesh to this path in the plain-text format.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grade toward reentrant corners with this ratio in (0, 1).
        #[arg(long)]
        grading_ratio: Option<f64>,
        /// Fail if the mesh contains obtuse triangles.
        #[arg(long)]
        require_nonobtuse: bool,
    },
    /// Run a built-in property suite and report pass/fail per check.
    Check {
        /// Suite name: operators, reactions, or conservation.
        #[arg(long)]
        suite: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            dump_config,
        } => cmd_run(&config, dump_config),
        Command::Mesh {
            domain,
            h,
            out,
            grading_ratio,
            require_nonobtuse,
        } => cmd_mesh(&domain, h, out.as_deref(), grading_ratio, require_nonobtuse),
        Command::Check { suite } => cmd_check(&suite),
    };
    ExitCode::from(code)
}

fn cmd_run(path: &std::path::Path, dump: bool) -> u8 {
    let cfg = match parse_config(path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for_error(&e) as u8;
        }
    };
    if dump {
        print!("{}", emit_config(&cfg));
        return 0;
    }
    match run_command(&cfg) {
        Ok(summary) => summary.exit_code as u8,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for_error(&e) as u8
        }
    }
}

fn cmd_mesh(
    domain: &str,
    h: f64,
    out: Option<&std::path::Path>,
    grading_ratio: Option<f64>,
    require_nonobtuse: bool,
) -> u8 {
    let run = || -> ksfem::Result<()> {
        let preset = match domain {
            "unit_square" => DomainPreset::UnitSquare,
            "l_shape" => DomainPreset::LShape,
            other => {
                return Err(ksfem::Error::InvalidParameter(format!(
                    "unknown domain preset `{other}`"
                )))
            }
        };
        let poly = make_domain(preset)?;
        let grading = match grading_ratio {
            Some(ratio) if ratio < 1.0 => {
                let corners = poly.reentrant_corners();
                if corners.is_empty() {
                    None
                } else {
                    Some(Grading { corners, ratio })
                }
            }
            _ => None,
        };
        let mesh = triangulate(&poly, h, grading.as_ref(), require_nonobtuse)?;
        println!(
            "domain={} nodes={} triangles={} boundary_edges={} max_diameter={:.6} nonobtuse={}",
            poly.name(),
            mesh.node_count(),
            mesh.triangles().len(),
            mesh.boundary_edges().len(),
            mesh.max_diameter(),
            mesh.is_nonobtuse()
        );
        if let Some(path) = out {
            save_mesh(&mesh, path)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    };
    match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for_error(&e) as u8
        }
    }
}

fn cmd_check(suite: &str) -> u8 {
    match ksfem::checks::run_suite(suite) {
        Ok(results) => {
            let mut failed = 0;
            for r in &results {
                if r.pass {
                    println!("PASS {} ({})", r.name, r.detail);
                } else {
                    println!("FAIL {} ({})", r.name, r.detail);
                    failed += 1;
                }
            }
            println!("{}/{} checks passed", results.len() - failed, results.len());
            if failed == 0 {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for_error(&e) as u8
        }
    }
}
