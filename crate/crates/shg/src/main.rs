use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shg::config::Config;
use shg::fgrid::Fgrid;
use shg::png::{export_png, Colormap};
use shg::run::{run, RunOptions};

#[derive(Parser)]
#[command(name = "shg", version, about = "Second-harmonic coefficient reconstruction runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the task of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Noise and guard seed (overrides `noise.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the sparse solvers.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Also write PNG previews.
        #[arg(long)]
        png: bool,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convert an FGRID file to PNG or CSV, chosen by the output extension.
    Export {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CmapArg::Viridis)]
        colormap: CmapArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CmapArg {
    Gray,
    Viridis,
}

const CONFIG_ERROR: u8 = 2;
const SOLVER_ERROR: u8 = 3;

fn load(path: &PathBuf) -> Result<Config, ExitCode> {
    Config::load(path).and_then(Config::resolve).map_err(|e| {
        eprintln!("config error in {}:\n{e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Validate { config } => match load(&config) {
            Ok(c) => {
                print!("{}", c.to_toml());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Cmd::Run { config, out, seed, threads, png } => {
            let mut c = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = seed {
                c.noise.seed = s;
            }
            let out = out.unwrap_or_else(|| PathBuf::from(&c.output));
            if threads > 1 {
                faer::set_global_parallelism(faer::Par::rayon(threads));
            }
            match run(&c, &RunOptions { out: out.clone(), png, threads }) {
                Ok(o) => {
                    match &o.report.failure {
                        Some(f) => eprintln!("{:?} failure in {}: {}", f.kind, f.stage, f.message),
                        None => {
                            for (k, e) in &o.report.errors {
                                println!("{k}: rel_l2 {:.4e} linf {:.4e}", e.rel_l2, e.linf);
                            }
                        }
                    }
                    println!("report: {}", out.join("report.json").display());
                    ExitCode::from(o.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.kind.exit_code() as u8)
                }
            }
        }
        Cmd::Export { input, out, colormap } => {
            let f = match Fgrid::read(&input) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("{}: {e}", input.display());
                    return ExitCode::from(CONFIG_ERROR);
                }
            };
            let csv = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let result = if csv {
                std::fs::write(&out, f.to_csv()).map_err(|e| e.to_string())
            } else {
                let cmap = match colormap {
                    CmapArg::Gray => Colormap::Gray,
                    CmapArg::Viridis => Colormap::Viridis,
                };
                let field = f.display_field().map_err(|e| e.to_string());
                field.and_then(|fld| export_png(&fld, cmap, &out).map(|_| ()).map_err(|e| e.to_string()))
            };
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(SOLVER_ERROR)
                }
            }
        }
    }
}
