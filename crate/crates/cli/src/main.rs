//! Command-line front end. One subcommand per library operation; every
//! run writes a self-describing JSON report embedding its full
//! configuration, so identical invocations give byte-identical output.
//!
//! Exit codes: 0 success, 2 for flagged-but-valid results (irregular
//! Bohr set, below-floor correlation, failed polynomial test, nonzero
//! residual defect), 1 for hard errors.

mod commands;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gowerslab_core::budget::Budget;
use gowerslab_core::gowers::NormMode;
use gowerslab_core::group::GroupSpec;
use gowerslab_core::Result;

use commands::CmdOut;

#[derive(Parser)]
#[command(
    name = "gowerslab",
    version,
    about = "Uniformity norms, Bohr sets, quadratic phases, and nilsequences on finite abelian groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    Fast,
    Naive,
}

#[derive(Args)]
struct Common {
    /// Report path; defaults to <command>-report.json
    #[arg(long)]
    output: Option<PathBuf>,
    /// csv additionally writes tabular payloads next to the report
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; 1 forces the deterministic single-thread path
    #[arg(long)]
    threads: Option<usize>,
    /// Work cap override (also settable via GOWERSLAB_BUDGET)
    #[arg(long)]
    budget: Option<u128>,
    /// Recompute and confirm the headline numbers by an independent path
    #[arg(long)]
    verify: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Gowers U^d norm of a function
    Norm {
        #[command(flatten)]
        common: Common,
        /// Group, e.g. Z/64 or Z/4xZ/6
        #[arg(long)]
        group: String,
        /// Norm order
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, value_enum, default_value_t = Mode::Fast)]
        mode: Mode,
        /// Function file (CSV re,im rows or JSON [[re,im],...])
        input: PathBuf,
    },
    /// Normalized discrete Fourier transform
    Dft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        input: PathBuf,
    },
    /// Largest Fourier coefficient with the U^2 lower-bound guarantee
    U2Inverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Required U^2 norm
        #[arg(long)]
        eta: f64,
        input: PathBuf,
    },
    /// Bohr set cardinality and regularity report
    Bohr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Frequency tuples, e.g. "1,0;0,1"; empty for the full group
        #[arg(long, default_value = "")]
        freqs: String,
        /// Radius as a fraction, e.g. 1/5
        #[arg(long)]
        rho: String,
    },
    /// Lift structure for a frequency set
    Lift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        #[arg(long, default_value = "")]
        freqs: String,
    },
    /// Integrate a symmetric local bilinear form into a quadratic phase
    Integrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// JSON file with fields freqs, rho, table
        input: PathBuf,
    },
    /// Quadratic phase extraction pipeline
    U3Inverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Required U^3 norm
        #[arg(long)]
        eta: f64,
        /// Correlation floor override (default eta^3)
        #[arg(long)]
        floor: Option<f64>,
        /// Also encode the result as a Heisenberg nilsequence
        #[arg(long)]
        encode: bool,
        input: PathBuf,
    },
    /// Evaluate a stored nilsequence
    NilseqEval {
        #[command(flatten)]
        common: Common,
        /// Element coordinates, e.g. "3"; omit to evaluate everywhere
        #[arg(long)]
        at: Option<String>,
        /// u3-inverse report with an encoding block, or a bare spec JSON
        input: PathBuf,
    },
    /// Host-Kra cube group of the abelian filtration vs parallelepipeds
    Hk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Cube dimension
        #[arg(long)]
        k: usize,
    },
    /// Test a torus-valued map against a degree filtration
    Polycheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Target filtration degree
        #[arg(long)]
        degree: usize,
        /// Derivative depth; defaults to degree + 1
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Force the exhaustive tuple sweep
        #[arg(long)]
        exhaustive: bool,
        /// Phase file, one fraction or float per row
        input: PathBuf,
    },
    /// Repair an almost homomorphism by majority vote
    Repair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Target group
        #[arg(long)]
        target: String,
        /// CSV of target coordinates, one row per source element
        input: PathBuf,
    },
    /// Trivialize an approximate 2-cocycle by iterated averaging
    Cocycle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Maximum missing-domain fraction
        #[arg(long)]
        epsilon0: Option<f64>,
        /// CSV rows h,k,v_1,...,v_dim keyed by element index
        input: PathBuf,
    },
    /// Folner box sampling: local estimates and the gap trend
    Sim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        group: String,
        /// Shift system size
        #[arg(long, default_value_t = 8)]
        j: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeds for the trend medians
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Character frequency for the gap function
        #[arg(long, default_value = "1")]
        freq: String,
        /// Box inner product degree (with an input function)
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Box size for the estimate
        #[arg(long, default_value_t = 2)]
        box_n: usize,
        #[arg(long, default_value_t = 2)]
        n_lo: usize,
        #[arg(long, default_value_t = 6)]
        n_hi: usize,
        /// Monte Carlo samples when exact evaluation exceeds the budget
        #[arg(long, default_value_t = 4096)]
        samples: u64,
        /// Optional function file for the local estimate
        input: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Norm { .. } => "norm",
            Command::Dft { .. } => "dft",
            Command::U2Inverse { .. } => "u2-inverse",
            Command::Bohr { .. } => "bohr",
            Command::Lift { .. } => "lift",
            Command::Integrate { .. } => "integrate",
            Command::U3Inverse { .. } => "u3-inverse",
            Command::NilseqEval { .. } => "nilseq-eval",
            Command::Hk { .. } => "hk",
            Command::Polycheck { .. } => "polycheck",
            Command::Repair { .. } => "repair",
            Command::Cocycle { .. } => "cocycle",
            Command::Sim { .. } => "sim",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Norm { common, .. }
            | Command::Dft { common, .. }
            | Command::U2Inverse { common, .. }
            | Command::Bohr { common, .. }
            | Command::Lift { common, .. }
            | Command::Integrate { common, .. }
            | Command::U3Inverse { common, .. }
            | Command::NilseqEval { common, .. }
            | Command::Hk { common, .. }
            | Command::Polycheck { common, .. }
            | Command::Repair { common, .. }
            | Command::Cocycle { common, .. }
            | Command::Sim { common, .. } => common,
        }
    }
}

/// Everything that shaped the run, embedded into the report.
#[derive(Serialize)]
struct RunConfig {
    command: String,
    group: Option<String>,
    input: Option<String>,
    output: String,
    format: String,
    threads: Option<usize>,
    verify: bool,
    enumeration_cap: u64,
    work_cap: u64,
    params: serde_json::Value,
}

fn effective_budget(flag: Option<u128>) -> Budget {
    let mut b = Budget::default().with_env_override();
    if let Some(cap) = flag {
        b.work_cap = cap;
        b.enumeration_cap = b.enumeration_cap.max(cap);
    }
    b
}

fn dispatch(cmd: &Command, budget: &Budget) -> Result<CmdOut> {
    let verify = cmd.common().verify;
    match cmd {
        Command::Norm {
            group,
            d,
            mode,
            input,
            ..
        } => {
            let g = GroupSpec::parse(group)?;
            let m = match mode {
                Mode::Fast => NormMode::Fast,
                Mode::Naive => NormMode::Naive,
            };
            commands::norm(&g, input, *d, m, verify, budget)
        }
        Command::Dft { group, input, .. } => {
            let g = GroupSpec::parse(group)?;
            commands::dft_cmd(&g, input, verify)
        }
        Command::U2Inverse {
            group, eta, input, ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::u2_inverse(&g, input, *eta, verify)
        }
        Command::Bohr {
            group, freqs, rho, ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::bohr(&g, freqs, rho, verify, budget)
        }
        Command::Lift { group, freqs, .. } => {
            let g = GroupSpec::parse(group)?;
            commands::lift(&g, freqs, verify, budget)
        }
        Command::Integrate { group, input, .. } => {
            let g = GroupSpec::parse(group)?;
            commands::integrate(&g, input, verify, budget)
        }
        Command::U3Inverse {
            group,
            eta,
            floor,
            encode,
            input,
            ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::u3_inverse(&g, input, *eta, *floor, *encode, verify, budget)
        }
        Command::NilseqEval { at, input, .. } => {
            commands::nilseq_eval_cmd(input, at.as_deref(), verify)
        }
        Command::Hk { group, k, .. } => {
            let g = GroupSpec::parse(group)?;
            commands::hk(&g, *k, verify, budget)
        }
        Command::Polycheck {
            group,
            degree,
            depth,
            samples,
            seed,
            exhaustive,
            input,
            ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::polycheck(
                &g,
                input,
                *degree,
                depth.unwrap_or(degree + 1),
                *samples,
                *seed,
                *exhaustive,
                verify,
                budget,
            )
        }
        Command::Repair {
            group,
            target,
            input,
            ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::repair(&g, target, input, verify)
        }
        Command::Cocycle {
            group,
            tol,
            epsilon0,
            input,
            ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::cocycle(&g, input, *tol, *epsilon0, verify)
        }
        Command::Sim {
            group,
            j,
            seed,
            seeds,
            freq,
            d,
            box_n,
            n_lo,
            n_hi,
            samples,
            input,
            ..
        } => {
            let g = GroupSpec::parse(group)?;
            commands::sim(
                &g,
                input.as_deref(),
                *j,
                *seed,
                *seeds,
                freq,
                *d,
                *box_n,
                *n_lo,
                *n_hi,
                *samples,
                verify,
                budget,
            )
        }
    }
}

fn config_json(cmd: &Command, output: &Path, budget: &Budget) -> serde_json::Value {
    let common = cmd.common();
    // Flatten the parsed arguments back out so reports are self-describing.
    let (group, input, params) = match cmd {
        Command::Norm {
            group,
            d,
            mode,
            input,
            ..
        } => (
            Some(group.clone()),
            Some(input.clone()),
            serde_json::json!({ "d": d, "mode": match mode { Mode::Fast => "fast", Mode::Naive => "naive" } }),
        ),
        Command::Dft { group, input, .. } => {
            (Some(group.clone()), Some(input.clone()), serde_json::json!({}))
        }
        Command::U2Inverse {
            group, eta, input, ..
        } => (
            Some(group.clone()),
            Some(input.clone()),
            serde_json::json!({ "eta": eta }),
        ),
        Command::Bohr {
            group, freqs, rho, ..
        } => (
            Some(group.clone()),
            None,
            serde_json::json!({ "freqs": freqs, "rho": rho }),
        ),
        Command::Lift { group, freqs, .. } => (
            Some(group.clone()),
            None,
            serde_json::json!({ "freqs": freqs }),
        ),
        Command::Integrate { group, input, .. } => {
            (Some(group.clone()), Some(input.clone()), serde_json::json!({}))
        }
        Command::U3Inverse {
            group,
            eta,
            floor,
            encode,
            input,
            ..
        } => (
            Some(group.clone()),
            Some(input.clone()),
            serde_json::json!({ "eta": eta, "floor": floor, "encode": encode }),
        ),
        Command::NilseqEval { at, input, .. } => (
            None,
            Some(input.clone()),
            serde_json::json!({ "at": at }),
        ),
        Command::Hk { group, k, .. } => {
            (Some(group.clone()), None, serde_json::json!({ "k": k }))
        }
        Command::Polycheck {
            group,
            degree,
            depth,
            samples,
            seed,
            exhaustive,
            input,
            ..
        } => (
            Some(group.clone()),
            Some(input.clone()),
            serde_json::json!({
                "degree": degree, "depth": depth, "samples": samples,
                "seed": seed, "exhaustive": exhaustive,
            }),
        ),
        Command::Repair {
            group,
            target,
            input,
            ..
        } => (
            Some(group.clone()),
            Some(input.clone()),
            serde_json::json!({ "target": target }),
        ),
        Command::Cocycle {
            group,
            tol,
            epsilon0,
            input,
            ..
        } => (
            Some(group.clone()),
            Some(input.clone()),
            serde_json::json!({ "tol": tol, "epsilon0": epsilon0 }),
        ),
        Command::Sim {
            group,
            j,
            seed,
            seeds,
            freq,
            d,
            box_n,
            n_lo,
            n_hi,
            samples,
            input,
            ..
        } => (
            Some(group.clone()),
            input.clone(),
            serde_json::json!({
                "j": j, "seed": seed, "seeds": seeds, "freq": freq, "d": d,
                "box_n": box_n, "n_lo": n_lo, "n_hi": n_hi, "samples": samples,
            }),
        ),
    };
    let config = RunConfig {
        command: cmd.name().to_string(),
        group,
        input: input.map(|p: PathBuf| p.display().to_string()),
        output: output.display().to_string(),
        format: match common.format {
            Format::Json => "json".into(),
            Format::Csv => "csv".into(),
        },
        threads: common.threads,
        verify: common.verify,
        // Caps are clamped into u64 for JSON friendliness; saturation only
        // matters past 2^64 steps, far beyond any desk-scale run.
        enumeration_cap: budget.enumeration_cap.min(u64::MAX as u128) as u64,
        work_cap: budget.work_cap.min(u64::MAX as u128) as u64,
        params,
    };
    serde_json::to_value(&config).expect("config serializes")
}

fn run(cli: Cli) -> Result<bool> {
    let cmd = cli.command;
    let common = cmd.common();
    if let Some(t) = common.threads {
        // A second initialization in the same process is harmless here;
        // the pool is only built once per CLI run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let budget = effective_budget(common.budget);
    let output = common
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}-report.json", cmd.name())));
    let want_csv = common.format == Format::Csv;

    let out = dispatch(&cmd, &budget)?;
    let report = serde_json::json!({
        "config": config_json(&cmd, &output, &budget),
        "results": out.results,
    });
    io::write_report(&output, &report)?;
    println!("{}", out.headline);
    println!("report: {}", output.display());
    if want_csv {
        if let Some(payload) = &out.csv {
            let mut csv_path = output.clone().into_os_string();
            csv_path.push(".csv");
            let csv_path = PathBuf::from(csv_path);
            std::fs::write(&csv_path, payload)?;
            println!("data: {}", csv_path.display());
        }
    }
    Ok(out.flagged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
