//! Command-line workbench: enumerate profile orbits, evaluate and audit
//! mechanisms, generate and solve instability-minimizing models, and run
//! seeded simulations.
//!
//! Exit codes: 0 success, 1 usage error, 2 infeasible model or failed
//! audit, 3 size gate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mechlab::audit::{full_audit, AuditScope, DEFAULT_AUDIT_TOL};
use mechlab::lpmodel::{build_model, BuildOptions, LpModel, Objective};
use mechlab::matching::{total_violation, waste};
use mechlab::mechanisms::Mechanism;
use mechlab::prefs::{build_orbit_table, profile_count, Profile};
use mechlab::sim::{run_comparison, SimConfig};
use mechlab::solver::LpOutcome;
use mechlab::{Error, Result};

/// Version string also names the model/solution text format revision so
/// solution files can be matched to the exporter that produced them.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (model-format 1)");

#[derive(Parser)]
#[command(name = "mechlab", version = VERSION, about = "two-sided matching mechanism workbench")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    A,
    B,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::A => Objective::A,
            ObjectiveArg::B => Objective::B,
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    /// a = total violation sum, b = worst case.
    #[arg(long, value_enum, default_value = "a")]
    objective: ObjectiveArg,
    /// Force full assignments (row/column sums equal one).
    #[arg(long)]
    nonwasteful: bool,
    /// Reduce by relabeling orbits and add invariance rows.
    #[arg(long)]
    anonymity: bool,
    /// Also quotient by the side swap (square markets, implies anonymity
    /// group extension).
    #[arg(long)]
    symmetry: bool,
    /// File with one profile index per line; restrict generation to these
    /// profiles (sound relaxation, unreduced only).
    #[arg(long)]
    restrict: Option<PathBuf>,
    /// Upper bound on the worst-case variable (objective b only).
    #[arg(long)]
    t_upper: Option<f64>,
    /// Equality on the orbit-weighted total assigned mass.
    #[arg(long)]
    mass_target: Option<f64>,
}

impl ModelArgs {
    fn build(&self, integral: bool) -> Result<LpModel> {
        let restrict = match &self.restrict {
            None => None,
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let mut list = Vec::new();
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    list.push(line.parse::<u64>().map_err(|_| {
                        Error::Model(format!("bad profile index `{line}` in restriction file"))
                    })?);
                }
                Some(list)
            }
        };
        build_model(&BuildOptions {
            n: self.n,
            m: self.m,
            objective: self.objective.into(),
            nonwasteful: self.nonwasteful,
            anonymity: self.anonymity,
            symmetry: self.symmetry,
            integral,
            restrict,
            t_upper: self.t_upper,
            mass_target: self.mass_target,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Count profiles and relabeling orbits for a market size.
    Enumerate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        /// Include the side swap in the group.
        #[arg(long)]
        symmetry: bool,
    },
    /// Evaluate a mechanism on one profile and print the match matrix.
    Eval {
        /// Mechanism descriptor, e.g. alg2, sd:nat, rsd1, anon(alg2).
        #[arg(long)]
        mech: String,
        /// Profile in line format: `n m | s1:... | ... | c1:...`.
        #[arg(long)]
        profile: String,
        /// Seed for sampled evaluation of oversized mixtures.
        #[arg(long, default_value = "0")]
        seed: u64,
    },
    /// Run the full audit suite against a mechanism.
    Audit {
        #[arg(long)]
        mech: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = DEFAULT_AUDIT_TOL)]
        tol: f64,
        #[arg(long, default_value = "0")]
        seed: u64,
        /// Sample profiles instead of exhausting them even when feasible.
        #[arg(long)]
        force_sampled: bool,
        /// Profiles per check in sampled mode.
        #[arg(long, default_value = "2000")]
        samples: u64,
    },
    /// Write the linear program to an MPS file.
    BuildLp {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the integer program (integral match variables) to an MPS file.
    BuildIp {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and solve the relaxation with the internal simplex solver.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        /// Write the optimal point as `name value` lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an external `name value` solution against the model.
    ImportSolution {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        solution: PathBuf,
        /// Treat the model as integral (affects only the summary line).
        #[arg(long)]
        integral: bool,
    },
    /// Turn a solution into a profile-indexed mechanism table (CSV).
    Extract {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare mechanisms on shared random markets.
    Simulate {
        /// `key=value` config file (n_min, n_max, reps, seed, mechanisms,
        /// output); command-line flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated mechanism descriptors.
        #[arg(long)]
        mechanisms: Option<String>,
        /// Output path prefix for CSV and plot files.
        #[arg(long)]
        output: Option<String>,
    },
    /// Exhaustive benchmark table for the 3x3 mechanism zoo.
    Tables {
        #[arg(long, default_value = "3")]
        n: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's default exit code for bad usage is 2, which this tool
            // reserves for failed audits / infeasible models
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SizeGate(_)
                | Error::EnumerationTooLarge(_)
                | Error::IndexOverflow { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Enumerate { n, m, symmetry } => {
            let count = profile_count(n, m)?;
            let table = build_orbit_table(n, m, symmetry)?;
            println!(
                "{{\"profiles\":{count},\"group\":{},\"representatives\":{}}}",
                table.group().len(),
                table.reps().len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { mech, profile, seed } => {
            let mech = Mechanism::parse(&mech)?;
            let profile = Profile::parse_line(&profile)?;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let matrix = mech.evaluate_or_sample(&profile, &mut rng, 400)?;
            print!("{}", matrix.to_csv_rows(profile.encode().0));
            println!(
                "# stv {:.6} waste {:.6}",
                total_violation(&matrix, &profile),
                waste(&matrix)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit {
            mech,
            n,
            m,
            tol,
            seed,
            force_sampled,
            samples,
        } => {
            let mech = Mechanism::parse(&mech)?;
            let exhaustible = profile_count(n, m).map(|c| c <= 200_000).unwrap_or(false);
            let scope = if force_sampled || !exhaustible {
                AuditScope::Sampled { seed, profiles: samples }
            } else {
                AuditScope::Exhaustive
            };
            let reports = full_audit(&mech, n, m, tol, scope)?;
            let objectives = mechlab::audit::evaluate_objectives(&mech, n, m, scope)?;
            let mut all_pass = true;
            for r in &reports {
                println!("{}", r.to_json_line());
                all_pass &= r.pass;
            }
            println!(
                "{{\"average_stv\":{:.6},\"worst_stv\":{:.6},\"average_waste\":{:.6}}}",
                objectives.average_stv, objectives.worst_stv, objectives.average_waste
            );
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::BuildLp { model, out } => {
            let model = model.build(false)?;
            model.export_mps(&out)?;
            println!("{}", model.summary_json());
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildIp { model, out } => {
            let model = model.build(true)?;
            model.export_mps(&out)?;
            println!("{}", model.summary_json());
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve { model, out } => {
            let model = model.build(false)?;
            match model.solve()? {
                LpOutcome::Optimal { x, value } => {
                    println!("optimal objective {value:.9}");
                    if let Some(path) = out {
                        use std::io::Write;
                        let mut f = std::fs::File::create(path)?;
                        for (var, v) in model.vars.iter().zip(&x) {
                            writeln!(f, "{} {v:.15}", var.key.name())?;
                        }
                    }
                    Ok(ExitCode::SUCCESS)
                }
                LpOutcome::Infeasible => {
                    println!("infeasible");
                    Ok(ExitCode::from(2))
                }
                LpOutcome::Unbounded => {
                    println!("unbounded");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::ImportSolution {
            model,
            solution,
            integral,
        } => {
            let model = model.build(integral)?;
            let x = model.import_solution(&std::fs::read_to_string(solution)?)?;
            let report = model.verify(&x)?;
            println!(
                "{{\"objective\":{:.9},\"max_violation\":{:.3e}}}",
                model.objective_value(&x),
                report.max_violation
            );
            Ok(if report.max_violation <= 1e-6 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Extract {
            model,
            solution,
            out,
        } => {
            let model = model.build(false)?;
            let x = model.import_solution(&std::fs::read_to_string(solution)?)?;
            let table = model.extract_mechanism(&x)?;
            table.save_csv(&out)?;
            println!("wrote {} profile entries", table.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            config,
            n_min,
            n_max,
            reps,
            seed,
            mechanisms,
            output,
        } => {
            let mut cfg = match config {
                Some(path) => SimConfig::parse(&std::fs::read_to_string(path)?)?,
                None => SimConfig::default(),
            };
            if let Some(v) = n_min {
                cfg.n_min = v;
            }
            if let Some(v) = n_max {
                cfg.n_max = v;
            }
            if let Some(v) = reps {
                cfg.reps = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = mechanisms {
                cfg.mechanisms = v.split(',').map(|s| s.trim().to_string()).collect();
            }
            if let Some(v) = output {
                cfg.output = Some(v);
            }
            let results = run_comparison(&cfg)?;
            print!("{}", mechlab::sim::aggregates_csv(&results.aggregates));
            Ok(ExitCode::SUCCESS)
        }
        Command::Tables { n } => {
            let descriptors = [
                "alg1",
                "alg2",
                "sd:nat",
                "rsd1",
                "rsd2",
                "rsd-interleave",
                "alg3:nat",
                "alg3-union",
                "alg3-interleave",
                "anon(alg2)",
                "sym(alg2)",
                "anon(sym(alg2))",
            ];
            println!("mechanism,average_stv,worst_stv,average_waste");
            for d in descriptors {
                if d == "alg1" && n != 2 {
                    continue; // defined for two-by-two markets only
                }
                let mech = Mechanism::parse(d)?;
                let obj = mechlab::audit::evaluate_objectives(
                    &mech,
                    n,
                    n,
                    AuditScope::Exhaustive,
                )?;
                println!(
                    "{d},{:.4},{:.4},{:.4}",
                    obj.average_stv, obj.worst_stv, obj.average_waste
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
