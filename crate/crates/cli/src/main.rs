use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mofit_cli::commands::{self, std_dev};
use mofit_cli::{exit_code, parse_overrides, Run, RunConfig};
use mofit_core::Result;

#[derive(Parser)]
#[command(
    name = "mofit",
    version,
    about = "Caption-free membership inference against conditional diffusion models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides such as `--train.steps=5000` or `--output_dir=runs/a`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--SECTION.KEY=VALUE"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the resolved configuration.
    Config(Common),
    /// Generate the member and hold-out glyph dataset.
    Synth(Common),
    /// Train the denoiser on the members.
    Train(Common),
    /// Run the attack suite and write the attack-record CSV.
    Attack(Common),
    /// Score the attack records and write the report and KDE curves.
    Eval(Common),
    /// synth, train, attack and eval in sequence.
    Run(Common),
    /// Compare analytic gradients with finite differences on random models.
    Gradcheck(Common),
    /// Compare surrogate variants: clean, random δ, δ_MAX and model-fitted.
    Ablate(Common),
    /// Attack AUC across several fixed-noise seeds.
    Stability(Common),
    /// Serve the trained checkpoint over the oracle protocol.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Append every exchange to this JSON-lines transcript.
        #[arg(long)]
        record: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(c: &Common) -> Result<Run> {
    let overrides = parse_overrides(&c.overrides)?;
    Ok(Run::new(RunConfig::load(c.config.as_deref(), &overrides)?))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Config(c) => print!("{}", load(&c)?.cfg.to_toml()),
        Cmd::Synth(c) => {
            let d = commands::cmd_synth(&load(&c)?)?;
            println!("{} samples", d.samples.len());
        }
        Cmd::Train(c) => print_json(&commands::cmd_train(&load(&c)?)?),
        Cmd::Attack(c) => {
            let r = commands::cmd_attack(&load(&c)?)?;
            let failed = r.iter().filter(|r| !r.ok()).count();
            println!("{} records, {failed} failed", r.len());
        }
        Cmd::Eval(c) => print_json(&commands::cmd_eval(&load(&c)?)?),
        Cmd::Run(c) => {
            let run = load(&c)?;
            commands::cmd_synth(&run)?;
            commands::cmd_train(&run)?;
            commands::cmd_attack(&run)?;
            print_json(&commands::cmd_eval(&run)?);
        }
        Cmd::Gradcheck(c) => {
            let r = commands::cmd_gradcheck(&load(&c)?)?;
            println!(
                "max relative error {:.3e} over {} cases: {}",
                r.max_rel_error,
                r.cases.len(),
                if r.passed { "pass" } else { "FAIL" }
            );
            if !r.passed {
                return Err(mofit_core::Error::NonFinite {
                    stage: "gradcheck",
                    iteration: 0,
                });
            }
        }
        Cmd::Ablate(c) => {
            for r in commands::cmd_ablate(&load(&c)?)? {
                let eps = r.eps_noise.map(|e| format!(" {e}")).unwrap_or_default();
                println!("{:<14} auc {:.4} asr {:.4}", format!("{}{eps}", r.mode), r.auc, r.asr);
            }
        }
        Cmd::Stability(c) => {
            let rows = commands::cmd_stability(&load(&c)?)?;
            let aucs: Vec<f64> = rows.iter().map(|r| r.auc).collect();
            for r in &rows {
                println!("eps_seed {} auc {:.4} asr {:.4}", r.eps_seed, r.auc, r.asr);
            }
            println!("auc std {:.4}", std_dev(&aucs));
        }
        Cmd::Serve { listen, record, common } => commands::cmd_serve(&load(&common)?, &listen, record)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
