use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use market_core::analytics::{self, CostModel, ValueModel};
use market_core::incentives::game::{analyze, PayoffParams};
use market_core::report;
use market_core::scenario::ScenarioError;
use market_core::trace::Trace;
use market_core::verify::{verify_text, VerifyError};
use market_core::{load_scenario, run, CaseId};

/// Escrowed marketplace protocol simulator.
#[derive(Parser)]
#[command(name = "market-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output path.
        #[arg(long, default_value = "trace.jsonl")]
        out: PathBuf,
    },
    /// Brute-force the honest/dishonest payoff game.
    VerifyEquilibrium {
        /// JSON file with payoff parameters; defaults apply to missing fields.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Dispute-routing threshold analysis.
    AnalyzeThresholds {
        /// Rate of an exponential value model, per USD.
        #[arg(long, conflicts_with = "input_trace", required_unless_present = "input_trace")]
        lambda: Option<f64>,
        /// Use listing values from a trace instead of a model.
        #[arg(long)]
        input_trace: Option<PathBuf>,
        /// Threshold in USD; defaults to the trace's configured threshold or 50.
        #[arg(long)]
        threshold: Option<f64>,
        /// Sample size for --lambda.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// JSON cost model; defaults apply to missing fields.
        #[arg(long)]
        cost: Option<PathBuf>,
    },
    /// Check a trace's digest chain and replay it.
    Verify { trace: PathBuf },
    /// Summarize a trace.
    Report {
        trace: PathBuf,
        /// Proposal lifecycle table instead of the exchange summary.
        #[arg(long)]
        governance: bool,
        #[arg(long)]
        json: bool,
    },
    /// Dump one dispute case from a trace as JSON.
    Case { trace: PathBuf, case: u64 },
}

/// Exit 1: bad input. Exit 2: an invariant failed or a trace was tampered with.
enum Failure {
    Validation(anyhow::Error),
    Invariant(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MARKET_SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant violation: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_trace(path: &PathBuf) -> Result<Trace, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Trace::parse(&text).map_err(|e| Failure::Invariant(e.into()))
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run { scenario, seed, out } => {
            let mut s = load_scenario(&scenario).map_err(|e| match e {
                ScenarioError::Io(_) | ScenarioError::ParseError(_) | ScenarioError::ValidationError(_) => {
                    Failure::Validation(e.into())
                }
            })?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let output = run(&s).map_err(|e| Failure::Validation(e.into()))?;
            output
                .trace
                .write(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&output.summary).map_err(anyhow::Error::from)?);
            log::info!("trace written to {}", out.display());
            if !output.summary.conservation_holds {
                return Err(Failure::Invariant(anyhow!("token conservation does not hold at the end of the run")));
            }
            Ok(())
        }
        Cmd::VerifyEquilibrium { params, json } => {
            let p: PayoffParams = match params {
                Some(path) => read_json(&path)?,
                None => PayoffParams::default(),
            };
            let report = analyze(&p).map_err(|e| Failure::Validation(e.into()))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
            } else {
                print!("{}", report.to_text());
            }
            if !report.honest_is_nash {
                return Err(Failure::Invariant(anyhow!("(s1,s1) is not a Nash equilibrium for these parameters")));
            }
            Ok(())
        }
        Cmd::AnalyzeThresholds {
            lambda,
            input_trace,
            threshold,
            samples,
            seed,
            cost,
        } => {
            let cost: CostModel = match cost {
                Some(path) => read_json(&path)?,
                None => CostModel::default(),
            };
            let (values, threshold, extra) = match (lambda, input_trace) {
                (Some(lambda), _) => {
                    let stats = analytics::exp_stats(lambda).map_err(|e| Failure::Validation(e.into()))?;
                    let values = analytics::sample_values(&ValueModel::Exponential { lambda }, samples, seed)
                        .map_err(|e| Failure::Validation(e.into()))?;
                    let extra = serde_json::json!({"model": {"kind": "exponential", "lambda": lambda}, "stats": stats});
                    (values, threshold.unwrap_or(50.0), extra)
                }
                (None, Some(path)) => {
                    let trace = read_trace(&path)?;
                    let values = report::listing_values_usd(&trace);
                    let fitted = analytics::fit_exponential(&values).map_err(|e| Failure::Validation(e.into()))?;
                    let routing = report::dispute_routing(&trace);
                    let t = threshold.unwrap_or(routing.threshold_usd_cents as f64 / 100.0);
                    let extra = serde_json::json!({
                        "fitted_lambda": fitted,
                        "disputes": {"internal": routing.internal, "external": routing.external},
                    });
                    (values, t, extra)
                }
                (None, None) => return Err(Failure::Validation(anyhow!("pass --lambda or --input-trace"))),
            };
            let r = analytics::threshold_report(&values, threshold, &cost).map_err(|e| Failure::Validation(e.into()))?;
            let doc = serde_json::json!({"report": r, "source": extra});
            println!("{}", serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?);
            println!();
            print!("{}", r.to_text());
            Ok(())
        }
        Cmd::Verify { trace } => {
            let text = std::fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            match verify_text(&text) {
                Ok(report) => {
                    println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
                    Ok(())
                }
                Err(VerifyError::Io(e)) => Err(Failure::Validation(e.into())),
                Err(e) => Err(Failure::Invariant(e.into())),
            }
        }
        Cmd::Report { trace, governance, json } => {
            let t = read_trace(&trace)?;
            if governance {
                let rows = report::governance_report(&t);
                if json {
                    println!("{}", serde_json::to_string_pretty(&rows).map_err(anyhow::Error::from)?);
                } else {
                    print!("{}", report::governance_text(&rows));
                }
            } else {
                let r = report::trace_report(&t);
                if json {
                    println!("{}", serde_json::to_string_pretty(&r).map_err(anyhow::Error::from)?);
                } else {
                    print!("{}", r.to_text());
                }
            }
            Ok(())
        }
        Cmd::Case { trace, case } => {
            let t = read_trace(&trace)?;
            let doc = report::case_transcript(&t, CaseId(case))
                .ok_or_else(|| anyhow!("no case {case} in {}", trace.display()))?;
            println!("{}", serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?);
            Ok(())
        }
    }
}
