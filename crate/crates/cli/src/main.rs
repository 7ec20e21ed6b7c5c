mod commands;
mod report;
mod settings;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::Value;

use disperc::Result;

use report::{csv_text, Outcome, Report, SCHEMA_VERSION};
use settings::{resolve, Flags, RunConfig};

/// Exact and Monte Carlo audits for Ising random fields and their Glauber dynamics.
///
/// Reports are JSON on standard output; a short summary goes to standard
/// error. Exit status is 0 when every assertion holds, 1 when one fails and 2
/// for invalid input or capacity errors.
#[derive(Parser, Debug)]
#[command(name = "disperc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Closed-form thresholds and constants.
    Thresholds,
    /// Percolation moments K, K' and the truncated curve K_N.
    PercMoments,
    /// Disagreement coupling transcripts and the domination audit.
    CouplingAudit,
    /// Exact spectral gap against the certified bound.
    GapAudit,
    /// Variance decay of S_t f, exact and/or Monte Carlo.
    Relax,
    /// Poincare certificate checked on a function battery.
    PoincareAudit,
    /// Weak Poincare curve and the resulting relaxation bound.
    WeakPoincare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Thresholds => "thresholds",
            Command::PercMoments => "perc-moments",
            Command::CouplingAudit => "coupling-audit",
            Command::GapAudit => "gap-audit",
            Command::Relax => "relax",
            Command::PoincareAudit => "poincare-audit",
            Command::WeakPoincare => "weak-poincare",
        }
    }
}

fn execute(command: Command, cfg: &RunConfig, flags: &Flags) -> Result<Outcome> {
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match command {
        Command::Thresholds => commands::thresholds(cfg),
        Command::PercMoments => commands::perc_moments(cfg),
        Command::CouplingAudit => commands::coupling_audit(cfg),
        Command::GapAudit => commands::gap_audit(cfg, flags.export_probs.as_deref()),
        Command::Relax => commands::relax(cfg),
        Command::PoincareAudit => commands::poincare(cfg),
        Command::WeakPoincare => commands::weak_poincare(cfg),
    }?;
    if let (Some(path), Some((header, rows))) = (&flags.csv, &outcome.csv) {
        std::fs::write(path, csv_text(header, rows))
            .map_err(|e| disperc::Error::InvalidParameter(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let name = cli.command.name();
    let cfg = resolve(&cli.flags);
    let result = cfg.as_ref().map_err(Clone::clone).and_then(|cfg| execute(cli.command, cfg, &cli.flags));

    let (outcome, error, code) = match result {
        Ok(outcome) => {
            let code = if outcome.all_pass() { 0 } else { 1 };
            (outcome, None, code)
        }
        Err(e) => (Outcome::default(), Some(e.to_string()), 2),
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: name.to_string(),
        config: cfg.ok(),
        results: if error.is_some() { Value::Null } else { outcome.results.clone() },
        certificate: outcome.certificate.clone(),
        assertions: outcome.assertions.clone(),
        error: error.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));

    eprintln!("disperc {name}");
    for line in &outcome.summary {
        eprintln!("  {line}");
    }
    match &error {
        Some(e) => eprintln!("  error: {e}"),
        None => {
            let failed: Vec<&str> = outcome.assertions.iter().filter(|a| !a.pass).map(|a| a.name.as_str()).collect();
            eprintln!("  {} assertions, {} failed", outcome.assertions.len(), failed.len());
            for f in failed.iter().take(10) {
                eprintln!("  FAIL {f}");
            }
        }
    }
    eprintln!("  wall time {:.3} s", report.wall_time);
    ExitCode::from(code)
}
