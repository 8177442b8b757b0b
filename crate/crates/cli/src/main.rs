use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfkit::pipeline::{self, PipelineConfig};
use cfkit::{ingest, synth, Error};

/// Car-following pair extraction and trajectory enhancement.
#[derive(Debug, Parser)]
#[command(name = "cfkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every enabled stage described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a run directory and print its report.
    Summarize { output_dir: PathBuf },
    /// Generate scene files and truth sidecars from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the format of one scene file.
    Validate { scene_file: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::InvalidScenario(_) => 1,
        Error::Io { .. } | Error::Format { .. } | Error::InsufficientData(_) | Error::Integrity { .. } => 2,
        Error::Numerical(_) => 3,
    }
}

fn run(config: PathBuf) -> cfkit::Result<()> {
    let cfg = PipelineConfig::load(&config)?;
    let report = pipeline::run(&cfg)?;
    let c = &report.counts;
    println!(
        "{} scene files, {} tracks, {} H-A and {} H-H pairs, {} enhanced, {} labelled",
        c.scene_files, c.tracks, c.pairs_ha, c.pairs_hh, c.enhanced, c.labelled
    );
    for f in &report.failures {
        eprintln!("warning: {} failed for {}: {}", f.stage, f.subject, f.reason);
    }
    println!("outputs in {}", report.output_dir.display());
    Ok(())
}

fn generate(scenario: PathBuf, out: PathBuf) -> cfkit::Result<()> {
    let text = std::fs::read_to_string(&scenario).map_err(|source| Error::Io {
        path: scenario.clone(),
        source,
    })?;
    let var = format!("{}RUN__SEED", pipeline::ENV_PREFIX);
    let seed = match std::env::var(&var) {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("{var}={v}: {e}")))?,
        ),
        Err(_) => None,
    };
    let scenarios = synth::scenarios_from_toml_seeded(&text, seed)?;
    let written = synth::write_corpus(&scenarios, &out)?;
    println!("{} pairs written to {}", written.pairs, out.display());
    Ok(())
}

fn validate(path: PathBuf) -> cfkit::Result<()> {
    let (scenes, report) = ingest::read_frames(&path)?;
    let agents: usize = scenes
        .scenes
        .values()
        .map(|frames| {
            frames
                .iter()
                .map(|f| f.agent_id.as_str())
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        })
        .sum();
    println!(
        "{}: {} records, {} scenes, {} agent tracks, {} malformed",
        path.display(),
        report.records_seen,
        scenes.scenes.len(),
        agents,
        report.rejects.len()
    );
    for r in &report.rejects {
        println!("  line {}: {}", r.line, r.reason);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { config } => run(config),
        Command::Summarize { output_dir } => pipeline::summarize(&output_dir).map(|s| print!("{s}")),
        Command::Synth { scenario, out } => generate(scenario, out),
        Command::Validate { scene_file } => validate(scene_file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
