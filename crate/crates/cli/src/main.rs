use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diarize_cli::commands::{self, DiarizeArgs, EmbedArgs, Globals, ScoreArgs, SynthArgs, TrainArgs, TuneArgs};
use diarize_cli::CliError;

#[derive(Parser)]
#[command(name = "diarize", version, about = "Attention-embedding speaker diarization")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder with the triplet loss.
    Train(TrainArgs),
    /// Export segment embeddings.
    Embed(EmbedArgs),
    /// Cluster segment embeddings into an RTTM hypothesis.
    Diarize(DiarizeArgs),
    /// Diarization error rate of a hypothesis RTTM.
    Score(ScoreArgs),
    /// Grid search over margin and speakers per batch.
    Tune(TuneArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.globals;
    match &cli.command {
        Command::Train(a) => commands::cmd_train(g, a),
        Command::Embed(a) => commands::cmd_embed(g, a),
        Command::Diarize(a) => commands::cmd_diarize(g, a),
        Command::Score(a) => commands::cmd_score(g, a).map(|_| ()),
        Command::Tune(a) => commands::cmd_tune(g, a),
        Command::Synth(a) => commands::cmd_synth(g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
