use std::io::{self, Write};
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use gsal_cli::bench::{aggregate, format_aggregate};
use gsal_cli::{cmd_bench, cmd_boundcheck, cmd_run, cmd_serve, Cli, Command};

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let summary = cmd_run(&args)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Bench(args) => {
            let rows = match &args.out {
                Some(path) => {
                    let mut file = io::BufWriter::new(std::fs::File::create(path)?);
                    let rows = cmd_bench(&args, &mut file)?;
                    file.flush()?;
                    rows
                }
                None => cmd_bench(&args, &mut io::stdout().lock())?,
            };
            if !rows.is_empty() {
                eprint!("{}", format_aggregate(&aggregate(&rows)));
            }
        }
        Command::Boundcheck(args) => {
            if !cmd_boundcheck(&args, &mut io::stdout().lock())? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Serve(args) => {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(cmd_serve(&args))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
