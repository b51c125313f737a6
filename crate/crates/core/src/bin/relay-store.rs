use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use proxyflow::relay::{RelayConfig, RelayServer, DEFAULT_MAX_VALUE_BYTES};

#[derive(Parser)]
#[command(name = "relay-store", version, about = "Key-value and pub/sub relay server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7600")]
        bind: String,
        /// Largest accepted value or message, in bytes.
        #[arg(long, default_value_t = DEFAULT_MAX_VALUE_BYTES)]
        max_value_bytes: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Serve { bind, max_value_bytes } = Cli::parse().command;
    let server = match RelayServer::bind(&bind, RelayConfig { max_value_bytes }) {
        Ok(s) => s,
        Err(e) => {
            error!("cannot bind {bind}: {e}");
            return ExitCode::FAILURE;
        }
    };
    match server.local_addr() {
        // Printed on stdout so scripts binding port 0 can find the server.
        Ok(addr) => {
            println!("listening on {addr}");
            info!("max value size {max_value_bytes} bytes");
        }
        Err(e) => error!("{e}"),
    }
    if let Err(e) = server.serve() {
        error!("{e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
