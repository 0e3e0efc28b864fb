use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::Parser;
use rbmlab::exp_cli::{cli, request_cancel};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

fn main() -> ExitCode {
    let args = cli::Cli::parse();
    let _ = ctrlc::set_handler(|| {
        if INTERRUPTED.swap(true, Ordering::SeqCst) {
            std::process::exit(3);
        }
        eprintln!("interrupt: stopping at the next chunk boundary (repeat to abort)");
        request_cancel();
    });
    let code = cli::run(&args, &mut std::io::stdout().lock());
    ExitCode::from(u8::try_from(code).unwrap_or(3))
}
