//! Nearest-neighbour model server for testing the frame protocol.
//!
//! Serves stdin/stdout by default, or every connection on `--tcp ADDR`.

use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::thread;

use clap::Parser;
use hiersr::backend::stub::serve_nearest;

#[derive(Parser)]
struct Args {
    /// Listen address, e.g. 127.0.0.1:7741. Prints the bound address.
    #[arg(long)]
    tcp: Option<String>,
    /// Refuse requests for any other level.
    #[arg(long)]
    level: Option<u32>,
}

fn main() {
    let args = Args::parse();
    let result = match args.tcp {
        None => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            serve_nearest(BufReader::new(stdin), BufWriter::new(stdout), args.level)
        }
        Some(addr) => {
            let listener = match TcpListener::bind(&addr) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("hiersr-stub-server: bind {addr}: {e}");
                    std::process::exit(1);
                }
            };
            if let Ok(a) = listener.local_addr() {
                println!("{a}");
            }
            for stream in listener.incoming().flatten() {
                let level = args.level;
                thread::spawn(move || {
                    let r = match stream.try_clone() {
                        Ok(r) => r,
                        Err(_) => return,
                    };
                    if let Err(e) = serve_nearest(BufReader::new(r), BufWriter::new(stream), level)
                    {
                        eprintln!("hiersr-stub-server: {e}");
                    }
                });
            }
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("hiersr-stub-server: {e}");
        std::process::exit(1);
    }
}
