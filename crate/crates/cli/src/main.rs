use clap::Parser;

use geoloc_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
    std::process::exit(geoloc_cli::run(&cli) as i32);
}
