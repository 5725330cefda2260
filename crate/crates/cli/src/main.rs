use clap::Parser;
use spatial_abundance_cli::args::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation failures; help and version are not
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(spatial_abundance_cli::run(&cli));
}
