fn main() {
    std::process::exit(bafusion::cli::run(std::env::args_os()));
}
