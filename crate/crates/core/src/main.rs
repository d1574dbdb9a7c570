fn main() {
    std::process::exit(riskid::cli::run(std::env::args_os()));
}
