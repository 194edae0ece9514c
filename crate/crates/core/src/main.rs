fn main() {
    std::process::exit(riskalloc::cli::run(std::env::args_os()));
}
