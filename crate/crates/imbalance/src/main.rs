fn main() {
    std::process::exit(imbalance::cli::run(std::env::args_os()));
}
