fn main() {
    std::process::exit(tip_harness::cli::run(std::env::args_os()));
}
