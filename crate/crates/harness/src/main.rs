fn main() {
    std::process::exit(fcvp_harness::cli::main_with_args(std::env::args_os()));
}
