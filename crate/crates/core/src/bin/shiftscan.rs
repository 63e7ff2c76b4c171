fn main() {
    std::process::exit(shiftscan::cli::main_with_args(std::env::args_os()));
}
