fn main() {
    std::process::exit(fmnkit::cli::main_with_args(std::env::args_os()));
}
