fn main() {
    std::process::exit(emacprof::cli::main_with_args(std::env::args_os()));
}
