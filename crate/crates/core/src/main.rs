fn main() {
    std::process::exit(scriptline::cli::main_with_args(std::env::args_os()));
}
