fn main() {
    let code = brwlab::cli::run_from_args(std::env::args_os());
    std::process::exit(code);
}
