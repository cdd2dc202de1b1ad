fn main() {
    std::process::exit(koopman_svd::cli::main_with_args(std::env::args_os()));
}
