fn main() {
    std::process::exit(krflow_core::cli::main_with_args(std::env::args_os()));
}
