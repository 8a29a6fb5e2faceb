fn main() {
    std::process::exit(ctpnet::cli::main_with_args(std::env::args_os()));
}
