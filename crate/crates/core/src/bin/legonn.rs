fn main() {
    std::process::exit(legonn::harness::cli::main_with_args(std::env::args_os()));
}
