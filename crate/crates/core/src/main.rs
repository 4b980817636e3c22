fn main() {
    std::process::exit(zsmmd::cli::main_with_args(std::env::args_os()));
}
