fn main() {
    std::process::exit(dsm_afe::cli::main_with_args(std::env::args_os()));
}
