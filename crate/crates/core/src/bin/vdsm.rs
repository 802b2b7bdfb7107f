fn main() {
    std::process::exit(vdsm::cli::main_with_args(std::env::args_os()));
}
