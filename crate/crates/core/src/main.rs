fn main() {
    std::process::exit(fedvarp_sim::cli::main_with_args(std::env::args_os()));
}
