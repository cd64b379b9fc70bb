fn main() {
    std::process::exit(p2p_core::cli::run(std::env::args_os()));
}
