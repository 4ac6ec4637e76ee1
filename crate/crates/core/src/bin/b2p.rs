fn main() {
    std::process::exit(bits2photon::cli::run(std::env::args_os()));
}
