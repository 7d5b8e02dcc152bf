fn main() {
    std::process::exit(pwe_fusion::cli::run(std::env::args_os()));
}
