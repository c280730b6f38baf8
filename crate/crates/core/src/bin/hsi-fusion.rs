fn main() {
    std::process::exit(hsi_fusion::cli::run(std::env::args_os()));
}
