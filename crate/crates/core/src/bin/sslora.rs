fn main() {
    std::process::exit(sslora::cli::run(std::env::args_os()));
}
