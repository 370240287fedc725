fn main() {
    std::process::exit(meanflow_cli::run(std::env::args_os()));
}
