fn main() {
    std::process::exit(qou::cli::run(std::env::args_os()));
}
