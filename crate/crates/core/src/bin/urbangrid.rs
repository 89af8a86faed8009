fn main() {
    std::process::exit(urbangrid::cli::run(std::env::args_os()));
}
