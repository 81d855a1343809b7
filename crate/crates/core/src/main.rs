fn main() {
    std::process::exit(hiersr::cli::run(std::env::args_os()));
}
