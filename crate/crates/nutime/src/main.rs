fn main() {
    std::process::exit(nutime::cli::run(std::env::args_os()));
}
