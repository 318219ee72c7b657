fn main() {
    std::process::exit(oobgini::cli::run(std::env::args_os()));
}
