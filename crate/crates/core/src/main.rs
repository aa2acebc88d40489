fn main() {
    std::process::exit(cumvol::cli::run(std::env::args_os()));
}
