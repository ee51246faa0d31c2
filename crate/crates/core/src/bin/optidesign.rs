fn main() {
    std::process::exit(optidesign::cli::run(std::env::args_os()));
}
