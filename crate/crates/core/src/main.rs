fn main() {
    std::process::exit(blv::cli::run(std::env::args_os()));
}
