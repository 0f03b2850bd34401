fn main() {
    std::process::exit(spdefem::cli::run(std::env::args_os()));
}
