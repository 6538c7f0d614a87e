fn main() {
    std::process::exit(mdqs::cli::run(std::env::args_os()));
}
