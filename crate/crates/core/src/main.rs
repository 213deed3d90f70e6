fn main() {
    std::process::exit(sdu_lab::cli::run(std::env::args_os()));
}
