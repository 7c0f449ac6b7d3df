fn main() {
    std::process::exit(funcal::cli::run(std::env::args_os()));
}
