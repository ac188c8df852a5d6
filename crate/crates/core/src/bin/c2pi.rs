fn main() {
    std::process::exit(c2pi::cli::run_command(std::env::args_os()));
}
