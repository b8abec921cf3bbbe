fn main() {
    std::process::exit(ghz_cli::main_exit_code());
}
