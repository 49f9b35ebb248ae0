fn main() {
    std::process::exit(starksim::cli::main_exit_code());
}
