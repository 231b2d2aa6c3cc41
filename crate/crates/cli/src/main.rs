fn main() {
    std::process::exit(plmx_cli::main_with(std::env::args_os()));
}
