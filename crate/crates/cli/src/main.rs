fn main() {
    std::process::exit(d2nn_cli::app::main_with_args(std::env::args_os()));
}
