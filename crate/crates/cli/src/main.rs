fn main() {
    std::process::exit(tgan_cli::commands::main_with_args(std::env::args_os().skip(1)));
}
