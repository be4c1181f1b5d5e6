fn main() {
    let code = plantiv_cli::run(std::env::args_os(), &plantiv_cli::Env::from_process());
    std::process::exit(code);
}
