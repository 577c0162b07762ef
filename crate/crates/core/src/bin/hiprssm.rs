fn main() { std::process::exit(hiprssm::cli::run(std::env::args_os())); }
