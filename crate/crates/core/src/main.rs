fn main() {
    std::process::exit(rangeguard::cli::main(std::env::args_os()));
}
