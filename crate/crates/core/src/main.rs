fn main() {
    std::process::exit(memloop::cli::main());
}
