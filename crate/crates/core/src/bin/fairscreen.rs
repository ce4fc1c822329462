fn main() {
    std::process::exit(fairscreen::cli::main());
}
