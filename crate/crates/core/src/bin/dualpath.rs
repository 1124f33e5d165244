fn main() {
    std::process::exit(dualpath::cli::main());
}
