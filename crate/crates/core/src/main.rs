fn main() {
    std::process::exit(autopass::cli::main())
}
