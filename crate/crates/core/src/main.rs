fn main() {
    std::process::exit(hopflab::cli::main_entry());
}
