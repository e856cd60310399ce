fn main() {
    std::process::exit(fhawkes::harness::cli::main());
}
