fn main() {
    std::process::exit(fedssca::harness::run_cli(std::env::args_os()));
}
