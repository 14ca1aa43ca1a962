fn main() {
    std::process::exit(dpolab::main_with_args(std::env::args().collect()));
}
