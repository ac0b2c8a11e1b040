fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(langevin_sensitivity::cli::main_with_args(&args));
}
