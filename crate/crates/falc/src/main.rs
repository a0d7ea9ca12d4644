fn main() {
    std::process::exit(falc::run_cli());
}
