fn main() {
    std::process::exit(fatpf::run_cli());
}
