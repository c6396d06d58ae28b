fn main() {
    std::process::exit(subbyte_har::cli::run(std::env::args_os()));
}
