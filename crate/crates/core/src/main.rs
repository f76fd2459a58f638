fn main() {
    std::process::exit(docset::cli::run(std::env::args_os()));
}
