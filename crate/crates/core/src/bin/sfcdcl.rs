fn main() {
    std::process::exit(sfcdcl::cli::run(std::env::args_os()));
}
