fn main() {
    std::process::exit(dstl::cli::run(std::env::args_os()));
}
