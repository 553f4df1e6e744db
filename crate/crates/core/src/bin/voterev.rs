fn main() {
    std::process::exit(voterev::cli::run(std::env::args_os()));
}
