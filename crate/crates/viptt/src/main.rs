fn main() {
    std::process::exit(viptt::cli::run(std::env::args()));
}
