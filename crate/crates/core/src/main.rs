fn main() {
    std::process::exit(cmprior::app::run(std::env::args_os()));
}
