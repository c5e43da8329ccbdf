fn main() {
    std::process::exit(blowup_rescale::cli::main_with(std::env::args_os()));
}
