fn main() {
    std::process::exit(bwdep::cli::main_entry());
}
