fn main() -> std::process::ExitCode {
    brwlab::cli::main_entry()
}
