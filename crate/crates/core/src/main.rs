fn main() -> std::process::ExitCode {
    vbdvs::cli::main_entry()
}
