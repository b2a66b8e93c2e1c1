fn main() {
    eprintln!("glue: command-line interface not yet wired up");
    std::process::exit(2);
}
