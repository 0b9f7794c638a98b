fn main() {
    // placeholder while the library grows; replaced by the CLI module
    eprintln!("speakervc: not yet wired");
    std::process::exit(2);
}
