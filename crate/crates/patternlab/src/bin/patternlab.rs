fn main() { patternlab::cli::main(); }
