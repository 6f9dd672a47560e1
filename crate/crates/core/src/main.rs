fn main() { println!("sunet"); }
