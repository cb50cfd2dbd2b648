fn main() {
    println!("hdsr");
}
