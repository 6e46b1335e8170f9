fn main() {
    println!("hemips");
}
