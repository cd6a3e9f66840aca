fn main() {
    println!("halosim");
}
