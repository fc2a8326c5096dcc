fn main() {
    println!("dppp-lab placeholder");
}
