fn main() {
    // placeholder; CLI lands with the training modules
}
