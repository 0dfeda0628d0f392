mod oracles;

use ulasan::neural::REGISTERED_MODELS;

#[test]
fn every_architecture_fits_a_tiny_corpus() {
    for name in REGISTERED_MODELS {
        let epoch = oracles::learnability(name).unwrap();
        assert!(epoch <= oracles::LEARNABILITY_EPOCHS);
    }
}
