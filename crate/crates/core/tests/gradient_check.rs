mod common;

use common::{gradient_check, random_input, random_small_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backprop_matches_central_differences_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..5 {
        let model = random_small_model(&mut rng, 16, 3);
        let n = rng.random_range(2..4);
        let x = random_input(&mut rng, &model, n);
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let r = gradient_check(&model, &x, &targets, 1e-4);
        assert!(r.checked > 0);
        assert!(r.kinks * 20 < r.checked, "case {case}: {r:?}");
        assert!(r.max_rel_error < 1e-4, "case {case}: {r:?}");
    }
}
