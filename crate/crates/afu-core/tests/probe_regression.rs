// Temporary diagnostic probe; run with
//   cargo test -p afu-core --test probe_regression -- --ignored --nocapture
use afu_core::envs::sfm_reward;
use afu_core::nn::{Activation, AdamState, MlpNet};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
#[ignore]
fn probe_pure_regression_on_skewed_sfm_data() {
    for width in [128usize, 192] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = MlpNet::new(&[2, width, width, 1], Activation::Relu, &mut rng);
        let mut adam = AdamState::new("q", &q, 3e-4);
        let n = 256;
        for step in 0..20_000 {
            let mut sa = Array2::zeros((n, 2));
            let mut og = Array2::zeros((n, 1));
            let mut targets = vec![0.0; n];
            for i in 0..n {
                // 95% trapped-policy actions, 5% uniform (warmup leftovers).
                let a: f64 = if rng.random_range(0.0..1.0) < 0.95 {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    (-1.35f64 + 0.45 * eps).tanh()
                } else {
                    rng.random_range(-1.0..=1.0)
                };
                sa[[i, 1]] = a;
                targets[i] = sfm_reward(a);
            }
            let trace = q.forward_trace(sa.view());
            {
                let out = trace.output();
                for i in 0..n {
                    og[[i, 0]] = 2.0 * (out[[i, 0]] - targets[i]) / n as f64;
                }
            }
            let (grads, _) = q.backward_trace(&trace, og.view());
            adam.step(&mut q, &grads).unwrap();
            if (step + 1) % 2500 == 0 {
                let q01 = q.forward(array![0.0, 0.1].view())[0];
                let qm08 = q.forward(array![0.0, -0.8].view())[0];
                let qm05 = q.forward(array![0.0, -0.5].view())[0];
                println!(
                    "width {width} step {:>6}: Q(0.1) {:+.3} Q(-0.8) {:+.3} Q(-0.5) {:+.3}",
                    step + 1,
                    q01,
                    qm08,
                    qm05
                );
            }
        }
    }
}
