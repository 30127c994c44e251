use std::hint::black_box;
use std::time::Instant;

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use a4net::tensor::{ops, Tensor};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::from_shape_vec(IxDyn(shape), (0..n).map(|_| rng.gen_range(-1.0..1.0f32)).collect())
        .unwrap()
}

fn time_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    t0.elapsed().as_secs_f64() * 1000.0 / reps as f64
}

#[test]
fn kernel_profile() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // (h, w, c, blocks) per stage of the mini model incl. the two clones.
    let stages = [(16usize, 16usize, 32usize, 3usize), (8, 8, 64, 3), (4, 4, 128, 4), (2, 2, 256, 9)];
    let reps = 200;
    let mut tot_dw = 0.0;
    let mut tot_pw = 0.0;
    let mut tot_ln = 0.0;
    let mut tot_grn = 0.0;
    let mut tot_gelu = 0.0;
    for (h, w, c, blocks) in stages {
        let x = rand_t(&mut rng, &[h, w, c]);
        let x4 = rand_t(&mut rng, &[h, w, 4 * c]);
        let wt = rand_t(&mut rng, &[7, 7, c]);
        let b = vec![0.1f32; c];
        let gamma = vec![1.0f32; c];
        let beta = vec![0.0f32; c];
        let gamma4 = vec![1.0f32; 4 * c];
        let dy = rand_t(&mut rng, &[h, w, c]);
        let dy4 = rand_t(&mut rng, &[h, w, 4 * c]);
        let w_up = rand_t(&mut rng, &[c, 4 * c]);
        let w_down = rand_t(&mut rng, &[4 * c, c]);

        let dw = time_ms(reps, || {
            let y = ops::dwconv7_fwd(&x, &wt, &b);
            black_box(ops::dwconv7_bwd(&x, &wt, &y));
        });
        let pw = time_ms(reps, || {
            // fwd: x*W1, x4*W2; bwd: 2 gemms each
            let x2 = ops::as_2d(&x, c);
            let x42 = ops::as_2d(&x4, 4 * c);
            black_box(x2.dot(&ops::as_2d(&w_up, 4 * c)));
            black_box(x42.dot(&ops::as_2d(&w_down, c)));
            black_box(ops::as_2d(&dy4, 4 * c).dot(&ops::as_2d(&w_up, 4 * c).t()));
            black_box(x2.t().dot(&ops::as_2d(&dy4, 4 * c)));
            black_box(ops::as_2d(&dy, c).dot(&ops::as_2d(&w_down, c).t()));
            black_box(x42.t().dot(&ops::as_2d(&dy, c)));
        });
        let ln = time_ms(reps, || {
            black_box(ops::layer_norm_fwd(&x, &gamma, &beta, ops::LN_EPS));
            black_box(ops::layer_norm_bwd(&x, &gamma, &dy, ops::LN_EPS));
        });
        let grn = time_ms(reps, || {
            black_box(ops::grn_fwd(&x4, &gamma4, &gamma4, ops::GRN_EPS));
            black_box(ops::grn_bwd(&x4, &gamma4, &dy4, ops::GRN_EPS));
        });
        let gelu = time_ms(reps, || {
            black_box(ops::gelu_fwd(&x4));
            black_box(ops::gelu_bwd(&x4, &dy4));
        });
        println!(
            "stage {h}x{w}x{c} x{blocks}: dw {dw:.3} pw {pw:.3} ln {ln:.3} grn {grn:.3} gelu {gelu:.3} (ms/block fwd+bwd)"
        );
        tot_dw += dw * blocks as f64;
        tot_pw += pw * blocks as f64;
        tot_ln += ln * blocks as f64;
        tot_grn += grn * blocks as f64;
        tot_gelu += gelu * blocks as f64;
    }
    println!(
        "totals over 19 blocks: dw {tot_dw:.2} pw {tot_pw:.2} ln {tot_ln:.2} grn {tot_grn:.2} gelu {tot_gelu:.2} sum {:.2} ms",
        tot_dw + tot_pw + tot_ln + tot_grn + tot_gelu
    );
}
