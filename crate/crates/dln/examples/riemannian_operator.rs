//! The depth-N operator that turns Euclidean gradients into the reduced
//! flow: spectral application against the literal power sum, metric values,
//! and the infinite-depth limit.
//!
//!     cargo run --release --example riemannian_operator

use dln::flows::{self, a_scale};
use dln::geometry::{apply_a_infty, metric_gn};
use dln::matops::{self, Matrix};
use dln::oracle;
use dln::stochastic::path_rng;

fn main() {
    let mut rng = path_rng(11, 0);
    let w = oracle::random_full_rank(3, &mut rng);
    let z = oracle::random_matrix(3, 1.0, &mut rng);
    let svd = matops::svd_ordered(&w).unwrap();
    println!("singular values of W: {:?}", svd.sigma_slice());

    for n in [1usize, 2, 4, 8] {
        let fast = flows::apply_a(&svd, &z, n);
        let slow = oracle::apply_a_power_sum(&w, &z, n);
        println!(
            "N = {n}: ||spectral - power sum|| = {:.3e}",
            (&fast - &slow).norm()
        );
    }

    // Eigenvalues on mixed and aligned singular directions.
    let (s1, s2) = (svd.sigma[0], svd.sigma[1]);
    println!(
        "\noperator eigenvalues at N = 3: aligned (k=1) {:.6}, mixed (1,2) {:.6}",
        a_scale(s1, s1, 3),
        a_scale(s1, s2, 3)
    );

    // The metric is the inverse pairing: at W = I it is ||Z||²/N.
    let id = Matrix::identity(3, 3);
    let svd_id = matops::svd_ordered(&id).unwrap();
    let g = metric_gn(&svd_id, &z, &z, 4).unwrap();
    println!(
        "metric at W = I, N = 4: g(Z, Z) = {:.6} vs ||Z||²/4 = {:.6}",
        g,
        z.norm_squared() / 4.0
    );

    // (1/N) A_N approaches the integral operator at rate O(1/N).
    let target = apply_a_infty(&svd, &z);
    println!("\ninfinite-depth limit (relative error of (1/N) A_N):");
    for n in [100usize, 1000, 10_000] {
        let err = ((flows::apply_a(&svd, &z, n) / n as f64) - &target).norm() / z.norm();
        println!("  N = {n:>6}: {err:.3e}");
    }
}
