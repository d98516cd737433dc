//! The Boltzmann entropy of group orbits and free-energy descent: closed
//! forms against the Gram-determinant oracle, the explicit entropy gradient,
//! and a flow that trades energy against entropy.
//!
//!     cargo run --release --example orbit_entropy

use dln::flows::LossSpec;
use dln::matops::{self, Matrix};
use dln::network::random_balanced_coords;
use dln::oracle;
use dln::stochastic::path_rng;
use dln::thermo;

fn main() {
    // Closed form vs the orbit-volume oracle.
    let mut rng = path_rng(17, 0);
    let (d, n) = (2, 3);
    println!("entropy against the group-Gram oracle (d = {d}, N = {n}):");
    for _ in 0..4 {
        let coords = loop {
            let c = random_balanced_coords(d, n, 1.0, &mut rng).unwrap();
            if c.min_relative_gap() > 0.05 {
                break c;
            }
        };
        let sigma: Vec<f64> = coords.lambda().iter().map(|l| l.powi(n as i32)).collect();
        let s = thermo::entropy(&sigma, n).unwrap();
        let oracle_val = oracle::group_gram_log_sqrt_det(&coords);
        println!("  sigma = {sigma:?}: S = {s:+.6}, oracle = {oracle_val:+.6}");
    }

    // The entropy gradient in the depth-N geometry is Q_N Σ' Q_0ᵀ.
    let w = oracle::random_full_rank(3, &mut rng);
    let svd = matops::svd_ordered(&w).unwrap();
    if let Ok(sp) = thermo::sigma_prime(svd.sigma_slice(), n) {
        let fd = oracle::fd_entropy_gradient(&w, n, 1e-6);
        let lhs = dln::flows::apply_a(&svd, &fd, n);
        let rhs = &svd.q_left * Matrix::from_diagonal(&sp) * svd.q_right.transpose();
        println!(
            "\nentropy gradient identity: ||A(grad_FD S) - Q_N S' Q_0^T||_max = {:.3e}",
            (lhs - rhs).amax()
        );
    }

    // Free-energy descent: energy falls, entropy repels the spectrum.
    let loss = LossSpec::diagonal_completion(2);
    let beta = 4.0;
    let mut w = Matrix::from_row_slice(2, 2, &[1.4, 0.3, -0.2, 0.8]);
    println!("\nfree-energy descent at beta = {beta} (dt = 1e-3):");
    println!("  step    E           S          F");
    for step in 0..=2000 {
        let svd = matops::svd_ordered(&w).unwrap();
        if step % 400 == 0 {
            let e = loss.value(&w);
            let s = thermo::entropy(svd.sigma_slice(), n).unwrap();
            println!("  {step:>5}  {e:.6}   {s:+.6}  {:+.6}", e - s / beta);
        }
        let grad = thermo::grad_free_energy_svd(&svd, &w, &loss, n, beta).unwrap();
        w -= 1e-3 * grad;
    }
    println!("final W =\n{w}");
}
