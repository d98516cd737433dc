//! Eigenvalue repulsion two ways: the interacting particle system and the
//! matrix diffusion whose spectrum follows the same law. The deterministic
//! limit spreads the particles like sqrt(g0² + 4t); at finite temperature
//! the two discretizations agree in distribution.
//!
//!     cargo run --release --example dyson_eigenvalues

use dln::oracle;
use dln::stats;
use dln::stochastic::{
    dyson_matrix_step, dyson_particle_advance, dyson_particle_step, normal_matrix, path_rng,
    DysonState,
};
use nalgebra::{DMatrix, DVector};

fn main() {
    // Deterministic gap law for the symmetric pair.
    let mut x = DysonState::new(vec![-1.0, 1.0]).unwrap();
    let dt = 1e-4;
    for _ in 0..(3.0_f64 / dt) as usize {
        x = dyson_particle_step(&x, f64::INFINITY, dt, &[0.0, 0.0]).unwrap();
    }
    let gap = x.positions()[1] - x.positions()[0];
    let brute = oracle::dyson_deterministic_rk4(&[-1.0, 1.0], 3.0, 1e-4);
    println!("deterministic gap at t = 3: {gap:.6}");
    println!(
        "  analytic sqrt(4 + 12) = 4, brute-force RK4 gives {:.9}",
        brute[1] - brute[0]
    );

    // Matrix vs particle law at beta = 1.
    let beta = 1.0;
    let paths = 400usize;
    let steps = 1000usize;
    let particle: Vec<f64> = (0..paths)
        .map(|p| {
            let mut rng = path_rng(31, p as u64);
            let mut x = DysonState::new(vec![-1.0, 1.0]).unwrap();
            for _ in 0..steps {
                x = dyson_particle_advance(&x, beta, 1e-3, 10, &mut rng).unwrap();
            }
            x.positions()[1] - x.positions()[0]
        })
        .collect();
    let matrix: Vec<f64> = (0..paths)
        .map(|p| {
            let mut rng = path_rng(131, p as u64);
            let mut m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
            for _ in 0..steps {
                let noise = normal_matrix(2, &mut rng);
                m = dyson_matrix_step(&m, beta, 1.0, 1e-3, &noise, None).unwrap();
            }
            let mut vals: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals[1] - vals[0]
        })
        .collect();
    let (d_stat, p) = stats::two_sample_ks(&particle, &matrix);
    println!("\nbeta = 1, t = 1, {paths} paths each:");
    println!(
        "  particle gap mean {:.4}, matrix gap mean {:.4}",
        stats::mean(&particle),
        stats::mean(&matrix)
    );
    println!("  two-sample KS: D = {d_stat:.4}, p = {p:.4}");
}
