//! The geometry upstairs: the orthonormal tangent basis on the balanced
//! manifold, the block-tridiagonal pullback metric, and the submersion
//! diagnostics connecting the two levels.
//!
//!     cargo run --release --example tangent_geometry

use dln::flows::LossSpec;
use dln::geometry::{pullback_metric, submersion_check, tangent_basis};
use dln::matops::Matrix;
use dln::network::random_balanced_coords;
use dln::oracle;
use dln::stochastic::path_rng;

fn main() {
    let (d, n) = (2, 4);
    let mut rng = path_rng(13, 0);
    let coords = loop {
        let c = random_balanced_coords(d, n, 1.0, &mut rng).unwrap();
        if c.min_relative_gap() > 0.05 {
            break c;
        }
    };
    println!("lambda = {:?}", coords.lambda().as_slice());

    let blocks = pullback_metric(&coords);
    println!(
        "\npullback metric: diagonal sector {} * I_{d}, one tridiagonal block per pair:",
        blocks.diagonal_scale
    );
    println!("{}", blocks.pair_blocks[0].tridiagonal);

    let numeric = oracle::numeric_pullback_gram(&coords);
    let analytic = oracle::assemble_pullback_blocks(&blocks, d, n);
    println!(
        "numeric Gram vs analytic blocks: max deviation {:.3e}",
        (numeric - analytic).amax()
    );

    let atlas = tangent_basis(&coords).unwrap();
    let gram = atlas.gram();
    let m = gram.nrows();
    println!(
        "tangent basis: {} vectors, ||Gram - I||_max = {:.3e}",
        m,
        (gram - Matrix::identity(m, m)).amax()
    );

    let report = submersion_check(&coords, &LossSpec::diagonal_completion(d), 1e-9).unwrap();
    println!("\nsubmersion diagnostics:");
    println!(
        "  kernel residual:            {:.3e}",
        report.kernel_residual
    );
    println!(
        "  horizontal Gram residual:   {:.3e}",
        report.horizontal_gram_residual
    );
    println!(
        "  gradient norms up/down:     {:.6e} / {:.6e} (relative gap {:.3e})",
        report.upstairs_grad_norm_sq, report.downstairs_grad_norm_sq, report.grad_identity_residual
    );
    println!("  passed: {}", report.passed());
}
