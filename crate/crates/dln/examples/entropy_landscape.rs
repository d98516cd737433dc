//! The free-energy landscape over singular values: tabulate the orbit
//! entropy and F_beta = E - S/beta on a 2-d sigma grid and locate the
//! minimizer.
//!
//!     cargo run --release --example entropy_landscape

use dln::flows::LossSpec;
use dln::thermo;
use nalgebra::{DMatrix, DVector};

fn main() {
    let n = 3usize;
    let beta = 2.0;
    let loss = LossSpec::diagonal_completion(2);
    let (lo, hi, steps) = (0.2, 2.4, 12);
    let h = (hi - lo) / (steps - 1) as f64;

    println!("F_beta(diag(s1, s2)) at N = {n}, beta = {beta} (rows s1, cols s2):");
    print!("        ");
    for j in 0..steps {
        print!("{:>8.2}", lo + j as f64 * h);
    }
    println!();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..steps {
        let s1 = lo + i as f64 * h;
        print!("{s1:>7.2} ");
        for j in 0..steps {
            let s2 = lo + j as f64 * h;
            let sigma = if s1 >= s2 { [s1, s2] } else { [s2, s1] };
            let s = thermo::entropy(&sigma, n).unwrap();
            let w = DMatrix::from_diagonal(&DVector::from_vec(vec![s1, s2]));
            let f = loss.value(&w) - s / beta;
            if f < best.0 {
                best = (f, s1, s2);
            }
            print!("{f:>8.3}");
        }
        println!();
    }
    println!(
        "\ngrid minimizer: F = {:.4} at sigma = ({:.2}, {:.2})",
        best.0, best.1, best.2
    );
    println!("(the entropy term pushes the minimizer away from equal singular values)");
}
