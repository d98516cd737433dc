//! Langevin dynamics with the anisotropy parameter kappa: noisy paths
//! upstairs on the balanced manifold (gauge noise at full strength,
//! observable noise scaled by sqrt(kappa)) and the matching free-energy
//! Langevin equation downstairs.
//!
//!     cargo run --release --example langevin_dynamics

use dln::flows::LossSpec;
use dln::matops;
use dln::network::{init_random, InitMode};
use dln::stochastic::{bm_increment, normal_stack, path_rng, rle_step_up, SdeConfig, SvdGauge};
use dln::thermo;

fn main() {
    let (d, n) = (2usize, 3usize);
    let loss = LossSpec::diagonal_completion(d);
    let cfg = SdeConfig {
        beta: 50.0,
        kappa: 1.0,
        dt: 1e-4,
        t_end: 0.5,
        seed: 23,
        paths: 1,
        record_every: 500,
    };

    // Downstairs: dW = -grad F dt + Brownian noise at temperature beta/kappa.
    println!(
        "downstairs Langevin path (beta = {}, kappa = {}):",
        cfg.beta, cfg.kappa
    );
    let mut rng = path_rng(cfg.seed, 0);
    let mut w = init_random(d, n, 0.7, InitMode::Balanced, &mut rng)
        .unwrap()
        .end_to_end();
    let mut gauge = SvdGauge::new();
    println!("  t       E           F           sigma");
    for step in 0..=cfg.steps() {
        let svd = gauge.refresh(&w).unwrap();
        if step % cfg.record_every == 0 {
            let e = loss.value(&w);
            let f = thermo::free_energy(svd.sigma_slice(), n, &loss, &w, cfg.beta).unwrap();
            println!(
                "  {:5.2}  {:.6}   {:+.6}  {:?}",
                step as f64 * cfg.dt,
                e,
                f,
                svd.sigma_slice()
            );
        }
        if step == cfg.steps() {
            break;
        }
        let grad = thermo::grad_free_energy_svd(&svd, &w, &loss, n, cfg.beta).unwrap();
        w -= cfg.dt * grad;
        let noise = dln::stochastic::normal_matrix(d, &mut rng);
        w += bm_increment(&svd, cfg.beta / cfg.kappa, n, cfg.dt, &noise);
    }

    // Upstairs: drift along the full field, noise projected onto the
    // tangent space and split between gauge and horizontal directions,
    // re-balanced after every step.
    println!("\nupstairs Langevin path on the balanced manifold:");
    let mut rng = path_rng(cfg.seed, 1);
    let mut state = init_random(d, n, 0.7, InitMode::Balanced, &mut rng).unwrap();
    println!("  t       E           balance residual");
    for step in 0..=cfg.steps() {
        if step % cfg.record_every == 0 {
            let w = state.end_to_end();
            println!(
                "  {:5.2}  {:.6}   {:.3e}",
                step as f64 * cfg.dt,
                loss.value(&w),
                state.balance_residual()
            );
        }
        if step == cfg.steps() {
            break;
        }
        let noise = normal_stack(d, n, &mut rng);
        state = rle_step_up(&state, &loss, &cfg, &noise).unwrap();
    }
    let svd = matops::svd_ordered(&state.end_to_end()).unwrap();
    println!("final spectrum upstairs: {:?}", svd.sigma_slice());
}
