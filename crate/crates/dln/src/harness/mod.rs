//! Experiment harness: configuration-driven runs, trajectory persistence,
//! rank diagnostics and the invariant audit battery.

pub mod audit;
pub mod config;
pub mod runs;

pub use config::{ExperimentConfig, Kind};
pub use runs::{run, RunReport};

use crate::flows::TrajectoryRecord;

/// Count of singular values above `rel_tol` times the largest one; zero when
/// the largest is zero. The threshold is a reporting convention, recorded in
/// every manifest.
pub fn effective_rank(sigma: &[f64], rel_tol: f64) -> usize {
    let top = sigma.iter().fold(0.0f64, |a, &b| a.max(b));
    if top <= 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > rel_tol * top).count()
}

/// A drop of the effective rank along a trajectory.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RankEvent {
    pub path_id: usize,
    pub t: f64,
    pub old_rank: usize,
    pub new_rank: usize,
    /// The singular value that crossed the threshold at the drop.
    pub sigma_at_drop: f64,
}

/// Scans recorded singular values for effective-rank drops. Increases are
/// not recorded as events; the caller may count them separately as
/// anomalies.
pub fn rank_events(
    path_id: usize,
    records: &[TrajectoryRecord],
    rel_tol: f64,
) -> (Vec<RankEvent>, usize) {
    let mut events = Vec::new();
    let mut anomalies = 0;
    let mut prev: Option<usize> = None;
    for rec in records {
        let rank = effective_rank(&rec.sigma, rel_tol);
        if let Some(old) = prev {
            if rank < old {
                // sigma is descending; the entry indexed old-1 crossed.
                let sigma_at_drop = rec.sigma.get(old - 1).copied().unwrap_or(0.0);
                events.push(RankEvent {
                    path_id,
                    t: rec.t,
                    old_rank: old,
                    new_rank: rank,
                    sigma_at_drop,
                });
            } else if rank > old {
                anomalies += 1;
            }
        }
        prev = Some(rank);
    }
    (events, anomalies)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, sigma: Vec<f64>) -> TrajectoryRecord {
        TrajectoryRecord {
            t,
            energy: 0.0,
            entropy: 0.0,
            free_energy: 0.0,
            sigma,
            balance_residual: 0.0,
            g_drift: 0.0,
            det_w: 0.0,
            grad_norm_sq: 0.0,
            decay_residual: None,
        }
    }

    #[test]
    fn effective_rank_thresholds() {
        assert_eq!(effective_rank(&[3.0, 2.0, 1.0], 1e-6), 3);
        assert_eq!(effective_rank(&[1.0, 1e-9], 1e-6), 1);
        assert_eq!(effective_rank(&[0.0, 0.0], 1e-6), 0);
    }

    #[test]
    fn rank_events_capture_drops_only() {
        let records = vec![
            rec(0.0, vec![1.0, 0.5]),
            rec(1.0, vec![1.0, 1e-8]),
            rec(2.0, vec![1.0, 0.4]),
            rec(3.0, vec![1.0, 1e-9]),
        ];
        let (events, anomalies) = rank_events(7, &records, 1e-6);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].path_id, 7);
        assert_eq!(events[0].old_rank, 2);
        assert_eq!(events[0].new_rank, 1);
        assert!((events[0].t - 1.0).abs() < 1e-15);
        assert!((events[0].sigma_at_drop - 1e-8).abs() < 1e-20);
        assert_eq!(anomalies, 1);
    }
}
