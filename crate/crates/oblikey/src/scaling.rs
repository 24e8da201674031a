//! Wall-time scaling of the key-distribution phase.
//!
//! The per-session work is dominated by the commitments: each of the
//! `n + m` indices costs a constant number of hash compressions over a
//! witness whose length grows linearly with the security parameter, so the
//! whole phase should scale like `security * (n + m)`. The grid runner
//! times honest in-memory sessions over a size/security grid, fits wall
//! time against that product by least squares, and reports the fit quality
//! together with doubling ratios along both axes.

use std::time::Instant;

use crate::channel::ChannelParams;
use crate::commitment::{default_hash, ComParams};
use crate::okd::{run_okd, SessionParams};
use crate::rng;

/// One timed grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCell {
    /// Total positions per session (n + m).
    pub total: usize,
    /// Commitment security parameter.
    pub security: usize,
    /// Best-of-reps wall time for one session, in seconds.
    pub seconds: f64,
}

/// The fitted grid.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub cells: Vec<ScalingCell>,
    /// Least-squares fit of seconds against `security * total`.
    pub slope: f64,
    pub intercept: f64,
    /// Goodness of the affine fit (centered R-squared).
    pub r_squared: f64,
    /// Goodness of the proportional fit `time = slope * security * total`
    /// (uncentered R-squared), the model the complexity claim states.
    pub r_squared_proportional: f64,
}

impl ScalingReport {
    /// Observed time ratio when doubling `total` at fixed `security`,
    /// averaged over all adjacent grid pairs.
    pub fn mean_total_doubling_ratio(&self) -> f64 {
        self.mean_ratio(|a, b| a.security == b.security && b.total == 2 * a.total)
    }

    /// Observed time ratio when doubling `security` at fixed `total`.
    pub fn mean_security_doubling_ratio(&self) -> f64 {
        self.mean_ratio(|a, b| a.total == b.total && b.security == 2 * a.security)
    }

    fn mean_ratio(&self, adjacent: impl Fn(&ScalingCell, &ScalingCell) -> bool) -> f64 {
        let mut ratios = Vec::new();
        for a in &self.cells {
            for b in &self.cells {
                if adjacent(a, b) && a.seconds > 0.0 {
                    ratios.push(b.seconds / a.seconds);
                }
            }
        }
        if ratios.is_empty() {
            return f64::NAN;
        }
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// The default grid: `n + m` from 2^10 through 2^16, security 64/128/256.
pub fn default_totals() -> Vec<usize> {
    (10..=16).map(|e| 1usize << e).collect()
}

pub fn default_securities() -> Vec<usize> {
    vec![64, 128, 256]
}

/// Session parameters for one cell: a 4:1 split of kept to tested positions.
fn cell_params(total: usize, security: usize) -> SessionParams {
    let m = (total / 5).max(1);
    let n = total - m;
    SessionParams::new(
        n,
        m,
        ComParams::new(2, security).expect("valid grid security"),
        0.0,
        ChannelParams::NOISELESS,
    )
    .expect("valid grid parameters")
}

/// Time one honest in-memory session: sessions repeat until a ~40 ms floor
/// is reached (small cells would otherwise be timer noise) and the best of
/// `reps` such measurements wins. When the parallel feature is on, the work
/// is pinned to a single rayon thread so the measured wall time reflects the
/// work done, not the host's core count.
pub fn time_session(total: usize, security: usize, reps: usize, seed: u64) -> f64 {
    with_single_thread(|| {
        let mut cell = GridCellTimer::new(total, security, seed);
        let mut best = f64::INFINITY;
        for rep in 0..reps.max(1) {
            best = best.min(cell.measure(rep as u64));
        }
        best
    })
}

fn with_single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

struct GridCellTimer {
    params: SessionParams,
    total: usize,
    security: usize,
    seed: u64,
    iters: usize,
}

impl GridCellTimer {
    fn new(total: usize, security: usize, seed: u64) -> Self {
        let params = cell_params(total, security);
        let hash = default_hash();
        // estimation run doubles as warmup
        let mut alice = rng::derive(seed, "bench-est", 0);
        let mut bob = rng::derive(seed, "bench-est", 1);
        let start = Instant::now();
        run_okd(params, hash.as_ref(), &mut alice, &mut bob).expect("noiseless bench session");
        let estimate = start.elapsed().as_secs_f64().max(1e-9);
        let iters = ((0.04 / estimate).ceil() as usize).clamp(1, 4000);
        Self {
            params,
            total,
            security,
            seed,
            iters,
        }
    }

    fn measure(&mut self, rep: u64) -> f64 {
        let hash = default_hash();
        let mut alice = rng::derive(self.seed, "bench-alice", rep);
        let mut bob = rng::derive(self.seed, "bench-bob", rep);
        let start = Instant::now();
        for _ in 0..self.iters {
            run_okd(self.params, hash.as_ref(), &mut alice, &mut bob)
                .expect("noiseless bench session");
        }
        start.elapsed().as_secs_f64() / self.iters as f64
    }
}

/// Run the whole grid and fit the linear model.
///
/// Measurements are interleaved rep-major (every cell once, then every cell
/// again) so slow background drift on the host affects all cells roughly
/// equally instead of biasing whole rows; each cell keeps its best time.
pub fn run_scaling_grid(
    totals: &[usize],
    securities: &[usize],
    reps: usize,
    seed: u64,
) -> ScalingReport {
    with_single_thread(|| {
        let mut timers: Vec<GridCellTimer> = securities
            .iter()
            .flat_map(|&security| {
                totals
                    .iter()
                    .map(move |&total| (total, security))
            })
            .map(|(total, security)| GridCellTimer::new(total, security, seed))
            .collect();
        let mut best = vec![f64::INFINITY; timers.len()];
        for rep in 0..reps.max(1) {
            for (timer, slot) in timers.iter_mut().zip(best.iter_mut()) {
                *slot = slot.min(timer.measure(rep as u64));
            }
        }
        let cells: Vec<ScalingCell> = timers
            .iter()
            .zip(&best)
            .map(|(t, &seconds)| ScalingCell {
                total: t.total,
                security: t.security,
                seconds,
            })
            .collect();
        let xs: Vec<f64> = cells
            .iter()
            .map(|c| (c.security * c.total) as f64)
            .collect();
        let ys: Vec<f64> = cells.iter().map(|c| c.seconds).collect();
        let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
        let (_, r_squared_proportional) = proportional_fit(&xs, &ys);
        ScalingReport {
            cells,
            slope,
            intercept,
            r_squared,
            r_squared_proportional,
        }
    })
}

/// Least-squares fit of the proportional model `y = beta * x`; returns
/// `(beta, R^2)` with the uncentered R-squared appropriate for a
/// through-origin regression.
pub fn proportional_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let beta = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - beta * x;
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| y * y).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (beta, r2)
}

/// Ordinary least squares with intercept; returns (slope, intercept, R^2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r_squared)
}
