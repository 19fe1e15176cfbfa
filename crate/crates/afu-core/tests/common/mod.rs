//! Shared oracles and helpers for the integration suites.

/// Dynamic-programming oracle for the point-reach task: finite-horizon
/// backward induction on a 201-state x 21-action grid. The dynamics land
/// exactly on grid points (0.01 state resolution, 0.1-action steps of size
/// 0.01), so the induction is exact for the gridded problem.
pub struct PointReachOracle {
    /// Optimal value from each grid state at episode start.
    pub values: Vec<f64>,
}

pub const PR_STATES: usize = 201;
pub const PR_ACTIONS: usize = 21;
pub const PR_HORIZON: usize = 20;

pub fn point_reach_dp(gamma: f64) -> PointReachOracle {
    let state = |i: usize| -1.0 + 0.01 * i as f64;
    let mut next_value = vec![0.0f64; PR_STATES];
    let mut value = vec![0.0f64; PR_STATES];
    for _ in 0..PR_HORIZON {
        for i in 0..PR_STATES {
            let mut best = f64::NEG_INFINITY;
            for j in 0..PR_ACTIONS {
                // x' index: i + (j - 10), clamped to the grid.
                let ip = (i as isize + j as isize - 10).clamp(0, PR_STATES as isize - 1) as usize;
                let xp = state(ip);
                let q = -xp * xp + gamma * next_value[ip];
                if q > best {
                    best = q;
                }
            }
            value[i] = best;
        }
        std::mem::swap(&mut value, &mut next_value);
    }
    PointReachOracle { values: next_value }
}

impl PointReachOracle {
    #[allow(dead_code)]
    pub fn value_at(&self, x: f64) -> f64 {
        let i = ((x + 1.0) / 0.01).round() as usize;
        self.values[i.min(PR_STATES - 1)]
    }

    /// Mean optimal return over the grid of initial states (approximates a
    /// uniform initial-state distribution).
    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Median of a non-empty slice (interpolating for even lengths).
#[allow(dead_code)]
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[allow(dead_code)]
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
