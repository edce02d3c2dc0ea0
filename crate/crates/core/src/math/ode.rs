//! Classical fourth-order Runge–Kutta integration.

use crate::{ensure, Result};

/// Why an integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ConditionMet,
    MaxTime,
    Divergence,
}

/// Every accepted step of an integration, initial state included.
#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stop: StopReason,
}

impl OdeTrajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn last_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory holds the initial state")
    }
}

fn rk4_step<F>(
    field: &mut F,
    t: f64,
    y: &[f64],
    h: f64,
    out: &mut [f64],
    scratch: &mut [Vec<f64>; 5],
) where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    field(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    field(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    field(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    field(t + h, tmp, k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn scratch(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

/// Fixed-step RK4 from `t = 0`.
///
/// `field(t, state, derivative)` writes the time derivative. Integration
/// halts at the first recorded state where `stop(t, state)` holds, when
/// `t_max` is reached (the last step is shortened to land on it), or when
/// a state component becomes non-finite.
pub fn rk4_integrate<F, S>(
    mut field: F,
    state0: &[f64],
    dt: f64,
    stop: S,
    t_max: f64,
) -> Result<OdeTrajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: Fn(f64, &[f64]) -> bool,
{
    ensure!(
        dt > 0.0 && dt.is_finite(),
        Config,
        "dt must be positive, got {dt}"
    );
    ensure!(t_max > 0.0, Config, "t_max must be positive, got {t_max}");
    let n = state0.len();
    let mut scratch = scratch(n);
    let mut traj = OdeTrajectory {
        times: vec![0.0],
        states: vec![state0.to_vec()],
        stop: StopReason::MaxTime,
    };
    if stop(0.0, state0) {
        traj.stop = StopReason::ConditionMet;
        return Ok(traj);
    }
    let mut t = 0.0;
    let mut y = state0.to_vec();
    let mut next = vec![0.0; n];
    let mut step = 0u64;
    loop {
        let h = dt.min(t_max - t);
        rk4_step(&mut field, t, &y, h, &mut next, &mut scratch);
        step += 1;
        // Recompute from the step count to avoid accumulating rounding in t.
        t = if h < dt { t_max } else { step as f64 * dt };
        std::mem::swap(&mut y, &mut next);
        traj.times.push(t);
        traj.states.push(y.clone());
        if y.iter().any(|v| !v.is_finite()) {
            traj.stop = StopReason::Divergence;
            break;
        }
        if stop(t, &y) {
            traj.stop = StopReason::ConditionMet;
            break;
        }
        if t >= t_max {
            break;
        }
    }
    Ok(traj)
}

/// Step-size control for [`rk4_integrate_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveStep {
    pub initial_dt: f64,
    pub max_dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for AdaptiveStep {
    fn default() -> Self {
        Self {
            initial_dt: 1e-2,
            max_dt: f64::INFINITY,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
        }
    }
}

/// RK4 with step-doubling error control.
///
/// Each accepted step is the two-half-step RK4 result; the full step only
/// estimates the local error. Needed for gradient-flow systems whose time
/// scale spans many decades (plateaus of length `N e^{-2β₀}` ending in an
/// exponential blow-up).
pub fn rk4_integrate_adaptive<F, S>(
    mut field: F,
    state0: &[f64],
    control: AdaptiveStep,
    stop: S,
    t_max: f64,
) -> Result<OdeTrajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: Fn(f64, &[f64]) -> bool,
{
    ensure!(
        control.initial_dt > 0.0,
        Config,
        "initial dt must be positive"
    );
    ensure!(t_max > 0.0, Config, "t_max must be positive, got {t_max}");
    let n = state0.len();
    let mut scratch = scratch(n);
    let mut traj = OdeTrajectory {
        times: vec![0.0],
        states: vec![state0.to_vec()],
        stop: StopReason::MaxTime,
    };
    if stop(0.0, state0) {
        traj.stop = StopReason::ConditionMet;
        return Ok(traj);
    }
    let mut t = 0.0;
    let mut h = control.initial_dt.min(control.max_dt);
    let mut y = state0.to_vec();
    let mut full = vec![0.0; n];
    let mut half = vec![0.0; n];
    let mut two = vec![0.0; n];
    loop {
        let step = h.min(t_max - t);
        rk4_step(&mut field, t, &y, step, &mut full, &mut scratch);
        rk4_step(&mut field, t, &y, 0.5 * step, &mut half, &mut scratch);
        rk4_step(
            &mut field,
            t + 0.5 * step,
            &half,
            0.5 * step,
            &mut two,
            &mut scratch,
        );
        if two.iter().any(|v| !v.is_finite()) {
            if step > 1e-300 && full.iter().chain(&half).all(|v| v.is_finite()) {
                h = 0.25 * step;
                continue;
            }
            t += step;
            traj.times.push(t);
            traj.states.push(two.clone());
            traj.stop = StopReason::Divergence;
            break;
        }
        let err = two
            .iter()
            .zip(&full)
            .map(|(a, b)| (a - b).abs() / (control.abs_tol + control.rel_tol * a.abs()))
            .fold(0.0, f64::max)
            / 15.0;
        if err > 1.0 && step > 1e-14 * t.max(1.0) {
            h = step * (0.9 * err.powf(-0.2)).max(0.1);
            continue;
        }
        t = if step < h { t_max } else { t + step };
        std::mem::swap(&mut y, &mut two);
        traj.times.push(t);
        traj.states.push(y.clone());
        if stop(t, &y) {
            traj.stop = StopReason::ConditionMet;
            break;
        }
        if t >= t_max {
            break;
        }
        let grow = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (step * grow).min(control.max_dt);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn growth(_t: f64, y: &[f64], d: &mut [f64]) {
        d[0] = y[0];
    }

    #[test]
    fn exponential_growth() {
        let tr = rk4_integrate(growth, &[1.0], 1e-3, |_, _| false, 1.0).unwrap();
        assert_eq!(tr.stop, StopReason::MaxTime);
        assert!((tr.last_time() - 1.0).abs() < 1e-12);
        assert!((tr.last_state()[0] - std::f64::consts::E).abs() < 1e-9);
        assert_eq!(tr.times.len(), tr.states.len());
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt: f64| {
            let tr = rk4_integrate(growth, &[1.0], dt, |_, _| false, 1.0).unwrap();
            (tr.last_state()[0] - std::f64::consts::E).abs()
        };
        for dt in [0.1, 0.05, 0.02] {
            let ratio = err(dt) / err(dt / 2.0);
            assert!((12.0..=20.0).contains(&ratio), "dt={dt} ratio={ratio}");
        }
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let period = 2.0 * std::f64::consts::PI;
        let tr = rk4_integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            &[1.0, 0.0],
            1e-3,
            |_, _| false,
            10.0 * period,
        )
        .unwrap();
        let e = |s: &[f64]| 0.5 * (s[0] * s[0] + s[1] * s[1]);
        let e0 = e(&tr.states[0]);
        let drift = tr
            .states
            .iter()
            .map(|s| (e(s) - e0).abs() / e0)
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn stop_condition_and_divergence() {
        let tr = rk4_integrate(growth, &[1.0], 1e-2, |_, y| y[0] >= 2.0, 10.0).unwrap();
        assert_eq!(tr.stop, StopReason::ConditionMet);
        assert!((tr.last_time() - 2f64.ln()).abs() < 1.1e-2);
        // dy/dt = y² blows up at t = 1.
        let tr = rk4_integrate(
            |_, y, d| d[0] = y[0] * y[0],
            &[1.0],
            0.05,
            |_, _| false,
            5.0,
        )
        .unwrap();
        assert_eq!(tr.stop, StopReason::Divergence);
        assert!(rk4_integrate(growth, &[1.0], 0.0, |_, _| false, 1.0).is_err());
    }

    #[test]
    fn adaptive_matches_analytic() {
        let tr = rk4_integrate_adaptive(growth, &[1.0], AdaptiveStep::default(), |_, _| false, 5.0)
            .unwrap();
        let rel = (tr.last_state()[0] - 5f64.exp()).abs() / 5f64.exp();
        assert!(rel < 1e-7, "rel {rel}");
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        // Stiff-ish blow-up is reported, not panicked on.
        let tr = rk4_integrate_adaptive(
            |_, y, d| d[0] = y[0] * y[0],
            &[1.0],
            AdaptiveStep::default(),
            |_, y| y[0] > 1e6,
            5.0,
        )
        .unwrap();
        assert_eq!(tr.stop, StopReason::ConditionMet);
        assert!((tr.last_time() - 1.0).abs() < 1e-5);
    }
}
