//! Adaptive Dormand-Prince 5(4) integration and a finite-difference Fisher
//! information for deterministic dynamical systems observed with Gaussian
//! noise.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (theta = {theta:?})")]
    StepUnderflow { t: f64, theta: Vec<f64> },
    #[error("non-finite state encountered at t = {t} (theta = {theta:?})")]
    NonFiniteState { t: f64, theta: Vec<f64> },
}

/// Right-hand side signature: (t, state, theta, d_state).
pub type OdeRhs = fn(f64, &[f64], &[f64], &mut [f64]);

/// A parametrized ODE system observed at fixed times through a subset of
/// its state components, with additive Gaussian observation noise.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    pub dim_state: usize,
    pub rhs: OdeRhs,
    pub initial_state: Vec<f64>,
    pub observation_times: Vec<f64>,
    pub observed_components: Vec<usize>,
    pub noise_std: f64,
}

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-8;

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `system.rhs` from t = 0 and return the full state at each of
/// the requested (sorted, ascending) grid times.
pub fn integrate_ode(
    system: &OdeSystem,
    theta: &[f64],
    t_grid: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Vec<Vec<f64>>, OdeError> {
    let dim = system.dim_state;
    let mut t = 0.0;
    let mut y = system.initial_state.clone();
    let mut out = Vec::with_capacity(t_grid.len());
    let mut h: f64 = 1e-3;
    let mut k = vec![vec![0.0; dim]; 7];
    let mut y_stage = vec![0.0; dim];

    for &target in t_grid {
        debug_assert!(target >= t - 1e-12);
        while t < target - 1e-12 {
            let step = h.min(target - t);
            (system.rhs)(t, &y, theta, &mut k[0]);
            for stage in 0..6 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(stage + 1) {
                        acc += step * A[stage][j] * kj[i];
                    }
                    y_stage[i] = acc;
                }
                let ts = t + C[stage] * step;
                (system.rhs)(ts, &y_stage, theta, &mut k[stage + 1]);
            }
            // 5th-order solution and embedded error estimate
            let mut err_norm_sq = 0.0;
            let mut y_next = y.clone();
            for i in 0..dim {
                let mut v5 = 0.0;
                let mut v4 = 0.0;
                for j in 0..7 {
                    v5 += B5[j] * k[j][i];
                    v4 += B4[j] * k[j][i];
                }
                y_next[i] = y[i] + step * v5;
                let scale = atol + rtol * y[i].abs().max(y_next[i].abs());
                let e = step * (v5 - v4) / scale;
                err_norm_sq += e * e;
            }
            let err = (err_norm_sq / dim as f64).sqrt();
            if !err.is_finite() {
                return Err(OdeError::NonFiniteState {
                    t,
                    theta: theta.to_vec(),
                });
            }
            if err <= 1.0 {
                t += step;
                y = y_next;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).min(5.0)
                };
                h = (step * grow).max(h * 0.2);
            } else {
                h = step * (0.9 * err.powf(-0.2)).max(0.1);
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::StepUnderflow {
                    t,
                    theta: theta.to_vec(),
                });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Noiseless readings: each observed component's time series at the
/// observation grid, concatenated component by component.
pub fn noiseless_readings(system: &OdeSystem, theta: &[f64]) -> Result<Vec<f64>, OdeError> {
    noiseless_readings_tol(system, theta, DEFAULT_RTOL, DEFAULT_ATOL)
}

pub fn noiseless_readings_tol(
    system: &OdeSystem,
    theta: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Vec<f64>, OdeError> {
    let states = integrate_ode(system, theta, &system.observation_times, rtol, atol)?;
    let mut readings =
        Vec::with_capacity(system.observed_components.len() * system.observation_times.len());
    for &comp in &system.observed_components {
        for state in &states {
            readings.push(state[comp]);
        }
    }
    Ok(readings)
}

/// Central-difference Fisher information for Gaussian observation noise:
/// I = (1/sigma^2) S^T S with S the sensitivity matrix of the noiseless
/// readings. `sigma_obs` is the noise scale; `step_rel` the relative
/// finite-difference step.
pub fn ode_fim_numeric(
    system: &OdeSystem,
    theta: &[f64],
    step_rel: f64,
    sigma_obs: f64,
) -> Result<Vec<f64>, OdeError> {
    let d = theta.len();
    let n_read = system.observed_components.len() * system.observation_times.len();
    let mut sens = vec![vec![0.0; d]; n_read];
    for j in 0..d {
        let step = step_rel * theta[j].abs().max(step_rel);
        let mut up = theta.to_vec();
        up[j] += step;
        let mut down = theta.to_vec();
        down[j] -= step;
        let y_up = noiseless_readings(system, &up)?;
        let y_down = noiseless_readings(system, &down)?;
        for (row, s) in sens.iter_mut().enumerate() {
            s[j] = (y_up[row] - y_down[row]) / (2.0 * step);
        }
    }
    let inv_var = 1.0 / (sigma_obs * sigma_obs);
    let mut info = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let mut acc = 0.0;
            for s in &sens {
                acc += s[a] * s[b];
            }
            info[a * d + b] = inv_var * acc;
            info[b * d + a] = inv_var * acc;
        }
    }
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], theta: &[f64], dy: &mut [f64]) {
        dy[0] = -theta[0] * y[0];
    }

    fn rotation(_t: f64, y: &[f64], _theta: &[f64], dy: &mut [f64]) {
        dy[0] = -y[1];
        dy[1] = y[0];
    }

    fn constant(_t: f64, _y: &[f64], _theta: &[f64], dy: &mut [f64]) {
        dy[0] = 0.0;
    }

    fn sys(rhs: OdeRhs, y0: Vec<f64>, times: Vec<f64>) -> OdeSystem {
        OdeSystem {
            dim_state: y0.len(),
            rhs,
            initial_state: y0,
            observation_times: times,
            observed_components: vec![0],
            noise_std: 0.0,
        }
    }

    #[test]
    fn exponential_decay() {
        let s = sys(decay, vec![1.0], vec![1.0]);
        let out = integrate_ode(&s, &[1.0], &[1.0], 1e-6, 1e-8).unwrap();
        assert!((out[0][0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn zero_derivative_is_constant() {
        let s = sys(constant, vec![2.5], vec![0.0, 1.0, 7.0]);
        let out = integrate_ode(&s, &[], &[0.0, 1.0, 7.0], 1e-6, 1e-8).unwrap();
        for state in out {
            assert_eq!(state[0], 2.5);
        }
    }

    #[test]
    fn planar_rotation_quarter_turn() {
        let s = sys(rotation, vec![1.0, 0.0], vec![std::f64::consts::FRAC_PI_2]);
        let out =
            integrate_ode(&s, &[], &[std::f64::consts::FRAC_PI_2], 1e-6, 1e-8).unwrap();
        assert!(out[0][0].abs() < 1e-5);
        assert!((out[0][1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn fim_matches_analytic_sensitivity() {
        // dy/dt = -theta*y, y0 = 1 observed at t = 1: dy/dtheta = -e^{-theta}.
        let s = sys(decay, vec![1.0], vec![1.0]);
        let theta = [0.7];
        let sigma = 0.5;
        let info = ode_fim_numeric(&s, &theta, 1e-5, sigma).unwrap();
        let sens = -(1.0f64) * (-0.7f64).exp();
        let expected = sens * sens / (sigma * sigma);
        assert!((info[0] - expected).abs() < 1e-4 * expected.abs());
        // doubling sigma quarters the information
        let info2 = ode_fim_numeric(&s, &theta, 1e-5, 2.0 * sigma).unwrap();
        assert!((info2[0] - info[0] / 4.0).abs() < 1e-10 * info[0]);
    }

    #[test]
    fn fim_linear_readings_exact() {
        // dy/dt = A theta with y0 = 0 observed at t = 1 gives readings
        // linear in theta, so I = (1/sigma^2) A^T A exactly.
        fn linear(_t: f64, _y: &[f64], theta: &[f64], dy: &mut [f64]) {
            dy[0] = 2.0 * theta[0] + 1.0 * theta[1];
            dy[1] = -1.0 * theta[0] + 3.0 * theta[1];
        }
        let s = OdeSystem {
            dim_state: 2,
            rhs: linear,
            initial_state: vec![0.0, 0.0],
            observation_times: vec![1.0],
            observed_components: vec![0, 1],
            noise_std: 0.0,
        };
        let sigma = 2.0;
        let info = ode_fim_numeric(&s, &[0.4, -0.6], 1e-4, sigma).unwrap();
        let a = [[2.0, 1.0], [-1.0, 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                let expected: f64 =
                    (0..2).map(|r| a[r][i] * a[r][j]).sum::<f64>() / (sigma * sigma);
                assert!((info[i * 2 + j] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fim_is_symmetric() {
        fn two_param(_t: f64, y: &[f64], theta: &[f64], dy: &mut [f64]) {
            dy[0] = -theta[0] * y[0] + theta[1];
        }
        let s = sys(two_param, vec![1.0], vec![0.5, 1.0, 2.0]);
        let info = ode_fim_numeric(&s, &[0.5, 0.3], 1e-4, 1.0).unwrap();
        assert_eq!(info[1], info[2]);
    }

    #[test]
    fn fim_richardson_trend() {
        // Halving the step changes the entries by O(step^2).
        let s = sys(decay, vec![1.0], vec![0.5, 1.5]);
        let coarse = ode_fim_numeric(&s, &[0.9], 1e-2, 1.0).unwrap()[0];
        let fine = ode_fim_numeric(&s, &[0.9], 5e-3, 1.0).unwrap()[0];
        let finest = ode_fim_numeric(&s, &[0.9], 2.5e-3, 1.0).unwrap()[0];
        let d1 = (coarse - finest).abs();
        let d2 = (fine - finest).abs();
        assert!(d2 < d1);
    }
}
