//! Cold load pickup: the delayed-exponential demand multiplier, its
//! sampled form, and demand construction from a pickup history.

use serde::Serialize;

use crate::netmodel::ClpuParams;

#[derive(Debug, thiserror::Error)]
pub enum ClpuError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("pickup history drops service at step {step}")]
    NonMonotone { step: usize },
}

/// Sampled multiplier `D(1..N)` and its increments. `settle` is the
/// increment that brings the multiplier from `D(N)` to `s_d` one sample
/// after the window ends.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClpuCurve {
    pub s_u: f64,
    pub s_d: f64,
    pub samples: Vec<f64>,
    pub deltas: Vec<f64>,
    pub settle: f64,
}

impl ClpuCurve {
    /// Curve of a load without cold load pickup.
    pub fn flat(s_d: f64) -> Self {
        ClpuCurve {
            s_u: s_d,
            s_d,
            samples: vec![s_d],
            deltas: vec![0.0],
            settle: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// `D(k)` for `k >= 1`, equal to `s_d` past the window.
    pub fn at(&self, k: usize) -> f64 {
        assert!(k >= 1, "samples are 1-based");
        self.samples.get(k - 1).copied().unwrap_or(self.s_d)
    }

    /// Coefficients `c_j` of the affine demand factor
    /// `F_t = Σ_j c_j · s_{t-j}`, for `j = 0..=N`.
    pub fn lag_coefficients(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.n() + 1);
        c.push(self.s_u);
        c.extend_from_slice(&self.deltas[1..]);
        c.push(self.settle);
        c
    }

    /// Demand factor at step `t` (1-based) for a 0/1 pickup history where
    /// `history[j]` is the status at step `j + 1`.
    pub fn factor(&self, history: &[f64], t: usize) -> f64 {
        let coefs = self.lag_coefficients();
        let mut f = 0.0;
        for (j, c) in coefs.iter().enumerate() {
            if t > j {
                f += c * history[t - j - 1];
            }
        }
        f
    }
}

pub fn sample_curve(params: &ClpuParams) -> Result<ClpuCurve, ClpuError> {
    params.validate().map_err(ClpuError::Params)?;
    let hold = params.delay_steps.max(1);
    let samples: Vec<f64> = (1..=params.n_samples)
        .map(|k| {
            if k <= hold {
                params.s_u
            } else {
                let age = (k - params.delay_steps) as f64;
                params.s_d + (params.s_u - params.s_d) * (-params.alpha_decay * age).exp()
            }
        })
        .collect();
    let mut deltas = vec![0.0; samples.len()];
    for k in 1..samples.len() {
        deltas[k] = samples[k] - samples[k - 1];
    }
    let settle = params.s_d - samples[samples.len() - 1];
    Ok(ClpuCurve {
        s_u: params.s_u,
        s_d: params.s_d,
        samples,
        deltas,
        settle,
    })
}

/// Per-step `(P, Q)` demand of a load from its pickup history.
pub fn load_at_step(
    curve: &ClpuCurve,
    history: &[bool],
    p_kw: f64,
    q_kvar: f64,
) -> Result<Vec<(f64, f64)>, ClpuError> {
    for t in 1..history.len() {
        if history[t - 1] && !history[t] {
            return Err(ClpuError::NonMonotone { step: t + 1 });
        }
    }
    let h: Vec<f64> = history.iter().map(|s| if *s { 1.0 } else { 0.0 }).collect();
    Ok((1..=history.len())
        .map(|t| {
            let f = curve.factor(&h, t);
            (p_kw * f, q_kvar * f)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(s_u: f64, s_d: f64, alpha: f64, delay: usize, n: usize) -> ClpuParams {
        ClpuParams {
            id: "c".into(),
            s_u,
            s_d,
            alpha_decay: alpha,
            delay_steps: delay,
            n_samples: n,
            sample_period_min: 1.0,
        }
    }

    #[test]
    fn equal_factors_give_a_flat_curve() {
        let c = sample_curve(&params(1.0, 1.0, 0.3, 2, 10)).unwrap();
        assert!(c.samples.iter().all(|d| *d == 1.0));
        assert!(c.deltas.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn decay_sample_matches_closed_form() {
        let c = sample_curve(&params(2.0, 1.0, 0.5, 2, 8)).unwrap();
        assert_eq!(c.at(1), 2.0);
        assert_eq!(c.at(2), 2.0);
        assert!((c.at(3) - (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert_eq!(c.deltas[0], 0.0);
        assert!(c.deltas.iter().all(|d| *d <= 0.0));
        assert!(c.samples.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn long_window_approaches_settled_factor() {
        let c = sample_curve(&params(2.0, 1.0, 0.5, 2, 40)).unwrap();
        assert!((c.at(40) - 1.0).abs() < 1e-6);
        assert_eq!(c.at(41), 1.0);
    }

    #[test]
    fn zero_delay_still_starts_at_undiversified() {
        let c = sample_curve(&params(1.8, 1.0, 1.0, 0, 5)).unwrap();
        assert_eq!(c.at(1), 1.8);
        assert!(c.at(2) < 1.8);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(sample_curve(&params(0.5, 1.0, 0.5, 1, 4)).is_err());
        assert!(sample_curve(&params(2.0, 1.0, 0.0, 1, 4)).is_err());
    }

    #[test]
    fn single_pickup_telescopes_to_the_curve() {
        let c = sample_curve(&params(2.0, 1.0, 0.7, 3, 9)).unwrap();
        for start in 0..6 {
            let history: Vec<bool> = (0..20).map(|t| t >= start).collect();
            let demand = load_at_step(&c, &history, 10.0, 2.0).unwrap();
            for (t, (p, q)) in demand.iter().enumerate() {
                let expected = if t < start { 0.0 } else { c.at(t - start + 1) };
                assert!((p - 10.0 * expected).abs() < 1e-12, "start {start} t {t}");
                assert!((q - 2.0 * expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn never_picked_up_is_zero_and_drop_is_rejected() {
        let c = sample_curve(&params(2.0, 1.0, 0.7, 1, 5)).unwrap();
        let demand = load_at_step(&c, &[false; 4], 10.0, 1.0).unwrap();
        assert!(demand.iter().all(|(p, q)| *p == 0.0 && *q == 0.0));
        let late = load_at_step(&c, &[false, false, true], 10.0, 1.0).unwrap();
        assert_eq!(late[2].0, 20.0);
        assert!(matches!(
            load_at_step(&c, &[false, true, false], 1.0, 0.0),
            Err(ClpuError::NonMonotone { step: 3 })
        ));
    }
}
