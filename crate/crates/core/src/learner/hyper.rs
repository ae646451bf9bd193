//! Regularization strength, step size and the statistical error level.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// Diameter of the probability simplex in l1; one ball of this radius covers any policy class.
const POLICY_DIAMETER: f64 = 2.0;

/// `lambda = (R / (H^2 (eps_s + 3 eps_f)^2))^(1/3)` and
/// `eta = sqrt(ln A / (2 H^2 R^2 T))`.
pub fn compute_lambda_eta(
    r_max: f64,
    horizon: usize,
    actions: usize,
    iterations: usize,
    eps_s: f64,
    eps_f: f64,
) -> Result<(f64, f64)> {
    if !(r_max > 0.0) || horizon == 0 || actions == 0 || iterations == 0 {
        return input_err("r_max, H, A and T must be positive");
    }
    if !(eps_s >= 0.0 && eps_f >= 0.0) {
        return input_err("error levels must be nonnegative");
    }
    let level = eps_s + 3.0 * eps_f;
    if !(level > 0.0) {
        return input_err("lambda is undefined when eps_s + 3 eps_f = 0");
    }
    let h = horizon as f64;
    let lambda = (r_max / (h * h * level * level)).cbrt();
    let eta = ((actions as f64).ln() / (2.0 * h * h * r_max * r_max * iterations as f64)).sqrt();
    Ok((lambda, eta))
}

/// `eps_s = 5136 / K * H^4 R^4 * (ln(56 n H / delta) + log_cov_f + log_cov_pi)`.
pub fn epsilon_s(
    k: usize,
    delta: f64,
    agents: usize,
    horizon: usize,
    r_max: f64,
    log_cov_f: f64,
    log_cov_pi: f64,
) -> Result<f64> {
    if k == 0 {
        return input_err("eps_s needs K >= 1");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return input_err(format!("delta must lie in (0, 1), got {delta}"));
    }
    if agents == 0 || horizon == 0 || !(r_max > 0.0) {
        return input_err("n, H and r_max must be positive");
    }
    if !(log_cov_f >= 0.0 && log_cov_pi >= 0.0) {
        return input_err("covering logs must be nonnegative");
    }
    let hr = horizon as f64 * r_max;
    let confidence = (56.0 * agents as f64 * horizon as f64 / delta).ln();
    Ok(5136.0 / k as f64 * hr.powi(4) * (confidence + log_cov_f + log_cov_pi))
}

/// Log of the number of grid points per coordinate needed to cover `[-w, w]` at `radius`.
fn grid_log(half_width: f64, radius: f64) -> f64 {
    if radius >= half_width {
        0.0
    } else {
        ((half_width / radius).floor() + 1.0).ln()
    }
}

/// Log covering numbers of the boxed tabular class (sup norm) and of the
/// soft-policy-iteration policy class (sup over rows of the l1 distance),
/// both at `radius`.
///
/// Policies produced by `T` exponential-weights steps of size `eta` move by
/// at most `2 eta T` times the sup-norm change of the tables that drive
/// them, so the policy class is covered through a table grid at
/// `radius / (2 eta T)`; `T` tables per output.
pub fn covering_log_bounds(
    states: usize,
    actions: usize,
    horizon: usize,
    iterations: usize,
    eta: f64,
    r_max: f64,
    radius: f64,
) -> Result<(f64, f64)> {
    if !(radius > 0.0) {
        return input_err("covering radius must be positive");
    }
    if !(eta >= 0.0) || !(r_max > 0.0) {
        return input_err("eta must be nonnegative and r_max positive");
    }
    let sa = (states * actions) as f64;
    let widths: Vec<f64> = (0..horizon).map(|h| (horizon - h) as f64 * r_max).collect();
    let log_f = sa * widths.iter().map(|w| grid_log(*w, radius)).sum::<f64>();
    let spread = 2.0 * eta * iterations as f64;
    let log_pi = if radius >= POLICY_DIAMETER || spread == 0.0 {
        0.0
    } else {
        let inner = radius / spread;
        iterations as f64 * horizon as f64 * sa * widths.iter().map(|w| grid_log(*w, inner)).sum::<f64>()
    };
    Ok((log_f, log_pi))
}

/// Everything the theoretical parameter choice depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParameters {
    pub k: usize,
    pub delta: f64,
    pub radius_f: f64,
    pub radius_pi: f64,
    pub log_cov_f: f64,
    pub log_cov_pi: f64,
    pub eps_s: f64,
    pub eps_f: f64,
    pub lambda: f64,
    pub eta: f64,
}

/// Covering radii `19 H^3 R^3 / K` and `19 H^4 R^4 / K`, the matching
/// covering logs, `eps_s` and the resulting `(lambda, eta)`.
#[allow(clippy::too_many_arguments)]
pub fn theory_parameters(
    k: usize,
    delta: f64,
    agents: usize,
    states: usize,
    actions: usize,
    horizon: usize,
    iterations: usize,
    r_max: f64,
    eps_f: f64,
) -> Result<TheoryParameters> {
    if k == 0 {
        return input_err("K must be positive");
    }
    let hr = horizon as f64 * r_max;
    let radius_f = 19.0 * hr.powi(3) / k as f64;
    let radius_pi = 19.0 * hr.powi(4) / k as f64;
    let (_, eta) = compute_lambda_eta(r_max, horizon, actions, iterations, 1.0, 0.0)?;
    let (log_cov_f, _) = covering_log_bounds(states, actions, horizon, iterations, eta, r_max, radius_f)?;
    let (_, log_cov_pi) = covering_log_bounds(states, actions, horizon, iterations, eta, r_max, radius_pi)?;
    let eps_s = epsilon_s(k, delta, agents, horizon, r_max, log_cov_f, log_cov_pi)?;
    let (lambda, eta) = compute_lambda_eta(r_max, horizon, actions, iterations, eps_s, eps_f)?;
    Ok(TheoryParameters {
        k,
        delta,
        radius_f,
        radius_pi,
        log_cov_f,
        log_cov_pi,
        eps_s,
        eps_f,
        lambda,
        eta,
    })
}

/// How the regularization strength is chosen for a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaMode {
    Fixed { lambda: f64 },
    /// `lambda_ref * (K / k_ref)^(2/3)`: the theoretical growth in `K` with a practical constant.
    Scaled { lambda_ref: f64, k_ref: usize },
    /// The theoretical value at confidence `1 - delta`.
    Theory { delta: f64 },
}

impl LambdaMode {
    pub fn resolve(&self, k: usize, theory: Option<&TheoryParameters>) -> Result<f64> {
        let lambda = match *self {
            LambdaMode::Fixed { lambda } => lambda,
            LambdaMode::Scaled { lambda_ref, k_ref } => {
                if k_ref == 0 {
                    return input_err("k_ref must be positive");
                }
                lambda_ref * (k as f64 / k_ref as f64).powf(2.0 / 3.0)
            }
            LambdaMode::Theory { .. } => match theory {
                Some(t) => t.lambda,
                None => return input_err("theory lambda requested without theory parameters"),
            },
        };
        if !(lambda.is_finite() && lambda > 0.0) {
            return input_err(format!("lambda resolved to {lambda}"));
        }
        Ok(lambda)
    }

    /// Confidence level used for the logged theoretical values.
    pub fn delta(&self) -> f64 {
        match *self {
            LambdaMode::Theory { delta } => delta,
            _ => 0.1,
        }
    }
}

/// How the mirror-descent step size is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaMode {
    #[default]
    Theory,
    Fixed {
        eta: f64,
    },
}

impl EtaMode {
    pub fn resolve(&self, r_max: f64, horizon: usize, actions: usize, iterations: usize) -> Result<f64> {
        match *self {
            EtaMode::Theory => Ok(compute_lambda_eta(r_max, horizon, actions, iterations, 1.0, 0.0)?.1),
            EtaMode::Fixed { eta } => {
                if !(eta.is_finite() && eta >= 0.0) {
                    return input_err(format!("eta must be nonnegative, got {eta}"));
                }
                Ok(eta)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_eta_examples() {
        let (lambda, _) = compute_lambda_eta(1.0, 2, 2, 8, 0.5, 0.0).unwrap();
        assert!((lambda - 1.0).abs() < 1e-12);
        let (_, eta) = compute_lambda_eta(1.0, 2, 2, 8, 0.5, 0.0).unwrap();
        assert!((eta - (2f64.ln() / 64.0).sqrt()).abs() < 1e-12);
        assert!((eta - 0.104069).abs() < 1e-6);
        let (_, eta4) = compute_lambda_eta(1.0, 2, 2, 32, 0.5, 0.0).unwrap();
        assert!((eta4 - eta / 2.0).abs() < 1e-15);
        assert!(compute_lambda_eta(1.0, 2, 2, 8, 0.0, 0.0).is_err());
        // eps_f enters with weight three
        let (a, _) = compute_lambda_eta(1.0, 2, 2, 8, 0.2, 0.1).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eps_s_examples() {
        let e = epsilon_s(1000, 0.5, 1, 1, 1.0, 0.0, 0.0).unwrap();
        assert!((e - 5136.0 * 112f64.ln() / 1000.0).abs() < 1e-12);
        let e2 = epsilon_s(2000, 0.5, 1, 1, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(e, 2.0 * e2);
        let a = epsilon_s(777, 0.05, 2, 3, 1.5, 4.2, 11.0).unwrap();
        let b = epsilon_s(1554, 0.05, 2, 3, 1.5, 4.2, 11.0).unwrap();
        assert_eq!(a, 2.0 * b);
        assert!(epsilon_s(10, 1.0, 1, 1, 1.0, 0.0, 0.0).is_err());
        assert!(epsilon_s(10, 0.0, 1, 1, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn covering_examples() {
        let (f, pi) = covering_log_bounds(1, 1, 1, 4, 0.1, 1.0, 0.25).unwrap();
        assert!((f - 5f64.ln()).abs() < 1e-15);
        assert!(pi > 0.0);
        let (f, pi) = covering_log_bounds(2, 2, 2, 8, 0.1, 1.0, 2.0).unwrap();
        assert_eq!((f, pi), (0.0, 0.0));
        for radius in [0.01, 0.1, 0.3, 0.9, 1.7] {
            let (f1, _) = covering_log_bounds(2, 3, 3, 8, 0.1, 1.0, radius).unwrap();
            let (f2, _) = covering_log_bounds(2, 3, 3, 8, 0.1, 1.0, radius / 2.0).unwrap();
            assert!(f2 >= f1);
            assert!(f2 - f1 <= 2.0 * 18.0 * 2f64.ln() + 1e-12);
        }
        assert!(covering_log_bounds(1, 1, 1, 1, 0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn theory_parameters_for_m2() {
        let t = theory_parameters(10_000, 0.1, 1, 2, 2, 2, 256, 1.0, 0.0).unwrap();
        assert!((t.radius_f - 19.0 * 8.0 / 10_000.0).abs() < 1e-15);
        assert!(t.eps_s >= 0.0 && t.eps_s.is_finite());
        assert!(t.lambda > 0.0);
        let t2 = theory_parameters(20_000, 0.1, 1, 2, 2, 2, 256, 1.0, 0.0).unwrap();
        assert!(t2.eps_s < t.eps_s);
    }

    #[test]
    fn lambda_modes() {
        assert_eq!(LambdaMode::Fixed { lambda: 3.0 }.resolve(10, None).unwrap(), 3.0);
        let s = LambdaMode::Scaled {
            lambda_ref: 50.0,
            k_ref: 20_000,
        };
        assert!((s.resolve(20_000, None).unwrap() - 50.0).abs() < 1e-12);
        assert!((s.resolve(2_500, None).unwrap() - 12.5).abs() < 1e-12);
        assert!(LambdaMode::Theory { delta: 0.1 }.resolve(10, None).is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<LambdaMode>(&json).unwrap(), s);
    }
}
