//! Strongly concave utility functionals `U(a, z, theta)` and best responses.

use std::fmt::Debug;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{ActionProcess, AdmissibleSet, ScenarioSpace};

/// Structural constants: strong concavity `gamma`, Lipschitz constants of the
/// gradient in the aggregate (`ell`) and in the heterogeneity (`ell_theta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityConstants {
    pub gamma: f64,
    pub ell: f64,
    pub ell_theta: f64,
}

impl UtilityConstants {
    pub fn rho(&self) -> f64 {
        self.ell / self.gamma
    }

    /// Returns `rho` if the contraction condition holds.
    pub fn certify(&self) -> Result<f64> {
        if !(self.gamma > 0.0) {
            return Err(Error::Hypothesis(format!(
                "strong concavity constant must be positive, got {}",
                self.gamma
            )));
        }
        let rho = self.rho();
        if !(rho < 1.0) {
            return Err(Error::ContractionViolation { rho });
        }
        Ok(rho)
    }
}

pub trait Utility: Debug + Send + Sync {
    fn evaluate(&self, a: &ActionProcess, z: &ActionProcess, theta: &ActionProcess) -> Result<f64>;

    /// Riesz representative of the derivative in `a` (not necessarily adapted).
    fn gradient(
        &self,
        a: &ActionProcess,
        z: &ActionProcess,
        theta: &ActionProcess,
    ) -> Result<ActionProcess>;

    fn constants(&self) -> UtilityConstants;

    /// Lipschitz constant of the gradient in `a`, when known.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// `argmax_{a in set, a adapted} U(a, z, theta)`.
    fn best_response(
        &self,
        z: &ActionProcess,
        theta: &ActionProcess,
        set: &AdmissibleSet,
    ) -> Result<ActionProcess> {
        best_response_concave(self, z, theta, set, &AscentOptions::default())
    }

    /// Constants `(L_a, L_z)` with
    /// `|U(a,z,th) - U(a',z',th)| <= L_a ||a-a'|| + L_z ||z-z'||` on the
    /// `radius`-ball, given `sup_v ||theta_v|| <= theta_max`.
    fn payoff_lipschitz(&self, _radius: f64, _theta_max: f64) -> Option<(f64, f64)> {
        None
    }
}

/// `U(a, z, theta) = -(gamma/2)<a,a> + ell <a,z> + lambda_theta <a,theta>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticUtility {
    pub gamma: f64,
    pub ell: f64,
    pub lambda_theta: f64,
}

impl QuadraticUtility {
    pub fn new(gamma: f64, ell: f64, lambda_theta: f64) -> Result<Self> {
        let u = QuadraticUtility {
            gamma,
            ell,
            lambda_theta,
        };
        u.constants().certify()?;
        Ok(u)
    }

    /// Unconstrained maximizer `(ell z + lambda_theta theta) / gamma`.
    pub fn unconstrained_maximizer(&self, z: &ActionProcess, theta: &ActionProcess) -> Result<ActionProcess> {
        z.combine(self.ell / self.gamma, theta, self.lambda_theta / self.gamma)
    }
}

impl Utility for QuadraticUtility {
    fn evaluate(&self, a: &ActionProcess, z: &ActionProcess, theta: &ActionProcess) -> Result<f64> {
        Ok(-0.5 * self.gamma * a.inner(a)? + self.ell * a.inner(z)? + self.lambda_theta * a.inner(theta)?)
    }

    fn gradient(&self, a: &ActionProcess, z: &ActionProcess, theta: &ActionProcess) -> Result<ActionProcess> {
        let mut g = a.clone().scaled(-self.gamma);
        g.add_scaled(self.ell, z)?;
        g.add_scaled(self.lambda_theta, theta)?;
        Ok(g)
    }

    fn constants(&self) -> UtilityConstants {
        UtilityConstants {
            gamma: self.gamma,
            ell: self.ell.abs(),
            ell_theta: self.lambda_theta.abs(),
        }
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.gamma)
    }

    /// The objective is `-(gamma/2)||a - a*||^2 + const`, so the metric
    /// projection of the unconstrained maximizer is the constrained argmax.
    fn best_response(&self, z: &ActionProcess, theta: &ActionProcess, set: &AdmissibleSet) -> Result<ActionProcess> {
        let mut a = self.unconstrained_maximizer(z, theta)?;
        set.project_in_place(&mut a);
        Ok(a)
    }

    fn payoff_lipschitz(&self, radius: f64, theta_max: f64) -> Option<(f64, f64)> {
        let ell = self.ell.abs();
        Some((
            self.gamma * radius + ell * radius + self.lambda_theta.abs() * theta_max,
            ell * radius,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Used when the utility reports no smoothness constant.
    pub fallback_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            tol: 1e-12,
            max_iter: 100_000,
            fallback_step: 1.0,
        }
    }
}

/// Projected gradient ascent on the adapted part of the gradient.
///
/// With a known smoothness constant `L` the step is `1/L`; otherwise the
/// step starts at `fallback_step` and is halved until the ascent condition
/// `U(a+) >= U(a) + <g, a+ - a> - ||a+ - a||^2 / (2 eta)` holds. Stops when
/// the fixed-point residual `||a - P(a + eta grad)||` drops to `tol`.
pub fn best_response_concave<U: Utility + ?Sized>(
    u: &U,
    z: &ActionProcess,
    theta: &ActionProcess,
    set: &AdmissibleSet,
    opts: &AscentOptions,
) -> Result<ActionProcess> {
    let mut a = ActionProcess::zeros(z.space());
    let smooth = u.smoothness();
    let mut eta = smooth.map(|l| 1.0 / l).unwrap_or(opts.fallback_step);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let g = u.gradient(&a, z, theta)?.adapted();
        let mut next = a.combine(1.0, &g, eta)?;
        set.project_in_place(&mut next);
        if smooth.is_none() {
            let base = u.evaluate(&a, z, theta)?;
            loop {
                let step = next.combine(1.0, &a, -1.0)?;
                let model = base + g.inner(&step)? - step.inner(&step)? / (2.0 * eta);
                if u.evaluate(&next, z, theta)? >= model - 1e-14 * base.abs().max(1.0) || eta < 1e-12 {
                    break;
                }
                eta *= 0.5;
                next = a.combine(1.0, &g, eta)?;
                set.project_in_place(&mut next);
            }
        }
        residual = next.distance(&a)?;
        a = next;
        if residual <= opts.tol {
            return Ok(a);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Largest relative error between the analytic directional derivative and a
/// central finite difference along random directions.
pub fn gradient_check<U: Utility + ?Sized>(
    u: &U,
    space: &Arc<ScenarioSpace>,
    trials: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        ActionProcess::from_fn(space, |_, _| StandardNormal.sample(rng)).adapted()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let a = draw(&mut rng);
        let z = draw(&mut rng);
        let th = draw(&mut rng);
        let d = draw(&mut rng);
        let plus = a.combine(1.0, &d, h)?;
        let minus = a.combine(1.0, &d, -h)?;
        let fd = (u.evaluate(&plus, &z, &th)? - u.evaluate(&minus, &z, &th)?) / (2.0 * h);
        let an = u.gradient(&a, &z, &th)?.inner(&d)?;
        let err = (an - fd).abs();
        if err < 1e-14 {
            continue;
        }
        worst = worst.max(err / fd.abs().max(1e-12));
    }
    Ok(worst)
}
