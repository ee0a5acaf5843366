//! Discrete Volterra kernels, their resolvents, linear state equations and
//! the reduction of linear-quadratic state games to state-free utilities.
//!
//! Kernels act on the time grid by left-endpoint sums with counting measure:
//! `(K x)(t_i) = sum_{j < i} K[i][j] x(t_j)`. The resolvent `R` of `-K`
//! satisfies `R = -K + K * R`, i.e. `R = -sum_{m >= 1} K^m`, so that
//! `I - R = (I - K)^{-1}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FiniteGraph, Normalization};
use crate::process::{same_space, ActionProcess, ActionProfile, ScenarioSpace};
use crate::utility::{Utility, UtilityConstants};

#[derive(Debug, Clone, PartialEq)]
pub struct VolterraKernel {
    k: DMatrix<f64>,
    l: DMatrix<f64>,
}

fn check_strict_lower(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidProcess(format!(
            "kernel {name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let x = m[(i, j)];
            if !x.is_finite() {
                return Err(Error::InvalidProcess(format!("kernel {name} has a non-finite entry at ({i},{j})")));
            }
            if j >= i && x != 0.0 {
                return Err(Error::InvalidProcess(format!(
                    "kernel {name} must be strictly lower triangular, entry ({i},{j}) = {x}"
                )));
            }
        }
    }
    Ok(())
}

impl VolterraKernel {
    pub fn new(k: DMatrix<f64>, l: DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        if n == 0 {
            return Err(Error::InvalidProcess("kernel needs at least one time point".into()));
        }
        check_strict_lower("K", &k, n)?;
        check_strict_lower("L", &l, n)?;
        Ok(VolterraKernel { k, l })
    }

    pub fn from_rows(k: &[Vec<f64>], l: &[Vec<f64>]) -> Result<Self> {
        let to_mat = |rows: &[Vec<f64>], name: &str| -> Result<DMatrix<f64>> {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidProcess(format!("kernel {name} is not square")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        Self::new(to_mat(k, "K")?, to_mat(l, "L")?)
    }

    pub fn zero(points: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(points, points), DMatrix::zeros(points, points))
    }

    pub fn points(&self) -> usize {
        self.k.nrows()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn resolvent(&self) -> DMatrix<f64> {
        resolvent(&self.k)
    }

    /// `Phi = L - R * L`, the action-to-state map.
    pub fn control_map(&self) -> DMatrix<f64> {
        let r = self.resolvent();
        &self.l - &r * &self.l
    }

    fn check_space(&self, space: &ScenarioSpace) -> Result<()> {
        if space.steps() != self.points() {
            return Err(Error::InvalidProcess(format!(
                "kernel has {} time points, scenario space has {}",
                self.points(),
                space.steps()
            )));
        }
        Ok(())
    }

    /// State from the explicit resolvent representation.
    pub fn state_explicit(&self, a: &ActionProcess, eta: &ActionProcess) -> Result<ActionProcess> {
        if !same_space(a.space(), eta.space()) {
            return Err(Error::SpaceMismatch);
        }
        self.check_space(a.space())?;
        let r = self.resolvent();
        let phi = &self.l - &r * &self.l;
        let n = self.points();
        let mut out = Vec::with_capacity(a.values().len());
        for s in 0..a.space().atoms() {
            let av = DVector::from_column_slice(a.path(s));
            let ev = DVector::from_column_slice(eta.path(s));
            let x = &phi * av - &r * &ev + ev;
            out.extend(x.iter().take(n));
        }
        Ok(ActionProcess::from_raw(a.space(), out))
    }

    /// State from forward substitution in the implicit equation
    /// `X(t_i) = sum_{j<i} K X(t_j) + sum_{j<i} L a(t_j) + eta(t_i)`.
    pub fn state_implicit(&self, a: &ActionProcess, eta: &ActionProcess) -> Result<ActionProcess> {
        if !same_space(a.space(), eta.space()) {
            return Err(Error::SpaceMismatch);
        }
        self.check_space(a.space())?;
        let n = self.points();
        let mut out = Vec::with_capacity(a.values().len());
        for s in 0..a.space().atoms() {
            let (ap, ep) = (a.path(s), eta.path(s));
            let mut x = vec![0.0; n];
            for i in 0..n {
                let mut acc = ep[i];
                for j in 0..i {
                    acc += self.k[(i, j)] * x[j] + self.l[(i, j)] * ap[j];
                }
                x[i] = acc;
            }
            out.extend(x);
        }
        Ok(ActionProcess::from_raw(a.space(), out))
    }
}

/// Resolvent of `-K` by forward substitution:
/// `R(i, j) = -K(i, j) + sum_{j < u < i} K(i, u) R(u, j)`.
pub fn resolvent(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let mut acc = -k[(i, j)];
            for u in (j + 1)..i {
                acc += k[(i, u)] * r[(u, j)];
            }
            r[(i, j)] = acc;
        }
    }
    r
}

/// Coefficients of `f(x, z, a) = -(q/2) x^2 - (r/2) a^2 + c a z` and
/// `g(x_T) = -(q_terminal/2) x_T^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqCoefficients {
    pub q: f64,
    pub r: f64,
    pub c: f64,
    #[serde(default)]
    pub q_terminal: f64,
}

/// State-free utility obtained after substituting the resolved states:
/// `U(a, z, theta) = E[-1/2 a' A a + a' B z + a' theta]` pathwise, with
/// `A = Phi' Q Phi + r I` and `B = c Phi`.
#[derive(Debug, Clone)]
pub struct LqUtility {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    constants: UtilityConstants,
    smoothness: f64,
}

impl LqUtility {
    pub fn quadratic_form(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn check(&self, x: &ActionProcess) -> Result<()> {
        if x.space().steps() != self.a.nrows() {
            return Err(Error::InvalidProcess(format!(
                "utility expects {} time points, got {}",
                self.a.nrows(),
                x.space().steps()
            )));
        }
        Ok(())
    }
}

impl Utility for LqUtility {
    fn evaluate(&self, a: &ActionProcess, z: &ActionProcess, theta: &ActionProcess) -> Result<f64> {
        self.check(a)?;
        if !same_space(a.space(), z.space()) || !same_space(a.space(), theta.space()) {
            return Err(Error::SpaceMismatch);
        }
        let sp = a.space();
        let mut total = 0.0;
        for s in 0..sp.atoms() {
            let av = DVector::from_column_slice(a.path(s));
            let zv = DVector::from_column_slice(z.path(s));
            let tv = DVector::from_column_slice(theta.path(s));
            let val = -0.5 * av.dot(&(&self.a * &av)) + av.dot(&(&self.b * zv)) + av.dot(&tv);
            total += sp.probs()[s] * val;
        }
        Ok(total)
    }

    fn gradient(&self, a: &ActionProcess, z: &ActionProcess, theta: &ActionProcess) -> Result<ActionProcess> {
        self.check(a)?;
        if !same_space(a.space(), z.space()) || !same_space(a.space(), theta.space()) {
            return Err(Error::SpaceMismatch);
        }
        let sp = a.space();
        let mut out = Vec::with_capacity(a.values().len());
        for s in 0..sp.atoms() {
            let av = DVector::from_column_slice(a.path(s));
            let zv = DVector::from_column_slice(z.path(s));
            let g = -(&self.a * av) + &self.b * zv + DVector::from_column_slice(theta.path(s));
            out.extend(g.iter());
        }
        Ok(ActionProcess::from_raw(sp, out))
    }

    fn constants(&self) -> UtilityConstants {
        self.constants
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn payoff_lipschitz(&self, radius: f64, theta_max: f64) -> Option<(f64, f64)> {
        let ell = self.constants.ell;
        Some((self.smoothness * radius + ell * radius + theta_max, ell * radius))
    }
}

#[derive(Debug, Clone)]
pub struct LqReduction {
    pub utility: Arc<LqUtility>,
    /// `theta_v = -Phi' Q psi_v + c z_v(psi)`, projected on adapted processes.
    pub theta: ActionProfile,
    /// Action-independent part `-1/2 E[psi_v' Q psi_v]` of the payoff.
    pub offsets: BTreeMap<crate::graph::VertexId, f64>,
    /// Uncontrolled states `psi_v = (I - R) eta_v`.
    pub free_states: ActionProfile,
}

#[derive(Debug, Clone)]
pub struct LqStateGame {
    pub kernel: VolterraKernel,
    pub coefficients: LqCoefficients,
}

impl LqStateGame {
    pub fn new(kernel: VolterraKernel, coefficients: LqCoefficients) -> Self {
        LqStateGame { kernel, coefficients }
    }

    fn weights(&self) -> DVector<f64> {
        let n = self.kernel.points();
        let mut w = DVector::from_element(n, self.coefficients.q);
        w[n - 1] += self.coefficients.q_terminal;
        w
    }

    /// Builds the state-free utility and its constants; refuses `rho >= 1`.
    pub fn utility(&self) -> Result<LqUtility> {
        let c = self.coefficients;
        let n = self.kernel.points();
        let phi = self.kernel.control_map();
        let qd = DMatrix::from_diagonal(&self.weights());
        let a = phi.transpose() * &qd * &phi + DMatrix::identity(n, n) * c.r;
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        let gamma = eig.min();
        let smoothness = eig.max();
        let sigma = phi.clone().svd(false, false).singular_values.max();
        let constants = UtilityConstants {
            gamma,
            ell: c.c.abs() * sigma,
            ell_theta: 1.0,
        };
        constants.certify()?;
        Ok(LqUtility {
            a,
            b: phi * c.c,
            constants,
            smoothness,
        })
    }

    /// Reduces the state game on `graph` with noise profile `eta`.
    pub fn reduce(&self, graph: &FiniteGraph, eta: &ActionProfile, norm: &Normalization) -> Result<LqReduction> {
        let utility = Arc::new(self.utility()?);
        let space = eta.space().clone();
        self.kernel.check_space(&space)?;
        let zero = ActionProcess::zeros(&space);
        let mut free = ActionProfile::new(&space);
        for &v in graph.ids() {
            free.insert(v, self.kernel.state_explicit(&zero, eta.require(v)?)?)?;
        }
        let phi = self.kernel.control_map();
        let w = self.weights();
        let c = self.coefficients.c;
        let mut theta = ActionProfile::new(&space);
        let mut offsets = BTreeMap::new();
        for (idx, &v) in graph.ids().iter().enumerate() {
            let psi = free.require(v)?;
            let mut agg = ActionProcess::zeros(&space);
            let wt = norm.weight(graph.degree_of(idx));
            for &u in graph.adjacent(idx) {
                agg.add_scaled(wt, free.require(graph.id(u))?)?;
            }
            let mut th = Vec::with_capacity(psi.values().len());
            let mut offset = 0.0;
            for s in 0..space.atoms() {
                let p = DVector::from_column_slice(psi.path(s));
                let qp = p.component_mul(&w);
                offset += space.probs()[s] * -0.5 * p.dot(&qp);
                let t = -(phi.transpose() * qp) + DVector::from_column_slice(agg.path(s)) * c;
                th.extend(t.iter());
            }
            theta.insert(v, ActionProcess::from_raw(&space, th).adapted())?;
            offsets.insert(v, offset);
        }
        Ok(LqReduction {
            utility,
            theta,
            offsets,
            free_states: free,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path, VertexId};
    use crate::process::NamedFiltration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lower(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if j < i { rng.random_range(-scale..scale) } else { 0.0 })
    }

    fn neumann(k: &DMatrix<f64>) -> DMatrix<f64> {
        let n = k.nrows();
        let mut acc = DMatrix::zeros(n, n);
        let mut pow = k.clone();
        for _ in 1..=n {
            acc -= &pow;
            pow = &pow * k;
        }
        acc
    }

    #[test]
    fn resolvent_examples() {
        assert_eq!(resolvent(&DMatrix::zeros(4, 4)), DMatrix::zeros(4, 4));
        let (k10, k20, k21) = (0.7, -0.3, 0.4);
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, k10, 0.0, 0.0, k20, k21, 0.0]);
        let r = resolvent(&k);
        assert_eq!(r[(1, 0)], -k10);
        assert!((r[(2, 0)] - (-k20 - k21 * k10)).abs() < 1e-15);
        assert!((r[(2, 1)] + k21).abs() < 1e-15);
        assert!((&r - neumann(&k)).abs().max() < 1e-14);
        // nilpotency: K^n = 0
        assert_eq!(k.pow(3), DMatrix::zeros(3, 3));
    }

    #[test]
    fn resolvent_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=9 {
            let k = random_lower(&mut rng, n, 1.5);
            let r = resolvent(&k);
            assert!((&r - (-&k + &k * &r)).abs().max() < 1e-10);
            let inv = (DMatrix::identity(n, n) - &k).try_inverse().unwrap();
            assert!((DMatrix::identity(n, n) - &r - inv).abs().max() < 1e-10);
            for i in 0..n {
                for j in i..n {
                    assert_eq!(r[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn kernel_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(VolterraKernel::new(bad, DMatrix::zeros(2, 2)).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(VolterraKernel::new(DMatrix::zeros(2, 2), diag).is_err());
        let nan = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, f64::NAN, 0.0]);
        assert!(VolterraKernel::new(nan, DMatrix::zeros(2, 2)).is_err());
    }

    fn space(n: usize) -> Arc<ScenarioSpace> {
        Arc::new(ScenarioSpace::uniform(3, (0..n).map(|i| i as f64).collect(), NamedFiltration::RevealAtStart).unwrap())
    }

    #[test]
    fn state_special_cases() {
        let sp = space(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = ActionProcess::from_fn(&sp, |_, _| rng.random_range(-1.0..1.0));
        let eta = ActionProcess::from_fn(&sp, |s, j| (s + 2 * j) as f64 * 0.1);
        let zero = VolterraKernel::zero(4).unwrap();
        assert!(zero.state_explicit(&a, &eta).unwrap().distance(&eta).unwrap() < 1e-15);
        let l = random_lower(&mut rng, 4, 1.0);
        let kl = VolterraKernel::new(DMatrix::zeros(4, 4), l.clone()).unwrap();
        let x = kl.state_explicit(&a, &eta).unwrap();
        for s in 0..3 {
            for i in 0..4 {
                let direct: f64 = (0..i).map(|j| l[(i, j)] * a.get(s, j)).sum::<f64>() + eta.get(s, i);
                assert!((x.get(s, i) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn explicit_matches_implicit_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let n = 2 + trial % 8;
            let sp = space(n);
            let kern = VolterraKernel::new(random_lower(&mut rng, n, 1.2), random_lower(&mut rng, n, 1.2)).unwrap();
            let a = ActionProcess::from_fn(&sp, |_, _| rng.random_range(-2.0..2.0));
            let eta = ActionProcess::from_fn(&sp, |_, _| rng.random_range(-2.0..2.0));
            let e = kern.state_explicit(&a, &eta).unwrap();
            let i = kern.state_implicit(&a, &eta).unwrap();
            let scale = 1.0f64.max(i.sup_abs());
            assert!(e.combine(1.0, &i, -1.0).unwrap().sup_abs() <= 1e-10 * scale);
        }
    }

    /// Direct payoff: simulate every state, form the aggregate state, sum the
    /// running and terminal payoffs.
    fn simulate_payoff(
        game: &LqStateGame,
        g: &FiniteGraph,
        actions: &ActionProfile,
        eta: &ActionProfile,
        v: VertexId,
    ) -> f64 {
        let k = game.kernel.k();
        let l = game.kernel.l();
        let n = game.kernel.points();
        let sp = actions.space().clone();
        let simulate = |u: VertexId, s: usize| {
            let (a, e) = (actions.get(u).unwrap(), eta.get(u).unwrap());
            let mut x = vec![0.0; n];
            for i in 0..n {
                x[i] = e.get(s, i) + (0..i).map(|j| k[(i, j)] * x[j] + l[(i, j)] * a.get(s, j)).sum::<f64>();
            }
            x
        };
        let idx = g.index_of(v).unwrap();
        let c = game.coefficients;
        let mut total = 0.0;
        for s in 0..sp.atoms() {
            let xv = simulate(v, s);
            let nb: Vec<Vec<f64>> = g.adjacent(idx).iter().map(|&u| simulate(g.id(u), s)).collect();
            let deg = nb.len() as f64;
            let mut val = 0.0;
            for t in 0..n {
                let z = if nb.is_empty() { 0.0 } else { nb.iter().map(|x| x[t]).sum::<f64>() / deg };
                let a = actions.get(v).unwrap().get(s, t);
                val += -0.5 * c.q * xv[t] * xv[t] - 0.5 * c.r * a * a + c.c * a * z;
            }
            val += -0.5 * c.q_terminal * xv[n - 1] * xv[n - 1];
            total += sp.probs()[s] * val;
        }
        total
    }

    fn reduced_payoff(red: &LqReduction, g: &FiniteGraph, actions: &ActionProfile, v: VertexId) -> f64 {
        let idx = g.index_of(v).unwrap();
        let sp = actions.space();
        let mut z = ActionProcess::zeros(sp);
        let deg = g.degree_of(idx);
        for &u in g.adjacent(idx) {
            z.add_scaled(1.0 / deg as f64, actions.get(g.id(u)).unwrap()).unwrap();
        }
        red.utility.evaluate(actions.get(v).unwrap(), &z, red.theta.get(v).unwrap()).unwrap() + red.offsets[&v]
    }

    #[test]
    fn reduced_utility_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = path(4).unwrap();
        for trial in 0..20 {
            let n = 2 + trial % 5;
            let sp = Arc::new(
                ScenarioSpace::new(
                    vec![0.25; 4],
                    (0..n).map(|i| i as f64).collect(),
                    (0..n).map(|j| if j == 0 { vec![0, 0, 0, 0] } else if j == 1 { vec![0, 0, 1, 1] } else { vec![0, 1, 2, 3] }).collect(),
                )
                .unwrap(),
            );
            let kern = VolterraKernel::new(random_lower(&mut rng, n, 0.5), random_lower(&mut rng, n, 0.5)).unwrap();
            let game = LqStateGame::new(kern, LqCoefficients { q: 0.8, r: 2.0, c: 0.2, q_terminal: 0.5 });
            let draw = |rng: &mut ChaCha8Rng| ActionProcess::from_fn(&sp, |_, _| rng.random_range(-1.0..1.0)).adapted();
            let mut eta = ActionProfile::new(&sp);
            let mut acts = ActionProfile::new(&sp);
            for &v in g.ids() {
                eta.insert(v, draw(&mut rng)).unwrap();
                acts.insert(v, draw(&mut rng)).unwrap();
            }
            let red = game.reduce(&g, &eta, &Normalization::Degree).unwrap();
            for &v in g.ids() {
                let direct = simulate_payoff(&game, &g, &acts, &eta, v);
                let reduced = reduced_payoff(&red, &g, &acts, v);
                assert!((direct - reduced).abs() <= 1e-10 * direct.abs().max(1.0), "{direct} vs {reduced}");
            }
        }
    }

    #[test]
    fn lq_special_cases() {
        let sp = space(3);
        // L = 0: no control of the state, U = -(r/2)|a|^2 + const, best response 0 with c = 0.
        let game = LqStateGame::new(
            VolterraKernel::new(random_lower(&mut ChaCha8Rng::seed_from_u64(1), 3, 1.0), DMatrix::zeros(3, 3)).unwrap(),
            LqCoefficients { q: 1.0, r: 2.0, c: 0.0, q_terminal: 1.0 },
        );
        let u = game.utility().unwrap();
        assert!((u.quadratic_form() - DMatrix::identity(3, 3) * 2.0).abs().max() < 1e-15);
        let z = ActionProcess::constant(&sp, 1.0);
        let th = ActionProcess::zeros(&sp);
        let br = u.best_response(&z, &th, &crate::process::AdmissibleSet::Ball { radius: 5.0 }).unwrap();
        assert!(br.norm() < 1e-12);

        // q -> 0 with K = 0 and L = I-shift is the instantaneous quadratic model in the shifted action.
        let kern = VolterraKernel::new(DMatrix::zeros(3, 3), random_lower(&mut ChaCha8Rng::seed_from_u64(2), 3, 1.0)).unwrap();
        let game = LqStateGame::new(kern, LqCoefficients { q: 0.0, r: 1.5, c: 0.3, q_terminal: 0.0 });
        let u = game.utility().unwrap();
        assert!((u.quadratic_form() - DMatrix::identity(3, 3) * 1.5).abs().max() < 1e-15);
        assert!((u.constants().gamma - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lq_contraction_gate() {
        let l = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let game = LqStateGame::new(
            VolterraKernel::new(DMatrix::zeros(2, 2), l).unwrap(),
            LqCoefficients { q: 0.0, r: 1.0, c: 2.0, q_terminal: 0.0 },
        );
        assert!(matches!(game.utility(), Err(Error::ContractionViolation { .. })));
    }
}
