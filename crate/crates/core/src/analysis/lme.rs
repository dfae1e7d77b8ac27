//! Linear mixed-effects model with crossed random intercepts, fitted by
//! maximum likelihood.
//!
//! With `V = σ²·H(γ)`, `H = I + Σ_g γ_g Z_g Z_gᵀ`, β and σ² have closed
//! forms for fixed variance ratios γ, so only the profile log-likelihood
//! over γ is optimized numerically. All products are formed through the
//! q × q matrix `I + D ZᵀZ D` (q = total number of levels, `D = diag(√γ)`),
//! so the cost of one evaluation does not depend on the number of rows.

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// One random-intercept factor: a level id per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFactor {
    pub name: String,
    pub levels: Vec<usize>,
    pub n_levels: usize,
}

impl GroupFactor {
    /// Level ids in order of first appearance of each key.
    pub fn from_keys<K: Ord + Clone>(name: &str, keys: &[K]) -> Self {
        let mut ids = std::collections::BTreeMap::new();
        let levels = keys
            .iter()
            .map(|k| {
                let next = ids.len();
                *ids.entry(k.clone()).or_insert(next)
            })
            .collect();
        GroupFactor {
            name: name.to_string(),
            levels,
            n_levels: ids.len(),
        }
    }
}

/// Response, the 0/1 rule indicator and random-intercept factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmeData {
    pub y: Vec<f64>,
    pub rule: Vec<f64>,
    pub groupings: Vec<GroupFactor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub grouping: String,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmeFit {
    pub intercept: f64,
    /// Rule effect.
    pub beta: f64,
    pub se_intercept: f64,
    pub se_beta: f64,
    pub z: f64,
    /// Two-sided Wald p-value for the rule effect.
    pub p_value: f64,
    pub variance_components: Vec<VarianceComponent>,
    pub residual_variance: f64,
    pub loglik: f64,
    pub n_obs: usize,
}

/// Two-sided normal tail probability of a Wald statistic.
pub fn wald_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Cross-products that stay fixed while the variance ratios change.
struct Moments {
    n: usize,
    offsets: Vec<usize>,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    xtx: Matrix2<f64>,
    xty: Vector2<f64>,
    yty: f64,
}

struct Profile {
    loglik: f64,
    beta: Vector2<f64>,
    cov_unscaled: Matrix2<f64>,
    sigma2: f64,
}

impl Moments {
    fn new(data: &LmeData) -> Self {
        let n = data.y.len();
        let mut offsets = Vec::with_capacity(data.groupings.len());
        let mut q = 0;
        for g in &data.groupings {
            offsets.push(q);
            q += g.n_levels;
        }
        let cols = |i: usize| -> Vec<usize> {
            data.groupings
                .iter()
                .zip(&offsets)
                .map(|(g, o)| o + g.levels[i])
                .collect()
        };
        let mut ztz = DMatrix::zeros(q, q);
        let mut ztx = DMatrix::zeros(q, 2);
        let mut zty = DVector::zeros(q);
        let mut xtx = Matrix2::zeros();
        let mut xty = Vector2::zeros();
        let mut yty = 0.0;
        for i in 0..n {
            let x = Vector2::new(1.0, data.rule[i]);
            let y = data.y[i];
            xtx += x * x.transpose();
            xty += x * y;
            yty += y * y;
            let c = cols(i);
            for &a in &c {
                for &b in &c {
                    ztz[(a, b)] += 1.0;
                }
                ztx[(a, 0)] += 1.0;
                ztx[(a, 1)] += data.rule[i];
                zty[a] += y;
            }
        }
        Moments {
            n,
            offsets,
            ztz,
            ztx,
            zty,
            xtx,
            xty,
            yty,
        }
    }

    fn profile(&self, gammas: &[f64], level_counts: &[usize]) -> Result<Profile> {
        let q = self.ztz.nrows();
        let mut d = DVector::zeros(q);
        for (g, (&off, &len)) in self.offsets.iter().zip(level_counts).enumerate() {
            let s = gammas[g].max(0.0).sqrt();
            for j in off..off + len {
                d[j] = s;
            }
        }
        let mut m = self.ztz.clone();
        for a in 0..q {
            for b in 0..q {
                m[(a, b)] *= d[a] * d[b];
            }
            m[(a, a)] += 1.0;
        }
        let chol = m.cholesky().ok_or(Error::RankDeficient)?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let a = DMatrix::from_fn(q, 2, |i, j| d[i] * self.ztx[(i, j)]);
        let b = self.zty.component_mul(&d);
        let ma = chol.solve(&a);
        let mb = chol.solve(&b);
        let ata = a.transpose() * &ma;
        let atb = a.transpose() * &mb;
        let xhx = self.xtx - Matrix2::new(ata[(0, 0)], ata[(0, 1)], ata[(1, 0)], ata[(1, 1)]);
        let xhy = self.xty - Vector2::new(atb[0], atb[1]);
        let yhy = self.yty - b.dot(&mb);
        let inv = xhx.try_inverse().ok_or(Error::RankDeficient)?;
        let beta = inv * xhy;
        let rss = yhy - beta.dot(&xhy);
        if rss.is_nan() || rss <= 1e-14 * self.yty.max(1.0) {
            return Err(Error::NotEstimable("response has no residual variation".into()));
        }
        let n = self.n as f64;
        let sigma2 = rss / n;
        let loglik = -0.5 * (n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) + logdet);
        Ok(Profile {
            loglik,
            beta,
            cov_unscaled: inv,
            sigma2,
        })
    }
}

fn validate(data: &LmeData) -> Result<()> {
    let n = data.y.len();
    if data.rule.len() != n || data.groupings.iter().any(|g| g.levels.len() != n) {
        return Err(Error::Config("response, rule and grouping lengths differ".into()));
    }
    if n < 3 {
        return Err(Error::NotEstimable(format!("only {n} observations")));
    }
    if data.y.iter().chain(&data.rule).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite response or rule value".into()));
    }
    let first = data.rule[0];
    if data.rule.iter().all(|&r| r == first) {
        return Err(Error::NotEstimable("rule indicator does not vary".into()));
    }
    for g in &data.groupings {
        if g.n_levels < 2 {
            return Err(Error::NotEstimable(format!("grouping {} has a single level", g.name)));
        }
        if g.levels.iter().any(|&l| l >= g.n_levels) {
            return Err(Error::Config(format!("grouping {} has an out-of-range level", g.name)));
        }
    }
    Ok(())
}

/// Profile log-likelihood at variance ratios `γ_g = σ²_g / σ²`.
pub fn profile_loglik(data: &LmeData, gammas: &[f64]) -> Result<f64> {
    validate(data)?;
    let counts: Vec<usize> = data.groupings.iter().map(|g| g.n_levels).collect();
    Ok(Moments::new(data).profile(gammas, &counts)?.loglik)
}

struct Objective<'a> {
    moments: &'a Moments,
    counts: &'a [usize],
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let gammas: Vec<f64> = theta.iter().map(|t| t * t).collect();
        Ok(match self.moments.profile(&gammas, self.counts) {
            Ok(p) => -p.loglik,
            Err(_) => f64::INFINITY,
        })
    }
}

const MAX_ITERS: u64 = 2_000;

/// Maximum-likelihood fit of `y = β₀ + β·rule + Σ_g u_g + ε`.
pub fn fit_lme(data: &LmeData) -> Result<LmeFit> {
    validate(data)?;
    let moments = Moments::new(data);
    let counts: Vec<usize> = data.groupings.iter().map(|g| g.n_levels).collect();
    let k = counts.len();

    let ols = moments.profile(&vec![0.0; k], &counts)?;
    let mut best_gammas = vec![0.0; k];
    let mut best_ll = ols.loglik;

    if k > 0 {
        let mut converged = false;
        let mut iterations = 0;
        for start in [0.3, 1.0, 2.0] {
            let base = vec![start; k];
            let mut simplex = vec![base.clone()];
            for i in 0..k {
                let mut v = base.clone();
                v[i] += 0.5 * start;
                simplex.push(v);
            }
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-11)
                .map_err(|e| Error::Config(e.to_string()))?;
            let res = Executor::new(
                Objective {
                    moments: &moments,
                    counts: &counts,
                },
                solver,
            )
            .configure(|s| s.max_iters(MAX_ITERS))
            .run()
            .map_err(|e| Error::Config(e.to_string()))?;
            let state = res.state();
            iterations += state.get_iter();
            converged |= matches!(
                state.get_termination_status(),
                TerminationStatus::Terminated(TerminationReason::SolverConverged)
            );
            if let Some(theta) = state.get_best_param() {
                let ll = -state.get_best_cost();
                if ll > best_ll {
                    best_ll = ll;
                    best_gammas = theta.iter().map(|t| t * t).collect();
                }
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: iterations as usize,
                loglik: best_ll,
                variances: best_gammas.iter().map(|g| g * ols.sigma2).collect(),
            });
        }
        // Components the optimizer left near zero go to the boundary when
        // that costs no likelihood.
        for g in 0..k {
            if best_gammas[g] == 0.0 {
                continue;
            }
            let mut trial = best_gammas.clone();
            trial[g] = 0.0;
            if let Ok(p) = moments.profile(&trial, &counts) {
                if p.loglik >= best_ll - 1e-9 {
                    best_ll = best_ll.max(p.loglik);
                    best_gammas = trial;
                }
            }
        }
    }

    let p = moments.profile(&best_gammas, &counts)?;
    let cov = p.cov_unscaled * p.sigma2;
    let se_beta = cov[(1, 1)].sqrt();
    let z = p.beta[1] / se_beta;
    Ok(LmeFit {
        intercept: p.beta[0],
        beta: p.beta[1],
        se_intercept: cov[(0, 0)].sqrt(),
        se_beta,
        z,
        p_value: wald_p_value(z),
        variance_components: data
            .groupings
            .iter()
            .zip(&best_gammas)
            .map(|(g, gamma)| VarianceComponent {
                grouping: g.name.clone(),
                variance: gamma * p.sigma2,
            })
            .collect(),
        residual_variance: p.sigma2,
        loglik: p.loglik,
        n_obs: moments.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// 9 × 9 crossed design, checkerboard rule indicator.
    fn crossed(seed: u64, beta: f64, sd_l: f64, sd_w: f64, sd_e: f64) -> LmeData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n01 = Normal::new(0.0, 1.0).unwrap();
        let ul: Vec<f64> = (0..9).map(|_| sd_l * n01.sample(&mut rng)).collect();
        let uw: Vec<f64> = (0..9).map(|_| sd_w * n01.sample(&mut rng)).collect();
        let (mut y, mut rule, mut ls, mut ws) = (vec![], vec![], vec![], vec![]);
        for (l, ul) in ul.iter().enumerate() {
            for (w, uw) in uw.iter().enumerate() {
                let r = ((l + w) % 2) as f64;
                y.push(0.6 + beta * r + ul + uw + sd_e * n01.sample(&mut rng));
                rule.push(r);
                ls.push(l);
                ws.push(w);
            }
        }
        LmeData {
            y,
            rule,
            groupings: vec![
                GroupFactor::from_keys("learner", &ls),
                GroupFactor::from_keys("word", &ws),
            ],
        }
    }

    /// Dense-matrix evaluation of the same likelihood, for cross-checking.
    fn dense_loglik(data: &LmeData, gammas: &[f64]) -> f64 {
        let n = data.y.len();
        let mut h = DMatrix::<f64>::identity(n, n);
        for (g, gamma) in data.groupings.iter().zip(gammas) {
            for i in 0..n {
                for j in 0..n {
                    if g.levels[i] == g.levels[j] {
                        h[(i, j)] += gamma;
                    }
                }
            }
        }
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { data.rule[i] });
        let y = DVector::from_vec(data.y.clone());
        let hinv = h.clone().try_inverse().unwrap();
        let xhx = x.transpose() * &hinv * &x;
        let beta = xhx.try_inverse().unwrap() * x.transpose() * &hinv * &y;
        let r = &y - &x * beta;
        let s2 = (r.transpose() * &hinv * &r)[(0, 0)] / n as f64;
        let logdet = h.determinant().ln();
        -0.5 * (n as f64 * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0) + logdet)
    }

    #[test]
    fn compact_likelihood_matches_dense() {
        let data = crossed(1, 0.1, 0.1, 0.1, 0.15);
        for g in [[0.0, 0.0], [0.3, 1.7], [2.0, 0.05]] {
            let a = profile_loglik(&data, &g).unwrap();
            let b = dense_loglik(&data, &g);
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn beats_a_coarse_grid_and_ols() {
        let data = crossed(2, 0.112, 0.1, 0.1, 0.15);
        let fit = fit_lme(&data).unwrap();
        let ols = profile_loglik(&data, &[0.0, 0.0]).unwrap();
        assert!(fit.loglik >= ols - 1e-12);
        for i in 0..11 {
            for j in 0..11 {
                let g = [i as f64 * 0.3, j as f64 * 0.3];
                assert!(fit.loglik >= profile_loglik(&data, &g).unwrap() - 1e-9);
            }
        }
        assert!(fit.variance_components.iter().all(|v| v.variance >= 0.0));
    }

    #[test]
    fn row_order_does_not_matter() {
        let data = crossed(3, 0.1, 0.2, 0.1, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut idx: Vec<usize> = (0..data.y.len()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let permuted = LmeData {
            y: idx.iter().map(|&i| data.y[i]).collect(),
            rule: idx.iter().map(|&i| data.rule[i]).collect(),
            groupings: data
                .groupings
                .iter()
                .map(|g| GroupFactor {
                    name: g.name.clone(),
                    levels: idx.iter().map(|&i| g.levels[i]).collect(),
                    n_levels: g.n_levels,
                })
                .collect(),
        };
        let a = fit_lme(&data).unwrap();
        let b = fit_lme(&permuted).unwrap();
        assert!((a.beta - b.beta).abs() < 1e-6);
        assert!((a.loglik - b.loglik).abs() < 1e-8);
    }

    #[test]
    fn degenerate_designs() {
        let mut data = crossed(4, 0.1, 0.1, 0.1, 0.15);
        data.rule = vec![1.0; data.y.len()];
        assert!(matches!(fit_lme(&data), Err(Error::NotEstimable(_))));
        let mut data = crossed(4, 0.1, 0.1, 0.1, 0.15);
        data.groupings[0] = GroupFactor::from_keys("learner", &vec![0; data.y.len()]);
        assert!(matches!(fit_lme(&data), Err(Error::NotEstimable(_))));
    }

    #[test]
    fn p_value_decreases_with_z() {
        let mut last = 1.0;
        for i in 0..60 {
            let p = wald_p_value(i as f64 * 0.1);
            assert!(p <= last);
            last = p;
        }
        let p = wald_p_value(1.959963984540054);
        assert!((p - 0.05).abs() < 1e-10, "{p}");
        assert_eq!(wald_p_value(0.0), 1.0);
    }
}
