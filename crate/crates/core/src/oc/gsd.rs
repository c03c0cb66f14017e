//! Normal approximation to the decision statistic.
//!
//! With `gamma_t = Phi^-1(tau_t)`, the large-sample posterior gives
//! `gamma_t ~ sqrt(n_t) (psi - psi0) / lambda + eps_t` where `eps` is standard
//! normal with `corr(eps_j, eps_k) = sqrt(n_j / n_k)` for `n_j <= n_k`.

use super::design::{MvnConfig, TrialDesign};
use crate::rng::derived_rng;
use crate::stats::{norm_cdf, norm_ppf};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    Ok(())
}

/// Fixed-design power `1 - Phi(Phi^-1(u) - sqrt(n) (psi - psi0) / lambda)`.
pub fn power_fixed(psi: f64, psi0: f64, n: usize, u: f64, lambda: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold u = {u} is not in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::InvalidSize("n must be at least 1".into()));
    }
    check_lambda(lambda)?;
    let shift = (n as f64).sqrt() * (psi - psi0) / lambda;
    Ok(norm_cdf(shift - norm_ppf(u)))
}

/// Standardized effect `(psi - psi0) / lambda`.
#[inline]
pub fn effect(psi: f64, psi0: f64, lambda: f64) -> f64 {
    (psi - psi0) / lambda
}

/// Joint distribution of the probit decision statistics over the analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct GsdJointDistribution {
    pub mean: Vec<f64>,
    pub correlation: DMatrix<f64>,
    /// Lower Cholesky factor of `correlation`.
    pub cholesky: DMatrix<f64>,
}

pub fn correlation(schedule: &[usize]) -> DMatrix<f64> {
    let t = schedule.len();
    DMatrix::from_fn(t, t, |j, k| {
        let (a, b) = (schedule[j].min(schedule[k]), schedule[j].max(schedule[k]));
        (a as f64 / b as f64).sqrt()
    })
}

fn cholesky(schedule: &[usize]) -> Result<DMatrix<f64>> {
    correlation(schedule)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Estimation("correlation matrix is not positive definite".into()))
}

pub fn gamma_joint(
    psi: f64,
    psi0: f64,
    design: &TrialDesign,
    lambda: f64,
) -> Result<GsdJointDistribution> {
    design.validate()?;
    check_lambda(lambda)?;
    let delta = effect(psi, psi0, lambda);
    Ok(GsdJointDistribution {
        mean: design.schedule.iter().map(|&n| delta * (n as f64).sqrt()).collect(),
        correlation: correlation(&design.schedule),
        cholesky: cholesky(&design.schedule)?,
    })
}

/// `eps` draws (row-major, one row per draw) for a schedule. The underlying
/// standard normals depend only on the seed and the number of analyses, so
/// designs evaluated with one [`MvnConfig`] share random numbers.
pub fn noise_draws(schedule: &[usize], mvn: &MvnConfig) -> Result<Vec<f64>> {
    mvn.validate()?;
    let t = schedule.len();
    let l = cholesky(schedule)?;
    let mut rng = derived_rng(mvn.seed, &[t as u64]);
    let mut z = vec![0.0; t];
    let mut out = vec![0.0; mvn.draws * t];
    for i in 0..mvn.draws {
        if mvn.antithetic && i % 2 == 1 {
            z.iter_mut().for_each(|v| *v = -*v);
        } else {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
        let row = &mut out[i * t..(i + 1) * t];
        for j in 0..t {
            row[j] = (0..=j).map(|k| l[(j, k)] * z[k]).sum();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Efficacy(usize),
    Futility(usize),
    NoDecision,
}

/// Probit thresholds of a design: efficacy `Phi^-1(u_t)`, futility `Phi^-1(l_t)`.
#[derive(Debug, Clone)]
pub(crate) struct Bounds {
    pub root_n: Vec<f64>,
    pub efficacy: Vec<f64>,
    pub futility: Vec<f64>,
}

impl Bounds {
    pub fn new(design: &TrialDesign) -> Self {
        let t = design.n_analyses();
        Self {
            root_n: design.schedule.iter().map(|&n| (n as f64).sqrt()).collect(),
            efficacy: design.efficacy.iter().map(|&u| norm_ppf(u)).collect(),
            futility: (0..t)
                .map(|k| if k + 1 < t { norm_ppf(design.futility_at(k)) } else { f64::NEG_INFINITY })
                .collect(),
        }
    }

    /// Sequential decision for one noise draw at standardized effect `delta`.
    #[inline]
    pub fn outcome(&self, eps: &[f64], delta: f64) -> Outcome {
        for t in 0..eps.len() {
            let g = delta * self.root_n[t] + eps[t];
            if g >= self.efficacy[t] {
                return Outcome::Efficacy(t);
            }
            if g <= self.futility[t] {
                return Outcome::Futility(t);
            }
        }
        Outcome::NoDecision
    }
}

/// Draw counts for each way a trial can end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopCounts {
    pub efficacy_at: Vec<u64>,
    pub futility_at: Vec<u64>,
    pub no_decision: u64,
    pub n_draws: u64,
}

impl StopCounts {
    fn zero(t: usize, n: u64) -> Self {
        Self {
            efficacy_at: vec![0; t],
            futility_at: vec![0; t],
            no_decision: 0,
            n_draws: n,
        }
    }

    pub fn total(&self) -> u64 {
        self.efficacy_at.iter().sum::<u64>() + self.futility_at.iter().sum::<u64>() + self.no_decision
    }

    /// Draws ending at each analysis (all undecided draws end at the last).
    pub fn ends_at(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.efficacy_at.iter().zip(&self.futility_at).map(|(e, f)| e + f).collect();
        *out.last_mut().expect("at least one analysis") += self.no_decision;
        out
    }

    pub fn probs(&self) -> StopProbs {
        let n = self.n_draws as f64;
        let frac = |xs: &[u64]| xs.iter().map(|&c| c as f64 / n).collect();
        StopProbs {
            efficacy_at: frac(&self.efficacy_at),
            futility_at: frac(&self.futility_at),
            no_decision: self.no_decision as f64 / n,
            n_draws: self.n_draws,
            cumulative_efficacy: frac(&cumsum(&self.efficacy_at)),
            cumulative_futility: frac(&cumsum(&self.futility_at)),
            ends_at: frac(&self.ends_at()),
        }
    }
}

/// Probabilities of stopping at each analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct StopProbs {
    pub efficacy_at: Vec<f64>,
    pub futility_at: Vec<f64>,
    pub no_decision: f64,
    pub n_draws: u64,
    cumulative_efficacy: Vec<f64>,
    cumulative_futility: Vec<f64>,
    ends_at: Vec<f64>,
}

fn cumsum(xs: &[u64]) -> Vec<u64> {
    xs.iter()
        .scan(0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

impl StopProbs {
    pub fn cumulative_efficacy(&self) -> Vec<f64> {
        self.cumulative_efficacy.clone()
    }

    pub fn cumulative_futility(&self) -> Vec<f64> {
        self.cumulative_futility.clone()
    }

    /// Probability that the trial ends at each analysis (all remaining mass at the last).
    pub fn ends_at(&self) -> Vec<f64> {
        self.ends_at.clone()
    }

    /// Binomial Monte Carlo standard error of a probability estimated from these draws.
    pub fn se(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.n_draws as f64).max(0.0).sqrt()
    }
}

/// Stopping probabilities by direct simulation of the decision rule.
pub fn stop_counts(design: &TrialDesign, psi: f64, lambda: f64, mvn: &MvnConfig) -> Result<StopCounts> {
    design.validate()?;
    check_lambda(lambda)?;
    let t = design.n_analyses();
    let eps = noise_draws(&design.schedule, mvn)?;
    let bounds = Bounds::new(design);
    let delta = effect(psi, design.psi0, lambda);
    let mut c = StopCounts::zero(t, mvn.draws as u64);
    for row in eps.chunks_exact(t) {
        match bounds.outcome(row, delta) {
            Outcome::Efficacy(k) => c.efficacy_at[k] += 1,
            Outcome::Futility(k) => c.futility_at[k] += 1,
            Outcome::NoDecision => c.no_decision += 1,
        }
    }
    Ok(c)
}

pub fn stop_probs(design: &TrialDesign, psi: f64, lambda: f64, mvn: &MvnConfig) -> Result<StopProbs> {
    Ok(stop_counts(design, psi, lambda, mvn)?.probs())
}

/// Precomputed form of [`stop_counts`] for many effects on one set of draws.
///
/// For a fixed noise draw, raising `delta` raises every `gamma_t`, so "efficacy
/// by analysis t" holds exactly on a half-line `[e_t, inf)` and "futility by
/// analysis t" on `(-inf, f_t]`. Each draw's thresholds are found by evaluating
/// the rule once inside each interval between its boundary crossings; sorting
/// the thresholds over draws turns every query into binary searches.
#[derive(Debug, Clone)]
pub struct StoppingTable {
    efficacy_by: Vec<Vec<f64>>,
    futility_by: Vec<Vec<f64>>,
    n_draws: u64,
    psi0: f64,
}

impl StoppingTable {
    pub fn new(design: &TrialDesign, mvn: &MvnConfig) -> Result<Self> {
        design.validate()?;
        let t = design.n_analyses();
        let eps = noise_draws(&design.schedule, mvn)?;
        let bounds = Bounds::new(design);
        let mut efficacy_by = vec![Vec::with_capacity(mvn.draws); t];
        let mut futility_by = vec![Vec::with_capacity(mvn.draws); t];
        let mut breaks = Vec::with_capacity(2 * t);
        for row in eps.chunks_exact(t) {
            breaks.clear();
            for k in 0..t {
                breaks.push((bounds.efficacy[k] - row[k]) / bounds.root_n[k]);
                let f = (bounds.futility[k] - row[k]) / bounds.root_n[k];
                if f.is_finite() {
                    breaks.push(f);
                }
            }
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let m = breaks.len();
            let lower_edge = |r: usize| if r == 0 { f64::NEG_INFINITY } else { breaks[r - 1] };
            let upper_edge = |r: usize| if r == m { f64::INFINITY } else { breaks[r] };
            let mut eff = vec![f64::INFINITY; t];
            let mut fut = vec![f64::NEG_INFINITY; t];
            for r in 0..=m {
                let probe = match (r, m) {
                    (_, 0) => 0.0,
                    (0, _) => breaks[0] - 1.0,
                    (r, m) if r == m => breaks[m - 1] + 1.0,
                    (r, _) => 0.5 * (breaks[r - 1] + breaks[r]),
                };
                match bounds.outcome(row, probe) {
                    Outcome::Efficacy(s) => {
                        for e in eff.iter_mut().skip(s) {
                            if e.is_infinite() && *e > 0.0 {
                                *e = lower_edge(r);
                            }
                        }
                    }
                    Outcome::Futility(s) => {
                        for f in fut.iter_mut().skip(s) {
                            *f = upper_edge(r);
                        }
                    }
                    Outcome::NoDecision => {}
                }
            }
            for k in 0..t {
                efficacy_by[k].push(eff[k]);
                futility_by[k].push(fut[k]);
            }
        }
        for v in efficacy_by.iter_mut().chain(futility_by.iter_mut()) {
            v.sort_by(f64::total_cmp);
        }
        Ok(Self {
            efficacy_by,
            futility_by,
            n_draws: mvn.draws as u64,
            psi0: design.psi0,
        })
    }

    pub fn n_analyses(&self) -> usize {
        self.efficacy_by.len()
    }

    pub fn n_draws(&self) -> u64 {
        self.n_draws
    }

    pub fn psi0(&self) -> f64 {
        self.psi0
    }

    /// Number of draws with an efficacy decision by each analysis.
    #[inline]
    pub fn cumulative_efficacy_counts(&self, delta: f64, out: &mut [u64]) {
        for (o, e) in out.iter_mut().zip(&self.efficacy_by) {
            *o = e.partition_point(|&x| x <= delta) as u64;
        }
    }

    #[inline]
    pub fn cumulative_futility_counts(&self, delta: f64, out: &mut [u64]) {
        for (o, f) in out.iter_mut().zip(&self.futility_by) {
            *o = (f.len() - f.partition_point(|&x| x < delta)) as u64;
        }
    }

    pub fn counts(&self, delta: f64) -> StopCounts {
        let t = self.n_analyses();
        let mut e = vec![0; t];
        let mut f = vec![0; t];
        self.cumulative_efficacy_counts(delta, &mut e);
        self.cumulative_futility_counts(delta, &mut f);
        let mut c = StopCounts::zero(t, self.n_draws);
        for k in 0..t {
            c.efficacy_at[k] = e[k] - if k > 0 { e[k - 1] } else { 0 };
            c.futility_at[k] = f[k] - if k > 0 { f[k - 1] } else { 0 };
        }
        c.no_decision = self.n_draws - e[t - 1] - f[t - 1];
        c
    }

    pub fn counts_at(&self, psi: f64, lambda: f64) -> StopCounts {
        self.counts(effect(psi, self.psi0, lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn d1() -> TrialDesign {
        TrialDesign::new(vec![350, 500, 700], vec![0.99, 0.98, 0.975]).unwrap()
    }

    fn small_mvn(seed: u64) -> MvnConfig {
        MvnConfig {
            draws: 4000,
            seed,
            antithetic: true,
        }
    }

    #[test]
    fn power_reference_values() {
        // mpmath at 30 digits: Phi(2.8 - Phi^-1(0.975))
        let p = power_fixed(0.28, 0.0, 100, 0.975, 1.0).unwrap();
        assert!((p - 0.799_555_903_298_112_3).abs() < 1e-12);
        assert!((power_fixed(0.1, 0.1, 50, 0.975, 3.0).unwrap() - 0.025).abs() < 1e-14);
        assert!(power_fixed(0.3, 0.0, 100_000_000, 0.975, 1.0).unwrap() >= 1.0 - 1e-9);
        assert!(power_fixed(0.3, 0.0, 100, 1.0, 1.0).is_err());
        assert!(power_fixed(0.3, 0.0, 100, 0.0, 1.0).is_err());
        assert!(power_fixed(0.3, 0.0, 100, 0.9, 0.0).is_err());
    }

    #[test]
    fn correlation_structure() {
        let g = gamma_joint(0.0, 0.0, &d1(), 2.0).unwrap();
        let c = &g.correlation;
        assert_eq!(c[(0, 1)], (350.0f64 / 500.0).sqrt());
        assert_eq!(c[(0, 2)], (350.0f64 / 700.0).sqrt());
        assert_eq!(c[(1, 2)], (500.0f64 / 700.0).sqrt());
        assert_eq!(c[(2, 1)], c[(1, 2)]);
        assert!(g.mean.iter().all(|&m| m == 0.0));
        let one = gamma_joint(0.2, 0.0, &TrialDesign::fixed(100, 0.9).unwrap(), 1.0).unwrap();
        assert_eq!(one.correlation, DMatrix::from_element(1, 1, 1.0));
        let rebuilt = &g.cholesky * g.cholesky.transpose();
        assert!((rebuilt - c).abs().max() < 1e-15);
    }

    #[test]
    fn direct_counts_partition_the_draws() {
        let design = d1().with_futility(vec![0.3, 0.5]).unwrap();
        for psi in [-0.2, 0.0, 0.15, 0.4] {
            let c = stop_counts(&design, psi, 2.0, &small_mvn(3)).unwrap();
            assert_eq!(c.total(), 4000);
        }
    }

    #[test]
    fn table_matches_direct_evaluation_exactly() {
        let mut rng = rng_from_seed(10);
        let designs = [
            d1(),
            d1().with_futility(vec![0.2, 0.4]).unwrap(),
            TrialDesign::new(vec![300, 400, 500, 600], vec![0.99, 0.99, 0.99, 0.95])
                .unwrap()
                .with_futility(vec![0.0, 0.3, 0.0])
                .unwrap(),
            TrialDesign::fixed(200, 0.9).unwrap(),
        ];
        for design in &designs {
            let mvn = small_mvn(21);
            let table = StoppingTable::new(design, &mvn).unwrap();
            for _ in 0..25 {
                let psi: f64 = rng.random_range(-0.4..0.6);
                let lambda: f64 = rng.random_range(0.5..4.0);
                assert_eq!(
                    table.counts_at(psi, lambda),
                    stop_counts(design, psi, lambda, &mvn).unwrap(),
                    "psi {psi} lambda {lambda}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn power_is_scale_equivariant(
            psi in -2.0f64..2.0, psi0 in -1.0f64..1.0, n in 1usize..5000,
            u in 0.5f64..0.999, lambda in 0.1f64..10.0, c in 0.1f64..10.0,
        ) {
            let a = power_fixed(psi, psi0, n, u, lambda).unwrap();
            let b = power_fixed(c * psi, c * psi0, n, u, c * lambda).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn cumulative_efficacy_is_monotone(delta in -0.3f64..0.3) {
            let table = StoppingTable::new(&d1(), &small_mvn(5)).unwrap();
            let p = table.counts(delta).probs();
            let cum = p.cumulative_efficacy();
            prop_assert!(cum.windows(2).all(|w| w[0] <= w[1]));
            let up = table.counts(delta + 0.01).probs().cumulative_efficacy();
            prop_assert!(cum.iter().zip(&up).all(|(a, b)| a <= b));
        }
    }
}
