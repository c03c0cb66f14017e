//! Operating characteristics integrated over a design-prior sample, with the
//! scale `lambda(theta)` taken from a fitted BART ensemble of `log lambda`.

use super::design::{CostSpec, MvnConfig, TrialDesign};
use super::gsd::{effect, StoppingTable};
use crate::bart::BartPosterior;
use crate::model::ParameterPoint;
use crate::stats::{mean, quantile_sorted};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Box inflation beyond which a prior draw counts as an extrapolation.
pub const EXTRAPOLATION_MARGIN: f64 = 0.2;
pub const MIN_UNCERTAINTY_STATES: usize = 50;
const SUM_TOLERANCE: f64 = 1e-9;

/// Mean and central 95% interval over BART posterior states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Summarize a quantity recomputed once per posterior state.
pub fn power_uncertainty(per_state: &[f64]) -> Result<Interval> {
    if per_state.len() < MIN_UNCERTAINTY_STATES {
        return Err(Error::InsufficientData(format!(
            "{} posterior states; at least {MIN_UNCERTAINTY_STATES} required",
            per_state.len()
        )));
    }
    let mut s = per_state.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Interval {
        mean: mean(per_state),
        lower: quantile_sorted(&s, 0.025),
        upper: quantile_sorted(&s, 0.975),
    })
}

/// Expected sample size `sum_t P(end at t) n_t`.
pub fn iess(design: &TrialDesign, ends_at: &[f64]) -> Result<f64> {
    if ends_at.len() != design.n_analyses() {
        return Err(Error::DimensionMismatch {
            expected: design.n_analyses(),
            got: ends_at.len(),
        });
    }
    let total: f64 = ends_at.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE || ends_at.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParameter(format!(
            "stopping probabilities sum to {total}, not 1"
        )));
    }
    Ok(ends_at.iter().zip(&design.schedule).map(|(p, &n)| p * n as f64).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IecBreakdown {
    pub total: f64,
    pub type_i: f64,
    pub type_ii: f64,
    pub sample_size: f64,
}

impl IecBreakdown {
    fn new(cost: &CostSpec, false_positive: f64, false_negative: f64, iess: f64) -> Self {
        let type_i = cost.c0 * false_positive;
        let type_ii = cost.c1 * false_negative;
        let sample_size = cost.c2 * iess;
        Self {
            total: type_i + type_ii + sample_size,
            type_i,
            type_ii,
            sample_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOc {
    pub analysis: usize,
    pub n: usize,
    pub efficacy_threshold: f64,
    pub futility_threshold: f64,
    pub efficacy_at: f64,
    pub efficacy_cumulative: f64,
    pub futility_at: f64,
    pub futility_cumulative: f64,
    pub ends_at: f64,
    pub se_efficacy_at: f64,
    pub se_efficacy_cumulative: f64,
    pub se_futility_cumulative: f64,
    #[serde(default)]
    pub interval_efficacy_at: Option<Interval>,
    #[serde(default)]
    pub interval_efficacy_cumulative: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub quantity: String,
    pub analysis: Option<usize>,
    pub computed: f64,
    pub reference: f64,
    pub within_tolerance: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcReport {
    pub source: String,
    pub design: String,
    pub schedule: Vec<usize>,
    pub psi0: f64,
    pub n_prior_draws: usize,
    pub n_mvn_draws: u64,
    pub analyses: Vec<AnalysisOc>,
    pub no_decision: f64,
    /// `sum_t P(end at t) n_t`, the trial always ending at its last analysis otherwise.
    pub iess: f64,
    /// `sum_t P(efficacy stop at t) n_t`, ignoring trials without an efficacy stop.
    pub iess_efficacy_only: f64,
    pub se_iess: f64,
    #[serde(default)]
    pub interval_iess: Option<Interval>,
    #[serde(default)]
    pub iec: Option<IecBreakdown>,
    #[serde(default)]
    pub interval_iec: Option<Interval>,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    pub n_extrapolated: usize,
    pub warnings: Vec<String>,
    pub flags: Vec<String>,
    pub reference_checks: Vec<ReferenceCheck>,
}

impl OcReport {
    pub fn cumulative_efficacy(&self) -> Vec<f64> {
        self.analyses.iter().map(|a| a.efficacy_cumulative).collect()
    }

    pub fn final_assurance(&self) -> f64 {
        self.analyses.last().map(|a| a.efficacy_cumulative).unwrap_or(0.0)
    }

    pub fn iec_total(&self) -> Option<f64> {
        self.iec.map(|b| b.total)
    }

    /// Tidy CSV: one row per analysis per quantity, plus design-level rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source", "design", "analysis", "n", "quantity", "estimate", "se", "lower", "upper"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = |analysis: String, n: String, q: &str, est: f64, se: Option<f64>, iv: Option<Interval>| {
            w.write_record([
                self.source.clone(),
                self.design.clone(),
                analysis,
                n,
                q.to_string(),
                est.to_string(),
                opt(se),
                opt(iv.map(|i| i.lower)),
                opt(iv.map(|i| i.upper)),
            ])
        };
        for a in &self.analyses {
            let (t, n) = (a.analysis.to_string(), a.n.to_string());
            row(t.clone(), n.clone(), "efficacy_at", a.efficacy_at, Some(a.se_efficacy_at), a.interval_efficacy_at)?;
            row(
                t.clone(),
                n.clone(),
                "efficacy_cumulative",
                a.efficacy_cumulative,
                Some(a.se_efficacy_cumulative),
                a.interval_efficacy_cumulative,
            )?;
            row(t.clone(), n.clone(), "futility_at", a.futility_at, None, None)?;
            row(t.clone(), n.clone(), "futility_cumulative", a.futility_cumulative, Some(a.se_futility_cumulative), None)?;
            row(t, n, "ends_at", a.ends_at, None, None)?;
        }
        row("all".into(), String::new(), "no_decision", self.no_decision, None, None)?;
        row("all".into(), String::new(), "iess", self.iess, Some(self.se_iess), self.interval_iess)?;
        row("all".into(), String::new(), "iess_efficacy_only", self.iess_efficacy_only, None, None)?;
        if let Some(b) = self.iec {
            row("all".into(), String::new(), "iec", b.total, None, self.interval_iec)?;
            row("all".into(), String::new(), "iec_type_i", b.type_i, None, None)?;
            row("all".into(), String::new(), "iec_type_ii", b.type_ii, None, None)?;
            row("all".into(), String::new(), "iec_sample_size", b.sample_size, None, None)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-draw predictions cached once for a prior sample and reused for every design.
#[derive(Debug, Clone)]
pub struct Evaluator {
    psi: Vec<f64>,
    /// Posterior-mean `log lambda` per prior draw.
    plug_in: Vec<f64>,
    /// `log lambda` per prior draw (rows) and BART state (columns).
    per_state: Vec<f64>,
    n_states: usize,
    n_extrapolated: usize,
    psi_index: usize,
}

/// Integer tallies over prior draws; exact regardless of summation order.
#[derive(Debug, Clone, Default)]
struct Tally {
    eff_cum: Vec<u64>,
    fut_cum: Vec<u64>,
    eff_cum_sq: Vec<u128>,
    fut_cum_sq: Vec<u128>,
    /// `sum_t ends_at_t * n_t` in draw units, and its square.
    size: u128,
    size_sq: u128,
    eff_size: u128,
    null_eff: u64,
    alt_miss: u64,
}

impl Tally {
    fn new(t: usize) -> Self {
        Self {
            eff_cum: vec![0; t],
            fut_cum: vec![0; t],
            eff_cum_sq: vec![0; t],
            fut_cum_sq: vec![0; t],
            ..Default::default()
        }
    }

    fn add(&mut self, o: &Tally) {
        for k in 0..self.eff_cum.len() {
            self.eff_cum[k] += o.eff_cum[k];
            self.fut_cum[k] += o.fut_cum[k];
            self.eff_cum_sq[k] += o.eff_cum_sq[k];
            self.fut_cum_sq[k] += o.fut_cum_sq[k];
        }
        self.size += o.size;
        self.size_sq += o.size_sq;
        self.eff_size += o.eff_size;
        self.null_eff += o.null_eff;
        self.alt_miss += o.alt_miss;
    }
}

struct Summary {
    eff_at: Vec<f64>,
    fut_at: Vec<f64>,
    ends_at: Vec<f64>,
    eff_cum: Vec<f64>,
    fut_cum: Vec<f64>,
    se_prior_eff: Vec<f64>,
    se_prior_fut: Vec<f64>,
    iess: f64,
    se_prior_iess: f64,
    iess_efficacy_only: f64,
    false_positive: f64,
    false_negative: f64,
}

fn sd_of_mean(sum: f64, sum_sq: f64, k: f64) -> f64 {
    if k < 2.0 {
        return 0.0;
    }
    let m = sum / k;
    ((sum_sq / k - m * m).max(0.0) * k / (k - 1.0) / k).sqrt()
}

impl Evaluator {
    /// Predict `log lambda` for every draw of `prior_sample` under every state of `predictor`.
    pub fn new(prior_sample: &[ParameterPoint], psi_index: usize, predictor: &BartPosterior) -> Result<Self> {
        if prior_sample.is_empty() {
            return Err(Error::InsufficientData("prior sample is empty".into()));
        }
        let names = prior_sample[0].names();
        if names != predictor.names.as_slice() {
            return Err(Error::Config(format!(
                "ensemble predictors {:?} do not match parameters {:?}",
                predictor.names, names
            )));
        }
        if psi_index >= names.len() {
            return Err(Error::InvalidParameter(format!("psi index {psi_index} out of range")));
        }
        let wide = crate::training::DesignBox::new(&predictor.names, predictor.training_box.clone())
            .map(|b| b.inflate(EXTRAPOLATION_MARGIN))
            .ok();
        let n_states = predictor.n_states();
        let rows: Vec<(f64, bool, Vec<f64>)> = prior_sample
            .par_iter()
            .map(|theta| {
                let draws = predictor.draws_at(theta.values())?;
                let inside = wide.as_ref().is_none_or(|b| b.contains(theta.values()));
                Ok((mean(&draws), inside, draws))
            })
            .collect::<Result<_>>()?;
        let mut per_state = Vec::with_capacity(rows.len() * n_states);
        let mut plug_in = Vec::with_capacity(rows.len());
        let mut n_extrapolated = 0;
        for (m, inside, draws) in rows {
            plug_in.push(m);
            per_state.extend(draws);
            n_extrapolated += usize::from(!inside);
        }
        Ok(Self {
            psi: prior_sample.iter().map(|t| t.values()[psi_index]).collect(),
            plug_in,
            per_state,
            n_states,
            n_extrapolated,
            psi_index,
        })
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_extrapolated(&self) -> usize {
        self.n_extrapolated
    }

    pub fn psi_index(&self) -> usize {
        self.psi_index
    }

    /// Plug-in `lambda` (posterior mean of `log lambda`, exponentiated) per draw.
    pub fn plug_in_lambda(&self) -> Vec<f64> {
        self.plug_in.iter().map(|l| l.exp()).collect()
    }

    fn tally(&self, table: &StoppingTable, n: &[usize], log_lambda: &(dyn Fn(usize) -> f64 + Sync)) -> Tally {
        let t = table.n_analyses();
        let psi0 = table.psi0();
        let n_draws = table.n_draws();
        let chunk = 1024;
        (0..self.len())
            .into_par_iter()
            .chunks(chunk)
            .map(|idx| {
                let mut acc = Tally::new(t);
                let mut e = vec![0u64; t];
                let mut f = vec![0u64; t];
                for i in idx {
                    let delta = effect(self.psi[i], psi0, log_lambda(i).exp());
                    table.cumulative_efficacy_counts(delta, &mut e);
                    table.cumulative_futility_counts(delta, &mut f);
                    let mut size = 0u128;
                    let mut eff_size = 0u128;
                    for k in 0..t {
                        acc.eff_cum[k] += e[k];
                        acc.fut_cum[k] += f[k];
                        acc.eff_cum_sq[k] += (e[k] as u128).pow(2);
                        acc.fut_cum_sq[k] += (f[k] as u128).pow(2);
                        let prev_e = if k > 0 { e[k - 1] } else { 0 };
                        let prev_f = if k > 0 { f[k - 1] } else { 0 };
                        let stop_here = if k + 1 == t {
                            n_draws - prev_e - prev_f
                        } else {
                            e[k] - prev_e + f[k] - prev_f
                        };
                        size += stop_here as u128 * n[k] as u128;
                        eff_size += (e[k] - prev_e) as u128 * n[k] as u128;
                    }
                    acc.size += size;
                    acc.size_sq += size * size;
                    acc.eff_size += eff_size;
                    if self.psi[i] > psi0 {
                        acc.alt_miss += n_draws - e[t - 1];
                    } else {
                        acc.null_eff += e[t - 1];
                    }
                }
                acc
            })
            .reduce(
                || Tally::new(t),
                |mut a, b| {
                    a.add(&b);
                    a
                },
            )
    }

    fn summarize(&self, tally: &Tally, n_draws: u64) -> Summary {
        let k = self.len() as f64;
        let nd = n_draws as f64;
        let scale = k * nd;
        let se = |s: u64, sq: u128| sd_of_mean(s as f64 / nd, sq as f64 / (nd * nd), k);
        let t = tally.eff_cum.len();
        let total = self.len() as u64 * n_draws;
        let diff = |c: &[u64], j: usize| c[j] - if j > 0 { c[j - 1] } else { 0 };
        let ends_at = (0..t)
            .map(|j| {
                let c = if j + 1 == t {
                    total - if j > 0 { tally.eff_cum[j - 1] + tally.fut_cum[j - 1] } else { 0 }
                } else {
                    diff(&tally.eff_cum, j) + diff(&tally.fut_cum, j)
                };
                c as f64 / scale
            })
            .collect();
        Summary {
            eff_at: (0..t).map(|j| diff(&tally.eff_cum, j) as f64 / scale).collect(),
            fut_at: (0..t).map(|j| diff(&tally.fut_cum, j) as f64 / scale).collect(),
            ends_at,
            eff_cum: tally.eff_cum.iter().map(|&c| c as f64 / scale).collect(),
            fut_cum: tally.fut_cum.iter().map(|&c| c as f64 / scale).collect(),
            se_prior_eff: tally.eff_cum.iter().zip(&tally.eff_cum_sq).map(|(&s, &q)| se(s, q)).collect(),
            se_prior_fut: tally.fut_cum.iter().zip(&tally.fut_cum_sq).map(|(&s, &q)| se(s, q)).collect(),
            iess: tally.size as f64 / scale,
            se_prior_iess: sd_of_mean(tally.size as f64 / nd, tally.size_sq as f64 / (nd * nd), k),
            iess_efficacy_only: tally.eff_size as f64 / scale,
            false_positive: tally.null_eff as f64 / scale,
            false_negative: tally.alt_miss as f64 / scale,
        }
    }

    fn per_state_summaries(&self, table: &StoppingTable, design: &TrialDesign) -> Vec<Summary> {
        (0..self.n_states)
            .map(|s| {
                let tally = self.tally(table, &design.schedule, &|i| self.per_state[i * self.n_states + s]);
                self.summarize(&tally, table.n_draws())
            })
            .collect()
    }

    /// Assurance and related operating characteristics of `design`.
    pub fn assurance(
        &self,
        design: &TrialDesign,
        mvn: &MvnConfig,
        cost: Option<&CostSpec>,
        with_uncertainty: bool,
    ) -> Result<OcReport> {
        design.validate()?;
        if let Some(c) = cost {
            c.validate()?;
        }
        let table = StoppingTable::new(design, mvn)?;
        let plug = self.summarize(&self.tally(&table, &design.schedule, &|i| self.plug_in[i]), table.n_draws());
        let states = if with_uncertainty {
            if self.n_states < MIN_UNCERTAINTY_STATES {
                return Err(Error::InsufficientData(format!(
                    "{} posterior states; at least {MIN_UNCERTAINTY_STATES} required",
                    self.n_states
                )));
            }
            Some(self.per_state_summaries(&table, design))
        } else {
            None
        };
        let interval = |f: &dyn Fn(&Summary) -> f64| -> Option<Interval> {
            states
                .as_ref()
                .map(|ss| power_uncertainty(&ss.iter().map(f).collect::<Vec<_>>()).expect("enough states"))
        };

        let t = design.n_analyses();
        let nd = table.n_draws() as f64;
        let mvn_se = |p: f64| (p * (1.0 - p) / nd).max(0.0).sqrt();
        let mut analyses = Vec::with_capacity(t);
        for k in 0..t {
            let (eff_at, fut_at, ends_at) = (plug.eff_at[k], plug.fut_at[k], plug.ends_at[k]);
            analyses.push(AnalysisOc {
                analysis: k + 1,
                n: design.schedule[k],
                efficacy_threshold: design.efficacy[k],
                futility_threshold: design.futility_at(k),
                efficacy_at: eff_at,
                efficacy_cumulative: plug.eff_cum[k],
                futility_at: fut_at,
                futility_cumulative: plug.fut_cum[k],
                ends_at,
                se_efficacy_at: mvn_se(eff_at),
                se_efficacy_cumulative: plug.se_prior_eff[k].hypot(mvn_se(plug.eff_cum[k])),
                se_futility_cumulative: plug.se_prior_fut[k].hypot(mvn_se(plug.fut_cum[k])),
                interval_efficacy_at: interval(&|s: &Summary| s.eff_at[k]),
                interval_efficacy_cumulative: interval(&|s: &Summary| s.eff_cum[k]),
            });
        }
        let no_decision = plug.ends_at[t - 1] - plug.eff_at[t - 1] - plug.fut_at[t - 1];
        let iec = cost.map(|c| IecBreakdown::new(c, plug.false_positive, plug.false_negative, plug.iess));
        let interval_iec = cost.and_then(|c| {
            interval(&|s: &Summary| IecBreakdown::new(c, s.false_positive, s.false_negative, s.iess).total)
        });

        let mut warnings = Vec::new();
        if self.n_extrapolated > 0 {
            warnings.push(format!(
                "{} of {} prior draws lie outside the training box inflated by {}%; lambda is extrapolated there",
                self.n_extrapolated,
                self.len(),
                EXTRAPOLATION_MARGIN * 100.0
            ));
        }
        let mut report = OcReport {
            source: "bart-bvm".into(),
            design: design.label(),
            schedule: design.schedule.clone(),
            psi0: design.psi0,
            n_prior_draws: self.len(),
            n_mvn_draws: table.n_draws(),
            analyses,
            no_decision,
            iess: plug.iess,
            iess_efficacy_only: plug.iess_efficacy_only,
            se_iess: plug.se_prior_iess,
            interval_iess: interval(&|s: &Summary| s.iess),
            iec,
            interval_iec,
            cost: cost.copied(),
            n_extrapolated: self.n_extrapolated,
            warnings,
            flags: Vec::new(),
            reference_checks: Vec::new(),
        };
        attach_reference_checks(&mut report, design);
        Ok(report)
    }

    /// Cumulative efficacy at a single parameter point, once per BART state.
    pub fn stop_probs_per_state(
        predictor: &BartPosterior,
        theta: &ParameterPoint,
        psi_index: usize,
        design: &TrialDesign,
        mvn: &MvnConfig,
    ) -> Result<Vec<Vec<f64>>> {
        let table = StoppingTable::new(design, mvn)?;
        let psi = theta.values()[psi_index];
        Ok(predictor
            .draws_at(theta.values())?
            .into_iter()
            .map(|ll| table.counts_at(psi, ll.exp()).probs().cumulative_efficacy())
            .collect())
    }
}

/// Compare a report with its design's reference values and flag differences.
pub fn attach_reference_checks(report: &mut OcReport, design: &TrialDesign) {
    let Some(r) = &design.reference else {
        return;
    };
    for (k, (&computed, &reference)) in report
        .cumulative_efficacy()
        .iter()
        .zip(&r.cumulative_efficacy)
        .enumerate()
    {
        report.reference_checks.push(ReferenceCheck {
            quantity: "efficacy_cumulative".into(),
            analysis: Some(k + 1),
            computed,
            reference,
            within_tolerance: Some((computed - reference).abs() <= r.tolerance),
        });
    }
    if let Some(reference) = r.iess {
        report.reference_checks.push(ReferenceCheck {
            quantity: "iess".into(),
            analysis: None,
            computed: report.iess,
            reference,
            within_tolerance: None,
        });
        report.flags.push(format!(
            "iess-discrepancy: reference IESS {reference} vs computed {:.1} (all trials end by the last analysis); \
             the efficacy-only sum sum_t P(efficacy at t) n_t is {:.1}",
            report.iess, report.iess_efficacy_only
        ));
    }
    if let (Some(reference), Some(iec)) = (r.iec, report.iec) {
        report.reference_checks.push(ReferenceCheck {
            quantity: "iec".into(),
            analysis: None,
            computed: iec.total,
            reference,
            within_tolerance: None,
        });
        report.flags.push(format!(
            "iec-discrepancy: reference IEC {reference} vs computed {:.1}; the computed value uses the complete IESS",
            iec.total
        ));
    }
}

/// One grid value of an integrated power curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub psi: f64,
    pub efficacy_cumulative: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub design: String,
    pub schedule: Vec<usize>,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["design", "psi", "analysis", "n", "efficacy_cumulative", "se"])?;
        for p in &self.points {
            for (k, (v, se)) in p.efficacy_cumulative.iter().zip(&p.se).enumerate() {
                w.write_record([
                    self.design.clone(),
                    p.psi.to_string(),
                    (k + 1).to_string(),
                    self.schedule[k].to_string(),
                    v.to_string(),
                    se.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` equally spaced values spanning `center +/- half_width`.
pub fn default_grid(center: f64, half_width: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![center];
    }
    (0..n)
        .map(|i| center - half_width + 2.0 * half_width * i as f64 / (n - 1) as f64)
        .collect()
}

/// Cumulative efficacy integrated over the nuisance draws, at each `psi` in `grid`.
pub fn integrated_power_curve(
    grid: &[f64],
    design: &TrialDesign,
    nuisance_sample: &[ParameterPoint],
    psi_index: usize,
    predictor: &BartPosterior,
    mvn: &MvnConfig,
) -> Result<Curve> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("psi grid is empty".into()));
    }
    if let Some(g) = grid.iter().find(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter(format!("psi grid value {g} is not finite")));
    }
    if nuisance_sample.is_empty() {
        return Err(Error::InsufficientData("nuisance sample is empty".into()));
    }
    design.validate()?;
    let table = StoppingTable::new(design, mvn)?;
    let t = design.n_analyses();
    let k = nuisance_sample.len() as f64;
    let nd = table.n_draws() as f64;
    let points = grid
        .iter()
        .map(|&g| {
            let counts: Vec<Vec<u64>> = nuisance_sample
                .par_iter()
                .map(|theta| {
                    let mut x = theta.values().to_vec();
                    x[psi_index] = g;
                    let lambda = predictor.mean_at(&x)?.exp();
                    let mut e = vec![0u64; t];
                    table.cumulative_efficacy_counts(effect(g, design.psi0, lambda), &mut e);
                    Ok(e)
                })
                .collect::<Result<_>>()?;
            let mut efficacy_cumulative = Vec::with_capacity(t);
            let mut se = Vec::with_capacity(t);
            for a in 0..t {
                let s: u64 = counts.iter().map(|c| c[a]).sum();
                let sq: u128 = counts.iter().map(|c| (c[a] as u128).pow(2)).sum();
                let p = s as f64 / (k * nd);
                let prior_se = sd_of_mean(s as f64 / nd, sq as f64 / (nd * nd), k);
                efficacy_cumulative.push(p);
                se.push(prior_se.hypot((p * (1.0 - p) / nd).max(0.0).sqrt()));
            }
            Ok(CurvePoint {
                psi: g,
                efficacy_cumulative,
                se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve {
        design: design.label(),
        schedule: design.schedule.clone(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    MinIec,
    MinIessSubjectToAssurance { target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDesign {
    pub rank: usize,
    pub design: String,
    pub schedule: Vec<usize>,
    pub score: f64,
    pub assurance: f64,
    pub iess: f64,
    pub iec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub objective: Objective,
    pub ranked: Vec<RankedDesign>,
    pub diagnostic: Option<String>,
}

impl Ranking {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "design", "schedule", "score", "assurance", "iess", "iec"])?;
        for r in &self.ranked {
            w.write_record([
                r.rank.to_string(),
                r.design.clone(),
                r.schedule.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
                r.score.to_string(),
                r.assurance.to_string(),
                r.iess.to_string(),
                r.iec.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate every candidate on common random numbers and rank them.
pub fn optimize_design(
    evaluator: &Evaluator,
    candidates: &[TrialDesign],
    objective: Objective,
    cost: Option<&CostSpec>,
    mvn: &MvnConfig,
) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate designs".into()));
    }
    if let Objective::MinIessSubjectToAssurance { target } = objective {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::InvalidParameter(format!("assurance target {target} is not in (0, 1)")));
        }
    }
    if matches!(objective, Objective::MinIec) && cost.is_none() {
        return Err(Error::Config("minimizing IEC requires a cost specification".into()));
    }
    let mut rows = Vec::new();
    let mut best_assurance = f64::NEG_INFINITY;
    for d in candidates {
        let report = evaluator.assurance(d, mvn, cost, false)?;
        let assurance = report.final_assurance();
        best_assurance = best_assurance.max(assurance);
        let score = match objective {
            Objective::MinIec => report.iec_total().expect("cost given"),
            Objective::MinIessSubjectToAssurance { target } => {
                if assurance < target {
                    continue;
                }
                report.iess
            }
        };
        rows.push((d, RankedDesign {
            rank: 0,
            design: d.label(),
            schedule: d.schedule.clone(),
            score,
            assurance,
            iess: report.iess,
            iec: report.iec_total(),
        }));
    }
    rows.sort_by(|(da, a), (db, b)| {
        a.score
            .total_cmp(&b.score)
            .then(da.final_n().cmp(&db.final_n()))
            .then(da.n_analyses().cmp(&db.n_analyses()))
    });
    let diagnostic = match objective {
        Objective::MinIessSubjectToAssurance { target } if rows.is_empty() => Some(format!(
            "no candidate reaches assurance {target}; the best final assurance is {best_assurance:.4}"
        )),
        _ => None,
    };
    Ok(Ranking {
        objective,
        ranked: rows
            .into_iter()
            .enumerate()
            .map(|(i, (_, mut r))| {
                r.rank = i + 1;
                r
            })
            .collect(),
        diagnostic,
    })
}
