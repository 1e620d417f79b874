//! Heavy-traffic sweeps over `N` with scaling fits and reference bounds.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{log_log_fit, LinearFit};
use crate::error::{Error, Result};
use crate::model::{CoxianParams, HeavyTraffic, SystemConfig};
use crate::policy::PolicyKind;
use crate::sim::{run, Estimate, SimConfig, SimReport};
use crate::stein::{corollary_bounds, DerivedConstants};

pub const MIN_FIT_POINTS: usize = 4;
/// Horizon floor numerator: each point runs at least `200 / (1 - lambda)`.
pub const HORIZON_SCALE: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_grid: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub b: usize,
    pub coxian: CoxianParams,
    pub policies: Vec<PolicyKind>,
    /// Template; the horizon is raised per point and the seed is derived per `N`.
    pub sim: SimConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let ht = HeavyTraffic::new(self.alpha, self.beta).map_err(|e| Error::Config(e.to_string()))?;
        if self.n_grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep grid must be strictly increasing".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("sweep needs at least one policy".into()));
        }
        for &n in &self.n_grid {
            let lambda = ht.lambda(n);
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::Config(format!("lambda = {lambda} at N = {n} is outside (0, 1)")));
            }
            for p in &self.policies {
                p.validate(n).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        self.sim.validate()
    }

    pub fn heavy_traffic(&self) -> HeavyTraffic {
        HeavyTraffic { alpha: self.alpha, beta: self.beta }
    }

    /// Simulation settings at one grid point.
    pub fn point_sim(&self, n: usize) -> SimConfig {
        let lambda = self.heavy_traffic().lambda(n);
        let horizon = self.sim.horizon.max(HORIZON_SCALE / (1.0 - lambda));
        let warmup_fraction = self.sim.warmup() / self.sim.horizon;
        SimConfig {
            horizon,
            warmup: Some(warmup_fraction * horizon),
            seed: point_seed(self.sim.seed, n),
            ..self.sim.clone()
        }
    }
}

/// Mixes the base seed with `N` (SplitMix64 finalizer).
pub fn point_seed(base: u64, n: usize) -> u64 {
    let mut z = base ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub n: usize,
    pub lambda: f64,
    pub policy: String,
    pub d: Option<usize>,
    pub p_wait: Estimate,
    pub p_block: Estimate,
    pub mean_total: Estimate,
    pub excess_mean: Option<Estimate>,
    pub eta: f64,
    /// `7 mu_max / (sqrt N log N)`.
    pub theorem_bound: f64,
    pub theorem_applicable: bool,
    /// Waiting-probability bound for the row's policy.
    pub corollary_bound: f64,
    pub corollary_applicable: bool,
    pub corollary_e_w_bound: f64,
    pub corollary_p_block_bound: Option<f64>,
    pub events: u64,
    pub seed: u64,
    pub horizon: f64,
    pub insufficient_data: bool,
    pub wall_clock: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 28] = [
    "n",
    "lambda",
    "policy",
    "d",
    "p_wait",
    "p_wait_ci95",
    "p_wait_ci99",
    "p_wait_zero_upper",
    "p_block",
    "p_block_ci95",
    "p_block_ci99",
    "mean_total",
    "mean_total_ci95",
    "mean_total_ci99",
    "excess_mean",
    "excess_mean_ci95",
    "excess_mean_ci99",
    "eta",
    "theorem_bound",
    "theorem_applicable",
    "corollary_bound",
    "corollary_applicable",
    "corollary_e_w_bound",
    "corollary_p_block_bound",
    "events",
    "seed",
    "insufficient_data",
    "wall_clock",
];

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

impl OutputRecord {
    pub fn build(cfg: &SystemConfig, sim: &SimConfig, report: &SimReport) -> Result<Self> {
        let c = DerivedConstants::from_config(cfg)?;
        let cor = corollary_bounds(&c, cfg)?;
        let (corollary_bound, corollary_applicable) = cor.p_wait_bound(&cfg.policy);
        Ok(Self {
            n: cfg.n,
            lambda: cfg.lambda,
            policy: cfg.policy.name().into(),
            d: cfg.policy.d(),
            p_wait: report.p_wait,
            p_block: report.p_block,
            mean_total: report.mean_total,
            excess_mean: report.excess_mean,
            eta: c.eta,
            theorem_bound: c.theorem_bound(),
            theorem_applicable: cor.n_condition,
            corollary_bound,
            corollary_applicable,
            corollary_e_w_bound: cor.e_w_bound,
            corollary_p_block_bound: cor.p_block_bound(&cfg.policy),
            events: report.events,
            seed: sim.seed,
            horizon: sim.horizon,
            insufficient_data: report.insufficient_data,
            wall_clock: report.wall_clock_seconds,
        })
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let est = |e: &Estimate| [fmt_num(e.mean), fmt_num(e.ci95), fmt_num(e.ci99)];
        let [pw, pw95, pw99] = est(&self.p_wait);
        let [pb, pb95, pb99] = est(&self.p_block);
        let [mt, mt95, mt99] = est(&self.mean_total);
        let [ex, ex95, ex99] = match &self.excess_mean {
            Some(e) => est(e),
            None => Default::default(),
        };
        vec![
            self.n.to_string(),
            fmt_num(self.lambda),
            self.policy.clone(),
            self.d.map(|d| d.to_string()).unwrap_or_default(),
            pw,
            pw95,
            pw99,
            fmt_opt(self.p_wait.zero_count_upper),
            pb,
            pb95,
            pb99,
            mt,
            mt95,
            mt99,
            ex,
            ex95,
            ex99,
            fmt_num(self.eta),
            fmt_num(self.theorem_bound),
            self.theorem_applicable.to_string(),
            fmt_num(self.corollary_bound),
            self.corollary_applicable.to_string(),
            fmt_num(self.corollary_e_w_bound),
            fmt_opt(self.corollary_p_block_bound),
            self.events.to_string(),
            self.seed.to_string(),
            self.insufficient_data.to_string(),
            fmt_opt(self.wall_clock),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub policy: String,
    pub d: Option<usize>,
    /// `p_wait` or `excess_mean`.
    pub quantity: String,
    /// Description of the regressor, e.g. `log N / sqrt N`.
    pub regressor: String,
    pub usable_points: usize,
    pub fit: Option<LinearFit>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub policy: String,
    pub n: usize,
    pub excess_mean: Option<f64>,
    pub theorem_bound: f64,
    pub within_bound: Option<bool>,
    pub theorem_applicable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<OutputRecord>,
    pub fits: Vec<FitSummary>,
    /// Measured excess against the theorem bound at the largest `N`, per policy.
    pub largest_point: Vec<BoundComparison>,
    pub fit_self_test_slope: Option<f64>,
}

fn usable(rows: &[&OutputRecord], value: impl Fn(&OutputRecord) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter(|r| !r.insufficient_data)
        .filter_map(|r| value(r).filter(|v| v.is_finite() && *v > 0.0).map(|v| (r.n as f64, v)))
        .unzip()
}

fn fit_rows(rows: &[&OutputRecord], quantity: &str, regressor: &str, x_of: impl Fn(f64) -> f64, value: impl Fn(&OutputRecord) -> Option<f64>) -> FitSummary {
    let (ns, ys) = usable(rows, value);
    let first = rows[0];
    let mut s = FitSummary {
        policy: first.policy.clone(),
        d: first.d,
        quantity: quantity.into(),
        regressor: regressor.into(),
        usable_points: ns.len(),
        fit: None,
        skipped: None,
    };
    if ns.len() < MIN_FIT_POINTS {
        s.skipped = Some(format!("{} usable points, need {MIN_FIT_POINTS}", ns.len()));
        return s;
    }
    let xs: Vec<f64> = ns.iter().map(|&n| x_of(n)).collect();
    s.fit = log_log_fit(&xs, &ys);
    if s.fit.is_none() {
        s.skipped = Some("regressor has no spread".into());
    }
    s
}

/// Fits `log p_wait` and `log excess_mean` against the predicted scales.
pub fn sweep_fits(rows: &[OutputRecord], alpha: f64) -> Vec<FitSummary> {
    let mut out = Vec::new();
    let mut groups: Vec<Vec<&OutputRecord>> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g[0].policy == r.policy && g[0].d == r.d) {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    for g in &groups {
        let jiq_like = matches!(g[0].policy.as_str(), "jiq" | "i1f");
        if jiq_like {
            out.push(fit_rows(g, "p_wait", "1 / (N^(0.5 - alpha) log N)", |n| 1.0 / (n.powf(0.5 - alpha) * n.ln()), |r| Some(r.p_wait.mean)));
        } else {
            out.push(fit_rows(g, "p_wait", "log N / sqrt N", |n| n.ln() / n.sqrt(), |r| Some(r.p_wait.mean)));
        }
        out.push(fit_rows(g, "excess_mean", "1 / (sqrt N log N)", |n| 1.0 / (n.sqrt() * n.ln()), |r| {
            r.excess_mean.map(|e| e.mean)
        }));
    }
    out
}

/// Runs every `(policy, N)` point concurrently; rows come back in grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let ht = spec.heavy_traffic();
    let points: Vec<(PolicyKind, usize)> =
        spec.policies.iter().flat_map(|p| spec.n_grid.iter().map(move |&n| (*p, n))).collect();
    let rows = points
        .par_iter()
        .map(|&(policy, n)| {
            let cfg = SystemConfig::with_heavy_traffic(n, spec.b, ht, spec.coxian, policy)?;
            let sim = spec.point_sim(n);
            let report = run(&cfg, &sim)?;
            OutputRecord::build(&cfg, &sim, &report)
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = sweep_fits(&rows, spec.alpha);
    let largest = *spec.n_grid.last().expect("validated");
    let largest_point = rows
        .iter()
        .filter(|r| r.n == largest)
        .map(|r| BoundComparison {
            policy: r.policy.clone(),
            n: r.n,
            excess_mean: r.excess_mean.map(|e| e.mean),
            theorem_bound: r.theorem_bound,
            within_bound: r.excess_mean.map(|e| e.mean <= r.theorem_bound),
            theorem_applicable: r.theorem_applicable,
        })
        .collect();
    Ok(SweepResult { rows, fits, largest_point, fit_self_test_slope: super::fit::self_test_slope(&spec.n_grid, 1.0) })
}

impl SweepResult {
    pub fn strip_timing(&mut self) {
        self.rows.iter_mut().for_each(|r| r.wall_clock = None);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.csv_fields())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whether `values` never rise by more than the two adjacent 95% half-widths.
pub fn nonincreasing_up_to_ci(values: &[Estimate]) -> bool {
    values.windows(2).all(|w| w[1].mean <= w[0].mean + w[0].ci95 + w[1].ci95)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(grid: Vec<usize>) -> SweepSpec {
        SweepSpec {
            n_grid: grid,
            alpha: 0.3,
            beta: 1.0,
            b: 3,
            coxian: CoxianParams::new(2.0, 1.0, 0.5).unwrap(),
            policies: vec![PolicyKind::Jsq],
            sim: SimConfig::new(50.0, 11).with_batches(10),
        }
    }

    #[test]
    fn validation() {
        assert!(spec(vec![10, 10]).validate().is_err());
        assert!(spec(vec![20, 10]).validate().is_err());
        let mut s = spec(vec![10]);
        s.alpha = 0.6;
        assert!(s.validate().is_err());
    }

    #[test]
    fn horizon_floor_and_seeds() {
        let s = spec(vec![100]);
        let p = s.point_sim(100);
        let lambda = 1.0 - 100f64.powf(-0.3);
        assert!((p.horizon - 200.0 / (1.0 - lambda)).abs() < 1e-9);
        assert!((p.warmup() - 0.2 * p.horizon).abs() < 1e-9);
        assert_ne!(point_seed(11, 100), point_seed(11, 200));
        assert_eq!(point_seed(11, 100), p.seed);
    }

    #[test]
    fn single_point_grid_skips_fit() {
        let r = run_sweep(&spec(vec![8])).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.fits.iter().all(|f| f.fit.is_none() && f.skipped.is_some()));
        let n = 8f64;
        assert!((r.rows[0].theorem_bound - 14.0 / (n.sqrt() * n.ln())).abs() < 1e-15);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let mut r = run_sweep(&spec(vec![8, 16])).unwrap();
        r.strip_timing();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), CSV_COLUMNS.len());
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
    }

    #[test]
    fn monotone_with_overlap() {
        let e = |m: f64, w: f64| Estimate { mean: m, ci95: w, ci99: w, zero_count_upper: None };
        assert!(nonincreasing_up_to_ci(&[e(0.5, 0.01), e(0.505, 0.01), e(0.2, 0.01)]));
        assert!(!nonincreasing_up_to_ci(&[e(0.5, 0.01), e(0.6, 0.01)]));
    }
}
