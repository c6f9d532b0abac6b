//! Monte Carlo experiment harness: JSON configuration, seeded campaign
//! execution over a (log L, gamma, beta) grid, and CSV emission.
//!
//! Campaigns are deterministic: trial seeds derive from the master seed and
//! the (cell, trial) indices, trials run in parallel, and rows are sorted
//! before emission so thread scheduling never changes the output bytes.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{ExpFamilyModel, FamilyKind, ParamVec};
use crate::hypotheses::{HypothesisKind, HypothesisStructure, NaturalParamVector};
use crate::oracle::{lower_bound_delay, optimal_weights, OracleResult};
use crate::policy::{run_trial, PolicyConfig, SwitchCost, TrialRecord};

/// Family description as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FamilySpec {
    GaussianKnownVariance { sigma2: f64 },
    GaussianKnownMean { mu: f64 },
    GaussianBothUnknown,
    Poisson,
    Bernoulli,
}

impl FamilySpec {
    pub fn build(&self) -> Result<ExpFamilyModel> {
        let kind = match *self {
            FamilySpec::GaussianKnownVariance { sigma2 } => FamilyKind::GaussianKnownVariance { sigma2 },
            FamilySpec::GaussianKnownMean { mu } => FamilyKind::GaussianKnownMean { mu },
            FamilySpec::GaussianBothUnknown => FamilyKind::GaussianBothUnknown,
            FamilySpec::Poisson => FamilyKind::Poisson,
            FamilySpec::Bernoulli => FamilyKind::Bernoulli,
        };
        ExpFamilyModel::new(kind)
    }
}

/// Hypothesis structure plus the true arm configuration.
///
/// Parameters are given in natural coordinates (for the Gaussian variants:
/// `mu/sigma2`, `-1/(2 sigma2)`, or the pair).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureSpec {
    OddArm {
        arm_count: usize,
        family: FamilySpec,
        /// 0-based index of the odd arm in the true configuration.
        odd_arm: usize,
        odd_param: Vec<f64>,
        common_param: Vec<f64>,
    },
    BestArm {
        family: FamilySpec,
        direction: f64,
        /// Per-arm true natural parameters.
        arm_params: Vec<Vec<f64>>,
    },
}

impl StructureSpec {
    pub fn build(&self) -> Result<(HypothesisStructure, NaturalParamVector)> {
        match self {
            StructureSpec::OddArm { arm_count, family, odd_arm, odd_param, common_param } => {
                let model = family.build()?;
                let structure = HypothesisStructure::new(HypothesisKind::OddArm, *arm_count, model)?;
                if *odd_arm >= *arm_count {
                    return Err(Error::Config(format!("odd_arm index {odd_arm} out of range")));
                }
                let odd = ParamVec::from_slice(odd_param)?;
                let common = ParamVec::from_slice(common_param)?;
                let truth = NaturalParamVector::new(
                    (0..*arm_count).map(|i| if i == *odd_arm { odd } else { common }).collect(),
                );
                validate_truth(&structure, &truth)?;
                Ok((structure, truth))
            }
            StructureSpec::BestArm { family, direction, arm_params } => {
                let model = family.build()?;
                let structure =
                    HypothesisStructure::new(HypothesisKind::BestArm { direction: *direction }, arm_params.len(), model)?;
                let truth = NaturalParamVector::new(
                    arm_params.iter().map(|p| ParamVec::from_slice(p)).collect::<Result<_>>()?,
                );
                validate_truth(&structure, &truth)?;
                Ok((structure, truth))
            }
        }
    }
}

fn validate_truth(structure: &HypothesisStructure, truth: &NaturalParamVector) -> Result<()> {
    let l = (0..structure.hypothesis_count()).find(|&l| structure.contains(truth, l));
    match l {
        Some(_) => Ok(()),
        None => Err(Error::Config("true configuration lies in no hypothesis set".into())),
    }
}

/// Grid of policy parameters swept by a campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub log_l: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Prior hyperparameters; the only config section with defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(default = "default_n0")]
    pub n0: f64,
    /// Reference expectation parameter; family default when absent.
    #[serde(default)]
    pub kappa_ref: Option<Vec<f64>>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { n0: default_n0(), kappa_ref: None }
    }
}

fn default_n0() -> f64 {
    1.0
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub structure: StructureSpec,
    pub grid: GridSpec,
    pub trials: u32,
    pub master_seed: u64,
    /// Uniform off-diagonal switching cost.
    pub switch_cost: f64,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub trace: bool,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.grid.log_l.is_empty() || self.grid.gamma.is_empty() || self.grid.beta.is_empty() {
            return Err(Error::Config("grid must list at least one logL, gamma and beta".into()));
        }
        for &x in &self.grid.log_l {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::Config(format!("logL values must be nonnegative, got {x}")));
            }
        }
        for &g in &self.grid.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("gamma values must lie in (0, 1], got {g}")));
            }
        }
        for &b in &self.grid.beta {
            if !(b >= 0.5 && b < 1.0) {
                return Err(Error::Config(format!("beta values must lie in [1/2, 1), got {b}")));
            }
        }
        if !(self.switch_cost >= 0.0) || !self.switch_cost.is_finite() {
            return Err(Error::Config("switch_cost must be nonnegative".into()));
        }
        if !(self.prior.n0 > 0.0) {
            return Err(Error::Config("prior n0 must be positive".into()));
        }
        self.structure.build()?;
        Ok(())
    }

    pub fn prior_kappa_ref(&self) -> Result<Option<ParamVec>> {
        self.prior.kappa_ref.as_ref().map(|v| ParamVec::from_slice(v)).transpose()
    }

    /// Policy configuration for one grid cell.
    pub fn policy_for(&self, log_l: f64, gamma: f64, beta: f64, arm_count: usize) -> Result<PolicyConfig> {
        Ok(PolicyConfig {
            threshold: log_l.exp(),
            gamma,
            beta,
            switch_cost: SwitchCost::uniform(arm_count, self.switch_cost)?,
            seed: self.master_seed,
            prior_n0: self.prior.n0,
            prior_kappa_ref: self.prior_kappa_ref()?,
            horizon_cap: None,
            record_arms: false,
        })
    }

    /// Oracle solve at the true configuration.
    pub fn oracle(&self) -> Result<OracleResult> {
        let (structure, truth) = self.structure.build()?;
        let l = (0..structure.hypothesis_count())
            .find(|&l| structure.contains(&truth, l))
            .expect("validated configuration");
        optimal_weights(&structure, l, &truth)
    }
}

/// Aggregated outcome of one (logL, gamma, beta) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub log_l: f64,
    pub gamma: f64,
    pub beta: f64,
    pub mean_tau: f64,
    pub se_tau: f64,
    pub mean_cost: f64,
    pub se_cost: f64,
    pub err_rate: f64,
    pub lower_bound: f64,
    pub censored: u32,
    pub trials_used: u32,
    /// Total exploration-floor violations across the cell's trials (always
    /// zero when the sampling rule is implemented correctly).
    pub floor_violations: u64,
}

/// splitmix64, used to derive independent per-trial seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn trial_seed(master: u64, cell: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master ^ cell.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ trial)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run the full campaign: every grid cell, `trials` trials each, aggregated
/// into [`CellSummary`] rows sorted by (beta, gamma, logL).
pub fn run_campaign(config: &ExperimentConfig) -> Result<Vec<CellSummary>> {
    config.validate()?;
    let (structure, truth) = config.structure.build()?;
    let d_star = config.oracle()?.d_star;

    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    for &beta in &config.grid.beta {
        for &gamma in &config.grid.gamma {
            for &log_l in &config.grid.log_l {
                cells.push((beta, gamma, log_l));
            }
        }
    }

    let mut summaries = Vec::with_capacity(cells.len());
    for (cell_idx, &(beta, gamma, log_l)) in cells.iter().enumerate() {
        let policy = config.policy_for(log_l, gamma, beta, structure.arm_count())?;
        let results: Vec<Result<TrialRecord>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(config.master_seed, cell_idx as u64, t as u64);
                run_trial(&policy, &structure, &truth, seed)
            })
            .collect();

        let mut taus = Vec::new();
        let mut costs = Vec::new();
        let mut errors = 0u32;
        let mut censored = 0u32;
        let mut floor_violations = 0u64;
        for r in results {
            match r {
                Ok(rec) => {
                    taus.push(rec.tau as f64);
                    costs.push(rec.cost);
                    floor_violations += rec.floor_violations;
                    if !rec.correct {
                        errors += 1;
                    }
                }
                Err(Error::Censored { cap }) => {
                    censored += 1;
                    eprintln!(
                        "warning: censored trial (cap {cap}) in cell logL={log_l} gamma={gamma} beta={beta}; excluded from averages"
                    );
                }
                Err(e) => return Err(e),
            }
        }
        let (mean_tau, se_tau) = mean_and_se(&taus);
        let (mean_cost, se_cost) = mean_and_se(&costs);
        let trials_used = taus.len() as u32;
        // The Prop-1 bound needs alpha = e^-logL < 1; at logL = 0 the
        // binary relative entropy degenerates and the bound is zero.
        let lower_bound = if log_l > 0.0 { lower_bound_delay((-log_l).exp(), d_star)? } else { 0.0 };
        summaries.push(CellSummary {
            log_l,
            gamma,
            beta,
            mean_tau,
            se_tau,
            mean_cost,
            se_cost,
            err_rate: if trials_used > 0 { errors as f64 / trials_used as f64 } else { f64::NAN },
            lower_bound,
            censored,
            trials_used,
            floor_violations,
        });
    }
    summaries.sort_by(|a, b| {
        (a.beta, a.gamma, a.log_l)
            .partial_cmp(&(b.beta, b.gamma, b.log_l))
            .expect("finite grid values")
    });
    Ok(summaries)
}

pub const CSV_HEADER: &str = "logL,gamma,beta,mean_tau,se_tau,mean_cost,se_cost,err_rate,lower_bound";

/// Serialise summaries to CSV: header plus one row per cell, shortest-exact
/// float formatting (round-trips through parsing).
pub fn csv_string(summaries: &[CellSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.log_l, s.gamma, s.beta, s.mean_tau, s.se_tau, s.mean_cost, s.se_cost, s.err_rate, s.lower_bound
        ));
    }
    out
}

pub fn emit_csv(summaries: &[CellSummary], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(csv_string(summaries).as_bytes())?;
    Ok(())
}

/// Parse a CSV produced by [`emit_csv`] back into summaries (censored and
/// trial counts are not part of the wire format).
pub fn parse_csv(text: &str) -> Result<Vec<CellSummary>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Config(format!("unexpected CSV header: {other:?}"))),
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Config(format!("expected 9 columns, got {}", fields.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
        };
        out.push(CellSummary {
            log_l: parse(fields[0])?,
            gamma: parse(fields[1])?,
            beta: parse(fields[2])?,
            mean_tau: parse(fields[3])?,
            se_tau: parse(fields[4])?,
            mean_cost: parse(fields[5])?,
            se_cost: parse(fields[6])?,
            err_rate: parse(fields[7])?,
            lower_bound: parse(fields[8])?,
            censored: 0,
            trials_used: 0,
            floor_violations: 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            structure: StructureSpec::OddArm {
                arm_count: 3,
                family: FamilySpec::GaussianKnownVariance { sigma2: 1.0 },
                odd_arm: 0,
                odd_param: vec![0.0],
                common_param: vec![1.0],
            },
            grid: GridSpec { log_l: vec![1.0, 2.0], gamma: vec![0.5], beta: vec![0.6] },
            trials: 20,
            master_seed: 7,
            switch_cost: 1.0,
            prior: PriorSpec::default(),
            trace: false,
        }
    }

    #[test]
    fn empty_summary_emits_header_only() {
        let s = csv_string(&[]);
        assert_eq!(s, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trips() {
        let cfg = small_config();
        let summaries = run_campaign(&cfg).unwrap();
        let text = csv_string(&summaries);
        for line in text.lines() {
            assert_eq!(line.split(',').count(), 9);
        }
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed.len(), summaries.len());
        for (a, b) in parsed.iter().zip(&summaries) {
            assert_eq!(a.mean_tau, b.mean_tau);
            assert_eq!(a.lower_bound, b.lower_bound);
            assert_eq!(a.err_rate, b.err_rate);
        }
    }

    #[test]
    fn campaign_is_deterministic() {
        let cfg = small_config();
        let a = csv_string(&run_campaign(&cfg).unwrap());
        let b = csv_string(&run_campaign(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn serial_pool_matches_parallel_output() {
        let cfg = small_config();
        let parallel = csv_string(&run_campaign(&cfg).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| csv_string(&run_campaign(&cfg).unwrap()));
        assert_eq!(parallel, serial);
    }

    #[test]
    fn single_trial_cell_is_reproducible() {
        let mut cfg = small_config();
        cfg.trials = 1;
        cfg.grid.log_l = vec![1.0];
        let a = run_campaign(&cfg).unwrap();
        let b = run_campaign(&cfg).unwrap();
        assert_eq!(a[0].mean_tau, b[0].mean_tau);
        assert_eq!(a[0].se_tau, 0.0);
    }

    #[test]
    fn cost_and_error_columns_respect_bounds() {
        let cfg = small_config();
        for cell in run_campaign(&cfg).unwrap() {
            assert!(cell.mean_cost >= cell.mean_tau);
            let bound = (1.0 + 1.0 * cell.gamma) * cell.mean_tau
                + 3.0 * (cell.se_cost + (1.0 + cell.gamma) * cell.se_tau);
            assert!(cell.mean_cost <= bound, "mean cost {} vs bound {bound}", cell.mean_cost);
            let se_err = (cell.err_rate * (1.0 - cell.err_rate) / cell.trials_used as f64)
                .sqrt()
                .max(1.0 / cell.trials_used as f64);
            assert!(cell.err_rate <= (-cell.log_l).exp() + 3.0 * se_err);
        }
    }

    #[test]
    fn rows_are_sorted_by_beta_gamma_logl() {
        let mut cfg = small_config();
        cfg.grid = GridSpec { log_l: vec![2.0, 1.0], gamma: vec![1.0, 0.5], beta: vec![0.75, 0.6] };
        cfg.trials = 2;
        let rows = run_campaign(&cfg).unwrap();
        let keys: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.beta, r.gamma, r.log_l)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, sorted);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut cfg = small_config();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.grid.gamma = vec![0.0];
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.structure = StructureSpec::OddArm {
            arm_count: 3,
            family: FamilySpec::GaussianKnownVariance { sigma2: 1.0 },
            odd_arm: 0,
            odd_param: vec![1.0],
            common_param: vec![1.0], // not odd: in no hypothesis set
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        let dir = std::env::temp_dir().join("banditest_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(ExperimentConfig::from_path(&path).is_err());
    }
}
