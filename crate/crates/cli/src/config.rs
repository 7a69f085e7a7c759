//! Experiment configuration: one TOML file, one section per experiment.
//! Every field has a default, so an empty file (or none) is a valid config.

use std::path::{Path, PathBuf};

use rotor_core::dynamics::{ModelParams, Scheme, State};
use rotor_core::lyapunov::LyapunovParams;
use rotor_core::potential::PeriodicPotential;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it. Default 20170901.
    pub seed: u64,
    /// Where CSVs, summaries and the manifest go. Default `out`.
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core. Default 0.
    pub threads: usize,
    pub model: ModelSection,
    pub lyapunov: LyapunovSection,
    pub integrator: IntegratorSection,
    pub simulate: SimulateSection,
    pub gibbs_sample: GibbsSampleSection,
    pub order_check: OrderCheckSection,
    pub drift_certify: DriftCertifySection,
    pub nonintegrability: NonintegrabilitySection,
    pub tv_curve: TvCurveSection,
    pub escape_times: EscapeTimesSection,
    pub rate_fit: RateFitSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20_170_901,
            output_dir: PathBuf::from("out"),
            threads: 0,
            model: Default::default(),
            lyapunov: Default::default(),
            integrator: Default::default(),
            simulate: Default::default(),
            gibbs_sample: Default::default(),
            order_check: Default::default(),
            drift_certify: Default::default(),
            nonintegrability: Default::default(),
            tv_curve: Default::default(),
            escape_times: Default::default(),
            rate_fit: Default::default(),
        }
    }
}

/// `W(s) = sum_k a_k cos(k s) + b_k sin(k s)`, `k = 1, 2, ...`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Friction of the bath on rotor 1. Default 1.
    pub gamma: f64,
    /// Bath temperature. Default 1.
    pub temperature: f64,
    /// Cosine coefficients `a_1, a_2, ...`. Default `[-1]`.
    pub cosine: Vec<f64>,
    /// Sine coefficients `b_1, b_2, ...`. Default `[]`.
    pub sine: Vec<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            temperature: 1.0,
            cosine: vec![-1.0],
            sine: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    /// Default 0.9.
    pub beta_minus: f64,
    /// Default 1.1.
    pub beta_plus: f64,
    /// Cone width. Default 0.5.
    pub delta: f64,
    /// `A` in `phi(s) = A s / (2 + log s)`. Default 1.
    pub drift_constant: f64,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            beta_minus: 0.9,
            beta_plus: 1.1,
            delta: 0.5,
            drift_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    /// Default 1e-3.
    pub dt: f64,
    /// `splitting` (default) or `euler-maruyama`.
    pub scheme: Scheme,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Splitting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// `[q1, q2, p1, p2]`. Default `[0, 0, 0, 30]`.
    pub x0: [f64; 4],
    /// Default 100000.
    pub n_steps: u64,
    /// Rows written every `stride` steps. Default 100.
    pub stride: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            x0: [0.0, 0.0, 0.0, 30.0],
            n_steps: 100_000,
            stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsSampleSection {
    /// Default 100000.
    pub n: usize,
    /// `log w` values for the tail table of `F` under `pi`.
    /// Default `[1, 10, 100, 1e3, 1e4, 1e5, 1e6, 1e7]`.
    pub tail_log_w: Vec<f64>,
    /// Importance samples per threshold. Default 20000.
    pub n_tail: usize,
}

impl Default for GibbsSampleSection {
    fn default() -> Self {
        Self {
            n: 100_000,
            tail_log_w: vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6, 1e7],
            n_tail: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderCheckSection {
    /// Ray slopes `p1 = lambda p2`; empty means `0, +-0.3, +-0.6/(1+delta)`.
    pub rays: Vec<f64>,
    /// Momentum magnitudes. Default `2^4 .. 2^12`.
    pub magnitudes: Vec<f64>,
    /// Angle pairs per magnitude. Default 128.
    pub n_angles: usize,
}

impl Default for OrderCheckSection {
    fn default() -> Self {
        Self {
            rays: vec![],
            magnitudes: rotor_core::averaging::default_magnitudes(),
            n_angles: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftCertifySection {
    /// Largest sampled momentum norm. Default 1e3.
    pub momentum_cap: f64,
    /// Stratified states, 25% per region. Default 1e5.
    pub n_samples: usize,
    /// Fraction checked against finite differences. Default 0.01.
    pub audit_fraction: f64,
    /// States from `Omega2 u Omega3` for the Lemma constants. Default 1e5.
    pub lemma_samples: usize,
    /// Best samples refined by local search for the Lemma constants. Default 8.
    pub refine_top: usize,
    /// Write every evaluated state to `drift_samples.csv`. Default true.
    pub write_samples: bool,
}

impl Default for DriftCertifySection {
    fn default() -> Self {
        Self {
            momentum_cap: 1e3,
            n_samples: 100_000,
            audit_fraction: 0.01,
            lemma_samples: 100_000,
            refine_top: 8,
            write_samples: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonintegrabilitySection {
    /// Default `[0.01, 0.05, 0.1, 0.3, 0.5]`.
    pub epsilons: Vec<f64>,
    /// Truncation radii in `|p2|`. Default `[10, 20, 40, 80, 160, 320]`.
    pub radii: Vec<f64>,
    /// Default 32.
    pub gap_nodes: usize,
    /// Default 10.
    pub p1_order: usize,
    /// Default 0.25.
    pub p2_panel: f64,
    /// Default 8.
    pub p2_order: usize,
}

impl Default for NonintegrabilitySection {
    fn default() -> Self {
        let q = rotor_core::gibbs::StripQuadrature::default();
        Self {
            epsilons: rotor_core::gibbs::DEFAULT_EPSILONS.to_vec(),
            radii: rotor_core::gibbs::DEFAULT_RADII.to_vec(),
            gap_nodes: q.gap_nodes,
            p1_order: q.p1_order,
            p2_panel: q.p2_panel,
            p2_order: q.p2_order,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Point,
    Gibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvCurveSection {
    /// `point` (start at `x0`, default) or `gibbs` (start from `pi`).
    pub initial: InitialKind,
    /// Default `[0, 0, 0, 30]`.
    pub x0: [f64; 4],
    /// First nonzero time; times are `0, t0, 2 t0, 4 t0, ...`. Default 1.
    pub t0: f64,
    /// Number of doublings after `t0`. Default 20.
    pub n_times: usize,
    /// Default 1000.
    pub n_traj: usize,
    /// Thresholds. Default 40.
    pub n_w: usize,
    /// `pi` draws for the threshold quantiles. Default 200000.
    pub n_pi_quantile: usize,
    /// Importance samples per threshold. Default 20000.
    pub n_pi_tail: usize,
    /// Bootstrap resamples. Default 200.
    pub bootstrap: usize,
}

impl Default for TvCurveSection {
    fn default() -> Self {
        Self {
            initial: InitialKind::Point,
            x0: [0.0, 0.0, 0.0, 30.0],
            t0: 1.0,
            n_times: 20,
            n_traj: 1000,
            n_w: 40,
            n_pi_quantile: 200_000,
            n_pi_tail: 20_000,
            bootstrap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscapeTimesSection {
    /// Initial `p2`. Default `[8, 16, 32, 64]`.
    pub momenta: Vec<f64>,
    /// Default 1.
    pub energy_floor: f64,
    /// Default 1000.
    pub n_traj: usize,
    /// Steps before a trajectory is censored. Default 1e9.
    pub budget_steps: u64,
}

impl Default for EscapeTimesSection {
    fn default() -> Self {
        Self {
            momenta: vec![8.0, 16.0, 32.0, 64.0],
            energy_floor: 1.0,
            n_traj: 1000,
            budget_steps: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    /// `lb_curve.csv` in the output directory (or `input`).
    LbCurve,
    /// `exp(-c t^alpha)` with multiplicative noise, for checking the fitter.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateFitSection {
    /// Default `lb-curve`.
    pub source: RateSource,
    /// Curve to fit; empty means `<output_dir>/lb_curve.csv`.
    pub input: PathBuf,
    /// Synthetic `c`. Default 2.
    pub synthetic_c: f64,
    /// Synthetic `alpha`. Default 0.5.
    pub synthetic_alpha: f64,
    /// Synthetic relative noise. Default 0.01.
    pub synthetic_noise: f64,
}

impl Default for RateFitSection {
    fn default() -> Self {
        Self {
            source: RateSource::LbCurve,
            input: PathBuf::new(),
            synthetic_c: 2.0,
            synthetic_alpha: 0.5,
            synthetic_noise: 0.01,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `key.path=value` overrides and
    /// validates the model and Lyapunov parameters.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse()
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        cfg.model_params()?;
        cfg.lyapunov_params()?;
        Ok(cfg)
    }

    pub fn model_params(&self) -> Result<ModelParams, CliError> {
        let pot = PeriodicPotential::new(self.model.cosine.clone(), self.model.sine.clone())
            .map_err(|e| field_error("model", e))?;
        ModelParams::new(self.model.gamma, self.model.temperature, pot)
            .map_err(|e| field_error("model", e))
    }

    pub fn lyapunov_params(&self) -> Result<LyapunovParams, CliError> {
        let l = &self.lyapunov;
        LyapunovParams::new(
            l.beta_minus,
            l.beta_plus,
            l.delta,
            l.drift_constant,
            self.model.temperature,
        )
        .map_err(|e| field_error("lyapunov", e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

pub fn state_from(a: [f64; 4]) -> State {
    State::new(a[0], a[1], a[2], a[3])
}

fn field_error(section: &str, e: rotor_core::Error) -> CliError {
    CliError::Validation(format!("[{section}] {e}"))
}

/// `a.b.c=value`, where `value` is a TOML literal or, failing that, a bare
/// string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{spec}` is not key=value")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert!(ExperimentConfig::load(None, &[]).is_ok());
    }

    #[test]
    fn overrides_use_dotted_paths() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "model.gamma=2.5".into(),
                "integrator.scheme=euler-maruyama".into(),
                "escape_times.momenta=[4, 8]".into(),
                "seed=7".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.gamma, 2.5);
        assert_eq!(cfg.integrator.scheme, Scheme::EulerMaruyama);
        assert_eq!(cfg.escape_times.momenta, vec![4.0, 8.0]);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::load(None, &["model.gama=2".into()]).unwrap_err();
        assert!(matches!(e, CliError::Validation(ref m) if m.contains("gama")), "{e:?}");
        assert!(ExperimentConfig::load(None, &["nosuch.x=1".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["model.gamma".into()]).is_err());
    }

    #[test]
    fn beta_window_checked_at_load() {
        let e = ExperimentConfig::load(None, &["lyapunov.beta_plus=1.2".into()]).unwrap_err();
        match e {
            CliError::Validation(m) => assert!(m.contains("beta_+ <"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
