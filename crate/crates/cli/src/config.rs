//! Run configuration: TOML `key = value` sections laid over scenario defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scenario::{Check, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Spectral,
    Fd4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exit {
    Zero,
    Wrap,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    /// `harmonic`, `free`, `quartic`, `pendulum` or `polynomial`.
    pub name: String,
    /// `(a, b, c)` terms `c q^a p^b`, used when `name = "polynomial"`.
    #[serde(default)]
    pub terms: Vec<(u32, u32, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub n_q: usize,
    pub n_p: usize,
    pub boundary: Boundary,
}

/// Gaussian packet; for the line scenario `center` is `(x0, p0)` and
/// `width` the position spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub center: [f64; 2],
    pub width: f64,
    /// `k_q, k_p, a_qq, a_qp, a_pp`.
    pub phase: [f64; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Particle width in grid cells.
    pub epsilon_cells: f64,
    /// Coherence length as a multiple of the width (`inf` for none).
    pub coherence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub x: [f64; 2],
    pub n: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub norm_drift: f64,
    pub energy_drift: f64,
    pub oracle_l2: f64,
    /// Minimum error ratio when dt is halved.
    pub convergence_ratio: f64,
    pub commutator: f64,
    pub naturality_l1: f64,
    pub mass_drift: f64,
    pub madelung_l2: f64,
    pub transport: f64,
    pub equivariance: f64,
    pub density_equivariance_l1: f64,
    pub kernel_error: f64,
    pub trace_drift: f64,
    pub casimir_drift: f64,
    pub eigenvalue_drift: f64,
    pub sigma_defect: f64,
    pub density_reconstruction: f64,
    /// In grid cells.
    pub centroid_cells: f64,
    /// Per unit time.
    pub defect_growth: f64,
    pub schrodinger_norm_drift: f64,
    pub schrodinger_energy_drift: f64,
    pub ehrenfest: f64,
    pub continuity: f64,
    pub bohm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            norm_drift: 1e-8,
            energy_drift: 1e-7,
            oracle_l2: 1e-4,
            convergence_ratio: 12.0,
            commutator: 1e-6,
            naturality_l1: 1e-4,
            mass_drift: 1e-8,
            madelung_l2: 1e-4,
            transport: 1e-5,
            equivariance: 1e-5,
            density_equivariance_l1: 1e-5,
            kernel_error: 1e-5,
            trace_drift: 1e-9,
            casimir_drift: 1e-7,
            eigenvalue_drift: 1e-6,
            sigma_defect: 1e-4,
            density_reconstruction: 1e-5,
            centroid_cells: 1.0,
            defect_growth: 1e-4,
            schrodinger_norm_drift: 1e-10,
            schrodinger_energy_drift: 1e-8,
            ehrenfest: 1e-4,
            continuity: 1e-5,
            bohm: 1e-4,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 24] {
        [
            ("norm_drift", self.norm_drift),
            ("energy_drift", self.energy_drift),
            ("oracle_l2", self.oracle_l2),
            ("convergence_ratio", self.convergence_ratio),
            ("commutator", self.commutator),
            ("naturality_l1", self.naturality_l1),
            ("mass_drift", self.mass_drift),
            ("madelung_l2", self.madelung_l2),
            ("transport", self.transport),
            ("equivariance", self.equivariance),
            ("density_equivariance_l1", self.density_equivariance_l1),
            ("kernel_error", self.kernel_error),
            ("trace_drift", self.trace_drift),
            ("casimir_drift", self.casimir_drift),
            ("eigenvalue_drift", self.eigenvalue_drift),
            ("sigma_defect", self.sigma_defect),
            ("density_reconstruction", self.density_reconstruction),
            ("centroid_cells", self.centroid_cells),
            ("defect_growth", self.defect_growth),
            ("schrodinger_norm_drift", self.schrodinger_norm_drift),
            ("schrodinger_energy_drift", self.schrodinger_energy_drift),
            ("ehrenfest", self.ehrenfest),
            ("continuity", self.continuity),
            ("bohm", self.bohm),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    /// Named check suites; empty means the scenario's default checks.
    pub checks: Vec<String>,
    pub seed: u64,
    /// Relative paths resolve against `KVH_OUTPUT_ROOT` when it is set.
    pub output: PathBuf,
    pub hbar: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Keep every `stride`-th step.
    pub stride: usize,
    /// Time at which the naturality and Madelung comparisons are made.
    pub t_compare: f64,
    /// Snapshot spacing for the one-form transport residual.
    pub transport_spacing: f64,
    /// Coarse step of the convergence check (the fine step is half).
    pub convergence_dt: f64,
    /// Constant phase of the contact lift.
    pub theta: f64,
    pub exit_policy: Exit,
    pub hamiltonian: HamiltonianConfig,
    pub grid: GridConfig,
    pub packet: PacketConfig,
    pub kernel: KernelConfig,
    pub line: LineConfig,
    pub tolerances: Tolerances,
}

/// Overlays `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn for_scenario(s: Scenario) -> Self {
        s.default_config()
    }

    /// Parses a config document. Keys not given take the scenario's defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_parts(text, &[])
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    /// `base` is a TOML document (may be empty if a `scenario = ...` override
    /// is present); each override is a `dotted.key = value` line applied after it.
    pub fn from_parts(base: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let parse = |s: &str| s.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()));
        let mut user = parse(base)?;
        for o in overrides {
            merge(&mut user, parse(o)?);
        }
        let name = user
            .get("scenario")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ConfigError::Invalid("missing `scenario`".into()))?;
        let scenario = Scenario::from_name(name)?;
        let mut table = toml::Table::try_from(scenario.default_config()).expect("defaults serialise");
        merge(&mut table, user);
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::from_name(&self.scenario).expect("validated")
    }

    /// The enabled checks, in the scenario's canonical order.
    pub fn enabled_checks(&self) -> Vec<Check> {
        let s = self.scenario();
        if self.checks.is_empty() {
            return s.default_checks();
        }
        s.checks().iter().copied().filter(|c| self.checks.iter().any(|n| n == c.name())).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os("KVH_OUTPUT_ROOT") {
            Some(root) if self.output.is_relative() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let s = Scenario::from_name(&self.scenario)?;
        for c in &self.checks {
            let check = Check::from_name(c)?;
            if !s.checks().contains(&check) {
                return bad(format!("check `{c}` does not apply to scenario `{}`", s.name()));
            }
        }
        for (key, v) in [
            ("hbar", self.hbar),
            ("dt", self.dt),
            ("transport_spacing", self.transport_spacing),
            ("convergence_dt", self.convergence_dt),
            ("packet.width", self.packet.width),
            ("kernel.epsilon_cells", self.kernel.epsilon_cells),
            ("kernel.coherence", self.kernel.coherence),
            ("line.mass", self.line.mass),
        ] {
            if !(v > 0.0) {
                return bad(format!("`{key}` must be positive, got {v}"));
            }
        }
        for (key, v) in [("t_final", self.t_final), ("t_compare", self.t_compare)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("`{key}` must be finite and non-negative, got {v}"));
            }
        }
        if !self.theta.is_finite() {
            return bad("`theta` must be finite".into());
        }
        if self.stride == 0 {
            return bad("`stride` must be at least 1".into());
        }
        let g = &self.grid;
        if !(g.q[1] > g.q[0] && g.p[1] > g.p[0]) || g.n_q < 4 || g.n_p < 4 {
            return bad(format!("grid {:?} x {:?} with {} x {} nodes", g.q, g.p, g.n_q, g.n_p));
        }
        if !(self.line.x[1] > self.line.x[0]) || self.line.n < 8 {
            return bad(format!("line {:?} with {} nodes", self.line.x, self.line.n));
        }
        if self.packet.center.iter().chain(&self.packet.phase).any(|v| !v.is_finite()) {
            return bad("packet parameters must be finite".into());
        }
        match self.hamiltonian.name.as_str() {
            "polynomial" if self.hamiltonian.terms.is_empty() => {
                return bad("`hamiltonian.terms` is empty".into());
            }
            "polynomial" | "harmonic" | "free" | "quartic" | "pendulum" => {}
            other => return bad(format!("unknown Hamiltonian `{other}`")),
        }
        for (key, v) in self.tolerances.entries() {
            if !(v > 0.0) {
                return bad(format!("`tolerances.{key}` must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        for s in Scenario::all() {
            let cfg = RunConfig::for_scenario(*s);
            cfg.validate().unwrap();
            assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn overrides_merge_into_defaults() {
        let cfg = RunConfig::from_toml_str(
            "scenario = \"harmonic-kvh\"\ndt = 2e-3\n[grid]\nn_q = 64\n[tolerances]\nnorm_drift = 1e-9\n",
        )
        .unwrap();
        assert_eq!(cfg.dt, 2e-3);
        assert_eq!(cfg.grid.n_q, 64);
        assert_eq!(cfg.grid.n_p, 128);
        assert_eq!(cfg.tolerances.norm_drift, 1e-9);
        assert_eq!(cfg.tolerances.energy_drift, 1e-7);
        let cfg = RunConfig::from_parts("", &["scenario = \"free-kvh\"".into(), "grid.n_p = 32".into()]).unwrap();
        assert_eq!(cfg.grid.n_p, 32);
    }

    #[test]
    fn rejects_invalid() {
        let bad = [
            "scenario = \"harmonic-kvh\"\ndt = 0.0",
            "scenario = \"harmonic-kvh\"\ndt = -1e-3",
            "scenario = \"nope\"",
            "dt = 1e-3",
            "scenario = \"harmonic-kvh\"\nchecks = [\"bohm\"]",
            "scenario = \"harmonic-kvh\"\nchecks = [\"made-up\"]",
            "scenario = \"harmonic-kvh\"\nunknown_key = 1",
            "scenario = \"harmonic-kvh\"\n[grid]\nn_q = 2",
            "scenario = \"harmonic-kvh\"\n[hamiltonian]\nname = \"polynomial\"",
            "scenario = \"harmonic-kvh\"\n[tolerances]\nbohm = 0.0",
            "scenario = \"harmonic-kvh\"\nstride = 0",
            "scenario = [",
        ];
        for b in bad {
            assert!(RunConfig::from_toml_str(b).is_err(), "{b}");
        }
    }

    #[test]
    fn check_selection_follows_canonical_order() {
        let cfg = RunConfig::from_toml_str("scenario = \"harmonic-kvh\"\nchecks = [\"naturality\", \"unitarity\"]").unwrap();
        assert_eq!(cfg.enabled_checks(), vec![Check::Unitarity, Check::Naturality]);
        let all = RunConfig::for_scenario(Scenario::QuantumHydro);
        assert_eq!(all.enabled_checks(), Scenario::QuantumHydro.checks());
    }
}
