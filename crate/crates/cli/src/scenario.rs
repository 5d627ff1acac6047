//! Named scenarios and check suites.

use std::f64::consts::PI;
use std::path::PathBuf;

use kvh_core::HamiltonianSpec;

use crate::config::{Boundary, ConfigError, Exit, GridConfig, HamiltonianConfig, KernelConfig, LineConfig, PacketConfig, RunConfig, Tolerances};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    HarmonicKvh,
    FreeKvh,
    QuarticKvh,
    PendulumKvh,
    QuarterRotation,
    VonNeumann,
    PointParticle,
    QuantumHydro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Unitarity,
    Characteristics,
    Convergence,
    OperatorAlgebra,
    Naturality,
    Madelung,
    Equivariance,
    KernelConsistency,
    Reconstruction,
    SigmaDefect,
    Schrodinger,
    Continuity,
    Bohm,
}

const KVH_CHECKS: &[Check] = &[
    Check::Unitarity,
    Check::Characteristics,
    Check::Convergence,
    Check::OperatorAlgebra,
    Check::Naturality,
    Check::Madelung,
];

impl Scenario {
    pub fn all() -> &'static [Scenario] {
        use Scenario::*;
        &[HarmonicKvh, FreeKvh, QuarticKvh, PendulumKvh, QuarterRotation, VonNeumann, PointParticle, QuantumHydro]
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::HarmonicKvh => "harmonic-kvh",
            Scenario::FreeKvh => "free-kvh",
            Scenario::QuarticKvh => "quartic-kvh",
            Scenario::PendulumKvh => "pendulum-kvh",
            Scenario::QuarterRotation => "quarter-rotation",
            Scenario::VonNeumann => "von-neumann",
            Scenario::PointParticle => "point-particle",
            Scenario::QuantumHydro => "quantum-hydro",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ConfigError> {
        Self::all().iter().copied().find(|s| s.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::all().iter().map(|s| s.name()).collect();
            ConfigError::Invalid(format!("unknown scenario `{name}` (known: {})", known.join(", ")))
        })
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::HarmonicKvh => "Koopman wavefunction under the harmonic oscillator for one period",
            Scenario::FreeKvh => "Koopman wavefunction of a free particle",
            Scenario::QuarticKvh => "Koopman wavefunction under p²/2 + q⁴/4 for one orbit period",
            Scenario::PendulumKvh => "Koopman wavefunction under the pendulum for one libration period",
            Scenario::QuarterRotation => "van Hove action of the lifted quarter rotation",
            Scenario::VonNeumann => "rank-one kernel evolved by the commutator",
            Scenario::PointParticle => "regularised point-particle kernel under the harmonic flow",
            Scenario::QuantumHydro => "Schrödinger packet and its Madelung fluid on a line",
        }
    }

    pub fn checks(self) -> &'static [Check] {
        match self {
            Scenario::HarmonicKvh | Scenario::FreeKvh | Scenario::QuarticKvh | Scenario::PendulumKvh => KVH_CHECKS,
            Scenario::QuarterRotation => &[Check::Equivariance],
            Scenario::VonNeumann => &[Check::KernelConsistency],
            Scenario::PointParticle => &[Check::Reconstruction, Check::SigmaDefect],
            Scenario::QuantumHydro => &[Check::Schrodinger, Check::Continuity, Check::Bohm],
        }
    }

    /// Checks run when none are selected. The convergence ratio needs time
    /// error above the spatial floor, which only the harmonic run has; the
    /// nonlinear shears filament below grid resolution within a period.
    pub fn default_checks(self) -> Vec<Check> {
        use Check::*;
        let skip: &[Check] = match self {
            Scenario::FreeKvh => &[Convergence],
            Scenario::PendulumKvh => &[Characteristics, Convergence],
            Scenario::QuarticKvh => &[Characteristics, Convergence, Naturality, Madelung],
            _ => &[],
        };
        self.checks().iter().copied().filter(|c| !skip.contains(c)).collect()
    }

    pub fn default_config(self) -> RunConfig {
        let square = |half: f64, n: usize| GridConfig {
            q: [-half, half],
            p: [-half, half],
            n_q: n,
            n_p: n,
            boundary: Boundary::Spectral,
        };
        let named = |n: &str| HamiltonianConfig { name: n.into(), terms: Vec::new() };
        let packet = |c: [f64; 2], w: f64, phase: [f64; 5]| PacketConfig { center: c, width: w, phase };
        let mut cfg = RunConfig {
            scenario: self.name().into(),
            checks: Vec::new(),
            seed: 7,
            output: PathBuf::from("runs").join(self.name()),
            hbar: 1.0,
            dt: 1e-3,
            t_final: 1.0,
            stride: 100,
            t_compare: 1.0,
            transport_spacing: 0.01,
            convergence_dt: 5e-3,
            theta: 0.0,
            exit_policy: Exit::Zero,
            hamiltonian: named("harmonic"),
            grid: square(8.0, 128),
            packet: packet([1.5, 0.0], 0.5, [0.0, 0.0, 0.1, 0.0, 0.0]),
            kernel: KernelConfig { epsilon_cells: 4.0, coherence: std::f64::consts::FRAC_1_SQRT_2 },
            line: LineConfig { x: [-12.0, 12.0], n: 256, mass: 1.0 },
            tolerances: Tolerances::default(),
        };
        let period = |h: &HamiltonianSpec, c: [f64; 2]| orbit_period(h, (c[0], c[1])).expect("bounded orbit");
        match self {
            Scenario::HarmonicKvh => {
                cfg.t_final = 2.0 * PI;
                cfg.stride = 500;
            }
            Scenario::FreeKvh => {
                // no period; the centre moves two units, five packet widths
                cfg.hamiltonian = named("free");
                cfg.packet = packet([-1.0, 1.0], 0.4, [0.0, 0.0, 0.1, 0.0, 0.0]);
                cfg.t_final = 2.0;
                cfg.stride = 500;
            }
            Scenario::QuarticKvh => {
                // q³ grows fast: a small box keeps dt inside the RK4 stability bound
                cfg.hamiltonian = named("quartic");
                cfg.grid = square(3.0, 128);
                cfg.packet = packet([1.0, 0.0], 0.2, [0.0, 0.0, 0.1, 0.0, 0.0]);
                cfg.t_final = period(&HamiltonianSpec::quartic(), cfg.packet.center);
                cfg.stride = 500;
            }
            Scenario::PendulumKvh => {
                cfg.hamiltonian = named("pendulum");
                cfg.grid = square(6.0, 128);
                cfg.packet = packet([1.0, 0.0], 0.4, [0.0, 0.0, 0.1, 0.0, 0.0]);
                cfg.t_final = period(&HamiltonianSpec::pendulum(), cfg.packet.center);
                cfg.stride = 500;
            }
            Scenario::QuarterRotation => {
                // nodes map onto nodes under a quarter turn of a symmetric box
                cfg.hbar = 0.8;
                cfg.t_final = PI / 2.0;
                cfg.dt = 1e-2;
                cfg.theta = 0.3;
                cfg.exit_policy = Exit::Wrap;
                cfg.packet = packet([1.0, -0.5], 0.7, [0.0, 0.0, 0.2, -0.1, 0.15]);
            }
            Scenario::VonNeumann => {
                cfg.grid = square(4.0, 24);
                cfg.packet = packet([0.5, 0.0], 0.6, [0.3, 0.0, 0.0, 0.0, 0.0]);
                cfg.t_final = 0.5;
            }
            Scenario::PointParticle => {
                // ε = 4 cells = 1; the quarter arc of ζ from (1, 0) stays 5ε inside
                cfg.grid = GridConfig { q: [-5.0, 6.0], p: [-6.0, 5.0], n_q: 44, n_p: 44, boundary: Boundary::Spectral };
                cfg.packet = packet([1.0, 0.0], 1.0, [0.0; 5]);
                cfg.t_final = PI / 2.0;
                cfg.dt = 5e-3;
                cfg.stride = 105;
            }
            Scenario::QuantumHydro => {
                // coherent state of the unit oscillator: spread sqrt(ħ/2mω)
                cfg.packet = packet([1.0, 0.5], std::f64::consts::FRAC_1_SQRT_2, [0.0; 5]);
                cfg.stride = 10;
            }
        }
        cfg
    }
}

impl Check {
    pub fn all() -> &'static [Check] {
        use Check::*;
        &[
            Unitarity,
            Characteristics,
            Convergence,
            OperatorAlgebra,
            Naturality,
            Madelung,
            Equivariance,
            KernelConsistency,
            Reconstruction,
            SigmaDefect,
            Schrodinger,
            Continuity,
            Bohm,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::Unitarity => "unitarity",
            Check::Characteristics => "characteristics",
            Check::Convergence => "convergence",
            Check::OperatorAlgebra => "operator-algebra",
            Check::Naturality => "naturality",
            Check::Madelung => "madelung",
            Check::Equivariance => "equivariance",
            Check::KernelConsistency => "kernel-consistency",
            Check::Reconstruction => "reconstruction",
            Check::SigmaDefect => "sigma-defect",
            Check::Schrodinger => "schrodinger",
            Check::Continuity => "continuity",
            Check::Bohm => "bohm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ConfigError> {
        Self::all().iter().copied().find(|c| c.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::all().iter().map(|c| c.name()).collect();
            ConfigError::Invalid(format!("unknown check `{name}` (known: {})", known.join(", ")))
        })
    }

    pub fn description(self) -> &'static str {
        match self {
            Check::Unitarity => "norm and h(Ψ) drift over the run",
            Check::Characteristics => "L² distance to the characteristics oracle at t_final",
            Check::Convergence => "oracle error ratio when dt is halved",
            Check::OperatorAlgebra => "commutator residuals on a seeded random packet",
            Check::Naturality => "classical density of the KvH state vs the Liouville pushforward",
            Check::Madelung => "polar evolution vs KvH, and the one-form transport residual",
            Check::Equivariance => "equivariance residual and density pushforward under the lift",
            Check::KernelConsistency => "kernel evolution vs ΨΨ†, trace, Casimir and spectrum",
            Check::Reconstruction => "σ = D𝒜 defect and ρ = D for the point-particle kernel",
            Check::SigmaDefect => "defect series, growth rate and centroid under evolution",
            Check::Schrodinger => "split-step norm, energy and Ehrenfest centre",
            Check::Continuity => "∂_t D + ∂_x(Dv) residual",
            Check::Bohm => "momentum balance with the quantum potential",
        }
    }

    pub fn scenarios(self) -> Vec<Scenario> {
        Scenario::all().iter().copied().filter(|s| s.checks().contains(&self)).collect()
    }
}

/// Period of the closed orbit through `z0`, from RK4 steps of the vector
/// field and the winding angle about the origin. `None` if the orbit does not
/// wind around within a long horizon.
pub fn orbit_period(h: &HamiltonianSpec, z0: (f64, f64)) -> Option<f64> {
    const DT: f64 = 1e-3;
    const HORIZON: f64 = 1e3;
    let step = |(q, p): (f64, f64), dt: f64| {
        let f = |q: f64, p: f64| h.vector_field_at(q, p);
        let k1 = f(q, p);
        let k2 = f(q + 0.5 * dt * k1.0, p + 0.5 * dt * k1.1);
        let k3 = f(q + 0.5 * dt * k2.0, p + 0.5 * dt * k2.1);
        let k4 = f(q + dt * k3.0, p + dt * k3.1);
        (
            q + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            p + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        )
    };
    let angle = |z: (f64, f64)| z.1.atan2(z.0);
    let wrap = |a: f64| (a + PI).rem_euclid(2.0 * PI) - PI;
    let mut z = z0;
    let mut turned = 0.0;
    let mut t = 0.0;
    while t < HORIZON {
        let next = step(z, DT);
        let d = wrap(angle(next) - angle(z));
        if (turned + d).abs() >= 2.0 * PI {
            // bisect the final step for the crossing
            let target = 2.0 * PI * (turned + d).signum();
            let (mut lo, mut hi) = (0.0, DT);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let a = turned + wrap(angle(step(z, mid)) - angle(z));
                if a.abs() < target.abs() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(t + 0.5 * (lo + hi));
        }
        turned += d;
        z = next;
        t += DT;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agm(mut a: f64, mut b: f64) -> f64 {
        for _ in 0..40 {
            (a, b) = (0.5 * (a + b), (a * b).sqrt());
        }
        a
    }

    #[test]
    fn periods_match_closed_forms() {
        let t = orbit_period(&HamiltonianSpec::harmonic(), (1.5, 0.0)).unwrap();
        assert!((t - 2.0 * PI).abs() < 1e-9, "{t}");
        // p²/2 + q⁴/4 from (1, 0): T = 4√2 ∫₀¹ (1 - q⁴)^{-1/2} dq = √2 Γ(1/4)² / √(2π)
        let gamma_quarter = 3.625_609_908_221_908;
        let exact = 2f64.sqrt() * gamma_quarter * gamma_quarter / (2.0 * PI).sqrt();
        let t = orbit_period(&HamiltonianSpec::quartic(), (1.0, 0.0)).unwrap();
        assert!((t - exact).abs() < 1e-9, "{t} vs {exact}");
        // pendulum of amplitude 1: T = 4K(sin ½), K(k) = π / (2 agm(1, √(1-k²)))
        let k = 0.5f64.sin();
        let exact = 4.0 * PI / (2.0 * agm(1.0, (1.0 - k * k).sqrt()));
        let t = orbit_period(&HamiltonianSpec::pendulum(), (1.0, 0.0)).unwrap();
        assert!((t - exact).abs() < 1e-9, "{t} vs {exact}");
        assert!(orbit_period(&HamiltonianSpec::free(), (0.0, 1.0)).is_none());
    }

    #[test]
    fn names_roundtrip() {
        for s in Scenario::all() {
            assert_eq!(Scenario::from_name(s.name()).unwrap(), *s);
            for c in s.checks() {
                assert!(c.scenarios().contains(s));
            }
        }
        for c in Check::all() {
            assert_eq!(Check::from_name(c.name()).unwrap(), *c);
            assert!(!c.scenarios().is_empty());
        }
        assert!(Scenario::from_name("x").is_err());
        assert!(Check::from_name("x").is_err());
    }
}
