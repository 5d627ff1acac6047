//! Executes a [`RunConfig`]: runs the enabled checks, writes artifacts and
//! the report.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kvh_core::contact::{apply_van_hove, equivariance_residual, lift_hamiltonian_flow};
use kvh_core::hamiltonian::flow_map;
use kvh_core::io;
use kvh_core::kvh::{characteristics_oracle, commutator_residual, evolve, Trajectory};
use kvh_core::liouville::{compare_densities, evolve_pushforward, pushforward_fn};
use kvh_core::madelung::{
    classical_density, classical_density_from_hydro, evolve_madelung, hydro_from_wavefunction,
    one_form_transport_residual,
};
use kvh_core::qhd::{bohm_potential_residual, continuity_residual, schrodinger_trajectory, Line, QWaveFunction};
use kvh_core::vonneumann::{centroid, evolve_kernel, hydro_from_kernel, kernel_from_wavefunction, point_particle_kernel};
use kvh_core::{
    BicubicInterpolator, BoundaryMode, DensityField, Error, EvolveOptions, ExitPolicy, GaussianPacket,
    HamiltonianSpec, PhaseGrid, PhaseSpaceFn, Polynomial, PolarPair, SpectralInterpolator,
    WaveFunction, C64,
};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Boundary, Exit, RunConfig};
use crate::report::Report;
use crate::scenario::Check;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub dir: PathBuf,
    /// Every file written, in creation order.
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

type RunResult<T> = Result<T, RunError>;

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> kvh_core::Result<()>) -> RunResult<()> {
        let path = self.dir.join(name);
        let io_err = |source| RunError::Io { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        match f(&mut w) {
            Ok(()) => {}
            Err(Error::Io(source)) => return Err(io_err(source)),
            Err(e) => return Err(e.into()),
        }
        w.flush().map_err(io_err)?;
        self.files.push(path);
        Ok(())
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    h: HamiltonianSpec,
    out: Artifacts,
    report: Report,
    main: Option<Trajectory>,
    oracle: Option<WaveFunction>,
}

pub fn hamiltonian(cfg: &RunConfig) -> kvh_core::Result<HamiltonianSpec> {
    match cfg.hamiltonian.name.as_str() {
        "polynomial" => Ok(HamiltonianSpec::from_polynomial(
            "polynomial",
            Polynomial::from_terms(cfg.hamiltonian.terms.iter().copied()),
        )),
        name => HamiltonianSpec::by_name(name),
    }
}

pub fn grid(cfg: &RunConfig) -> kvh_core::Result<PhaseGrid> {
    let g = &cfg.grid;
    let bc = match g.boundary {
        Boundary::Spectral => BoundaryMode::PeriodicSpectral,
        Boundary::Fd4 => BoundaryMode::FiniteDifference4,
    };
    PhaseGrid::new((g.q[0], g.q[1]), (g.p[0], g.p[1]), g.n_q, g.n_p, bc)
}

pub fn packet(cfg: &RunConfig) -> GaussianPacket {
    let c = &cfg.packet;
    let [kq, kp, aqq, aqp, app] = c.phase;
    GaussianPacket::new((c.center[0], c.center[1]), c.width, cfg.hbar)
        .with_linear_phase(kq, kp)
        .with_quadratic_phase(aqq, aqp, app)
}

fn policy(e: Exit) -> ExitPolicy {
    match e {
        Exit::Zero => ExitPolicy::Zero,
        Exit::Wrap => ExitPolicy::Wrap,
        Exit::Error => ExitPolicy::Error,
    }
}

/// Runs every enabled check and writes `config.toml`, the artifacts and
/// `report` into the output directory.
pub fn run(cfg: &RunConfig) -> RunResult<RunOutcome> {
    run_in(cfg, &cfg.output_dir())
}

pub fn run_in(cfg: &RunConfig, dir: &Path) -> RunResult<RunOutcome> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.into(), source })?;
    let checks = cfg.enabled_checks();
    let mut ctx = Ctx {
        cfg,
        h: hamiltonian(cfg)?,
        out: Artifacts { dir: dir.into(), files: Vec::new() },
        report: Report::default(),
        main: None,
        oracle: None,
    };
    let text = cfg.to_toml();
    ctx.out.write("config.toml", |w| Ok(w.write_all(text.as_bytes())?))?;
    let r = &mut ctx.report;
    r.note("scenario", &cfg.scenario);
    r.note("seed", cfg.seed.to_string());
    r.note("hamiltonian", ctx.h.name());
    r.note("checks", checks.iter().map(|c| c.name()).collect::<Vec<_>>().join(", "));
    for c in checks {
        match c {
            Check::Unitarity => unitarity(&mut ctx)?,
            Check::Characteristics => characteristics(&mut ctx)?,
            Check::Convergence => convergence(&mut ctx)?,
            Check::OperatorAlgebra => operator_algebra(&mut ctx)?,
            Check::Naturality => naturality(&mut ctx)?,
            Check::Madelung => madelung(&mut ctx)?,
            Check::Equivariance => equivariance(&mut ctx)?,
            Check::KernelConsistency => kernel_consistency(&mut ctx)?,
            Check::Reconstruction => reconstruction(&mut ctx)?,
            Check::SigmaDefect => sigma_defect(&mut ctx)?,
            Check::Schrodinger | Check::Continuity | Check::Bohm => {}
        }
    }
    let line_checks: Vec<_> = cfg
        .enabled_checks()
        .into_iter()
        .filter(|c| matches!(c, Check::Schrodinger | Check::Continuity | Check::Bohm))
        .collect();
    if !line_checks.is_empty() {
        quantum_hydro(&mut ctx, &line_checks)?;
    }
    let text = ctx.report.render();
    ctx.out.write("report", |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(RunOutcome { report: ctx.report, dir: dir.into(), files: ctx.out.files })
}

impl Ctx<'_> {
    fn grid(&self) -> kvh_core::Result<PhaseGrid> {
        grid(self.cfg)
    }

    fn psi0(&self) -> kvh_core::Result<WaveFunction> {
        packet(self.cfg).sample(&self.grid()?)?.normalized()
    }

    fn opts(&self, t: f64) -> EvolveOptions {
        EvolveOptions::new(t, self.cfg.dt).stride(self.cfg.stride)
    }

    fn main(&mut self) -> RunResult<&Trajectory> {
        if self.main.is_none() {
            let tr = evolve(&self.h, &self.psi0()?, &self.opts(self.cfg.t_final))?;
            for w in &tr.warnings {
                self.report.note("warning.evolve", w.to_string());
            }
            self.main = Some(tr);
        }
        Ok(self.main.as_ref().expect("just set"))
    }

    /// Oracle for the normalised initial packet at `t_final`.
    fn oracle(&mut self) -> RunResult<WaveFunction> {
        if self.oracle.is_none() {
            let g = self.grid()?;
            let pk = packet(self.cfg);
            let scale = 1.0 / pk.sample(&g)?.norm();
            let f = move |q: f64, p: f64| pk.eval(q, p) * scale;
            let o = characteristics_oracle(&self.h, &f, &g, self.cfg.hbar, self.cfg.t_final, self.cfg.dt, policy(self.cfg.exit_policy))?;
            for w in &o.warnings {
                self.report.note("warning.oracle", w.to_string());
            }
            self.oracle = Some(o.value);
        }
        Ok(self.oracle.clone().expect("just set"))
    }
}

fn unitarity(ctx: &mut Ctx) -> RunResult<()> {
    let tol = ctx.cfg.tolerances.clone();
    let tr = ctx.main()?.clone();
    ctx.report.below("unitarity.norm_drift", tr.norm_drift(), tol.norm_drift);
    ctx.report.below("unitarity.energy_drift", tr.energy_drift(), tol.energy_drift);
    ctx.out.write("snapshots.kvhf", |w| tr.snapshots.iter().try_for_each(|s| io::write_field(w, s)))?;
    ctx.out.write("conserved.csv", |w| io::write_conserved_csv(w, &tr.log))?;
    ctx.out.write("final.csv", |w| io::write_field_csv(w, tr.last().field()))
}

fn characteristics(ctx: &mut Ctx) -> RunResult<()> {
    let oracle = ctx.oracle()?;
    let last = ctx.main()?.last();
    let err = last.field().sub(oracle.field()).norm_l2();
    ctx.report.below("characteristics.l2_error", err, ctx.cfg.tolerances.oracle_l2);
    ctx.out.write("final.kvhf", |w| io::write_field(w, last.field()))?;
    ctx.out.write("oracle.kvhf", |w| io::write_field(w, oracle.field()))
}

fn convergence(ctx: &mut Ctx) -> RunResult<()> {
    let oracle = ctx.oracle()?;
    let psi0 = ctx.psi0()?;
    let coarse = ctx.cfg.convergence_dt;
    let mut errs = Vec::new();
    for dt in [coarse, coarse / 2.0] {
        let e = match evolve(&ctx.h, &psi0, &EvolveOptions::new(ctx.cfg.t_final, dt)) {
            Ok(tr) => tr.last().field().sub(oracle.field()).norm_l2(),
            Err(Error::Diverged { t, .. }) => {
                ctx.report.note("convergence.diverged", format!("dt = {dt:e} diverged at t = {t:e}"));
                f64::NAN
            }
            Err(e) => return Err(e.into()),
        };
        errs.push(e);
    }
    ctx.report.info("convergence.error_coarse", errs[0]);
    ctx.report.info("convergence.error_fine", errs[1]);
    ctx.report.at_least("convergence.ratio", errs[0] / errs[1], ctx.cfg.tolerances.convergence_ratio);
    Ok(())
}

/// Three packets with seeded centres, widths, phases and weights, sized to
/// the box so the sum stays well inside it.
pub fn random_field(cfg: &RunConfig, g: &PhaseGrid) -> kvh_core::Result<WaveFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (q, p) = (g.q_range(), g.p_range());
    let (lq, lp) = (q.1 - q.0, p.1 - p.0);
    let (mq, mp) = (0.5 * (q.0 + q.1), 0.5 * (p.0 + p.1));
    let l = lq.min(lp);
    let parts: Vec<(GaussianPacket, C64)> = (0..3)
        .map(|_| {
            let c = (mq + lq * rng.random_range(-0.12..0.12), mp + lp * rng.random_range(-0.12..0.12));
            let pk = GaussianPacket::new(c, l * rng.random_range(0.025..0.04), cfg.hbar)
                .with_linear_phase(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                .with_quadratic_phase(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                );
            (pk, C64::from_polar(rng.random_range(0.5..1.0), rng.random_range(-3.0..3.0)))
        })
        .collect();
    let f = move |q: f64, p: f64| parts.iter().map(|(pk, w)| pk.eval(q, p) * w).sum::<C64>();
    WaveFunction::from_fn(g, cfg.hbar, f)?.normalized()
}

fn operator_algebra(ctx: &mut Ctx) -> RunResult<()> {
    let g = ctx.grid()?;
    let psi = random_field(ctx.cfg, &g)?;
    let poly = |name: &str, t: &[(u32, u32, f64)]| HamiltonianSpec::from_polynomial(name, Polynomial::from_terms(t.to_vec()));
    let pairs = [
        ("q_p", poly("q", &[(1, 0, 1.0)]), poly("p", &[(0, 1, 1.0)])),
        ("harmonic_qp", poly("harmonic", &[(2, 0, 0.5), (0, 2, 0.5)]), poly("qp", &[(1, 1, 1.0)])),
        ("kinetic_q", poly("kinetic", &[(0, 2, 0.5)]), poly("q", &[(1, 0, 1.0)])),
    ];
    for (name, a, b) in pairs {
        let r = commutator_residual(&a, &b, &psi)?;
        ctx.report.below(format!("operator-algebra.{name}"), r, ctx.cfg.tolerances.commutator);
    }
    ctx.out.write("random_field.kvhf", |w| io::write_field(w, psi.field()))
}

fn naturality(ctx: &mut Ctx) -> RunResult<()> {
    let cfg = ctx.cfg;
    let psi0 = ctx.psi0()?;
    let tr = evolve(&ctx.h, &psi0, &ctx.opts(cfg.t_compare))?;
    let rho0 = DensityField::new(classical_density(&psi0));
    let mut rows = Vec::new();
    let mut mass_drift: f64 = 0.0;
    for (k, &t) in tr.times.iter().enumerate() {
        let rho = DensityField::new(classical_density(&tr.snapshot(k)));
        let push = if t == 0.0 {
            rho0.clone()
        } else {
            evolve_pushforward(&rho0, &ctx.h, t, cfg.dt, policy(cfg.exit_policy))?.value
        };
        rows.push(compare_densities(t, &rho, &push)?);
        mass_drift = mass_drift.max((rho.mass() - rho0.mass()).abs());
    }
    let worst = rows.iter().map(|r| r.l1_error).fold(0.0, f64::max);
    ctx.report.below("naturality.l1_error", worst, cfg.tolerances.naturality_l1);
    ctx.report.below("naturality.mass_drift", mass_drift, cfg.tolerances.mass_drift);
    ctx.report.info("naturality.min_rho", rows.iter().map(|r| r.min_rho).fold(f64::INFINITY, f64::min));
    ctx.out.write("density.csv", |w| io::write_density_csv(w, &rows))
}

fn madelung(ctx: &mut Ctx) -> RunResult<()> {
    let cfg = ctx.cfg;
    let g = ctx.grid()?;
    let pk = packet(cfg);
    let stride = ((cfg.transport_spacing / cfg.dt).round() as usize).max(1);
    let opts = EvolveOptions::new(cfg.t_compare, cfg.dt).stride(stride);
    let polar = evolve_madelung(&PolarPair::from_packet(&g, &pk), &ctx.h, &opts)?;
    let kvh = evolve(&ctx.h, &pk.sample(&g)?, &opts)?.last();
    let back = polar.last().expect("initial state is kept").1.reconstruct()?;
    ctx.report.below("madelung.l2_error", back.field().sub(kvh.field()).norm_l2(), cfg.tolerances.madelung_l2);
    // the last kept state may sit closer than the stride; the residual needs equal spacing
    let mut even = polar.as_slice();
    if even.len() > 2 {
        let (a, b) = (even[1].0 - even[0].0, even[even.len() - 1].0 - even[even.len() - 2].0);
        if (a - b).abs() > 1e-9 * a {
            even = &even[..even.len() - 1];
        }
    }
    let res = one_form_transport_residual(even, &ctx.h)?;
    let worst = res.iter().copied().fold(0.0, f64::max);
    ctx.report.below("madelung.transport_residual", worst, cfg.tolerances.transport);
    let series = even.iter().map(|(t, _)| *t).zip(res).collect();
    ctx.report.series("madelung.transport_series", series);
    let hydro = hydro_from_wavefunction(&kvh);
    ctx.out.write("hydro.kvhf", |w| io::write_hydro(w, &hydro))
}

fn equivariance(ctx: &mut Ctx) -> RunResult<()> {
    let cfg = ctx.cfg;
    let g = ctx.grid()?;
    let psi = ctx.psi0()?;
    let lifted = lift_hamiltonian_flow(&ctx.h, &g, cfg.t_final, cfg.theta, cfg.dt, policy(cfg.exit_policy))?;
    for w in &lifted.warnings {
        ctx.report.note("warning.lift", w.to_string());
    }
    let tr = lifted.value;
    ctx.report.info("equivariance.symplecticity", tr.symplecticity_residual());
    ctx.report.info("equivariance.membership", tr.membership_residual());
    // observable q²/2; under a quarter turn H∘η is p²/2
    let obs = HamiltonianSpec::from_polynomial("half-q2", Polynomial::from_terms([(2, 0, 0.5)]));
    let r = equivariance_residual(&tr, &obs, &psi)?;
    ctx.report.below("equivariance.residual", r, cfg.tolerances.equivariance);
    let u = apply_van_hove(&tr, &psi)?.value;
    let lhs = classical_density(&u);
    let rho = classical_density(&psi);
    let rhs = if g.is_periodic() {
        pushforward_fn(&SpectralInterpolator::new(&rho)?, &g, &ctx.h, cfg.t_final, cfg.dt, policy(cfg.exit_policy))?
    } else {
        pushforward_fn(&BicubicInterpolator::new(&rho), &g, &ctx.h, cfg.t_final, cfg.dt, policy(cfg.exit_policy))?
    }
    .value;
    ctx.report.below("equivariance.density_l1", lhs.sub(rhs.field()).norm_l1(), cfg.tolerances.density_equivariance_l1);
    ctx.out.write("transformed.kvhf", |w| io::write_field(w, u.field()))?;
    ctx.out.write("density_lhs.kvhf", |w| io::write_field(w, &lhs))?;
    ctx.out.write("density_rhs.kvhf", |w| io::write_field(w, rhs.field()))
}

fn max_abs_diff(a: &ndarray::Array2<C64>, b: &ndarray::Array2<C64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

fn kernel_consistency(ctx: &mut Ctx) -> RunResult<()> {
    let cfg = ctx.cfg;
    let tol = &cfg.tolerances;
    let psi = ctx.psi0()?;
    let k0 = kernel_from_wavefunction(&psi)?;
    let opts = ctx.opts(cfg.t_final);
    let traj = evolve_kernel(&k0, &ctx.h, &opts)?;
    let wf = evolve(&ctx.h, &psi, &opts)?.last().normalized()?;
    let expect = kernel_from_wavefunction(&wf)?;
    let r = &mut ctx.report;
    r.below("kernel-consistency.kernel_error", max_abs_diff(traj.last().matrix(), expect.matrix()), tol.kernel_error);
    r.below("kernel-consistency.trace_drift", traj.drift(|x| x.trace), tol.trace_drift);
    r.below("kernel-consistency.casimir2_drift", traj.drift(|x| x.casimir2), tol.casimir_drift);
    let e0 = traj.kernels[0].eigenvalues()?;
    let e1 = traj.last().eigenvalues()?;
    let ed = e0.iter().zip(&e1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.below("kernel-consistency.eigenvalue_drift", ed, tol.eigenvalue_drift);
    r.info("kernel-consistency.energy_drift", traj.drift(|x| x.energy));
    r.info("kernel-consistency.herm_residual", traj.log.iter().map(|x| x.herm_residual).fold(0.0, f64::max));
    r.note("kernel-consistency.path", if traj.eigenbasis { "eigenbasis" } else { "dense" });
    ctx.out.write("kernel.csv", |w| io::write_kernel_csv(w, &traj.log))?;
    ctx.out.write("kernel.kvhf", |w| io::write_kernel(w, traj.last()))
}

/// Normalised Gaussian of width `ε = epsilon_cells · dq` at the packet centre.
fn particle_density(cfg: &RunConfig, g: &PhaseGrid) -> (DensityField, f64) {
    let eps = cfg.kernel.epsilon_cells * g.dq();
    let c = cfg.packet.center;
    let d = DensityField::from_fn(g, |q, p| (-((q - c[0]).powi(2) + (p - c[1]).powi(2)) / (2.0 * eps * eps)).exp());
    let m = d.mass();
    (DensityField::new(d.field().scale(C64::new(1.0 / m, 0.0))), eps)
}

fn reconstruction(ctx: &mut Ctx) -> RunResult<()> {
    let cfg = ctx.cfg;
    let g = ctx.grid()?;
    let (d, eps) = particle_density(cfg, &g);
    let k = point_particle_kernel(&d, cfg.hbar, cfg.kernel.coherence * eps)?;
    let hs = hydro_from_kernel(&k);
    let rho = classical_density_from_hydro(&hs);
    let r = &mut ctx.report;
    r.info("reconstruction.epsilon", eps);
    r.below("reconstruction.sigma_defect", hs.sigma_defect(), cfg.tolerances.sigma_defect);
    r.below("reconstruction.density_error", rho.sub(d.field()).max_abs(), cfg.tolerances.density_reconstruction);
    r.info("reconstruction.trace", k.trace());
    let spec = k.eigenvalues()?;
    r.info("reconstruction.eigenvalue_min", spec.iter().copied().fold(f64::INFINITY, f64::min));
    r.info("reconstruction.eigenvalue_max", spec.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    ctx.out.write("hydro_initial.kvhf", |w| io::write_hydro(w, &hs))
}

fn sigma_defect(ctx: &mut Ctx) -> RunResult<()> {
    let cfg = ctx.cfg;
    let g = ctx.grid()?;
    let (d, eps) = particle_density(cfg, &g);
    let k = point_particle_kernel(&d, cfg.hbar, cfg.kernel.coherence * eps)?;
    let traj = evolve_kernel(&k, &ctx.h, &ctx.opts(cfg.t_final))?;
    let zeta0 = centroid(&d.field().clone());
    let mut worst_cells: f64 = 0.0;
    for (t, kt) in traj.times.iter().zip(&traj.kernels) {
        let (cq, cp) = centroid(&kt.diagonal());
        // ζ carried by the classical flow
        let (eq, ep) = flow_map(&ctx.h, *t, zeta0, 1e-4)?;
        worst_cells = worst_cells.max(((cq - eq) / g.dq()).abs()).max(((cp - ep) / g.dp()).abs());
    }
    let first = traj.log[0].sigma_defect;
    let last = traj.log.last().expect("initial row is kept").sigma_defect;
    let growth = if cfg.t_final > 0.0 { (last - first) / cfg.t_final } else { 0.0 };
    let r = &mut ctx.report;
    r.series("sigma-defect.series", traj.log.iter().map(|x| (x.t, x.sigma_defect)).collect());
    r.below("sigma-defect.max", traj.log.iter().map(|x| x.sigma_defect).fold(0.0, f64::max), cfg.tolerances.sigma_defect);
    r.below("sigma-defect.growth_rate", growth, cfg.tolerances.defect_growth);
    r.below("sigma-defect.centroid_cells", worst_cells, cfg.tolerances.centroid_cells);
    r.info("sigma-defect.trace_drift", traj.drift(|x| x.trace));
    r.info("sigma-defect.energy_drift", traj.drift(|x| x.energy));
    ctx.out.write("kernel.csv", |w| io::write_kernel_csv(w, &traj.log))?;
    let hs = hydro_from_kernel(traj.last());
    ctx.out.write("hydro_final.kvhf", |w| io::write_hydro(w, &hs))
}

fn is_quadratic(h: &HamiltonianSpec) -> bool {
    h.polynomial().is_some_and(|p| p.degree() <= 2)
}

fn quantum_hydro(ctx: &mut Ctx, checks: &[Check]) -> RunResult<()> {
    let cfg = ctx.cfg;
    let tol = &cfg.tolerances;
    let line = Line::new(cfg.line.x[0], cfg.line.x[1], cfg.line.n)?;
    let (x0, p0) = (cfg.packet.center[0], cfg.packet.center[1]);
    let psi0 = QWaveFunction::coherent(line.clone(), x0, p0, cfg.packet.width, cfg.hbar, cfg.line.mass)?;
    // V(x) = H(x, 0) for the separable Hamiltonians
    let h = &ctx.h;
    let pot: Array1<f64> = line.sample(|x| h.h(x, 0.0));
    let traj = schrodinger_trajectory(&psi0, &pot, cfg.t_final, cfg.dt, cfg.stride)?;
    let r = &mut ctx.report;
    if checks.contains(&Check::Schrodinger) {
        let e0 = psi0.energy(&pot);
        let nd = traj.iter().map(|(_, w)| (w.norm_sqr() - 1.0).abs()).fold(0.0, f64::max);
        let ed = traj.iter().map(|(_, w)| (w.energy(&pot) - e0).abs()).fold(0.0, f64::max);
        r.below("schrodinger.norm_drift", nd, tol.schrodinger_norm_drift);
        r.below("schrodinger.energy_drift", ed, tol.schrodinger_energy_drift);
        // classical centre under p²/2m + V
        let m = cfg.line.mass;
        let mut worst: f64 = 0.0;
        let mut z = (x0, p0);
        let mut t_prev = 0.0;
        for (t, w) in &traj {
            let n = ((t - t_prev) / 1e-4).ceil().max(1.0) as usize;
            let s = (t - t_prev) / n as f64;
            for _ in 0..n {
                let f = |(x, p): (f64, f64)| (p / m, -h.dhdq(x, 0.0));
                let k1 = f(z);
                let k2 = f((z.0 + 0.5 * s * k1.0, z.1 + 0.5 * s * k1.1));
                let k3 = f((z.0 + 0.5 * s * k2.0, z.1 + 0.5 * s * k2.1));
                let k4 = f((z.0 + s * k3.0, z.1 + s * k3.1));
                z.0 += s / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                z.1 += s / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            }
            t_prev = *t;
            worst = worst.max((w.mean_position() - z.0).abs()).max((w.mean_momentum() - z.1).abs());
        }
        // Ehrenfest is exact only for quadratic potentials
        if is_quadratic(h) {
            r.below("schrodinger.ehrenfest_error", worst, tol.ehrenfest);
        } else {
            r.info("schrodinger.ehrenfest_error", worst);
        }
    }
    // the residuals need equal spacing; drop a short final interval
    let mut even = traj.as_slice();
    if even.len() > 2 {
        let (a, b) = (even[1].0 - even[0].0, even[even.len() - 1].0 - even[even.len() - 2].0);
        if (a - b).abs() > 1e-9 * a {
            even = &even[..even.len() - 1];
        }
    }
    if checks.contains(&Check::Continuity) {
        let s = continuity_residual(even)?;
        r.below("continuity.residual", s.iter().map(|x| x.1).fold(0.0, f64::max), tol.continuity);
        r.series("continuity.series", s);
    }
    if checks.contains(&Check::Bohm) {
        let s = bohm_potential_residual(even, &pot)?;
        r.below("bohm.residual", s.iter().map(|x| x.1).fold(0.0, f64::max), tol.bohm);
        r.series("bohm.series", s);
    }
    ctx.out.write("psi.kvhf", |w| traj.iter().try_for_each(|(_, s)| io::write_line(w, s)))?;
    ctx.out.write("qhd.csv", |w| {
        writeln!(w, "t,norm,energy")?;
        for (t, s) in &traj {
            writeln!(w, "{t:e},{:e},{:e}", s.norm_sqr(), s.energy(&pot))?;
        }
        Ok(())
    })?;
    let last = &traj.last().expect("initial state is kept").1;
    ctx.out.write("final_psi.csv", |w| io::write_line_csv(w, last))
}
