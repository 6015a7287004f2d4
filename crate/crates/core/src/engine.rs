//! Time integration, lattice setup and the timed run loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{AtomSystem, ParamTable, PrecisionMode, SimulationBox, Vec3, BOLTZMANN, MVV2E};
use crate::neighbor::{build_neighbor_list, NeighborList};
pub use crate::potential_opt::Scheme;
use crate::potential_opt::{compute_forces, ForceOptions};
use crate::potential_ref::EnergyForces;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    /// ps
    pub dt: f64,
    /// Å
    pub skin: f64,
    pub rebuild_check_every: usize,
    pub k_max: usize,
    pub scheme: Scheme,
    pub precision: PrecisionMode,
    /// `None` picks 4 lanes for double precision and 8 otherwise.
    pub backend_width: Option<usize>,
    pub workers: usize,
    pub thermo_every: usize,
    pub seed: u64,
    /// Initial temperature in K; `None` keeps the system's velocities.
    pub temperature: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 1000,
            dt: 0.001,
            skin: 1.0,
            rebuild_check_every: 1,
            k_max: 16,
            scheme: Scheme::Auto,
            precision: PrecisionMode::OptD,
            backend_width: None,
            workers: 1,
            thermo_every: 100,
            seed: 12345,
            temperature: Some(300.0),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.skin.is_finite() && self.skin >= 0.0) {
            return Err(Error::config(format!("skin must be >= 0, got {}", self.skin)));
        }
        if self.rebuild_check_every == 0 {
            return Err(Error::config("rebuild_check_every must be >= 1"));
        }
        if self.thermo_every == 0 {
            return Err(Error::config("thermo_every must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::config(format!("temperature must be >= 0, got {t}")));
            }
        }
        self.force_options().resolve().map(|_| ())
    }

    pub fn width(&self) -> usize {
        self.backend_width.unwrap_or(match self.precision {
            PrecisionMode::OptS | PrecisionMode::OptM => 8,
            _ => 4,
        })
    }

    pub fn force_options(&self) -> ForceOptions {
        ForceOptions {
            scheme: self.scheme,
            precision: self.precision,
            width: self.width(),
            k_max: self.k_max,
            workers: self.workers,
            filter: true,
        }
    }
}

/// `8·nx·ny·nz` atoms on a diamond lattice in a periodic box.
///
/// Fails if the box cannot hold `interaction_range` (cutoff plus skin) under
/// the minimum-image convention; pass 0 to skip the check.
pub fn make_diamond_lattice(
    cells: [usize; 3],
    a0: f64,
    species: usize,
    species_masses: &[f64],
    interaction_range: f64,
) -> Result<AtomSystem> {
    if cells.contains(&0) {
        return Err(Error::config(format!("lattice cells must be >= 1, got {cells:?}")));
    }
    if !(a0.is_finite() && a0 > 0.0) {
        return Err(Error::config(format!("lattice constant must be > 0, got {a0}")));
    }
    let lengths = cells.map(|c| c as f64 * a0);
    let sim_box = SimulationBox::periodic(lengths)?;
    sim_box.check_range(interaction_range)?;

    const BASIS: [[f64; 3]; 8] = [
        [0.0, 0.0, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.0],
        [0.25, 0.25, 0.25],
        [0.25, 0.75, 0.75],
        [0.75, 0.25, 0.75],
        [0.75, 0.75, 0.25],
    ];
    let mut positions = Vec::with_capacity(8 * cells.iter().product::<usize>());
    for ix in 0..cells[0] {
        for iy in 0..cells[1] {
            for iz in 0..cells[2] {
                for b in BASIS {
                    positions.push(Vec3::new(
                        (ix as f64 + b[0]) * a0,
                        (iy as f64 + b[1]) * a0,
                        (iz as f64 + b[2]) * a0,
                    ));
                }
            }
        }
    }
    let n = positions.len();
    AtomSystem::new(sim_box, positions, vec![species; n], species_masses.to_vec())
}

/// Maxwell-Boltzmann velocities at `temperature`, drawn from ChaCha8 seeded
/// with `seed`. Net momentum is removed and the result rescaled to exactly
/// `temperature` over 3N-3 degrees of freedom.
pub fn init_velocities(system: &mut AtomSystem, temperature: f64, seed: u64) -> Result<()> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::config(format!("temperature must be >= 0, got {temperature}")));
    }
    let n = system.len();
    if temperature == 0.0 || n < 2 {
        system.velocities = vec![Vec3::ZERO; n];
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        let sigma = (BOLTZMANN * temperature / (system.mass(i) * MVV2E)).sqrt();
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        velocities.push(Vec3::new(draw(), draw(), draw()) * sigma);
    }
    system.velocities = velocities;

    let total_mass: f64 = (0..n).map(|i| system.mass(i)).sum();
    let drift = system.momentum() * (1.0 / total_mass);
    for v in &mut system.velocities {
        *v -= drift;
    }
    let current = system.temperature();
    if current > 0.0 {
        let scale = (temperature / current).sqrt();
        for v in &mut system.velocities {
            *v = *v * scale;
        }
    }
    Ok(())
}

/// Integrator state: the system, its neighbor list and current forces.
#[derive(Clone, Debug)]
pub struct Engine {
    system: AtomSystem,
    params: ParamTable,
    config: RunConfig,
    options: ForceOptions,
    list: NeighborList,
    current: EnergyForces,
    step: usize,
    rebuilds: usize,
}

impl Engine {
    /// Validates the configuration, builds the neighbor list and computes
    /// initial forces. Velocities are left untouched.
    pub fn new(system: AtomSystem, params: ParamTable, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let options = config.force_options().resolve()?;
        system.sim_box().check_range(params.r_cut_max() + config.skin)?;
        let list = build_neighbor_list(&system, params.r_cut_max(), config.skin)?;
        let mut engine = Engine {
            system,
            params,
            config,
            options,
            list,
            current: EnergyForces::zeros(0),
            step: 0,
            rebuilds: 0,
        };
        engine.evaluate()?;
        Ok(engine)
    }

    fn evaluate(&mut self) -> Result<()> {
        self.current = compute_forces(&self.system, &self.list, &self.params, &self.options)?;
        self.system.forces.clone_from(&self.current.forces);
        Ok(())
    }

    fn half_kick(&mut self) {
        let half_dt = 0.5 * self.config.dt;
        for i in 0..self.system.len() {
            let inv_m = 1.0 / (self.system.mass(i) * MVV2E);
            let a = self.system.forces[i] * inv_m;
            self.system.velocities[i] += a * half_dt;
        }
    }

    /// One velocity-Verlet step: half-kick, drift, neighbor check, forces, half-kick.
    pub fn step(&mut self) -> Result<()> {
        self.half_kick();
        let dt = self.config.dt;
        for (x, v) in self.system.positions.iter_mut().zip(&self.system.velocities) {
            *x += *v * dt;
        }
        self.system.wrap_positions();
        self.step += 1;
        if self.step % self.config.rebuild_check_every == 0 && self.list.needs_rebuild(&self.system) {
            self.list = build_neighbor_list(&self.system, self.params.r_cut_max(), self.config.skin)?;
            self.rebuilds += 1;
        }
        self.evaluate()?;
        self.half_kick();
        Ok(())
    }

    pub fn system(&self) -> &AtomSystem {
        &self.system
    }

    pub fn into_system(self) -> AtomSystem {
        self.system
    }

    pub fn potential_energy(&self) -> f64 {
        self.current.energy
    }

    pub fn forces(&self) -> &EnergyForces {
        &self.current
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn rebuild_count(&self) -> usize {
        self.rebuilds
    }

    /// Resolved force options (concrete scheme, precision, width).
    pub fn options(&self) -> &ForceOptions {
        &self.options
    }

    pub fn sample(&self) -> ThermoSample {
        let pe = self.current.energy;
        let ke = self.system.kinetic_energy();
        ThermoSample {
            step: self.step,
            time_ps: self.step as f64 * self.config.dt,
            temp_k: self.system.temperature(),
            pe_ev: pe,
            ke_ev: ke,
            etot_ev: pe + ke,
            net_force: self.current.net_force(),
            momentum: self.system.momentum(),
        }
    }
}

/// Free-function form of [`Engine::step`].
pub fn vv_step(engine: &mut Engine) -> Result<()> {
    engine.step()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermoSample {
    pub step: usize,
    pub time_ps: f64,
    pub temp_k: f64,
    pub pe_ev: f64,
    pub ke_ev: f64,
    pub etot_ev: f64,
    /// Sum of all forces (not written to CSV).
    pub net_force: Vec3,
    /// Σ m·v in g/mol·Å/ps (not written to CSV).
    pub momentum: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub samples: Vec<ThermoSample>,
    pub scheme: Scheme,
    pub width: usize,
    pub precision: PrecisionMode,
    pub steps: usize,
    pub wall_seconds: f64,
    pub ns_per_day: f64,
    pub rebuilds: usize,
}

impl RunReport {
    pub const HEADER: &'static str = "step,time_ps,temp_K,pe_eV,ke_eV,etot_eV";

    /// Thermo rows plus footer lines; the `ns_per_day` line is last.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::HEADER);
        s.push('\n');
        for t in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.step, t.time_ps, t.temp_k, t.pe_ev, t.ke_ev, t.etot_ev
            );
        }
        let _ = writeln!(s, "scheme,{}", self.scheme);
        let _ = writeln!(s, "width,{}", self.width);
        let _ = writeln!(s, "precision,{}", self.precision);
        let _ = writeln!(s, "ns_per_day,{}", self.ns_per_day);
        s
    }
}

/// Simulated nanoseconds per wall-clock day.
pub fn ns_per_day(steps: usize, dt_ps: f64, wall_seconds: f64) -> f64 {
    if wall_seconds <= 0.0 {
        return f64::INFINITY;
    }
    steps as f64 * dt_ps * 1e-3 / wall_seconds * 86400.0
}

/// Runs `config.steps` steps. Setup (velocities, neighbor list, initial
/// forces) happens before the clock starts.
pub fn run(mut system: AtomSystem, params: &ParamTable, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    if let Some(t) = config.temperature {
        init_velocities(&mut system, t, config.seed)?;
    }
    let mut engine = Engine::new(system, params.clone(), config.clone())?;
    let mut samples = vec![engine.sample()];

    let start = Instant::now();
    for s in 1..=config.steps {
        engine.step()?;
        if s % config.thermo_every == 0 || s == config.steps {
            samples.push(engine.sample());
        }
    }
    let wall_seconds = start.elapsed().as_secs_f64();

    let o = engine.options();
    Ok(RunReport {
        samples,
        scheme: o.scheme,
        width: o.width,
        precision: o.precision,
        steps: config.steps,
        wall_seconds,
        ns_per_day: ns_per_day(config.steps, config.dt, wall_seconds),
        rebuilds: engine.rebuild_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SILICON_A0, SILICON_MASS};
    use crate::testutil::dimer;

    fn si_lattice(c: usize) -> AtomSystem {
        make_diamond_lattice([c; 3], SILICON_A0, 0, &[SILICON_MASS], 0.0).unwrap()
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(si_lattice(1).len(), 8);
        assert_eq!(si_lattice(4).len(), 512);
        let s = make_diamond_lattice([2, 1, 3], 5.0, 0, &[1.0], 0.0).unwrap();
        assert_eq!(s.len(), 48);
        assert_eq!(s.sim_box().lengths(), [10.0, 5.0, 15.0]);
    }

    #[test]
    fn lattice_is_four_coordinated() {
        for sys in [si_lattice(1), si_lattice(2), make_diamond_lattice([1, 2, 3], 5.431, 0, &[1.0], 0.0).unwrap()] {
            let cut = 1.2 * SILICON_A0 * 3f64.sqrt() / 4.0;
            let l = sys.sim_box().lengths();
            for i in 0..sys.len() {
                let mut count = 0;
                for j in 0..sys.len() {
                    for sx in -1..=1 {
                        for sy in -1..=1 {
                            for sz in -1..=1 {
                                if i == j && (sx, sy, sz) == (0, 0, 0) {
                                    continue;
                                }
                                let d = sys.positions[j] - sys.positions[i]
                                    + Vec3::new(sx as f64 * l[0], sy as f64 * l[1], sz as f64 * l[2]);
                                if d.norm() < cut {
                                    count += 1;
                                }
                            }
                        }
                    }
                }
                assert_eq!(count, 4, "atom {i}");
            }
        }
    }

    #[test]
    fn lattice_rejects_small_box() {
        let err = make_diamond_lattice([1, 1, 1], SILICON_A0, 0, &[SILICON_MASS], 4.2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(make_diamond_lattice([0, 1, 1], SILICON_A0, 0, &[SILICON_MASS], 0.0).is_err());
    }

    #[test]
    fn velocity_initialization() {
        let mut s = si_lattice(4);
        init_velocities(&mut s, 0.0, 1).unwrap();
        assert!(s.velocities.iter().all(|v| *v == Vec3::ZERO));

        init_velocities(&mut s, 300.0, 1).unwrap();
        assert!((s.temperature() - 300.0).abs() < 1e-9);
        assert!(s.momentum().max_abs() < 1e-10);

        let mut again = si_lattice(4);
        init_velocities(&mut again, 300.0, 1).unwrap();
        assert_eq!(again.velocities, s.velocities);
        init_velocities(&mut again, 300.0, 2).unwrap();
        assert_ne!(again.velocities, s.velocities);
    }

    fn far_apart() -> AtomSystem {
        let b = SimulationBox::new([40.0; 3], [false; 3]).unwrap();
        AtomSystem::new(
            b,
            vec![Vec3::new(5.0, 5.0, 5.0), Vec3::new(30.0, 30.0, 30.0)],
            vec![0, 0],
            vec![SILICON_MASS],
        )
        .unwrap()
    }

    fn quiet_config(dt: f64) -> RunConfig {
        RunConfig {
            dt,
            temperature: None,
            ..Default::default()
        }
    }

    #[test]
    fn free_particles() {
        let sys = far_apart();
        let mut e = Engine::new(sys.clone(), ParamTable::silicon(), quiet_config(0.001)).unwrap();
        e.step().unwrap();
        assert_eq!(e.system().positions, sys.positions);

        let mut moving = sys.clone();
        moving.velocities = vec![Vec3::new(1.0, -2.0, 0.5); 2];
        let mut e = Engine::new(moving, ParamTable::silicon(), quiet_config(0.01)).unwrap();
        for _ in 0..10 {
            vv_step(&mut e).unwrap();
        }
        for (p, p0) in e.system().positions.iter().zip(&sys.positions) {
            let d = *p - *p0 - Vec3::new(0.1, -0.2, 0.05);
            assert!(d.max_abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn dimer_conserves_energy() {
        // start slightly stretched from the dimer minimum
        let sys = dimer(2.4);
        let mut e = Engine::new(sys, ParamTable::silicon(), quiet_config(0.0005)).unwrap();
        let e0 = e.sample().etot_ev;
        let steps = 4000;
        let mut worst = 0.0f64;
        for _ in 0..steps {
            e.step().unwrap();
            worst = worst.max(((e.sample().etot_ev - e0) / e0).abs());
        }
        let drift = ((e.sample().etot_ev - e0) / e0).abs() / steps as f64;
        assert!(drift < 1e-8, "drift per step {drift}");
        assert!(worst < 1e-4, "max deviation {worst}");
    }

    #[test]
    fn zero_steps_reports_initial_state() {
        let cfg = RunConfig {
            steps: 0,
            ..Default::default()
        };
        let r = run(si_lattice(2), &ParamTable::silicon(), &cfg).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert_eq!(r.samples[0].step, 0);
        assert!((r.samples[0].temp_k - 300.0).abs() < 1e-9);
        assert_eq!(r.scheme, Scheme::V1);
        assert_eq!(r.width, 4);
    }

    #[test]
    fn sampling_and_csv_layout() {
        let cfg = RunConfig {
            steps: 25,
            thermo_every: 10,
            scheme: Scheme::V2,
            backend_width: Some(8),
            precision: PrecisionMode::OptM,
            ..Default::default()
        };
        let r = run(si_lattice(2), &ParamTable::silicon(), &cfg).unwrap();
        let steps: Vec<_> = r.samples.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], RunReport::HEADER);
        assert_eq!(lines.len(), 1 + 4 + 4);
        assert_eq!(&lines[5..8], &["scheme,v2", "width,8", "precision,mixed"]);
        assert!(lines[8].starts_with("ns_per_day,"));
        let row: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[0], 10.0);
        assert_eq!(row[1], 10.0 * 0.001);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            RunConfig { dt: 0.0, ..Default::default() },
            RunConfig { skin: -1.0, ..Default::default() },
            RunConfig { workers: 0, ..Default::default() },
            RunConfig { backend_width: Some(5), scheme: Scheme::V2, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let too_small = make_diamond_lattice([1; 3], SILICON_A0, 0, &[SILICON_MASS], 0.0).unwrap();
        let err = run(too_small, &ParamTable::silicon(), &RunConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn ns_per_day_arithmetic() {
        // 1000 steps of 1 fs = 1 ps = 1e-3 ns in one second
        assert!((ns_per_day(1000, 0.001, 1.0) - 86.4).abs() < 1e-12);
    }
}
