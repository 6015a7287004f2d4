//! Domain types shared by every other module: vectors, the periodic box, the
//! atom state, and the Tersoff parameter table.
//!
//! Units are "metal": Å, eV, ps, g/mol.

use std::fmt;
use std::fs;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::path::Path;
use std::str::FromStr;

use num_traits::Float;

use crate::error::{Error, Result};

/// Converts m·v² with m in g/mol and v in Å/ps into eV.
pub const MVV2E: f64 = 1.0364269e-4;
/// Boltzmann constant in eV/K.
pub const BOLTZMANN: f64 = 8.617333e-5;

/// Silicon parameters (the "Si(B)" set) in the standard file layout.
pub const SILICON_TERSOFF: &str = "\
# Tersoff Si(B) parameters, metal units
# e1 e2 e3 m gamma lambda3 c d h n beta lambda2 B R D lambda1 A
Si Si Si 3.0 1.0 1.3258 4.8381 2.0417 0.0000 22.956 0.33675 1.3258 95.373 3.0 0.2 3.2394 3264.7
";

/// Mass of silicon in g/mol.
pub const SILICON_MASS: f64 = 28.0855;
/// Cubic lattice constant of diamond silicon in Å.
pub const SILICON_A0: f64 = 5.431;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// Maps one displacement component into `[-L/2, L/2)`.
///
/// Generic so the single-precision kernels share the exact convention.
#[inline]
pub fn wrap_component<T: Float>(d: T, length: T) -> T {
    let half = length / (T::one() + T::one());
    if d >= -half && d < half {
        return d;
    }
    // rem_euclid lands in [0, L]; the subtraction below is exact (Sterbenz).
    let mut r = d % length;
    if r < T::zero() {
        r = r + length;
    }
    if r >= half {
        r - length
    } else {
        r
    }
}

/// Maps a coordinate into `[0, L)`.
#[inline]
pub fn wrap_coordinate(x: f64, length: f64) -> f64 {
    let w = x.rem_euclid(length);
    if w >= length {
        w - length
    } else {
        w
    }
}

/// Orthorhombic simulation box with per-axis periodicity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationBox {
    lengths: [f64; 3],
    periodic: [bool; 3],
}

impl SimulationBox {
    pub fn new(lengths: [f64; 3], periodic: [bool; 3]) -> Result<Self> {
        for (axis, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::config(format!(
                    "box length along axis {axis} must be positive and finite, got {l}"
                )));
            }
        }
        Ok(SimulationBox { lengths, periodic })
    }

    pub fn periodic(lengths: [f64; 3]) -> Result<Self> {
        Self::new(lengths, [true; 3])
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn is_periodic(&self) -> [bool; 3] {
        self.periodic
    }

    /// Smallest length over the periodic axes, or infinity if none are periodic.
    pub fn min_periodic_length(&self) -> f64 {
        (0..3)
            .filter(|&a| self.periodic[a])
            .map(|a| self.lengths[a])
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks that an interaction range fits the minimum-image convention.
    pub fn check_range(&self, range: f64) -> Result<()> {
        let min_len = self.min_periodic_length();
        if 2.0 * range > min_len {
            return Err(Error::config(format!(
                "interaction range {range} Å (cutoff + skin) exceeds half the smallest periodic box length {min_len} Å"
            )));
        }
        Ok(())
    }

    pub fn minimum_image(&self, delta: Vec3) -> Vec3 {
        minimum_image(delta, self)
    }

    pub fn wrap(&self, p: Vec3) -> Vec3 {
        let mut a = p.to_array();
        for axis in 0..3 {
            if self.periodic[axis] {
                a[axis] = wrap_coordinate(a[axis], self.lengths[axis]);
            }
        }
        Vec3::from_array(a)
    }
}

/// Minimum-image displacement; periodic components land in `[-L/2, L/2)`.
pub fn minimum_image(delta: Vec3, sim_box: &SimulationBox) -> Vec3 {
    let mut a = delta.to_array();
    for axis in 0..3 {
        if sim_box.periodic[axis] {
            a[axis] = wrap_component(a[axis], sim_box.lengths[axis]);
        }
    }
    Vec3::from_array(a)
}

/// Mutable simulation state.
#[derive(Clone, Debug)]
pub struct AtomSystem {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub forces: Vec<Vec3>,
    species: Vec<usize>,
    species_masses: Vec<f64>,
    sim_box: SimulationBox,
}

impl AtomSystem {
    /// Builds a system at rest. Positions are wrapped into the box.
    pub fn new(
        sim_box: SimulationBox,
        positions: Vec<Vec3>,
        species: Vec<usize>,
        species_masses: Vec<f64>,
    ) -> Result<Self> {
        if positions.len() != species.len() {
            return Err(Error::config(format!(
                "{} positions but {} species ids",
                positions.len(),
                species.len()
            )));
        }
        if let Some(&s) = species.iter().find(|&&s| s >= species_masses.len()) {
            return Err(Error::config(format!(
                "species id {s} has no mass ({} masses given)",
                species_masses.len()
            )));
        }
        if let Some(m) = species_masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::config(format!("species mass must be positive, got {m}")));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::config(format!("non-finite position {p:?}")));
        }
        let n = positions.len();
        let positions = positions.into_iter().map(|p| sim_box.wrap(p)).collect();
        Ok(AtomSystem {
            positions,
            velocities: vec![Vec3::ZERO; n],
            forces: vec![Vec3::ZERO; n],
            species,
            species_masses,
            sim_box,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn species(&self) -> &[usize] {
        &self.species
    }

    pub fn species_masses(&self) -> &[f64] {
        &self.species_masses
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.species_masses[self.species[i]]
    }

    pub fn sim_box(&self) -> &SimulationBox {
        &self.sim_box
    }

    pub fn wrap_positions(&mut self) {
        let b = self.sim_box;
        for p in &mut self.positions {
            *p = b.wrap(*p);
        }
    }

    /// Minimum-image vector from atom `i` to atom `j`.
    pub fn delta(&self, i: usize, j: usize) -> Vec3 {
        minimum_image(self.positions[j] - self.positions[i], &self.sim_box)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * MVV2E
            * self
                .velocities
                .iter()
                .enumerate()
                .map(|(i, v)| self.mass(i) * v.norm2())
                .sum::<f64>()
    }

    /// Degrees of freedom with total momentum removed.
    pub fn degrees_of_freedom(&self) -> usize {
        (3 * self.len()).saturating_sub(3)
    }

    pub fn temperature(&self) -> f64 {
        let dof = self.degrees_of_freedom();
        if dof == 0 {
            return 0.0;
        }
        2.0 * self.kinetic_energy() / (dof as f64 * BOLTZMANN)
    }

    pub fn momentum(&self) -> Vec3 {
        let mut p = Vec3::ZERO;
        for (i, v) in self.velocities.iter().enumerate() {
            p += *v * self.mass(i);
        }
        p
    }
}

/// Tersoff parameters for one ordered species triplet.
///
/// `eta` is the bond-order exponent usually written `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TersoffEntry {
    pub m: u8,
    pub gamma: f64,
    pub lambda3: f64,
    pub c: f64,
    pub d: f64,
    /// cos θ0
    pub h: f64,
    pub eta: f64,
    pub beta: f64,
    pub lambda2: f64,
    pub attractive_b: f64,
    pub cutoff_r: f64,
    pub cutoff_d: f64,
    pub lambda1: f64,
    pub repulsive_a: f64,
}

impl TersoffEntry {
    /// Outer cutoff R + D.
    pub fn cutoff(&self) -> f64 {
        self.cutoff_r + self.cutoff_d
    }

    pub fn cutoff_sq(&self) -> f64 {
        let c = self.cutoff();
        c * c
    }

    fn validate(&self, triplet: &str) -> Result<()> {
        let fail = |field: &'static str, message: String| Error::Validation {
            field,
            triplet: triplet.to_string(),
            message,
        };
        let finite = [
            ("gamma", self.gamma),
            ("lambda3", self.lambda3),
            ("c", self.c),
            ("d", self.d),
            ("h", self.h),
            ("eta", self.eta),
            ("beta", self.beta),
            ("lambda2", self.lambda2),
            ("B", self.attractive_b),
            ("R", self.cutoff_r),
            ("D", self.cutoff_d),
            ("lambda1", self.lambda1),
            ("A", self.repulsive_a),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(fail(field, format!("must be finite, got {v}")));
            }
        }
        if self.m != 1 && self.m != 3 {
            return Err(fail("m", format!("must be 1 or 3, got {}", self.m)));
        }
        if self.cutoff_d <= 0.0 {
            return Err(fail("D", format!("must be > 0, got {}", self.cutoff_d)));
        }
        if self.cutoff_r <= self.cutoff_d {
            return Err(fail(
                "R",
                format!("must exceed D = {}, got {}", self.cutoff_d, self.cutoff_r),
            ));
        }
        if self.eta <= 0.0 {
            return Err(fail("eta", format!("must be > 0, got {}", self.eta)));
        }
        if self.d == 0.0 {
            return Err(fail("d", "must be nonzero".into()));
        }
        for (field, v) in [
            ("beta", self.beta),
            ("A", self.repulsive_a),
            ("B", self.attractive_b),
            ("gamma", self.gamma),
        ] {
            if v < 0.0 {
                return Err(fail(field, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

const FIELDS_PER_ENTRY: usize = 17;
const NUMERIC_FIELD_NAMES: [&str; 14] = [
    "m", "gamma", "lambda3", "c", "d", "h", "eta", "beta", "lambda2", "B", "R", "D", "lambda1",
    "A",
];

/// Dense S×S×S table of Tersoff entries keyed by ordered species triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    species_names: Vec<String>,
    entries: Vec<TersoffEntry>,
    r_cut_max: f64,
}

impl ParamTable {
    /// Builds a table from a dense entry array, index `(si * S + sj) * S + sk`.
    pub fn new(species_names: Vec<String>, entries: Vec<TersoffEntry>) -> Result<Self> {
        let s = species_names.len();
        if s == 0 {
            return Err(Error::config("parameter table declares no species"));
        }
        if entries.len() != s * s * s {
            return Err(Error::config(format!(
                "expected {} entries for {s} species, got {}",
                s * s * s,
                entries.len()
            )));
        }
        let table = ParamTable {
            r_cut_max: entries.iter().map(TersoffEntry::cutoff).fold(0.0, f64::max),
            species_names,
            entries,
        };
        for si in 0..s {
            for sj in 0..s {
                for sk in 0..s {
                    table
                        .entry(si, sj, sk)
                        .validate(&table.triplet_name(si, sj, sk))?;
                }
            }
        }
        Ok(table)
    }

    pub fn silicon() -> Self {
        Self::parse(SILICON_TERSOFF).expect("built-in silicon parameters are valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses the standard Tersoff file layout:
    /// `e1 e2 e3 m gamma lambda3 c d h eta beta lambda2 B R D lambda1 A`.
    ///
    /// `#` starts a comment. An entry may continue over several lines, as in
    /// the files shipped with common MD packages.
    pub fn parse(text: &str) -> Result<Self> {
        let mut species_names: Vec<String> = Vec::new();
        let mut raw: Vec<([usize; 3], TersoffEntry, usize)> = Vec::new();
        let mut pending: Vec<(&str, usize)> = Vec::with_capacity(FIELDS_PER_ENTRY);

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = line.split('#').next().unwrap_or("");
            for tok in content.split_whitespace() {
                if pending.len() < 3 && tok.parse::<f64>().is_ok() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!(
                            "expected element name, found `{tok}` (wrong field count?)"
                        ),
                    });
                }
                pending.push((tok, line_no));
                if pending.len() == FIELDS_PER_ENTRY {
                    let start = pending[0].1;
                    let mut ids = [0usize; 3];
                    for (slot, (name, _)) in ids.iter_mut().zip(&pending[..3]) {
                        *slot = match species_names.iter().position(|s| s == name) {
                            Some(p) => p,
                            None => {
                                species_names.push(name.to_string());
                                species_names.len() - 1
                            }
                        };
                    }
                    let mut values = [0.0f64; 14];
                    for (k, (tok, line)) in pending[3..].iter().enumerate() {
                        values[k] = tok.parse::<f64>().map_err(|_| Error::Parse {
                            line: *line,
                            message: format!(
                                "field `{}` is not numeric: `{tok}`",
                                NUMERIC_FIELD_NAMES[k]
                            ),
                        })?;
                    }
                    let m = if values[0] == 1.0 {
                        1
                    } else if values[0] == 3.0 {
                        3
                    } else {
                        let triplet = format!("({} {} {})", pending[0].0, pending[1].0, pending[2].0);
                        return Err(Error::Validation {
                            field: "m",
                            triplet,
                            message: format!("must be 1 or 3, got {}", values[0]),
                        });
                    };
                    let entry = TersoffEntry {
                        m,
                        gamma: values[1],
                        lambda3: values[2],
                        c: values[3],
                        d: values[4],
                        h: values[5],
                        eta: values[6],
                        beta: values[7],
                        lambda2: values[8],
                        attractive_b: values[9],
                        cutoff_r: values[10],
                        cutoff_d: values[11],
                        lambda1: values[12],
                        repulsive_a: values[13],
                    };
                    if let Some((_, _, first)) = raw.iter().find(|(t, _, _)| *t == ids) {
                        return Err(Error::Parse {
                            line: start,
                            message: format!(
                                "duplicate entry for ({} {} {}), first defined on line {first}",
                                pending[0].0, pending[1].0, pending[2].0
                            ),
                        });
                    }
                    raw.push((ids, entry, start));
                    pending.clear();
                }
            }
        }
        if let Some((_, line)) = pending.first() {
            return Err(Error::Parse {
                line: *line,
                message: format!(
                    "incomplete entry: expected {FIELDS_PER_ENTRY} fields, found {}",
                    pending.len()
                ),
            });
        }
        if species_names.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "no parameter entries found".into(),
            });
        }

        let s = species_names.len();
        let mut slots: Vec<Option<TersoffEntry>> = vec![None; s * s * s];
        for (ids, entry, _) in raw {
            slots[(ids[0] * s + ids[1]) * s + ids[2]] = Some(entry);
        }
        let mut entries = Vec::with_capacity(slots.len());
        for (idx, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(e) => entries.push(e),
                None => {
                    let (si, sj, sk) = (idx / (s * s), (idx / s) % s, idx % s);
                    return Err(Error::Incomplete(format!(
                        "({} {} {})",
                        species_names[si], species_names[sj], species_names[sk]
                    )));
                }
            }
        }
        Self::new(species_names, entries)
    }

    /// Renders the table in the file layout, one entry per line.
    pub fn to_param_string(&self) -> String {
        let mut out = String::from("# e1 e2 e3 m gamma lambda3 c d h eta beta lambda2 B R D lambda1 A\n");
        let s = self.species_count();
        for si in 0..s {
            for sj in 0..s {
                for sk in 0..s {
                    let e = self.entry(si, sj, sk);
                    out.push_str(&format!(
                        "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
                        self.species_names[si],
                        self.species_names[sj],
                        self.species_names[sk],
                        e.m,
                        e.gamma,
                        e.lambda3,
                        e.c,
                        e.d,
                        e.h,
                        e.eta,
                        e.beta,
                        e.lambda2,
                        e.attractive_b,
                        e.cutoff_r,
                        e.cutoff_d,
                        e.lambda1,
                        e.repulsive_a
                    ));
                }
            }
        }
        out
    }

    pub fn species_names(&self) -> &[String] {
        &self.species_names
    }

    pub fn species_count(&self) -> usize {
        self.species_names.len()
    }

    pub fn species_id(&self, name: &str) -> Option<usize> {
        self.species_names.iter().position(|s| s == name)
    }

    #[inline]
    pub fn index(&self, si: usize, sj: usize, sk: usize) -> usize {
        let s = self.species_names.len();
        (si * s + sj) * s + sk
    }

    #[inline]
    pub fn entry(&self, si: usize, sj: usize, sk: usize) -> &TersoffEntry {
        &self.entries[self.index(si, sj, sk)]
    }

    pub fn entries(&self) -> &[TersoffEntry] {
        &self.entries
    }

    /// Largest R + D over all entries.
    pub fn r_cut_max(&self) -> f64 {
        self.r_cut_max
    }

    fn triplet_name(&self, si: usize, sj: usize, sk: usize) -> String {
        format!(
            "({} {} {})",
            self.species_names[si], self.species_names[sj], self.species_names[sk]
        )
    }
}

impl FromStr for ParamTable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Execution mode: the double-precision reference code, or the optimized
/// code in double, single, or mixed precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrecisionMode {
    Ref,
    OptD,
    OptS,
    OptM,
}

impl PrecisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PrecisionMode::Ref => "ref",
            PrecisionMode::OptD => "double",
            PrecisionMode::OptS => "single",
            PrecisionMode::OptM => "mixed",
        }
    }

    pub fn computes_in_single(self) -> bool {
        matches!(self, PrecisionMode::OptS | PrecisionMode::OptM)
    }

    pub fn accumulates_in_single(self) -> bool {
        self == PrecisionMode::OptS
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecisionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ref" => Ok(PrecisionMode::Ref),
            "double" | "d" | "opt-d" | "optd" => Ok(PrecisionMode::OptD),
            "single" | "s" | "opt-s" | "opts" => Ok(PrecisionMode::OptS),
            "mixed" | "m" | "opt-m" | "optm" => Ok(PrecisionMode::OptM),
            other => Err(Error::config(format!(
                "unknown precision `{other}` (expected ref, double, single or mixed)"
            ))),
        }
    }
}
