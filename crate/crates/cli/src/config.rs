//! Scenario configuration files.
//!
//! The format is a flat list of `key = value` lines grouped under
//! `[section]` headers; a key `dt` under `[time]` is addressed as `time.dt`.
//! `#` starts a comment. Lists are comma separated, lists of points are
//! semicolon separated (`centers = -2, 0; 2, 0`).

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dsqm::grid::{Axis, Grid, Point};
use dsqm::potential::{Barrier, PairPotential, PotentialSpec};
use dsqm::propagator::Splitting;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), key: None, message: message.into() }
    }

    fn key(key: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError { line, key: Some(key.to_string()), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    CoherentValidate,
    FreeSpread,
    HbarSweep,
    Factorize2Body,
    ManybodyHartree,
    ManybodyDeltaCompare,
    DoubleSlit,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::CoherentValidate,
        ScenarioKind::FreeSpread,
        ScenarioKind::HbarSweep,
        ScenarioKind::Factorize2Body,
        ScenarioKind::ManybodyHartree,
        ScenarioKind::ManybodyDeltaCompare,
        ScenarioKind::DoubleSlit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CoherentValidate => "coherent-validate",
            ScenarioKind::FreeSpread => "free-spread",
            ScenarioKind::HbarSweep => "hbar-sweep",
            ScenarioKind::Factorize2Body => "factorize-2body",
            ScenarioKind::ManybodyHartree => "manybody-hartree",
            ScenarioKind::ManybodyDeltaCompare => "manybody-delta-compare",
            ScenarioKind::DoubleSlit => "double-slit",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown scenario kind `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// The raw key/value document, before any schema is applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    entries: BTreeMap<String, Entry>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigError>> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        let mut errors = Vec::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                match rest.strip_suffix(']').map(str::trim) {
                    Some(name) if is_ident(name) => section = name.to_string(),
                    _ => errors.push(ConfigError::at(line, format!("malformed section header `{body}`"))),
                }
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                errors.push(ConfigError::at(line, format!("expected `key = value`, got `{body}`")));
                continue;
            };
            let k = k.trim();
            if !is_ident(k) {
                errors.push(ConfigError::at(line, format!("malformed key `{k}`")));
                continue;
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let value = v.trim().to_string();
            if let Some(prev) = entries.get(&key) {
                errors.push(ConfigError::key(
                    &key,
                    Some(line),
                    format!("duplicate key (first defined on line {}, again on line {line})", prev.line),
                ));
                continue;
            }
            entries.insert(key, Entry { value, line });
        }
        if errors.is_empty() {
            Ok(Document { entries })
        } else {
            Err(errors)
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn set(&mut self, key: &str, value: String) {
        let line = self.entries.get(key).map(|e| e.line).unwrap_or(0);
        self.entries.insert(key.to_string(), Entry { value, line });
    }

    fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}.");
        self.entries.keys().any(|k| k.starts_with(&prefix))
    }

    /// Sorted `key = value` lines, independent of layout and comments.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Typed access that records which keys were read and every error met.
struct Reader<'a> {
    doc: &'a Document,
    used: RefCell<BTreeSet<String>>,
    errors: RefCell<Vec<ConfigError>>,
}

impl<'a> Reader<'a> {
    fn new(doc: &'a Document) -> Self {
        Reader { doc, used: RefCell::new(BTreeSet::new()), errors: RefCell::new(Vec::new()) }
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.doc.entries.get(key).map(|e| e.line)
    }

    fn fail(&self, key: &str, message: impl Into<String>) {
        self.errors.borrow_mut().push(ConfigError::key(key, self.line(key), message));
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(key.to_string());
        self.doc.get(key)
    }

    fn parse_one<T: FromStr>(&self, key: &str, s: &str) -> Option<T> {
        match s.trim().parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.fail(key, format!("cannot parse `{}` as {}", s.trim(), short_type::<T>()));
                None
            }
        }
    }

    fn req<T: FromStr>(&self, key: &str) -> Option<T> {
        match self.raw(key) {
            Some(s) => self.parse_one(key, s),
            None => {
                self.fail(key, "missing required key");
                None
            }
        }
    }

    fn opt<T: FromStr>(&self, key: &str, default: T) -> Option<T> {
        match self.raw(key) {
            Some(s) => self.parse_one(key, s),
            None => Some(default),
        }
    }

    fn check<T>(&self, key: &str, v: Option<T>, ok: impl Fn(&T) -> bool, what: &str) -> Option<T> {
        match v {
            Some(x) if ok(&x) => Some(x),
            Some(_) => {
                self.fail(key, format!("must be {what}"));
                None
            }
            None => None,
        }
    }

    fn positive(&self, key: &str) -> Option<f64> {
        let v = self.req::<f64>(key);
        self.check(key, v, |x| *x > 0.0 && x.is_finite(), "positive and finite")
    }

    fn positive_or(&self, key: &str, default: f64) -> Option<f64> {
        let v = self.opt::<f64>(key, default);
        self.check(key, v, |x| *x > 0.0 && x.is_finite(), "positive and finite")
    }

    fn count(&self, key: &str) -> Option<usize> {
        let v = self.req::<usize>(key);
        self.check(key, v, |x| *x > 0, "a positive integer")
    }

    fn count_or(&self, key: &str, default: usize) -> Option<usize> {
        let v = self.opt::<usize>(key, default);
        self.check(key, v, |x| *x > 0, "a positive integer")
    }

    fn list_from<T: FromStr>(&self, key: &str, s: &str) -> Option<Vec<T>> {
        let items: Vec<Option<T>> = s.split(',').map(|p| self.parse_one(key, p)).collect();
        items.into_iter().collect()
    }

    fn list<T: FromStr>(&self, key: &str) -> Option<Vec<T>> {
        match self.raw(key) {
            Some(s) => self.list_from(key, s),
            None => {
                self.fail(key, "missing required key");
                None
            }
        }
    }

    fn opt_list<T: FromStr>(&self, key: &str) -> Option<Option<Vec<T>>> {
        match self.raw(key) {
            Some(s) => self.list_from(key, s).map(Some),
            None => Some(None),
        }
    }

    /// A point with exactly `dim` coordinates.
    fn point(&self, key: &str, dim: Option<usize>) -> Option<Point> {
        let v = self.list::<f64>(key)?;
        self.to_point(key, &v, dim)
    }

    fn point_or(&self, key: &str, dim: Option<usize>, default: Point) -> Option<Point> {
        match self.opt_list::<f64>(key)? {
            Some(v) => self.to_point(key, &v, dim),
            None => Some(default),
        }
    }

    fn to_point(&self, key: &str, v: &[f64], dim: Option<usize>) -> Option<Point> {
        let dim = dim?;
        if v.len() != dim {
            self.fail(key, format!("expected {dim} coordinate(s), got {}", v.len()));
            return None;
        }
        Some([v[0], if dim == 2 { v[1] } else { 0.0 }])
    }

    fn points(&self, key: &str, dim: Option<usize>) -> Option<Vec<Point>> {
        let s = match self.raw(key) {
            Some(s) => s,
            None => {
                self.fail(key, "missing required key");
                return None;
            }
        };
        let pts: Vec<Option<Point>> = s
            .split(';')
            .map(|chunk| {
                let v = self.list_from::<f64>(key, chunk)?;
                self.to_point(key, &v, dim)
            })
            .collect();
        pts.into_iter().collect()
    }

    fn choice<T: Copy>(&self, key: &str, default: T, options: &[(&str, T)]) -> Option<T> {
        match self.raw(key) {
            None => Some(default),
            Some(s) => match options.iter().find(|(n, _)| *n == s.trim()) {
                Some((_, v)) => Some(*v),
                None => {
                    let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
                    self.fail(key, format!("unknown value `{s}` (expected one of {})", names.join(", ")));
                    None
                }
            },
        }
    }

    fn finish(self) -> Vec<ConfigError> {
        let used = self.used.into_inner();
        let mut errors = self.errors.into_inner();
        for (k, e) in &self.doc.entries {
            if !used.contains(k) {
                errors.push(ConfigError::key(k, Some(e.line), "unknown key for this scenario kind"));
            }
        }
        errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        errors
    }
}

fn short_type<T>() -> &'static str {
    let name = std::any::type_name::<T>();
    name.rsplit("::").next().unwrap_or(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpec {
    pub dt: f64,
    pub steps: usize,
    pub store_every: usize,
    pub splitting: Splitting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub count: usize,
    pub seed: u64,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherentSpec {
    pub grid: Grid,
    pub hbar: f64,
    pub mass: f64,
    pub omega: f64,
    pub x0: Point,
    pub v0: Point,
    pub time: TimeSpec,
    pub ensemble: Option<EnsembleSpec>,
    pub tol_l2: f64,
    pub tol_ks: f64,
    pub tol_rigidity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeSpreadSpec {
    pub grid: Grid,
    pub hbar: f64,
    pub mass: f64,
    pub sigma: f64,
    pub x0: Point,
    pub v0: Point,
    pub time: TimeSpec,
    pub ensemble: Option<EnsembleSpec>,
    pub tol_ks: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: Grid,
    pub mass: f64,
    pub sigma: f64,
    pub x0: Point,
    pub v0: Point,
    pub potential: PotentialSpec,
    pub hbars: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub store_every: usize,
    pub offset: Point,
    pub substeps: usize,
    pub ensemble: Option<EnsembleSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeSpec {
    pub config: Grid,
    pub masses: [f64; 2],
    pub pair: PairPotential,
    pub external: PotentialSpec,
    pub hbar: f64,
    pub ext_x0: f64,
    pub ext_v0: f64,
    pub ext_sigma: f64,
    pub rel_r0: f64,
    pub rel_sigma: f64,
    pub time: TimeSpec,
    pub factorized: Splitting,
    pub tol_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveSpec {
    pub center: Point,
    pub velocity: Point,
    pub sigma: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodySpec {
    pub grid: Grid,
    pub hbar: f64,
    pub waves: Vec<WaveSpec>,
    pub pair: PairPotential,
    pub time: TimeSpec,
    pub overlap_threshold: f64,
    /// Allowed center deviation as a fraction of the oscillation amplitude.
    pub tol_center: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleSlitSpec {
    pub grid: Grid,
    pub hbar: f64,
    pub mass: f64,
    pub sigma: f64,
    pub x0: Point,
    pub v0: Point,
    pub barrier: Barrier,
    pub time: TimeSpec,
    pub ensemble: EnsembleSpec,
    /// Far-field region: beyond this coordinate along the barrier axis.
    pub detector: f64,
    pub min_maxima: usize,
    /// Peaks below this fraction of the largest are not counted.
    pub peak_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Coherent(CoherentSpec),
    FreeSpread(FreeSpreadSpec),
    HbarSweep(SweepSpec),
    Factorize(FactorizeSpec),
    ManyBody(ManyBodySpec),
    DoubleSlit(DoubleSlitSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    pub params: Params,
    pub output_dir: Option<PathBuf>,
    doc: Document,
}

impl ScenarioConfig {
    pub fn canonical(&self) -> String {
        self.doc.canonical()
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn seed(&self) -> Option<u64> {
        self.ensemble().map(|e| e.seed)
    }

    fn ensemble(&self) -> Option<&EnsembleSpec> {
        match &self.params {
            Params::Coherent(s) => s.ensemble.as_ref(),
            Params::FreeSpread(s) => s.ensemble.as_ref(),
            Params::HbarSweep(s) => s.ensemble.as_ref(),
            Params::DoubleSlit(s) => Some(&s.ensemble),
            Params::Factorize(_) | Params::ManyBody(_) => None,
        }
    }

    /// Replaces the ensemble seed; the config hash follows.
    pub fn override_seed(&mut self, seed: u64) -> Result<(), ConfigError> {
        let slot = match &mut self.params {
            Params::Coherent(s) => s.ensemble.as_mut(),
            Params::FreeSpread(s) => s.ensemble.as_mut(),
            Params::HbarSweep(s) => s.ensemble.as_mut(),
            Params::DoubleSlit(s) => Some(&mut s.ensemble),
            Params::Factorize(_) | Params::ManyBody(_) => None,
        };
        match slot {
            Some(e) => {
                e.seed = seed;
                self.doc.set("ensemble.seed", seed.to_string());
                Ok(())
            }
            None => Err(ConfigError::key("ensemble.seed", None, "scenario has no ensemble to seed")),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn grid(r: &Reader) -> (Option<Grid>, Option<usize>) {
    let lower = r.list::<f64>("grid.lower");
    let upper = r.list::<f64>("grid.upper");
    let points = r.list::<usize>("grid.points");
    let (Some(lower), Some(upper), Some(points)) = (lower, upper, points) else {
        return (None, None);
    };
    let dim = points.len();
    if !(dim == 1 || dim == 2) || lower.len() != dim || upper.len() != dim {
        r.fail("grid.points", "grid.lower, grid.upper and grid.points need 1 or 2 matching entries");
        return (None, None);
    }
    let axes: Result<Vec<Axis>, _> = (0..dim).map(|k| Axis::new(lower[k], upper[k], points[k])).collect();
    match axes.and_then(Grid::new) {
        Ok(g) => (Some(g), Some(dim)),
        Err(e) => {
            r.fail("grid.points", e.to_string());
            (None, Some(dim))
        }
    }
}

fn time(r: &Reader, default_splitting: Splitting) -> Option<TimeSpec> {
    let dt = r.positive("time.dt");
    let steps = r.count("time.steps");
    let store_every = r.count_or("time.store_every", steps.unwrap_or(1));
    let splitting = splitting(r, "time.splitting", default_splitting);
    Some(TimeSpec { dt: dt?, steps: steps?, store_every: store_every?, splitting: splitting? })
}

fn splitting(r: &Reader, key: &str, default: Splitting) -> Option<Splitting> {
    r.choice(key, default, &[("strang", Splitting::Strang), ("fourth", Splitting::Fourth)])
}

/// The ensemble is optional unless `required`; once any ensemble key is
/// present, `ensemble.seed` is mandatory.
fn ensemble(r: &Reader, required: bool) -> Option<Option<EnsembleSpec>> {
    if !required && !r.doc.has_section("ensemble") {
        return Some(None);
    }
    let count = r.count("ensemble.count");
    let seed = r.req::<u64>("ensemble.seed");
    let substeps = r.count_or("ensemble.substeps", 1);
    Some(Some(EnsembleSpec { count: count?, seed: seed?, substeps: substeps? }))
}

fn coherent(r: &Reader) -> Option<Params> {
    let (grid, dim) = grid(r);
    let hbar = r.positive_or("physics.hbar", 1.0);
    let mass = r.positive_or("physics.mass", 1.0);
    let omega = r.positive("physics.omega");
    let x0 = r.point("physics.x0", dim);
    let v0 = r.point_or("physics.v0", dim, [0.0, 0.0]);
    let time = time(r, Splitting::Strang);
    let ensemble = ensemble(r, false);
    let tol_l2 = r.positive_or("tolerance.l2", 1e-6);
    let tol_ks = r.positive_or("tolerance.ks", 0.02);
    let tol_rigidity = r.positive_or("tolerance.rigidity", 1e-4);
    Some(Params::Coherent(CoherentSpec {
        grid: grid?,
        hbar: hbar?,
        mass: mass?,
        omega: omega?,
        x0: x0?,
        v0: v0?,
        time: time?,
        ensemble: ensemble?,
        tol_l2: tol_l2?,
        tol_ks: tol_ks?,
        tol_rigidity: tol_rigidity?,
    }))
}

fn free_spread(r: &Reader) -> Option<Params> {
    let (grid, dim) = grid(r);
    let hbar = r.positive_or("physics.hbar", 1.0);
    let mass = r.positive_or("physics.mass", 1.0);
    let sigma = r.positive("physics.sigma");
    let x0 = r.point_or("physics.x0", dim, [0.0, 0.0]);
    let v0 = r.point_or("physics.v0", dim, [0.0, 0.0]);
    let time = time(r, Splitting::Strang);
    let ensemble = ensemble(r, false);
    let tol_ks = r.positive_or("tolerance.ks", 0.02);
    Some(Params::FreeSpread(FreeSpreadSpec {
        grid: grid?,
        hbar: hbar?,
        mass: mass?,
        sigma: sigma?,
        x0: x0?,
        v0: v0?,
        time: time?,
        ensemble: ensemble?,
        tol_ks: tol_ks?,
    }))
}

fn external_potential(r: &Reader, dim: Option<usize>, allow_harmonic: bool) -> Option<PotentialSpec> {
    #[derive(Clone, Copy)]
    enum K {
        Free,
        Linear,
        Harmonic,
    }
    let mut options = vec![("free", K::Free), ("linear", K::Linear)];
    if allow_harmonic {
        options.push(("harmonic", K::Harmonic));
    }
    match r.choice("physics.potential", K::Free, &options)? {
        K::Free => Some(PotentialSpec::Free),
        K::Linear => Some(PotentialSpec::Linear { slope: r.point("physics.g", dim)? }),
        K::Harmonic => {
            let w = r.positive("physics.omega")?;
            Some(PotentialSpec::Harmonic { omega: [w, if dim == Some(2) { w } else { 0.0 }] })
        }
    }
}

fn hbar_sweep(r: &Reader) -> Option<Params> {
    let (grid, dim) = grid(r);
    let mass = r.positive_or("physics.mass", 1.0);
    let sigma = r.positive("physics.sigma");
    let x0 = r.point_or("physics.x0", dim, [0.0, 0.0]);
    let v0 = r.point("physics.v0", dim);
    let potential = external_potential(r, dim, false);
    let hbars = r.list::<f64>("sweep.hbars");
    let hbars = r.check(
        "sweep.hbars",
        hbars,
        |h| !h.is_empty() && h.iter().all(|x| *x > 0.0) && h.windows(2).all(|w| w[1] < w[0]),
        "a non-empty, positive, strictly decreasing list",
    );
    let t_end = r.positive("sweep.t_end");
    let dt = r.positive("time.dt");
    let store_every = r.count_or("time.store_every", 1);
    let offset = r.point_or("sweep.offset", dim, [0.0, 0.0]);
    let substeps = r.count_or("sweep.substeps", 2);
    let ensemble = ensemble(r, false);
    Some(Params::HbarSweep(SweepSpec {
        grid: grid?,
        mass: mass?,
        sigma: sigma?,
        x0: x0?,
        v0: v0?,
        potential: potential?,
        hbars: hbars?,
        t_end: t_end?,
        dt: dt?,
        store_every: store_every?,
        offset: offset?,
        substeps: substeps?,
        ensemble: ensemble?,
    }))
}

fn pair(r: &Reader) -> Option<PairPotential> {
    #[derive(Clone, Copy)]
    enum K {
        None,
        Harmonic,
        SoftCoulomb,
    }
    let kind = r.choice(
        "pair.kind",
        K::Harmonic,
        &[("none", K::None), ("harmonic", K::Harmonic), ("soft-coulomb", K::SoftCoulomb)],
    )?;
    match kind {
        K::None => Some(PairPotential::None),
        K::Harmonic => Some(PairPotential::Harmonic { k: r.positive("pair.k")? }),
        K::SoftCoulomb => {
            let coupling = r.req::<f64>("pair.coupling");
            let softening = r.positive("pair.softening");
            Some(PairPotential::SoftCoulomb { coupling: coupling?, softening: softening? })
        }
    }
}

fn factorize(r: &Reader) -> Option<Params> {
    let (config, dim) = grid(r);
    if dim.is_some() && dim != Some(2) {
        r.fail("grid.points", "the configuration grid of two 1D particles is 2D");
    }
    let masses = r.list::<f64>("two_body.masses");
    let masses = r
        .check("two_body.masses", masses, |m| m.len() == 2 && m.iter().all(|x| *x > 0.0), "two positive masses")
        .map(|m| [m[0], m[1]]);
    let pair = pair(r);
    let external = external_potential(r, Some(1), true);
    let hbar = r.positive_or("physics.hbar", 1.0);
    let ext_x0 = r.opt::<f64>("two_body.external_x0", 0.0);
    let ext_v0 = r.opt::<f64>("two_body.external_v0", 0.0);
    let ext_sigma = r.positive("two_body.external_sigma");
    let rel_r0 = r.opt::<f64>("two_body.relative_r0", 0.0);
    let rel_sigma = r.positive("two_body.relative_sigma");
    let time = time(r, Splitting::Strang);
    let factorized = splitting(r, "two_body.factorized_splitting", Splitting::Fourth);
    let tol = r.positive_or("tolerance.discrepancy", 1e-6);
    Some(Params::Factorize(FactorizeSpec {
        config: config.filter(|g| g.dim() == 2)?,
        masses: masses?,
        pair: pair?,
        external: external?,
        hbar: hbar?,
        ext_x0: ext_x0?,
        ext_v0: ext_v0?,
        ext_sigma: ext_sigma?,
        rel_r0: rel_r0?,
        rel_sigma: rel_sigma?,
        time: time?,
        factorized: factorized?,
        tol_discrepancy: tol?,
    }))
}

fn manybody(r: &Reader) -> Option<Params> {
    let (grid, dim) = grid(r);
    let hbar = r.positive_or("physics.hbar", 1.0);
    let centers = r.points("waves.centers", dim);
    let n = centers.as_ref().map(Vec::len);
    let velocities = match r.doc.get("waves.velocities") {
        Some(_) => r.points("waves.velocities", dim),
        None => n.map(|n| vec![[0.0, 0.0]; n]),
    };
    let sigmas = r.list::<f64>("waves.sigmas");
    let masses = r.list::<f64>("waves.masses");
    let lengths_ok = |key: &str, len: Option<usize>| {
        if let (Some(n), Some(l)) = (n, len) {
            if n != l {
                r.fail(key, format!("expected {n} entries to match waves.centers, got {l}"));
                return false;
            }
        }
        true
    };
    let ok = lengths_ok("waves.velocities", velocities.as_ref().map(Vec::len))
        & lengths_ok("waves.sigmas", sigmas.as_ref().map(Vec::len))
        & lengths_ok("waves.masses", masses.as_ref().map(Vec::len));
    let sigmas = r.check("waves.sigmas", sigmas, |s| s.iter().all(|x| *x > 0.0), "positive");
    let masses = r.check("waves.masses", masses, |s| s.iter().all(|x| *x > 0.0), "positive");
    let pair = pair(r);
    let time = time(r, Splitting::Strang);
    let overlap_threshold = r.positive_or("tolerance.overlap", dsqm::manybody::DEFAULT_OVERLAP_THRESHOLD);
    let tol_center = r.positive_or("tolerance.center", 0.01);
    let (centers, velocities, sigmas, masses) = (centers?, velocities?, sigmas?, masses?);
    if !ok {
        return None;
    }
    let waves = (0..centers.len())
        .map(|j| WaveSpec { center: centers[j], velocity: velocities[j], sigma: sigmas[j], mass: masses[j] })
        .collect();
    Some(Params::ManyBody(ManyBodySpec {
        grid: grid?,
        hbar: hbar?,
        waves,
        pair: pair?,
        time: time?,
        overlap_threshold: overlap_threshold?,
        tol_center: tol_center?,
    }))
}

fn double_slit(r: &Reader) -> Option<Params> {
    let (grid, dim) = grid(r);
    if dim.is_some() && dim != Some(2) {
        r.fail("grid.points", "the double slit needs a 2D grid");
    }
    let hbar = r.positive_or("physics.hbar", 1.0);
    let mass = r.positive_or("physics.mass", 1.0);
    let sigma = r.positive("physics.sigma");
    let x0 = r.point("physics.x0", dim);
    let v0 = r.point("physics.v0", dim);
    let position = r.opt::<f64>("barrier.position", 0.0);
    let thickness = r.positive("barrier.thickness");
    let centers = r.list::<f64>("barrier.slit_centers");
    let widths = r.list::<f64>("barrier.slit_widths");
    let height_factor = r.opt::<f64>("barrier.height_factor", 50.0);
    let height_factor = r.check("barrier.height_factor", height_factor, |h| *h >= 50.0, "at least 50");
    let smoothing_cells = r.positive_or("barrier.smoothing_cells", 2.0);
    let time = time(r, Splitting::Strang);
    let ensemble = ensemble(r, true);
    let detector = r.req::<f64>("detector.x");
    let min_maxima = r.count_or("detector.min_maxima", 3);
    let peak_floor = r.positive_or("detector.peak_floor", 0.01);

    let (grid, mass, v0) = (grid?, mass?, v0?);
    let kinetic = 0.5 * mass * (v0[0] * v0[0] + v0[1] * v0[1]);
    let barrier = Barrier {
        axis: 0,
        position: position?,
        thickness: thickness?,
        slit_centers: centers?,
        slit_widths: widths?,
        height: height_factor? * kinetic,
        smoothing: smoothing_cells? * grid.spacing(0),
    };
    if let Err(e) = barrier.validate() {
        r.fail("barrier.slit_centers", e.to_string());
        return None;
    }
    if !(kinetic > 0.0) {
        r.fail("physics.v0", "the packet must move toward the barrier");
        return None;
    }
    Some(Params::DoubleSlit(DoubleSlitSpec {
        grid,
        hbar: hbar?,
        mass,
        sigma: sigma?,
        x0: x0?,
        v0,
        barrier,
        time: time?,
        ensemble: ensemble??,
        detector: detector?,
        min_maxima: min_maxima?,
        peak_floor: peak_floor?,
    }))
}

/// Parses and validates a whole configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, Vec<ConfigError>> {
    let doc = Document::parse(text)?;
    let r = Reader::new(&doc);
    let version = r.req::<u32>("schema_version");
    if let Some(v) = version {
        if v != SCHEMA_VERSION {
            r.fail("schema_version", format!("unsupported schema version {v} (this build reads {SCHEMA_VERSION})"));
        }
    }
    let kind = match r.raw("kind") {
        Some(s) => match s.parse::<ScenarioKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                r.fail("kind", e);
                None
            }
        },
        None => {
            r.fail("kind", "missing required key");
            None
        }
    };
    let output_dir = r.raw("output.dir").map(PathBuf::from);
    let params = match kind {
        Some(ScenarioKind::CoherentValidate) => coherent(&r),
        Some(ScenarioKind::FreeSpread) => free_spread(&r),
        Some(ScenarioKind::HbarSweep) => hbar_sweep(&r),
        Some(ScenarioKind::Factorize2Body) => factorize(&r),
        Some(ScenarioKind::ManybodyHartree) | Some(ScenarioKind::ManybodyDeltaCompare) => manybody(&r),
        Some(ScenarioKind::DoubleSlit) => double_slit(&r),
        None => {
            // Without a kind every other key is unknown; claim them all so
            // the only report is the missing or bad kind.
            for k in doc.entries.keys() {
                r.raw(k);
            }
            None
        }
    };
    let errors = r.finish();
    match (errors.is_empty(), version, kind, params) {
        (true, Some(schema_version), Some(kind), Some(params)) => {
            Ok(ScenarioConfig { schema_version, kind, params, output_dir, doc })
        }
        (true, ..) => Err(vec![ConfigError { line: None, key: None, message: "invalid configuration".into() }]),
        _ => Err(errors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COHERENT: &str = "\
schema_version = 1
kind = coherent-validate

[grid]
lower = -10, -10
upper = 10, 10
points = 256, 256

[physics]
hbar = 1
mass = 1
omega = 1
x0 = 2, -1

[time]
dt = 0.0031415926535897933
steps = 1000
";

    #[test]
    fn minimal_coherent_config() {
        let c = parse_config(COHERENT).unwrap();
        assert_eq!(c.kind, ScenarioKind::CoherentValidate);
        let Params::Coherent(s) = &c.params else { panic!("wrong params") };
        assert_eq!(s.grid.shape(), (256, 256));
        assert_eq!(s.time.store_every, 1000);
        assert_eq!(s.tol_l2, 1e-6);
        assert!(s.ensemble.is_none());
        assert_eq!(c.seed(), None);
    }

    #[test]
    fn hash_ignores_layout() {
        let a = parse_config(COHERENT).unwrap();
        let shuffled = COHERENT.replace("hbar = 1\n", "").replace("[physics]\n", "[physics]\nhbar=1   # comment\n");
        let b = parse_config(&shuffled).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config(&COHERENT.replace("steps = 1000", "steps = 999")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sweep_ensemble_needs_seed() {
        let text = "\
schema_version = 1
kind = hbar-sweep
[grid]
lower = -16
upper = 16
points = 512
[physics]
sigma = 0.7
v0 = 1
[sweep]
hbars = 1, 0.5
t_end = 1
[time]
dt = 0.01
[ensemble]
count = 100
";
        let errs = parse_config(text).unwrap_err();
        assert_eq!(errs.len(), 1, "{errs:?}");
        assert_eq!(errs[0].key.as_deref(), Some("ensemble.seed"));
        assert!(errs[0].to_string().contains("ensemble.seed"));
    }

    #[test]
    fn duplicate_key_reports_both_lines() {
        let text = "schema_version = 1\nkind = free-spread\nschema_version = 1\n";
        let errs = parse_config(text).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("line 1") && errs[0].message.contains("line 3"), "{}", errs[0]);
        assert_eq!(errs[0].line, Some(3));
    }

    #[test]
    fn collects_every_error() {
        let text = COHERENT
            .replace("omega = 1", "omega = -1")
            .replace("steps = 1000", "steps = 1000\nbogus = 3")
            .replace("points = 256, 256", "points = 256, 200")
            .replace("schema_version = 1\n", "");
        let errs = parse_config(&text).unwrap_err();
        let keys: Vec<_> = errs.iter().filter_map(|e| e.key.clone()).collect();
        for k in ["schema_version", "physics.omega", "time.bogus", "grid.points"] {
            assert!(keys.iter().any(|x| x == k), "missing {k} in {errs:?}");
        }
    }

    #[test]
    fn seed_override_changes_hash() {
        let text = format!("{COHERENT}[ensemble]\ncount = 10\nseed = 1\n");
        let mut c = parse_config(&text).unwrap();
        let h = c.hash();
        c.override_seed(2).unwrap();
        assert_eq!(c.seed(), Some(2));
        assert_ne!(c.hash(), h);
        let mut plain = parse_config(COHERENT).unwrap();
        assert!(plain.override_seed(3).is_err());
    }

    #[test]
    fn double_slit_requires_ensemble_and_tall_wall() {
        let text = "\
schema_version = 1
kind = double-slit
[grid]
lower = -16, -16
upper = 10, 16
points = 256, 256
[physics]
sigma = 1.2
x0 = -5, 0
v0 = 4, 0
[barrier]
thickness = 0.4
slit_centers = -2, 2
slit_widths = 1.2, 1.2
height_factor = 10
[time]
dt = 0.001
steps = 10
[detector]
x = 1
";
        let errs = parse_config(text).unwrap_err();
        let keys: Vec<_> = errs.iter().filter_map(|e| e.key.clone()).collect();
        assert!(keys.contains(&"barrier.height_factor".to_string()), "{errs:?}");
        assert!(keys.contains(&"ensemble.count".to_string()), "{errs:?}");
        assert!(keys.contains(&"ensemble.seed".to_string()), "{errs:?}");
    }

    #[test]
    fn point_lists() {
        let text = "\
schema_version = 1
kind = manybody-hartree
[grid]
lower = -20
upper = 20
points = 512
[waves]
centers = -2; 2
sigmas = 0.2, 0.2
masses = 1, 1
[pair]
k = 1
[time]
dt = 0.01
steps = 10
";
        let c = parse_config(text).unwrap();
        let Params::ManyBody(m) = c.params else { panic!() };
        assert_eq!(m.waves.len(), 2);
        assert_eq!(m.waves[1].center, [2.0, 0.0]);
        assert_eq!(m.waves[0].velocity, [0.0, 0.0]);
        let bad = text.replace("masses = 1, 1", "masses = 1");
        let errs = parse_config(&bad).unwrap_err();
        assert_eq!(errs[0].key.as_deref(), Some("waves.masses"));
    }
}
