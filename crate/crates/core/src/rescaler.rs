//! The multilevel rescaling algorithm.
//!
//! Level `k` integrates the rescaled solution
//! `u^{(k+1)}(ξ, η) = λ^{2/(p-1)} u^{(k)}(λξ, τ_k* + λ²η)` with the same `h`
//! and `τ` as the base level. The finest level is stepped until its
//! interpolated sup-norm reaches `M`; the crossing time `τ_k*` and the region
//! where the profile is at least `αM` are recorded, and a new level is
//! spawned on that region. Coarser levels are stepped on demand, exactly when
//! a finer level asks for a boundary value beyond the coarse level's current
//! time, and just before such a step the coarse values covered by the finer
//! level are overwritten by injection.

use crate::error::{Error, Result};
use crate::interp::{self, SpaceTimeSheet};
use crate::pde_core::{default_initial_data, threshold_m, EquationKind, Grid, RunConfig};
use crate::stepper::{cgl_step, heat_step, CglState, Edges, HeatState, Scheme};

/// Relative slack, in units of `τ`, when comparing level times.
const TIME_SLACK: f64 = 1e-9;

/// Current or previous time slice of one level.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelState {
    Heat(HeatState),
    Cgl(CglState),
}

impl LevelState {
    pub fn grid(&self) -> Grid {
        match self {
            LevelState::Heat(s) => s.grid,
            LevelState::Cgl(s) => s.grid,
        }
    }

    pub fn n(&self) -> u64 {
        match self {
            LevelState::Heat(s) => s.n,
            LevelState::Cgl(s) => s.n,
        }
    }

    /// Real channel (`U` or `V`).
    pub fn re(&self) -> &[f64] {
        match self {
            LevelState::Heat(s) => &s.values,
            LevelState::Cgl(s) => &s.re,
        }
    }

    /// Imaginary channel (`W`), absent for the heat equation.
    pub fn im(&self) -> Option<&[f64]> {
        match self {
            LevelState::Heat(_) => None,
            LevelState::Cgl(s) => Some(&s.im),
        }
    }

    fn channels_mut(&mut self) -> (&mut [f64], Option<&mut [f64]>) {
        match self {
            LevelState::Heat(s) => (&mut s.values, None),
            LevelState::Cgl(s) => (&mut s.re, Some(&mut s.im)),
        }
    }

    /// `|U_j|` (modulus for the complex equation).
    pub fn magnitude(&self, j: usize) -> f64 {
        match self {
            LevelState::Heat(s) => s.values[j].abs(),
            LevelState::Cgl(s) => s.modulus(j),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            LevelState::Heat(s) => s.sup_norm(),
            LevelState::Cgl(s) => s.sup_norm(),
        }
    }

    pub fn from_channels(
        kind: EquationKind,
        grid: Grid,
        re: Vec<f64>,
        im: Option<Vec<f64>>,
    ) -> Self {
        match kind {
            EquationKind::Heat => LevelState::Heat(HeatState::new(grid, re)),
            EquationKind::Cgl => {
                let im = im.unwrap_or_else(|| vec![0.0; re.len()]);
                LevelState::Cgl(CglState::new(grid, re, im))
            }
        }
    }

    fn step(&self, scheme: &Scheme, edges: Edges<(f64, f64)>) -> Result<LevelState> {
        Ok(match self {
            LevelState::Heat(s) => LevelState::Heat(heat_step(
                s,
                scheme,
                Edges {
                    left: edges.left.0,
                    right: edges.right.0,
                },
            )?),
            LevelState::Cgl(s) => LevelState::Cgl(cgl_step(s, scheme, edges)?),
        })
    }
}

/// A time slice sampled on a level grid, one or two channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub grid: Grid,
    pub re: Vec<f64>,
    pub im: Option<Vec<f64>>,
}

impl Profile {
    pub fn magnitude(&self, j: usize) -> f64 {
        match &self.im {
            None => self.re[j].abs(),
            Some(im) => self.re[j].hypot(im[j]),
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.re.len()).map(|j| self.magnitude(j)).collect()
    }

    /// Linear interpolation of both channels at `x`.
    pub fn at(&self, x: f64) -> Result<(f64, f64)> {
        let re = interp::interp_space(&self.re, &self.grid, x)?;
        let im = match &self.im {
            None => 0.0,
            Some(im) => interp::interp_space(im, &self.grid, x)?,
        };
        Ok((re, im))
    }
}

/// What was recorded when a level reached the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub k: usize,
    /// First step index whose sup-norm reached `M`.
    pub n_k: u64,
    /// Crossing time in level units.
    pub tau_star: f64,
    /// Node whose time interpolant reached `M` first.
    pub crossing_node: i64,
    pub i_minus: i64,
    pub i_plus: i64,
    pub xi_minus: f64,
    pub xi_plus: f64,
    /// Solution interpolated to `τ_k*`, channel by channel.
    pub profile: Profile,
    /// Node magnitudes interpolated linearly in time to `τ_k*`; its maximum
    /// is `M` and it defines the rescale interval.
    pub magnitude: Vec<f64>,
}

/// One rescaled solution `U^{(k)}`.
#[derive(Debug, Clone)]
pub struct Level {
    pub k: usize,
    pub grid: Grid,
    pub state: LevelState,
    pub previous: Option<LevelState>,
    /// Level time of `state`.
    pub time: f64,
    /// Level time of `previous`.
    pub previous_time: f64,
    /// Time in the parent's units at which this level starts (`τ_{k-1}*`).
    pub spawn_time: f64,
    /// Parent coordinates whose values feed the two ends of this level.
    pub anchors: Edges<f64>,
    pub record: Option<LevelRecord>,
    /// Every slice this level has held, as `(level time, slice)`, when the
    /// run keeps history.
    pub history: Option<Vec<(f64, LevelState)>>,
    /// Steps taken since spawn.
    pub steps: u64,
}

impl Level {
    fn new(
        k: usize,
        state: LevelState,
        spawn_time: f64,
        anchors: Edges<f64>,
        keep_history: bool,
    ) -> Self {
        let grid = state.grid();
        Level {
            k,
            grid,
            history: keep_history.then(|| vec![(0.0, state.clone())]),
            state,
            previous: None,
            time: 0.0,
            previous_time: 0.0,
            spawn_time,
            anchors,
            record: None,
            steps: 0,
        }
    }

    /// A level holding two slices `previous` at `t_prev` and `state` at
    /// `t_curr`, with no parent link.
    pub fn from_slices(
        k: usize,
        previous: LevelState,
        state: LevelState,
        t_prev: f64,
        t_curr: f64,
    ) -> Result<Self> {
        if previous.grid() != state.grid()
            || t_curr.partial_cmp(&t_prev) != Some(std::cmp::Ordering::Greater)
        {
            return Err(Error::InvalidConfig(
                "slices must share a grid and increase in time".into(),
            ));
        }
        let mut level = Level::new(k, state, 0.0, Edges::both(0.0), false);
        level.previous = Some(previous);
        level.previous_time = t_prev;
        level.time = t_curr;
        Ok(level)
    }

    /// Half grid count `I_k` (the right end index on symmetric grids).
    pub fn half_count(&self) -> i64 {
        self.grid.hi
    }

    /// The two retained slices as sheets, one per channel.
    pub fn sheets(&self) -> Result<(SpaceTimeSheet<'_>, Option<SpaceTimeSheet<'_>>)> {
        let prev = self
            .previous
            .as_ref()
            .ok_or_else(|| Error::Schedule(format!("level {} has not been stepped yet", self.k)))?;
        let re = SpaceTimeSheet::new(
            prev.re(),
            self.state.re(),
            self.grid,
            self.previous_time,
            self.time,
        )?;
        let im = match (prev.im(), self.state.im()) {
            (Some(a), Some(b)) => Some(SpaceTimeSheet::new(
                a,
                b,
                self.grid,
                self.previous_time,
                self.time,
            )?),
            _ => None,
        };
        Ok((re, im))
    }

    /// Value (re, im) at level coordinates `(x, t)` from the retained sheet,
    /// or from the single slice when `t` equals the current time.
    pub fn value_at(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        if self.previous.is_none() || (t - self.time).abs() <= TIME_SLACK * self.tau_hint() {
            if (t - self.time).abs() > TIME_SLACK * self.tau_hint() {
                return Err(Error::Schedule(format!(
                    "level {} queried at t = {t} but holds only t = {}",
                    self.k, self.time
                )));
            }
            let re = interp::interp_space(self.state.re(), &self.grid, x)?;
            let im = match self.state.im() {
                Some(im) => interp::interp_space(im, &self.grid, x)?,
                None => 0.0,
            };
            return Ok((re, im));
        }
        let (re, im) = self.sheets()?;
        let v = interp::interp_space_time(&re, x, t)?;
        let w = match im {
            Some(s) => interp::interp_space_time(&s, x, t)?,
            None => 0.0,
        };
        Ok((v, w))
    }

    fn tau_hint(&self) -> f64 {
        if self.previous.is_some() {
            self.time - self.previous_time
        } else {
            1.0
        }
    }

    fn step(&mut self, scheme: &Scheme, edges: Edges<(f64, f64)>, tau: f64) -> Result<()> {
        let next = self.state.step(scheme, edges).map_err(|e| match e {
            Error::Overflow { step, .. } => Error::Overflow {
                level: self.k,
                step,
            },
            other => other,
        })?;
        self.previous = Some(std::mem::replace(&mut self.state, next));
        self.previous_time = self.time;
        self.time = self.state.n() as f64 * tau;
        self.steps += 1;
        if let Some(h) = self.history.as_mut() {
            h.push((self.time, self.state.clone()));
        }
        Ok(())
    }
}

/// Per-node linear-in-time magnitudes at `t` from the two retained slices.
fn magnitudes_at(level: &Level, t: f64) -> Result<Vec<f64>> {
    let prev = level
        .previous
        .as_ref()
        .ok_or_else(|| Error::Schedule(format!("level {} has no previous slice", level.k)))?;
    let span = level.time - level.previous_time;
    let wb = ((t - level.previous_time) / span).clamp(0.0, 1.0);
    let wa = ((level.time - t) / span).clamp(0.0, 1.0);
    Ok((0..level.grid.len())
        .map(|j| wa * prev.magnitude(j) + wb * level.state.magnitude(j))
        .collect())
}

/// Earliest time in the last step at which the time-linear interpolant of
/// some node's magnitude equals `m`, with the node that attains it (ties go
/// to the smaller `|i|`, then to the right).
pub fn crossing_time_and_node(level: &Level, m: f64) -> Result<(f64, i64)> {
    let prev = level.previous.as_ref().ok_or(Error::NoCrossing)?;
    let (t0, t1) = (level.previous_time, level.time);
    let mut best: Option<(f64, i64)> = None;
    for i in level.grid.nodes() {
        let j = level.grid.offset(i);
        let a = prev.magnitude(j);
        let b = level.state.magnitude(j);
        let t = if a == m {
            t0
        } else if a > m {
            return Err(Error::NoCrossing);
        } else if b >= m {
            let w = (m - a) / (b - a);
            (t0 + w * (t1 - t0)).clamp(t0, t1)
        } else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bt, bi)) => {
                t < bt || (t == bt && (i.abs() < bi.abs() || (i.abs() == bi.abs() && i > bi)))
            }
        };
        if better {
            best = Some((t, i));
        }
    }
    best.ok_or(Error::NoCrossing)
}

/// `τ_k*`: the earliest time in the last step at which the interpolated
/// sup-norm equals `m`.
pub fn find_crossing_time(level: &Level, m: f64) -> Result<f64> {
    crossing_time_and_node(level, m).map(|(t, _)| t)
}

/// Scans outward from `start` for the last nodes still at or above
/// `threshold`: returns `(i⁻, i⁺)` with `f(i⁻-1) < threshold <= f(i⁻)` and
/// `f(i⁺+1) < threshold <= f(i⁺)`.
pub fn scan_interval(
    magnitude: &[f64],
    grid: &Grid,
    start: i64,
    threshold: f64,
    symmetric: bool,
    k: usize,
) -> Result<(i64, i64)> {
    let f = |i: i64| magnitude[grid.offset(i)];
    let degenerate = |reason: String| Error::DegenerateInterval { level: k, reason };
    if f(start) < threshold {
        return Err(degenerate(format!(
            "start node {start} is below the interval threshold"
        )));
    }
    let mut hi = start;
    while hi < grid.hi && f(hi + 1) >= threshold {
        hi += 1;
    }
    if hi == grid.hi {
        return Err(degenerate(
            "profile stays above αM up to the right boundary".into(),
        ));
    }
    let lo = if symmetric {
        -hi
    } else {
        let mut lo = start;
        while lo > grid.lo && f(lo - 1) >= threshold {
            lo -= 1;
        }
        if lo == grid.lo {
            return Err(degenerate(
                "profile stays above αM down to the left boundary".into(),
            ));
        }
        lo
    };
    if hi <= 0 && symmetric {
        return Err(degenerate("i⁺ = 0 leaves an empty refined grid".into()));
    }
    if hi <= lo {
        return Err(degenerate(format!("empty interval ({lo}, {hi})")));
    }
    Ok((lo, hi))
}

/// `(i⁻, i⁺)` bracketing the region where the profile at `tau_star` is at
/// least `αM` (magnitudes for the complex equation).
pub fn find_rescale_interval(
    level: &Level,
    tau_star: f64,
    alpha: f64,
    m: f64,
    symmetric: bool,
) -> Result<(i64, i64)> {
    let mags = magnitudes_at(level, tau_star)?;
    let start = argmax_node(&mags, &level.grid);
    scan_interval(&mags, &level.grid, start, alpha * m, symmetric, level.k)
}

fn argmax_node(mags: &[f64], grid: &Grid) -> i64 {
    let mut best = 0i64.clamp(grid.lo, grid.hi);
    for i in grid.nodes() {
        let (v, b) = (mags[grid.offset(i)], mags[grid.offset(best)]);
        if v > b || (v == b && i.abs() < best.abs()) {
            best = i;
        }
    }
    best
}

/// Checks both bracketing inequalities of a recorded interval.
pub fn interval_satisfies_bracketing(record: &LevelRecord, alpha: f64, m: f64) -> bool {
    let g = &record.profile.grid;
    let f = |i: i64| record.magnitude[g.offset(i)];
    let t = alpha * m;
    let (lo, hi) = (record.i_minus, record.i_plus);
    lo > g.lo && hi < g.hi && f(lo - 1) < t && t <= f(lo) && f(hi + 1) < t && t <= f(hi)
}

/// Builds level `k+1` from the parent's recorded crossing:
/// `φ_i = λ^{2/(p-1)} U^{(k)}(λξ_i, τ_k*)` on nodes `λ⁻¹i⁻ ..= λ⁻¹i⁺`.
pub fn spawn_level(parent: &Level, config: &RunConfig, keep_history: bool) -> Result<Level> {
    let rec = parent
        .record
        .as_ref()
        .ok_or_else(|| Error::DegenerateInterval {
            level: parent.k,
            reason: "parent has no recorded crossing".into(),
        })?;
    if rec.i_plus <= 0 && rec.i_minus >= 0 {
        return Err(Error::DegenerateInterval {
            level: parent.k,
            reason: "i⁺ = 0".into(),
        });
    }
    let li = config.lambda_inv as i64;
    let lambda = config.lambda();
    let grid = Grid {
        lo: li * rec.i_minus,
        hi: li * rec.i_plus,
        h: parent.grid.h,
    };
    assert_eq!(grid.hi, li * rec.i_plus, "child grid count must be λ⁻¹·i⁺");
    let c = config.zoom_factor();
    let mut re = Vec::with_capacity(grid.len());
    let mut im = rec
        .profile
        .im
        .as_ref()
        .map(|_| Vec::with_capacity(grid.len()));
    for i in grid.nodes() {
        let (v, w) = rec.profile.at(lambda * grid.x(i))?;
        re.push(c * v);
        if let Some(im) = im.as_mut() {
            im.push(c * w);
        }
    }
    let state = LevelState::from_channels(config.equation, grid, re, im);
    let anchors = Edges {
        left: rec.xi_minus,
        right: rec.xi_plus,
    };
    Ok(Level::new(
        parent.k + 1,
        state,
        rec.tau_star,
        anchors,
        keep_history,
    ))
}

/// Boundary values for the child's step `n`:
/// `ψ_n = λ^{2/(p-1)} U^{(k)}(ξ_{k,i±}, τ_k* + λ²nτ)`.
pub fn boundary_feed(parent: &Level, n: u64, config: &RunConfig) -> Result<Edges<(f64, f64)>> {
    let rec = parent.record.as_ref().ok_or_else(|| {
        Error::Schedule(format!("level {} has no crossing to feed from", parent.k))
    })?;
    let lambda = config.lambda();
    let t = rec.tau_star + lambda * lambda * n as f64 * config.tau();
    feed_at(
        parent,
        Edges {
            left: rec.xi_minus,
            right: rec.xi_plus,
        },
        t,
        config,
    )
}

fn feed_at(
    parent: &Level,
    anchors: Edges<f64>,
    t: f64,
    config: &RunConfig,
) -> Result<Edges<(f64, f64)>> {
    let lo_ok =
        t >= parent.previous_time - TIME_SLACK * parent.tau_hint() || parent.previous.is_none();
    let hi_ok = t <= parent.time + TIME_SLACK * parent.tau_hint();
    if !(lo_ok && hi_ok) {
        return Err(Error::Schedule(format!(
            "feed time {t} outside level {} sheet [{}, {}]",
            parent.k, parent.previous_time, parent.time
        )));
    }
    let c = config.zoom_factor();
    let right = parent.value_at(anchors.right, t)?;
    let right = (c * right.0, c * right.1);
    let left = if config.symmetric {
        right
    } else {
        let l = parent.value_at(anchors.left, t)?;
        (c * l.0, c * l.1)
    };
    Ok(Edges { left, right })
}

/// Overwrites the coarse values strictly inside the refined interval with the
/// finer level's values at the coinciding nodes, scaled by `λ^{-2/(p-1)}`.
pub fn update_coarse(fine: &Level, coarse: &mut Level, config: &RunConfig) -> Result<()> {
    let rec = coarse.record.as_ref().ok_or_else(|| {
        Error::Schedule(format!(
            "level {} has no refined interval to update",
            coarse.k
        ))
    })?;
    let (lo, hi) = (rec.i_minus, rec.i_plus);
    let li = config.lambda_inv as i64;
    let inv = 1.0 / config.zoom_factor();
    let fine_re = fine.state.re();
    let fine_im = fine.state.im();
    let cgrid = coarse.grid;
    let fgrid = fine.grid;
    let (re, im) = coarse.state.channels_mut();
    let mut im = im;
    for i in (lo + 1)..hi {
        let fj = fgrid.offset(li * i);
        let cj = cgrid.offset(i);
        re[cj] = inv * fine_re[fj];
        if let (Some(im), Some(fim)) = (im.as_deref_mut(), fine_im) {
            im[cj] = inv * fim[fj];
        }
    }
    if let Some(h) = coarse.history.as_mut() {
        if let Some(last) = h.last_mut() {
            last.1 = coarse.state.clone();
        }
    }
    Ok(())
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum BlowupOutcome {
    /// Every level `0..=k_reached` crossed the threshold; `t_htau` is the
    /// partial sum `Σ λ^{2k} τ_k*`.
    BlewUp { t_htau: f64, k_reached: usize },
    /// The finest level used up its step budget without reaching `M`.
    NoBlowupDetected { level: usize, steps: u64 },
}

impl BlowupOutcome {
    pub fn blew_up(&self) -> bool {
        matches!(self, BlowupOutcome::BlewUp { .. })
    }
}

/// Run diagnostics that do not change the result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Set when the run was not in symmetric mode; each end of a refined
    /// level is then fed from its own anchor.
    pub asymmetric: bool,
    /// `sup‖φ^{(k)}‖ - 2A` for every spawned level.
    pub spawn_residuals: Vec<f64>,
    /// Whether each recorded interval satisfies both bracketing inequalities.
    pub interval_checks: Vec<bool>,
    /// Steps taken by each level over the whole run.
    pub steps_per_level: Vec<u64>,
    /// Composite-solution jumps across each refined-interval edge at the end
    /// of the run, indexed by the finer level `k >= 1`.
    pub boundary_jumps: Vec<f64>,
}

/// The level hierarchy with the cumulative crossing times
/// `μ_q = Σ_{i<=q} λ^{2i} τ_i*` and the physical refined intervals `Ω_k`.
#[derive(Debug, Clone)]
pub struct LevelStack {
    pub config: RunConfig,
    pub levels: Vec<Level>,
    pub mu: Vec<f64>,
    /// `omega[k-1]` is `Ω_k` for `k >= 1`.
    pub omega: Vec<(f64, f64)>,
}

impl LevelStack {
    pub fn records(&self) -> impl Iterator<Item = &LevelRecord> {
        self.levels.iter().filter_map(|l| l.record.as_ref())
    }

    pub fn record(&self, k: usize) -> Option<&LevelRecord> {
        self.levels.get(k).and_then(|l| l.record.as_ref())
    }

    pub fn tau_stars(&self) -> Vec<f64> {
        self.records().map(|r| r.tau_star).collect()
    }

    pub fn finest(&self) -> &Level {
        self.levels
            .last()
            .expect("stack always holds the base level")
    }

    /// Physical start time `μ_{k-1}` of level `k` (0 for the base).
    pub fn start_time(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.mu[k - 1]
        }
    }

    /// Physical time of the finest level's current slice.
    pub fn current_time(&self) -> f64 {
        let k = self.levels.len() - 1;
        self.start_time(k) + self.config.lambda().powi(2 * k as i32) * self.finest().time
    }
}

/// Options that do not change the numerics.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep every slice of every level (needed by [`composite_eval`] away
    /// from the current time).
    pub keep_history: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stack: LevelStack,
    pub outcome: BlowupOutcome,
    pub diagnostics: Diagnostics,
}

/// Drives one run.
pub struct Rescaler {
    config: RunConfig,
    scheme: Scheme,
    m: f64,
    options: RunOptions,
    stack: LevelStack,
    diagnostics: Diagnostics,
}

impl Rescaler {
    /// Base level from the default initial data.
    pub fn new(config: &RunConfig, options: RunOptions) -> Result<Self> {
        let u0 = default_initial_data(config);
        let im0 = (config.equation == EquationKind::Cgl).then(|| vec![0.0; u0.len()]);
        Self::with_initial(config, options, u0, im0)
    }

    /// Base level from caller-supplied data on the base grid.
    pub fn with_initial(
        config: &RunConfig,
        options: RunOptions,
        re: Vec<f64>,
        im: Option<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let grid = config.base_grid();
        if re.len() != grid.len() || im.as_ref().is_some_and(|v| v.len() != grid.len()) {
            return Err(Error::InvalidConfig(format!(
                "initial data must have {} nodes",
                grid.len()
            )));
        }
        let scheme = Scheme::from_config(config);
        let state = LevelState::from_channels(config.equation, grid, re, im);
        let base = Level::new(0, state, 0.0, Edges::both(0.0), options.keep_history);
        Ok(Rescaler {
            config: config.clone(),
            scheme,
            m: threshold_m(config),
            options,
            stack: LevelStack {
                config: config.clone(),
                levels: vec![base],
                mu: Vec::new(),
                omega: Vec::new(),
            },
            diagnostics: Diagnostics {
                asymmetric: !config.symmetric,
                ..Diagnostics::default()
            },
        })
    }

    pub fn stack(&self) -> &LevelStack {
        &self.stack
    }

    pub fn threshold(&self) -> f64 {
        self.m
    }

    /// Steps the finest level once, stepping coarser levels first whenever
    /// the finest level's next boundary time lies beyond them.
    pub fn advance_hierarchy(&mut self) -> Result<()> {
        let k = self.stack.levels.len() - 1;
        self.advance(k)
    }

    fn advance(&mut self, j: usize) -> Result<()> {
        let tau = self.config.tau();
        let edges = if j == 0 {
            Edges::both((0.0, 0.0))
        } else {
            let lambda = self.config.lambda();
            let next_time = (self.stack.levels[j].state.n() + 1) as f64 * tau;
            let t_req = self.stack.levels[j].spawn_time + lambda * lambda * next_time;
            while self.stack.levels[j - 1].time < t_req - TIME_SLACK * tau {
                {
                    let (coarse, fine) = self.stack.levels.split_at_mut(j);
                    update_coarse(&fine[0], &mut coarse[j - 1], &self.config)?;
                }
                self.advance(j - 1)?;
            }
            let level = &self.stack.levels[j];
            feed_at(
                &self.stack.levels[j - 1],
                level.anchors,
                t_req,
                &self.config,
            )?
        };
        self.stack.levels[j].step(&self.scheme, edges, tau)
    }

    /// Records the finest level's crossing: `τ_k*`, the rescale interval and
    /// the profile at `τ_k*`.
    fn record_crossing(&mut self) -> Result<()> {
        let m = self.m;
        let alpha = self.config.alpha;
        let symmetric = self.config.symmetric;
        let lambda = self.config.lambda();
        let level = self.stack.levels.last().expect("base level");
        let k = level.k;
        let (tau_star, node) = crossing_time_and_node(level, m)?;
        let mags = magnitudes_at(level, tau_star)?;
        let start = if symmetric {
            argmax_node(&mags, &level.grid)
        } else {
            node
        };
        let (i_minus, i_plus) = scan_interval(&mags, &level.grid, start, alpha * m, symmetric, k)?;
        let (re_sheet, im_sheet) = level.sheets()?;
        let profile = Profile {
            grid: level.grid,
            re: re_sheet.slice_at(tau_star)?,
            im: match im_sheet {
                Some(s) => Some(s.slice_at(tau_star)?),
                None => None,
            },
        };
        let h = level.grid.h;
        let record = LevelRecord {
            k,
            n_k: level.state.n(),
            tau_star,
            crossing_node: node,
            i_minus,
            i_plus,
            xi_minus: i_minus as f64 * h,
            xi_plus: i_plus as f64 * h,
            profile,
            magnitude: mags,
        };
        self.diagnostics
            .interval_checks
            .push(interval_satisfies_bracketing(&record, alpha, m));
        let prev_mu = if k == 0 { 0.0 } else { self.stack.mu[k - 1] };
        self.stack
            .mu
            .push(prev_mu + lambda.powi(2 * k as i32) * tau_star);
        self.stack.levels[k].record = Some(record);
        Ok(())
    }

    fn spawn(&mut self) -> Result<()> {
        let parent = self.stack.levels.last().expect("base level");
        let child = spawn_level(parent, &self.config, self.options.keep_history)?;
        let k = child.k;
        let scale = self.config.lambda().powi(k as i32);
        self.stack
            .omega
            .push((scale * child.grid.x_min(), scale * child.grid.x_max()));
        self.diagnostics
            .spawn_residuals
            .push(child.state.sup_norm() - 2.0 * self.config.amplitude);
        self.stack.levels.push(child);
        Ok(())
    }

    /// Whether the finest level's current slice has reached `M`.
    pub fn finest_crossed(&self) -> bool {
        self.stack.finest().state.sup_norm() >= self.m
    }

    /// Records the finest level's crossing and spawns the next level.
    pub fn rescale(&mut self) -> Result<()> {
        self.record_crossing()?;
        self.spawn()
    }

    /// Runs the initial and iterative phases until `K_max` rescalings or
    /// until the finest level exhausts its step budget. `progress` sees each
    /// record as it is made.
    pub fn run(mut self, mut progress: impl FnMut(&LevelRecord)) -> Result<RunOutput> {
        let cap = self.config.effective_step_cap();
        let outcome = loop {
            let k = self.stack.levels.len() - 1;
            let mut crossed = false;
            while self.stack.levels[k].steps < cap {
                self.advance_hierarchy()?;
                if self.stack.levels[k].state.sup_norm() >= self.m {
                    crossed = true;
                    break;
                }
            }
            if !crossed {
                break BlowupOutcome::NoBlowupDetected {
                    level: k,
                    steps: self.stack.levels[k].steps,
                };
            }
            self.record_crossing()?;
            progress(self.stack.levels[k].record.as_ref().expect("just recorded"));
            if k >= self.config.k_max {
                break BlowupOutcome::BlewUp {
                    t_htau: blowup_time(&self.stack.tau_stars(), self.config.lambda()),
                    k_reached: k,
                };
            }
            self.spawn()?;
        };
        self.diagnostics.steps_per_level = self.stack.levels.iter().map(|l| l.steps).collect();
        self.diagnostics.boundary_jumps = boundary_jumps(&self.stack);
        Ok(RunOutput {
            stack: self.stack,
            outcome,
            diagnostics: self.diagnostics,
        })
    }
}

/// Runs `config` from the default initial data.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    Rescaler::new(config, RunOptions::default())?.run(|_| {})
}

/// `T_{h,τ} ≈ Σ_{k=0}^{K} λ^{2k} τ_k*`.
pub fn blowup_time(tau_stars: &[f64], lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let mut w = 1.0;
    let mut sum = 0.0;
    for t in tau_stars {
        sum += w * t;
        w *= l2;
    }
    sum
}

/// Bound on the omitted tail `Σ_{k>K} λ^{2k} τ_k*` assuming every later
/// crossing time stays below `max τ*`.
pub fn blowup_tail_bound(tau_stars: &[f64], lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let max = tau_stars.iter().cloned().fold(0.0, f64::max);
    l2.powi(tau_stars.len() as i32) * max / (1.0 - l2)
}

fn level_for_time(stack: &LevelStack, t: f64) -> usize {
    let last = stack.levels.len() - 1;
    stack
        .mu
        .iter()
        .take(last)
        .position(|&mu| t < mu)
        .unwrap_or(last)
}

fn level_value(level: &Level, xi: f64, eta: f64) -> Result<(f64, f64)> {
    if let Some(hist) = &level.history {
        let idx = hist.partition_point(|(t, _)| *t < eta);
        let tol = TIME_SLACK * level.tau_hint();
        if idx < hist.len() && (hist[idx].0 - eta).abs() <= tol {
            let s = &hist[idx].1;
            let re = interp::interp_space(s.re(), &level.grid, xi)?;
            let im = match s.im() {
                Some(im) => interp::interp_space(im, &level.grid, xi)?,
                None => 0.0,
            };
            return Ok((re, im));
        }
        if idx == 0 || idx >= hist.len() {
            return Err(Error::OutOfRange {
                what: "t",
                value: eta,
                lo: hist[0].0,
                hi: hist[hist.len() - 1].0,
            });
        }
        let (t0, a) = &hist[idx - 1];
        let (t1, b) = &hist[idx];
        let sheet = SpaceTimeSheet::new(a.re(), b.re(), level.grid, *t0, *t1)?;
        let re = interp::interp_space_time(&sheet, xi, eta)?;
        let im = match (a.im(), b.im()) {
            (Some(ai), Some(bi)) => interp::interp_space_time(
                &SpaceTimeSheet::new(ai, bi, level.grid, *t0, *t1)?,
                xi,
                eta,
            )?,
            _ => 0.0,
        };
        return Ok((re, im));
    }
    level.value_at(xi, eta)
}

/// The composite solution at physical `(x, t)`: the deepest level active at
/// `t` whose refined interval contains `x`, evaluated at
/// `(λ^{-k}x, λ^{-2k}(t - μ_{k-1}))` and scaled by `λ^{-2k/(p-1)}`.
///
/// Without history a level can only be evaluated inside its two retained
/// slices, so only times near the finest level's current time resolve.
pub fn composite_eval(stack: &LevelStack, x: f64, t: f64) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::OutOfRange {
            what: "x",
            value: x,
            lo: -1.0,
            hi: 1.0,
        });
    }
    let horizon = stack.current_time();
    if t < 0.0 || t > horizon * (1.0 + 1e-12) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            lo: 0.0,
            hi: horizon,
        });
    }
    let top = level_for_time(stack, t);
    let mut k = top;
    while k > 0 {
        let (a, b) = stack.omega[k - 1];
        if x > a && x < b {
            break;
        }
        k -= 1;
    }
    let lambda = stack.config.lambda();
    let p = stack.config.p;
    let level = &stack.levels[k];
    let xi = x / lambda.powi(k as i32);
    let eta = (t - stack.start_time(k)) / lambda.powi(2 * k as i32);
    let (re, im) = level_value(level, xi, eta)?;
    let c = lambda.powf(-2.0 * k as f64 / (p - 1.0));
    Ok((c * re, c * im))
}

/// Jump of the composite solution across the right edge of each refined
/// interval, evaluated at the finer level's current time (which the coarser
/// level's retained sheet always brackets).
fn boundary_jumps(stack: &LevelStack) -> Vec<f64> {
    let lambda = stack.config.lambda();
    let p = stack.config.p;
    (1..stack.levels.len())
        .map(|k| {
            let fine = &stack.levels[k];
            let coarse = &stack.levels[k - 1];
            let t = stack.start_time(k) + lambda.powi(2 * k as i32) * fine.time;
            let x = stack.omega[k - 1].1;
            let eta_f = (t - stack.start_time(k)) / lambda.powi(2 * k as i32);
            let eta_c = (t - stack.start_time(k - 1)) / lambda.powi(2 * (k - 1) as i32);
            let cf = lambda.powf(-2.0 * k as f64 / (p - 1.0));
            let cc = lambda.powf(-2.0 * (k - 1) as f64 / (p - 1.0));
            let vf = level_value(fine, x / lambda.powi(k as i32), eta_f);
            let vc = level_value(coarse, x / lambda.powi(k as i32 - 1), eta_c);
            match (vf, vc) {
                (Ok(a), Ok(b)) => (cf * a.0 - cc * b.0).hypot(cf * a.1 - cc * b.1),
                _ => f64::NAN,
            }
        })
        .collect()
}
