//! Stationary and transition sampling, and dyadic-grid path simulation.
//!
//! Transitions use a precomputed inverse-CDF surface. Rows are indexed by the
//! source angle `φx` on a uniform grid (a cosine-spaced grid in `x`), columns
//! by `z = ln(u/(1−u))` on a uniform grid, so both tails of every row get the
//! same resolution. Entries are quantile angles; the chain is advanced in
//! angle coordinates and mapped to states by `x = −L cos φ`.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    state_angle, ConditionalLaw, MarginalDensity, NumericConfig, TransitionKernel,
};
use crate::error::{Error, Result};
use crate::numerics::QuadConfig;
use crate::qseries::{QParams, SeriesConfig};

pub const DEFAULT_NX: usize = 512;
pub const DEFAULT_NU: usize = 1024;
/// Largest `|logit u|` on the column grid; levels beyond it interpolate
/// linearly in `u` towards the support endpoints.
pub const DEFAULT_Z_MAX: f64 = 27.631021115928547; // ln(1e12)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn with_stream(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }

    /// Generator for this stream. Streams of one master seed never overlap.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform draw from the open interval `(0, 1)`.
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryDraw {
    pub x: f64,
    pub trials: u32,
}

/// Rejection sampler for the stationary law with a uniform proposal.
#[derive(Debug, Clone)]
pub struct StationarySampler {
    density: MarginalDensity,
    sup: f64,
}

impl StationarySampler {
    pub fn new(qp: &QParams, cfg: &SeriesConfig) -> Result<Self> {
        let density = MarginalDensity::new(qp, cfg)?;
        // guard against the refined maximum sitting a rounding error low
        let sup = density.sup() * (1.0 + 1e-9);
        Ok(Self { density, sup })
    }

    /// Expected number of proposals per draw, `M = 2L·sup p`.
    pub fn envelope(&self) -> f64 {
        2.0 * self.density.params().half_width() * self.sup
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StationaryDraw {
        let l = self.density.params().half_width();
        let mut trials = 0;
        loop {
            trials += 1;
            let x = -l + 2.0 * l * rng.random::<f64>();
            let v: f64 = rng.random();
            if v * self.sup < self.density.pdf(x) {
                return StationaryDraw { x, trials };
            }
        }
    }
}

/// One stationary draw from the stream identified by `seed`.
pub fn sample_stationary(
    qp: &QParams,
    seed: RngSeed,
    cfg: &SeriesConfig,
) -> Result<StationaryDraw> {
    Ok(StationarySampler::new(qp, cfg)?.sample(&mut seed.rng()))
}

/// Conditional quantile surface of `p_{0,δ}(x, ·)`, `δ = 2^{−n}`.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionTable {
    qp: QParams,
    n: u32,
    delta: f64,
    x_grid: Vec<f64>,
    u_grid: Vec<f64>,
    /// Row-major `Nx × Nu` quantile angles.
    angles: Vec<f64>,
    z_max: f64,
    #[serde(skip)]
    row_scale: f64,
    #[serde(skip)]
    col_scale: f64,
    #[serde(skip)]
    u_first: f64,
}

/// `(u, 1 − u)` for column `j`, both to full relative precision.
fn column_level(j: usize, nu: usize, z_max: f64) -> (f64, f64) {
    if j == 0 {
        return (0.0, 1.0);
    }
    if j == nu - 1 {
        return (1.0, 0.0);
    }
    let z = -z_max + 2.0 * z_max * (j - 1) as f64 / (nu - 3) as f64;
    (logistic(z), logistic(-z))
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Quadrature settings for table rows; tighter than the general default so
/// that tail levels near `1e−12` are resolved.
pub fn table_quad_config() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_subdivisions: 4000,
    }
}

/// Builds the table with the default column range. Rows are independent and
/// computed in parallel; the result does not depend on the thread count.
pub fn build_transition_table(
    qp: &QParams,
    n: u32,
    nx: usize,
    nu: usize,
    cfg: &NumericConfig,
) -> Result<TransitionTable> {
    build_transition_table_with(qp, n, nx, nu, DEFAULT_Z_MAX, cfg)
}

pub fn build_transition_table_with(
    qp: &QParams,
    n: u32,
    nx: usize,
    nu: usize,
    z_max: f64,
    cfg: &NumericConfig,
) -> Result<TransitionTable> {
    if nx < 2 || nu < 4 {
        return Err(Error::InvalidInput(format!(
            "table needs Nx >= 2 and Nu >= 4 (got {nx} x {nu})"
        )));
    }
    if n > 40 {
        return Err(Error::InvalidInput(format!(
            "dyadic level n = {n} is too fine"
        )));
    }
    if !(z_max > 0.0 && z_max.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "z_max = {z_max} must be positive"
        )));
    }
    let l = qp.half_width();
    let delta = (-(n as f64)).exp2();
    let kernel = TransitionKernel::new(qp, delta, &cfg.series)?;
    let x_grid: Vec<f64> = (0..nx)
        .map(|i| -l * (PI * i as f64 / (nx - 1) as f64).cos())
        .collect();
    let levels: Vec<(f64, f64)> = (0..nu).map(|j| column_level(j, nu, z_max)).collect();
    let rows: Vec<Vec<f64>> = x_grid
        .par_iter()
        .map(|&x| {
            let law =
                ConditionalLaw::new(&kernel, x, &cfg.quad).map_err(|e| Error::TableEntry {
                    x,
                    u: f64::NAN,
                    source: Box::new(e),
                })?;
            let mut row = Vec::with_capacity(nu);
            let mut prev = 0.0f64;
            for &(u, uc) in &levels {
                let a = law.quantile_angle(u, uc).map_err(|e| Error::TableEntry {
                    x,
                    u,
                    source: Box::new(e),
                })?;
                // per-level root finding is independent; keep rows monotone
                prev = prev.max(a);
                row.push(prev);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let angles = rows.concat();
    Ok(TransitionTable {
        qp: *qp,
        n,
        delta,
        x_grid,
        u_grid: levels.iter().map(|p| p.0).collect(),
        angles,
        z_max,
        row_scale: (nx - 1) as f64 / PI,
        col_scale: (nu - 3) as f64 / (2.0 * z_max),
        u_first: levels[1].0,
    })
}

impl TransitionTable {
    pub fn params(&self) -> &QParams {
        &self.qp
    }
    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }
    pub fn u_grid(&self) -> &[f64] {
        &self.u_grid
    }
    pub fn nx(&self) -> usize {
        self.x_grid.len()
    }
    pub fn nu(&self) -> usize {
        self.u_grid.len()
    }
    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    /// `1 − u_grid[j]` without cancellation.
    pub fn u_complement(&self, j: usize) -> f64 {
        column_level(j, self.nu(), self.z_max).1
    }

    /// Stored quantile at row `i`, column `j`, as a state.
    pub fn quantile(&self, i: usize, j: usize) -> f64 {
        let l = self.qp.half_width();
        (-l * self.angles[i * self.nu() + j].cos()).clamp(-l, l)
    }

    pub fn quantile_angle(&self, i: usize, j: usize) -> f64 {
        self.angles[i * self.nu() + j]
    }

    /// Column index and weight for level `u` (`uc = 1 − u`).
    #[inline]
    fn column(&self, u: f64, uc: f64) -> (usize, f64) {
        let nu = self.nu();
        if u < self.u_first {
            (0, u / self.u_first)
        } else if uc < self.u_first {
            (nu - 2, 1.0 - uc / self.u_first)
        } else {
            let pos = ((u / uc).ln() + self.z_max) * self.col_scale + 1.0;
            let j = (pos as usize).clamp(1, nu - 3);
            (j, (pos - j as f64).clamp(0.0, 1.0))
        }
    }

    /// One transition in angle coordinates. `u ∈ (0, 1)`.
    #[inline]
    pub fn step_angle(&self, phi: f64, u: f64) -> f64 {
        let nx = self.nx();
        let nu = self.nu();
        let pos = (phi * self.row_scale).max(0.0);
        let i = (pos as usize).min(nx - 2);
        let wx = (pos - i as f64).min(1.0);
        let (j, wu) = self.column(u, 1.0 - u);
        let r0 = i * nu + j;
        let r1 = r0 + nu;
        let a = self.angles[r0] + wu * (self.angles[r0 + 1] - self.angles[r0]);
        let b = self.angles[r1] + wu * (self.angles[r1 + 1] - self.angles[r1]);
        (a + wx * (b - a)).clamp(0.0, PI)
    }
}

/// Bilinear interpolation of the quantile surface at `(x, u)`, clamped to
/// `[−L, L]`.
pub fn sample_transition(table: &TransitionTable, x: f64, u: f64) -> f64 {
    let l = table.qp.half_width();
    let phi = table.step_angle(state_angle(x, l), u);
    (-l * phi.cos()).clamp(-l, l)
}

/// Largest `|F(Q̃(x,u)) − u|` over levels between the table columns, where
/// `Q̃` is the interpolated quantile and `F` the conditional CDF. This is
/// the Kolmogorov distance between the sampled and exact laws at `x`, up to
/// the probe resolution.
pub fn table_bias(
    table: &TransitionTable,
    x: f64,
    probes_per_cell: usize,
    cfg: &NumericConfig,
) -> Result<f64> {
    let kernel = TransitionKernel::new(&table.qp, table.delta, &cfg.series)?;
    let law = ConditionalLaw::new(&kernel, x, &cfg.quad)?;
    let mut worst = 0.0f64;
    let nu = table.nu();
    for j in 1..nu - 2 {
        for p in 0..=probes_per_cell {
            let (u0, _) = column_level(j, nu, table.z_max);
            let (u1, _) = column_level(j + 1, nu, table.z_max);
            let u = u0 + (u1 - u0) * p as f64 / probes_per_cell.max(1) as f64;
            if !(u > 0.0 && u < 1.0) {
                continue;
            }
            let y = sample_transition(table, x, u);
            worst = worst.max((law.cdf(y) - u).abs());
        }
    }
    Ok(worst)
}

/// Sampled trajectory on the grid `i/2^n`, `i = 0..=horizon·2^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathGrid {
    n: u32,
    horizon: u64,
    half_width: f64,
    values: Vec<f64>,
    seed: Option<RngSeed>,
}

impl PathGrid {
    /// Wraps given values, checking length and support.
    pub fn from_values(
        qp: &QParams,
        n: u32,
        horizon: u64,
        values: Vec<f64>,
        seed: Option<RngSeed>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        let expected = horizon
            .checked_mul(1u64 << n)
            .and_then(|s| s.checked_add(1))
            .ok_or_else(|| Error::InvalidInput("path too long".into()))?;
        if values.len() as u64 != expected {
            return Err(Error::InvalidInput(format!(
                "path has {} values, expected horizon*2^n + 1 = {expected}",
                values.len()
            )));
        }
        let l = qp.half_width();
        if let Some(v) = values.iter().find(|v| !(v.abs() <= l)) {
            return Err(Error::Domain(format!("path value {v} outside [-{l}, {l}]")));
        }
        Ok(Self {
            n,
            horizon,
            half_width: l,
            values,
            seed,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn horizon(&self) -> u64 {
        self.horizon
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn seed(&self) -> Option<RngSeed> {
        self.seed
    }

    /// CSV with header `t,x`; `t = i/2^n` in exact fixed-point decimal.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x")?;
        let scale = (-(self.n as f64)).exp2();
        let digits = self.n as usize;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.*},{}", digits, i as f64 * scale, v)?;
        }
        Ok(())
    }
}

/// Stationary start plus table-driven transitions.
pub struct PathSimulator<'a> {
    table: &'a TransitionTable,
    stationary: StationarySampler,
}

impl<'a> PathSimulator<'a> {
    pub fn new(table: &'a TransitionTable, cfg: &SeriesConfig) -> Result<Self> {
        Ok(Self {
            table,
            stationary: StationarySampler::new(&table.qp, cfg)?,
        })
    }

    pub fn table(&self) -> &TransitionTable {
        self.table
    }

    /// Runs `steps` transitions from a stationary start, calling
    /// `visit(i, φ_i)` for `i = 0..=steps` with the chain in angle form.
    #[inline]
    pub fn run<V: FnMut(u64, f64)>(&self, steps: u64, seed: RngSeed, mut visit: V) {
        let mut rng = seed.rng();
        let l = self.table.qp.half_width();
        let x0 = self.stationary.sample(&mut rng).x;
        let mut phi = state_angle(x0, l);
        visit(0, phi);
        for i in 1..=steps {
            phi = self.table.step_angle(phi, open_unit(&mut rng));
            visit(i, phi);
        }
    }

    pub fn path(&self, horizon: u64, seed: RngSeed) -> Result<PathGrid> {
        let n = self.table.n;
        let steps = horizon
            .checked_mul(1u64 << n)
            .ok_or_else(|| Error::InvalidInput("path too long".into()))?;
        let l = self.table.qp.half_width();
        let mut values = Vec::with_capacity(steps as usize + 1);
        self.run(steps, seed, |_, phi| {
            values.push((-l * phi.cos()).clamp(-l, l))
        });
        PathGrid::from_values(&self.table.qp, n, horizon, values, Some(seed))
    }
}

/// Simulates the chain `X̃_{i/2^n}` over `horizon` unit intervals.
pub fn simulate_path(
    qp: &QParams,
    n: u32,
    horizon: u64,
    seed: RngSeed,
    table: &TransitionTable,
) -> Result<PathGrid> {
    if table.qp.q() != qp.q() || table.n != n {
        return Err(Error::InvalidInput(format!(
            "table was built for q = {}, n = {}, not q = {}, n = {n}",
            table.qp.q(),
            table.n,
            qp.q()
        )));
    }
    PathSimulator::new(table, &SeriesConfig::default())?.path(horizon, seed)
}
