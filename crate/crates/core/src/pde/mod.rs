//! Reference finite-difference solvers on periodic structured grids.
//!
//! Fields are stored node-major, channels-last (`values[node * 2 + ch]`),
//! with nodes flattened row-major (axis 0 slowest), matching mesh node
//! ordering. Spatial derivatives use second-order central stencils with
//! periodic wrap; time integration is classic RK4.

mod io;

pub use io::{read_trajectory, write_trajectory};

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("invalid pde spec: {0}")]
    InvalidSpec(String),
    #[error("state blew up (non-finite value) at step {step}")]
    BlowUp { step: usize },
    #[error("field length {got} does not match grid ({expected})")]
    FieldLength { expected: usize, got: usize },
    #[error("trajectory file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Burgers,
    FitzhughNagumo,
    GrayScott,
}

impl PdeKind {
    pub fn name(&self) -> &'static str {
        match self {
            PdeKind::Burgers => "burgers",
            PdeKind::FitzhughNagumo => "fitzhugh_nagumo",
            PdeKind::GrayScott => "gray_scott",
        }
    }
}

/// Diffusion and reaction coefficients; `alpha`/`beta` are unused by the
/// Burgers system and stored as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub d_u: f64,
    pub d_v: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub kind: PdeKind,
    pub grid: Vec<usize>,
    pub dx: f64,
    pub dt: f64,
    pub steps: usize,
    pub coefficients: Coefficients,
}

impl PdeSpec {
    /// 2D viscous Burgers on the unit square: D = 0.01, dt = 1e-3, dx = 0.02.
    pub fn burgers_2d() -> PdeSpec {
        PdeSpec {
            kind: PdeKind::Burgers,
            grid: vec![50, 50],
            dx: 0.02,
            dt: 0.001,
            steps: 1000,
            coefficients: Coefficients {
                d_u: 0.01,
                d_v: 0.01,
                alpha: 0.0,
                beta: 0.0,
            },
        }
    }

    /// 2D FitzHugh-Nagumo: D_u = 1, D_v = 100, alpha = 0.01, beta = 0.25.
    pub fn fitzhugh_nagumo_2d() -> PdeSpec {
        PdeSpec {
            kind: PdeKind::FitzhughNagumo,
            grid: vec![128, 128],
            dx: 1.0,
            dt: 0.002,
            steps: 3000,
            coefficients: Coefficients {
                d_u: 1.0,
                d_v: 100.0,
                alpha: 0.01,
                beta: 0.25,
            },
        }
    }

    /// 2D Gray-Scott: D_u = 0.2, D_v = 0.1, feed 0.025, kill 0.055.
    pub fn gray_scott_2d() -> PdeSpec {
        PdeSpec {
            kind: PdeKind::GrayScott,
            grid: vec![48, 48],
            dx: 2.0,
            dt: 0.25,
            steps: 3000,
            coefficients: Coefficients {
                d_u: 0.2,
                d_v: 0.1,
                alpha: 0.025,
                beta: 0.055,
            },
        }
    }

    /// 3D Gray-Scott on a 24^3 grid, same coefficients as 2D.
    pub fn gray_scott_3d() -> PdeSpec {
        PdeSpec {
            grid: vec![24, 24, 24],
            ..PdeSpec::gray_scott_2d()
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn channels(&self) -> usize {
        2
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let dim = self.dim();
        if dim != 2 && dim != 3 {
            return Err(PdeError::InvalidSpec(format!("need 2 or 3 axes, got {dim}")));
        }
        if self.kind == PdeKind::Burgers && dim != 2 {
            return Err(PdeError::InvalidSpec(
                "the Burgers system is two-channel and defined on 2D grids".to_string(),
            ));
        }
        if self.grid.iter().any(|&g| g < 3) {
            return Err(PdeError::InvalidSpec(
                "periodic stencils need at least 3 nodes per axis".to_string(),
            ));
        }
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(PdeError::InvalidSpec(format!("dx must be positive, got {}", self.dx)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(PdeError::InvalidSpec(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(PdeError::InvalidSpec("steps must be positive".to_string()));
        }
        Ok(())
    }
}

/// A two-channel field on a grid at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub grid: Vec<usize>,
    /// `[N * 2]`, node-major, channels-last.
    pub values: Vec<f64>,
    pub time: f64,
}

impl FieldState {
    pub fn n_nodes(&self) -> usize {
        self.grid.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IcKind {
    /// Independent normal draws per node and channel.
    Gaussian { mean: f64, std: f64 },
    /// Uniform (u, v) = (1, 0) background with a few rectangular seeds of
    /// (0.5, 0.25); the standard Gray-Scott ignition.
    Blocks,
}

impl IcKind {
    pub fn default_for(kind: PdeKind) -> IcKind {
        match kind {
            PdeKind::GrayScott => IcKind::Blocks,
            _ => IcKind::Gaussian {
                mean: 0.0,
                std: 0.3,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: PdeKind,
    pub grid: Vec<usize>,
    pub dx: f64,
    /// Interval between stored frames (integration dt times the stride).
    pub dt: f64,
    /// Number of stored frames, including the initial condition.
    pub steps: usize,
    pub seed: u64,
    pub ic_kind: IcKind,
    pub coefficients: Coefficients,
    pub frames: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn channels(&self) -> usize {
        2
    }
}

// ── stencils ─────────────────────────────────────────────────────────────

fn grid_strides(grid: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; grid.len()];
    for a in (0..grid.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * grid[a + 1];
    }
    strides
}

fn check_field(grid: &[usize], field: &[f64]) -> Result<(), PdeError> {
    let n: usize = grid.iter().product();
    if field.len() != n {
        return Err(PdeError::FieldLength {
            expected: n,
            got: field.len(),
        });
    }
    Ok(())
}

/// Second-order periodic Laplacian of a scalar field:
/// `sum_a (f[i+1_a] - 2 f[i] + f[i-1_a]) / dx^2`.
pub fn laplacian_periodic(grid: &[usize], field: &[f64], dx: f64) -> Result<Vec<f64>, PdeError> {
    check_field(grid, field)?;
    let strides = grid_strides(grid);
    let inv_dx2 = 1.0 / (dx * dx);
    let n = field.len();
    let mut out = vec![0.0; n];
    for (&g, &s) in grid.iter().zip(&strides) {
        for i in 0..n {
            let c = (i / s) % g;
            let up = if c + 1 == g { i + s - g * s } else { i + s };
            let dn = if c == 0 { i + g * s - s } else { i - s };
            out[i] += (field[up] - 2.0 * field[i] + field[dn]) * inv_dx2;
        }
    }
    Ok(out)
}

/// Second-order periodic central difference along one axis:
/// `(f[i+1_a] - f[i-1_a]) / (2 dx)`.
pub fn gradient_periodic(
    grid: &[usize],
    field: &[f64],
    dx: f64,
    axis: usize,
) -> Result<Vec<f64>, PdeError> {
    check_field(grid, field)?;
    if axis >= grid.len() {
        return Err(PdeError::InvalidSpec(format!(
            "axis {axis} out of range for {} axes",
            grid.len()
        )));
    }
    let strides = grid_strides(grid);
    let (g, s) = (grid[axis], strides[axis]);
    let inv_2dx = 1.0 / (2.0 * dx);
    let n = field.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let c = (i / s) % g;
        let up = if c + 1 == g { i + s - g * s } else { i + s };
        let dn = if c == 0 { i + g * s - s } else { i - s };
        out[i] = (field[up] - field[dn]) * inv_2dx;
    }
    Ok(out)
}

// ── right-hand sides ─────────────────────────────────────────────────────

/// Time derivative of the two-channel state for the given system.
pub fn rhs(spec: &PdeSpec, values: &[f64]) -> Result<Vec<f64>, PdeError> {
    let n = spec.n_nodes();
    if values.len() != 2 * n {
        return Err(PdeError::FieldLength {
            expected: 2 * n,
            got: values.len(),
        });
    }
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        u[i] = values[2 * i];
        v[i] = values[2 * i + 1];
    }
    let c = spec.coefficients;
    let lap_u = laplacian_periodic(&spec.grid, &u, spec.dx)?;
    let lap_v = laplacian_periodic(&spec.grid, &v, spec.dx)?;

    let mut out = vec![0.0; 2 * n];
    match spec.kind {
        PdeKind::Burgers => {
            // u_t + u u_x + v u_y = D lap u (and likewise for v).
            let ux = gradient_periodic(&spec.grid, &u, spec.dx, 0)?;
            let uy = gradient_periodic(&spec.grid, &u, spec.dx, 1)?;
            let vx = gradient_periodic(&spec.grid, &v, spec.dx, 0)?;
            let vy = gradient_periodic(&spec.grid, &v, spec.dx, 1)?;
            for i in 0..n {
                out[2 * i] = c.d_u * lap_u[i] - u[i] * ux[i] - v[i] * uy[i];
                out[2 * i + 1] = c.d_v * lap_v[i] - u[i] * vx[i] - v[i] * vy[i];
            }
        }
        PdeKind::FitzhughNagumo => {
            for i in 0..n {
                out[2 * i] = c.d_u * lap_u[i] + u[i] - u[i].powi(3) - v[i].powi(3) + c.alpha;
                out[2 * i + 1] = c.d_v * lap_v[i] + (u[i] - v[i]) * c.beta;
            }
        }
        PdeKind::GrayScott => {
            for i in 0..n {
                let uvv = u[i] * v[i] * v[i];
                out[2 * i] = c.d_u * lap_u[i] - uvv + c.alpha * (1.0 - u[i]);
                out[2 * i + 1] = c.d_v * lap_v[i] + uvv - (c.alpha + c.beta) * v[i];
            }
        }
    }
    Ok(out)
}

// ── time integration ─────────────────────────────────────────────────────

/// One classic RK4 step of `y' = f(y)` on a flat state vector. The stage
/// combination is `y + dt/6 (k1 + 2 k2 + 2 k3 + k4)`.
pub fn rk4<F>(y: &[f64], dt: f64, f: F) -> Result<Vec<f64>, PdeError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, PdeError>,
{
    let n = y.len();
    let k1 = f(y)?;
    let mut stage = vec![0.0; n];
    for i in 0..n {
        stage[i] = y[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&stage)?;
    for i in 0..n {
        stage[i] = y[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&stage)?;
    for i in 0..n {
        stage[i] = y[i] + dt * k3[i];
    }
    let k4 = f(&stage)?;
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Advances the state one `spec.dt`. A non-finite result is reported as a
/// blow-up (the caller supplies the step index via [`PdeError::BlowUp`]
/// with step 0 here; [`generate_trajectory`] rewrites it).
pub fn rk4_step(spec: &PdeSpec, state: &FieldState) -> Result<FieldState, PdeError> {
    let values = rk4(&state.values, spec.dt, |y| rhs(spec, y))?;
    if !values.iter().all(|v| v.is_finite()) {
        return Err(PdeError::BlowUp { step: 0 });
    }
    Ok(FieldState {
        grid: state.grid.clone(),
        values,
        time: state.time + spec.dt,
    })
}

// ── initial conditions ───────────────────────────────────────────────────

/// Draws an initial condition. All randomness comes from the seed, so equal
/// `(kind, spec, seed)` yield identical states.
pub fn sample_ic(kind: IcKind, spec: &PdeSpec, seed: u64) -> Result<FieldState, PdeError> {
    spec.validate()?;
    let n = spec.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match kind {
        IcKind::Gaussian { mean, std } => {
            if !(std.is_finite() && std >= 0.0) {
                return Err(PdeError::InvalidSpec(format!(
                    "gaussian std must be non-negative, got {std}"
                )));
            }
            if std == 0.0 {
                vec![mean; 2 * n]
            } else {
                let normal = Normal::new(mean, std)
                    .map_err(|e| PdeError::InvalidSpec(e.to_string()))?;
                (0..2 * n).map(|_| normal.sample(&mut rng)).collect()
            }
        }
        IcKind::Blocks => {
            let mut values = vec![0.0; 2 * n];
            for i in 0..n {
                values[2 * i] = 1.0;
            }
            let dim = spec.dim();
            let strides = grid_strides(&spec.grid);
            let blocks = rng.random_range(1..=2usize);
            for _ in 0..blocks {
                let mut lo = vec![0usize; dim];
                let mut hw = vec![0usize; dim];
                for a in 0..dim {
                    let g = spec.grid[a];
                    lo[a] = rng.random_range(0..g);
                    hw[a] = rng.random_range((g / 16).max(2)..=(g / 8).max(3));
                }
                paint_block(&mut values, &spec.grid, &strides, &lo, &hw);
            }
            values
        }
    };
    Ok(FieldState {
        grid: spec.grid.clone(),
        values,
        time: 0.0,
    })
}

fn paint_block(values: &mut [f64], grid: &[usize], strides: &[usize], lo: &[usize], hw: &[usize]) {
    let dim = grid.len();
    let mut coords = vec![0usize; dim];
    let counts: Vec<usize> = hw.iter().map(|&h| 2 * h).collect();
    let total: usize = counts.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..dim).rev() {
            coords[a] = rem % counts[a];
            rem /= counts[a];
        }
        let mut idx = 0;
        for a in 0..dim {
            idx += ((lo[a] + coords[a]) % grid[a]) * strides[a];
        }
        values[2 * idx] = 0.5;
        values[2 * idx + 1] = 0.25;
    }
}

/// Integrates `spec.steps` stored frames starting from a sampled initial
/// condition, advancing `stride` RK4 steps between frames. Frame 0 is the
/// initial condition. Blow-ups are reported with the failing frame index.
pub fn generate_trajectory(
    spec: &PdeSpec,
    ic_kind: IcKind,
    seed: u64,
    stride: usize,
) -> Result<Trajectory, PdeError> {
    spec.validate()?;
    if stride == 0 {
        return Err(PdeError::InvalidSpec("stride must be positive".to_string()));
    }
    let mut state = sample_ic(ic_kind, spec, seed)?;
    let mut frames = Vec::with_capacity(spec.steps);
    frames.push(state.values.clone());
    while frames.len() < spec.steps {
        for _ in 0..stride {
            state = rk4_step(spec, &state).map_err(|e| match e {
                PdeError::BlowUp { .. } => PdeError::BlowUp { step: frames.len() },
                other => other,
            })?;
        }
        frames.push(state.values.clone());
    }
    Ok(Trajectory {
        kind: spec.kind,
        grid: spec.grid.clone(),
        dx: spec.dx,
        dt: spec.dt * stride as f64,
        steps: spec.steps,
        seed,
        ic_kind,
        coefficients: spec.coefficients,
        frames,
    })
}
