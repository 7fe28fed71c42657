use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::par;

/// Analytic benchmark flows: three velocity fields and one closed-form flow map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flow", rename_all = "kebab-case")]
pub enum Flow {
    DoubleGyre { a: f64, omega: f64, epsilon: f64 },
    /// Arnold–Beltrami–Childress steady flow on the 3-torus.
    Abc { a: f64, b: f64, c: f64 },
    /// Divergence-free field of the stream function `x y e^{-x²-y²}`: four
    /// centres at `(±1/√2, ±1/√2)`, a saddle at the origin, and the axes as
    /// invariant separatrices.
    FourCenters,
    /// Flow map whose ridge strength `p(y)` is linear in the seed's y
    /// coordinate, with `p(y_bottom) = p_bottom` and `p(y_top) = p_top`.
    SineRidge { p_bottom: f64, p_top: f64, y_bottom: f64, y_top: f64 },
}

impl Flow {
    pub fn double_gyre() -> Self {
        Flow::DoubleGyre { a: 0.1, omega: PI / 5.0, epsilon: 0.1 }
    }

    pub fn abc() -> Self {
        Flow::Abc { a: 3f64.sqrt(), b: 2f64.sqrt(), c: 1.0 }
    }

    pub fn four_centers() -> Self {
        Flow::FourCenters
    }

    pub fn sine_ridge() -> Self {
        Flow::SineRidge { p_bottom: 0.05, p_top: 4.0, y_bottom: -4.0, y_top: 4.0 }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Flow::DoubleGyre { .. } => "double-gyre",
            Flow::Abc { .. } => "abc",
            Flow::FourCenters => "four-centers",
            Flow::SineRidge { .. } => "sine-ridge",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Flow::Abc { .. } => 3,
            _ => 2,
        }
    }

    pub fn is_velocity_field(&self) -> bool {
        !matches!(self, Flow::SineRidge { .. })
    }

    /// The domain each flow is conventionally seeded on.
    pub fn default_domain(&self) -> Vec<(f64, f64)> {
        match self {
            Flow::DoubleGyre { .. } => vec![(0.0, 2.0), (0.0, 1.0)],
            Flow::Abc { .. } => vec![(0.0, 2.0 * PI); 3],
            Flow::FourCenters => vec![(-2.0, 2.0), (-2.0, 2.0)],
            Flow::SineRidge { .. } => vec![(-2.0, 2.0), (-4.0, 4.0)],
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "{} expects {}-dimensional positions, got {}",
                self.id(),
                self.dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite position".into()));
        }
        Ok(())
    }

    /// Closed-form velocity at `(x, t)`.
    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if !self.is_velocity_field() {
            return Err(Error::FlowType(format!(
                "{} is defined as a flow map, not a velocity field",
                self.id()
            )));
        }
        self.check_dim(x)?;
        let mut out = vec![0.0; self.dim()];
        self.velocity_into(x, t, &mut out);
        Ok(out)
    }

    /// Velocity without validation. Must only be called on velocity-field flows.
    pub(crate) fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match *self {
            Flow::DoubleGyre { a, omega, epsilon } => {
                let st = (omega * t).sin();
                let f = epsilon * st * x[0] * x[0] + (1.0 - 2.0 * epsilon * st) * x[0];
                let dfdx = 2.0 * epsilon * st * x[0] + 1.0 - 2.0 * epsilon * st;
                out[0] = -PI * a * (PI * f).sin() * (PI * x[1]).cos();
                out[1] = PI * a * (PI * f).cos() * (PI * x[1]).sin() * dfdx;
            }
            Flow::Abc { a, b, c } => {
                out[0] = a * x[2].sin() + c * x[1].cos();
                out[1] = b * x[0].sin() + a * x[2].cos();
                out[2] = c * x[1].sin() + b * x[0].cos();
            }
            Flow::FourCenters => {
                let g = (-x[0] * x[0] - x[1] * x[1]).exp();
                out[0] = -x[0] * g * (2.0 * x[1] * x[1] - 1.0);
                out[1] = x[1] * g * (2.0 * x[0] * x[0] - 1.0);
            }
            Flow::SineRidge { .. } => unreachable!("flow map has no velocity"),
        }
    }

    /// Closed-form flow map `x ↦ φ(x, t)`, `t` measured from the seeding time.
    pub fn flow_map(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let Flow::SineRidge { .. } = self else {
            return Err(Error::FlowType(format!(
                "{} is a velocity field; integrate it instead of evaluating a flow map",
                self.id()
            )));
        };
        self.check_dim(x)?;
        let mut out = vec![0.0; 2];
        self.flow_map_into(x, t, &mut out);
        Ok(out)
    }

    fn flow_map_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        if let Flow::SineRidge { p_bottom, p_top, y_bottom, y_top } = *self {
            let p = p_bottom + (x[1] - y_bottom) / (y_top - y_bottom) * (p_top - p_bottom);
            let xx = x[0] * x[0];
            out[0] = x[0] / (xx + (1.0 - xx) * (-2.0 * t * p).exp()).sqrt();
            out[1] = x[1] + t;
        }
    }
}

impl FromStr for Flow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double-gyre" => Ok(Flow::double_gyre()),
            "abc" => Ok(Flow::abc()),
            "four-centers" => Ok(Flow::four_centers()),
            "sine-ridge" => Ok(Flow::sine_ridge()),
            other => Err(Error::Config(format!(
                "unknown flow '{other}' (expected double-gyre, abc, four-centers or sine-ridge)"
            ))),
        }
    }
}

pub fn evaluate_velocity(flow: &Flow, x: &[f64], t: f64) -> Result<Vec<f64>> {
    flow.velocity(x, t)
}

pub fn evaluate_flow_map(flow: &Flow, x: &[f64], t: f64) -> Result<Vec<f64>> {
    flow.flow_map(x, t)
}

/// Rectangular seeding lattice; `resolution[a]` points span `domain[a]`
/// inclusively (a single point sits at the interval midpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedGrid {
    pub resolution: Vec<usize>,
    pub domain: Vec<(f64, f64)>,
}

impl SeedGrid {
    pub fn new(resolution: Vec<usize>, domain: Vec<(f64, f64)>) -> Result<Self> {
        if resolution.len() != domain.len() || resolution.is_empty() {
            return Err(Error::Config("seed grid resolution and domain dimensions differ".into()));
        }
        if resolution.iter().any(|&r| r == 0) {
            return Err(Error::Config("seed grid resolution must be positive".into()));
        }
        if domain.iter().any(|(lo, hi)| !(hi >= lo) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config("seed grid domain must satisfy lo <= hi".into()));
        }
        Ok(SeedGrid { resolution, domain })
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis_value(&self, axis: usize, idx: usize) -> f64 {
        let (lo, hi) = self.domain[axis];
        let r = self.resolution[axis];
        if r == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * idx as f64 / (r - 1) as f64
        }
    }

    /// Grid spacing along `axis` (0 for a single-point axis).
    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.domain[axis];
        let r = self.resolution[axis];
        if r == 1 {
            0.0
        } else {
            (hi - lo) / (r - 1) as f64
        }
    }

    /// Point-major seed coordinates, x varying fastest.
    pub fn points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len() * d);
        let mut idx = vec![0usize; d];
        for _ in 0..self.len() {
            for a in 0..d {
                out.push(self.axis_value(a, idx[a]));
            }
            for a in 0..d {
                idx[a] += 1;
                if idx[a] < self.resolution[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// Everything needed to generate a synthetic trajectory dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow: Flow,
    pub grid: SeedGrid,
    /// Start of the sampled window.
    pub t1: f64,
    /// Duration of the sampled window.
    pub tau: f64,
    /// Number of saved time steps (≥ 2).
    pub steps: usize,
    /// When set, seeds are placed at this time and advected to `t1` before
    /// sampling starts (nonuniform particle distribution at `t1`).
    #[serde(default)]
    pub seed_time: Option<f64>,
    /// RK4 substeps per saved frame (≥ 4).
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    4
}

impl FlowSpec {
    pub fn new(flow: Flow, resolution: Vec<usize>, t1: f64, tau: f64, steps: usize) -> Result<Self> {
        let grid = SeedGrid::new(resolution, flow.default_domain())?;
        Ok(FlowSpec { flow, grid, t1, tau, steps, seed_time: None, substeps: default_substeps() })
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        self.grid = SeedGrid::new(self.grid.resolution.clone(), domain)?;
        Ok(self)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|k| self.t1 + self.tau * k as f64 / (self.steps - 1) as f64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("need at least 2 time steps, got {}", self.steps)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() || !self.t1.is_finite() {
            return Err(Error::Config("duration must be positive and finite".into()));
        }
        if self.grid.dim() != self.flow.dim() {
            return Err(Error::Config(format!(
                "{} is {}-dimensional but the seed grid is {}-dimensional",
                self.flow.id(),
                self.flow.dim(),
                self.grid.dim()
            )));
        }
        if self.substeps < 4 {
            return Err(Error::Config("at least 4 RK4 substeps per frame are required".into()));
        }
        if let Some(t0) = self.seed_time {
            if !t0.is_finite() || t0 > self.t1 {
                return Err(Error::Config("seed time must precede t1".into()));
            }
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta from `t0` to `t1` in `substeps` equal steps.
pub fn rk4_advect(flow: &Flow, x: &mut [f64], t0: f64, t1: f64, substeps: usize) {
    let d = x.len();
    let h = (t1 - t0) / substeps as f64;
    let mut k1 = [0.0; 3];
    let mut k2 = [0.0; 3];
    let mut k3 = [0.0; 3];
    let mut k4 = [0.0; 3];
    let mut tmp = [0.0; 3];
    let mut t = t0;
    for _ in 0..substeps {
        flow.velocity_into(x, t, &mut k1[..d]);
        for a in 0..d {
            tmp[a] = x[a] + 0.5 * h * k1[a];
        }
        flow.velocity_into(&tmp[..d], t + 0.5 * h, &mut k2[..d]);
        for a in 0..d {
            tmp[a] = x[a] + 0.5 * h * k2[a];
        }
        flow.velocity_into(&tmp[..d], t + 0.5 * h, &mut k3[..d]);
        for a in 0..d {
            tmp[a] = x[a] + h * k3[a];
        }
        flow.velocity_into(&tmp[..d], t + h, &mut k4[..d]);
        for a in 0..d {
            x[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        t += h;
    }
}

/// Generates trajectories for every seed of `spec.grid`.
///
/// Velocity fields are integrated with fixed-step RK4 (`spec.substeps` per
/// saved frame); the flow-map flow is evaluated directly at each time.
pub fn integrate_flow(spec: &FlowSpec) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let d = spec.flow.dim();
    let seeds = spec.grid.points();
    let times = spec.times();
    let frame = spec.tau / (spec.steps - 1) as f64;
    let per_particle = spec.steps * d;

    let trajectories = par::map_range(spec.grid.len(), |i| {
        let mut x = seeds[i * d..(i + 1) * d].to_vec();
        let mut out = Vec::with_capacity(per_particle);
        if spec.flow.is_velocity_field() {
            if let Some(t0) = spec.seed_time {
                if spec.t1 > t0 {
                    let sub = ((spec.t1 - t0) / frame * spec.substeps as f64).ceil().max(1.0) as usize;
                    rk4_advect(&spec.flow, &mut x, t0, spec.t1, sub);
                }
            }
            out.extend_from_slice(&x);
            for k in 1..spec.steps {
                rk4_advect(&spec.flow, &mut x, times[k - 1], times[k], spec.substeps);
                out.extend_from_slice(&x);
            }
        } else {
            let origin = spec.seed_time.unwrap_or(spec.t1);
            let mut p = vec![0.0; d];
            for &t in &times {
                spec.flow.flow_map_into(&x, t - origin, &mut p);
                out.extend_from_slice(&p);
            }
        }
        out
    });
    let positions = trajectories.concat();
    TrajectoryDataset::new(d, times, positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_gyre_closed_form_values() {
        let f = Flow::double_gyre();
        assert_eq!(f.velocity(&[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        let v = f.velocity(&[0.5, 0.25], 0.0).unwrap();
        // -0.1π sin(π/2) cos(π/4)
        assert!((v[0] - (-0.1 * PI * (PI / 4.0).cos())).abs() < 1e-15);
        assert!((v[0] + 0.222_144_146_907_918_3).abs() < 1e-12);
        assert!(v[1].abs() < 1e-15);
    }

    #[test]
    fn abc_at_origin_is_c_a_b() {
        let f = Flow::abc();
        for t in [0.0, 3.7] {
            let v = f.velocity(&[0.0, 0.0, 0.0], t).unwrap();
            assert!((v[0] - 1.0).abs() < 1e-15);
            assert!((v[1] - 3f64.sqrt()).abs() < 1e-15);
            assert!((v[2] - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn sine_ridge_flow_map_values() {
        let f = Flow::sine_ridge();
        for y in [-3.0, 0.0, 2.5] {
            assert_eq!(f.flow_map(&[0.0, y], 0.6).unwrap(), vec![0.0, y + 0.6]);
            let p = f.flow_map(&[1.0, y], 0.6).unwrap();
            assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - (y + 0.6)).abs() < 1e-15);
        }
        // p(0) = 0.05 + (4/8)·3.95 = 2.025, recomputed independently
        let p0: f64 = 0.05 + 0.5 * (4.0 - 0.05);
        let want = 0.5 / (0.25 + 0.75 * (-2.0 * p0).exp()).sqrt();
        let got = f.flow_map(&[0.5, 0.0], 1.0).unwrap();
        assert!((got[0] - want).abs() < 1e-15);
        assert!((got[0] - 0.974_848_211_049_271_8).abs() < 1e-12);
        assert_eq!(got[1], 1.0);
    }

    #[test]
    fn flow_kind_errors() {
        assert!(matches!("spiral".parse::<Flow>(), Err(Error::Config(_))));
        assert!(matches!(Flow::sine_ridge().velocity(&[0.0, 0.0], 0.0), Err(Error::FlowType(_))));
        assert!(matches!(Flow::double_gyre().flow_map(&[0.0, 0.0], 0.0), Err(Error::FlowType(_))));
    }

    #[test]
    fn four_centers_origin_is_fixed() {
        let spec = FlowSpec::new(Flow::four_centers(), vec![1, 1], 0.0, 10.0, 50)
            .unwrap()
            .with_domain(vec![(-1.0, 1.0), (-1.0, 1.0)])
            .unwrap();
        let ds = integrate_flow(&spec).unwrap();
        assert_eq!(ds.n(), 1);
        for k in 0..ds.steps() {
            assert_eq!(ds.position(0, k), &[0.0, 0.0]);
        }
    }

    #[test]
    fn four_centers_is_divergence_free_with_centres_in_each_quadrant() {
        let f = Flow::four_centers();
        let h = 1e-5;
        let jac = |x: f64, y: f64| {
            let dx = |i: usize| (f.velocity(&[x + h, y], 0.0).unwrap()[i] - f.velocity(&[x - h, y], 0.0).unwrap()[i]) / (2.0 * h);
            let dy = |i: usize| (f.velocity(&[x, y + h], 0.0).unwrap()[i] - f.velocity(&[x, y - h], 0.0).unwrap()[i]) / (2.0 * h);
            [dx(0), dy(0), dx(1), dy(1)]
        };
        for &(x, y) in &[(0.3, -1.2), (1.5, 0.4), (-0.8, -0.9)] {
            let j = jac(x, y);
            assert!((j[0] + j[3]).abs() < 1e-8);
        }
        let c = 0.5f64.sqrt();
        for &(sx, sy) in &[(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            let v = f.velocity(&[sx * c, sy * c], 0.0).unwrap();
            assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
            // zero trace and positive determinant: purely imaginary eigenvalues
            let j = jac(sx * c, sy * c);
            assert!(j[0] * j[3] - j[1] * j[2] > 0.1);
        }
        let j = jac(0.0, 0.0);
        assert!(j[0] * j[3] - j[1] * j[2] < -0.5);
        // the axes are invariant
        assert_eq!(f.velocity(&[0.0, 1.3], 0.0).unwrap()[0], 0.0);
        assert_eq!(f.velocity(&[-0.7, 0.0], 0.0).unwrap()[1], 0.0);
    }

    #[test]
    fn seed_grid_is_x_fastest_and_inclusive() {
        let g = SeedGrid::new(vec![3, 2], vec![(0.0, 2.0), (0.0, 1.0)]).unwrap();
        assert_eq!(g.points(), vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
    }
}
