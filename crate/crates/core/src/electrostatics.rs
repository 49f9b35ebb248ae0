//! Two-dimensional electrostatics of the electrode pair on the crystal surface.
//!
//! The cross-section is taken perpendicular to the electrode strips. `x` runs
//! along the inter-electrode axis (the crystal D₂ axis) and `y` is the surface
//! normal: `y > 0` is vacuum, `y < 0` is the host crystal. Lengths are in µm,
//! potentials in V and reported fields in V/cm.
//!
//! The Laplace equation is discretized with a five-point finite-volume
//! stencil on a tensor-product mesh. Around the electrodes and the probe the
//! mesh is uniform with nodes at integer multiples of the requested spacing,
//! so the gap center and the electrode edges are nodes; outside that zone the
//! cells grow geometrically toward the outer boundary. The thin-strip edges are
//! field singularities and dominate the discretization error, which is why the
//! refinement is concentrated there. The dielectric interface is the `y = 0`
//! row, where the flux weights keep the normal displacement continuous.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// µm → cm conversion for gradients: 1 V/µm = 10⁴ V/cm.
const V_PER_UM_TO_V_PER_CM: f64 = 1.0e4;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid electrode layout: {0}")]
    InvalidLayout(String),
    #[error("invalid solver setting: {0}")]
    InvalidSolver(String),
    #[error("solver did not converge after {iterations} iterations (last max update {last_update:.3e} V)")]
    NotConverged { iterations: usize, last_update: f64 },
    #[error("point ({x_um} µm, {y_um} µm) is not at least one cell inside the grid")]
    OutOfRange { x_um: f64, y_um: f64 },
    #[error("grid dump failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x_um: f64,
    pub y_um: f64,
}

impl Point {
    pub const fn new(x_um: f64, y_um: f64) -> Self {
        Self { x_um, y_um }
    }
}

/// Axis-aligned simulation box in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainExtent {
    pub x_min_um: f64,
    pub x_max_um: f64,
    pub y_min_um: f64,
    pub y_max_um: f64,
}

impl DomainExtent {
    pub fn contains(&self, p: Point) -> bool {
        p.x_um >= self.x_min_um && p.x_um <= self.x_max_um && p.y_um >= self.y_min_um && p.y_um <= self.y_max_um
    }

    pub fn width_um(&self) -> f64 {
        self.x_max_um - self.x_min_um
    }

    pub fn height_um(&self) -> f64 {
        self.y_max_um - self.y_min_um
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectrodeGeometry {
    /// Two thin strips lying on the dielectric interface, separated by the gap.
    Coplanar,
    /// Electrodes occupy the whole left and right domain boundaries.
    ParallelPlate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub geometry: ElectrodeGeometry,
    pub electrode_width_um: f64,
    pub gap_um: f64,
    /// Potentials of the left (`x < 0`) and right electrode.
    pub electrode_potentials_v: [f64; 2],
    pub domain_extent: DomainExtent,
    /// Cavity center relative to the gap center.
    pub probe_point: Point,
}

impl ElectrodeLayout {
    /// Coplanar strips with the default outer box: five times the electrode
    /// span in both directions, centered on the gap.
    pub fn coplanar(electrode_width_um: f64, gap_um: f64, potentials_v: [f64; 2]) -> Self {
        let half = 2.5 * (2.0 * electrode_width_um + gap_um);
        Self {
            geometry: ElectrodeGeometry::Coplanar,
            electrode_width_um,
            gap_um,
            electrode_potentials_v: potentials_v,
            domain_extent: DomainExtent {
                x_min_um: -half,
                x_max_um: half,
                y_min_um: -half,
                y_max_um: half,
            },
            probe_point: Point::new(0.0, 0.0),
        }
    }

    /// Parallel-plate limit: the left and right domain edges are the
    /// electrodes. Intended for use with Neumann-zero top and bottom edges.
    pub fn parallel_plate(gap_um: f64, height_um: f64, potentials_v: [f64; 2]) -> Self {
        Self {
            geometry: ElectrodeGeometry::ParallelPlate,
            electrode_width_um: height_um,
            gap_um,
            electrode_potentials_v: potentials_v,
            domain_extent: DomainExtent {
                x_min_um: -gap_um / 2.0,
                x_max_um: gap_um / 2.0,
                y_min_um: -height_um / 2.0,
                y_max_um: height_um / 2.0,
            },
            probe_point: Point::new(0.0, 0.0),
        }
    }

    pub fn with_probe(mut self, probe: Point) -> Self {
        self.probe_point = probe;
        self
    }

    pub fn with_potentials(mut self, potentials_v: [f64; 2]) -> Self {
        self.electrode_potentials_v = potentials_v;
        self
    }

    /// Applied voltage, left minus right. Positive voltage drives a positive
    /// `E_parallel` in the gap.
    pub fn applied_voltage(&self) -> f64 {
        self.electrode_potentials_v[0] - self.electrode_potentials_v[1]
    }

    /// Horizontal extent `[x_start, x_end]` of the left and right electrodes.
    pub fn electrode_spans(&self) -> [(f64, f64); 2] {
        let g = self.gap_um / 2.0;
        let w = self.electrode_width_um;
        [(-g - w, -g), (g, g + w)]
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |msg: String| Err(FieldError::InvalidLayout(msg));
        let finite = [
            self.electrode_width_um,
            self.gap_um,
            self.electrode_potentials_v[0],
            self.electrode_potentials_v[1],
            self.domain_extent.x_min_um,
            self.domain_extent.x_max_um,
            self.domain_extent.y_min_um,
            self.domain_extent.y_max_um,
            self.probe_point.x_um,
            self.probe_point.y_um,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.gap_um <= 0.0 {
            return bad(format!("gap must be positive, got {} µm", self.gap_um));
        }
        if self.electrode_width_um <= 0.0 {
            return bad(format!(
                "electrode width must be positive, got {} µm",
                self.electrode_width_um
            ));
        }
        let d = &self.domain_extent;
        if d.width_um() <= 0.0 || d.height_um() <= 0.0 {
            return bad("empty domain extent".into());
        }
        if !d.contains(self.probe_point) {
            return bad(format!(
                "probe point ({}, {}) µm lies outside the domain",
                self.probe_point.x_um, self.probe_point.y_um
            ));
        }
        match self.geometry {
            ElectrodeGeometry::Coplanar => {
                let margin = 2.0 * self.gap_um;
                let [(left, _), (_, right)] = self.electrode_spans();
                if d.x_min_um > left - margin
                    || d.x_max_um < right + margin
                    || d.y_min_um > -margin
                    || d.y_max_um < margin
                {
                    return bad(format!(
                        "domain must enclose the electrodes with a margin of at least {margin} µm"
                    ));
                }
            }
            ElectrodeGeometry::ParallelPlate => {
                let tol = 1e-9 * self.gap_um;
                if (d.x_min_um + self.gap_um / 2.0).abs() > tol || (d.x_max_um - self.gap_um / 2.0).abs() > tol {
                    return bad("parallel-plate domain must span exactly the gap".into());
                }
            }
        }
        Ok(())
    }
}

/// Relative permittivities of the two half-spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DielectricMap {
    pub relative_permittivity_above: f64,
    pub relative_permittivity_below: f64,
}

impl Default for DielectricMap {
    fn default() -> Self {
        Self {
            relative_permittivity_above: 1.0,
            relative_permittivity_below: 9.0,
        }
    }
}

impl DielectricMap {
    pub fn uniform(eps: f64) -> Self {
        Self {
            relative_permittivity_above: eps,
            relative_permittivity_below: eps,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let ok = |e: f64| e.is_finite() && e >= 1.0;
        if ok(self.relative_permittivity_above) && ok(self.relative_permittivity_below) {
            Ok(())
        } else {
            Err(FieldError::InvalidLayout(format!(
                "relative permittivities must be >= 1, got {} / {}",
                self.relative_permittivity_above, self.relative_permittivity_below
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    DirichletZero,
    NeumannZero,
}

/// Over-relaxation factor for the red-black sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// Constant ω in (0, 2).
    Fixed(f64),
    /// Start from Gauss-Seidel and raise ω toward the optimum estimated from
    /// the observed decay rate of the sweep updates.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Red-black successive over-relaxation on the finest mesh, started from
    /// interpolated coarse-mesh solutions.
    Sor(Relaxation),
    /// Correction-scheme V-cycles with red-black relaxation as the smoother.
    Multigrid { smoothing_sweeps: usize, omega: f64 },
}

impl Default for SolverMethod {
    fn default() -> Self {
        Self::Multigrid {
            smoothing_sweeps: 2,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Sweep budget for SOR, V-cycle budget for multigrid.
    pub max_iterations: usize,
    /// Outer boundary; `None` picks Dirichlet-zero for coplanar layouts and
    /// Neumann-zero for the parallel-plate limit.
    pub boundary: Option<BoundaryCondition>,
    /// Cell growth ratio outside the refined zone around the electrodes and
    /// the probe. `1.0` gives a uniform mesh.
    pub grading: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::default(),
            max_iterations: 500,
            boundary: None,
            grading: 1.08,
        }
    }
}

impl SolverOptions {
    /// Plain SOR with a constant relaxation factor.
    pub fn sor(omega: f64) -> Self {
        Self {
            method: SolverMethod::Sor(Relaxation::Fixed(omega)),
            max_iterations: 200_000,
            ..Self::default()
        }
    }

    pub fn adaptive_sor() -> Self {
        Self {
            method: SolverMethod::Sor(Relaxation::Adaptive),
            max_iterations: 200_000,
            ..Self::default()
        }
    }
}

/// Electric field at a point, V/cm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldVector {
    /// Along the inter-electrode axis (crystal D₂).
    pub parallel_v_per_cm: f64,
    /// Along the surface normal.
    pub perpendicular_v_per_cm: f64,
}

impl FieldVector {
    pub const ZERO: Self = Self {
        parallel_v_per_cm: 0.0,
        perpendicular_v_per_cm: 0.0,
    };

    pub fn new(parallel_v_per_cm: f64, perpendicular_v_per_cm: f64) -> Self {
        Self {
            parallel_v_per_cm,
            perpendicular_v_per_cm,
        }
    }

    pub fn along_d2(e: f64) -> Self {
        Self::new(e, 0.0)
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::new(self.parallel_v_per_cm * factor, self.perpendicular_v_per_cm * factor)
    }

    pub fn magnitude(&self) -> f64 {
        self.parallel_v_per_cm.hypot(self.perpendicular_v_per_cm)
    }

    /// Components in the crystal frame `(D₁, D₂, b)`: the gap axis is D₂ and
    /// the surface normal is b (the cavity sits on the D₁D₂ face).
    pub fn crystal_frame(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(0.0, self.parallel_v_per_cm, self.perpendicular_v_per_cm)
    }
}

/// Analytic parallel-plate field `V / gap` in V/cm.
pub fn uniform_field_oracle(voltage_v: f64, gap_um: f64) -> f64 {
    voltage_v / gap_um * V_PER_UM_TO_V_PER_CM
}

/// Converged potential on a tensor-product mesh. Inside the refined zone the
/// nodes sit at integer multiples of `spacing_um`.
#[derive(Debug, Clone)]
pub struct PotentialGrid {
    spacing_um: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
    pinned: Vec<bool>,
    boundary_condition: BoundaryCondition,
    iterations: usize,
    last_update_v: f64,
    relaxation: f64,
}

impl PotentialGrid {
    /// Finest mesh spacing.
    pub fn spacing_um(&self) -> f64 {
        self.spacing_um
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.xs.len(), self.ys.len())
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.boundary_condition
    }

    /// SOR sweeps or multigrid V-cycles spent on the finest mesh.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn last_update_v(&self) -> f64 {
        self.last_update_v
    }

    /// Relaxation factor in use when the finest mesh converged (the smoother
    /// factor for multigrid).
    pub fn relaxation(&self) -> f64 {
        self.relaxation
    }

    pub fn x_um(&self, i: usize) -> f64 {
        self.xs[i]
    }

    pub fn y_um(&self, j: usize) -> f64 {
        self.ys[j]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    pub fn is_pinned(&self, i: usize, j: usize) -> bool {
        self.pinned[j * self.xs.len() + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Nearest node to a coordinate, if the coordinate is inside the mesh.
    pub fn node_near(&self, p: Point) -> Option<(usize, usize)> {
        Some((nearest(&self.xs, p.x_um)?, nearest(&self.ys, p.y_um)?))
    }

    /// Negated three-point gradient at a node, V/µm. Reduces to the central
    /// difference where the neighboring cells are equal.
    fn node_gradient(&self, i: usize, j: usize) -> (f64, f64) {
        let nx = self.xs.len();
        let v = |ii: usize, jj: usize| self.values[jj * nx + ii];
        let ex = -three_point(
            self.xs[i] - self.xs[i - 1],
            self.xs[i + 1] - self.xs[i],
            v(i - 1, j),
            v(i, j),
            v(i + 1, j),
        );
        let ey = -three_point(
            self.ys[j] - self.ys[j - 1],
            self.ys[j + 1] - self.ys[j],
            v(i, j - 1),
            v(i, j),
            v(i, j + 1),
        );
        (ex, ey)
    }

    /// Field at an arbitrary point at least one cell inside the mesh: node
    /// gradients, bilinearly interpolated across the enclosing cell.
    pub fn field_at(&self, p: Point) -> Result<FieldVector, FieldError> {
        let out = || FieldError::OutOfRange {
            x_um: p.x_um,
            y_um: p.y_um,
        };
        let (nx, ny) = self.shape();
        let (ia, tx) = locate(&self.xs, p.x_um).ok_or_else(out)?;
        let (ja, ty) = locate(&self.ys, p.y_um).ok_or_else(out)?;
        // The enclosing cell's corners, or the node itself, must have
        // neighbors on both sides.
        let interior = |a: usize, t: f64, n: usize| a >= 1 && (a + 2 < n || (t == 0.0 && a + 1 < n));
        if !interior(ia, tx, nx) || !interior(ja, ty, ny) {
            return Err(out());
        }
        let ib = (ia + 1).min(nx - 2);
        let jb = (ja + 1).min(ny - 2);
        let g00 = self.node_gradient(ia, ja);
        let g10 = self.node_gradient(ib, ja);
        let g01 = self.node_gradient(ia, jb);
        let g11 = self.node_gradient(ib, jb);
        let lerp = |a: f64, b: f64, c: f64, d: f64| {
            (1.0 - tx) * (1.0 - ty) * a + tx * (1.0 - ty) * b + (1.0 - tx) * ty * c + tx * ty * d
        };
        Ok(FieldVector::new(
            lerp(g00.0, g10.0, g01.0, g11.0) * V_PER_UM_TO_V_PER_CM,
            lerp(g00.1, g10.1, g01.1, g11.1) * V_PER_UM_TO_V_PER_CM,
        ))
    }

    /// Bilinear potential, clamped to the mesh.
    pub fn potential_at(&self, p: Point) -> f64 {
        bilinear(&self.xs, &self.ys, &self.values, p)
    }

    /// CSV dump with header `x_um,y_um,potential_v`, rows in `y`-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), FieldError> {
        writeln!(out, "x_um,y_um,potential_v")?;
        for (j, &y) in self.ys.iter().enumerate() {
            for (i, &x) in self.xs.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{}",
                    crate::io::fmt_f64(x),
                    crate::io::fmt_f64(y),
                    crate::io::fmt_f64(self.value(i, j))
                )?;
            }
        }
        Ok(())
    }
}

fn three_point(h1: f64, h2: f64, fm: f64, f0: f64, fp: f64) -> f64 {
    (-h2 / (h1 * (h1 + h2))) * fm + ((h2 - h1) / (h1 * h2)) * f0 + (h1 / (h2 * (h1 + h2))) * fp
}

/// Cell index `a` and fraction `t` with `axis[a] + t·(axis[a+1] - axis[a]) = x`.
/// Coordinates within rounding of a node snap onto it with `t = 0`.
fn locate(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if !x.is_finite() || n < 2 {
        return None;
    }
    let snap = 1e-9 * (axis[n - 1] - axis[0]).abs().max(1.0);
    if x < axis[0] - snap || x > axis[n - 1] + snap {
        return None;
    }
    let k = axis.partition_point(|&a| a <= x + snap);
    let a = k.saturating_sub(1).min(n - 1);
    if (x - axis[a]).abs() <= snap {
        return Some((a, 0.0));
    }
    let a = a.min(n - 2);
    Some((a, (x - axis[a]) / (axis[a + 1] - axis[a])))
}

fn nearest(axis: &[f64], x: f64) -> Option<usize> {
    let (a, t) = locate(axis, x)?;
    Some(if t > 0.5 { a + 1 } else { a })
}

fn bilinear(xs: &[f64], ys: &[f64], values: &[f64], p: Point) -> f64 {
    let clamp_locate = |axis: &[f64], x: f64| {
        let x = x.clamp(axis[0], axis[axis.len() - 1]);
        let (a, t) = locate(axis, x).expect("clamped coordinate");
        if a + 1 >= axis.len() {
            (a - 1, 1.0)
        } else {
            (a, t)
        }
    };
    let nx = xs.len();
    let (ia, tx) = clamp_locate(xs, p.x_um);
    let (ja, ty) = clamp_locate(ys, p.y_um);
    let v = |i: usize, j: usize| values[j * nx + i];
    (1.0 - tx) * (1.0 - ty) * v(ia, ja)
        + tx * (1.0 - ty) * v(ia + 1, ja)
        + (1.0 - tx) * ty * v(ia, ja + 1)
        + tx * ty * v(ia + 1, ja + 1)
}

/// Node coordinates along one axis that can be coarsened `depth` times by
/// dropping every other node. Inside `[fine_lo, fine_hi]` (snapped outward
/// to multiples of `h·2^depth`) nodes are multiples of `h`; from there to
/// `[lo, hi]` cells grow by at most `growth` per cell.
fn mesh_axis(lo: f64, hi: f64, fine_lo: f64, fine_hi: f64, h: f64, growth: f64, depth: u32) -> Vec<f64> {
    let stride = 1_i64 << depth;
    let coarse = h * stride as f64;
    let eps = 1e-9 * h;
    let mut kl = ((fine_lo.max(lo) + eps) / coarse).floor() as i64;
    if (kl as f64) * coarse < lo - eps {
        kl += 1;
    }
    let mut kr = ((fine_hi.min(hi) - eps) / coarse).ceil() as i64;
    if (kr as f64) * coarse > hi + eps {
        kr -= 1;
    }
    debug_assert!(kr > kl, "refined zone narrower than one coarse cell");
    let mut axis: Vec<f64> = graded_cells(kl as f64 * coarse - lo, h, growth, stride as usize)
        .into_iter()
        .rev()
        .map(|d| kl as f64 * coarse - d)
        .collect();
    if let Some(first) = axis.first_mut() {
        *first = lo;
    }
    axis.extend((kl * stride..=kr * stride).map(|k| k as f64 * h));
    let start = kr as f64 * coarse;
    let right = graded_cells(hi - start, h, growth, stride as usize);
    let n_right = right.len();
    axis.extend(
        right
            .into_iter()
            .enumerate()
            .map(|(m, d)| if m + 1 == n_right { hi } else { start + d }),
    );
    axis
}

/// Cumulative offsets of `n` cells covering `distance`, `n` a multiple of
/// `multiple`, the first cell `h·g` and each next one `g` times larger with
/// `g <= growth` (cells may shrink when the distance is short).
fn graded_cells(distance: f64, h: f64, growth: f64, multiple: usize) -> Vec<f64> {
    if distance <= 1e-9 * h {
        return Vec::new();
    }
    let span = |g: f64, n: usize| {
        let mut total = 0.0;
        let mut step = h;
        for _ in 0..n {
            step *= g;
            total += step;
        }
        total
    };
    let mut n = multiple;
    while span(growth, n) < distance {
        n += multiple;
    }
    let (mut a, mut b) = (1e-6_f64, growth);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if span(mid, n) < distance {
            a = mid;
        } else {
            b = mid;
        }
    }
    let g = 0.5 * (a + b);
    let mut out = Vec::with_capacity(n);
    let (mut total, mut step) = (0.0, h);
    for _ in 0..n {
        step *= g;
        total += step;
        out.push(total);
    }
    out
}

/// One mesh of the hierarchy with its finite-volume link factors.
struct Level {
    xs: Vec<f64>,
    ys: Vec<f64>,
    nx: usize,
    ny: usize,
    pinned: Vec<bool>,
    pin_values: Vec<f64>,
    // Per column: reciprocal left/right cell widths and control-volume width.
    inv_dxm: Vec<f64>,
    inv_dxp: Vec<f64>,
    half_dx: Vec<f64>,
    il: Vec<usize>,
    ir: Vec<usize>,
    // Per row: horizontal flux factor ε·Δy and vertical factors ε/dy.
    horiz: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
    jd: Vec<usize>,
    ju: Vec<usize>,
    /// 1 when the outer ring is pinned (Dirichlet), 0 for Neumann mirrors.
    edges: usize,
}

impl Level {
    fn new(xs: Vec<f64>, ys: Vec<f64>, dielectric: &DielectricMap, boundary: BoundaryCondition) -> Self {
        let (nx, ny) = (xs.len(), ys.len());
        let widths = |axis: &[f64], k: usize| {
            let n = axis.len();
            let minus = if k == 0 {
                axis[1] - axis[0]
            } else {
                axis[k] - axis[k - 1]
            };
            let plus = if k == n - 1 {
                axis[n - 1] - axis[n - 2]
            } else {
                axis[k + 1] - axis[k]
            };
            (minus, plus)
        };
        let mut inv_dxm = Vec::with_capacity(nx);
        let mut inv_dxp = Vec::with_capacity(nx);
        let mut half_dx = Vec::with_capacity(nx);
        for i in 0..nx {
            let (m, p) = widths(&xs, i);
            inv_dxm.push(1.0 / m);
            inv_dxp.push(1.0 / p);
            half_dx.push(0.5 * (m + p));
        }
        // Neumann mirrors: the ghost neighbor equals the interior neighbor.
        let il = (0..nx).map(|i| if i == 0 { 1 } else { i - 1 }).collect();
        let ir = (0..nx).map(|i| if i == nx - 1 { nx - 2 } else { i + 1 }).collect();
        let jd = (0..ny).map(|j| if j == 0 { 1 } else { j - 1 }).collect();
        let ju = (0..ny).map(|j| if j == ny - 1 { ny - 2 } else { j + 1 }).collect();

        let (ea, eb) = (
            dielectric.relative_permittivity_above,
            dielectric.relative_permittivity_below,
        );
        // A link between two rows lies above the interface when its lower
        // node is at y >= 0; y = 0 is a node whenever the plane is inside.
        let tiny = 1e-9 * (ys[ny - 1] - ys[0]);
        let link_eps = |y_low: f64| if y_low >= -tiny { ea } else { eb };
        let mut horiz = Vec::with_capacity(ny);
        let mut up = Vec::with_capacity(ny);
        let mut down = Vec::with_capacity(ny);
        for j in 0..ny {
            let (m, p) = widths(&ys, j);
            let e_below = if j == 0 { link_eps(ys[0]) } else { link_eps(ys[j - 1]) };
            let e_above = if j == ny - 1 {
                link_eps(ys[j - 1])
            } else {
                link_eps(ys[j])
            };
            horiz.push(0.5 * (e_below * m + e_above * p));
            up.push(e_above / p);
            down.push(e_below / m);
        }
        let edges = usize::from(boundary == BoundaryCondition::DirichletZero);
        let mut level = Self {
            xs,
            ys,
            nx,
            ny,
            pinned: vec![false; nx * ny],
            pin_values: vec![0.0; nx * ny],
            inv_dxm,
            inv_dxp,
            half_dx,
            il,
            ir,
            horiz,
            up,
            down,
            jd,
            ju,
            edges,
        };
        if edges == 1 {
            for j in 0..ny {
                for i in 0..nx {
                    if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                        level.pin(i, j, 0.0);
                    }
                }
            }
        }
        level
    }

    fn pin(&mut self, i: usize, j: usize, v: f64) {
        let k = j * self.nx + i;
        self.pinned[k] = true;
        self.pin_values[k] = v;
    }

    /// Every other node of `self`, pins inherited from coincident nodes.
    fn coarsen(&self, dielectric: &DielectricMap, boundary: BoundaryCondition) -> Self {
        let xs: Vec<f64> = self.xs.iter().copied().step_by(2).collect();
        let ys: Vec<f64> = self.ys.iter().copied().step_by(2).collect();
        let mut coarse = Level::new(xs, ys, dielectric, boundary);
        for jc in 0..coarse.ny {
            for ic in 0..coarse.nx {
                let kf = 2 * jc * self.nx + 2 * ic;
                if self.pinned[kf] {
                    coarse.pin(ic, jc, self.pin_values[kf]);
                }
            }
        }
        coarse
    }

    #[inline]
    fn links(&self, i: usize, j: usize) -> [f64; 4] {
        let a = self.horiz[j];
        [
            a * self.inv_dxm[i],
            a * self.inv_dxp[i],
            self.half_dx[i] * self.up[j],
            self.half_dx[i] * self.down[j],
        ]
    }

    /// Red-black sweeps on `A u = f`; returns the largest update of the last sweep.
    fn smooth(&self, u: &mut [f64], f: Option<&[f64]>, omega: f64, sweeps: usize) -> f64 {
        let (nx, ny, edges) = (self.nx, self.ny, self.edges);
        let mut max_update = 0.0_f64;
        for _ in 0..sweeps {
            max_update = 0.0;
            for color in 0..2usize {
                for j in edges..ny - edges {
                    let (a, nf, sf) = (self.horiz[j], self.up[j], self.down[j]);
                    let row = j * nx;
                    let row_u = self.ju[j] * nx;
                    let row_d = self.jd[j] * nx;
                    let start = edges + (color + 2 - (edges + j) % 2) % 2;
                    for i in (start..nx - edges).step_by(2) {
                        let k = row + i;
                        if self.pinned[k] {
                            continue;
                        }
                        let w = a * self.inv_dxm[i];
                        let e = a * self.inv_dxp[i];
                        let n = self.half_dx[i] * nf;
                        let s = self.half_dx[i] * sf;
                        let rhs = f.map_or(0.0, |f| f[k]);
                        let target = (rhs
                            + w * u[row + self.il[i]]
                            + e * u[row + self.ir[i]]
                            + n * u[row_u + i]
                            + s * u[row_d + i])
                            / (w + e + n + s);
                        let delta = omega * (target - u[k]);
                        u[k] += delta;
                        max_update = max_update.max(delta.abs());
                    }
                }
            }
        }
        max_update
    }

    /// Alternating-direction zebra line relaxation: every other row solved
    /// exactly along `x`, then the remaining rows, then the same for columns.
    /// Robust against the stretched cells of the graded mesh, where point
    /// relaxation stops smoothing. Returns the largest update of the last sweep.
    fn line_smooth(&self, u: &mut [f64], f: Option<&[f64]>, omega: f64, sweeps: usize) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let n = nx.max(ny);
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut line = vec![0.0; n];
        let mut max_update = 0.0_f64;
        for _ in 0..sweeps {
            max_update = 0.0;
            for parity in 0..2 {
                for j in (parity..ny).step_by(2) {
                    for i in 0..nx {
                        let k = j * nx + i;
                        if self.pinned[k] {
                            (lower[i], diag[i], upper[i], rhs[i]) = (0.0, 1.0, 0.0, u[k]);
                            continue;
                        }
                        let [w, e, nn, s] = self.links(i, j);
                        let b = f.map_or(0.0, |f| f[k]) + nn * u[self.ju[j] * nx + i] + s * u[self.jd[j] * nx + i];
                        let (mut a, mut c) = (-w, -e);
                        if i == 0 {
                            c -= w;
                            a = 0.0;
                        } else if i == nx - 1 {
                            a -= e;
                            c = 0.0;
                        }
                        (lower[i], diag[i], upper[i], rhs[i]) = (a, w + e + nn + s, c, b);
                    }
                    thomas(&lower[..nx], &diag[..nx], &upper[..nx], &rhs[..nx], &mut line[..nx]);
                    for (i, &v) in line[..nx].iter().enumerate() {
                        let k = j * nx + i;
                        let delta = omega * (v - u[k]);
                        u[k] += delta;
                        max_update = max_update.max(delta.abs());
                    }
                }
            }
            for parity in 0..2 {
                for i in (parity..nx).step_by(2) {
                    for j in 0..ny {
                        let k = j * nx + i;
                        if self.pinned[k] {
                            (lower[j], diag[j], upper[j], rhs[j]) = (0.0, 1.0, 0.0, u[k]);
                            continue;
                        }
                        let [w, e, nn, s] = self.links(i, j);
                        let b = f.map_or(0.0, |f| f[k]) + w * u[j * nx + self.il[i]] + e * u[j * nx + self.ir[i]];
                        let (mut a, mut c) = (-s, -nn);
                        if j == 0 {
                            c -= s;
                            a = 0.0;
                        } else if j == ny - 1 {
                            a -= nn;
                            c = 0.0;
                        }
                        (lower[j], diag[j], upper[j], rhs[j]) = (a, w + e + nn + s, c, b);
                    }
                    thomas(&lower[..ny], &diag[..ny], &upper[..ny], &rhs[..ny], &mut line[..ny]);
                    for (j, &v) in line[..ny].iter().enumerate() {
                        let k = j * nx + i;
                        let delta = omega * (v - u[k]);
                        u[k] += delta;
                        max_update = max_update.max(delta.abs());
                    }
                }
            }
        }
        max_update
    }

    /// `r = f - A u` on free nodes, zero on pinned ones.
    fn residual(&self, u: &[f64], f: Option<&[f64]>, r: &mut [f64]) {
        let nx = self.nx;
        for j in 0..self.ny {
            for i in 0..nx {
                let k = j * nx + i;
                if self.pinned[k] || (self.edges == 1 && (i == 0 || i == nx - 1 || j == 0 || j == self.ny - 1)) {
                    r[k] = 0.0;
                    continue;
                }
                let [w, e, n, s] = self.links(i, j);
                let au = (w + e + n + s) * u[k]
                    - w * u[j * nx + self.il[i]]
                    - e * u[j * nx + self.ir[i]]
                    - n * u[self.ju[j] * nx + i]
                    - s * u[self.jd[j] * nx + i];
                r[k] = f.map_or(0.0, |f| f[k]) - au;
            }
        }
    }
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], out: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for k in 1..n {
        let m = diag[k] - lower[k] * c[k - 1];
        c[k] = if k + 1 < n { upper[k] / m } else { 0.0 };
        d[k] = (rhs[k] - lower[k] * d[k - 1]) / m;
    }
    out[n - 1] = d[n - 1];
    for k in (0..n - 1).rev() {
        out[k] = d[k] - c[k] * out[k + 1];
    }
}

/// Linear-interpolation weights from coarse node `k/2` (or its two
/// neighbors) onto fine node `k`.
fn interp_1d(fine: &[f64], k: usize) -> [(usize, f64); 2] {
    if k.is_multiple_of(2) {
        [(k / 2, 1.0), (k / 2, 0.0)]
    } else {
        let t = (fine[k] - fine[k - 1]) / (fine[k + 1] - fine[k - 1]);
        [((k - 1) / 2, 1.0 - t), (k.div_ceil(2), t)]
    }
}

/// Bilinear prolongation from `coarse` values onto the nodes of `fine`.
fn prolong(fine: &Level, coarse: &Level, uc: &[f64]) -> Vec<f64> {
    let wx: Vec<_> = (0..fine.nx).map(|i| interp_1d(&fine.xs, i)).collect();
    let mut out = vec![0.0; fine.nx * fine.ny];
    for j in 0..fine.ny {
        let wy = interp_1d(&fine.ys, j);
        for i in 0..fine.nx {
            let mut v = 0.0;
            for &(jc, ay) in &wy {
                for &(ic, ax) in &wx[i] {
                    v += ax * ay * uc[jc * coarse.nx + ic];
                }
            }
            out[j * fine.nx + i] = v;
        }
    }
    out
}

/// Transpose of [`prolong`]: fine residuals summed onto coarse nodes.
fn restrict(fine: &Level, coarse: &Level, rf: &[f64]) -> Vec<f64> {
    let wx: Vec<_> = (0..fine.nx).map(|i| interp_1d(&fine.xs, i)).collect();
    let mut out = vec![0.0; coarse.nx * coarse.ny];
    for j in 0..fine.ny {
        let wy = interp_1d(&fine.ys, j);
        for i in 0..fine.nx {
            let r = rf[j * fine.nx + i];
            if r == 0.0 {
                continue;
            }
            for &(jc, ay) in &wy {
                for &(ic, ax) in &wx[i] {
                    out[jc * coarse.nx + ic] += ax * ay * r;
                }
            }
        }
    }
    for (k, v) in out.iter_mut().enumerate() {
        if coarse.pinned[k] {
            *v = 0.0;
        }
    }
    out
}

fn v_cycle(levels: &[Level], depth: usize, u: &mut [f64], f: Option<&[f64]>, sweeps: usize, omega: f64) {
    let level = &levels[depth];
    if depth + 1 == levels.len() {
        // Coarsest mesh: relax until the updates fall well below the first one.
        let first = level.line_smooth(u, f, 1.0, 1);
        for _ in 0..2_000 {
            let update = level.line_smooth(u, f, 1.0, 1);
            if update <= 1e-4 * first {
                break;
            }
        }
        return;
    }
    level.line_smooth(u, f, omega, sweeps);
    let mut r = vec![0.0; u.len()];
    level.residual(u, f, &mut r);
    let coarse = &levels[depth + 1];
    let fc = restrict(level, coarse, &r);
    let mut ec = vec![0.0; coarse.nx * coarse.ny];
    v_cycle(levels, depth + 1, &mut ec, Some(&fc), sweeps, omega);
    let e = prolong(level, coarse, &ec);
    for (k, (uk, ek)) in u.iter_mut().zip(e).enumerate() {
        if !level.pinned[k] {
            *uk += ek;
        }
    }
    level.line_smooth(u, f, omega, sweeps);
}

/// Sweep until the largest update drops below `tolerance`. Returns the sweep
/// count, the last update and the final ω.
fn relax(
    level: &Level,
    u: &mut [f64],
    relaxation: Relaxation,
    omega_start: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<(usize, f64, f64), FieldError> {
    const WINDOW: usize = 10;
    const CHECK_EVERY: usize = 25;
    let mut omega = match relaxation {
        Relaxation::Fixed(w) => w,
        Relaxation::Adaptive => omega_start,
    };
    let mut history = Vec::with_capacity(WINDOW + 1);
    let mut last = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        last = level.smooth(u, None, omega, 1);
        if last < tolerance {
            return Ok((sweep, last, omega));
        }
        if relaxation == Relaxation::Adaptive {
            if history.len() > WINDOW {
                history.remove(0);
            }
            history.push(last);
            if sweep % CHECK_EVERY == 0 && history.len() > WINDOW {
                if let Some(next) = raise_omega(omega, history[0], last, WINDOW) {
                    omega = next;
                    history.clear();
                }
            }
        }
    }
    Err(FieldError::NotConverged {
        iterations: max_sweeps,
        last_update: last,
    })
}

/// Young's estimate: while ω is below the optimum the update norm decays
/// like λᵏ with `(λ + ω - 1)² = λ ω² μ²`, μ the Jacobi spectral radius.
fn raise_omega(omega: f64, first: f64, last: f64, steps: usize) -> Option<f64> {
    if !(first > 0.0 && last > 0.0) {
        return None;
    }
    let lambda = (last / first).powf(1.0 / steps as f64);
    if !(lambda < 1.0 && lambda > omega - 1.0 + 1e-3) {
        return None;
    }
    let mu2 = ((lambda + omega - 1.0).powi(2) / (lambda * omega * omega)).min(1.0);
    let optimal = 2.0 / (1.0 + (1.0 - mu2).sqrt());
    (optimal > omega + 1e-4).then_some(optimal.min(1.999))
}

/// Mesh hierarchy for a layout, finest first.
fn build_levels(
    layout: &ElectrodeLayout,
    dielectric: &DielectricMap,
    spacing: f64,
    boundary: BoundaryCondition,
    growth: f64,
) -> Result<Vec<Level>, FieldError> {
    let d = &layout.domain_extent;
    let g = layout.gap_um;
    // Coarsest refined-zone spacing keeps at least 4 cells across the gap.
    let mut depth = 0u32;
    while depth < 10 && g / (spacing * f64::from(1u32 << (depth + 1))) >= 4.0 {
        depth += 1;
    }
    let (xs, ys) = loop {
        let coarse = spacing * f64::from(1u32 << depth);
        let (xs, ys) = match layout.geometry {
            ElectrodeGeometry::Coplanar => {
                let [(left, _), (_, right)] = layout.electrode_spans();
                let p = layout.probe_point;
                let fx = ((left - g).min(p.x_um - g / 4.0), (right + g).max(p.x_um + g / 4.0));
                let fy = ((-g / 2.0).min(p.y_um - g / 4.0), (g / 2.0).max(p.y_um + g / 4.0));
                let fits = |lo: f64, hi: f64, flo: f64, fhi: f64| {
                    let a = ((flo.max(lo)) / coarse).floor().max((lo / coarse).ceil());
                    let b = ((fhi.min(hi)) / coarse).ceil().min((hi / coarse).floor());
                    b > a
                };
                if depth > 0 && !(fits(d.x_min_um, d.x_max_um, fx.0, fx.1) && fits(d.y_min_um, d.y_max_um, fy.0, fy.1))
                {
                    depth -= 1;
                    continue;
                }
                (
                    mesh_axis(d.x_min_um, d.x_max_um, fx.0, fx.1, spacing, growth, depth),
                    mesh_axis(d.y_min_um, d.y_max_um, fy.0, fy.1, spacing, growth, depth),
                )
            }
            ElectrodeGeometry::ParallelPlate => {
                let span = |lo: f64, hi: f64| {
                    let a = (lo / coarse).ceil();
                    let b = (hi / coarse).floor();
                    b > a
                };
                if depth > 0 && !(span(d.x_min_um, d.x_max_um) && span(d.y_min_um, d.y_max_um)) {
                    depth -= 1;
                    continue;
                }
                (
                    mesh_axis(d.x_min_um, d.x_max_um, d.x_min_um, d.x_max_um, spacing, 1.0, depth),
                    mesh_axis(d.y_min_um, d.y_max_um, d.y_min_um, d.y_max_um, spacing, 1.0, depth),
                )
            }
        };
        break (xs, ys);
    };
    if xs.len() < 4 || ys.len() < 4 {
        return Err(FieldError::InvalidSolver(format!(
            "spacing {spacing} µm leaves fewer than 4 nodes across the domain"
        )));
    }

    let mut fine = Level::new(xs, ys, dielectric, boundary);
    let [v_left, v_right] = layout.electrode_potentials_v;
    match layout.geometry {
        ElectrodeGeometry::Coplanar => {
            let tol = 1e-9 * spacing;
            let j_surface = fine
                .ys
                .iter()
                .position(|y| y.abs() <= tol)
                .ok_or_else(|| FieldError::InvalidLayout("domain does not contain the electrode plane".into()))?;
            for (span, v) in layout.electrode_spans().into_iter().zip([v_left, v_right]) {
                let cols: Vec<usize> = (0..fine.nx)
                    .filter(|&i| fine.xs[i] >= span.0 - tol && fine.xs[i] <= span.1 + tol)
                    .collect();
                if cols.is_empty() {
                    return Err(FieldError::InvalidSolver(format!(
                        "spacing {spacing} µm does not resolve the electrodes"
                    )));
                }
                for i in cols {
                    fine.pin(i, j_surface, v);
                }
            }
        }
        ElectrodeGeometry::ParallelPlate => {
            for j in 0..fine.ny {
                fine.pin(0, j, v_left);
                let nx = fine.nx;
                fine.pin(nx - 1, j, v_right);
            }
        }
    }
    let mut levels = vec![fine];
    for _ in 0..depth {
        let next = levels[levels.len() - 1].coarsen(dielectric, boundary);
        levels.push(next);
    }
    Ok(levels)
}

/// Solve with default [`SolverOptions`].
pub fn solve_potential(
    layout: &ElectrodeLayout,
    dielectric: &DielectricMap,
    spacing_um: f64,
    tolerance_v: f64,
) -> Result<PotentialGrid, FieldError> {
    solve_potential_with(layout, dielectric, spacing_um, tolerance_v, &SolverOptions::default())
}

/// Solve the Laplace equation until the largest update of one iteration (a
/// sweep for SOR, a V-cycle for multigrid) falls below `tolerance_v`.
/// Requires `spacing_um <= gap / 20`.
pub fn solve_potential_with(
    layout: &ElectrodeLayout,
    dielectric: &DielectricMap,
    spacing_um: f64,
    tolerance_v: f64,
    options: &SolverOptions,
) -> Result<PotentialGrid, FieldError> {
    layout.validate()?;
    dielectric.validate()?;
    if !(spacing_um > 0.0 && spacing_um <= layout.gap_um / 20.0 * (1.0 + 1e-12)) {
        return Err(FieldError::InvalidSolver(format!(
            "spacing must lie in (0, gap/20 = {} µm], got {spacing_um}",
            layout.gap_um / 20.0
        )));
    }
    if !(tolerance_v > 0.0) {
        return Err(FieldError::InvalidSolver(format!(
            "tolerance must be positive, got {tolerance_v}"
        )));
    }
    let check_omega = |w: f64| {
        if w > 0.0 && w < 2.0 {
            Ok(())
        } else {
            Err(FieldError::InvalidSolver(format!(
                "relaxation factor must lie in (0, 2), got {w}"
            )))
        }
    };
    match options.method {
        SolverMethod::Sor(Relaxation::Fixed(w)) => check_omega(w)?,
        SolverMethod::Sor(Relaxation::Adaptive) => {}
        SolverMethod::Multigrid {
            smoothing_sweeps,
            omega,
        } => {
            check_omega(omega)?;
            if smoothing_sweeps == 0 {
                return Err(FieldError::InvalidSolver(
                    "multigrid needs at least one smoothing sweep".into(),
                ));
            }
        }
    }
    if !(options.grading >= 1.0 && options.grading <= 2.0) {
        return Err(FieldError::InvalidSolver(format!(
            "mesh grading must lie in [1, 2], got {}",
            options.grading
        )));
    }
    let boundary = options.boundary.unwrap_or(match layout.geometry {
        ElectrodeGeometry::Coplanar => BoundaryCondition::DirichletZero,
        ElectrodeGeometry::ParallelPlate => BoundaryCondition::NeumannZero,
    });

    let levels = build_levels(layout, dielectric, spacing_um, boundary, options.grading)?;
    let fine = &levels[0];
    let (iterations, last_update, omega, values) = match options.method {
        SolverMethod::Sor(relaxation) => {
            // Coarse-to-fine: each mesh starts from the interpolated
            // solution of the next coarser one.
            let mut u: Vec<f64> = Vec::new();
            let mut outcome = (0, 0.0, 1.0);
            for depth in (0..levels.len()).rev() {
                let level = &levels[depth];
                u = if depth + 1 == levels.len() {
                    vec![0.0; level.nx * level.ny]
                } else {
                    prolong(level, &levels[depth + 1], &u)
                };
                for (k, v) in u.iter_mut().enumerate() {
                    if level.pinned[k] {
                        *v = level.pin_values[k];
                    }
                }
                let tol = if depth == 0 { tolerance_v } else { tolerance_v * 10.0 };
                outcome = relax(level, &mut u, relaxation, outcome.2, tol, options.max_iterations)?;
            }
            (outcome.0, outcome.1, outcome.2, u)
        }
        SolverMethod::Multigrid {
            smoothing_sweeps,
            omega,
        } => {
            let mut u: Vec<f64> = fine
                .pinned
                .iter()
                .zip(&fine.pin_values)
                .map(|(&p, &v)| if p { v } else { 0.0 })
                .collect();
            let mut previous = u.clone();
            let mut last = f64::INFINITY;
            let mut done = None;
            for cycle in 1..=options.max_iterations {
                v_cycle(&levels, 0, &mut u, None, smoothing_sweeps, omega);
                last = u.iter().zip(&previous).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                if last < tolerance_v {
                    done = Some(cycle);
                    break;
                }
                previous.copy_from_slice(&u);
            }
            let cycles = done.ok_or(FieldError::NotConverged {
                iterations: options.max_iterations,
                last_update: last,
            })?;
            (cycles, last, omega, u)
        }
    };
    let fine = levels.into_iter().next().expect("finest level");
    Ok(PotentialGrid {
        spacing_um,
        xs: fine.xs,
        ys: fine.ys,
        values,
        pinned: fine.pinned,
        boundary_condition: boundary,
        iterations,
        last_update_v: last_update,
        relaxation: omega,
    })
}

/// Field per applied volt at the layout's probe point. The solve is linear in
/// the electrode potentials, so one solve serves every voltage of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCalibration {
    pub per_volt: FieldVector,
}

impl FieldCalibration {
    pub fn from_grid(grid: &PotentialGrid, layout: &ElectrodeLayout) -> Result<Self, FieldError> {
        let v = layout.applied_voltage();
        if v == 0.0 {
            return Err(FieldError::InvalidLayout(
                "field calibration needs a nonzero applied voltage".into(),
            ));
        }
        let field = grid.field_at(layout.probe_point)?;
        Ok(Self {
            per_volt: field.scaled(1.0 / v),
        })
    }

    pub fn solve(
        layout: &ElectrodeLayout,
        dielectric: &DielectricMap,
        spacing_um: f64,
        tolerance_v: f64,
        options: &SolverOptions,
    ) -> Result<Self, FieldError> {
        let grid = solve_potential_with(layout, dielectric, spacing_um, tolerance_v, options)?;
        Self::from_grid(&grid, layout)
    }

    pub fn field(&self, voltage_v: f64) -> FieldVector {
        self.per_volt.scaled(voltage_v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout(v: [f64; 2]) -> ElectrodeLayout {
        let mut l = ElectrodeLayout::coplanar(20.0, 20.0, v);
        l.domain_extent = DomainExtent {
            x_min_um: -80.0,
            x_max_um: 80.0,
            y_min_um: -60.0,
            y_max_um: 60.0,
        };
        l
    }

    #[test]
    fn oracle_arithmetic() {
        assert!((uniform_field_oracle(100.0, 100.0) - 1.0e4).abs() < 1e-9);
        assert_eq!(uniform_field_oracle(0.0, 37.0), 0.0);
        assert!((uniform_field_oracle(333.0, 100.0) - 33_300.0).abs() < 1e-9);
    }

    #[test]
    fn zero_potentials_give_zero_everywhere() {
        let layout = small_layout([0.0, 0.0]);
        let grid = solve_potential(&layout, &DielectricMap::default(), 1.0, 1e-9).unwrap();
        assert!(grid.values().iter().all(|&v| v == 0.0));
        let f = grid.field_at(Point::new(0.0, 0.0)).unwrap();
        assert_eq!(f, FieldVector::ZERO);
    }

    #[test]
    fn electrodes_hold_their_potentials() {
        let layout = small_layout([7.0, -3.0]);
        let grid = solve_potential(&layout, &DielectricMap::default(), 1.0, 1e-8).unwrap();
        let j = grid.node_near(Point::new(0.0, 0.0)).unwrap().1;
        for i in 0..grid.shape().0 {
            let x = grid.x_um(i);
            if (-30.0..=-10.0).contains(&x) {
                assert_eq!(grid.value(i, j), 7.0);
                assert!(grid.is_pinned(i, j));
            }
            if (10.0..=30.0).contains(&x) {
                assert_eq!(grid.value(i, j), -3.0);
            }
        }
    }

    #[test]
    fn linear_ramp_field() {
        // Parallel plates with Neumann top/bottom relax to an exact ramp.
        let layout = ElectrodeLayout::parallel_plate(40.0, 20.0, [40.0, 0.0]);
        let grid = solve_potential(&layout, &DielectricMap::uniform(1.0), 1.0, 1e-12).unwrap();
        // V(x) = 20 - x (V, µm) → 1 V/µm = 10⁴ V/cm.
        for p in [Point::new(0.0, 0.0), Point::new(-7.3, 2.2), Point::new(12.0, -4.5)] {
            let f = grid.field_at(p).unwrap();
            assert!((f.parallel_v_per_cm - 1.0e4).abs() < 1e-3, "{f:?}");
            assert!(f.perpendicular_v_per_cm.abs() < 1e-3);
        }
    }

    #[test]
    fn field_at_rejects_points_off_grid() {
        let layout = small_layout([1.0, 0.0]);
        let grid = solve_potential(&layout, &DielectricMap::default(), 1.0, 1e-6).unwrap();
        assert!(matches!(
            grid.field_at(Point::new(80.0, 0.0)),
            Err(FieldError::OutOfRange { .. })
        ));
        assert!(grid.field_at(Point::new(500.0, 0.0)).is_err());
        let xs = grid.xs();
        let n = xs.len();
        assert!(grid.field_at(Point::new(xs[n - 2], 0.0)).is_ok());
        assert!(grid.field_at(Point::new(0.5 * (xs[n - 2] + xs[n - 1]), 0.0)).is_err());
        assert!(grid.field_at(Point::new(0.5 * (xs[n - 3] + xs[n - 2]), 0.0)).is_ok());
    }

    #[test]
    fn validation_errors() {
        let mut l = small_layout([1.0, 0.0]);
        l.gap_um = -1.0;
        assert!(matches!(l.validate(), Err(FieldError::InvalidLayout(_))));

        let mut l = small_layout([1.0, 0.0]);
        l.domain_extent.x_max_um = 40.0;
        assert!(l.validate().is_err());

        let l = small_layout([1.0, 0.0]).with_probe(Point::new(1e4, 0.0));
        assert!(l.validate().is_err());

        let l = small_layout([1.0, 0.0]);
        let d = DielectricMap::default();
        assert!(matches!(
            solve_potential(&l, &d, 2.0, 1e-6),
            Err(FieldError::InvalidSolver(_))
        ));
        assert!(solve_potential(&l, &d, 1.0, 0.0).is_err());
        assert!(DielectricMap::uniform(0.5).validate().is_err());
    }

    #[test]
    fn non_convergence_reports_last_update() {
        let l = small_layout([1.0, 0.0]);
        let opts = SolverOptions {
            max_iterations: 1,
            ..SolverOptions::default()
        };
        match solve_potential_with(&l, &DielectricMap::default(), 1.0, 1e-14, &opts) {
            Err(FieldError::NotConverged {
                iterations,
                last_update,
            }) => {
                assert_eq!(iterations, 1);
                assert!(last_update > 1e-14);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn antisymmetric_drive_gives_antisymmetric_potential() {
        let layout = small_layout([0.5, -0.5]);
        let grid = solve_potential(&layout, &DielectricMap::default(), 1.0, 1e-10).unwrap();
        let (nx, ny) = grid.shape();
        let ic = grid.node_near(Point::new(0.0, 0.0)).unwrap().0;
        for j in 0..ny {
            for d in 0..=ic.min(nx - 1 - ic) {
                let a = grid.value(ic - d, j);
                let b = grid.value(ic + d, j);
                assert!((a + b).abs() < 1e-6, "asymmetry {} at j={j} d={d}", a + b);
            }
        }
    }

    #[test]
    fn sor_and_multigrid_agree() {
        let layout = small_layout([3.0, 0.0]);
        let d = DielectricMap::default();
        let mg = solve_potential(&layout, &d, 1.0, 1e-10).unwrap();
        let sor = solve_potential_with(&layout, &d, 1.0, 1e-11, &SolverOptions::sor(1.9)).unwrap();
        assert_eq!(mg.shape(), sor.shape());
        let worst = mg
            .values()
            .iter()
            .zip(sor.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < 1e-7, "max difference {worst}");
    }

    #[test]
    fn mesh_axis_is_nested_and_exact() {
        let axis = mesh_axis(-1250.0, 1250.0, -350.0, 350.0, 0.625, 1.08, 5);
        assert_eq!(axis[0], -1250.0);
        assert_eq!(*axis.last().unwrap(), 1250.0);
        assert_eq!((axis.len() - 1) % 32, 0);
        assert!(axis.windows(2).all(|w| w[1] > w[0]));
        // Zero and the electrode edges survive five coarsenings.
        let zero = axis.iter().position(|&x| x == 0.0).unwrap();
        assert_eq!(zero % 32, 0);
        let growth = axis
            .windows(3)
            .map(|w| (w[2] - w[1]) / (w[1] - w[0]))
            .fold(0.0_f64, f64::max);
        assert!(growth <= 1.08 + 1e-9, "growth {growth}");
    }

    #[test]
    fn csv_dump_header_and_rows() {
        let layout = small_layout([1.0, 0.0]);
        let grid = solve_potential(&layout, &DielectricMap::default(), 1.0, 1e-6).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x_um,y_um,potential_v"));
        let (nx, ny) = grid.shape();
        assert_eq!(text.lines().count(), 1 + nx * ny);
    }
}
