//! Forward dynamics `X ↦ MLP(PX)` of a graph convolutional network and the
//! distance `d_M` from a signal to the invariant subspace `M = U ⊗ R^C`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{self, check_assumptions, restricted_rate, SubspaceBasis, SymMatrix};
use crate::tolerance::Tolerances;

/// Node features: an `N × C` matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal(DMatrix<f64>);

impl Signal {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "signal has non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self(DMatrix::zeros(n, c))
    }

    pub fn from_row_slice(n: usize, c: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * c {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a {n}x{c} signal, got {}",
                n * c,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, c, data))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn c(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }
}

pub fn relu(x: &Signal) -> Signal {
    Signal(x.0.map(|v| v.max(0.0)))
}

/// One layer `f(X) = σ(⋯σ(σ(P X W₁) W₂)⋯ W_H)`: propagate, then alternate
/// right-multiplication and ReLU for each weight matrix.
pub fn mlp_layer(p: &SymMatrix, x: &Signal, weights: &[DMatrix<f64>]) -> Result<Signal> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter(
            "layer needs at least one weight matrix".into(),
        ));
    }
    if p.dim() != x.n() {
        return Err(Error::DimensionMismatch(format!(
            "propagation matrix is {0}x{0} but signal has {1} rows",
            p.dim(),
            x.n()
        )));
    }
    let mut h = p.as_matrix() * &x.0;
    for (k, w) in weights.iter().enumerate() {
        if w.nrows() != h.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "weight {k} is {}x{} but the signal has {} channels",
                w.nrows(),
                w.ncols(),
                h.ncols()
            )));
        }
        h = (h * w).map(|v| v.max(0.0));
    }
    Signal::new(h)
}

fn check_basis(x: &Signal, basis: &SubspaceBasis) -> Result<()> {
    if x.n() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows but basis vectors have length {}",
            x.n(),
            basis.dim()
        )));
    }
    Ok(())
}

/// `d_M(X) = ‖X − E EᵀX‖_F`, the Frobenius distance to `M`.
pub fn distance_to_m(x: &Signal, basis: &SubspaceBasis) -> Result<f64> {
    check_basis(x, basis)?;
    Ok(basis.perpendicular(&x.0).norm())
}

/// `‖X₁‖_F / ‖X₀‖_F` for the split `X = X₀ + X₁`, `X₀ ∈ M`, `X₁ ⟂ M`.
///
/// Returns `f64::INFINITY` when `X₀ = 0` but `X₁ ≠ 0`, and `0` when both vanish.
pub fn perp_ratio(x: &Signal, basis: &SubspaceBasis) -> Result<f64> {
    check_basis(x, basis)?;
    let inside = basis.project(&x.0);
    let outside = (&x.0 - &inside).norm();
    let inside = inside.norm();
    Ok(if inside > 0.0 {
        outside / inside
    } else if outside > 0.0 {
        f64::INFINITY
    } else {
        0.0
    })
}

const POWER_MAX_ITER: usize = 10_000;
const POWER_RESIDUAL_TOL: f64 = 1e-10;
const POWER_STAGNATION: f64 = 1e-15;

/// Dominant eigenvalue of the PSD matrix `g` by power iteration from `start`.
fn power_iterate(g: &DMatrix<f64>, start: DVector<f64>) -> Result<f64> {
    let mut v = start.normalize();
    let mut previous = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let gv = g * &v;
        let norm = gv.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let rho = v.dot(&gv);
        let residual = (&gv - &v * rho).norm();
        if residual <= POWER_RESIDUAL_TOL * rho.abs() {
            return Ok(rho);
        }
        // Near-degenerate top pair: the vector drifts but the value has settled.
        if (rho - previous).abs() <= POWER_STAGNATION * rho.abs() {
            return Ok(rho);
        }
        previous = rho;
        v = gv / norm;
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge within {POWER_MAX_ITER} iterations"
    )))
}

/// Largest singular value of `w`, by power iteration on `WᵀW`.
///
/// Runs from the normalized all-ones vector and again from a fixed
/// pseudo-random start, keeping the larger estimate, so a start vector that
/// happens to be orthogonal to the dominant direction cannot go unnoticed.
pub fn max_singular_value(w: &DMatrix<f64>) -> Result<f64> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "matrix has non-finite entries".into(),
        ));
    }
    if w.is_empty() || w.amax() == 0.0 {
        return Ok(0.0);
    }
    let g = w.transpose() * w;
    let c = g.nrows();
    let ones = power_iterate(&g, DVector::from_element(c, 1.0))?;
    let mut r = rng::seeded(0x005E_ED0F_5160);
    let random = power_iterate(
        &g,
        DVector::from_fn(c, |_, _| StandardNormal.sample(&mut r)),
    )?;
    Ok(ones.max(random).max(0.0).sqrt())
}

/// Returns `(s_target / σ_max(w)) · w`.
pub fn rescale_to_singular(w: &DMatrix<f64>, s_target: f64) -> Result<DMatrix<f64>> {
    if !(s_target > 0.0 && s_target.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target singular value must be positive, got {s_target}"
        )));
    }
    let s = max_singular_value(w)?;
    if s == 0.0 {
        return Err(Error::InvalidParameter(
            "cannot rescale a zero matrix".into(),
        ));
    }
    Ok(w * (s_target / s))
}

/// Weights of an `L`-layer network; layer `l` holds `H_l` square `C × C`
/// matrices together with their cached maximum singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    layers: Vec<Vec<DMatrix<f64>>>,
    singular: Vec<Vec<f64>>,
}

impl WeightStack {
    pub fn new(layers: Vec<Vec<DMatrix<f64>>>) -> Result<Self> {
        let c = layers
            .first()
            .and_then(|l| l.first())
            .map(|w| w.nrows())
            .ok_or_else(|| Error::InvalidParameter("weight stack is empty".into()))?;
        let mut singular = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::InvalidParameter(format!("layer {l} has no weights")));
            }
            let mut values = Vec::with_capacity(layer.len());
            for (h, w) in layer.iter().enumerate() {
                if w.nrows() != c || w.ncols() != c {
                    return Err(Error::DimensionMismatch(format!(
                        "weight ({l}, {h}) is {}x{}, expected {c}x{c}",
                        w.nrows(),
                        w.ncols()
                    )));
                }
                values.push(max_singular_value(w)?);
            }
            singular.push(values);
        }
        Ok(Self { layers, singular })
    }

    pub fn layers(&self) -> &[Vec<DMatrix<f64>>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self) -> usize {
        self.layers[0][0].nrows()
    }

    /// Cached `s_{lh}`.
    pub fn singular_values(&self) -> &[Vec<f64>] {
        &self.singular
    }

    /// `s_l = Π_h s_{lh}` for every layer.
    pub fn layer_products(&self) -> Vec<f64> {
        self.singular.iter().map(|l| l.iter().product()).collect()
    }

    /// `s = sup_l s_l`.
    pub fn sup(&self) -> f64 {
        self.layer_products().into_iter().fold(0.0, f64::max)
    }
}

/// Gaussian weights with standard deviation `1/√c` (one matrix per layer),
/// optionally rescaled so each has maximum singular value `s_target`.
pub fn init_weights(
    c: usize,
    layer_count: usize,
    s_target: Option<f64>,
    seed: u64,
) -> Result<WeightStack> {
    if c == 0 || layer_count == 0 {
        return Err(Error::InvalidParameter(
            "channel and layer counts must be positive".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0 / (c as f64).sqrt()).expect("positive deviation");
    let mut r = rng::seeded(seed);
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let mut w = DMatrix::from_fn(c, c, |_, _| normal.sample(&mut r));
        if let Some(s) = s_target {
            w = rescale_to_singular(&w, s)?;
        }
        layers.push(vec![w]);
    }
    WeightStack::new(layers)
}

/// Input protocol of the distance experiment: each node gets a uniformly random
/// one-of-`k` label, embedded into `c` channels by a standard Gaussian `k × c`
/// matrix.
pub fn one_hot_input(n: usize, k: usize, c: usize, seed: u64) -> Result<Signal> {
    if n == 0 || k == 0 || c == 0 {
        return Err(Error::InvalidParameter(
            "n, k and c must be positive".into(),
        ));
    }
    let mut r = rng::seeded(seed);
    let embedding = DMatrix::from_fn(k, c, |_, _| StandardNormal.sample(&mut r));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    Signal::new(DMatrix::from_fn(n, c, |i, j| embedding[(labels[i], j)]))
}

/// All layer outputs `X⁽⁰⁾, …, X⁽ᴸ⁾`.
pub fn forward(p: &SymMatrix, x0: &Signal, ws: &WeightStack) -> Result<Vec<Signal>> {
    let mut outputs = Vec::with_capacity(ws.layer_count() + 1);
    outputs.push(x0.clone());
    for layer in ws.layers() {
        let next = mlp_layer(p, outputs.last().unwrap(), layer)?;
        outputs.push(next);
    }
    Ok(outputs)
}

/// Per-layer distances to `M` next to the bound `d_M(X⁽⁰⁾)·Π_{k<l} s_k λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub distances: Vec<f64>,
    pub bounds: Vec<f64>,
    pub lambda: f64,
    pub s_values: Vec<f64>,
}

impl Trajectory {
    /// `ln(d_M(X⁽ˡ⁾)/d_M(X⁽⁰⁾))`, undefined when the initial distance is zero.
    pub fn log_rel_distance(&self, layer: usize) -> Option<f64> {
        let d0 = self.distances[0];
        (d0 > 0.0).then(|| (self.distances[layer] / d0).ln())
    }

    pub fn log_rel_bound(&self, layer: usize) -> Option<f64> {
        let b0 = self.bounds[0];
        (b0 > 0.0).then(|| (self.bounds[layer] / b0).ln())
    }

    /// Layers whose distance exceeds the bound by more than
    /// `slack·(1 + bound)`.
    pub fn bound_violations(&self, slack: f64) -> Vec<usize> {
        self.distances
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .filter(|(_, (d, b))| **d > **b + slack * (1.0 + **b))
            .map(|(l, _)| l)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrajectoryOptions {
    /// Run even if `(P, E)` fails the assumption checks.
    pub bypass_assumptions: bool,
    pub tolerances: Tolerances,
}

pub fn run_trajectory(
    p: &SymMatrix,
    basis: &SubspaceBasis,
    x0: &Signal,
    ws: &WeightStack,
    options: &TrajectoryOptions,
) -> Result<Trajectory> {
    let report = check_assumptions(p, basis, &options.tolerances)?;
    if !report.all_pass() && !options.bypass_assumptions {
        return Err(Error::Assumption(format!(
            "basis/propagation pair fails the structural checks: {report:?}"
        )));
    }
    let lambda = restricted_rate(p, basis)?;
    let s_values = ws.layer_products();
    let outputs = forward(p, x0, ws)?;
    let distances = outputs
        .iter()
        .map(|x| distance_to_m(x, basis))
        .collect::<Result<Vec<_>>>()?;
    let mut bounds = Vec::with_capacity(distances.len());
    bounds.push(distances[0]);
    for s in &s_values {
        let last = *bounds.last().unwrap();
        bounds.push(last * s * lambda);
    }
    Ok(Trajectory {
        distances,
        bounds,
        lambda,
        s_values,
    })
}

/// Rectangular sampling grid for the two-node vector field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            x_min: -2.0,
            x_max: 2.0,
            y_min: -2.0,
            y_max: 2.0,
            resolution: 41,
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let axis = |lo: f64, hi: f64| -> Vec<f64> {
            if self.resolution == 1 {
                return vec![lo];
            }
            let step = (hi - lo) / (self.resolution - 1) as f64;
            (0..self.resolution).map(|i| lo + i as f64 * step).collect()
        };
        let xs = axis(self.x_min, self.x_max);
        let ys = axis(self.y_min, self.y_max);
        xs.iter()
            .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub x1: f64,
    pub x2: f64,
    pub v1: f64,
    pub v2: f64,
    pub speed: f64,
    pub d_before: f64,
    pub d_after: f64,
}

/// Samples `V(X) = σ(P X w) − X` for two nodes and one channel.
pub fn vector_field(
    p: &SymMatrix,
    w: f64,
    basis: &SubspaceBasis,
    grid: &Grid,
) -> Result<Vec<FieldSample>> {
    if p.dim() != 2 || basis.dim() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "vector field needs a 2x2 propagation matrix, got {0}x{0}",
            p.dim()
        )));
    }
    if grid.resolution == 0 {
        return Err(Error::InvalidParameter(
            "grid resolution must be positive".into(),
        ));
    }
    let weight = [DMatrix::from_element(1, 1, w)];
    grid.points()
        .into_iter()
        .map(|(x1, x2)| {
            let x = Signal::from_row_slice(2, 1, &[x1, x2])?;
            let fx = mlp_layer(p, &x, &weight)?;
            let (v1, v2) = (fx.0[0] - x1, fx.0[1] - x2);
            Ok(FieldSample {
                x1,
                x2,
                v1,
                v2,
                speed: v1.hypot(v2),
                d_before: distance_to_m(&x, basis)?,
                d_after: distance_to_m(&fx, basis)?,
            })
        })
        .collect()
}

/// The two hand-picked 2×2 propagation matrices (eigenvalues 0.5 and 1.0) of
/// the vector-field experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldCase {
    /// Eigenvalue-1 eigenvector has entries of one sign.
    NonNegative,
    /// Eigenvalue-1 eigenvector has entries of mixed sign.
    MixedSign,
}

impl FieldCase {
    pub const DEFAULT_WEIGHT: f64 = 1.2;
    pub const WEIGHT_SWEEP: [f64; 6] = [0.5, 1.0, 1.2, 1.5, 2.0, 4.0];

    pub fn from_index(case: u8) -> Result<Self> {
        match case {
            1 => Ok(Self::NonNegative),
            2 => Ok(Self::MixedSign),
            _ => Err(Error::InvalidParameter(format!(
                "field case must be 1 or 2, got {case}"
            ))),
        }
    }

    pub fn matrix(self) -> SymMatrix {
        let data = match self {
            Self::NonNegative => [0.7469915, 0.2499819, 0.2499819, 0.7530085],
            Self::MixedSign => [0.6899574, -0.2426827, -0.2426827, 0.8100426],
        };
        SymMatrix::from_row_slice(2, &data).expect("static matrix is symmetric")
    }

    /// Unit eigenvector of the top eigenvalue (≈ 1), first entry positive.
    pub fn basis(self) -> SubspaceBasis {
        let spectrum = spectral::eigen(&self.matrix()).expect("2x2 eigenproblem");
        let top = spectrum.eigenvectors().column(1);
        SubspaceBasis::from_vector(top.as_slice()).expect("unit eigenvector")
    }
}
