//! Executable versions of the analytic results: the Erdős–Rényi weight-scale
//! threshold, spectral concentration of `Δ̃`, Markov-chain convergence, the
//! strictness constructions and the rank counterexample.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dynamics::{distance_to_m, forward, mlp_layer, Grid, Signal, WeightStack};
use crate::error::{Error, Result};
use crate::graph::{connected_components, counterexample_graph, erdos_renyi, Graph};
use crate::rng::{self, derive_seed};
use crate::spectral::{
    augmented_laplacian, eigenvalues, invariant_basis, propagation_matrix, rate_from_sorted,
    SubspaceBasis, SymMatrix,
};

/// Parameters `(N, p, ε)` of the random-graph results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdInputs {
    pub n: usize,
    pub p: f64,
    pub eps: f64,
}

impl ThresholdInputs {
    pub fn new(n: usize, p: f64, eps: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p must lie in (0, 1], got {p}"
            )));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must lie in (0, 1), got {eps}"
            )));
        }
        Ok(Self { n, p, eps })
    }

    /// `Np − p + 1`, the expected augmented degree.
    pub fn expected_degree(&self) -> f64 {
        self.n as f64 * self.p - self.p + 1.0
    }

    fn log_term(&self) -> f64 {
        (4.0 * self.n as f64 / self.eps).ln()
    }
}

/// `s₀ = (1/7)·√((Np − p + 1) / ln(4N/ε))`.
pub fn er_threshold_s0(t: &ThresholdInputs) -> f64 {
    (t.expected_degree() / t.log_term()).sqrt() / 7.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChungQuantities {
    /// `k(ε) = 3(1 + ln(4/ε))`.
    pub k_eps: f64,
    /// `l(N, p, ε) = (1−p)/(Np−p+1) + 4√(3 ln(4N/ε)/(Np−p+1))`.
    pub l_npe: f64,
    /// `1 / l(N, p, ε)`, the weight scale below which the contraction holds.
    pub inverse_l: f64,
    /// Whether `(Np − p + 1) / ln N > k(ε)`, the density condition of the
    /// concentration bound.
    pub applicable: bool,
}

/// `k(ε) = 3(1 + ln(4/ε))`.
pub fn k_eps(eps: f64) -> f64 {
    3.0 * (1.0 + (4.0 / eps).ln())
}

pub fn chung_quantities(t: &ThresholdInputs) -> Result<ChungQuantities> {
    if t.n < 2 {
        return Err(Error::Domain(
            "density condition divides by ln N, which vanishes for N = 1".into(),
        ));
    }
    let degree = t.expected_degree();
    let k_eps = k_eps(t.eps);
    let l_npe = (1.0 - t.p) / degree + 4.0 * (3.0 * t.log_term() / degree).sqrt();
    Ok(ChungQuantities {
        k_eps,
        l_npe,
        inverse_l: 1.0 / l_npe,
        applicable: degree / (t.n as f64).ln() > k_eps,
    })
}

/// Center and half-width of the concentration band for the non-smallest
/// eigenvalues of `Δ̃`.
pub fn concentration_band(t: &ThresholdInputs) -> (f64, f64) {
    let degree = t.expected_degree();
    let center = t.n as f64 * t.p / degree;
    let half_width = 4.0 * (3.0 * t.log_term() / degree).sqrt();
    (center, half_width)
}

/// Outcome of a Monte Carlo or grid verification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest margin `bound − observed` seen; negative iff violated.
    /// `None` when no trials ran.
    pub worst_slack: Option<f64>,
    pub params: BTreeMap<String, Value>,
    /// First violating instance (lowest trial index), present iff
    /// `violations > 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

/// One trial: its margin and a description of the instance, used as the
/// payload if the margin is negative.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub slack: f64,
    pub instance: Value,
}

impl VerificationReport {
    /// Folds trial outcomes in index order. The result does not depend on how
    /// the outcomes were scheduled, only on their order.
    pub fn from_outcomes(
        name: impl Into<String>,
        params: BTreeMap<String, Value>,
        outcomes: Vec<TrialOutcome>,
    ) -> Self {
        let trials = outcomes.len();
        let mut violations = 0;
        let mut worst: Option<f64> = None;
        let mut payload = None;
        for outcome in outcomes {
            worst = Some(worst.map_or(outcome.slack, |w: f64| w.min(outcome.slack)));
            if !(outcome.slack >= 0.0) {
                violations += 1;
                if payload.is_none() {
                    payload = Some(outcome.instance);
                }
            }
        }
        Self {
            name: name.into(),
            trials,
            violations,
            worst_slack: worst,
            params,
            payload,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn summary_line(&self) -> String {
        let slack = self
            .worst_slack
            .map_or_else(|| "n/a".to_string(), |s| format!("{s:.3e}"));
        format!(
            "{:<22} {:>6} trials {:>6} violations  worst slack {slack}  [{}]",
            self.name,
            self.trials,
            self.violations,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Samples `trials` graphs `G(n, p)` and checks that every eigenvalue of `Δ̃`
/// except the smallest lies within the concentration band. A trial's slack is
/// `half_width − max deviation`.
pub fn er_concentration_check(
    t: &ThresholdInputs,
    trials: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let (center, half_width) = concentration_band(t);
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = derive_seed(seed, trial as u64);
            let g = erdos_renyi(t.n, t.p, trial_seed)?;
            let spectrum = eigenvalues(&augmented_laplacian(&g))?;
            let deviation = spectrum[1..]
                .iter()
                .map(|mu| (mu - center).abs())
                .fold(0.0, f64::max);
            Ok(TrialOutcome {
                slack: half_width - deviation,
                instance: json!({
                    "trial": trial,
                    "seed": trial_seed,
                    "max_deviation": deviation,
                    "components": connected_components(&g).m_count(),
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = BTreeMap::new();
    params.insert("n".into(), json!(t.n));
    params.insert("p".into(), json!(t.p));
    params.insert("eps".into(), json!(t.eps));
    params.insert("seed".into(), json!(seed));
    params.insert("center".into(), json!(center));
    params.insert("half_width".into(), json!(half_width));
    if let Ok(q) = chung_quantities(t) {
        params.insert("applicable".into(), json!(q.applicable));
    }
    Ok(VerificationReport::from_outcomes(
        "concentration",
        params,
        outcomes,
    ))
}

pub fn total_variation(x: &[f64], y: &[f64]) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovTrace {
    /// Second-largest absolute eigenvalue of the transition matrix.
    pub lambda: f64,
    /// `d_M(x_l)` against the uniform direction `𝟙/√n`.
    pub distances: Vec<f64>,
    /// `λ^l d_M(x_0)`.
    pub bounds: Vec<f64>,
    /// Total-variation distance of `x_l` to the uniform distribution.
    pub total_variation: Vec<f64>,
    /// Final distribution `x_steps`.
    pub final_state: Vec<f64>,
}

/// Iterates a symmetric doubly stochastic chain `x_{l+1} = P x_l` for `steps`
/// steps and records the distance to the uniform distribution.
pub fn markov_converge(
    p_transition: &SymMatrix,
    x0: &[f64],
    steps: usize,
    tol: f64,
) -> Result<MarkovTrace> {
    let n = p_transition.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "chain has {n} states but the initial vector has {}",
            x0.len()
        )));
    }
    let p = p_transition.as_matrix();
    if p.min() < -tol {
        return Err(Error::InvalidParameter(format!(
            "transition matrix has a negative entry {}",
            p.min()
        )));
    }
    for (i, row) in p.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "row {i} sums to {sum}, not 1"
            )));
        }
    }
    if x0.iter().any(|v| *v < -tol) || (x0.iter().sum::<f64>() - 1.0).abs() > tol {
        return Err(Error::InvalidParameter(
            "initial vector is not a probability distribution".into(),
        ));
    }

    let lambda = rate_from_sorted(&eigenvalues(p_transition)?, 1);
    let basis = SubspaceBasis::from_vector(&vec![1.0; n])?;
    let uniform = vec![1.0 / n as f64; n];

    let mut x = DVector::from_column_slice(x0);
    let mut distances = Vec::with_capacity(steps + 1);
    let mut total_variation_trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if step > 0 {
            x = p * &x;
        }
        let signal = Signal::new(DMatrix::from_column_slice(n, 1, x.as_slice()))?;
        distances.push(distance_to_m(&signal, &basis)?);
        total_variation_trace.push(total_variation(x.as_slice(), &uniform));
    }
    let d0 = distances[0];
    let bounds = (0..=steps).map(|l| lambda.powi(l as i32) * d0).collect();
    Ok(MarkovTrace {
        lambda,
        distances,
        bounds,
        total_variation: total_variation_trace,
        final_state: x.iter().copied().collect(),
    })
}

/// Lazy symmetric walk on a connected graph:
/// `½I + ½(I − (D − A)/(d_max + 1))`.
///
/// Symmetric, doubly stochastic, irreducible (connected) and aperiodic
/// (positive diagonal).
pub fn lazy_symmetric_chain(g: &Graph) -> Result<SymMatrix> {
    if connected_components(g).m_count() != 1 {
        return Err(Error::InvalidParameter(
            "chain construction needs a connected graph".into(),
        ));
    }
    let n = g.n();
    let deg = g.degrees();
    let scale = 1.0 / (deg.iter().copied().max().unwrap_or(0) as f64 + 1.0);
    let mut walk = DMatrix::zeros(n, n);
    for i in 0..n {
        walk[(i, i)] = 1.0 - deg[i] as f64 * scale;
    }
    for (i, j) in g.edges() {
        walk[(i, j)] = scale;
        walk[(j, i)] = scale;
    }
    SymMatrix::new((DMatrix::identity(n, n) + walk) * 0.5)
}

/// A random irreducible aperiodic symmetric doubly stochastic chain on
/// `states` states, built from a connected `G(states, 0.4)` draw.
pub fn random_markov_chain(states: usize, seed: u64) -> Result<SymMatrix> {
    if states == 0 {
        return Err(Error::InvalidParameter(
            "chain needs at least one state".into(),
        ));
    }
    for attempt in 0..10_000u64 {
        let g = erdos_renyi(states, 0.4, derive_seed(seed, attempt))?;
        if connected_components(&g).m_count() == 1 {
            return lazy_symmetric_chain(&g);
        }
    }
    Err(Error::Numerical("could not draw a connected graph".into()))
}

/// Result of evaluating one of the two-node constructions over a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionReport {
    pub name: String,
    /// Grid points where the claim is made (distance to `M` non-zero).
    pub evaluated: usize,
    /// Points excluded because `d_M(X) = 0`; both distances vanish there.
    pub excluded: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Largest deviation of `d_M(f(X))` from its closed form.
    pub closed_form_error: f64,
    /// `W·λ` of the construction.
    pub w_lambda: f64,
    pub claim_holds: bool,
}

struct RatioStats {
    evaluated: usize,
    excluded: usize,
    min: f64,
    max: f64,
    closed_form_error: f64,
}

fn grid_ratios(
    p: &SymMatrix,
    w: f64,
    basis: &SubspaceBasis,
    points: impl Iterator<Item = [f64; 2]>,
    closed_form: impl Fn([f64; 2]) -> f64,
) -> Result<RatioStats> {
    let weight = [DMatrix::from_element(1, 1, w)];
    let mut stats = RatioStats {
        evaluated: 0,
        excluded: 0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        closed_form_error: 0.0,
    };
    for x in points {
        let signal = Signal::from_row_slice(2, 1, &x)?;
        let before = distance_to_m(&signal, basis)?;
        let after = distance_to_m(&mlp_layer(p, &signal, &weight)?, basis)?;
        stats.closed_form_error = stats.closed_form_error.max((after - closed_form(x)).abs());
        // Points on M up to rounding of the grid coordinates.
        if before <= 1e-12 * signal.frobenius_norm() {
            stats.excluded += 1;
            continue;
        }
        stats.evaluated += 1;
        let ratio = after / before;
        stats.min = stats.min.min(ratio);
        stats.max = stats.max.max(ratio);
    }
    Ok(stats)
}

/// `P = diag(μ, λ)`, `e = (1, 0)`, scalar weight `W > 1/λ`: every `X` with
/// `x₂ > 0` moves strictly away from `M`, since `d_M(f(X)) = (Wλx₂)⁺ > x₂`.
pub fn strictness_construction(
    mu: f64,
    lam: f64,
    w: f64,
    grid: &Grid,
) -> Result<ConstructionReport> {
    if !(mu > 0.0 && lam > 0.0) {
        return Err(Error::InvalidParameter(
            "mu and lambda must be positive".into(),
        ));
    }
    if !(w > 1.0 / lam) {
        return Err(Error::InvalidParameter(format!(
            "weight {w} must exceed 1/lambda = {}",
            1.0 / lam
        )));
    }
    let p = SymMatrix::diagonal(&[mu, lam])?;
    let basis = SubspaceBasis::from_vector(&[1.0, 0.0])?;
    let points = grid
        .points()
        .into_iter()
        .filter(|&(_, x2)| x2 >= 0.0)
        .map(|(x1, x2)| [x1, x2]);
    let stats = grid_ratios(&p, w, &basis, points, |x| (w * lam * x[1]).max(0.0))?;
    Ok(ConstructionReport {
        name: "strictness".into(),
        evaluated: stats.evaluated,
        excluded: stats.excluded,
        ratio_min: stats.min,
        ratio_max: stats.max,
        closed_form_error: stats.closed_form_error,
        w_lambda: w * lam,
        claim_holds: stats.evaluated > 0 && stats.min > 1.0,
    })
}

/// `P = (λ/2)[[1, −1], [−1, 1]]`, `e = (1, 1)/√2`, `W = 1` with `1 < λ < 2`:
/// although `Wλ > 1`, every `X = a·e + b·e⊥` with `b ≠ 0` moves closer to `M`,
/// since `d_M(f(X)) = λ|b|/2`.
///
/// The grid supplies the coefficients `(a, b)`.
pub fn nonstrictness_construction(lam: f64, grid: &Grid) -> Result<ConstructionReport> {
    if !(lam > 1.0 && lam < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in (1, 2), got {lam}"
        )));
    }
    let half = lam / 2.0;
    let p = SymMatrix::from_row_slice(2, &[half, -half, -half, half])?;
    let basis = SubspaceBasis::from_vector(&[1.0, 1.0])?;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let points = grid
        .points()
        .into_iter()
        .map(move |(a, b)| [r * (a + b), r * (a - b)]);
    // Recover b from x: b = (x₁ − x₂)/√2.
    let stats = grid_ratios(&p, 1.0, &basis, points, |x| {
        half * ((x[0] - x[1]) * r).abs()
    })?;
    Ok(ConstructionReport {
        name: "nonstrictness".into(),
        evaluated: stats.evaluated,
        excluded: stats.excluded,
        ratio_min: stats.min,
        ratio_max: stats.max,
        closed_form_error: stats.closed_form_error,
        w_lambda: lam,
        claim_holds: stats.evaluated > 0 && stats.max < 1.0,
    })
}

/// Numerical rank: singular values above `rel_tol · σ₁`.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Ranks of `Y_n = σ(L Y_{n−1})`, `Y_0 = x`, for `n = 0..=steps`, with `L` the
/// propagation matrix of the 4-node counterexample graph.
pub fn rank_trace(x: &DMatrix<f64>, steps: usize, rel_tol: f64) -> Result<Vec<usize>> {
    let l = propagation_matrix(&counterexample_graph());
    let identity = DMatrix::identity(x.ncols(), x.ncols());
    let mut y = Signal::new(x.clone())?;
    let mut ranks = vec![numeric_rank(y.as_matrix(), rel_tol)];
    for _ in 0..steps {
        y = mlp_layer(&l, &y, std::slice::from_ref(&identity))?;
        ranks.push(numeric_rank(y.as_matrix(), rel_tol));
    }
    Ok(ranks)
}

/// Rank trace from an entrywise absolute Gaussian `4 × 3` input.
pub fn counterexample_rank_trace(max_steps: usize, seed: u64, rel_tol: f64) -> Result<Vec<usize>> {
    if max_steps == 0 {
        return Err(Error::InvalidParameter(
            "max_steps must be at least 1".into(),
        ));
    }
    let mut r = rng::seeded(seed);
    let x = DMatrix::from_fn(4, 3, |_, _| {
        let v: f64 = StandardNormal.sample(&mut r);
        v.abs()
    });
    rank_trace(&x, max_steps, rel_tol)
}

/// Control input `e ⊗ (1, 1, 1)` with `e` the principal eigenvector; rank one
/// at every step.
pub fn rank_control_trace(max_steps: usize, rel_tol: f64) -> Result<Vec<usize>> {
    let e = invariant_basis(&counterexample_graph());
    let x = e.vectors() * DMatrix::from_element(1, 3, 1.0);
    rank_trace(&x, max_steps, rel_tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub norms: Vec<f64>,
    /// `(Π_{k<l} s_k)·‖X⁽⁰⁾‖_F`.
    pub bounds: Vec<f64>,
    /// Layers where the norm exceeds its bound by more than the slack.
    pub violations: Vec<usize>,
}

/// With every layer's `s_l < 1` the output norm shrinks geometrically toward
/// the trivial fixed point `0` (the propagation matrix has operator norm one).
pub fn trivial_fixed_point_check(
    g: &Graph,
    ws: &WeightStack,
    x0: &Signal,
    slack: f64,
) -> Result<FixedPointReport> {
    let products = ws.layer_products();
    if let Some((l, s)) = products.iter().enumerate().find(|(_, s)| **s >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "layer {l} has singular product {s} >= 1"
        )));
    }
    let outputs = forward(&propagation_matrix(g), x0, ws)?;
    let norms: Vec<f64> = outputs.iter().map(Signal::frobenius_norm).collect();
    let mut bounds = vec![norms[0]];
    for s in &products {
        let last = *bounds.last().unwrap();
        bounds.push(last * s);
    }
    let violations = norms
        .iter()
        .zip(&bounds)
        .enumerate()
        .filter(|(_, (n, b))| **n > **b + slack)
        .map(|(l, _)| l)
        .collect();
    Ok(FixedPointReport {
        norms,
        bounds,
        violations,
    })
}
