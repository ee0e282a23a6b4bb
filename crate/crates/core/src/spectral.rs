//! Augmented normalized Laplacian, GCN propagation matrix, dense spectra and
//! the invariant subspace spanned by `D̃^{1/2}u_m`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{connected_components, Graph};
use crate::tolerance::Tolerances;

/// A real symmetric matrix. Symmetry is exact: the upper triangle is mirrored
/// onto the lower one at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts a square, finite matrix that is symmetric up to rounding
    /// (`|a_ij − a_ji| ≤ 1e-12·(1 + max|a|)`).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "matrix has non-finite entries".into(),
            ));
        }
        let scale = 1.0 + m.amax();
        let n = m.nrows();
        let mut m = m;
        for i in 0..n {
            for j in i + 1..n {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
                m[(j, i)] = m[(i, j)];
            }
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(values),
        ))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors (column `k` pairs with
/// eigenvalue `k`). Each eigenvector's first non-negligible entry is positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest `‖A v_k − λ_k v_k‖₂ / ‖A‖₂`-style residual, using the
    /// Frobenius norm of `A` as the scale.
    pub fn max_relative_residual(&self, m: &SymMatrix) -> f64 {
        let a = m.as_matrix();
        let scale = a.norm().max(f64::MIN_POSITIVE);
        (0..self.len())
            .map(|k| {
                let v = self.eigenvectors.column(k);
                (a * v - v * self.eigenvalues[k]).norm() / scale
            })
            .fold(0.0, f64::max)
    }

    /// Max-norm of `VᵀV − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let v = &self.eigenvectors;
        let n = v.ncols();
        (v.transpose() * v - DMatrix::identity(n, n)).amax()
    }

    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        v * d * v.transpose()
    }
}

fn iteration_cap(n: usize) -> usize {
    100 * n.max(1) + 1000
}

/// Full dense eigendecomposition (Householder tridiagonalization followed by
/// implicit-shift QR), sorted ascending.
pub fn eigen(m: &SymMatrix) -> Result<Spectrum> {
    let n = m.dim();
    let decomposition =
        SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, iteration_cap(n)).ok_or_else(
            || {
                Error::Numerical(format!(
                    "symmetric eigensolver did not converge within {} iterations",
                    iteration_cap(n)
                ))
            },
        )?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        decomposition.eigenvalues[a]
            .total_cmp(&decomposition.eigenvalues[b])
            .then(a.cmp(&b))
    });

    let eigenvalues = order
        .iter()
        .map(|&k| decomposition.eigenvalues[k])
        .collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = decomposition.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only, ascending. Cheaper than [`eigen`] for large matrices.
pub fn eigenvalues(m: &SymMatrix) -> Result<Vec<f64>> {
    let n = m.dim();
    let decomposition =
        SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, iteration_cap(n))
            .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut values: Vec<f64> = decomposition.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

fn augmented_degrees(g: &Graph) -> Vec<f64> {
    g.degrees().into_iter().map(|d| d as f64 + 1.0).collect()
}

/// `P = D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A + I`, `D̃ = D + I`.
pub fn propagation_matrix(g: &Graph) -> SymMatrix {
    let n = g.n();
    let inv_sqrt: Vec<f64> = augmented_degrees(g)
        .iter()
        .map(|d| 1.0 / d.sqrt())
        .collect();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        p[(i, i)] = inv_sqrt[i] * inv_sqrt[i];
    }
    for (i, j) in g.edges() {
        let w = inv_sqrt[i] * inv_sqrt[j];
        p[(i, j)] = w;
        p[(j, i)] = w;
    }
    SymMatrix(p)
}

/// `Δ̃ = I − D̃^{-1/2} Ã D̃^{-1/2}`.
pub fn augmented_laplacian(g: &Graph) -> SymMatrix {
    let n = g.n();
    let p = propagation_matrix(g).into_matrix();
    SymMatrix(DMatrix::identity(n, n) - p)
}

/// An `N × M` matrix with orthonormal columns spanning a subspace `U ⊂ R^N`.
///
/// Orthonormality is validated on construction. Non-negativity is not: bases
/// that violate it are legitimate inputs to [`check_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis(DMatrix<f64>);

impl SubspaceBasis {
    pub fn new(vectors: DMatrix<f64>, tol: f64) -> Result<Self> {
        if vectors.ncols() == 0 || vectors.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "basis needs at least one vector".into(),
            ));
        }
        let m = vectors.ncols();
        let err = (vectors.transpose() * &vectors - DMatrix::identity(m, m)).amax();
        if !(err <= tol) {
            return Err(Error::InvalidParameter(format!(
                "basis is not orthonormal: max |EᵀE − I| = {err:e} > {tol:e}"
            )));
        }
        Ok(Self(vectors))
    }

    /// Single unit vector `v / ‖v‖`.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        let col = nalgebra::DVector::from_column_slice(v);
        let norm = col.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter(
                "basis vector must be non-zero".into(),
            ));
        }
        Self::new(DMatrix::from_columns(&[col / norm]), 1e-12)
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Ambient dimension `N`.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn m_count(&self) -> usize {
        self.0.ncols()
    }

    /// Orthogonal projection `E Eᵀ X` onto `U ⊗ R^C`.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.0 * (self.0.transpose() * x)
    }

    /// `X − E Eᵀ X`, the component perpendicular to `U ⊗ R^C`.
    pub fn perpendicular(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - self.project(x)
    }
}

/// The basis `e_m = D̃^{1/2} u_m / ‖D̃^{1/2} u_m‖` of the eigenvalue-1 eigenspace
/// of the propagation matrix, one column per connected component.
pub fn invariant_basis(g: &Graph) -> SubspaceBasis {
    let labeling = connected_components(g);
    let deg = augmented_degrees(g);
    let mut mass = vec![0.0; labeling.m_count()];
    for (v, &l) in labeling.labels().iter().enumerate() {
        mass[l] += deg[v];
    }
    let mut e = DMatrix::zeros(g.n(), labeling.m_count());
    for (v, &l) in labeling.labels().iter().enumerate() {
        e[(v, l)] = (deg[v] / mass[l]).sqrt();
    }
    SubspaceBasis(e)
}

/// `λ = max |λ_n|` over the `N − M` smallest eigenvalues of the propagation
/// matrix; the top `M` (all equal to one) are dropped by position.
pub fn lambda_rate(g: &Graph) -> Result<f64> {
    let m = connected_components(g).m_count();
    let values = eigenvalues(&propagation_matrix(g))?;
    Ok(rate_from_sorted(&values, m))
}

/// `max |λ_n|` over all but the top `m` of an ascending eigenvalue list.
pub fn rate_from_sorted(ascending: &[f64], m: usize) -> f64 {
    let keep = ascending.len().saturating_sub(m);
    ascending[..keep]
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Operator norm of `P` compressed to `U^⊥`, i.e. the spectral radius of
/// `(I − EEᵀ) P (I − EEᵀ)`. Equals [`lambda_rate`] for a graph's own basis and
/// works for any symmetric `P`.
pub fn restricted_rate(p: &SymMatrix, basis: &SubspaceBasis) -> Result<f64> {
    check_dims(p, basis)?;
    let n = p.dim();
    let e = basis.vectors();
    let q = DMatrix::identity(n, n) - e * e.transpose();
    let compressed = SymMatrix::new(&q * p.as_matrix() * &q)?;
    Ok(eigenvalues(&compressed)?
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max))
}

fn check_dims(p: &SymMatrix, basis: &SubspaceBasis) -> Result<()> {
    if p.dim() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {0}x{0} but basis vectors have length {1}",
            p.dim(),
            basis.dim()
        )));
    }
    Ok(())
}

/// Outcome of checking the two structural assumptions on `(P, E)`:
/// non-negative orthonormal basis vectors and `P`-invariance of their span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub min_entry: f64,
    pub orthonormality_error: f64,
    pub invariance_residual: f64,
    pub non_negative: bool,
    pub orthonormal: bool,
    pub invariant: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.non_negative && self.orthonormal && self.invariant
    }
}

pub fn check_assumptions(
    p: &SymMatrix,
    basis: &SubspaceBasis,
    tol: &Tolerances,
) -> Result<AssumptionReport> {
    check_dims(p, basis)?;
    let e = basis.vectors();
    let m = e.ncols();
    let min_entry = e.min();
    let orthonormality_error = (e.transpose() * e - DMatrix::identity(m, m)).amax();
    let pe = p.as_matrix() * e;
    let invariance_residual = (&pe - e * (e.transpose() * &pe)).amax();
    let t = tol.assumption;
    Ok(AssumptionReport {
        min_entry,
        orthonormality_error,
        invariance_residual,
        non_negative: min_entry >= -t,
        orthonormal: orthonormality_error <= t,
        invariant: invariance_residual <= t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Histogram of Laplacian eigenvalues over `[0, 2]` with `bins` equal bins.
/// The right edge is closed on the last bin.
pub fn spectral_histogram(eigenvalues: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    const SLACK: f64 = 1e-8;
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "histogram needs at least one bin".into(),
        ));
    }
    let width = 2.0 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            left: b as f64 * width,
            right: if b + 1 == bins {
                2.0
            } else {
                (b + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &v in eigenvalues {
        if !(-SLACK..=2.0 + SLACK).contains(&v) {
            return Err(Error::Domain(format!(
                "eigenvalue {v} lies outside [0, 2]; input is not a normalized Laplacian spectrum"
            )));
        }
        let idx = ((v.clamp(0.0, 2.0) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::erdos_renyi;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn random_symmetric(n: usize, seed: u64) -> SymMatrix {
        let mut r = rng::seeded(seed);
        let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut r));
        SymMatrix::new((&a + a.transpose()) * 0.5).unwrap()
    }

    fn k2() -> Graph {
        Graph::complete(2).unwrap()
    }

    fn triangle_pair() -> Graph {
        let t = Graph::complete(3).unwrap();
        t.disjoint_union(&t)
    }

    #[test]
    fn sym_matrix_validation() {
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::from_row_slice(2, &[1.0, 2.0, 3.0, 1.0]).is_err());
        assert!(SymMatrix::from_row_slice(2, &[1.0, f64::NAN, f64::NAN, 1.0]).is_err());
        let s = SymMatrix::from_row_slice(2, &[1.0, 2.0, 2.0 + 1e-15, 1.0]).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
    }

    #[test]
    fn laplacian_examples() {
        let single = Graph::empty(1).unwrap();
        assert_eq!(augmented_laplacian(&single).as_matrix()[(0, 0)], 0.0);
        assert_eq!(propagation_matrix(&single).as_matrix()[(0, 0)], 1.0);

        let lap = augmented_laplacian(&k2());
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((lap.as_matrix() - expected).amax() < 1e-15);

        let p = propagation_matrix(&k2());
        assert!((p.as_matrix() - DMatrix::from_element(2, 2, 0.5)).amax() < 1e-15);
    }

    #[test]
    fn counterexample_propagation_has_rank_three() {
        let p = propagation_matrix(&crate::graph::counterexample_graph());
        let sv = p.as_matrix().clone().singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * top).count();
        assert_eq!(rank, 3);
    }

    #[test]
    fn propagation_is_non_negative() {
        for seed in 0..20 {
            let g = erdos_renyi(40, 0.15, seed).unwrap();
            assert!(propagation_matrix(&g).as_matrix().min() >= 0.0);
        }
    }

    #[test]
    fn eigen_examples() {
        let id = eigen(&SymMatrix::identity(3)).unwrap();
        assert_eq!(id.eigenvalues(), &[1.0, 1.0, 1.0]);
        let d = eigen(&SymMatrix::diagonal(&[2.0, -1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(d.eigenvalues(), &[-1.0, 0.0, 2.0]);
        assert_eq!(d.eigenvectors().column(0)[1], 1.0);
    }

    #[test]
    fn eigen_invariants_and_sign_convention() {
        for (seed, n) in [(1u64, 5usize), (2, 40), (3, 120)] {
            let m = random_symmetric(n, seed);
            let s = eigen(&m).unwrap();
            assert!(s.max_relative_residual(&m) <= 1e-8);
            assert!(s.orthonormality_error() <= 1e-8);
            assert!(s.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
            for k in 0..n {
                let first = s
                    .eigenvectors()
                    .column(k)
                    .iter()
                    .copied()
                    .find(|v| v.abs() > 1e-12);
                assert!(first.unwrap() > 0.0);
            }
            let again = eigen(&m).unwrap();
            assert_eq!(s.eigenvectors(), again.eigenvectors());
        }
    }

    #[test]
    fn eigen_reconstructs_random_matrices() {
        let mut r = rng::seeded(99);
        for seed in 0..12 {
            let n = r.random_range(1..=300);
            let m = random_symmetric(n, seed);
            let s = eigen(&m).unwrap();
            let err = (s.reconstruct() - m.as_matrix()).norm();
            assert!(err <= 1e-7 * m.as_matrix().norm(), "n={n} err={err}");
        }
    }

    #[test]
    fn laplacian_spectrum_in_zero_two() {
        let mut r = rng::seeded(5);
        for seed in 0..200 {
            let n = r.random_range(1..=60);
            let p = [0.02, 0.1, 0.5, 1.0][seed as usize % 4];
            let g = erdos_renyi(n, p, seed).unwrap();
            for v in eigenvalues(&augmented_laplacian(&g)).unwrap() {
                assert!((-1e-8..2.0 - 1e-8).contains(&v), "eigenvalue {v}");
            }
        }
    }

    #[test]
    fn invariant_basis_examples() {
        let b = invariant_basis(&k2());
        assert_eq!(b.m_count(), 1);
        for v in b.vectors().iter() {
            assert_close(*v, 1.0 / 2f64.sqrt(), 1e-15);
        }

        let b = invariant_basis(&Graph::empty(3).unwrap());
        assert_eq!(b.vectors(), &DMatrix::<f64>::identity(3, 3));

        let b = invariant_basis(&triangle_pair());
        assert_eq!(b.m_count(), 2);
        for v in 0..6 {
            let (on, off) = if v < 3 { (0, 1) } else { (1, 0) };
            assert_close(b.vectors()[(v, on)], 1.0 / 3f64.sqrt(), 1e-15);
            assert_eq!(b.vectors()[(v, off)], 0.0);
        }
    }

    #[test]
    fn invariant_basis_is_fixed_by_propagation() {
        for seed in 0..30 {
            let g = erdos_renyi(50, 0.05, seed).unwrap();
            let b = invariant_basis(&g);
            let p = propagation_matrix(&g);
            let residual = (p.as_matrix() * b.vectors() - b.vectors()).amax();
            assert!(residual <= 1e-10);
            let report = check_assumptions(&p, &b, &Tolerances::default()).unwrap();
            assert!(report.all_pass(), "{report:?}");
        }
    }

    #[test]
    fn lambda_examples() {
        assert_close(lambda_rate(&k2()).unwrap(), 0.0, 1e-15);
        assert_eq!(lambda_rate(&Graph::empty(4).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn restricted_rate_matches_positional_rate() {
        for seed in 0..10 {
            let g = erdos_renyi(40, 0.08, seed).unwrap();
            let direct = lambda_rate(&g).unwrap();
            let general = restricted_rate(&propagation_matrix(&g), &invariant_basis(&g)).unwrap();
            assert_close(direct, general, 1e-10);
        }
    }

    #[test]
    fn assumption_checks() {
        let b = SubspaceBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), 1e-12).unwrap();
        let report =
            check_assumptions(&SymMatrix::identity(2), &b, &Tolerances::default()).unwrap();
        assert!(report.all_pass());

        let p =
            SymMatrix::from_row_slice(2, &[0.6899574, -0.2426827, -0.2426827, 0.8100426]).unwrap();
        let e = SubspaceBasis::from_vector(&[0.61637234, -0.78745485]).unwrap();
        let report = check_assumptions(&p, &e, &Tolerances::default()).unwrap();
        assert!(!report.non_negative);
        assert!(!report.all_pass());

        let wrong = SubspaceBasis::from_vector(&[1.0, 0.0, 0.0]).unwrap();
        assert!(check_assumptions(&p, &wrong, &Tolerances::default()).is_err());
        assert!(SubspaceBasis::new(DMatrix::from_element(2, 1, 1.0), 1e-10).is_err());
    }

    #[test]
    fn u_perp_is_invariant() {
        let mut r = rng::seeded(17);
        for trial in 0..100 {
            let g = erdos_renyi(30, 0.1, trial).unwrap();
            let b = invariant_basis(&g);
            let p = propagation_matrix(&g);
            let raw = nalgebra::DVector::from_fn(30, |_, _| StandardNormal.sample(&mut r));
            let v = b.perpendicular(&DMatrix::from_column_slice(30, 1, raw.as_slice()));
            let v = &v / v.norm();
            let leak = (b.vectors().transpose() * (p.as_matrix() * v)).norm();
            assert!(leak <= 1e-8);
        }
    }

    #[test]
    fn histogram_examples() {
        let k2_spec = eigenvalues(&augmented_laplacian(&k2())).unwrap();
        let h = spectral_histogram(&k2_spec, 2).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 1]);

        let empty_spec = eigenvalues(&augmented_laplacian(&Graph::empty(5).unwrap())).unwrap();
        let h = spectral_histogram(&empty_spec, 4).unwrap();
        assert_eq!(
            h.iter().map(|b| b.count).collect::<Vec<_>>(),
            vec![5, 0, 0, 0]
        );
        assert_eq!(h[3].right, 2.0);

        assert!(spectral_histogram(&[0.5], 0).is_err());
        assert!(matches!(
            spectral_histogram(&[2.5], 3),
            Err(Error::Domain(_))
        ));
        assert!(spectral_histogram(&[2.0 + 1e-9, -1e-9], 3).is_ok());

        let g = erdos_renyi(80, 0.1, 3).unwrap();
        let spec = eigenvalues(&augmented_laplacian(&g)).unwrap();
        let total: usize = spectral_histogram(&spec, 17)
            .unwrap()
            .iter()
            .map(|b| b.count)
            .sum();
        assert_eq!(total, 80);
    }
}
