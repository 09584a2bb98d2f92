//! Linear compression of the subgrid content and the state transform
//! `u ↦ [ū; s]`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::boundary::reflection_coefficient;
use crate::error::{check_len, Error, Result};
use crate::grid::{divisible_resolution, FilterPair, GridPair, Resampler};

/// Compression vector `t = J^{-1/2} t̂` with `‖t̂‖₂ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionOperator {
    pub t: Vec<f64>,
    pub t_hat: Vec<f64>,
}

impl CompressionOperator {
    /// Normalizes `direction` and fixes its sign so the largest-magnitude
    /// entry (first one on ties) is positive.
    pub fn from_direction(direction: &[f64]) -> Result<Self> {
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if direction.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateCompression);
        }
        let mut lead = 0;
        for (k, v) in direction.iter().enumerate() {
            if v.abs() > direction[lead].abs() {
                lead = k;
            }
        }
        let sign = if direction[lead] < 0.0 { -1.0 } else { 1.0 };
        let t_hat: Vec<f64> = direction.iter().map(|v| sign * v / norm).collect();
        let scale = 1.0 / (direction.len() as f64).sqrt();
        let t = t_hat.iter().map(|v| v * scale).collect();
        Ok(Self { t, t_hat })
    }

    pub fn ratio(&self) -> usize {
        self.t.len()
    }

    /// `ρ = J tᵀ P t`, used for the SGS ghost cells.
    pub fn rho(&self) -> f64 {
        reflection_coefficient(&self.t)
    }

    /// `sᵢ = tᵀ μᵢ` for every coarse cell of a fine vector.
    pub fn compress(&self, u_fine: &[f64], fp: &FilterPair) -> Result<Vec<f64>> {
        check_len(fp.grid.ratio, self.t.len())?;
        let up = fp.sgs_content(u_fine)?;
        Ok(up.chunks(fp.grid.ratio).map(|mu| mu.iter().zip(&self.t).map(|(a, b)| a * b).sum()).collect())
    }
}

/// `X_μ X_μᵀ`, accumulated cell by cell.
fn sgs_gram(snapshots: &[&[f64]], fp: &FilterPair) -> Result<DMatrix<f64>> {
    let j = fp.grid.ratio;
    let mut gram = DMatrix::<f64>::zeros(j, j);
    for u in snapshots {
        let up = fp.sgs_content(u)?;
        for mu in up.chunks(j) {
            for a in 0..j {
                for b in 0..=a {
                    gram[(a, b)] += mu[a] * mu[b];
                }
            }
        }
    }
    for a in 0..j {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    Ok(gram)
}

/// Dominant left singular vector of the per-cell SGS snapshot matrix.
pub fn fit_compression(snapshots: &[&[f64]], fp: &FilterPair) -> Result<CompressionOperator> {
    if snapshots.is_empty() {
        return Err(Error::InsufficientData("compression needs at least one snapshot".into()));
    }
    let gram = sgs_gram(snapshots, fp)?;
    if !(gram.trace() > 0.0) {
        return Err(Error::DegenerateCompression);
    }
    let eig = SymmetricEigen::new(gram);
    let lead = eig.eigenvalues.imax();
    let v: Vec<f64> = eig.eigenvectors.column(lead).iter().copied().collect();
    CompressionOperator::from_direction(&v)
}

/// `(1/(pI)) Σ |J⁻¹ μᵀμ − (tᵀμ)²|` over all cells of all snapshots.
pub fn compression_loss(comp: &CompressionOperator, snapshots: &[&[f64]], fp: &FilterPair) -> Result<f64> {
    check_len(fp.grid.ratio, comp.t.len())?;
    if snapshots.is_empty() {
        return Err(Error::InsufficientData("loss needs at least one snapshot".into()));
    }
    let j = fp.grid.ratio;
    let mut total = 0.0;
    for u in snapshots {
        let up = fp.sgs_content(u)?;
        for mu in up.chunks(j) {
            let energy: f64 = mu.iter().map(|v| v * v).sum::<f64>() / j as f64;
            let s: f64 = mu.iter().zip(&comp.t).map(|(a, b)| a * b).sum();
            total += (energy - s * s).abs();
        }
    }
    Ok(total / (snapshots.len() * fp.grid.coarse_cells) as f64)
}

/// Linear map from a reference-grid field to the coarse state: an optional
/// conservative remap onto a divisible resolution, the filter, and the
/// optional SGS compression.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTransform {
    pub resampler: Option<Resampler>,
    pub fp: FilterPair,
    pub comp: Option<CompressionOperator>,
}

impl StateTransform {
    pub fn new(fp: FilterPair, comp: Option<CompressionOperator>) -> Result<Self> {
        if let Some(c) = &comp {
            check_len(fp.grid.ratio, c.t.len())?;
        }
        Ok(Self { resampler: None, fp, comp })
    }

    /// Filter-only transform from `fine_cells` reference cells to `coarse_cells`.
    pub fn filter_only(start: f64, end: f64, fine_cells: usize, coarse_cells: usize) -> Result<Self> {
        if coarse_cells == 0 || fine_cells < coarse_cells {
            return Err(Error::InvalidGrid(format!("cannot coarsen {fine_cells} cells to {coarse_cells}")));
        }
        let target = divisible_resolution(fine_cells, coarse_cells);
        let grid = GridPair::new(start, end, coarse_cells, target / coarse_cells)?;
        let resampler = if target == fine_cells { None } else { Some(Resampler::new(fine_cells, target)?) };
        Ok(Self { resampler, fp: FilterPair::new(grid), comp: None })
    }

    /// Filter plus a compression fitted on `snapshots` (reference-grid fields).
    pub fn fit(start: f64, end: f64, fine_cells: usize, coarse_cells: usize, snapshots: &[&[f64]]) -> Result<Self> {
        let mut st = Self::filter_only(start, end, fine_cells, coarse_cells)?;
        if st.fp.grid.ratio < 2 {
            return Err(Error::InvalidGrid("compression needs at least two subcells".into()));
        }
        let remapped = snapshots.iter().map(|u| st.remap(u)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = remapped.iter().map(|v| v.as_slice()).collect();
        st.comp = Some(fit_compression(&refs, &st.fp)?);
        Ok(st)
    }

    pub fn input_len(&self) -> usize {
        self.resampler.as_ref().map_or(self.fp.grid.fine_cells, |r| r.from_cells())
    }

    pub fn coarse_cells(&self) -> usize {
        self.fp.grid.coarse_cells
    }

    pub fn state_len(&self) -> usize {
        if self.comp.is_some() {
            2 * self.coarse_cells()
        } else {
            self.coarse_cells()
        }
    }

    pub fn rho(&self) -> f64 {
        self.comp.as_ref().map_or(1.0, |c| c.rho())
    }

    /// Field on the divisible fine grid.
    pub fn remap(&self, u: &[f64]) -> Result<Vec<f64>> {
        match &self.resampler {
            Some(r) => r.apply(u),
            None => {
                check_len(self.fp.grid.fine_cells, u.len())?;
                Ok(u.to_vec())
            }
        }
    }

    /// Filtered field `ū`.
    pub fn filter(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.fp.filter(&self.remap(u)?)
    }

    /// `T u = [ū; s]` (just `ū` without compression).
    pub fn to_state(&self, u: &[f64]) -> Result<Vec<f64>> {
        let fine = self.remap(u)?;
        let mut state = self.fp.filter(&fine)?;
        if let Some(c) = &self.comp {
            state.extend(c.compress(&fine, &self.fp)?);
        }
        Ok(state)
    }

    /// `T · du/dt`; the transform is linear so this is the same action.
    pub fn transform_rhs(&self, du_dt: &[f64]) -> Result<Vec<f64>> {
        self.to_state(du_dt)
    }

    /// Dense matrix of the transform, for checks.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.input_len();
        let mut m = DMatrix::zeros(self.state_len(), n);
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let c = self.to_state(&e)?;
            m.column_mut(col).copy_from_slice(&c);
            e[col] = 0.0;
        }
        Ok(m)
    }

    /// Concatenated mass diagonal `Ω₂` (or `Ω`) of the state.
    pub fn state_mass(&self) -> Vec<f64> {
        let mut m = self.fp.grid.coarse_mass.clone();
        if self.comp.is_some() {
            m.extend_from_slice(&self.fp.grid.coarse_mass);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_product;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn pair(i: usize, j: usize) -> FilterPair {
        FilterPair::new(GridPair::new(0.0, 1.0, i, j).unwrap())
    }

    #[test]
    fn rank_one_snapshots_are_captured_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fp = pair(6, 4);
        let v = [0.3, -0.1, -0.5, 0.3];
        let snaps: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..6)
                    .flat_map(|_| {
                        let a: f64 = rng.gen_range(-2.0..2.0);
                        let m: f64 = rng.gen_range(-1.0..1.0);
                        v.iter().map(move |x| m + a * x).collect::<Vec<_>>()
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = snaps.iter().map(|s| s.as_slice()).collect();
        let comp = fit_compression(&refs, &fp).unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // largest-magnitude entry of v is −0.5, so the fitted sign flips it
        for (a, b) in comp.t_hat.iter().zip(&v) {
            assert!((a + b / norm).abs() < 1e-12);
        }
        assert!(compression_loss(&comp, &refs, &fp).unwrap() < 1e-14);
        let unit: f64 = comp.t_hat.iter().map(|x| x * x).sum();
        assert!((unit - 1.0).abs() < 1e-12);
        for (t, th) in comp.t.iter().zip(&comp.t_hat) {
            assert!((t - th / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 3 × 5 snapshot matrix: J = 3, five cells in one snapshot
        let fp = pair(5, 3);
        let u = random_vec(&mut rng, 15);
        let comp = fit_compression(&[&u], &fp).unwrap();
        let up = fp.sgs_content(&u).unwrap();
        let x = DMatrix::from_column_slice(3, 5, &up);
        let svd = x.clone().svd(true, false);
        let k = svd.singular_values.imax();
        let v = svd.u.unwrap().column(k).clone_owned();
        let dot: f64 = v.iter().zip(&comp.t_hat).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);
        let eig = SymmetricEigen::new(&x * x.transpose());
        let w = eig.eigenvectors.column(eig.eigenvalues.imax()).clone_owned();
        let dot: f64 = w.iter().zip(&comp.t_hat).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_sgs_content_is_rejected() {
        let fp = pair(4, 3);
        let u = fp.reconstruct(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(fit_compression(&[&u], &fp), Err(Error::DegenerateCompression));
        assert!(fit_compression(&[], &fp).is_err());
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fp = pair(4, 3);
        let snaps: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 12)).collect();
        let refs: Vec<&[f64]> = snaps.iter().map(|s| s.as_slice()).collect();
        let zero = CompressionOperator { t: vec![0.0; 3], t_hat: vec![0.0; 3] };
        let total: f64 = refs.iter().map(|u| fp.sgs_content(u).unwrap().iter().map(|v| v * v).sum::<f64>()).sum();
        let loss = compression_loss(&zero, &refs, &fp).unwrap();
        assert!((loss - total / (3.0 * 4.0 * 3.0)).abs() < 1e-14);

        let comp = fit_compression(&refs, &fp).unwrap();
        let mut brute = 0.0;
        for u in &refs {
            let up = fp.sgs_content(u).unwrap();
            for i in 0..4 {
                let mut e = 0.0;
                let mut s = 0.0;
                for j in 0..3 {
                    e += up[i * 3 + j] * up[i * 3 + j];
                    s += comp.t[j] * up[i * 3 + j];
                }
                brute += (e / 3.0 - s * s).abs();
            }
        }
        brute /= 12.0;
        assert!((compression_loss(&comp, &refs, &fp).unwrap() - brute).abs() < 1e-14);
    }

    #[test]
    fn state_transform_examples() {
        let fp = pair(1, 2);
        let comp = CompressionOperator::from_direction(&[1.0, -1.0]).unwrap();
        let st = StateTransform::new(fp, Some(comp.clone())).unwrap();
        let a = st.to_state(&[1.0, 2.0]).unwrap();
        assert_eq!(a[0], 1.5);
        // t = [1, -1]/2, μ = [-0.5, 0.5]
        assert!((a[1] - (-0.5)).abs() < 1e-15);

        let fp = pair(3, 4);
        let st =
            StateTransform::new(fp.clone(), Some(CompressionOperator::from_direction(&[1.0, 2.0, -1.0, 0.5]).unwrap()))
                .unwrap();
        let u = fp.reconstruct(&[1.0, -2.0, 0.5]).unwrap();
        assert!(st.to_state(&u).unwrap()[3..].iter().all(|v| v.abs() < 1e-15));
        assert!(st.transform_rhs(&[0.0; 12]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_transform_is_linear_and_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let snaps: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 70)).collect();
        let refs: Vec<&[f64]> = snaps.iter().map(|s| s.as_slice()).collect();
        // 70 reference cells onto 8 coarse cells goes through a remap to 72
        let st = StateTransform::fit(0.0, 2.0, 70, 8, &refs).unwrap();
        assert_eq!(st.fp.grid.fine_cells, 72);
        assert!(st.resampler.is_some());
        let u = random_vec(&mut rng, 70);
        let v = random_vec(&mut rng, 70);
        let (alpha, beta) = (0.7, -1.3);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = st.to_state(&mix).unwrap();
        let tu = st.to_state(&u).unwrap();
        let tv = st.to_state(&v).unwrap();
        for k in 0..lhs.len() {
            assert!((lhs[k] - alpha * tu[k] - beta * tv[k]).abs() < 1e-13);
        }
        let dense = st.dense().unwrap() * DVector::from_vec(u.clone());
        for (a, b) in st.transform_rhs(&u).unwrap().iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn compressed_energy_never_exceeds_sgs_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fp = pair(10, 6);
        let snaps: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 60)).collect();
        let refs: Vec<&[f64]> = snaps.iter().map(|s| s.as_slice()).collect();
        let comp = fit_compression(&refs, &fp).unwrap();
        for u in &refs {
            let s = comp.compress(u, &fp).unwrap();
            let up = fp.sgs_content(u).unwrap();
            let es = 0.5 * inner_product(&s, &s, &fp.grid.coarse_mass).unwrap();
            let eu = 0.5 * inner_product(&up, &up, &fp.grid.fine_mass).unwrap();
            assert!(es <= eu * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sign_convention_prefers_first_of_tied_entries() {
        let c = CompressionOperator::from_direction(&[-1.0, 1.0, 0.0]).unwrap();
        assert!(c.t_hat[0] > 0.0);
        let c = CompressionOperator::from_direction(&[0.2, -0.9]).unwrap();
        assert!(c.t_hat[1] > 0.0);
        assert!(CompressionOperator::from_direction(&[0.0, 0.0]).is_err());
    }
}
