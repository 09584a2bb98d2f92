//! Uniform fine/coarse grid pairs and the discrete filter algebra.
//!
//! The fine grid of `N` cells is obtained by splitting each of the `I` coarse
//! cells into `J` equal subcells. The filter `W = Ω⁻¹ O ω` averages the fine
//! values of each coarse cell and the reconstruction `R = Oᵀ` repeats every
//! coarse value over its subcells, so that `W R = I`.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// A fine grid nested inside a coarse grid on a 1D interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPair {
    pub domain_start: f64,
    pub domain_end: f64,
    /// Number of fine cells `N = I·J`.
    pub fine_cells: usize,
    /// Number of coarse cells `I`.
    pub coarse_cells: usize,
    /// Compression factor `J`.
    pub ratio: usize,
    /// Fine spacing `h`.
    pub fine_spacing: f64,
    /// Coarse spacing `H = J·h`.
    pub coarse_spacing: f64,
    /// Diagonal of the fine mass matrix `ω`.
    pub fine_mass: Vec<f64>,
    /// Diagonal of the coarse mass matrix `Ω`.
    pub coarse_mass: Vec<f64>,
}

impl GridPair {
    pub fn new(domain_start: f64, domain_end: f64, coarse_cells: usize, ratio: usize) -> Result<Self> {
        if coarse_cells == 0 || ratio == 0 {
            return Err(Error::InvalidGrid(format!("cell counts must be positive (I = {coarse_cells}, J = {ratio})")));
        }
        if !(domain_end > domain_start) || !domain_start.is_finite() || !domain_end.is_finite() {
            return Err(Error::InvalidGrid(format!("degenerate interval [{domain_start}, {domain_end}]")));
        }
        let fine_cells = coarse_cells * ratio;
        let length = domain_end - domain_start;
        let fine_spacing = length / fine_cells as f64;
        let coarse_spacing = length / coarse_cells as f64;
        Ok(Self {
            domain_start,
            domain_end,
            fine_cells,
            coarse_cells,
            ratio,
            fine_spacing,
            coarse_spacing,
            fine_mass: vec![fine_spacing; fine_cells],
            coarse_mass: vec![coarse_spacing; coarse_cells],
        })
    }

    pub fn length(&self) -> f64 {
        self.domain_end - self.domain_start
    }

    pub fn fine_centers(&self) -> Vec<f64> {
        cell_centers(self.domain_start, self.fine_spacing, self.fine_cells)
    }

    pub fn coarse_centers(&self) -> Vec<f64> {
        cell_centers(self.domain_start, self.coarse_spacing, self.coarse_cells)
    }
}

pub fn cell_centers(start: f64, spacing: f64, cells: usize) -> Vec<f64> {
    (0..cells).map(|i| start + (i as f64 + 0.5) * spacing).collect()
}

/// Filter / reconstruction pair acting on a [`GridPair`].
///
/// Both operators are applied as implicit stencils; [`FilterPair::dense_filter`]
/// and [`FilterPair::dense_reconstruction`] materialize them for checking.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub grid: GridPair,
}

impl FilterPair {
    pub fn new(grid: GridPair) -> Self {
        Self { grid }
    }

    pub fn coarse_cells(&self) -> usize {
        self.grid.coarse_cells
    }

    pub fn fine_cells(&self) -> usize {
        self.grid.fine_cells
    }

    /// `ū = W u`: mass-weighted average over the subcells of every coarse cell.
    pub fn filter(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.fine_cells, u.len())?;
        let j = self.grid.ratio;
        let g = &self.grid;
        Ok((0..g.coarse_cells)
            .map(|i| {
                let cell = i * j..(i + 1) * j;
                let weighted: f64 = u[cell.clone()].iter().zip(&g.fine_mass[cell]).map(|(v, m)| v * m).sum();
                weighted / g.coarse_mass[i]
            })
            .collect())
    }

    /// `R ū`: piecewise-constant reconstruction on the fine grid.
    pub fn reconstruct(&self, ubar: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.coarse_cells, ubar.len())?;
        let j = self.grid.ratio;
        Ok(ubar.iter().flat_map(|&v| std::iter::repeat_n(v, j)).collect())
    }

    /// SGS content `u' = u − R W u`.
    pub fn sgs_content(&self, u: &[f64]) -> Result<Vec<f64>> {
        let rec = self.reconstruct(&self.filter(u)?)?;
        Ok(u.iter().zip(&rec).map(|(a, b)| a - b).collect())
    }

    pub fn dense_overlap(&self) -> DMatrix<f64> {
        let g = &self.grid;
        DMatrix::from_fn(g.coarse_cells, g.fine_cells, |i, n| if n / g.ratio == i { 1.0 } else { 0.0 })
    }

    /// Dense `W = Ω⁻¹ O ω`.
    pub fn dense_filter(&self) -> DMatrix<f64> {
        let g = &self.grid;
        let omega_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            g.coarse_cells,
            g.coarse_mass.iter().map(|m| 1.0 / m),
        ));
        let fine = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(g.fine_mass.clone()));
        omega_inv * self.dense_overlap() * fine
    }

    /// Dense `R = Oᵀ`.
    pub fn dense_reconstruction(&self) -> DMatrix<f64> {
        self.dense_overlap().transpose()
    }
}

/// `(x, y)_ξ = xᵀ ξ y` for a diagonal mass matrix `ξ`.
pub fn inner_product(x: &[f64], y: &[f64], mass: &[f64]) -> Result<f64> {
    check_len(x.len(), y.len())?;
    check_len(x.len(), mass.len())?;
    Ok(x.iter().zip(y).zip(mass).map(|((a, b), m)| a * m * b).sum())
}

/// Conservative piecewise-constant remap between two uniform grids on the
/// same interval. Used to bring a DNS field onto a resolution divisible by
/// the requested number of coarse cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    from_cells: usize,
    to_cells: usize,
    // (source index, weight) per target cell; weights sum to one.
    rows: Vec<Vec<(usize, f64)>>,
}

impl Resampler {
    pub fn new(from_cells: usize, to_cells: usize) -> Result<Self> {
        if from_cells == 0 || to_cells == 0 {
            return Err(Error::InvalidGrid("resampling needs non-empty grids".into()));
        }
        // Work in units where the interval is [0, from·to] so every cell edge
        // is an integer and the overlaps are exact.
        let (a, b) = (from_cells as u64, to_cells as u64);
        let rows = (0..b)
            .map(|k| {
                let lo = k * a;
                let hi = (k + 1) * a;
                let first = lo / b;
                let last = (hi - 1) / b;
                (first..=last)
                    .map(|n| {
                        let s_lo = n * b;
                        let s_hi = (n + 1) * b;
                        let overlap = hi.min(s_hi) - lo.max(s_lo);
                        (n as usize, overlap as f64 / a as f64)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { from_cells, to_cells, rows })
    }

    pub fn from_cells(&self) -> usize {
        self.from_cells
    }

    pub fn to_cells(&self) -> usize {
        self.to_cells
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.from_cells, u.len())?;
        Ok(self.rows.iter().map(|row| row.iter().map(|&(n, w)| w * u[n]).sum()).collect())
    }
}

/// Smallest multiple of `coarse_cells` that is at least `fine_cells`.
pub fn divisible_resolution(fine_cells: usize, coarse_cells: usize) -> usize {
    fine_cells.div_ceil(coarse_cells) * coarse_cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn grid_construction_matches_reference_sizes() {
        let g = GridPair::new(0.0, 2.0 * std::f64::consts::PI, 20, 50).unwrap();
        assert_eq!(g.fine_cells, 1000);
        assert!((g.fine_spacing - 2.0 * std::f64::consts::PI / 1000.0).abs() < 1e-15);

        let g = GridPair::new(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(g.fine_cells, 1);
        assert_eq!(g.fine_spacing, 1.0);
        assert_eq!(g.coarse_spacing, 1.0);

        let g = GridPair::new(0.0, 32.0, 30, 20).unwrap();
        assert_eq!(g.fine_cells, 600);
        assert!((g.coarse_spacing - 32.0 / 30.0).abs() < 1e-15);
        assert!((g.fine_spacing * 20.0 - g.coarse_spacing).abs() < 1e-14);
        assert!(g.fine_mass.iter().chain(&g.coarse_mass).all(|&m| m > 0.0));
        let c = g.fine_centers();
        assert!((c[0] - 0.5 * g.fine_spacing).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(GridPair::new(0.0, 1.0, 0, 2).is_err());
        assert!(GridPair::new(0.0, 1.0, 2, 0).is_err());
        assert!(GridPair::new(1.0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn filter_small_examples() {
        let fp = FilterPair::new(GridPair::new(0.0, 1.0, 2, 2).unwrap());
        assert_eq!(fp.filter(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.5, 3.5]);
        assert_eq!(fp.reconstruct(&[1.5, 3.5]).unwrap(), vec![1.5, 1.5, 3.5, 3.5]);
        assert_eq!(fp.sgs_content(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![-0.5, 0.5, -0.5, 0.5]);
        let c = fp.filter(&[2.5; 4]).unwrap();
        assert!(c.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        assert!(fp.filter(&[1.0, 2.0]).is_err());
        assert!(fp.reconstruct(&[1.0]).is_err());
    }

    #[test]
    fn implicit_operators_match_dense_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fp = FilterPair::new(GridPair::new(0.0, 2.0 * std::f64::consts::PI, 20, 50).unwrap());
        let u = random_vec(&mut rng, 1000);
        let dense = fp.dense_filter() * DVector::from_vec(u.clone());
        let fast = fp.filter(&u).unwrap();
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
        let ubar = random_vec(&mut rng, 20);
        let dense = fp.dense_reconstruction() * DVector::from_vec(ubar.clone());
        let fast = fp.reconstruct(&ubar).unwrap();
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert_eq!(a, b);
        }
        let back = fp.filter(&fast).unwrap();
        for (a, b) in back.iter().zip(&ubar) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgs_content_filters_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fp = FilterPair::new(GridPair::new(0.0, 3.0, 12, 7).unwrap());
        let u = random_vec(&mut rng, 84);
        let up = fp.sgs_content(&u).unwrap();
        let w = fp.filter(&up).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-13));
        let rec = fp.reconstruct(&random_vec(&mut rng, 12)).unwrap();
        assert!(fp.sgs_content(&rec).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn inner_product_total_measure() {
        let g = GridPair::new(0.0, 5.0, 10, 4).unwrap();
        let ones = vec![1.0; g.fine_cells];
        let total = inner_product(&ones, &ones, &g.fine_mass).unwrap();
        assert!((total - 5.0).abs() < 1e-13);
        assert!(inner_product(&ones, &ones[1..], &g.fine_mass).is_err());
    }

    #[test]
    fn resampler_conserves_integrals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Resampler::new(1000, 1020).unwrap();
        let u = random_vec(&mut rng, 1000);
        let v = r.apply(&u).unwrap();
        let before: f64 = u.iter().sum::<f64>() / 1000.0;
        let after: f64 = v.iter().sum::<f64>() / 1020.0;
        assert!((before - after).abs() < 1e-14);
        let c = r.apply(&vec![0.3; 1000]).unwrap();
        assert!(c.iter().all(|&x| (x - 0.3).abs() < 1e-15));
        let id = Resampler::new(7, 7).unwrap();
        assert_eq!(id.apply(&u[..7]).unwrap(), u[..7].to_vec());
        assert_eq!(divisible_resolution(1000, 30), 1020);
        assert_eq!(divisible_resolution(600, 40), 600);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn filter_identities(i in 1usize..30, j in 1usize..20, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fp = FilterPair::new(GridPair::new(-1.0, 2.5, i, j).unwrap());
            let g = &fp.grid;
            let a = random_vec(&mut rng, i);
            let b = random_vec(&mut rng, i);
            let u = random_vec(&mut rng, i * j);

            // W R = I
            let wr = fp.filter(&fp.reconstruct(&a).unwrap()).unwrap();
            for (x, y) in wr.iter().zip(&a) {
                prop_assert!((x - y).abs() < 1e-14);
            }
            // (Ra, Rb)_ω = (a, b)_Ω
            let lhs = inner_product(&fp.reconstruct(&a).unwrap(), &fp.reconstruct(&b).unwrap(), &g.fine_mass).unwrap();
            let rhs = inner_product(&a, &b, &g.coarse_mass).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1.0));
            // (R ū, u')_ω = 0
            let ubar = fp.filter(&u).unwrap();
            let up = fp.sgs_content(&u).unwrap();
            let orth = inner_product(&fp.reconstruct(&ubar).unwrap(), &up, &g.fine_mass).unwrap();
            prop_assert!(orth.abs() < 1e-13);
            // momentum invariance
            let p_fine = inner_product(&vec![1.0; i * j], &u, &g.fine_mass).unwrap();
            let p_coarse = inner_product(&vec![1.0; i], &ubar, &g.coarse_mass).unwrap();
            prop_assert!((p_fine - p_coarse).abs() <= 1e-13 * p_fine.abs().max(1.0));
            // energy decomposition
            let e = 0.5 * inner_product(&u, &u, &g.fine_mass).unwrap();
            let e_bar = 0.5 * inner_product(&ubar, &ubar, &g.coarse_mass).unwrap();
            let e_sgs = 0.5 * inner_product(&up, &up, &g.fine_mass).unwrap();
            prop_assert!((e - e_bar - e_sgs).abs() <= 1e-12 * e);
        }
    }
}
