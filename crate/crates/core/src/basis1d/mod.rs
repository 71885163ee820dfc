//! Orthogonal cubic spline wavelet basis on [0, 1] with homogeneous
//! Dirichlet boundary conditions.
//!
//! The six scaling generators are loaded from the bundled coefficient table;
//! wavelet and boundary generators are reconstructed from them by null-space
//! and Gram-Schmidt procedures. The finished basis is orthonormal in L2,
//! inner wavelets have four vanishing moments, and every function vanishes
//! at both endpoints.

mod cache;
mod reconstruct;

pub use cache::{read_generator_cache, write_generator_cache};
pub use reconstruct::{reconstruct_scaling_generators, Reconstruction};

use crate::splinekit::PiecewisePoly;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Bundled coefficient table for the scaling generators.
pub const SCALING_GENERATOR_TABLE: &str = include_str!("../../data/scaling_generators.txt");

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("coefficient table parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("generator `{name}` failed validation: {message}")]
    Generator { name: String, message: String },
    #[error("null space of {matrix} has dimension {got}, expected {expected}")]
    NullSpaceDimension {
        matrix: String,
        got: usize,
        expected: usize,
    },
    #[error("orthogonality residual {residual:.3e} exceeds {tolerance:.1e} for {context}")]
    Orthogonality {
        context: String,
        residual: f64,
        tolerance: f64,
    },
    #[error("cache error: {0}")]
    Cache(String),
}

/// Generators of the multiresolution analysis and of the wavelet spaces.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    /// phi_1 .. phi_6; the last two are supported on [-1, 1].
    pub scaling: Vec<PiecewisePoly<f64>>,
    /// Left and right boundary scaling generators on [0, 1].
    pub phi_l: PiecewisePoly<f64>,
    pub phi_r: PiecewisePoly<f64>,
    /// psi_1 .. psi_6; the last four are supported on [-1, 1].
    pub wavelets: Vec<PiecewisePoly<f64>>,
    /// psi_L1, psi_L2, psi_R1, psi_R2 on [0, 1].
    pub boundary_wavelets: Vec<PiecewisePoly<f64>>,
}

/// Role of a basis function in the interval basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionKind {
    Scaling,
    InnerWavelet,
    LeftBoundaryWavelet,
    RightBoundaryWavelet,
}

/// One element of the interval basis.
#[derive(Debug, Clone)]
pub struct BasisFunction {
    /// Wavelet level; scaling functions carry level 0.
    pub level: u32,
    /// Translation index within its level, 1-based.
    pub translation: usize,
    pub kind: FunctionKind,
    pub shape: PiecewisePoly<f64>,
}

/// The interval basis up to wavelet level `max_level`, ordered by level
/// blocks: block 0 holds the 6 scaling functions followed by the 6 level-0
/// wavelets; block j >= 1 holds the 6 * 2^j level-j wavelets.
#[derive(Debug, Clone)]
pub struct Basis1D {
    pub max_level: u32,
    pub functions: Vec<BasisFunction>,
    block_offsets: Vec<usize>,
}

impl Basis1D {
    /// Number of functions in level block `j` (12 for j = 0, else 6 * 2^j).
    pub fn block_len(&self, j: u32) -> usize {
        if j == 0 {
            12
        } else {
            6usize << j
        }
    }

    /// Index range of level block `j` in `functions`.
    pub fn block_range(&self, j: u32) -> std::ops::Range<usize> {
        let start = self.block_offsets[j as usize];
        start..start + self.block_len(j)
    }

    pub fn block(&self, j: u32) -> &[BasisFunction] {
        &self.functions[self.block_range(j)]
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// One verification check with its measured residual.
#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl VerifyCheck {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

/// Report produced by [`verify_basis`].
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
    /// Condition number of the H1-seminorm Gram matrix of the
    /// seminorm-normalized basis; a diagnostic, not a pass/fail check.
    pub h1_condition: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(VerifyCheck::passed)
    }
}

const ORTHO_TOL: f64 = 1e-8;
const LOAD_TOL: f64 = 1e-6;
const POINT_TOL: f64 = 1e-10;

/// Parses the scaling generator table into phi_1..phi_6, phi_L, phi_R and
/// checks normalization, pairwise orthogonality under integer translates,
/// and C0/C1 continuity of every generator.
pub fn load_scaling_generators(table: &str) -> Result<GeneratorSet, BasisError> {
    let mut rows: Vec<(String, f64, f64, [f64; 4])> = Vec::new();
    for (idx, raw) in table.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(BasisError::Parse {
                line: idx + 1,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 6];
        for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|e| BasisError::Parse {
                line: idx + 1,
                message: format!("bad number `{field}`: {e}"),
            })?;
        }
        rows.push((
            fields[0].to_string(),
            vals[0],
            vals[1],
            [vals[2], vals[3], vals[4], vals[5]],
        ));
    }

    let build = |name: &str| -> Result<PiecewisePoly<f64>, BasisError> {
        let mut bp = Vec::new();
        let mut pieces = Vec::new();
        for (n, a, b, c) in &rows {
            if n == name {
                if bp.is_empty() {
                    bp.push(*a);
                }
                bp.push(*b);
                pieces.push(*c);
            }
        }
        if pieces.is_empty() {
            return Err(BasisError::Generator {
                name: name.to_string(),
                message: "missing from coefficient table".to_string(),
            });
        }
        // The bundled table stores coefficients in the global coordinate.
        Ok(PiecewisePoly::from_global_pieces(bp, pieces))
    };

    let scaling: Vec<PiecewisePoly<f64>> = (1..=6)
        .map(|i| build(&format!("phi{i}")))
        .collect::<Result<_, _>>()?;
    let phi_l = build("phiL")?;
    let phi_r = build("phiR")?;

    for (i, phi) in scaling.iter().enumerate() {
        check_continuity(phi, &format!("phi{}", i + 1))?;
        let norm_dev = (phi.norm() - 1.0).abs();
        if norm_dev > LOAD_TOL {
            return Err(BasisError::Generator {
                name: format!("phi{}", i + 1),
                message: format!("norm deviates from 1 by {norm_dev:.3e}"),
            });
        }
    }
    check_continuity(&phi_l, "phiL")?;
    check_continuity(&phi_r, "phiR")?;

    // Pairwise orthogonality of the phi family under all relevant translates.
    let mut max_residual = 0.0f64;
    for (i, pi) in scaling.iter().enumerate() {
        for (j, pj) in scaling.iter().enumerate() {
            for shift in -2i64..=2 {
                if i == j && shift == 0 {
                    continue;
                }
                let translated = pj.affine(1.0, shift as f64, 1.0);
                max_residual = max_residual.max(pi.inner_product(&translated).abs());
            }
        }
    }
    if max_residual > LOAD_TOL {
        return Err(BasisError::Orthogonality {
            context: "loaded scaling generators".to_string(),
            residual: max_residual,
            tolerance: LOAD_TOL,
        });
    }

    Ok(GeneratorSet {
        scaling,
        phi_l,
        phi_r,
        wavelets: Vec::new(),
        boundary_wavelets: Vec::new(),
    })
}

fn check_continuity(p: &PiecewisePoly<f64>, name: &str) -> Result<(), BasisError> {
    let d = p.derivative();
    let scale = p
        .pieces()
        .iter()
        .flatten()
        .fold(1.0f64, |m, c| m.max(c.abs()));
    for w in p.breakpoints().windows(2).collect::<Vec<_>>().windows(2) {
        let x = w[0][1];
        let left_val = eval_piece(p, x, true);
        let right_val = eval_piece(p, x, false);
        let left_der = eval_piece(&d, x, true);
        let right_der = eval_piece(&d, x, false);
        let c0 = (left_val - right_val).abs();
        let c1 = (left_der - right_der).abs();
        if c0 > 1e-10 * scale || c1 > 1e-9 * scale {
            return Err(BasisError::Generator {
                name: name.to_string(),
                message: format!("discontinuity at x = {x}: C0 jump {c0:.3e}, C1 jump {c1:.3e}"),
            });
        }
    }
    Ok(())
}

fn eval_piece(p: &PiecewisePoly<f64>, x: f64, from_left: bool) -> f64 {
    let idx = p
        .breakpoints()
        .iter()
        .position(|&t| (t - x).abs() < 1e-13)
        .expect("breakpoint");
    let piece = if from_left { idx - 1 } else { idx };
    let c = &p.pieces()[piece];
    let t = x - p.breakpoints()[piece];
    ((c[0] * t + c[1]) * t + c[2]) * t + c[3]
}

/// Scaling function `phi_{j,6k+l}` on the real line; by convention
/// generators 5, 6 are additionally shifted by one.
fn phi_line(g: &GeneratorSet, j: u32, m: i64) -> PiecewisePoly<f64> {
    let k = (m - 1).div_euclid(6);
    let l = (m - 6 * k) as usize;
    let shift = if l <= 4 { k } else { k + 1 };
    g.scaling[l - 1].rescale(j, shift)
}

/// Computes an orthonormal null-space basis of `mat` via SVD with rank
/// cutoff `1e-10 * sigma_max`. Rectangular inputs are padded with zero rows
/// so that the full set of right singular vectors is available.
fn null_space(
    mat: &DMatrix<f64>,
    label: &str,
    expected_dim: usize,
) -> Result<Vec<DVector<f64>>, BasisError> {
    let cols = mat.ncols();
    let mut square = DMatrix::zeros(cols.max(mat.nrows()), cols);
    square.view_mut((0, 0), (mat.nrows(), cols)).copy_from(mat);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = 1e-10 * sigma_max;
    let mut basis = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            basis.push(v_t.row(i).transpose());
        }
    }
    // Right singular vectors beyond the number of singular values (cols > rows
    // cannot happen after padding, but keep the check for safety).
    if basis.len() != expected_dim {
        return Err(BasisError::NullSpaceDimension {
            matrix: label.to_string(),
            got: basis.len(),
            expected: expected_dim,
        });
    }
    Ok(basis)
}

/// Gram-Schmidt with one re-orthogonalization pass; returns unit vectors.
fn gram_schmidt(functions: &[PiecewisePoly<f64>]) -> Vec<PiecewisePoly<f64>> {
    let mut out: Vec<PiecewisePoly<f64>> = Vec::with_capacity(functions.len());
    for f in functions {
        let mut v = f.clone();
        for _ in 0..2 {
            for q in &out {
                let c = v.inner_product(q);
                v = v.add(&q.scaled(-c));
            }
        }
        out.push(v.normalized());
    }
    out
}

/// Constructs the six wavelet generators psi_1 .. psi_6 from the scaling set.
pub fn construct_wavelet_generators(g: &mut GeneratorSet) -> Result<(), BasisError> {
    // psi_1, psi_2: combinations of level-1 functions supported in [0, 1],
    // orthogonal to every level-0 scaling function meeting [0, 1].
    let mut p: Vec<PiecewisePoly<f64>> = (0..4).map(|i| g.scaling[i].rescale(1, 0)).collect();
    p.extend((0..6).map(|i| g.scaling[i].rescale(1, 1)));
    let mut q: Vec<PiecewisePoly<f64>> = g.scaling.clone();
    q.push(g.scaling[4].affine(1.0, 1.0, 1.0));
    q.push(g.scaling[5].affine(1.0, 1.0, 1.0));

    // The orthogonality conditions read S^T c = 0 for the combination
    // coefficients c of the p functions.
    let s = DMatrix::from_fn(p.len(), q.len(), |i, j| p[i].inner_product(&q[j]));
    let kernel = null_space(&s.transpose(), "S^T", 2)?;
    let u: Vec<PiecewisePoly<f64>> = kernel
        .iter()
        .map(|b| {
            PiecewisePoly::linear_combination(
                b.as_slice(),
                &p.iter().collect::<Vec<_>>(),
            )
        })
        .collect();
    let mut psi12 = gram_schmidt(&u);
    for psi in &mut psi12 {
        *psi = psi.sign_fixed();
    }

    // psi_3, psi_4: projections of phi_5(2.), phi_6(2.) against phi_5, phi_6.
    let mut h = Vec::new();
    for i in 0..2 {
        let refined = g.scaling[4 + i].rescale(1, 0);
        let mut v = refined.clone();
        for phi in &g.scaling[4..6] {
            let c = refined.inner_product(phi);
            v = v.add(&phi.scaled(-c));
        }
        h.push(v);
    }
    let mut psi34 = gram_schmidt(&h);
    for psi in &mut psi34 {
        *psi = psi.sign_fixed();
    }

    // psi_5, psi_6: combinations of the 22 level-1 functions living in
    // [-1, 1], orthogonal to the nearby level-0 scaling functions, to
    // psi_1(.+1), psi_2(.+1), and to psi_1..psi_4.
    let columns: Vec<PiecewisePoly<f64>> = (-11i64..=10).map(|m| phi_line(g, 1, m)).collect();
    let mut row_functions: Vec<PiecewisePoly<f64>> =
        (-7i64..=6).map(|m| phi_line(g, 0, m)).collect();
    row_functions.push(psi12[0].affine(1.0, -1.0, 1.0));
    row_functions.push(psi12[1].affine(1.0, -1.0, 1.0));
    row_functions.push(psi12[0].clone());
    row_functions.push(psi12[1].clone());
    row_functions.push(psi34[0].clone());
    row_functions.push(psi34[1].clone());
    let t = DMatrix::from_fn(row_functions.len(), columns.len(), |i, j| {
        row_functions[i].inner_product(&columns[j])
    });
    let kernel = null_space(&t, "T", 2)?;
    let z: Vec<PiecewisePoly<f64>> = kernel
        .iter()
        .map(|b| {
            PiecewisePoly::linear_combination(
                b.as_slice(),
                &columns.iter().collect::<Vec<_>>(),
            )
        })
        .collect();
    let mut psi56 = gram_schmidt(&z);
    for psi in &mut psi56 {
        *psi = psi.sign_fixed();
    }

    g.wavelets = psi12;
    g.wavelets.append(&mut psi34);
    g.wavelets.append(&mut psi56);

    // Orthogonality within the generator family.
    let mut residual = 0.0f64;
    for (i, wi) in g.wavelets.iter().enumerate() {
        for (j, wj) in g.wavelets.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((wi.inner_product(wj) - target).abs());
        }
        for phi in &g.scaling {
            residual = residual.max(wi.inner_product(phi).abs());
        }
    }
    if residual > ORTHO_TOL {
        return Err(BasisError::Orthogonality {
            context: "wavelet generators".to_string(),
            residual,
            tolerance: ORTHO_TOL,
        });
    }
    Ok(())
}

/// Constructs phi_L, phi_R and the four boundary wavelet generators.
pub fn construct_boundary_functions(g: &mut GeneratorSet) -> Result<(), BasisError> {
    let phi5 = &g.scaling[4];
    let phi6 = &g.scaling[5];
    let phi5_at_0 = phi5.evaluate(0.0);
    let phi6_at_0 = phi6.evaluate(0.0);

    let combo_l = phi5
        .scaled(phi6_at_0)
        .add(&phi6.scaled(-phi5_at_0))
        .restricted(0.0, 1.0)
        .normalized();
    let phi5_t = phi5.affine(1.0, 1.0, 1.0);
    let phi6_t = phi6.affine(1.0, 1.0, 1.0);
    let combo_r = phi5_t
        .scaled(phi6_at_0)
        .add(&phi6_t.scaled(-phi5_at_0))
        .restricted(0.0, 1.0)
        .normalized();

    // Cross-check against the tabulated boundary generators, up to sign.
    for (constructed, loaded, name) in
        [(&combo_l, &g.phi_l, "phiL"), (&combo_r, &g.phi_r, "phiR")]
    {
        let diff = table_distance(constructed, loaded);
        if diff > LOAD_TOL {
            return Err(BasisError::Generator {
                name: name.to_string(),
                message: format!("constructed generator differs from table by {diff:.3e}"),
            });
        }
    }
    // Keep the constructed functions, sign-matched to the table rows.
    g.phi_l = match_sign(&combo_l, &g.phi_l);
    g.phi_r = match_sign(&combo_r, &g.phi_r);

    // Left boundary wavelets: combinations of psi_3..psi_6 that vanish at 0
    // and are orthogonal to phi_L.
    let psi36: Vec<&PiecewisePoly<f64>> = g.wavelets[2..6].iter().collect();
    let g_mat = DMatrix::from_fn(2, 4, |i, j| {
        if i == 0 {
            psi36[j].evaluate(0.0)
        } else {
            g.phi_l.inner_product(psi36[j])
        }
    });
    let kernel = null_space(&g_mat, "G", 2)?;
    let g_l: Vec<PiecewisePoly<f64>> = kernel
        .iter()
        .map(|b| PiecewisePoly::linear_combination(b.as_slice(), &psi36).restricted(0.0, 1.0))
        .collect();
    let psi_l: Vec<PiecewisePoly<f64>> =
        gram_schmidt(&g_l).iter().map(|f| f.sign_fixed()).collect();

    // Right boundary wavelets: translated combinations of psi_3..psi_6 that
    // vanish at 1 and are orthogonal to phi_R. The value of psi_{j+2}(. - 1)
    // at x = 1 equals psi_{j+2}(0).
    let psi36_t: Vec<PiecewisePoly<f64>> = g.wavelets[2..6]
        .iter()
        .map(|f| f.affine(1.0, 1.0, 1.0))
        .collect();
    let h_mat = DMatrix::from_fn(2, 4, |i, j| {
        if i == 0 {
            g.wavelets[2 + j].evaluate(0.0)
        } else {
            g.phi_r.inner_product(&psi36_t[j])
        }
    });
    let kernel = null_space(&h_mat, "H", 2)?;
    let refs: Vec<&PiecewisePoly<f64>> = psi36_t.iter().collect();
    let h_r: Vec<PiecewisePoly<f64>> = kernel
        .iter()
        .map(|b| PiecewisePoly::linear_combination(b.as_slice(), &refs).restricted(0.0, 1.0))
        .collect();
    let psi_r: Vec<PiecewisePoly<f64>> =
        gram_schmidt(&h_r).iter().map(|f| f.sign_fixed()).collect();

    for (f, name) in psi_l.iter().zip(["psiL1", "psiL2"]) {
        let v = f.evaluate(0.0).abs().max(f.evaluate(1.0).abs());
        if v > POINT_TOL {
            return Err(BasisError::Generator {
                name: name.to_string(),
                message: format!("boundary value {v:.3e} exceeds {POINT_TOL:.1e}"),
            });
        }
    }
    for (f, name) in psi_r.iter().zip(["psiR1", "psiR2"]) {
        let v = f.evaluate(0.0).abs().max(f.evaluate(1.0).abs());
        if v > POINT_TOL {
            return Err(BasisError::Generator {
                name: name.to_string(),
                message: format!("boundary value {v:.3e} exceeds {POINT_TOL:.1e}"),
            });
        }
    }

    g.boundary_wavelets = psi_l;
    g.boundary_wavelets.extend(psi_r);
    Ok(())
}

/// Maximum coefficient distance between `a` and `b` up to sign, relative to
/// the largest coefficient magnitude.
fn table_distance(a: &PiecewisePoly<f64>, b: &PiecewisePoly<f64>) -> f64 {
    let dist = |x: &PiecewisePoly<f64>, y: &PiecewisePoly<f64>| -> f64 {
        let diff = x.add(&y.scaled(-1.0));
        diff.norm()
    };
    dist(a, b).min(dist(&a.scaled(-1.0), b))
}

fn match_sign(constructed: &PiecewisePoly<f64>, table: &PiecewisePoly<f64>) -> PiecewisePoly<f64> {
    if constructed.inner_product(table) < 0.0 {
        constructed.scaled(-1.0)
    } else {
        constructed.clone()
    }
}

/// Builds the full generator set from the bundled table.
pub fn build_generators() -> Result<GeneratorSet, BasisError> {
    let mut g = load_scaling_generators(SCALING_GENERATOR_TABLE)?;
    construct_wavelet_generators(&mut g)?;
    construct_boundary_functions(&mut g)?;
    Ok(g)
}

/// Assembles the interval basis with wavelet levels 0 .. `k`.
pub fn build_basis(g: &GeneratorSet, k: u32) -> Basis1D {
    let mut functions = Vec::new();
    let mut block_offsets = Vec::new();

    // Level-0 scaling functions: phi_L, phi_1 .. phi_4, phi_R.
    block_offsets.push(0);
    let level0_scaling = [
        &g.phi_l,
        &g.scaling[0],
        &g.scaling[1],
        &g.scaling[2],
        &g.scaling[3],
        &g.phi_r,
    ];
    for (t, shape) in level0_scaling.into_iter().enumerate() {
        functions.push(BasisFunction {
            level: 0,
            translation: t + 1,
            kind: FunctionKind::Scaling,
            shape: (*shape).clone(),
        });
    }

    for j in 0..=k {
        if j >= 1 {
            block_offsets.push(functions.len());
        }
        let count = 6usize << j;
        for t in 1..=count {
            let (kind, shape) = if t <= 2 {
                (
                    FunctionKind::LeftBoundaryWavelet,
                    g.boundary_wavelets[t - 1].rescale(j, 0),
                )
            } else if t >= count - 1 {
                (
                    FunctionKind::RightBoundaryWavelet,
                    g.boundary_wavelets[2 + (t - (count - 1))].rescale(j, (1i64 << j) - 1),
                )
            } else {
                // Inner wavelet: t = 6m + l + 2 with 1 <= 6m + l <= 6 * 2^j - 4.
                let l = (t - 3) % 6 + 1;
                let m = ((t - 2 - l) / 6) as i64;
                let shift = if l <= 2 { m } else { m + 1 };
                (
                    FunctionKind::InnerWavelet,
                    g.wavelets[l - 1].rescale(j, shift),
                )
            };
            functions.push(BasisFunction {
                level: j,
                translation: t,
                kind,
                shape,
            });
        }
    }

    Basis1D {
        max_level: k,
        functions,
        block_offsets,
    }
}

/// Computes residuals of the orthonormality, vanishing-moment, and boundary
/// conditions, plus the H1-seminorm condition diagnostic.
pub fn verify_basis(basis: &Basis1D) -> VerifyReport {
    let n = basis.len();
    let mut gram_residual = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let val = basis.functions[i]
                .shape
                .inner_product(&basis.functions[j].shape);
            gram_residual = gram_residual.max((val - target).abs());
        }
    }

    let mut moment_residual = 0.0f64;
    for f in &basis.functions {
        if f.kind == FunctionKind::InnerWavelet {
            for m in 0..=3 {
                moment_residual = moment_residual.max(f.shape.moment(m).abs());
            }
        }
    }

    let mut boundary_residual = 0.0f64;
    for f in &basis.functions {
        boundary_residual = boundary_residual
            .max(f.shape.evaluate(0.0).abs())
            .max(f.shape.evaluate(1.0).abs());
    }

    let mut support_excess = 0.0f64;
    for f in &basis.functions {
        let (a, b) = f.shape.support();
        let bound = if f.kind == FunctionKind::Scaling {
            1.0
        } else {
            (2.0f64).powi(1 - f.level as i32).min(1.0)
        };
        support_excess = support_excess.max(b - a - bound).max(-a).max(b - 1.0);
    }

    // H1-seminorm Gram matrix of the seminorm-normalized set.
    let derivatives: Vec<_> = basis
        .functions
        .iter()
        .map(|f| f.shape.derivative())
        .collect();
    let seminorms: Vec<f64> = derivatives.iter().map(|d| d.inner_product(d).sqrt()).collect();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        derivatives[i].inner_product(&derivatives[j]) / (seminorms[i] * seminorms[j])
    });
    let eigen = gram.symmetric_eigenvalues();
    let h1_condition = eigen.max() / eigen.min();

    VerifyReport {
        checks: vec![
            VerifyCheck {
                name: "gram_identity".to_string(),
                residual: gram_residual,
                tolerance: ORTHO_TOL,
            },
            VerifyCheck {
                name: "vanishing_moments".to_string(),
                residual: moment_residual,
                tolerance: POINT_TOL,
            },
            VerifyCheck {
                name: "boundary_values".to_string(),
                residual: boundary_residual,
                tolerance: POINT_TOL,
            },
            VerifyCheck {
                name: "support_locality".to_string(),
                residual: support_excess,
                tolerance: 1e-12,
            },
        ],
        h1_condition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn generators() -> GeneratorSet {
        build_generators().expect("generator construction")
    }

    #[test]
    fn loaded_scaling_generators_are_orthonormal() {
        let g = load_scaling_generators(SCALING_GENERATOR_TABLE).unwrap();
        assert_abs_diff_eq!(g.scaling[0].inner_product(&g.scaling[1]), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g.scaling[2].norm(), 1.0, epsilon = 1e-6);
        let phi6_shift = g.scaling[5].affine(1.0, 1.0, 1.0);
        assert_abs_diff_eq!(g.scaling[4].inner_product(&phi6_shift), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn wavelet_generators_have_vanishing_moments() {
        let g = generators();
        for (i, psi) in g.wavelets.iter().enumerate() {
            for m in 0..=3 {
                assert!(
                    psi.moment(m).abs() < 1e-8,
                    "psi{} moment {} = {:.3e}",
                    i + 1,
                    m,
                    psi.moment(m)
                );
            }
        }
    }

    #[test]
    fn wavelet_generators_orthogonal_to_shifted_wavelets() {
        let g = generators();
        // Generators with support [-1, 1] are orthogonal to the unit
        // translates of the [-1, 1]-supported generators.
        for i in 4..6 {
            for l in 2..6 {
                let shifted = g.wavelets[l].affine(1.0, 1.0, 1.0);
                assert!(g.wavelets[i].inner_product(&shifted).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn boundary_generators_vanish_at_endpoints() {
        let g = generators();
        assert!(g.phi_l.evaluate(0.0).abs() < 1e-10);
        assert!(g.phi_l.evaluate(1.0).abs() < 1e-10);
        assert!(g.phi_r.evaluate(0.0).abs() < 1e-10);
        assert!(g.phi_r.evaluate(1.0).abs() < 1e-10);
        for f in &g.boundary_wavelets {
            assert!(f.evaluate(0.0).abs() < 1e-10);
            assert!(f.evaluate(1.0).abs() < 1e-10);
        }
        assert!(g.phi_l.inner_product(&g.boundary_wavelets[0]).abs() < 1e-8);
        assert!(g.phi_r.inner_product(&g.boundary_wavelets[2]).abs() < 1e-8);
    }

    #[test]
    fn basis_counts_match_level_blocks() {
        let g = generators();
        for k in 0..=3u32 {
            let b = build_basis(&g, k);
            assert_eq!(b.len(), 12usize << k);
            assert_eq!(b.block(0).len(), 12);
            for j in 1..=k {
                assert_eq!(b.block(j).len(), 6usize << j);
            }
        }
    }

    #[test]
    fn basis_verifies_to_tolerance() {
        let g = generators();
        let b = build_basis(&g, 3);
        let report = verify_basis(&b);
        for check in &report.checks {
            assert!(
                check.passed(),
                "{} residual {:.3e} > {:.1e}",
                check.name,
                check.residual,
                check.tolerance
            );
        }
        assert!(report.h1_condition.is_finite() && report.h1_condition >= 1.0);
    }

    #[test]
    fn two_scale_consistency_against_hermite_frame() {
        use crate::splinekit::hermite_frame_function;
        // Every level-0 basis function lies in the span of the level-3
        // Hermite frame restricted to [0, 1]: the basis has knots no finer
        // than eighths and is a C1 cubic spline inside the interval.
        let g = generators();
        let b = build_basis(&g, 0);
        let frame: Vec<PiecewisePoly<f64>> = (0i64..=17)
            .map(|m| hermite_frame_function(3, m).restricted(0.0, 1.0))
            .collect();
        let n = frame.len();
        let gram = DMatrix::from_fn(n, n, |i, j| frame[i].inner_product(&frame[j]));
        for f in b.functions.iter() {
            let rhs = DVector::from_fn(n, |i, _| frame[i].inner_product(&f.shape));
            let sol = gram.clone().lu().solve(&rhs).expect("frame Gram solve");
            // Residual of the least-squares fit: ||f||^2 - rhs . sol.
            let res2: f64 = f.shape.inner_product(&f.shape) - rhs.dot(&sol);
            assert!(
                res2.abs() < 1e-8,
                "translation {} kind {:?}: residual^2 = {:.3e}",
                f.translation,
                f.kind,
                res2
            );
        }
    }
}
