//! Galerkin operator on sparse tensor-product grids, applied matrix-free.
//!
//! The one-dimensional building blocks are the level-block matrices
//! `M^{m,n} = <psi'_l, psi'_u>` and `B^{m,n} = <psi'_l, psi_u>`; the mass
//! blocks are identities by orthonormality and are never stored. A block of
//! the d-dimensional operator couples two level vectors and factors into a
//! Kronecker product with identity factors on all axes where the levels
//! agree, so applying the operator reduces to small dense contractions per
//! block pair.

use crate::basis1d::Basis1D;
use crate::sparsegrid::{level_count, Level0Width, SparseIndexSet};
use crate::splinekit::{PiecewisePoly, QuadratureRule};
use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("mass block ({m},{n}) deviates from {expected} by {residual:.3e}")]
    MassBlock {
        m: u32,
        n: u32,
        expected: &'static str,
        residual: f64,
    },
    #[error("coefficient vector has length {got}, operator expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("block cache error: {0}")]
    Cache(String),
}

const MASS_TOL: f64 = 1e-8;

/// Dense 1D level-block matrices for all level pairs up to `k`.
///
/// `stiffness[m][n]` holds `M^{m,n}` and `gradient[m][n]` holds `B^{m,n}`,
/// with rows indexed by the level-m block of the basis and columns by the
/// level-n block.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlocks {
    pub k: u32,
    pub stiffness: Vec<Vec<DMatrix<f64>>>,
    pub gradient: Vec<Vec<DMatrix<f64>>>,
}

/// Assembles all `M^{m,n}` and `B^{m,n}` by exact quadrature and verifies
/// that the mass blocks equal `delta_{m,n} I` within 1e-8 (a failure here
/// means the basis lost orthonormality).
pub fn assemble_level_blocks(basis: &Basis1D) -> Result<LevelBlocks, OperatorError> {
    let k = basis.max_level;
    let derivatives: Vec<PiecewisePoly<f64>> = basis
        .functions
        .iter()
        .map(|f| f.shape.derivative())
        .collect();

    let pairs: Vec<(u32, u32)> = (0..=k)
        .flat_map(|m| (0..=k).map(move |n| (m, n)))
        .collect();
    let assembled: Vec<Result<(DMatrix<f64>, DMatrix<f64>), OperatorError>> = pairs
        .par_iter()
        .map(|&(m, n)| {
            let rows = basis.block_range(m);
            let cols = basis.block_range(n);
            let mut stiff = DMatrix::zeros(rows.len(), cols.len());
            let mut grad = DMatrix::zeros(rows.len(), cols.len());
            let mut mass_residual = 0.0f64;
            for (i, li) in rows.clone().enumerate() {
                for (j, mj) in cols.clone().enumerate() {
                    let fi = &basis.functions[li];
                    let fj = &basis.functions[mj];
                    stiff[(i, j)] = derivatives[li].inner_product(&derivatives[mj]);
                    grad[(i, j)] = derivatives[li].inner_product(&fj.shape);
                    let target = if m == n && i == j { 1.0 } else { 0.0 };
                    let mass = fi.shape.inner_product(&fj.shape);
                    mass_residual = mass_residual.max((mass - target).abs());
                }
            }
            if mass_residual > MASS_TOL {
                return Err(OperatorError::MassBlock {
                    m,
                    n,
                    expected: if m == n { "identity" } else { "zero" },
                    residual: mass_residual,
                });
            }
            Ok((stiff, grad))
        })
        .collect();

    let mut stiffness: Vec<Vec<DMatrix<f64>>> = (0..=k).map(|_| Vec::new()).collect();
    let mut gradient: Vec<Vec<DMatrix<f64>>> = (0..=k).map(|_| Vec::new()).collect();
    for ((m, _), result) in pairs.iter().zip(assembled) {
        let (stiff, grad) = result?;
        stiffness[*m as usize].push(stiff);
        gradient[*m as usize].push(grad);
    }
    Ok(LevelBlocks {
        k,
        stiffness,
        gradient,
    })
}

/// Scalar data entering the operator: time step, rate, and the coefficient
/// table `P_{i,j} = rho_{i,j} sigma_i sigma_j / (2 d_i d_j)`.
#[derive(Debug, Clone)]
pub struct PdeCoefficients {
    pub tau: f64,
    pub r: f64,
    pub p: DMatrix<f64>,
}

/// The sparse-grid operator, applied block pair by block pair without ever
/// forming a global matrix.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub set: SparseIndexSet,
    pub blocks: Arc<LevelBlocks>,
    pub coeffs: PdeCoefficients,
}

enum BlockKind {
    Stiffness,
    Gradient,
}

impl SparseOperator {
    pub fn new(
        set: SparseIndexSet,
        blocks: Arc<LevelBlocks>,
        coeffs: PdeCoefficients,
    ) -> Self {
        assert!(set.blocks.iter().all(|b| b
            .levels
            .iter()
            .all(|&j| j <= blocks.k)));
        assert_eq!(coeffs.p.nrows(), set.d);
        assert_eq!(coeffs.p.ncols(), set.d);
        Self { set, blocks, coeffs }
    }

    pub fn len(&self) -> usize {
        self.set.total_count
    }

    pub fn is_empty(&self) -> bool {
        self.set.total_count == 0
    }

    fn matrix(&self, kind: &BlockKind, m: u32, n: u32) -> DMatrixView<'_, f64> {
        let table = match kind {
            BlockKind::Stiffness => &self.blocks.stiffness,
            BlockKind::Gradient => &self.blocks.gradient,
        };
        // Under the scaling-only level-0 convention the level-0 block is the
        // leading 6x6 corner (scaling functions come first in the basis).
        let rows = level_count(m, self.set.level0_width);
        let cols = level_count(n, self.set.level0_width);
        table[m as usize][n as usize].view((0, 0), (rows, cols))
    }

    fn check_len(&self, v: &[f64]) -> Result<(), OperatorError> {
        if v.len() != self.set.total_count {
            return Err(OperatorError::Dimension {
                expected: self.set.total_count,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// The second-order part `C`: the operator satisfies
    /// `A = (1/tau + r/2) I + C` with
    /// `C = sum_i (P_{i,i}/2) M_i - sum_{i<j} P_{i,j} B_i x B_j`.
    pub fn curvature(&self, v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        self.check_len(v)?;
        let d = self.set.d;
        let out_blocks: Vec<Vec<f64>> = self
            .set
            .blocks
            .par_iter()
            .map(|mb| {
                let mut acc = vec![0.0f64; mb.len];
                for nb in &self.set.blocks {
                    let vin = &v[nb.offset..nb.offset + nb.len];
                    for i in 0..d {
                        let delta_ok =
                            (0..d).all(|l| l == i || mb.levels[l] == nb.levels[l]);
                        if !delta_ok {
                            continue;
                        }
                        let mat =
                            self.matrix(&BlockKind::Stiffness, mb.levels[i], nb.levels[i]);
                        let term = apply_axis(vin, &nb.dims, i, mat);
                        let w = self.coeffs.p[(i, i)] / 2.0;
                        for (a, t) in acc.iter_mut().zip(&term) {
                            *a += w * t;
                        }
                    }
                    for i in 0..d {
                        for j in i + 1..d {
                            let delta_ok = (0..d)
                                .all(|l| l == i || l == j || mb.levels[l] == nb.levels[l]);
                            if !delta_ok {
                                continue;
                            }
                            let bi =
                                self.matrix(&BlockKind::Gradient, mb.levels[i], nb.levels[i]);
                            let bj =
                                self.matrix(&BlockKind::Gradient, mb.levels[j], nb.levels[j]);
                            let mut dims = nb.dims.clone();
                            let mid = apply_axis(vin, &dims, i, bi);
                            dims[i] = mb.dims[i];
                            let term = apply_axis(&mid, &dims, j, bj);
                            let w = self.coeffs.p[(i, j)];
                            for (a, t) in acc.iter_mut().zip(&term) {
                                *a -= w * t;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0f64; v.len()];
        for (mb, block) in self.set.blocks.iter().zip(out_blocks) {
            out[mb.offset..mb.offset + mb.len].copy_from_slice(&block);
        }
        Ok(out)
    }

    /// Crank-Nicolson system operator `A v = (1/tau + r/2) v + C v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        let alpha = 1.0 / self.coeffs.tau + self.coeffs.r / 2.0;
        let mut out = self.curvature(v)?;
        for (o, &x) in out.iter_mut().zip(v) {
            *o += alpha * x;
        }
        Ok(out)
    }

    /// Crank-Nicolson right-hand side `f = (1/tau - r/2) v - C v`; together
    /// with [`Self::apply`] this satisfies `A v + f(v) = (2/tau) v` exactly.
    pub fn apply_rhs(&self, v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        let alpha = 1.0 / self.coeffs.tau - self.coeffs.r / 2.0;
        let mut out = self.curvature(v)?;
        for (o, &x) in out.iter_mut().zip(v) {
            *o = alpha * x - *o;
        }
        Ok(out)
    }

    /// Implicit-Euler operator for the startup half-steps of size `tau/2`:
    /// `(2/tau + r) v + 2 C v`. The matching right-hand side is `(2/tau) c`.
    pub fn apply_euler_half(&self, v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        let alpha = 2.0 / self.coeffs.tau + self.coeffs.r;
        let mut out = self.curvature(v)?;
        for (o, &x) in out.iter_mut().zip(v) {
            *o = alpha * x + 2.0 * *o;
        }
        Ok(out)
    }
}

/// Applies `mat` along `axis` of a row-major tensor `input` with shape
/// `dims`, leaving all other axes untouched. Returns a tensor whose `axis`
/// extent is `mat.nrows()`.
fn apply_axis(input: &[f64], dims: &[usize], axis: usize, mat: DMatrixView<'_, f64>) -> Vec<f64> {
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let (rows, cols) = mat.shape();
    debug_assert_eq!(dims[axis], cols);
    debug_assert_eq!(input.len(), outer * cols * inner);
    let mut out = vec![0.0f64; outer * rows * inner];
    for o in 0..outer {
        for a_in in 0..cols {
            let base_in = (o * cols + a_in) * inner;
            for a_out in 0..rows {
                let c = mat[(a_out, a_in)];
                if c == 0.0 {
                    continue;
                }
                let base_out = (o * rows + a_out) * inner;
                for i in 0..inner {
                    out[base_out + i] += c * input[base_in + i];
                }
            }
        }
    }
    out
}

/// Basis functions visible on a given level block under the grid's level-0
/// convention (the scaling-only variant keeps the first 6 of block 0).
pub fn block_functions<'a>(
    basis: &'a Basis1D,
    j: u32,
    width: Level0Width,
) -> &'a [crate::basis1d::BasisFunction] {
    &basis.block(j)[..level_count(j, width)]
}

/// Projects a pointwise-evaluable function onto the sparse basis:
/// `c_l = <u0, psi_l>` by composite tensor Gauss quadrature. Each block is
/// integrated on a per-axis dyadic grid of level `max(block levels) +
/// q_extra` with a 4-point rule per cell.
pub fn project_payoff<F>(
    u0: &F,
    set: &SparseIndexSet,
    basis: &Basis1D,
    q_extra: u32,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let rule = QuadratureRule::<f64>::gauss_legendre(4);
    let blocks: Vec<Vec<f64>> = set
        .blocks
        .par_iter()
        .map(|mb| {
            let level = mb.levels.iter().copied().max().unwrap_or(0) + q_extra;
            let cells = 1usize << level;
            let h = 1.0 / cells as f64;
            // Shared per-axis grid: 4 Gauss points per dyadic cell.
            let mut nodes = Vec::with_capacity(4 * cells);
            let mut weights = Vec::with_capacity(4 * cells);
            for c in 0..cells {
                let mid = (c as f64 + 0.5) * h;
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    nodes.push(mid + 0.5 * h * x);
                    weights.push(0.5 * h * w);
                }
            }
            let n_pts = nodes.len();

            // Per-axis sparse synthesis rows: the nonzero (function,
            // weight * psi_f(node)) pairs at each node. Supports are local,
            // so only a handful of functions survive per node.
            let nz: Vec<Vec<Vec<(usize, f64)>>> = mb
                .levels
                .iter()
                .map(|&j| {
                    let funcs = block_functions(basis, j, set.level0_width);
                    (0..n_pts)
                        .map(|g| {
                            funcs
                                .iter()
                                .enumerate()
                                .filter_map(|(f, bf)| {
                                    let v = bf.shape.evaluate(nodes[g]);
                                    (v != 0.0).then_some((f, weights[g] * v))
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let n_funcs: Vec<usize> = mb.dims.clone();

            // Stream the tensor contraction: the grid of the first axis is
            // processed point by point, so the full tensor of integrand
            // values is never materialized.
            let d = mb.levels.len();
            let tensor = if d == 1 {
                let mut point = [0.0f64];
                contract_tail(u0, 0, &nodes, &nz, &n_funcs, &mut point)
            } else {
                let subs: Vec<Vec<f64>> = (0..n_pts)
                    .into_par_iter()
                    .map(|g| {
                        let mut point = vec![0.0f64; d];
                        point[0] = nodes[g];
                        contract_tail(u0, 1, &nodes, &nz, &n_funcs, &mut point)
                    })
                    .collect();
                let inner: usize = n_funcs[1..].iter().product();
                let mut out = vec![0.0f64; n_funcs[0] * inner];
                for (g, sub) in subs.iter().enumerate() {
                    for &(f, w) in &nz[0][g] {
                        for (o, s) in out[f * inner..(f + 1) * inner].iter_mut().zip(sub) {
                            *o += w * s;
                        }
                    }
                }
                out
            };
            debug_assert_eq!(tensor.len(), mb.len);
            tensor
        })
        .collect();

    let mut out = vec![0.0f64; set.total_count];
    for (mb, block) in set.blocks.iter().zip(blocks) {
        out[mb.offset..mb.offset + mb.len].copy_from_slice(&block);
    }
    out
}

/// Integrates out the axes from `axis` onward: returns the tensor of
/// quadrature sums indexed by the basis functions of the remaining axes,
/// with the coordinates before `axis` held fixed in `point`.
fn contract_tail<F>(
    u0: &F,
    axis: usize,
    nodes: &[f64],
    nz: &[Vec<Vec<(usize, f64)>>],
    n_funcs: &[usize],
    point: &mut [f64],
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = point.len();
    let inner: usize = n_funcs[axis + 1..].iter().product();
    let mut out = vec![0.0f64; n_funcs[axis] * inner];
    if axis == d - 1 {
        for (g, &x) in nodes.iter().enumerate() {
            point[axis] = x;
            let v = u0(point);
            for &(f, w) in &nz[axis][g] {
                out[f] += w * v;
            }
        }
    } else {
        for (g, &x) in nodes.iter().enumerate() {
            point[axis] = x;
            let sub = contract_tail(u0, axis + 1, nodes, nz, n_funcs, point);
            for &(f, w) in &nz[axis][g] {
                for (o, s) in out[f * inner..(f + 1) * inner].iter_mut().zip(&sub) {
                    *o += w * s;
                }
            }
        }
    }
    out
}

const BLOCK_CACHE_HEADER: &str = "# block-cache v1";

fn render_block_payload(blocks: &LevelBlocks, key: &str) -> String {
    let mut out = String::from(BLOCK_CACHE_HEADER);
    out.push('\n');
    out.push_str(&format!("key {key}\nlevels {}\n", blocks.k));
    for (label, table) in [("M", &blocks.stiffness), ("B", &blocks.gradient)] {
        for (m, row) in table.iter().enumerate() {
            for (n, mat) in row.iter().enumerate() {
                out.push_str(&format!(
                    "block {label} {m} {n} {} {}\n",
                    mat.nrows(),
                    mat.ncols()
                ));
                for i in 0..mat.nrows() {
                    let mut line = String::new();
                    for j in 0..mat.ncols() {
                        if j > 0 {
                            line.push(' ');
                        }
                        // Hex bit patterns keep the round trip bit-exact.
                        line.push_str(&format!("{:016x}", mat[(i, j)].to_bits()));
                    }
                    out.push_str(&line);
                    out.push('\n');
                }
            }
        }
    }
    out
}

/// Writes the assembled level blocks, keyed (e.g. by the generator-set hash)
/// so a cache built from different generators is rejected on read.
pub fn write_level_blocks(
    blocks: &LevelBlocks,
    key: &str,
    path: &Path,
) -> Result<(), OperatorError> {
    let payload = render_block_payload(blocks, key);
    let hash = Sha256::digest(payload.as_bytes());
    let contents = format!("{payload}sha256 {hash:x}\n");
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| OperatorError::Cache(e.to_string()))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("cache")
    ));
    std::fs::write(&tmp, contents).map_err(|e| OperatorError::Cache(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| OperatorError::Cache(e.to_string()))?;
    Ok(())
}

/// Reads a level-block cache, verifying the integrity hash and the key.
pub fn read_level_blocks(path: &Path, key: &str) -> Result<LevelBlocks, OperatorError> {
    let contents =
        std::fs::read_to_string(path).map_err(|e| OperatorError::Cache(e.to_string()))?;
    let Some((payload, hash_line)) = contents.trim_end().rsplit_once('\n') else {
        return Err(OperatorError::Cache("truncated cache file".to_string()));
    };
    let payload = format!("{payload}\n");
    let Some(stored) = hash_line.strip_prefix("sha256 ") else {
        return Err(OperatorError::Cache("missing integrity line".to_string()));
    };
    let actual = format!("{:x}", Sha256::digest(payload.as_bytes()));
    if stored.trim() != actual {
        return Err(OperatorError::Cache("integrity hash mismatch".to_string()));
    }
    let mut lines = payload.lines();
    if lines.next() != Some(BLOCK_CACHE_HEADER) {
        return Err(OperatorError::Cache("unknown cache format version".to_string()));
    }
    match lines.next().and_then(|l| l.strip_prefix("key ")) {
        Some(stored_key) if stored_key == key => {}
        Some(_) => {
            return Err(OperatorError::Cache(
                "cache was built from different generators".to_string(),
            ))
        }
        None => return Err(OperatorError::Cache("missing key line".to_string())),
    }
    let k: u32 = lines
        .next()
        .and_then(|l| l.strip_prefix("levels "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| OperatorError::Cache("missing levels line".to_string()))?;

    let mut stiffness: Vec<Vec<DMatrix<f64>>> = (0..=k).map(|_| Vec::new()).collect();
    let mut gradient: Vec<Vec<DMatrix<f64>>> = (0..=k).map(|_| Vec::new()).collect();
    while let Some(header) = lines.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "block" {
            return Err(OperatorError::Cache(format!("bad block header `{header}`")));
        }
        let parse = |s: &str| -> Result<usize, OperatorError> {
            s.parse()
                .map_err(|_| OperatorError::Cache(format!("bad block header `{header}`")))
        };
        let (m, n, rows, cols) = (
            parse(fields[2])?,
            parse(fields[3])?,
            parse(fields[4])?,
            parse(fields[5])?,
        );
        let mut mat = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| OperatorError::Cache("truncated block".to_string()))?;
            let entries: Vec<&str> = line.split_whitespace().collect();
            if entries.len() != cols {
                return Err(OperatorError::Cache(format!(
                    "block {m},{n} row {i}: expected {cols} entries"
                )));
            }
            for (j, e) in entries.iter().enumerate() {
                let bits = u64::from_str_radix(e, 16)
                    .map_err(|e| OperatorError::Cache(e.to_string()))?;
                mat[(i, j)] = f64::from_bits(bits);
            }
        }
        let table = match fields[1] {
            "M" => &mut stiffness,
            "B" => &mut gradient,
            other => {
                return Err(OperatorError::Cache(format!("unknown block kind `{other}`")))
            }
        };
        if m > k as usize || table[m].len() != n {
            return Err(OperatorError::Cache("blocks out of order".to_string()));
        }
        table[m].push(mat);
    }
    for table in [&stiffness, &gradient] {
        if table.iter().any(|row| row.len() != k as usize + 1) {
            return Err(OperatorError::Cache("missing blocks".to_string()));
        }
    }
    Ok(LevelBlocks {
        k,
        stiffness,
        gradient,
    })
}

/// A stable fingerprint of the generator set for keying block caches.
pub fn generator_key(g: &crate::basis1d::GeneratorSet) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |p: &PiecewisePoly<f64>| {
        for &b in p.breakpoints() {
            hasher.update(b.to_bits().to_le_bytes());
        }
        for piece in p.pieces() {
            for &c in piece {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
    };
    for p in &g.scaling {
        feed(p);
    }
    feed(&g.phi_l);
    feed(&g.phi_r);
    for p in &g.wavelets {
        feed(p);
    }
    for p in &g.boundary_wavelets {
        feed(p);
    }
    format!("{:x}", hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis1d::{build_basis, build_generators, GeneratorSet};
    use crate::sparsegrid::enumerate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn generators() -> &'static GeneratorSet {
        static CELL: OnceLock<GeneratorSet> = OnceLock::new();
        CELL.get_or_init(|| build_generators().expect("generator construction"))
    }

    fn blocks_up_to(k: u32) -> Arc<LevelBlocks> {
        let basis = build_basis(generators(), k);
        Arc::new(assemble_level_blocks(&basis).expect("assembly"))
    }

    fn random_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn test_coeffs(d: usize, tau: f64) -> PdeCoefficients {
        // Table-style parameters: sigma = 0.2, rho offdiag = 0.25, r = 0.06,
        // log-price box widths ln(50/0.1).
        let width = (50.0f64 / 0.1).ln();
        let p = DMatrix::from_fn(d, d, |i, j| {
            let rho = if i == j { 1.0 } else { 0.25 };
            rho * 0.2 * 0.2 / (2.0 * width * width)
        });
        PdeCoefficients { tau, r: 0.06, p }
    }

    fn operator(d: usize, k: u32, blocks: &Arc<LevelBlocks>, tau: f64) -> SparseOperator {
        let set = enumerate(d, k, Level0Width::Full);
        SparseOperator::new(set, Arc::clone(blocks), test_coeffs(d, tau))
    }

    #[test]
    fn gradient_blocks_are_antisymmetric() {
        let blocks = blocks_up_to(5);
        let mut max = 0.0f64;
        for m in 0..=5usize {
            for n in 0..=5usize {
                let b = &blocks.gradient[m][n];
                let bt = blocks.gradient[n][m].transpose();
                max = max.max((b + bt).abs().max());
            }
        }
        assert!(max <= 1e-10, "max |B + B^T| = {max:.3e}");
    }

    #[test]
    fn stiffness_blocks_are_symmetric_pairs() {
        let blocks = blocks_up_to(3);
        for m in 0..=3usize {
            for n in 0..=3usize {
                let diff = (&blocks.stiffness[m][n] - blocks.stiffness[n][m].transpose())
                    .abs()
                    .max();
                assert!(diff <= 1e-10, "M({m},{n}) symmetry residual {diff:.3e}");
            }
        }
    }

    #[test]
    fn stiffness_norm_grows_like_4_to_k() {
        // lambda_max of the full 1D stiffness matrix vs C 4^k: the fitted
        // constant should be stable across levels.
        let k_max = 4u32;
        let basis = build_basis(generators(), k_max);
        let blocks = blocks_up_to(k_max);
        let mut constants = Vec::new();
        for k in 2..=k_max {
            let n: usize = (0..=k).map(|j| basis.block_len(j)).sum();
            let mut full = DMatrix::zeros(n, n);
            let mut ro = 0;
            for m in 0..=k {
                let mut co = 0;
                for l in 0..=k {
                    let blk = &blocks.stiffness[m as usize][l as usize];
                    full.view_mut((ro, co), blk.shape()).copy_from(blk);
                    co += blk.ncols();
                }
                ro += basis.block_len(m);
            }
            let lambda_max = full
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max);
            constants.push(lambda_max / 4.0f64.powi(k as i32));
        }
        let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
        let hi = constants.iter().cloned().fold(f64::MIN, f64::max);
        assert!(hi / lo < 2.0, "fitted constants {constants:?}");
    }

    #[test]
    fn apply_zero_is_zero() {
        let blocks = blocks_up_to(2);
        let op = operator(2, 1, &blocks, 0.25);
        let v = vec![0.0; op.len()];
        let w = op.apply(&v).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let blocks = blocks_up_to(1);
        let op = operator(2, 1, &blocks, 0.25);
        assert!(matches!(
            op.apply(&vec![0.0; 3]),
            Err(OperatorError::Dimension { .. })
        ));
    }

    #[test]
    fn one_dimensional_apply_matches_dense_assembly() {
        let k = 3u32;
        let basis = build_basis(generators(), k);
        let blocks = blocks_up_to(k);
        let tau = 0.25;
        let op = operator(1, k, &blocks, tau);
        let n = op.len();
        // Dense oracle assembled pairwise, ignoring all block structure.
        let alpha = 1.0 / tau + op.coeffs.r / 2.0;
        let p11 = op.coeffs.p[(0, 0)];
        let derivs: Vec<_> = basis.functions.iter().map(|f| f.shape.derivative()).collect();
        let dense = DMatrix::from_fn(n, n, |i, j| {
            let mass = basis.functions[i].shape.inner_product(&basis.functions[j].shape);
            alpha * mass + (p11 / 2.0) * derivs[i].inner_product(&derivs[j])
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let v = random_vector(&mut rng, n);
            let fast = op.apply(&v).unwrap();
            let slow = &dense * nalgebra::DVector::from_column_slice(&v);
            let num: f64 = fast
                .iter()
                .zip(slow.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den = slow.norm();
            assert!(num <= 1e-10 * den, "relative residual {:.3e}", num / den);
        }
    }

    /// Composite 2D tensor Gauss quadrature of `f1(x) f2(y) g1(x) g2(y)` on
    /// the merged dyadic grids; independent of the factorized inner-product
    /// identities used by the implementation.
    fn quad_2d(
        fx: &PiecewisePoly<f64>,
        fy: &PiecewisePoly<f64>,
        gx: &PiecewisePoly<f64>,
        gy: &PiecewisePoly<f64>,
        rule: &QuadratureRule<f64>,
    ) -> f64 {
        let axis = |p: &PiecewisePoly<f64>, q: &PiecewisePoly<f64>| -> Vec<(f64, f64)> {
            let mut cuts: Vec<f64> = p
                .breakpoints()
                .iter()
                .chain(q.breakpoints())
                .copied()
                .collect();
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
            let mut pts = Vec::new();
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let hw = 0.5 * (w[1] - w[0]);
                for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    pts.push((mid + hw * x, hw * wt));
                }
            }
            pts
        };
        let xs = axis(fx, gx);
        let ys = axis(fy, gy);
        let mut acc = 0.0;
        for &(x, wx) in &xs {
            let fgx = fx.evaluate(x) * gx.evaluate(x);
            if fgx == 0.0 {
                continue;
            }
            for &(y, wy) in &ys {
                acc += wx * wy * fgx * fy.evaluate(y) * gy.evaluate(y);
            }
        }
        acc
    }

    #[test]
    fn two_dimensional_apply_matches_brute_force_quadrature() {
        let k = 1u32;
        let basis = build_basis(generators(), k);
        let blocks = blocks_up_to(k);
        let tau = 0.5;
        let op = operator(2, k, &blocks, tau);
        let set = &op.set;
        let n = set.total_count;

        // Flatten the 2D basis in the sparse set's ordering.
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n);
        for mb in &set.blocks {
            for a in basis.block_range(mb.levels[0]) {
                for b in basis.block_range(mb.levels[1]) {
                    pairs.push((a, b));
                }
            }
        }
        assert_eq!(pairs.len(), n);

        let rule = QuadratureRule::<f64>::gauss_legendre(4);
        let derivs: Vec<_> = basis.functions.iter().map(|f| f.shape.derivative()).collect();
        let alpha = 1.0 / tau + op.coeffs.r / 2.0;
        let p = &op.coeffs.p;
        let mut dense = DMatrix::zeros(n, n);
        for (row, &(a1, a2)) in pairs.iter().enumerate() {
            let (fa1, fa2) = (&basis.functions[a1].shape, &basis.functions[a2].shape);
            for (col, &(b1, b2)) in pairs.iter().enumerate() {
                let (fb1, fb2) = (&basis.functions[b1].shape, &basis.functions[b2].shape);
                let mass = quad_2d(fa1, fa2, fb1, fb2, &rule);
                let g11 = quad_2d(&derivs[a1], fa2, &derivs[b1], fb2, &rule);
                let g22 = quad_2d(fa1, &derivs[a2], fb1, &derivs[b2], &rule);
                let g12 = quad_2d(&derivs[a1], fa2, fb1, &derivs[b2], &rule);
                let g21 = quad_2d(fa1, &derivs[a2], &derivs[b1], fb2, &rule);
                dense[(row, col)] = alpha * mass
                    + (p[(0, 0)] / 2.0) * g11
                    + (p[(1, 1)] / 2.0) * g22
                    + (p[(0, 1)] / 2.0) * g12
                    + (p[(1, 0)] / 2.0) * g21;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let v = random_vector(&mut rng, n);
            let fast = op.apply(&v).unwrap();
            let slow = &dense * nalgebra::DVector::from_column_slice(&v);
            let num: f64 = fast
                .iter()
                .zip(slow.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den = slow.norm();
            assert!(num <= 1e-10 * den, "relative residual {:.3e}", num / den);
        }
    }

    #[test]
    fn operator_is_symmetric_positive_definite_on_probes() {
        let blocks = blocks_up_to(3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (d, k) in [(1usize, 3u32), (2, 2), (3, 1)] {
            let op = operator(d, k, &blocks, 0.25);
            let n = op.len();
            for _ in 0..10 {
                let v = random_vector(&mut rng, n);
                let w = random_vector(&mut rng, n);
                let av = op.apply(&v).unwrap();
                let aw = op.apply(&w).unwrap();
                let vaw: f64 = v.iter().zip(&aw).map(|(a, b)| a * b).sum();
                let wav: f64 = w.iter().zip(&av).map(|(a, b)| a * b).sum();
                let scale = vaw.abs().max(wav.abs()).max(1e-30);
                assert!(
                    (vaw - wav).abs() <= 1e-10 * scale,
                    "d={d}: symmetry residual {:.3e}",
                    (vaw - wav).abs() / scale
                );
                let vav: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
                assert!(vav > 0.0, "d={d}: Rayleigh quotient {vav:.3e}");
            }
        }
    }

    #[test]
    fn crank_nicolson_splitting_is_exact() {
        let blocks = blocks_up_to(3);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (d, k) in [(1usize, 3u32), (2, 2), (3, 1)] {
            let tau = 0.125;
            let op = operator(d, k, &blocks, tau);
            let v = random_vector(&mut rng, op.len());
            let lhs: Vec<f64> = op
                .apply(&v)
                .unwrap()
                .iter()
                .zip(op.apply_rhs(&v).unwrap())
                .map(|(a, b)| a + b)
                .collect();
            for (l, &x) in lhs.iter().zip(&v) {
                let target = 2.0 / tau * x;
                assert!(
                    (l - target).abs() <= 1e-12 * target.abs().max(1.0),
                    "d={d}: splitting residual {:.3e}",
                    (l - target).abs()
                );
            }
        }
    }

    #[test]
    fn payoff_projection_recovers_basis_function() {
        let k = 1u32;
        let basis = build_basis(generators(), k);
        let blocks = blocks_up_to(k);
        let op = operator(2, k, &blocks, 0.25);
        let set = op.set.clone();
        // Pick a level-(0,0) product function: exactly integrated by every
        // block's quadrature grid.
        let f0 = basis.functions[2].shape.clone();
        let f1 = basis.functions[7].shape.clone();
        let target = 2 * 12 + 7;
        let u0 = move |z: &[f64]| f0.evaluate(z[0]) * f1.evaluate(z[1]);
        let c = project_payoff(&u0, &set, &basis, 3);
        for (i, &ci) in c.iter().enumerate() {
            let expected = if i == target { 1.0 } else { 0.0 };
            assert!(
                (ci - expected).abs() < 1e-8,
                "coefficient {i}: {ci:.3e} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_payoff_projects_to_zero() {
        let basis = build_basis(generators(), 1);
        let set = enumerate(2, 1, Level0Width::Full);
        let c = project_payoff(&|_: &[f64]| 0.0, &set, &basis, 2);
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scaling_only_grid_uses_leading_corner() {
        let basis = build_basis(generators(), 0);
        let blocks = blocks_up_to(0);
        let set = enumerate(2, 0, Level0Width::ScalingOnly);
        assert_eq!(set.total_count, 36);
        let op = SparseOperator::new(set, Arc::clone(&blocks), test_coeffs(2, 0.25));
        // Dense oracle on the 36 scaling pairs only.
        let funcs = block_functions(&basis, 0, Level0Width::ScalingOnly);
        assert_eq!(funcs.len(), 6);
        let derivs: Vec<_> = funcs.iter().map(|f| f.shape.derivative()).collect();
        let alpha = 1.0 / 0.25 + op.coeffs.r / 2.0;
        let p = op.coeffs.p.clone();
        let mut dense = DMatrix::zeros(36, 36);
        for r in 0..36 {
            let (a1, a2) = (r / 6, r % 6);
            for c in 0..36 {
                let (b1, b2) = (c / 6, c % 6);
                let m1 = funcs[a1].shape.inner_product(&funcs[b1].shape);
                let m2 = funcs[a2].shape.inner_product(&funcs[b2].shape);
                let s1 = derivs[a1].inner_product(&derivs[b1]);
                let s2 = derivs[a2].inner_product(&derivs[b2]);
                let g1 = derivs[a1].inner_product(&funcs[b1].shape);
                let g2 = derivs[a2].inner_product(&funcs[b2].shape);
                // <psi, psi'> = -<psi', psi> with zero boundary values.
                dense[(r, c)] = alpha * m1 * m2
                    + (p[(0, 0)] / 2.0) * s1 * m2
                    + (p[(1, 1)] / 2.0) * m1 * s2
                    - p[(0, 1)] * g1 * g2;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let v = random_vector(&mut rng, 36);
        let fast = op.apply(&v).unwrap();
        let slow = &dense * nalgebra::DVector::from_column_slice(&v);
        let num: f64 = fast
            .iter()
            .zip(slow.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(num <= 1e-10 * slow.norm());
    }

    #[test]
    fn block_cache_round_trip_is_bit_exact() {
        let blocks = blocks_up_to(2);
        let key = generator_key(generators());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks.cache");
        write_level_blocks(&blocks, &key, &path).unwrap();
        let restored = read_level_blocks(&path, &key).unwrap();
        assert_eq!(*blocks, restored);
        let first = std::fs::read(&path).unwrap();
        write_level_blocks(&restored, &key, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn block_cache_rejects_wrong_key_and_corruption() {
        let blocks = blocks_up_to(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks.cache");
        write_level_blocks(&blocks, "key-a", &path).unwrap();
        assert!(read_level_blocks(&path, "key-b").is_err());
        let mut contents = std::fs::read_to_string(&path).unwrap();
        contents = contents.replacen("block M 0 0", "block M 0 1", 1);
        std::fs::write(&path, contents).unwrap();
        assert!(read_level_blocks(&path, "key-a").is_err());
    }
}
