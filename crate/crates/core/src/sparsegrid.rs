//! Sparse tensor-product index sets.
//!
//! A d-dimensional basis function is indexed by a level vector
//! `m = (m_1, ..., m_d)` and a translation within each level. The sparse set
//! keeps the level vectors with `||m||_1 <= k`. Level 0 merges the scaling
//! functions and the level-0 wavelets into one block of width 12; the
//! scaling-only variant (width 6) reproduces the k = 0 grids of the
//! experiment tables.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("closed-form cardinality is only available for d in 2..=5, got d={0}")]
    UnsupportedDimension(usize),
}

/// Width of the level-0 block: all 12 functions, or only the 6 scaling
/// functions (the coarsest grid of the experiment tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level0Width {
    Full,
    ScalingOnly,
}

impl Level0Width {
    pub fn count(self) -> usize {
        match self {
            Level0Width::Full => 12,
            Level0Width::ScalingOnly => 6,
        }
    }
}

/// One block of the sparse set: a level vector with dense translation ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelBlockInfo {
    /// Per-dimension 1D level.
    pub levels: Vec<u32>,
    /// Per-dimension 1D block width.
    pub dims: Vec<usize>,
    /// Offset of this block in the global coefficient vector.
    pub offset: usize,
    /// Product of `dims`.
    pub len: usize,
}

/// The sparse index set `{lambda : sum_i |lambda_i| <= k}` with blocks in
/// lexicographic level-vector order.
#[derive(Debug, Clone)]
pub struct SparseIndexSet {
    pub d: usize,
    pub k: u32,
    pub level0_width: Level0Width,
    pub blocks: Vec<LevelBlockInfo>,
    pub total_count: usize,
}

/// Number of 1D basis functions at level `j`.
pub fn level_count(j: u32, width: Level0Width) -> usize {
    if j == 0 {
        width.count()
    } else {
        6usize << j
    }
}

/// Enumerates all level vectors with `||m||_1 <= k` in lexicographic order.
pub fn enumerate(d: usize, k: u32, width: Level0Width) -> SparseIndexSet {
    assert!(d >= 1, "dimension must be positive");
    let mut blocks = Vec::new();
    let mut levels = vec![0u32; d];
    let mut offset = 0usize;
    loop {
        let dims: Vec<usize> = levels.iter().map(|&j| level_count(j, width)).collect();
        let len = dims.iter().product();
        blocks.push(LevelBlockInfo {
            levels: levels.clone(),
            dims,
            offset,
            len,
        });
        offset += len;
        // Advance to the next admissible level vector, lexicographically.
        let mut i = d;
        loop {
            if i == 0 {
                return SparseIndexSet {
                    d,
                    k,
                    level0_width: width,
                    blocks,
                    total_count: offset,
                };
            }
            i -= 1;
            levels[i] += 1;
            for l in &mut levels[i + 1..] {
                *l = 0;
            }
            if levels.iter().sum::<u32>() <= k {
                break;
            }
            levels[i] = 0;
        }
    }
}

/// Closed-form cardinality of the sparse set for d in 2..=5, k >= 1.
pub fn cardinality_formula(d: usize, k: u32) -> Result<usize, GridError> {
    let kf = k as f64;
    let value = match d {
        2 => 36.0 * (kf + 2.0) * (2.0f64).powi(k as i32 + 1),
        3 => 216.0 * (kf * kf + 7.0 * kf + 8.0) * (2.0f64).powi(k as i32),
        4 => {
            1296.0
                * (kf.powi(3) / 6.0 + 2.5 * kf * kf + 28.0 * kf / 3.0 + 8.0)
                * (2.0f64).powi(k as i32 + 1)
        }
        5 => {
            7776.0
                * (kf.powi(4) / 24.0
                    + 13.0 * kf.powi(3) / 12.0
                    + 203.0 * kf * kf / 24.0
                    + 269.0 * kf / 12.0
                    + 16.0)
                * (2.0f64).powi(k as i32 + 1)
        }
        _ => return Err(GridError::UnsupportedDimension(d)),
    };
    Ok(value.round() as usize)
}

/// Cardinality of the anisotropic (full tensor) set, `6^d 2^{dk}`.
pub fn anisotropic_count(d: usize, k: u32) -> usize {
    6usize.pow(d as u32) * (1usize << (d as u32 * k))
}

/// All ordered pairs of blocks; the unit of work for operator application.
pub fn block_pairs(
    set: &SparseIndexSet,
) -> impl Iterator<Item = (&LevelBlockInfo, &LevelBlockInfo)> {
    set.blocks
        .iter()
        .flat_map(move |m| set.blocks.iter().map(move |n| (m, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_counts_match_basis() {
        for k in 0..=6u32 {
            let set = enumerate(1, k, Level0Width::Full);
            assert_eq!(set.total_count, 12usize << k);
            assert_eq!(set.blocks.len(), k as usize + 1);
        }
    }

    #[test]
    fn closed_forms_match_enumeration() {
        for d in 2..=4usize {
            for k in 1..=8u32 {
                let enumerated = enumerate(d, k, Level0Width::Full).total_count;
                let formula = cardinality_formula(d, k).unwrap();
                assert_eq!(enumerated, formula, "d={d} k={k}");
            }
        }
        // The d=5 closed form, checked against enumeration at small k.
        for k in 1..=3u32 {
            let enumerated = enumerate(5, k, Level0Width::Full).total_count;
            assert_eq!(enumerated, cardinality_formula(5, k).unwrap(), "d=5 k={k}");
        }
    }

    #[test]
    fn known_cardinalities() {
        assert_eq!(enumerate(2, 1, Level0Width::Full).total_count, 432);
        assert_eq!(cardinality_formula(2, 1).unwrap(), 432);
        assert_eq!(cardinality_formula(2, 3).unwrap(), 2880);
        assert_eq!(cardinality_formula(3, 2).unwrap(), 22464);
        assert_eq!(anisotropic_count(2, 1), 144);
        assert_eq!(anisotropic_count(1, 3), 48);
        assert_eq!(anisotropic_count(3, 2), 13824);
    }

    #[test]
    fn scaling_only_grid_is_6_to_the_d() {
        for d in 1..=4usize {
            let set = enumerate(d, 0, Level0Width::ScalingOnly);
            assert_eq!(set.total_count, 6usize.pow(d as u32));
            assert_eq!(set.blocks.len(), 1);
        }
    }

    #[test]
    fn nesting_and_block_pair_counts() {
        for d in 1..=3usize {
            for k in 0..=3u32 {
                let small = enumerate(d, k, Level0Width::Full);
                let large = enumerate(d, k + 1, Level0Width::Full);
                for block in &small.blocks {
                    assert!(large.blocks.iter().any(|b| b.levels == block.levels));
                }
                let pairs = block_pairs(&small).count();
                assert_eq!(pairs, small.blocks.len() * small.blocks.len());
            }
        }
    }

    #[test]
    fn sparse_grows_slower_than_anisotropic() {
        for d in 2..=4usize {
            let mut prev_ratio = f64::INFINITY;
            for k in 2..=7u32 {
                let sparse = enumerate(d, k, Level0Width::Full).total_count as f64;
                let full = anisotropic_count(d, k) as f64;
                let ratio = sparse / full;
                assert!(ratio < prev_ratio, "d={d} k={k}");
                prev_ratio = ratio;
            }
        }
    }

    #[test]
    fn lexicographic_block_order() {
        let set = enumerate(2, 2, Level0Width::Full);
        let levels: Vec<Vec<u32>> = set.blocks.iter().map(|b| b.levels.clone()).collect();
        let expected: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![0, 1],
            vec![0, 2],
            vec![1, 0],
            vec![1, 1],
            vec![2, 0],
        ];
        assert_eq!(levels, expected);
        let mut offset = 0;
        for b in &set.blocks {
            assert_eq!(b.offset, offset);
            offset += b.len;
        }
        assert_eq!(offset, set.total_count);
    }
}
