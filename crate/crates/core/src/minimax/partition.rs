use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Consecutive ranges whose sizes differ by at most one.
    Contiguous,
    /// Index `i` goes to block `i mod J`.
    Strided,
    /// One block per coordinate; requires `J = dim`.
    Singleton,
}

/// `J` disjoint index blocks covering `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    dim: usize,
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    /// Validates that `blocks` are nonempty, disjoint and cover `0..dim`.
    pub fn from_blocks(dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if dim == 0 || blocks.is_empty() {
            return Err(Error::InvalidArgument("partition needs dim >= 1 and J >= 1".into()));
        }
        let mut seen = vec![false; dim];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::InvalidArgument("partition block is empty".into()));
            }
            for &i in block {
                if i >= dim || seen[i] {
                    return Err(Error::InvalidArgument(format!("index {i} is out of range or repeated")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::InvalidArgument("blocks do not cover every index".into()));
        }
        Ok(Self { dim, blocks })
    }

    pub fn full(dim: usize) -> Result<Self> {
        make_partition(dim, 1, PartitionStrategy::Contiguous)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
}

pub fn make_partition(dim: usize, blocks: usize, strategy: PartitionStrategy) -> Result<BlockPartition> {
    if blocks == 0 || blocks > dim {
        return Err(Error::InvalidArgument(format!(
            "number of blocks {blocks} must lie in 1..={dim}"
        )));
    }
    let parts = match strategy {
        PartitionStrategy::Contiguous => {
            let (base, extra) = (dim / blocks, dim % blocks);
            let mut start = 0;
            (0..blocks)
                .map(|j| {
                    let len = base + usize::from(j < extra);
                    let block: Vec<usize> = (start..start + len).collect();
                    start += len;
                    block
                })
                .collect()
        }
        PartitionStrategy::Strided => (0..blocks).map(|j| (j..dim).step_by(blocks).collect()).collect(),
        PartitionStrategy::Singleton => {
            if blocks != dim {
                return Err(Error::InvalidArgument(format!(
                    "singleton partition needs J = dim ({dim}), got {blocks}"
                )));
            }
            (0..dim).map(|i| vec![i]).collect()
        }
    };
    BlockPartition::from_blocks(dim, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_block_is_everything() {
        let p = make_partition(4, 1, PartitionStrategy::Contiguous).unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn contiguous_even_split() {
        let p = make_partition(5, 2, PartitionStrategy::Contiguous).unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1, 2], vec![3, 4]]);
    }

    #[test]
    fn singletons() {
        let p = make_partition(4, 4, PartitionStrategy::Singleton).unwrap();
        assert_eq!(p.blocks(), &[vec![0], vec![1], vec![2], vec![3]]);
        assert!(make_partition(4, 3, PartitionStrategy::Singleton).is_err());
    }

    #[test]
    fn strided() {
        let p = make_partition(5, 2, PartitionStrategy::Strided).unwrap();
        assert_eq!(p.blocks(), &[vec![0, 2, 4], vec![1, 3]]);
    }

    #[test]
    fn out_of_range_block_count() {
        assert!(make_partition(3, 0, PartitionStrategy::Contiguous).is_err());
        assert!(make_partition(3, 4, PartitionStrategy::Strided).is_err());
    }

    proptest! {
        #[test]
        fn partitions_cover_disjointly(dim in 1usize..40, j in 1usize..40, strided in any::<bool>()) {
            prop_assume!(j <= dim);
            let strategy = if strided { PartitionStrategy::Strided } else { PartitionStrategy::Contiguous };
            let p = make_partition(dim, j, strategy).unwrap();
            let mut all: Vec<usize> = p.blocks().iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..dim).collect::<Vec<_>>());
            let sizes: Vec<usize> = p.blocks().iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
