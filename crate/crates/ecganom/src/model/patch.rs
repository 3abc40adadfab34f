//! Patch geometry, the column-wise wave mask, and sinusoidal positions.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Patch grid over an H x W image with square patches of side P.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn new(image_h: usize, image_w: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || image_h % patch_size != 0 || image_w % patch_size != 0 {
            return Err(Error::Config(format!(
                "image {}x{} not divisible by patch size {}",
                image_h, image_w, patch_size
            )));
        }
        Ok(Self {
            image_h,
            image_w,
            patch_size,
        })
    }

    pub fn rows(&self) -> usize {
        self.image_h / self.patch_size
    }

    pub fn cols(&self) -> usize {
        self.image_w / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Row-major patch index -> (row, col).
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols(), index % self.cols())
    }
}

/// Row-major sequence of flattened P*P patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSeq {
    /// `[N, P*P]`, each row one patch flattened row-major.
    pub data: Tensor,
    pub grid: PatchGrid,
}

/// Split an image (row-major `H*W` pixels) into its patch sequence.
pub fn patchify(pixels: &[f64], grid: PatchGrid) -> Result<PatchSeq> {
    if pixels.len() != grid.image_h * grid.image_w {
        return Err(Error::Shape(format!(
            "image has {} pixels, grid expects {}",
            pixels.len(),
            grid.image_h * grid.image_w
        )));
    }
    let p = grid.patch_size;
    let w = grid.image_w;
    let mut data = Vec::with_capacity(grid.num_patches() * p * p);
    for pr in 0..grid.rows() {
        for pc in 0..grid.cols() {
            for dy in 0..p {
                let base = (pr * p + dy) * w + pc * p;
                data.extend_from_slice(&pixels[base..base + p]);
            }
        }
    }
    Ok(PatchSeq {
        data: Tensor::new(vec![grid.num_patches(), p * p], data)?,
        grid,
    })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(seq: &PatchSeq) -> Result<Vec<f64>> {
    let grid = seq.grid;
    let p = grid.patch_size;
    if seq.data.shape() != [grid.num_patches(), p * p] {
        return Err(Error::Shape(format!(
            "patch sequence shape {:?}, grid expects [{}, {}]",
            seq.data.shape(),
            grid.num_patches(),
            p * p
        )));
    }
    let w = grid.image_w;
    let mut pixels = vec![0.0; grid.image_h * w];
    for k in 0..grid.num_patches() {
        let (pr, pc) = grid.position(k);
        let patch = seq.data.row(k);
        for dy in 0..p {
            let base = (pr * p + dy) * w + pc * p;
            pixels[base..base + p].copy_from_slice(&patch[dy * p..(dy + 1) * p]);
        }
    }
    Ok(pixels)
}

/// How seed patch indices are drawn when sampling the wave mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskDistribution {
    /// Truncated normal over patch indices [1, N], centered mid-grid, with
    /// standard deviation `sigma_frac * N`. Biases selection toward central
    /// columns where the waveform lives.
    CenteredNormal { sigma_frac: f64 },
    /// Uniform over [1, N].
    Uniform,
}

impl Default for MaskDistribution {
    fn default() -> Self {
        MaskDistribution::CenteredNormal {
            sigma_frac: 1.0 / 6.0,
        }
    }
}

/// The sampled mask: seed patches, their columns, and the full-column
/// expansion of those columns into patch indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    /// Seed patches as (row, col) pairs, in draw order.
    pub seed_patches: Vec<(usize, usize)>,
    /// Selected column indices, sorted.
    pub columns: Vec<usize>,
    /// Masked patch indices (every patch in a selected column), sorted.
    pub masked: Vec<usize>,
    pub grid: PatchGrid,
}

impl MaskSet {
    /// Visible (unmasked) patch indices, sorted.
    pub fn visible(&self) -> Vec<usize> {
        let mut mask_iter = self.masked.iter().peekable();
        let mut out = Vec::with_capacity(self.grid.num_patches() - self.masked.len());
        for k in 0..self.grid.num_patches() {
            if mask_iter.peek() == Some(&&k) {
                mask_iter.next();
            } else {
                out.push(k);
            }
        }
        out
    }
}

/// Sample a wave mask: draw seed patch indices from `dist` until the target
/// number of distinct columns `k = clamp(round(mask_ratio * cols), 1, cols)`
/// (0 when the ratio is 0) is reached, then mask every patch in those columns.
pub fn sample_wave_mask_with(
    grid: PatchGrid,
    mask_ratio: f64,
    dist: MaskDistribution,
    rng: &mut impl Rng,
) -> Result<MaskSet> {
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!(
            "mask_ratio must be in [0,1], got {mask_ratio}"
        )));
    }
    let cols = grid.cols();
    let target = if mask_ratio > 0.0 {
        ((mask_ratio * cols as f64).round() as usize).clamp(1, cols)
    } else {
        0
    };

    let n = grid.num_patches();
    let mut seed_patches = Vec::new();
    let mut selected = vec![false; cols];
    let mut num_selected = 0usize;
    while num_selected < target {
        let index = match dist {
            MaskDistribution::CenteredNormal { sigma_frac } => {
                let normal = Normal::new((n as f64 + 1.0) / 2.0, sigma_frac * n as f64)
                    .map_err(|_| Error::Config("non-positive mask sigma".into()))?;
                // draw 1-based indices, rejecting outside [1, N]
                loop {
                    let v = normal.sample(rng).round();
                    if v >= 1.0 && v <= n as f64 {
                        break v as usize - 1;
                    }
                }
            }
            MaskDistribution::Uniform => rng.gen_range(0..n),
        };
        // column-major decode: consecutive indices walk down a column, so a
        // centrally-peaked index draw lands in central columns
        let (r, c) = (index % grid.rows(), index / grid.rows());
        seed_patches.push((r, c));
        if !selected[c] {
            selected[c] = true;
            num_selected += 1;
        }
    }

    let columns: Vec<usize> = (0..cols).filter(|&c| selected[c]).collect();
    let mut masked = Vec::with_capacity(grid.rows() * columns.len());
    for k in 0..n {
        if selected[k % cols] {
            masked.push(k);
        }
    }
    Ok(MaskSet {
        seed_patches,
        columns,
        masked,
        grid,
    })
}

pub fn sample_wave_mask(
    grid: PatchGrid,
    mask_ratio: f64,
    rng: &mut impl Rng,
) -> Result<MaskSet> {
    sample_wave_mask_with(grid, mask_ratio, MaskDistribution::default(), rng)
}

/// Split a patch sequence into (visible, masked) parts, preserving the
/// original ordering within each part.
pub fn partition_patches(seq: &PatchSeq, mask: &MaskSet) -> Result<(Tensor, Tensor)> {
    if mask.grid != seq.grid {
        return Err(Error::Shape("mask grid does not match sequence grid".into()));
    }
    let p2 = seq.grid.patch_size * seq.grid.patch_size;
    let gather = |indices: &[usize]| -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * p2);
        for &k in indices {
            data.extend_from_slice(seq.data.row(k));
        }
        Tensor::new(vec![indices.len(), p2], data).expect("sizes consistent")
    };
    Ok((gather(&mask.visible()), gather(&mask.masked)))
}

/// Fixed 2-D sinusoidal positional table: `dim/2` channels from the patch
/// row index, `dim/2` from the column index, standard sin/cos frequency
/// ladder. Returns `[N, dim]`.
pub fn positional_encoding(grid: PatchGrid, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding dim must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let n = grid.num_patches();
    let mut data = Vec::with_capacity(n * dim);
    let channel = |pos: f64, i: usize| -> f64 {
        let freq = 1.0 / 10000f64.powf(2.0 * (i / 2) as f64 / half as f64);
        if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    };
    for k in 0..n {
        let (r, c) = grid.position(k);
        for i in 0..half {
            data.push(channel(r as f64, i));
        }
        for i in 0..half {
            data.push(channel(c as f64, i));
        }
    }
    Tensor::new(vec![n, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_counts() {
        let g = PatchGrid::new(128, 128, 16).unwrap();
        assert_eq!(g.num_patches(), 64);
        let g = PatchGrid::new(128, 128, 8).unwrap();
        assert_eq!(g.num_patches(), 256);
        assert!(PatchGrid::new(128, 128, 3).is_err());
    }

    #[test]
    fn patchify_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        use rand::Rng;
        let grid = PatchGrid::new(16, 24, 4).unwrap();
        let pixels: Vec<f64> = (0..16 * 24).map(|_| rng.gen_range(0.0..1.0)).collect();
        let seq = patchify(&pixels, grid).unwrap();
        assert_eq!(unpatchify(&seq).unwrap(), pixels);
    }

    #[test]
    fn single_patch_grid_is_identity() {
        let grid = PatchGrid::new(4, 4, 4).unwrap();
        let pixels: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let seq = patchify(&pixels, grid).unwrap();
        assert_eq!(seq.data.row(0), &pixels[..]);
        assert_eq!(unpatchify(&seq).unwrap(), pixels);
    }

    #[test]
    fn unpatchify_rejects_wrong_count() {
        let grid = PatchGrid::new(8, 8, 4).unwrap();
        let seq = PatchSeq {
            data: Tensor::zeros(vec![3, 16]),
            grid,
        };
        assert!(unpatchify(&seq).is_err());
    }

    #[test]
    fn mask_ratio_zero_and_one() {
        let grid = PatchGrid::new(64, 64, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = sample_wave_mask(grid, 0.0, &mut rng).unwrap();
        assert!(empty.columns.is_empty() && empty.masked.is_empty());
        let full = sample_wave_mask(grid, 1.0, &mut rng).unwrap();
        assert_eq!(full.columns.len(), grid.cols());
        assert_eq!(full.masked.len(), grid.num_patches());
    }

    #[test]
    fn mask_geometry_matches_column_expansion() {
        let grid = PatchGrid::new(64, 64, 8).unwrap(); // 8x8
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mask = sample_wave_mask(grid, 0.3, &mut rng).unwrap();
        assert_eq!(mask.columns.len(), 2); // round(0.3 * 8)
        assert_eq!(mask.masked.len(), grid.rows() * mask.columns.len());
        // brute-force expansion check
        for &k in &mask.masked {
            let (_, c) = grid.position(k);
            assert!(mask.columns.contains(&c));
            assert!(mask.seed_patches.iter().any(|&(_, sc)| sc == c));
        }
        for k in 0..grid.num_patches() {
            let (_, c) = grid.position(k);
            assert_eq!(mask.masked.contains(&k), mask.columns.contains(&c));
        }
    }

    #[test]
    fn mask_is_seed_deterministic() {
        let grid = PatchGrid::new(64, 64, 8).unwrap();
        let a = sample_wave_mask(grid, 0.3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_wave_mask(grid, 0.3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_column_histogram_peaks_centrally() {
        let grid = PatchGrid::new(64, 64, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hist = vec![0usize; grid.cols()];
        for _ in 0..10_000 {
            let mask = sample_wave_mask(grid, 0.3, &mut rng).unwrap();
            for &c in &mask.columns {
                hist[c] += 1;
            }
        }
        let mode = (0..hist.len()).max_by_key(|&c| hist[c]).unwrap();
        // mode in the central half of the 8 columns
        assert!((2..6).contains(&mode), "mode {mode}, hist {hist:?}");
    }

    #[test]
    fn partition_preserves_order_and_counts() {
        let grid = PatchGrid::new(8, 8, 4).unwrap(); // 2x2 grid
        let pixels: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let seq = patchify(&pixels, grid).unwrap();
        // mask column 1 -> patches {1, 3}
        let mask = MaskSet {
            seed_patches: vec![(0, 1)],
            columns: vec![1],
            masked: vec![1, 3],
            grid,
        };
        let (visible, masked) = partition_patches(&seq, &mask).unwrap();
        assert_eq!(visible.nrows(), 2);
        assert_eq!(masked.nrows(), 2);
        assert_eq!(visible.row(0), seq.data.row(0));
        assert_eq!(visible.row(1), seq.data.row(2));
        assert_eq!(masked.row(0), seq.data.row(1));
        assert_eq!(masked.row(1), seq.data.row(3));
        assert_eq!(mask.visible(), vec![0, 2]);
    }

    #[test]
    fn partition_empty_and_full_masks() {
        let grid = PatchGrid::new(8, 8, 4).unwrap();
        let seq = patchify(&vec![0.0; 64], grid).unwrap();
        let empty = MaskSet {
            seed_patches: vec![],
            columns: vec![],
            masked: vec![],
            grid,
        };
        let (v, m) = partition_patches(&seq, &empty).unwrap();
        assert_eq!(v.nrows(), 4);
        assert_eq!(m.nrows(), 0);
        let full = MaskSet {
            seed_patches: vec![(0, 0), (0, 1)],
            columns: vec![0, 1],
            masked: vec![0, 1, 2, 3],
            grid,
        };
        let (v, m) = partition_patches(&seq, &full).unwrap();
        assert_eq!(v.nrows(), 0);
        assert_eq!(m.nrows(), 4);
    }

    #[test]
    fn positional_encoding_basics() {
        let grid = PatchGrid::new(64, 64, 8).unwrap();
        let pe = positional_encoding(grid, 16).unwrap();
        assert_eq!(pe.shape(), &[64, 16]);
        // (0,0): sin channels 0, cos channels 1
        for (i, &v) in pe.row(0).iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(v, 0.0);
            } else {
                assert_eq!(v, 1.0);
            }
        }
        // pairwise distinct across all 64 positions
        for a in 0..64 {
            for b in (a + 1)..64 {
                assert_ne!(pe.row(a), pe.row(b), "positions {a} and {b} collide");
            }
        }
        // deterministic recomputation
        assert_eq!(pe, positional_encoding(grid, 16).unwrap());
        assert!(positional_encoding(grid, 15).is_err());
    }
}
