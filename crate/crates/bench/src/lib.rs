//! Shared fixtures for the criterion benches.

use rand::Rng;
use rfdeblur_core::image::LinearImage;
use rfdeblur_core::voxelrf::{softplus_inv, VoxelGrid};

/// Piecewise-constant texture with enough edges to exercise the filters.
pub fn textured_image(w: usize, h: usize, seed: u64) -> LinearImage {
    let mut rng = rfdeblur_core::rng::stream(seed, &[77]);
    let mut img = LinearImage::constant(w, h, [0.25, 0.3, 0.35]);
    for _ in 0..12 {
        let x0 = rng.gen_range(0..w - 4);
        let y0 = rng.gen_range(0..h - 4);
        let bw = rng.gen_range(3..w / 3);
        let bh = rng.gen_range(3..h / 3);
        let color = [
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        ];
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                img.set(x, y, color);
            }
        }
    }
    img
}

/// Random dense grid over the unit box.
pub fn random_grid(seed: u64, res: usize) -> VoxelGrid {
    let aabb = rfdeblur_core::voxelrf::Aabb::new([-1.0; 3], [1.0; 3]).unwrap();
    let mut grid = VoxelGrid::new([res, res, res], aabb, 1).unwrap();
    let mut rng = rfdeblur_core::rng::stream(seed, &[5]);
    for v in grid.density_raw_mut() {
        *v = softplus_inv(rng.gen_range(0.01..1.5));
    }
    let n = grid.n_voxels();
    for vox in 0..n {
        for c in 0..3 {
            grid.sh_coeffs_mut()[(vox * 3 + c) * rfdeblur_core::voxelrf::MAX_SH] =
                rng.gen_range(0.3..1.2);
        }
    }
    grid
}
