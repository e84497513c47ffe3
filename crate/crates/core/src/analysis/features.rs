use std::fs;
use std::path::{Path, PathBuf};

use super::pgm::{normalized_tile, GrayImage};
use crate::error::{Error, Result};
use crate::nn::{Layer, Network};
use crate::tensor::FeatureMap;

/// Files written by [`export_feature_maps`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExport {
    pub tiles: Vec<PathBuf>,
    pub grid: PathBuf,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

/// Columns of a near-square grid holding `n` tiles.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil() as usize;
    let cols = cols.max(1);
    (cols, n.div_ceil(cols))
}

/// Renders the output of conv layer `layer` for the first sample of
/// `input`: one `<layer>_<channel>.pgm` per output channel plus a
/// `<layer>_grid.pgm` composite. Pruned (all-zero) channels come out black.
pub fn export_feature_maps(
    net: &Network,
    input: &FeatureMap,
    layer: usize,
    dir: &Path,
) -> Result<FeatureExport> {
    if !matches!(net.layers().get(layer), Some(Layer::Conv2d(_))) {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is not a conv layer"
        )));
    }
    let nodes = net.forward_trace(&input.single(0))?;
    let map = &nodes[layer + 1];
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let (cols, rows) = grid_shape(map.c);
    let mut grid = GrayImage::black(cols * map.w, rows * map.h);
    let mut tiles = Vec::with_capacity(map.c);
    for ch in 0..map.c {
        let tile = normalized_tile(map, 0, ch);
        grid.blit(&tile, (ch % cols) * map.w, (ch / cols) * map.h);
        let path = dir.join(format!("{layer}_{ch}.pgm"));
        tile.save(&path)?;
        tiles.push(path);
    }
    let grid_path = dir.join(format!("{layer}_grid.pgm"));
    grid.save(&grid_path)?;
    Ok(FeatureExport {
        tiles,
        grid: grid_path,
        grid_cols: cols,
        grid_rows: rows,
    })
}
