//! Channel/filter views of convolution weights.
//!
//! A layer's kernels are summarised by a `c × n` matrix of kernel norms:
//! row `i` is the channel vector `X_i` (one entry per filter) and column
//! `j` is the filter vector (one entry per channel).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalties::similarity::{self, Metric};
use crate::tensor::WeightTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Channels,
    Filters,
}

/// Kernel Frobenius norms of one conv layer, `c × n`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVectorSet {
    pub layer: usize,
    pub channels: usize,
    pub filters: usize,
    pub matrix: Vec<f64>,
}

impl ChannelVectorSet {
    pub fn from_matrix(
        layer: usize,
        channels: usize,
        filters: usize,
        matrix: Vec<f64>,
    ) -> Result<Self> {
        if matrix.len() != channels * filters {
            return Err(Error::shape(
                "channel vectors",
                format!("{} entries for {channels}x{filters}", matrix.len()),
            ));
        }
        Ok(ChannelVectorSet {
            layer,
            channels,
            filters,
            matrix,
        })
    }

    #[inline]
    pub fn get(&self, channel: usize, filter: usize) -> f64 {
        self.matrix[channel * self.filters + filter]
    }

    /// Channel vector `X_i`.
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.matrix[channel * self.filters..(channel + 1) * self.filters]
    }

    pub fn column(&self, filter: usize) -> Vec<f64> {
        (0..self.channels).map(|i| self.get(i, filter)).collect()
    }

    /// The vectors along `axis`: rows for channels, columns for filters.
    pub fn vectors(&self, axis: Axis) -> Vec<Vec<f64>> {
        match axis {
            Axis::Channels => (0..self.channels).map(|i| self.row(i).to_vec()).collect(),
            Axis::Filters => (0..self.filters).map(|j| self.column(j)).collect(),
        }
    }

    /// The same norms with channels and filters swapped.
    pub fn transposed(&self) -> ChannelVectorSet {
        let mut m = vec![0.0; self.matrix.len()];
        for i in 0..self.channels {
            for j in 0..self.filters {
                m[j * self.channels + i] = self.get(i, j);
            }
        }
        ChannelVectorSet {
            layer: self.layer,
            channels: self.filters,
            filters: self.channels,
            matrix: m,
        }
    }
}

/// Norm of each 3D filter `W_{·,j}` over all `k·k·c` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterNormSet {
    pub layer: usize,
    pub norms: Vec<f64>,
}

pub fn channel_vectors(layer: usize, w: &WeightTensor) -> ChannelVectorSet {
    let s = w.shape();
    let mut sq = vec![0.0; s.c * s.n];
    for (t, v) in w.values().iter().enumerate() {
        // flat index = (tap * c + channel) * n + filter
        sq[t % (s.c * s.n)] += v * v;
    }
    ChannelVectorSet {
        layer,
        channels: s.c,
        filters: s.n,
        matrix: sq.into_iter().map(f64::sqrt).collect(),
    }
}

pub fn filter_3d_norms(layer: usize, w: &WeightTensor) -> FilterNormSet {
    let n = w.shape().n;
    let mut sq = vec![0.0; n];
    for (i, v) in w.values().iter().enumerate() {
        sq[i % n] += v * v;
    }
    FilterNormSet {
        layer,
        norms: sq.into_iter().map(f64::sqrt).collect(),
    }
}

/// Arithmetic mean of the channel vectors, the base vector `B`.
pub fn mean_vector(cv: &ChannelVectorSet) -> Result<Vec<f64>> {
    if cv.channels == 0 {
        return Err(Error::Degenerate {
            layer: cv.layer,
            detail: "no channel vectors".into(),
        });
    }
    let mut b = vec![0.0; cv.filters];
    for i in 0..cv.channels {
        for (acc, v) in b.iter_mut().zip(cv.row(i)) {
            *acc += v;
        }
    }
    let c = cv.channels as f64;
    b.iter_mut().for_each(|v| *v /= c);
    Ok(b)
}

/// Square similarity matrix of the vectors along `axis`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub size: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Mean of the entries above the diagonal.
    pub fn mean_off_diagonal(&self) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.size {
            for j in i + 1..self.size {
                sum += self.get(i, j);
            }
        }
        sum / (self.size * (self.size - 1) / 2) as f64
    }
}

pub fn pairwise_similarity_matrix(
    cv: &ChannelVectorSet,
    metric: Metric,
    axis: Axis,
) -> Result<SimilarityMatrix> {
    let vs = cv.vectors(axis);
    let size = vs.len();
    if size < 2 {
        return Err(Error::Degenerate {
            layer: cv.layer,
            detail: format!("need at least 2 vectors along {axis:?}, have {size}"),
        });
    }
    let mut values = vec![0.0; size * size];
    for i in 0..size {
        for j in i..size {
            let s = similarity::similarity(metric, &vs[i], &vs[j]);
            values[i * size + j] = s;
            values[j * size + i] = s;
        }
    }
    Ok(SimilarityMatrix { size, values })
}
