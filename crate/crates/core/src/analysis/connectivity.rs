use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{channel_vectors, pairwise_similarity_matrix, Axis, ChannelVectorSet};
use crate::nn::Network;
use crate::penalties::Metric;

/// Mean pairwise angular similarity of the channel vectors (rows) and the
/// filter vectors (columns) of one layer.
pub fn connectivity_power(cv: &ChannelVectorSet) -> Result<(f64, f64)> {
    if cv.channels < 2 || cv.filters < 2 {
        return Err(Error::Degenerate {
            layer: cv.layer,
            detail: format!(
                "connectivity needs >= 2 channels and filters, have {}x{}",
                cv.channels, cv.filters
            ),
        });
    }
    let ch = pairwise_similarity_matrix(cv, Metric::Angular, Axis::Channels)?;
    let fl = pairwise_similarity_matrix(cv, Metric::Angular, Axis::Filters)?;
    Ok((ch.mean_off_diagonal(), fl.mean_off_diagonal()))
}

fn axis_power(cv: &ChannelVectorSet, axis: Axis) -> Option<f64> {
    pairwise_similarity_matrix(cv, Metric::Angular, axis)
        .ok()
        .map(|m| m.mean_off_diagonal())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConnectivity {
    pub layer: usize,
    pub channels: usize,
    pub filters: usize,
    /// `None` when the layer has fewer than two channels.
    pub channel_cp: Option<f64>,
    /// `None` when the layer has fewer than two filters.
    pub filter_cp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub layers: Vec<LayerConnectivity>,
}

impl ConnectivityReport {
    pub fn of(net: &Network) -> Self {
        let layers = net
            .conv_indices()
            .into_iter()
            .map(|l| {
                let cv = channel_vectors(l, &net.conv(l).expect("conv index").weight);
                LayerConnectivity {
                    layer: l,
                    channels: cv.channels,
                    filters: cv.filters,
                    channel_cp: axis_power(&cv, Axis::Channels),
                    filter_cp: axis_power(&cv, Axis::Filters),
                }
            })
            .collect();
        ConnectivityReport { layers }
    }

    /// Average `channel_cp` over layers where it is defined.
    pub fn mean_channel_cp(&self) -> Option<f64> {
        mean(self.layers.iter().filter_map(|l| l.channel_cp))
    }

    pub fn mean_filter_cp(&self) -> Option<f64> {
        mean(self.layers.iter().filter_map(|l| l.filter_cp))
    }

    /// Columns: `layer,channels,filters,channel_cp,filter_cp`; undefined
    /// values are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "channels", "filters", "channel_cp", "filter_cp"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.channels.to_string(),
                l.filters.to_string(),
                opt(l.channel_cp),
                opt(l.filter_cp),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal() {
        let same =
            ChannelVectorSet::from_matrix(0, 3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!((connectivity_power(&same).unwrap().0 - 1.0).abs() < 1e-12);
        let ortho = ChannelVectorSet::from_matrix(0, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (c, f) = connectivity_power(&ortho).unwrap();
        assert!((c - 0.5).abs() < 1e-12 && (f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_layer_errors() {
        let one = ChannelVectorSet::from_matrix(0, 1, 4, vec![1.0; 4]).unwrap();
        assert!(connectivity_power(&one).is_err());
    }
}
