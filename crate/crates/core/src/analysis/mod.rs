//! Similarity diagnostics: connectivity power, clustering and feature-map
//! dumps.

mod cluster;
mod connectivity;
mod features;
pub mod pgm;

pub use cluster::{
    cluster_channels, cluster_features, kmeans, write_cluster_csv, ClusterPoint, ClusterReport,
    KMeans,
};
pub use connectivity::{connectivity_power, ConnectivityReport, LayerConnectivity};
pub use features::{export_feature_maps, grid_shape, FeatureExport};
