//! Segmentation, temporal and functional metrics.

pub mod distance;
pub mod overlap;
pub mod report;
pub mod stats;
pub mod temporal;
pub mod volume;

pub use distance::{assd, boundary, hausdorff, Point};
pub use overlap::{class_mask, dice};
pub use report::{ef_from_labels, score_structure, EfRow, EvalReport, Geometry, StructureScore};
pub use stats::{mean_std, pearson};
pub use temporal::{area_curve, temporal_consistency, temporal_consistency_of_areas};
pub use volume::{
    ejection_fraction, is_pathological, mask_diameters, mask_volume, simpson_biplane, simpson_biplane_mm3, VolumePair,
};
