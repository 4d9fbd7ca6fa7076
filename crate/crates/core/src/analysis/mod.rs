//! Representation similarity, stage-allocation sweeps and pose scoring.

mod cka;
mod generate;
mod plot;
mod pose;
mod probe;
mod report;
mod sweep;

pub use cka::{linear_cka, FeatureMatrix};
pub use generate::{generate_video, GeneratedVideo};
pub use plot::{line_chart, save_line_chart};
pub use pose::{estimate_trajectory, pose_errors, AlignConfig};
pub use probe::{layer_cka, probe_activations, token_matrix, LayerProbe, ProbeTarget};
pub use report::{cka_report_notes, cka_vs_stage_report, Branch, CkaCurve, CkaRow, CKA_HEADER};
pub use sweep::{
    score_schedule, stage_allocation_sweep, sweep_configurations, sweep_to_csv, video_mse, EvalClip, SweepRow,
    SWEEP_HEADER,
};
