//! Training objective for the detection head: FCOS-style target assignment,
//! focal / GIoU / centerness terms with analytic gradients, and a small
//! gradient-descent fit of the head on fixed features.

mod terms;
mod trainer;

pub use terms::{
    assign_targets, centerness_bce, focal_loss, giou_loss, giou_pair, total_loss, total_loss_f64,
    AssignmentResult, LossBreakdown, LossWeights,
};
pub use trainer::{fit_head_demo, format_loss_trace, DemoFit, HeadParams64, LossRecord};
