//! Interval networks over parameter boxes.

pub mod arch;
pub mod checkpoint;
pub mod network;
pub mod param_box;

pub use arch::{format_layers, parse_layers, Architecture, Heads, InputShape, Layer, Plan, Scenario, Stage};
pub use checkpoint::Checkpoint;
pub use network::{argmax_rows, Head, IntervalTrace, Network};
pub use param_box::{
    box_contains, box_intersect, freeze, region_size, reparam_element, BoxTensor, ContainmentViolation, ParamBox,
    ReparamElement, ReparamState,
};
