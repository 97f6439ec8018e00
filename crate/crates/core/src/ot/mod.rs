//! Word-patch alignment machinery: cosine cost matrices, the IPOT
//! transport solver, and heatmap export of transport plans.

pub mod heatmap;
pub mod ipot;

pub use heatmap::{heatmap_values, render_overlay, HeatmapDump};
pub use ipot::{ipot, ipot_with_callback, plan_entropy, wpa_cost, TransportPlan};
