//! Pre-training objectives: ITM batch construction, ITM/MLM/WPA/MPP loss
//! graphs, and their aggregation into the total pre-training loss.

pub mod batch;
pub mod heads;
pub mod loss;

pub use batch::{build_itm_batch, BatchOptions, PairPool, PretrainBatch, PretrainSample};
pub use heads::PretrainHeads;
pub use loss::{
    pretrain_loss_and_grads, pretrain_loss_report, sample_graph, wpa_subsets, LossReport,
    SampleGraph, WpaOptions,
};

use serde::{Deserialize, Serialize};

/// Objective toggles (the whole-word-masking toggle lives in batch options).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainFlags {
    pub use_wpa: bool,
    pub use_mpp: bool,
}

impl Default for PretrainFlags {
    fn default() -> Self {
        PretrainFlags {
            use_wpa: true,
            use_mpp: false,
        }
    }
}
