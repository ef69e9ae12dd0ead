//! Infinite-sites model.

pub mod exact;
pub mod huw;
pub mod proposals;
pub mod sample;

pub use exact::{ism_exact_probability, ISM_EXACT_CAP};
pub use huw::{huw_ratio, huw_u, HuwRatio, HuwReading, HuwTable};
pub use proposals::{
    huw_row_sums, ism_coefficient, ism_gt_proposal, ism_huw_proposal, ism_moves, ism_sd_proposal, ism_tree_costs, HuwSource, IsmMove,
    IsmProposal, IsmProposalKind, IsmState, TreeCost,
};
pub use sample::{ism_forward_simulate, ism_forward_transitions, watterson, IsmForwardMove, IsmSample, Removal, SingletonIndex};
