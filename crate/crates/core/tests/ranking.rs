//! Ranking metrics against a materialize-and-sort oracle.

mod common;

use common::checks::{ea_rank_mismatches, lp_rank_mismatches};

#[test]
fn link_prediction_ranks_match_oracle() {
    let bad = lp_rank_mismatches();
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn alignment_ranks_match_oracle() {
    let bad = ea_rank_mismatches();
    assert!(bad.is_empty(), "{bad:#?}");
}
