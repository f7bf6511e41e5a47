//! Helpers shared by the unit tests of several modules.

use crate::term::{Label, Tree};

pub(crate) fn xorshift(seed: &mut u64) -> u64 {
    *seed ^= *seed << 13;
    *seed ^= *seed >> 7;
    *seed ^= *seed << 17;
    *seed
}

/// Small deterministic random tree for oracle cross-checks.
pub(crate) fn pseudo_random_tree(seed: &mut u64, max_nodes: usize, labels: &[&str]) -> Tree {
    fn build(seed: &mut u64, budget: &mut usize, labels: &[&str]) -> Tree {
        let label = Label::new(labels[(xorshift(seed) % labels.len() as u64) as usize]);
        *budget -= 1;
        let max_kids = (*budget).min(3);
        let k = if max_kids == 0 { 0 } else { (xorshift(seed) % (max_kids as u64 + 1)) as usize };
        let mut children = Vec::new();
        for _ in 0..k {
            if *budget == 0 {
                break;
            }
            children.push(build(seed, budget, labels));
        }
        Tree::new(label, children)
    }
    let mut budget = max_nodes.max(1);
    build(seed, &mut budget, labels)
}
