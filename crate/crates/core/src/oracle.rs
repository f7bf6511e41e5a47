//! Brute-force baselines on explicit trees.
//!
//! Nothing in this module knows about grammars.  These are the slow,
//! obviously-correct constructions (leaf removal for centers, explicit path
//! reversal for re-rooting, partition refinement for bisimulation,
//! backtracking for isomorphism) that the compressed algorithms are tested
//! against.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::term::{
    ahu_canon, llex_compare_trees, ranked_tree, DeweyAddress, Label, LabelOrder, Tree,
    SUBDIVISION_LABEL,
};
use crate::{BigCount, Error, Result};

/// Subdivides every edge with a `#` node.  Distances double, so the
/// unrooted diameter becomes even and the center unique.
pub fn even_tree(t: &Tree) -> Tree {
    let mut done: Vec<Tree> = Vec::new();
    for node in t.postorder() {
        let kids = done.split_off(done.len() - node.children.len());
        let wrapped = kids
            .into_iter()
            .map(|c| Tree::new(Label::new(SUBDIVISION_LABEL), vec![c]))
            .collect();
        done.push(Tree::new(node.label.clone(), wrapped));
    }
    done.pop().unwrap()
}

/// Flat view of a tree as an unrooted graph: nodes in preorder, parent
/// links and child indices kept for address reconstruction.
struct TreeGraph {
    parent: Vec<usize>, // parent[0] == 0
    childidx: Vec<u32>, // 1-based position among the parent's children
    adj: Vec<Vec<usize>>,
}

fn graph(t: &Tree) -> TreeGraph {
    let mut parent = vec![0usize];
    let mut childidx = vec![0u32];
    let mut stack: Vec<(&Tree, usize)> = vec![(t, 0)];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some((n, id)) = stack.pop() {
        for (i, c) in n.children.iter().enumerate() {
            let cid = parent.len();
            parent.push(id);
            childidx.push(i as u32 + 1);
            adj.push(Vec::new());
            adj[id].push(cid);
            adj[cid].push(id);
            stack.push((c, cid));
        }
    }
    TreeGraph { parent, childidx, adj }
}

fn address_of(g: &TreeGraph, mut id: usize) -> DeweyAddress {
    let mut steps = Vec::new();
    while id != 0 {
        steps.push(g.childidx[id]);
        id = g.parent[id];
    }
    steps.reverse();
    DeweyAddress(steps)
}

fn bfs_dist(adj: &[Vec<usize>], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Diameter of the unrooted version of `t`, in edges (double BFS).
pub fn unrooted_diameter(t: &Tree) -> usize {
    let g = graph(t);
    let d0 = bfs_dist(&g.adj, 0);
    let far = (0..g.adj.len()).max_by_key(|&v| d0[v]).unwrap();
    *bfs_dist(&g.adj, far).iter().max().unwrap()
}

/// Eccentricity of the node at `addr` in the unrooted version of `t`.
pub fn bfs_eccentricity(t: &Tree, addr: &DeweyAddress) -> Option<usize> {
    t.subtree_at(addr)?;
    let g = graph(t);
    let mut id = 0;
    for &step in &addr.0 {
        id = *g.adj[id]
            .iter()
            .find(|&&w| g.parent[w] == id && g.childidx[w] == step)
            .unwrap();
    }
    bfs_dist(&g.adj, id).into_iter().max()
}

/// Center of the unrooted version of `t` by iterated leaf removal.
/// Requires even diameter (unique center); errors otherwise.
pub fn naive_center(t: &Tree) -> Result<DeweyAddress> {
    let g = graph(t);
    let n = g.adj.len();
    let mut degree: Vec<usize> = g.adj.iter().map(|a| a.len()).collect();
    let mut alive = vec![true; n];
    let mut alive_count = n;
    let mut frontier: Vec<usize> = (0..n).filter(|&v| degree[v] <= 1).collect();
    while alive_count > 2 {
        let mut next = Vec::new();
        for &v in &frontier {
            alive[v] = false;
        }
        alive_count -= frontier.len();
        for &v in &frontier {
            for &w in &g.adj[v] {
                if alive[w] {
                    degree[w] -= 1;
                    if degree[w] <= 1 {
                        next.push(w);
                    }
                }
            }
        }
        frontier = next;
    }
    let survivors: Vec<usize> = (0..n).filter(|&v| alive[v]).collect();
    match survivors.as_slice() {
        [c] => Ok(address_of(&g, *c)),
        _ => Err(Error::OddDiameter(BigCount::from(unrooted_diameter(t)))),
    }
}

/// Re-roots the unrooted version of `t` at the node addressed by `u`,
/// reversing the root path: every node on it keeps its other children in
/// place, with the former parent substituted where the path went down.
/// The reversed chain hangs off the new root as its last child.
pub fn naive_reroot(t: &Tree, u: &DeweyAddress) -> Result<Tree> {
    let mut path: Vec<&Tree> = vec![t];
    let mut cur = t;
    for &step in &u.0 {
        cur = cur
            .children
            .get(step as usize - 1)
            .ok_or_else(|| Error::Path(format!("no node at {u}")))?;
        path.push(cur);
    }
    if u.is_root() {
        return Ok(t.clone());
    }
    // old root minus the branch the path took
    let mut core = {
        let root = path[0];
        let skip = u.0[0] as usize - 1;
        let children = root
            .children
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, c)| c.clone())
            .collect();
        Tree::new(root.label.clone(), children)
    };
    // interior path nodes, deepest last: former parent replaces the path child
    for (j, &node) in path.iter().enumerate().take(path.len() - 1).skip(1) {
        let hole = u.0[j] as usize - 1;
        let mut slot = Some(core);
        let children = node
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| if i == hole { slot.take().unwrap() } else { c.clone() })
            .collect();
        core = Tree::new(node.label.clone(), children);
    }
    let target = *path.last().unwrap();
    let mut children: Vec<Tree> = target.children.to_vec();
    children.push(core);
    Ok(Tree::new(target.label.clone(), children))
}

/// Total order on arbitrary ordered trees: llex first, then the preorder
/// arity sequence.  `Equal` implies the trees are identical, which makes
/// it usable for canonical sorting of unranked trees (where dflr alone
/// does not determine the tree).
pub fn cmp_trees_total(a: &Tree, b: &Tree, ord: LabelOrder) -> Ordering {
    llex_compare_trees(a, b, ord).then_with(|| {
        let arity = |t: &Tree| -> Vec<usize> {
            let mut out = Vec::new();
            let mut stack = vec![t];
            while let Some(n) = stack.pop() {
                out.push(n.children.len());
                stack.extend(n.children.iter().rev());
            }
            out
        };
        arity(a).cmp(&arity(b))
    })
}

/// Bisimulation canonical form: bottom-up, keep one child per unordered
/// isomorphism class.  The output is a deterministic canonical ordered
/// representative, so plain equality of outputs decides bisimilarity.
pub fn naive_bcanon(t: &Tree, ord: LabelOrder) -> Tree {
    let mut done: Vec<Tree> = Vec::new();
    for node in t.postorder() {
        let kids = done.split_off(done.len() - node.children.len());
        let mut uniq: Vec<Tree> = Vec::new();
        for k in kids {
            if !uniq.contains(&k) {
                uniq.push(k);
            }
        }
        uniq.sort_by(|a, b| cmp_trees_total(a, b, ord));
        done.push(Tree::new(node.label.clone(), uniq));
    }
    done.pop().unwrap()
}

/// Bisimulation equivalence of two rooted trees by partition refinement:
/// nodes are equivalent when they carry the same label and their child
/// sets hit the same blocks (sets, not multisets).
pub fn naive_bisim(s: &Tree, t: &Tree) -> bool {
    // disjoint union, preorder ids; root of t offset by |s|
    let mut labels: Vec<&Label> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    for root in [s, t] {
        let base = labels.len();
        let mut stack = vec![(root, usize::MAX)];
        while let Some((n, parent)) = stack.pop() {
            let id = labels.len();
            labels.push(&n.label);
            children.push(Vec::new());
            if parent != usize::MAX {
                children[parent].push(id);
            }
            for c in n.children.iter().rev() {
                stack.push((c, id));
            }
        }
        debug_assert!(labels.len() > base);
    }
    let t_root = s.size();

    let mut block: Vec<usize> = {
        let mut ids: HashMap<&Label, usize> = HashMap::new();
        labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l).or_insert(next)
            })
            .collect()
    };
    loop {
        let mut sig_ids: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let mut next: Vec<usize> = Vec::with_capacity(block.len());
        for v in 0..block.len() {
            let mut kid_blocks: Vec<usize> = children[v].iter().map(|&c| block[c]).collect();
            kid_blocks.sort_unstable();
            kid_blocks.dedup();
            let fresh = sig_ids.len();
            next.push(*sig_ids.entry((block[v], kid_blocks)).or_insert(fresh));
        }
        if next == block {
            break;
        }
        block = next;
    }
    block[0] == block[t_root]
}

/// Unordered rooted isomorphism by backtracking over child matchings.
/// Exponential in principle; meant for trees of a dozen nodes.
pub fn brute_force_iso(s: &Tree, t: &Tree) -> bool {
    if s.label != t.label || s.children.len() != t.children.len() {
        return false;
    }
    fn matching(left: &[Tree], right: &[Tree], used: &mut Vec<bool>, i: usize) -> bool {
        if i == left.len() {
            return true;
        }
        for j in 0..right.len() {
            if !used[j] && brute_force_iso(&left[i], &right[j]) {
                used[j] = true;
                if matching(left, right, used, i + 1) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    matching(&s.children, &t.children, &mut vec![false; t.children.len()], 0)
}

/// Unordered *unrooted* isomorphism: re-root `t` at every node and compare
/// rooted canons against `s`.
pub fn naive_unrooted_iso(s: &Tree, t: &Tree) -> bool {
    if s.size() != t.size() {
        return false;
    }
    let ord = LabelOrder::default();
    let key = ahu_canon(&ranked_tree(s).expect("oracle input labels"), ord);
    let g = graph(t);
    for id in 0..g.adj.len() {
        let rerooted = naive_reroot(t, &address_of(&g, id)).unwrap();
        if ahu_canon(&ranked_tree(&rerooted).unwrap(), ord) == key {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::parse_term;
    use crate::testutil::pseudo_random_tree;

    fn t(s: &str) -> Tree {
        parse_term(s).unwrap()
    }

    #[test]
    fn even_doubles_distances() {
        let tree = t("f(a,g(b))");
        let even = even_tree(&tree);
        assert_eq!(even.to_string(), "f('#'(a),'#'(g('#'(b))))");
        assert_eq!(unrooted_diameter(&even), 2 * unrooted_diameter(&tree));
        assert_eq!(even.size(), 2 * tree.size() - 1);
        // a single node has no edges to subdivide
        assert_eq!(even_tree(&t("a")), t("a"));
    }

    #[test]
    fn center_by_leaf_removal() {
        assert_eq!(naive_center(&t("a")).unwrap(), DeweyAddress::root());
        assert_eq!(naive_center(&t("f(a,b)")).unwrap(), DeweyAddress::root());
        // 5-node path: center is the middle node
        assert_eq!(naive_center(&t("a(b(c(d(e))))")).unwrap(), "1.1".parse().unwrap());
        // the subdivision node between f and g
        let even = even_tree(&t("f(a,g(b))"));
        assert_eq!(naive_center(&even).unwrap(), "2".parse().unwrap());
        // odd diameter is rejected
        assert!(matches!(naive_center(&t("f(a)")), Err(Error::OddDiameter(d)) if d == BigCount::from(1u32)));
    }

    #[test]
    fn center_minimizes_eccentricity() {
        let mut seed = 0xfeed_beefu64;
        for _ in 0..200 {
            let tree = pseudo_random_tree(&mut seed, 24, &["a", "b", "f", "g"]);
            let even = even_tree(&tree);
            let c = naive_center(&even).unwrap();
            let diam = unrooted_diameter(&even);
            assert_eq!(diam % 2, 0);
            assert_eq!(bfs_eccentricity(&even, &c).unwrap(), diam / 2);
        }
    }

    #[test]
    fn reroot_reverses_the_path() {
        let tree = t("f(a,g(b))");
        assert_eq!(naive_reroot(&tree, &"2".parse().unwrap()).unwrap(), t("g(b,f(a))"));
        assert_eq!(naive_reroot(&tree, &DeweyAddress::root()).unwrap(), tree);
        // interior node: siblings stay in position around the former parent
        let deep = t("q(f(a,g(c,m,d),b))");
        let rerooted = naive_reroot(&deep, &"1.2.2".parse().unwrap()).unwrap();
        assert_eq!(rerooted, t("m(g(c,f(a,q,b),d))"));
    }

    #[test]
    fn reroot_preserves_the_unrooted_tree() {
        let mut seed = 0x1234_5678u64;
        for _ in 0..60 {
            let tree = pseudo_random_tree(&mut seed, 14, &["a", "b", "f"]);
            let g = graph(&tree);
            for id in 0..g.adj.len() {
                let rerooted = naive_reroot(&tree, &address_of(&g, id)).unwrap();
                assert!(naive_unrooted_iso(&tree, &rerooted));
            }
        }
    }

    #[test]
    fn bcanon_drops_duplicate_children() {
        let ord = LabelOrder::default();
        assert_eq!(naive_bcanon(&t("f(a,a,a)"), ord), t("f(a)"));
        assert_eq!(naive_bcanon(&t("f(g(a,b),g(b,a))"), ord), t("f(g(a,b))"));
        // duplicates are detected after canonizing below
        assert_eq!(naive_bcanon(&t("f(g(a,a),g(a))"), ord), t("f(g(a))"));
        assert_eq!(naive_bcanon(&t("f(a,g(a),b)"), ord), t("f(a,b,g(a))"));
    }

    #[test]
    fn bisim_by_partition_refinement() {
        assert!(naive_bisim(&t("f(a,a)"), &t("f(a)")));
        assert!(naive_bisim(&t("g(f(a,a),f(a))"), &t("g(f(a))")));
        assert!(!naive_bisim(&t("f(a,b)"), &t("f(a)")));
        assert!(!naive_bisim(&t("f(a)"), &t("g(a)")));
        assert!(naive_bisim(&t("a"), &t("a")));
    }

    #[test]
    fn bisim_agrees_with_bcanon() {
        let ord = LabelOrder::default();
        let mut seed = 0xabcdu64;
        let mut trees = Vec::new();
        for _ in 0..40 {
            trees.push(pseudo_random_tree(&mut seed, 12, &["a", "f", "g"]));
        }
        for s in &trees {
            for t in &trees {
                assert_eq!(
                    naive_bisim(s, t),
                    naive_bcanon(s, ord) == naive_bcanon(t, ord),
                    "bisim mismatch for {s} vs {t}"
                );
            }
        }
    }

    #[test]
    fn brute_iso_agrees_with_canon() {
        let ord = LabelOrder::default();
        let mut seed = 0x5eedu64;
        let mut trees = Vec::new();
        for _ in 0..40 {
            let raw = pseudo_random_tree(&mut seed, 12, &["a", "b", "f"]);
            trees.push(ranked_tree(&raw).unwrap());
        }
        for s in &trees {
            for t in &trees {
                assert_eq!(
                    brute_force_iso(s, t),
                    ahu_canon(s, ord) == ahu_canon(t, ord),
                    "iso mismatch for {s} vs {t}"
                );
            }
        }
    }

    #[test]
    fn unrooted_iso_sees_through_roots() {
        // the same labelled path rooted at both ends
        assert!(naive_unrooted_iso(&t("a(b(c))"), &t("c(b(a))")));
        assert!(!naive_unrooted_iso(&t("a(b(c))"), &t("c(a(b))")));
        assert!(naive_unrooted_iso(&t("f(a,g(b))"), &t("g(b,f(a))")));
    }
}
