use serde::{Deserialize, Serialize};

/// Node of a fitted tree; children are indices into the owning tree's node list.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        var: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

// Wire form: `[var, cut, left, right]` or `[value]`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Split(usize, f64, usize, usize),
    Leaf([f64; 1]),
}

/// A binary regression tree: `x[var] <= cut` goes left. The root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NodeRepr>", into = "Vec<NodeRepr>")]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl From<Tree> for Vec<NodeRepr> {
    fn from(t: Tree) -> Self {
        t.nodes
            .into_iter()
            .map(|n| match n {
                TreeNode::Split {
                    var,
                    cut,
                    left,
                    right,
                } => NodeRepr::Split(var, cut, left, right),
                TreeNode::Leaf { value } => NodeRepr::Leaf([value]),
            })
            .collect()
    }
}

impl TryFrom<Vec<NodeRepr>> for Tree {
    type Error = String;
    fn try_from(raw: Vec<NodeRepr>) -> Result<Self, String> {
        let nodes: Vec<TreeNode> = raw
            .into_iter()
            .map(|r| match r {
                NodeRepr::Split(var, cut, left, right) => TreeNode::Split {
                    var,
                    cut,
                    left,
                    right,
                },
                NodeRepr::Leaf([value]) => TreeNode::Leaf { value },
            })
            .collect();
        Tree::new(nodes)
    }
}

impl Tree {
    pub fn new(nodes: Vec<TreeNode>) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        // every non-root node must be the child of exactly one split
        let mut parents = vec![0usize; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let TreeNode::Split { left, right, .. } = *n {
                for c in [left, right] {
                    if c >= nodes.len() || c <= i {
                        return Err(format!("node {i} has invalid child {c}"));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err("nodes do not form a single binary tree".into());
        }
        Ok(Self { nodes })
    }

    pub fn stump(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    var,
                    cut,
                    left,
                    right,
                } => i = if x[var] <= cut { left } else { right },
            }
        }
    }

    /// Maximum leaf depth (a stump has depth 0).
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn split_vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { var, .. } => Some(*var),
            TreeNode::Leaf { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tree {
        Tree::new(vec![
            TreeNode::Split {
                var: 1,
                cut: 0.25,
                left: 1,
                right: 2,
            },
            TreeNode::Leaf { value: -1.5 },
            TreeNode::Split {
                var: 0,
                cut: 0.1,
                left: 3,
                right: 4,
            },
            TreeNode::Leaf { value: 0.3 },
            TreeNode::Leaf { value: 1e-17 },
        ])
        .unwrap()
    }

    #[test]
    fn evaluation_and_depth() {
        let t = sample();
        assert_eq!(t.eval(&[0.0, 0.25]), -1.5);
        assert_eq!(t.eval(&[0.0, 0.3]), 0.3);
        assert_eq!(t.eval(&[0.2, 0.3]), 1e-17);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(Tree::stump(2.0).depth(), 0);
    }

    #[test]
    fn json_form_is_nested_arrays_and_lossless() {
        let t = sample();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("[[1,0.25,1,2],[-1.5],"));
        let back: Tree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_trees_are_rejected() {
        assert!(serde_json::from_str::<Tree>("[]").is_err());
        assert!(serde_json::from_str::<Tree>("[[0,0.5,1,1],[1.0]]").is_err());
        assert!(serde_json::from_str::<Tree>("[[0,0.5,1,5],[1.0],[2.0]]").is_err());
        assert!(serde_json::from_str::<Tree>("[[1.0],[2.0]]").is_err());
    }
}
