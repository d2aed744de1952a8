//! Single CART regression tree on ln(target).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::Feature;
use super::{EstimatorError, TargetKind};
use crate::domain::PatientProfile;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "split", rename_all = "snake_case")]
pub enum SplitRule {
    /// Left when the value is `<= threshold`.
    Numeric { feature: Feature, threshold: f64 },
    /// Left when the level equals `level`.
    Categorical { feature: Feature, level: String },
}

impl SplitRule {
    pub fn goes_left(&self, p: &PatientProfile) -> bool {
        match self {
            SplitRule::Numeric { feature, threshold } => feature.numeric_value(p) <= *threshold,
            SplitRule::Categorical { feature, level } => feature.level(p) == *level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Mean ln-target of the training rows in this leaf.
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf(Leaf),
    Split { rule: SplitRule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Arena; the root is node 0.
    pub nodes: Vec<Node>,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub target_kind: TargetKind,
}

struct Builder<'a> {
    profiles: &'a [PatientProfile],
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

fn sse(sum: f64, sum_sq: f64, n: usize) -> f64 {
    (sum_sq - sum * sum / n as f64).max(0.0)
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize]) -> Leaf {
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum::<f64>() / n;
        Leaf {
            mean,
            sd: var.sqrt(),
            count: idx.len(),
        }
    }

    fn best_split(&self, idx: &[usize]) -> Option<SplitRule> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent = sse(total, total_sq, n);
        let tol = 1e-12 * parent.max(1.0);
        let mut best: Option<(f64, SplitRule)> = None;
        let mut consider = |gain: f64, rule: SplitRule| {
            if gain > tol && best.as_ref().map_or(true, |(g, _)| gain > *g) {
                best = Some((gain, rule));
            }
        };
        for &feature in &Feature::ALL {
            if feature.is_numeric() {
                let mut order: Vec<(f64, f64)> = idx
                    .iter()
                    .map(|&i| (feature.numeric_value(&self.profiles[i]), self.y[i]))
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (mut s, mut sq) = (0.0, 0.0);
                for j in 0..n - 1 {
                    s += order[j].1;
                    sq += order[j].1 * order[j].1;
                    let nl = j + 1;
                    if order[j].0 == order[j + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                        continue;
                    }
                    let gain = parent - sse(s, sq, nl) - sse(total - s, total_sq - sq, n - nl);
                    consider(
                        gain,
                        SplitRule::Numeric {
                            feature,
                            threshold: (order[j].0 + order[j + 1].0) / 2.0,
                        },
                    );
                }
            } else {
                let mut levels: std::collections::BTreeMap<String, (f64, f64, usize)> =
                    Default::default();
                for &i in idx {
                    let e = levels.entry(feature.level(&self.profiles[i])).or_default();
                    e.0 += self.y[i];
                    e.1 += self.y[i] * self.y[i];
                    e.2 += 1;
                }
                if levels.len() < 2 {
                    continue;
                }
                for (level, (s, sq, nl)) in levels {
                    if nl < self.min_leaf || n - nl < self.min_leaf {
                        continue;
                    }
                    let gain = parent - sse(s, sq, nl) - sse(total - s, total_sq - sq, n - nl);
                    consider(gain, SplitRule::Categorical { feature, level });
                }
            }
        }
        best.map(|(_, r)| r)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf(&idx)));
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(rule) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| rule.goes_left(&self.profiles[i]));
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { rule, left, right };
        id
    }
}

pub fn fit_tree(
    profiles: &[PatientProfile],
    targets: &[f64],
    target_kind: TargetKind,
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree, EstimatorError> {
    if profiles.len() != targets.len() {
        return Err(EstimatorError::InvalidParameter(format!(
            "{} profiles but {} targets",
            profiles.len(),
            targets.len()
        )));
    }
    if min_leaf == 0 {
        return Err(EstimatorError::InvalidParameter("min_leaf must be >= 1".into()));
    }
    if profiles.len() < 2 * min_leaf {
        return Err(EstimatorError::InsufficientData {
            n: profiles.len(),
            width: 2 * min_leaf,
        });
    }
    let y = targets
        .iter()
        .map(|&t| target_kind.to_log(t))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut b = Builder {
        profiles,
        y: &y,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    b.grow((0..profiles.len()).collect(), 0);
    Ok(RegressionTree {
        nodes: b.nodes,
        max_depth,
        min_leaf,
        target_kind,
    })
}

impl RegressionTree {
    pub fn leaf_for(&self, p: &PatientProfile) -> &Leaf {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(l) => return l,
                Node::Split { rule, left, right } => {
                    id = if rule.goes_left(p) { *left } else { *right };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf mean in ln-target space.
    pub fn predict_log(&self, p: &PatientProfile) -> f64 {
        self.leaf_for(p).mean
    }

    pub fn predict(&self, p: &PatientProfile) -> f64 {
        self.target_kind.from_log(self.predict_log(p))
    }

    /// Lognormal draw around the leaf mean with the leaf's spread.
    pub fn sample(&self, p: &PatientProfile, rng: &mut SimRng) -> f64 {
        let leaf = self.leaf_for(p);
        let z: f64 = StandardNormal.sample(rng);
        self.target_kind.from_log(leaf.mean + leaf.sd * z)
    }
}
