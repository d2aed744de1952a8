//! Clinical pathways: first-order transition matrices, trajectory encodings,
//! k-means pathway clusters and attribute-based cluster assignment.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{PatientProfile, Trajectory};
use crate::estimators::features::{Feature, FeatureSpec};
use crate::rng::{self, SimRng};
use crate::synthehr::{ClassMatrix, DISCHARGE, MAX_STEPS};

pub const ENTRY: &str = "ENTRY";
pub const LLOYD_MAX_ITER: usize = 300;
pub const LLOYD_TOLERANCE: f64 = 1e-9;
/// Clusters smaller than this simulate with the global matrix.
pub const MIN_CLUSTER_SIZE: usize = 20;
/// Weight of the stay-count coordinate in the trajectory encoding.
pub const LENGTH_WEIGHT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathwayError {
    #[error("unknown department {0:?}")]
    UnknownDepartment(String),
    #[error("{n} trajectories cannot form {k} clusters")]
    TooFewTrajectories { n: usize, k: usize },
    #[error("row {0:?} was never observed")]
    UnobservedRow(String),
    #[error("{trajectories} trajectories but {profiles} profiles")]
    LengthMismatch { trajectories: usize, profiles: usize },
}

/// Row-stochastic matrix over `departments ∪ {ENTRY, DISCHARGE}`.
///
/// State `i < n` is department `i`, state `n` is ENTRY and `n + 1` is
/// DISCHARGE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub departments: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub probs: Vec<Vec<f64>>,
    pub observed: Vec<bool>,
}

fn department_index(departments: &[String]) -> BTreeMap<&str, usize> {
    departments
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect()
}

/// Visited states of one trajectory, bracketed by ENTRY and DISCHARGE.
fn state_path(
    t: &Trajectory,
    index: &BTreeMap<&str, usize>,
) -> Result<Vec<usize>, PathwayError> {
    let n = index.len();
    let mut path = Vec::with_capacity(t.len() + 2);
    path.push(n);
    for d in t.departments() {
        path.push(
            *index
                .get(d)
                .ok_or_else(|| PathwayError::UnknownDepartment(d.to_string()))?,
        );
    }
    path.push(n + 1);
    Ok(path)
}

impl TransitionMatrix {
    pub fn n_states(&self) -> usize {
        self.departments.len() + 2
    }

    pub fn entry(&self) -> usize {
        self.departments.len()
    }

    pub fn discharge(&self) -> usize {
        self.departments.len() + 1
    }

    pub fn state_name(&self, s: usize) -> &str {
        match s.cmp(&self.departments.len()) {
            std::cmp::Ordering::Less => &self.departments[s],
            std::cmp::Ordering::Equal => ENTRY,
            std::cmp::Ordering::Greater => DISCHARGE,
        }
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        match name {
            ENTRY => Some(self.entry()),
            DISCHARGE => Some(self.discharge()),
            _ => self.departments.iter().position(|d| d == name),
        }
    }

    /// Normalizes raw counts; DISCHARGE is made absorbing.
    pub fn from_counts(departments: Vec<String>, mut counts: Vec<Vec<u64>>) -> Self {
        let s = departments.len() + 2;
        let discharge = s - 1;
        counts[discharge] = vec![0; s];
        let mut probs = vec![vec![0.0; s]; s];
        let mut observed = vec![false; s];
        for i in 0..s {
            let total: u64 = counts[i].iter().sum();
            if total > 0 {
                observed[i] = true;
                for j in 0..s {
                    probs[i][j] = counts[i][j] as f64 / total as f64;
                }
            }
        }
        probs[discharge][discharge] = 1.0;
        observed[discharge] = true;
        TransitionMatrix {
            departments,
            counts,
            probs,
            observed,
        }
    }

    /// Matrix of a generator class: ENTRY always leads to `entry`.
    pub fn from_class_matrix(
        departments: &[String],
        entry: &str,
        matrix: &ClassMatrix,
    ) -> Result<Self, PathwayError> {
        let index = department_index(departments);
        let n = departments.len();
        let s = n + 2;
        let mut probs = vec![vec![0.0; s]; s];
        let mut observed = vec![false; s];
        let to_state = |name: &str| -> Result<usize, PathwayError> {
            if name == DISCHARGE {
                Ok(n + 1)
            } else {
                index
                    .get(name)
                    .copied()
                    .ok_or_else(|| PathwayError::UnknownDepartment(name.to_string()))
            }
        };
        probs[n][to_state(entry)?] = 1.0;
        observed[n] = true;
        for (from, row) in matrix {
            let i = to_state(from)?;
            for (to, &p) in row {
                probs[i][to_state(to)?] = p;
            }
            observed[i] = true;
        }
        probs[n + 1] = vec![0.0; s];
        probs[n + 1][n + 1] = 1.0;
        observed[n + 1] = true;
        Ok(TransitionMatrix {
            departments: departments.to_vec(),
            counts: vec![vec![0; s]; s],
            probs,
            observed,
        })
    }

    /// Categorical draw of the state after `from`.
    pub fn next_state(&self, from: usize, rng: &mut SimRng) -> Result<usize, PathwayError> {
        if !self.observed[from] {
            return Err(PathwayError::UnobservedRow(self.state_name(from).to_string()));
        }
        Ok(draw_row(&self.probs[from], rng))
    }

    pub fn total_transitions(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn draw_row(row: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

pub fn transition_counts(
    trajectories: &[Trajectory],
    departments: &[String],
) -> Result<Vec<Vec<u64>>, PathwayError> {
    let index = department_index(departments);
    let s = departments.len() + 2;
    let mut counts = vec![vec![0u64; s]; s];
    for t in trajectories {
        let path = state_path(t, &index)?;
        for w in path.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    Ok(counts)
}

pub fn fit_transition_matrix(
    trajectories: &[Trajectory],
    departments: &[String],
) -> Result<TransitionMatrix, PathwayError> {
    Ok(TransitionMatrix::from_counts(
        departments.to_vec(),
        transition_counts(trajectories, departments)?,
    ))
}

/// Total-variation distance between two rows.
pub fn row_tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Unweighted mean row TV over department rows observed in both matrices.
pub fn mean_row_tv(a: &TransitionMatrix, b: &TransitionMatrix) -> f64 {
    let rows: Vec<usize> = (0..a.departments.len())
        .filter(|&i| a.observed[i] && b.observed[i])
        .collect();
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter()
        .map(|&i| row_tv(&a.probs[i], &b.probs[i]))
        .sum::<f64>()
        / rows.len() as f64
}

/// Row TV averaged with the visit counts of `reference` as weights
/// (ENTRY and department rows), or those of `other` when `reference` carries
/// no counts (a generator matrix). A row unobserved in the unweighted matrix
/// counts as maximally distant.
pub fn visit_weighted_tv(reference: &TransitionMatrix, other: &TransitionMatrix) -> f64 {
    if reference.total_transitions() == 0 && other.total_transitions() > 0 {
        return visit_weighted_tv(other, reference);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=reference.departments.len() {
        let w: u64 = reference.counts[i].iter().sum();
        if w == 0 {
            continue;
        }
        let tv = if other.observed[i] {
            row_tv(&reference.probs[i], &other.probs[i])
        } else {
            1.0
        };
        num += w as f64 * tv;
        den += w as f64;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// One simulated pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    /// Department indices in visiting order.
    pub departments: Vec<usize>,
    /// The step cap ended the walk before DISCHARGE.
    pub capped: bool,
}

/// State after `state`. Rows unobserved in `matrix` are taken from
/// `fallback`; a row unobserved in both discharges.
pub fn step(
    matrix: &TransitionMatrix,
    fallback: Option<&TransitionMatrix>,
    state: usize,
    rng: &mut SimRng,
) -> usize {
    let row = if matrix.observed[state] {
        Some(&matrix.probs[state])
    } else {
        fallback.filter(|f| f.observed[state]).map(|f| &f.probs[state])
    };
    match row {
        Some(r) => draw_row(r, rng),
        None => matrix.discharge(),
    }
}

/// Walk from ENTRY until DISCHARGE or `MAX_STEPS` stays.
pub fn walk(matrix: &TransitionMatrix, fallback: Option<&TransitionMatrix>, rng: &mut SimRng) -> Walk {
    let discharge = matrix.discharge();
    let mut state = matrix.entry();
    let mut departments = Vec::new();
    loop {
        let next = step(matrix, fallback, state, rng);
        if next == discharge {
            return Walk {
                departments,
                capped: false,
            };
        }
        if departments.len() >= MAX_STEPS {
            return Walk {
                departments,
                capped: true,
            };
        }
        departments.push(next);
        state = next;
    }
}

/// Transition block of `(n + 1)^2` entries (from ENTRY or a department, to a
/// department or DISCHARGE) normalized by the number of transitions
/// `len + 1`, followed by `LENGTH_WEIGHT * len`.
pub fn encode(t: &Trajectory, departments: &[String]) -> Result<Vec<f64>, PathwayError> {
    let index = department_index(departments);
    encode_with(t, &index)
}

fn encode_with(t: &Trajectory, index: &BTreeMap<&str, usize>) -> Result<Vec<f64>, PathwayError> {
    let n = index.len();
    let width = n + 1;
    let path = state_path(t, index)?;
    let mut v = vec![0.0; width * width + 1];
    let norm = (path.len() - 1) as f64;
    for w in path.windows(2) {
        // ENTRY is the last "from" row, DISCHARGE the last "to" column
        let to = w[1].min(n);
        v[w[0] * width + to] += 1.0 / norm;
    }
    v[width * width] = LENGTH_WEIGHT * t.len() as f64;
    Ok(v)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayCluster {
    pub centroid: Vec<f64>,
    pub matrix: TransitionMatrix,
    pub members: usize,
    /// Mean encoded profile of the members.
    pub attribute_centroid: Vec<f64>,
    /// Too small to simulate with its own matrix.
    pub uses_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayClusters {
    pub k: usize,
    pub departments: Vec<String>,
    pub clusters: Vec<PathwayCluster>,
    pub global: TransitionMatrix,
    pub attribute_spec: FeatureSpec,
    /// Cluster of each training trajectory, in input order.
    pub labels: Vec<usize>,
    pub iterations: usize,
}

/// Distinct encodings with multiplicities, plus the map from each input to
/// its distinct point.
struct Points {
    x: Vec<Vec<f64>>,
    w: Vec<f64>,
    of: Vec<usize>,
}

fn dedup(enc: Vec<Vec<f64>>) -> Points {
    let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut x = Vec::new();
    let mut w = Vec::new();
    let mut of = Vec::with_capacity(enc.len());
    for e in enc {
        let key: Vec<u64> = e.iter().map(|v| v.to_bits()).collect();
        let id = *seen.entry(key).or_insert_with(|| {
            x.push(e);
            w.push(0.0);
            x.len() - 1
        });
        w[id] += 1.0;
        of.push(id);
    }
    Points { x, w, of }
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(pts: &Points, k: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let total: f64 = pts.w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut first = pts.x.len() - 1;
    for (i, w) in pts.w.iter().enumerate() {
        if u < *w {
            first = i;
            break;
        }
        u -= w;
    }
    let mut centroids = vec![pts.x[first].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = pts
            .x
            .iter()
            .zip(&pts.w)
            .map(|(p, w)| w * nearest(p, &centroids).1)
            .collect();
        let sum: f64 = d.iter().sum();
        if sum <= 0.0 {
            // fewer distinct points than clusters
            centroids.push(pts.x[0].clone());
            continue;
        }
        let mut u = rng.gen::<f64>() * sum;
        let mut pick = d.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if u < *di {
                pick = i;
                break;
            }
            u -= di;
        }
        centroids.push(pts.x[pick].clone());
    }
    centroids
}

/// Weighted Lloyd iterations; returns (labels per distinct point, iterations).
fn lloyd(pts: &Points, centroids: &mut [Vec<f64>]) -> (Vec<usize>, usize) {
    let k = centroids.len();
    let dim = pts.x[0].len();
    let mut labels = vec![0; pts.x.len()];
    let mut iterations = 0;
    while iterations < LLOYD_MAX_ITER {
        iterations += 1;
        for (i, p) in pts.x.iter().enumerate() {
            labels[i] = nearest(p, centroids).0;
        }
        // repair empty clusters by stealing the point farthest from its centroid
        loop {
            let mut sizes = vec![0usize; k];
            for &l in &labels {
                sizes[l] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let victim = (0..pts.x.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&pts.x[a], &centroids[labels[a]])
                        .total_cmp(&sq_dist(&pts.x[b], &centroids[labels[b]]))
                        .then(b.cmp(&a))
                });
            match victim {
                Some(v) => {
                    labels[v] = empty;
                    centroids[empty] = pts.x[v].clone();
                }
                None => break,
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut weights = vec![0.0; k];
        for (i, p) in pts.x.iter().enumerate() {
            weights[labels[i]] += pts.w[i];
            for (s, v) in sums[labels[i]].iter_mut().zip(p) {
                *s += pts.w[i] * v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if weights[c] == 0.0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / weights[c]).collect();
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < LLOYD_TOLERANCE {
            break;
        }
    }
    (labels, iterations)
}

/// k-means pathway clusters. `profiles[i]` belongs to `trajectories[i]`.
pub fn cluster(
    trajectories: &[Trajectory],
    profiles: &[PatientProfile],
    departments: &[String],
    k: usize,
    seed: u64,
) -> Result<PathwayClusters, PathwayError> {
    if trajectories.len() != profiles.len() {
        return Err(PathwayError::LengthMismatch {
            trajectories: trajectories.len(),
            profiles: profiles.len(),
        });
    }
    if k == 0 || trajectories.len() < k {
        return Err(PathwayError::TooFewTrajectories {
            n: trajectories.len(),
            k,
        });
    }
    let index = department_index(departments);
    let enc = trajectories
        .iter()
        .map(|t| encode_with(t, &index))
        .collect::<Result<Vec<_>, _>>()?;
    let pts = dedup(enc);
    let mut r = rng::stream(seed);
    let mut centroids = kmeans_pp(&pts, k, &mut r);
    let (point_labels, iterations) = lloyd(&pts, &mut centroids);
    let labels: Vec<usize> = pts.of.iter().map(|&p| point_labels[p]).collect();

    let global = fit_transition_matrix(trajectories, departments)?;
    let attribute_spec = FeatureSpec::fit(profiles, &Feature::ALL, false);
    let width = attribute_spec.width();
    let mut clusters = Vec::with_capacity(k);
    for (c, centroid) in centroids.into_iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let member_trajs: Vec<Trajectory> =
            members.iter().map(|&i| trajectories[i].clone()).collect();
        let mut attribute_centroid = vec![0.0; width];
        for &i in &members {
            for (a, v) in attribute_centroid
                .iter_mut()
                .zip(attribute_spec.encode(&profiles[i]).row)
            {
                *a += v;
            }
        }
        if !members.is_empty() {
            for a in &mut attribute_centroid {
                *a /= members.len() as f64;
            }
        }
        clusters.push(PathwayCluster {
            centroid,
            matrix: fit_transition_matrix(&member_trajs, departments)?,
            members: members.len(),
            attribute_centroid,
            uses_fallback: members.len() < MIN_CLUSTER_SIZE,
        });
    }
    Ok(PathwayClusters {
        k,
        departments: departments.to_vec(),
        clusters,
        global,
        attribute_spec,
        labels,
        iterations,
    })
}

impl PathwayClusters {
    /// Nearest non-empty cluster by attribute centroid; ties go to the lowest
    /// index.
    pub fn assign(&self, profile: &PatientProfile) -> usize {
        let x = self.attribute_spec.encode(profile).row;
        let mut best = (0, f64::INFINITY);
        for (c, cl) in self.clusters.iter().enumerate() {
            if cl.members == 0 {
                continue;
            }
            let d = sq_dist(&x, &cl.attribute_centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    /// Matrix used to simulate members of cluster `c`.
    pub fn simulation_matrix(&self, c: usize) -> &TransitionMatrix {
        let cl = &self.clusters[c];
        if cl.uses_fallback {
            &self.global
        } else {
            &cl.matrix
        }
    }

    /// Mean silhouette of the training labels in encoding space; 0 for k = 1.
    pub fn silhouette(&self, trajectories: &[Trajectory]) -> Result<f64, PathwayError> {
        let index = department_index(&self.departments);
        let enc = trajectories
            .iter()
            .map(|t| encode_with(t, &index))
            .collect::<Result<Vec<_>, _>>()?;
        let pts = dedup(enc);
        let mut point_label = vec![0; pts.x.len()];
        for (i, &p) in pts.of.iter().enumerate() {
            point_label[p] = self.labels[i];
        }
        Ok(weighted_silhouette(&pts.x, &pts.w, &point_label, self.k))
    }
}

/// Mean silhouette over points with multiplicities `w`. Members of singleton
/// clusters score 0.
pub fn weighted_silhouette(x: &[Vec<f64>], w: &[f64], labels: &[usize], k: usize) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let mut size = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        size[l] += w[i];
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    for i in 0..x.len() {
        let mut dsum = vec![0.0; k];
        for j in 0..x.len() {
            if i != j {
                dsum[labels[j]] += w[j] * sq_dist(&x[i], &x[j]).sqrt();
            }
        }
        let own = labels[i];
        let s = if size[own] <= 1.0 {
            0.0
        } else {
            let a = dsum[own] / (size[own] - 1.0);
            let b = (0..k)
                .filter(|&c| c != own && size[c] > 0.0)
                .map(|c| dsum[c] / size[c])
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() || a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        };
        total += w[i] * s;
        weight += w[i];
    }
    total / weight
}

/// Fraction of items on the diagonal of the best one-to-one matching between
/// cluster labels and true classes.
pub fn pairing_purity(labels: &[usize], classes: &[usize]) -> f64 {
    assert_eq!(labels.len(), classes.len());
    if labels.is_empty() {
        return 1.0;
    }
    let k = labels.iter().max().unwrap() + 1;
    let c = classes.iter().max().unwrap() + 1;
    let m = k.max(c);
    let mut table = vec![vec![0usize; m]; m];
    for (&l, &t) in labels.iter().zip(classes) {
        table[l][t] += 1;
    }
    fn best(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        let mut out = 0;
        for col in 0..table.len() {
            if !used[col] {
                used[col] = true;
                out = out.max(table[row][col] + best(table, row + 1, used));
                used[col] = false;
            }
        }
        out
    }
    best(&table, 0, &mut vec![false; m]) as f64 / labels.len() as f64
}

/// Pathway source consumed by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathwayModel {
    Global(TransitionMatrix),
    Clusters(PathwayClusters),
}

impl PathwayModel {
    pub fn departments(&self) -> &[String] {
        match self {
            PathwayModel::Global(m) => &m.departments,
            PathwayModel::Clusters(c) => &c.departments,
        }
    }

    /// Matrix that routes `profile`, with the fallback for its unobserved
    /// rows.
    pub fn matrices(&self, profile: &PatientProfile) -> (&TransitionMatrix, Option<&TransitionMatrix>) {
        match self {
            PathwayModel::Global(m) => (m, None),
            PathwayModel::Clusters(c) => (c.simulation_matrix(c.assign(profile)), Some(&c.global)),
        }
    }

    pub fn walk(&self, profile: &PatientProfile, rng: &mut SimRng) -> Walk {
        let (m, fallback) = self.matrices(profile);
        walk(m, fallback, rng)
    }
}

/// Total mass of an encoding's transition block.
pub fn block_mass(encoding: &[f64]) -> f64 {
    encoding[..encoding.len() - 1].iter().sum()
}
