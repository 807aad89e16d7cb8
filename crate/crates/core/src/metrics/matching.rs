//! One-to-one, class-aware nucleus matching within a distance radius.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::assignment::solve_min_cost;
use super::MetricsError;
use crate::annotations::Point;
use crate::raster::NucleiSet;
use crate::taxonomy::{ClassIndex, Taxonomy};

/// Default matching radius in pixels.
pub const DEFAULT_RADIUS: f64 = 15.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Maximum number of pairs, then minimum total distance.
    #[default]
    Optimal,
    /// Repeatedly take the globally closest admissible pair.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub distance: f64,
}

/// Matching of one class. Ordinals index the full prediction / ground-truth
/// sets, not the per-class subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub class_index: ClassIndex,
    /// Sorted by prediction ordinal.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_pred.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_gt.len()
    }
}

struct Edge {
    pred: usize,
    gt: usize,
    distance: f64,
}

/// All `(pred, gt)` pairs (local indices) within `radius`, sorted by `(pred, gt)`.
fn admissible_edges(pred: &[Point], gt: &[Point], radius: f64) -> Vec<Edge> {
    let cell = |p: &Point| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (g, p) in gt.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(g);
    }
    let mut edges = Vec::new();
    let mut near = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        let (cx, cy) = cell(p);
        near.clear();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(list) = grid.get(&(cx + dx, cy + dy)) {
                    near.extend_from_slice(list);
                }
            }
        }
        near.sort_unstable();
        for &g in &near {
            let distance = p.distance(&gt[g]);
            if distance <= radius {
                edges.push(Edge {
                    pred: pi,
                    gt: g,
                    distance,
                });
            }
        }
    }
    edges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Optimal matching: the admissible bipartite graph is split into connected
/// components and each is solved as an assignment problem whose costs
/// (`distance - bonus` for admissible pairs, 0 otherwise) rank pair count
/// above total distance.
fn optimal(n_pred: usize, n_gt: usize, edges: &[Edge], radius: f64) -> Vec<(usize, usize)> {
    let mut parent: Vec<usize> = (0..n_pred + n_gt).collect();
    for e in edges {
        let a = find(&mut parent, e.pred);
        let b = find(&mut parent, n_pred + e.gt);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut components: HashMap<usize, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for p in 0..n_pred {
        let root = find(&mut parent, p);
        components.entry(root).or_default().0.push(p);
    }
    for g in 0..n_gt {
        let root = find(&mut parent, n_pred + g);
        components.entry(root).or_default().1.push(g);
    }
    let mut dist: HashMap<(usize, usize), f64> = HashMap::with_capacity(edges.len());
    for e in edges {
        dist.insert((e.pred, e.gt), e.distance);
    }

    let mut roots: Vec<usize> = components.keys().copied().collect();
    roots.sort_unstable();
    let mut pairs = Vec::new();
    for root in roots {
        let (preds, gts) = &components[&root];
        if preds.is_empty() || gts.is_empty() {
            continue;
        }
        // any extra pair is worth more than the largest possible distance sum
        let bonus = radius * (preds.len().min(gts.len()) as f64 + 1.0);
        let transposed = preds.len() > gts.len();
        let (rows, cols) = if transposed {
            (gts, preds)
        } else {
            (preds, gts)
        };
        let mut cost = vec![0.0; rows.len() * cols.len()];
        for (r, &ri) in rows.iter().enumerate() {
            for (c, &ci) in cols.iter().enumerate() {
                let key = if transposed { (ci, ri) } else { (ri, ci) };
                if let Some(d) = dist.get(&key) {
                    cost[r * cols.len() + c] = d - bonus;
                }
            }
        }
        let assignment = solve_min_cost(&cost, rows.len(), cols.len());
        for (r, &c) in assignment.iter().enumerate() {
            let key = if transposed {
                (cols[c], rows[r])
            } else {
                (rows[r], cols[c])
            };
            if dist.contains_key(&key) {
                pairs.push(key);
            }
        }
    }
    pairs
}

fn greedy(n_pred: usize, n_gt: usize, edges: &[Edge]) -> Vec<(usize, usize)> {
    let mut order: Vec<&Edge> = edges.iter().collect();
    order.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut pairs = Vec::new();
    for e in order {
        if !pred_used[e.pred] && !gt_used[e.gt] {
            pred_used[e.pred] = true;
            gt_used[e.gt] = true;
            pairs.push((e.pred, e.gt));
        }
    }
    pairs
}

/// Matches predictions to ground truth separately for every taxonomy class.
///
/// Returns one result per class in taxonomy order. Nuclei whose class is not
/// in the taxonomy are ignored.
pub fn match_nuclei(
    pred: &NucleiSet,
    gt: &NucleiSet,
    taxonomy: &Taxonomy,
    radius: f64,
    strategy: MatchStrategy,
) -> Result<Vec<MatchResult>, MetricsError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MetricsError::NonPositiveRadius(radius));
    }
    let results = taxonomy
        .indices()
        .map(|class| {
            let pred_ids: Vec<usize> = (0..pred.nuclei.len())
                .filter(|&i| pred.nuclei[i].class_index == class)
                .collect();
            let gt_ids: Vec<usize> = (0..gt.nuclei.len())
                .filter(|&i| gt.nuclei[i].class_index == class)
                .collect();
            let pred_pts: Vec<Point> = pred_ids.iter().map(|&i| pred.nuclei[i].centroid).collect();
            let gt_pts: Vec<Point> = gt_ids.iter().map(|&i| gt.nuclei[i].centroid).collect();
            let edges = admissible_edges(&pred_pts, &gt_pts, radius);
            let local = match strategy {
                MatchStrategy::Optimal => optimal(pred_pts.len(), gt_pts.len(), &edges, radius),
                MatchStrategy::Greedy => greedy(pred_pts.len(), gt_pts.len(), &edges),
            };

            let mut pred_used = vec![false; pred_pts.len()];
            let mut gt_used = vec![false; gt_pts.len()];
            let mut pairs: Vec<MatchedPair> = local
                .into_iter()
                .map(|(p, g)| {
                    pred_used[p] = true;
                    gt_used[g] = true;
                    MatchedPair {
                        pred: pred_ids[p],
                        gt: gt_ids[g],
                        distance: pred_pts[p].distance(&gt_pts[g]),
                    }
                })
                .collect();
            pairs.sort_by_key(|p| p.pred);
            MatchResult {
                class_index: class,
                pairs,
                unmatched_pred: (0..pred_ids.len())
                    .filter(|&p| !pred_used[p])
                    .map(|p| pred_ids[p])
                    .collect(),
                unmatched_gt: (0..gt_ids.len())
                    .filter(|&g| !gt_used[g])
                    .map(|g| gt_ids[g])
                    .collect(),
            }
        })
        .collect();
    Ok(results)
}
