use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Detection, RangeDopplerMap};

/// Density clustering in (range bin, Doppler bin) space with Euclidean
/// distance. `min_points` counts the point itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_points: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: 3.0,
            min_points: 3,
        }
    }
}

/// Cluster labels aligned with the input detections; `None` is noise.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clusters {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl Clusters {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, l)| **l == Some(cluster))
            .map(|(i, _)| i)
    }
}

/// Points are visited in lexicographic (range, Doppler) order, so labels do
/// not depend on the input order. A border point reachable from several
/// clusters joins the one that was seeded first.
pub fn dbscan_cluster(detections: &[Detection], cfg: &DbscanConfig) -> Clusters {
    let n = detections.len();
    let pts: Vec<(i64, i64)> = detections
        .iter()
        .map(|d| (d.range_bin as i64, d.doppler_bin as i64))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (pts[i], i));

    let reach = cfg.eps.max(0.0).floor() as i64;
    let eps2 = cfg.eps * cfg.eps;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for &i in &order {
        grid.entry(pts[i]).or_default().push(i);
    }
    let neighbours = |i: usize| -> Vec<usize> {
        let (r, d) = pts[i];
        let mut out = Vec::new();
        for dr in -reach..=reach {
            for dd in -reach..=reach {
                if ((dr * dr + dd * dd) as f64) > eps2 {
                    continue;
                }
                if let Some(v) = grid.get(&(r + dr, d + dd)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_by_key(|&j| (pts[j], j));
        out
    };

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut n_clusters = 0;
    for &seed in &order {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let nb = neighbours(seed);
        if nb.len() < cfg.min_points {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        labels[seed] = Some(id);
        let mut queue: VecDeque<usize> = nb.into();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nbj = neighbours(j);
            if nbj.len() >= cfg.min_points {
                queue.extend(nbj);
            }
        }
    }
    Clusters { labels, n_clusters }
}

/// Peak grouping: drops clusters whose strongest cell is not a local
/// maximum of the map in its 3×3 neighbourhood (both axes circular, as the
/// DFT is). Rectangular-window leakage forms ridges through a target's peak
/// that CFAR passes; a ridge segment always rises towards the true peak, so
/// its strongest cell is never a local maximum. Surviving clusters are
/// renumbered in their original order.
pub fn retain_peak_clusters(clusters: &Clusters, detections: &[Detection], map: &RangeDopplerMap) -> Clusters {
    let (nr, nd) = (map.n_range, map.n_doppler);
    let mut best: Vec<Option<usize>> = vec![None; clusters.n_clusters];
    for (i, l) in clusters.labels.iter().enumerate() {
        if let Some(c) = *l {
            let better = match best[c] {
                None => true,
                Some(j) => {
                    let (a, b) = (&detections[i], &detections[j]);
                    a.power > b.power
                        || (a.power == b.power
                            && (a.range_bin, a.doppler_bin) < (b.range_bin, b.doppler_bin))
                }
            };
            if better {
                best[c] = Some(i);
            }
        }
    }
    let mut remap = vec![None; clusters.n_clusters];
    let mut n = 0;
    for (c, rep) in best.iter().enumerate() {
        let Some(i) = *rep else { continue };
        let (r, d) = (detections[i].range_bin, detections[i].doppler_bin);
        let v = map.get(r, d);
        let is_peak = (0..3).all(|dr| {
            (0..3).all(|dd| map.get((r + nr + dr - 1) % nr, (d + nd + dd - 1) % nd) <= v)
        });
        if is_peak {
            remap[c] = Some(n);
            n += 1;
        }
    }
    Clusters {
        labels: clusters.labels.iter().map(|l| l.and_then(|c| remap[c])).collect(),
        n_clusters: n,
    }
}
