//! Exact spatial neighborhood search over 3-d point sets.
//!
//! Brute-force k-nearest-neighbor and ball queries plus farthest-point
//! sampling, all fully deterministic: distances compare in `f64` and every
//! tie breaks on the lower point index. Centers are never members of their
//! own neighborhoods.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result};

/// A fixed set of 3-d points, optionally carrying a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain(
                "point cloud must hold at least one point".into(),
            ));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain(format!("non-finite coordinate at point {i}")));
        }
        Ok(PointCloud {
            points,
            label: None,
        })
    }

    pub fn with_label(points: Vec<[f32; 3]>, label: usize) -> Result<Self> {
        let mut c = Self::new(points)?;
        c.label = Some(label);
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared Euclidean distance between two points, computed in `f64`.
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        let a = self.points[i];
        let b = self.points[j];
        let dx = a[0] as f64 - b[0] as f64;
        let dy = a[1] as f64 - b[1] as f64;
        let dz = a[2] as f64 - b[2] as f64;
        dx * dx + dy * dy + dz * dz
    }
}

/// Which neighborhoods feed the two convolution branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborhoodMode {
    Ball,
    Knn,
    Tn,
    BallKnn,
    TnKnn,
    TnBall,
}

impl NeighborhoodMode {
    pub const ALL: [NeighborhoodMode; 6] = [
        NeighborhoodMode::Tn,
        NeighborhoodMode::Ball,
        NeighborhoodMode::Knn,
        NeighborhoodMode::BallKnn,
        NeighborhoodMode::TnKnn,
        NeighborhoodMode::TnBall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NeighborhoodMode::Ball => "ball",
            NeighborhoodMode::Knn => "knn",
            NeighborhoodMode::Tn => "tn",
            NeighborhoodMode::BallKnn => "ball+knn",
            NeighborhoodMode::TnKnn => "tn+knn",
            NeighborhoodMode::TnBall => "tn+ball",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown neighborhood mode '{s}'")))
    }

    /// The learned key branch participates.
    pub fn uses_tn(self) -> bool {
        matches!(
            self,
            NeighborhoodMode::Tn | NeighborhoodMode::TnKnn | NeighborhoodMode::TnBall
        )
    }

    /// Both branch slots are active.
    pub fn is_dual(self) -> bool {
        matches!(
            self,
            NeighborhoodMode::BallKnn | NeighborhoodMode::TnKnn | NeighborhoodMode::TnBall
        )
    }
}

impl std::fmt::Display for NeighborhoodMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-center neighbor assignments for one encoder layer: an ordered local
/// list and an ordered key list of `k` indices each for every center.
#[derive(Clone, Debug)]
pub struct NeighborhoodIndex {
    pub centers: Vec<usize>,
    pub local: Vec<Vec<usize>>,
    pub key: Vec<Vec<usize>>,
    pub mode: NeighborhoodMode,
}

/// Max-heap entry holding the current worst of the best-k candidates.
#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Finite distances by construction; larger (distance, index) = worse.
        self.d2
            .partial_cmp(&other.d2)
            .unwrap()
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keep the k best (distance, index) pairs from a candidate stream,
/// returned sorted ascending.
fn k_best(candidates: impl Iterator<Item = Candidate>, k: usize) -> Vec<Candidate> {
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for c in candidates {
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().unwrap() {
            heap.pop();
            heap.push(c);
        }
    }
    let mut best = heap.into_vec();
    best.sort_unstable();
    best
}

fn check_centers(cloud: &PointCloud, centers: &[usize]) -> Result<()> {
    for &c in centers {
        if c >= cloud.len() {
            return Err(Error::Index(format!(
                "center {} out of range for {} points",
                c,
                cloud.len()
            )));
        }
    }
    Ok(())
}

/// The k nearest points to each center, excluding the center itself,
/// sorted by (distance, index) ascending.
pub fn knn(cloud: &PointCloud, centers: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if k > n - 1 {
        return Err(Error::Capacity(format!(
            "knn wants {k} neighbors but only {} other points exist",
            n - 1
        )));
    }
    check_centers(cloud, centers)?;
    Ok(centers
        .iter()
        .map(|&c| {
            let stream = (0..n).filter(|&i| i != c).map(|i| Candidate {
                d2: cloud.dist2(c, i),
                idx: i,
            });
            k_best(stream, k).into_iter().map(|e| e.idx).collect()
        })
        .collect())
}

/// The k nearest in-radius points per center (center excluded), sorted as in
/// [`knn`]. Short lists pad by repeating the nearest qualifying index; when
/// nothing is in radius the globally nearest point fills every slot.
pub fn ball_query(
    cloud: &PointCloud,
    centers: &[usize],
    radius: f64,
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if radius <= 0.0 {
        return Err(Error::Domain(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    if k == 0 {
        return Err(Error::Domain("ball query needs k >= 1".into()));
    }
    let n = cloud.len();
    if n == 1 {
        return Err(Error::Capacity(
            "ball query on a single-point cloud has no candidates".into(),
        ));
    }
    check_centers(cloud, centers)?;
    let r2 = radius * radius;
    Ok(centers
        .iter()
        .map(|&c| {
            let in_radius = (0..n)
                .filter(|&i| i != c)
                .map(|i| Candidate {
                    d2: cloud.dist2(c, i),
                    idx: i,
                })
                .filter(|e| e.d2 <= r2);
            let best = k_best(in_radius, k);
            let mut list: Vec<usize> = best.iter().map(|e| e.idx).collect();
            let filler = match list.first() {
                Some(&nearest_in_radius) => nearest_in_radius,
                None => {
                    let all = (0..n).filter(|&i| i != c).map(|i| Candidate {
                        d2: cloud.dist2(c, i),
                        idx: i,
                    });
                    k_best(all, 1)[0].idx
                }
            };
            list.resize(k, filler);
            list
        })
        .collect())
}

/// Greedy farthest-point sampling: start at `start_index`, then repeatedly
/// pick the point maximizing its distance to the chosen set (lowest index on
/// ties). Deterministic given the start.
pub fn fps(cloud: &PointCloud, m: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::Capacity(format!("fps asked for {m} of {n} points")));
    }
    if start_index >= n {
        return Err(Error::Index(format!(
            "fps start {start_index} out of range for {n} points"
        )));
    }
    let mut picks = Vec::with_capacity(m);
    picks.push(start_index);
    let mut min_d2: Vec<f64> = (0..n).map(|i| cloud.dist2(i, start_index)).collect();
    while picks.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best.0 {
                best = (d, i);
            }
        }
        let next = best.1;
        picks.push(next);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = cloud.dist2(i, next);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(picks)
}
