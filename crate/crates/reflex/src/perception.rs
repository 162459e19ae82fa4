//! Point-cloud containers, exact KD-tree nearest-neighbor queries, and
//! frame-differencing classification of dynamic points.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::kinematics::{FkFrames, RobotModel, SurfacePoint};
use crate::Vector7;

/// Ordered set of world-frame 3D points with a tick stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    pub stamp: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, stamp: u64) -> Self {
        debug_assert!(points.iter().all(|p| p.coords.iter().all(|c| c.is_finite())));
        PointCloud { points, stamp }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Debug dump: one `x y z` triple per line, meters.
    pub fn write_xyz(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Balanced 3-d tree over a point-cloud snapshot. Queries are exact: the
/// returned neighbor always equals the exhaustive-scan minimum.
pub struct KdTree {
    points: Vec<Point3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

pub fn build_tree(cloud: &PointCloud) -> Result<KdTree> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot build a KD-tree from an empty cloud"));
    }
    Ok(KdTree::new(cloud.points().to_vec()))
}

impl KdTree {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        assert!(!points.is_empty());
        let mut indices: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build(&points, &mut indices, &mut nodes);
        KdTree {
            points,
            nodes,
            root,
        }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    fn build(points: &[Point3<f64>], indices: &mut [u32], nodes: &mut Vec<Node>) -> i32 {
        if indices.is_empty() {
            return -1;
        }
        // Split on the axis with the largest spread.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in indices.iter() {
            let p = &points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| {
            (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap()
        })
        .unwrap();
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
        });
        let point = indices[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis: axis as u8,
            left: -1,
            right: -1,
        });
        let (left_ix, rest) = indices.split_at_mut(mid);
        let right_ix = &mut rest[1..];
        let left = Self::build(points, left_ix, nodes);
        let right = Self::build(points, right_ix, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        slot as i32
    }

    /// Exact nearest neighbor: (point index, distance).
    pub fn nearest(&self, query: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best, f64::NEG_INFINITY);
        (best.0, best.1.sqrt())
    }

    /// Exact k nearest neighbors, closest first: (point index, distance).
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search_knn(self.root, query, k, &mut heap);
        heap.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn search_knn(
        &self,
        node: i32,
        query: &Point3<f64>,
        k: usize,
        found: &mut Vec<(f64, usize)>,
    ) {
        if node < 0 {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (query - p).norm_squared();
        let worst = found.last().map_or(f64::INFINITY, |w| w.0);
        if found.len() < k || d2 < worst {
            let pos = found.partition_point(|w| w.0 <= d2);
            found.insert(pos, (d2, n.point as usize));
            found.truncate(k);
        }
        let axis = n.axis as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search_knn(near, query, k, found);
        let worst = found.last().map_or(f64::INFINITY, |w| w.0);
        if found.len() < k || delta * delta < worst {
            self.search_knn(far, query, k, found);
        }
    }

    /// Exact decision: is there any point within distance `tau` of `query`?
    /// Aborts as soon as one is found.
    pub fn has_neighbor_within(&self, query: &Point3<f64>, tau: f64) -> bool {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best, tau * tau);
        best.1 <= tau * tau
    }

    fn search(
        &self,
        node: i32,
        query: &Point3<f64>,
        best: &mut (usize, f64),
        stop_at_sq: f64,
    ) {
        if node < 0 || best.1 <= stop_at_sq {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (query - p).norm_squared();
        if d2 < best.1 {
            *best = (n.point as usize, d2);
        }
        let axis = n.axis as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, query, best, stop_at_sq);
        if delta * delta < best.1 {
            self.search(far, query, best, stop_at_sq);
        }
    }
}

/// Points of the current frame classified as moving, with provenance
/// indices into the source cloud.
#[derive(Clone, Debug, Default)]
pub struct DynamicPointSet {
    pub points: Vec<Point3<f64>>,
    pub indices: Vec<usize>,
}

impl DynamicPointSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Points of `curr` whose nearest neighbor in `prev` is farther than `tau_dyn`.
pub fn extract_dynamic_points(
    prev: &PointCloud,
    curr: &PointCloud,
    tau_dyn: f64,
) -> Result<DynamicPointSet> {
    if prev.is_empty() || curr.is_empty() {
        return Err(Error::invalid("dynamic extraction needs non-empty clouds"));
    }
    if tau_dyn <= 0.0 {
        return Err(Error::invalid("tau_dyn must be positive"));
    }
    let tree = build_tree(prev)?;
    Ok(extract_dynamic_with_tree(&tree, curr, tau_dyn))
}

/// Same classification with a prebuilt tree of the previous frame.
pub fn extract_dynamic_with_tree(
    prev_tree: &KdTree,
    curr: &PointCloud,
    tau_dyn: f64,
) -> DynamicPointSet {
    // Identical clouds classify nothing as dynamic; skip the queries.
    if prev_tree.points() == curr.points() {
        return DynamicPointSet::default();
    }
    let mut set = DynamicPointSet::default();
    for (i, p) in curr.points().iter().enumerate() {
        if !prev_tree.has_neighbor_within(p, tau_dyn) {
            set.points.push(*p);
            set.indices.push(i);
        }
    }
    set
}

/// Over all dynamic points, the one closest to the robot sphere surface,
/// together with the matching surface point and the separation distance.
pub fn closest_dynamic_to_robot(
    dynamic: &DynamicPointSet,
    model: &RobotModel,
    q: &Vector7,
) -> Result<Option<(Point3<f64>, SurfacePoint, f64)>> {
    let frames = model.forward_kinematics(q)?;
    Ok(closest_dynamic_to_robot_at(dynamic, model, &frames))
}

pub fn closest_dynamic_to_robot_at(
    dynamic: &DynamicPointSet,
    model: &RobotModel,
    frames: &FkFrames,
) -> Option<(Point3<f64>, SurfacePoint, f64)> {
    let mut best: Option<(Point3<f64>, SurfacePoint, f64)> = None;
    for p in &dynamic.points {
        let sp = model.closest_surface_point_at(frames, p);
        let d = (p - sp.position).norm();
        if best.as_ref().map_or(true, |(_, _, bd)| d < *bd) {
            best = Some((*p, sp, d));
        }
    }
    best
}
