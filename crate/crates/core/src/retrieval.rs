//! Most-similar training frame lookup.
//!
//! The descriptor backend runs an exact Euclidean nearest-neighbor query over
//! a K-D tree; ties resolve to the lowest frame id so the tree always agrees
//! with a linear scan. The pose oracle backend ranks training frames by
//! `‖Δp‖ + λ·Θ(ΔR)` and exists for evaluations without descriptors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::lie::{misalignment_angle, Pose};
use crate::scene::{Frame, FrameId};

const LEAF_SIZE: usize = 8;

/// Squared Euclidean distance accumulated in f64, in index order.
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    frame_id: FrameId,
    slot: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.frame_id.cmp(&other.frame_id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f32,
        left: usize,
        right: usize,
    },
}

/// Exact K-D tree over fixed-dimension descriptors.
#[derive(Debug, Clone)]
pub struct DescriptorIndex {
    dim: usize,
    entries: Vec<(FrameId, Vec<f32>)>,
    // Permutation of entry slots; leaves own contiguous ranges of it.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl DescriptorIndex {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(FrameId, Vec<f32>)] {
        &self.entries
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the axis of widest spread.
        let (mut best_dim, mut best_spread) = (0, -1.0f32);
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for &slot in &self.order[start..end] {
                let v = self.entries[slot].1[d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let entries = &self.entries;
        self.order[start..end]
            .sort_by(|&a, &b| entries[a].1[best_dim].total_cmp(&entries[b].1[best_dim]));
        let mid = start + (end - start) / 2;
        let value = self.entries[self.order[mid]].1[best_dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim: best_dim,
            value,
            left,
            right,
        };
        id
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        Ok(())
    }

    /// Nearest entry as `(frame_id, squared distance)`.
    pub fn nearest(&self, query: &[f32]) -> Result<(FrameId, f64)> {
        let top = self.nearest_k(query, 1)?;
        Ok(top[0])
    }

    /// The `k` nearest entries, closest first. Diagnostic only; the pipeline
    /// uses [`DescriptorIndex::nearest`].
    pub fn nearest_k(&self, query: &[f32], k: usize) -> Result<Vec<(FrameId, f64)>> {
        self.check_query(query)?;
        let k = k.min(self.entries.len());
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(0, query, k, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| (c.frame_id, c.dist)).collect())
    }

    fn search(&self, node: usize, query: &[f32], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &slot in &self.order[start..end] {
                    let (frame_id, ref v) = self.entries[slot];
                    let c = Candidate {
                        dist: squared_distance(query, v),
                        frame_id,
                        slot,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = f64::from(query[dim]) - f64::from(value);
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, heap);
                // Prune only on a strict excess so equal-distance entries with
                // a lower frame id are still visited.
                let bound = diff * diff;
                if heap.len() < k || bound <= heap.peek().unwrap().dist {
                    self.search(far, query, k, heap);
                }
            }
        }
    }
}

pub fn build_index(descriptors: Vec<(FrameId, Vec<f32>)>) -> Result<DescriptorIndex> {
    let dim = descriptors.first().ok_or(Error::EmptyInput)?.1.len();
    if dim == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = descriptors.iter().find(|e| e.1.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.1.len(),
        });
    }
    if descriptors.iter().any(|e| e.1.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidArgument("descriptor contains a non-finite value".into()));
    }
    let n = descriptors.len();
    let mut index = DescriptorIndex {
        dim,
        entries: descriptors,
        order: (0..n).collect(),
        nodes: Vec::new(),
    };
    index.build_node(0, n);
    Ok(index)
}

/// Linear-scan nearest neighbor with the same tie rule as the tree.
pub fn brute_force_nearest(entries: &[(FrameId, Vec<f32>)], query: &[f32]) -> Option<(FrameId, f64)> {
    entries
        .iter()
        .map(|(id, v)| (*id, squared_distance(query, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

#[derive(Debug, Clone)]
pub enum RetrievalBackend {
    Descriptor(DescriptorIndex),
    PoseOracle {
        frames: Vec<(FrameId, Pose)>,
        /// Meters per radian.
        lambda: f64,
    },
}

pub const DEFAULT_ORACLE_LAMBDA: f64 = 1.0;

impl RetrievalBackend {
    pub fn pose_oracle(training: &[Frame], lambda: f64) -> Result<Self> {
        let frames = training
            .iter()
            .map(|f| f.pose().map(|p| (f.id, *p)))
            .collect::<Result<Vec<_>>>()?;
        if frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(RetrievalBackend::PoseOracle { frames, lambda })
    }
}

/// `‖p1 − p2‖ + λ·Θ(R1ᵀR2)`
pub fn oracle_cost(a: &Pose, b: &Pose, lambda: f64) -> f64 {
    (a.position() - b.position()).norm() + lambda * misalignment_angle(a.rotation(), b.rotation())
}

pub fn query_most_similar(backend: &RetrievalBackend, query: &Frame) -> Result<FrameId> {
    match backend {
        RetrievalBackend::Descriptor(index) => {
            let d = query
                .descriptor
                .as_ref()
                .ok_or(Error::MissingDescriptor { frame_id: query.id })?;
            Ok(index.nearest(d)?.0)
        }
        RetrievalBackend::PoseOracle { frames, lambda } => {
            let q = query.pose()?;
            frames
                .iter()
                .map(|(id, p)| (*id, oracle_cost(q, p, *lambda)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(id, _)| id)
                .ok_or(Error::EmptyInput)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Rotation;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_entries(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<(FrameId, Vec<f32>)> {
        (0..n)
            .map(|i| {
                (
                    i as FrameId,
                    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn single_entry_always_wins() {
        let index = build_index(vec![(42, vec![1.0, 2.0])]).unwrap();
        assert_eq!(index.nearest(&[-100.0, 7.0]).unwrap().0, 42);
    }

    #[test]
    fn rejects_mixed_dimensions_and_empty_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut e = random_entries(&mut rng, 3, 64);
        e.push((3, vec![0.0; 32]));
        assert!(matches!(
            build_index(e),
            Err(Error::DimensionMismatch { expected: 64, found: 32 })
        ));
        assert!(matches!(build_index(vec![]), Err(Error::EmptyInput)));
    }

    #[test]
    fn tree_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let entries = random_entries(&mut rng, 1000, 64);
        let index = build_index(entries.clone()).unwrap();
        for _ in 0..100 {
            let q: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            assert_eq!(index.nearest(&q).unwrap(), brute_force_nearest(&entries, &q).unwrap());
        }
    }

    #[test]
    fn ties_resolve_to_lowest_frame_id() {
        // Duplicated vectors under shuffled ids.
        let mut entries = Vec::new();
        for i in 0..50u64 {
            let v = vec![(i % 5) as f32, 0.0, 1.0];
            entries.push((100 - i, v));
        }
        let index = build_index(entries.clone()).unwrap();
        for probe in 0..5 {
            let q = vec![probe as f32, 0.0, 1.0];
            let got = index.nearest(&q).unwrap();
            assert_eq!(got, brute_force_nearest(&entries, &q).unwrap());
        }
        // Equidistant between two stored vectors.
        let index = build_index(vec![(9, vec![1.0]), (4, vec![-1.0])]).unwrap();
        assert_eq!(index.nearest(&[0.0]).unwrap().0, 4);
    }

    #[test]
    fn top_k_is_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries = random_entries(&mut rng, 200, 8);
        let index = build_index(entries.clone()).unwrap();
        let q = vec![0.1f32; 8];
        let top = index.nearest_k(&q, 5).unwrap();
        let mut all: Vec<_> = entries.iter().map(|(id, v)| (*id, squared_distance(&q, v))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(top, all[..5].to_vec());
    }

    #[test]
    fn descriptor_backend_returns_exact_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let entries = random_entries(&mut rng, 20, 16);
        let target = entries[9].1.clone();
        let backend = RetrievalBackend::Descriptor(build_index(entries).unwrap());
        let mut q = Frame::new(1000);
        assert!(matches!(
            query_most_similar(&backend, &q),
            Err(Error::MissingDescriptor { frame_id: 1000 })
        ));
        q.descriptor = Some(target);
        assert_eq!(query_most_similar(&backend, &q).unwrap(), 9);
    }

    #[test]
    fn oracle_finds_identical_pose() {
        let training: Vec<Frame> = (0..10)
            .map(|i| Frame::with_pose(i, Pose::from_translation(Vector3::new(i as f64 * 0.3, 0.0, 0.0))))
            .collect();
        let backend = RetrievalBackend::pose_oracle(&training, 1.0).unwrap();
        let q = Frame::with_pose(99, *training[5].pose().unwrap());
        assert_eq!(query_most_similar(&backend, &q).unwrap(), 5);
        assert!(matches!(
            query_most_similar(&backend, &Frame::new(7)),
            Err(Error::MissingPose { frame_id: 7 })
        ));
    }

    #[test]
    fn oracle_weighs_translation_against_rotation() {
        // cost(0.1 m, 0 rad) = 0.1 < cost(0 m, 0.2 rad) = 0.2 with λ = 1.
        let training = vec![
            Frame::with_pose(1, Pose::new(Rotation::rot_y(0.2), Vector3::zeros())),
            Frame::with_pose(2, Pose::from_translation(Vector3::new(0.1, 0.0, 0.0))),
        ];
        let backend = RetrievalBackend::pose_oracle(&training, 1.0).unwrap();
        let q = Frame::with_pose(0, Pose::identity());
        assert_eq!(query_most_similar(&backend, &q).unwrap(), 2);
        // With λ = 0.25 the rotated frame costs 0.05 and wins.
        let backend = RetrievalBackend::pose_oracle(&training, 0.25).unwrap();
        assert_eq!(query_most_similar(&backend, &q).unwrap(), 1);
    }
}
