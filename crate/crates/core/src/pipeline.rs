//! Per-query localization: retrieval, keyframe selection, intersection,
//! motion prediction and gated fusion, with the motion window carried
//! between queries.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::keyframe::{select_keyframes, KeyframeConfig};
use crate::locator::{
    backward_intersection, forward_intersection, GeometricEstimate, SolverConfig,
    TriangulationResult,
};
use crate::motion::{fit_motion_model, gate_and_fuse, MotionPrediction, MotionWindow, DEFAULT_WINDOW};
use crate::retrieval::{query_most_similar, RetrievalBackend};
use crate::scene::{Frame, FrameId, Intrinsics, Observation, PoseEstimate, Source};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub keyframe: KeyframeConfig,
    pub solver: SolverConfig,
    pub motion_window: usize,
    /// Queries at the start of a sequence that use the geometric estimate alone.
    pub bootstrap_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            keyframe: KeyframeConfig::default(),
            solver: SolverConfig::default(),
            motion_window: DEFAULT_WINDOW,
            bootstrap_frames: DEFAULT_WINDOW,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.keyframe.validate()?;
        self.solver.validate()?;
        if self.motion_window < 2 {
            return Err(Error::InvalidArgument("motion_window must be >= 2".into()));
        }
        if self.bootstrap_frames < 1 {
            return Err(Error::InvalidArgument("bootstrap_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pose-labeled training frames with their tracks.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub frames: Vec<Frame>,
    pub intrinsics: Intrinsics,
    pub backend: RetrievalBackend,
    tracks_by_frame: HashMap<FrameId, Vec<Observation>>,
}

impl TrainingSet {
    pub fn new(
        frames: Vec<Frame>,
        tracks: &[Observation],
        intrinsics: Intrinsics,
        backend: RetrievalBackend,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        for f in &frames {
            f.pose()?;
        }
        let mut tracks_by_frame: HashMap<FrameId, Vec<Observation>> = HashMap::new();
        for o in tracks {
            tracks_by_frame.entry(o.frame_id).or_default().push(*o);
        }
        Ok(TrainingSet {
            frames,
            intrinsics,
            backend,
            tracks_by_frame,
        })
    }

    fn tracks_of(&self, ids: &[FrameId]) -> Vec<Observation> {
        ids.iter()
            .flat_map(|id| self.tracks_by_frame.get(id).into_iter().flatten().copied())
            .collect()
    }
}

/// Everything computed for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationOutput {
    pub estimate: PoseEstimate,
    pub retrieved: Option<FrameId>,
    pub keyframes: Vec<FrameId>,
    pub geometric: Option<GeometricEstimate>,
    pub motion: Option<MotionPrediction>,
    /// Both estimates existed and the geometric one was discarded by the gate.
    pub gate_fired: bool,
    /// The geometric locator failed and the motion prediction was used.
    pub degraded: bool,
    pub geometric_failure: Option<String>,
}

/// Sequential localizer holding the motion window and the triangulation
/// cache for one query sequence.
#[derive(Debug, Clone)]
pub struct Localizer<'a> {
    training: &'a TrainingSet,
    cfg: PipelineConfig,
    window: MotionWindow,
    processed: usize,
    cache: HashMap<(FrameId, Vec<FrameId>), Arc<TriangulationResult>>,
}

impl<'a> Localizer<'a> {
    pub fn new(training: &'a TrainingSet, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Localizer {
            training,
            cfg,
            window: MotionWindow::new(cfg.motion_window)?,
            processed: 0,
            cache: HashMap::new(),
        })
    }

    pub fn window(&self) -> &MotionWindow {
        &self.window
    }

    fn triangulate(&mut self, retrieved: FrameId, keyframes: &[FrameId]) -> Result<Arc<TriangulationResult>> {
        let key = (retrieved, keyframes.to_vec());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let frames: Vec<Frame> = self
            .training
            .frames
            .iter()
            .filter(|f| keyframes.contains(&f.id))
            .cloned()
            .collect();
        let tracks = self.training.tracks_of(keyframes);
        let tri = Arc::new(forward_intersection(
            &frames,
            &tracks,
            &self.training.intrinsics,
            &self.cfg.solver,
        )?);
        self.cache.insert(key, Arc::clone(&tri));
        Ok(tri)
    }

    fn geometric(
        &mut self,
        query: &Frame,
        observations: &[Observation],
    ) -> (Option<FrameId>, Vec<FrameId>, Result<GeometricEstimate>) {
        let retrieved = match query_most_similar(&self.training.backend, query) {
            Ok(id) => id,
            Err(e) => return (None, vec![], Err(e)),
        };
        let keyframes = match select_keyframes(&self.training.frames, retrieved, &self.cfg.keyframe) {
            Ok(k) => k,
            Err(e) => return (Some(retrieved), vec![], Err(e)),
        };
        let init = self
            .training
            .frames
            .iter()
            .find(|f| f.id == retrieved)
            .and_then(|f| f.label_pose)
            .expect("retrieved frames come from the labeled training set");
        let result = self.triangulate(retrieved, &keyframes).and_then(|tri| {
            backward_intersection(
                &tri.map_points,
                observations,
                &self.training.intrinsics,
                &init,
                &self.cfg.solver,
            )
        });
        (Some(retrieved), keyframes, result)
    }

    /// Localizes the next query. `observations` are the query's tracks; all
    /// must carry `query.id`.
    pub fn localize(&mut self, query: &Frame, observations: &[Observation]) -> Result<LocalizationOutput> {
        if let Some(o) = observations.iter().find(|o| o.frame_id != query.id) {
            return Err(Error::InvalidArgument(format!(
                "observation of frame {} passed for query {}",
                o.frame_id, query.id
            )));
        }
        let (retrieved, keyframes, geo) = self.geometric(query, observations);
        let geo = geo.map(|mut g| {
            g.estimate.frame_id = query.id;
            g.estimate.timestamp = query.timestamp;
            g
        });

        let motion = if self.window.len() >= 2 {
            fit_motion_model(&self.window).ok().map(|mut m| {
                m.estimate.frame_id = query.id;
                m.estimate.timestamp = query.timestamp;
                m
            })
        } else {
            None
        };
        let bootstrapping = self.processed < self.cfg.bootstrap_frames;

        let (estimate, gate_fired, degraded, geometric_failure) = match (&geo, &motion) {
            (Ok(g), _) if bootstrapping => (g.estimate.clone(), false, false, None),
            (Ok(g), m) => {
                let est = gate_and_fuse(Some(g), m.as_ref())?;
                let fired = m.is_some() && est.source == Source::Motion;
                (est, fired, false, None)
            }
            (Err(e), Some(m)) => (m.estimate.clone(), false, true, Some(e.to_string())),
            (Err(e), None) => {
                return Err(Error::LocalizationFailure {
                    frame_id: query.id,
                    reason: e.to_string(),
                })
            }
        };

        self.window.push(estimate.clone())?;
        self.processed += 1;
        Ok(LocalizationOutput {
            estimate,
            retrieved,
            keyframes,
            geometric: geo.ok(),
            motion,
            gate_fired,
            degraded,
            geometric_failure,
        })
    }
}

/// Localizes `queries` in order. Query tracks are grouped by frame id.
pub fn localize_sequence(
    training: &TrainingSet,
    queries: &[Frame],
    query_tracks: &[Observation],
    cfg: &PipelineConfig,
) -> Result<Vec<LocalizationOutput>> {
    let mut by_frame: HashMap<FrameId, Vec<Observation>> = HashMap::new();
    for o in query_tracks {
        by_frame.entry(o.frame_id).or_default().push(*o);
    }
    let mut localizer = Localizer::new(training, *cfg)?;
    queries
        .iter()
        .map(|q| localizer.localize(q, by_frame.get(&q.id).map_or(&[][..], Vec::as_slice)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::misalignment_angle;
    use crate::retrieval::{build_index, DEFAULT_ORACLE_LAMBDA};
    use crate::sim::{generate_sequence, MotionKind, Sequence, SequenceSpec};

    fn training(seq: &Sequence, oracle: bool) -> TrainingSet {
        let backend = if oracle {
            RetrievalBackend::pose_oracle(&seq.training, DEFAULT_ORACLE_LAMBDA).unwrap()
        } else {
            let entries = seq
                .training
                .iter()
                .map(|f| (f.id, f.descriptor.clone().unwrap()))
                .collect();
            RetrievalBackend::Descriptor(build_index(entries).unwrap())
        };
        TrainingSet::new(seq.training.clone(), &seq.training_tracks, seq.intrinsics, backend).unwrap()
    }

    #[test]
    fn zero_noise_sequence_is_recovered_exactly() {
        let seq = generate_sequence(&SequenceSpec::new(60, MotionKind::ConstantVelocity, 1)).unwrap();
        for oracle in [true, false] {
            let t = training(&seq, oracle);
            let out = localize_sequence(&t, &seq.queries, &seq.query_tracks, &PipelineConfig::default()).unwrap();
            assert_eq!(out.len(), seq.queries.len());
            for (o, q) in out.iter().zip(&seq.queries) {
                let truth = q.pose().unwrap();
                assert_eq!(o.estimate.frame_id, q.id);
                assert!((o.estimate.pose.position() - truth.position()).norm() < 1e-6);
                assert!(misalignment_angle(o.estimate.pose.rotation(), truth.rotation()) < 1e-6);
            }
            assert_eq!(out[0].estimate.source, Source::Geometric);
            assert!(out[4..].iter().all(|o| o.estimate.source == Source::Fused));
        }
    }

    #[test]
    fn bootstrap_uses_geometry_only() {
        let seq = generate_sequence(&SequenceSpec::new(50, MotionKind::Piecewise, 2)).unwrap();
        let t = training(&seq, true);
        let cfg = PipelineConfig {
            bootstrap_frames: 3,
            ..PipelineConfig::default()
        };
        let out = localize_sequence(&t, &seq.queries, &seq.query_tracks, &cfg).unwrap();
        assert!(out[..3].iter().all(|o| o.estimate.source == Source::Geometric));
        assert!(out[2].motion.is_some());
    }

    #[test]
    fn window_never_exceeds_its_length() {
        let seq = generate_sequence(&SequenceSpec::new(60, MotionKind::RandomWalk, 3)).unwrap();
        let t = training(&seq, true);
        let mut loc = Localizer::new(&t, PipelineConfig::default()).unwrap();
        for q in &seq.queries {
            let obs: Vec<_> = seq.query_tracks.iter().filter(|o| o.frame_id == q.id).copied().collect();
            loc.localize(q, &obs).unwrap();
            assert!(loc.window().len() <= 4);
        }
    }

    #[test]
    fn reprocessing_is_deterministic() {
        let mut spec = SequenceSpec::new(50, MotionKind::RandomWalk, 4);
        spec.pixel_sigma = 1.0;
        let seq = generate_sequence(&spec).unwrap();
        let t = training(&seq, false);
        let a = localize_sequence(&t, &seq.queries, &seq.query_tracks, &PipelineConfig::default()).unwrap();
        let b = localize_sequence(&t, &seq.queries, &seq.query_tracks, &PipelineConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn geometric_failure_falls_back_to_motion() {
        let seq = generate_sequence(&SequenceSpec::new(60, MotionKind::ConstantVelocity, 5)).unwrap();
        let t = training(&seq, true);
        let mut tracks = seq.query_tracks.clone();
        let starved = seq.queries[8].id;
        tracks.retain(|o| o.frame_id != starved);
        let out = localize_sequence(&t, &seq.queries, &tracks, &PipelineConfig::default()).unwrap();
        assert!(out[8].degraded);
        assert_eq!(out[8].estimate.source, Source::Motion);
        assert!(out[8].geometric_failure.is_some());
        let truth = seq.queries[8].pose().unwrap();
        assert!((out[8].estimate.pose.position() - truth.position()).norm() < 1e-6);
    }

    #[test]
    fn failure_without_history_is_reported() {
        let seq = generate_sequence(&SequenceSpec::new(40, MotionKind::ConstantVelocity, 6)).unwrap();
        let t = training(&seq, true);
        let first = seq.queries[0].id;
        let tracks: Vec<_> = seq.query_tracks.iter().filter(|o| o.frame_id != first).copied().collect();
        let err = localize_sequence(&t, &seq.queries, &tracks, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::LocalizationFailure { frame_id, .. } if frame_id == first));
    }

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.bootstrap_frames = 0;
        assert!(cfg.validate().is_err());
        cfg.bootstrap_frames = 1;
        cfg.motion_window = 1;
        assert!(cfg.validate().is_err());
    }
}
