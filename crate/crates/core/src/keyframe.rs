//! Co-visible keyframe selection around a retrieved training frame.

use crate::error::{Error, Result};
use crate::lie::{misalignment_angle, Pose};
use crate::scene::{Frame, FrameId};

/// Floor on the angle in the score's angular factor.
pub const MIN_SCORE_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeConfig {
    /// Preferred baseline, meters.
    pub d_m: f64,
    /// Baseline tolerance, meters.
    pub ell: f64,
    /// Angular threshold, radians.
    pub alpha_m: f64,
    /// Search range in sequence indices.
    pub delta_k: usize,
    /// Total keyframes including the seed; odd.
    pub group_size: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        KeyframeConfig {
            d_m: 0.1,
            ell: 0.2,
            alpha_m: 3f64.to_radians(),
            delta_k: 100,
            group_size: 7,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.d_m > 0.0 && self.ell > 0.0 && self.alpha_m > 0.0 && self.delta_k > 0;
        if !positive {
            return Err(Error::InvalidArgument(
                "keyframe parameters must be positive".into(),
            ));
        }
        if self.group_size < 3 || self.group_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "group_size must be odd and >= 3, got {}",
                self.group_size
            )));
        }
        Ok(())
    }
}

/// `exp(−(‖p1 − p2‖ − d_m)²/ℓ²) · max(α_m/Θ(R1ᵀR2), 1)`
pub fn keyframe_score(t1: &Pose, t2: &Pose, cfg: &KeyframeConfig) -> f64 {
    let baseline = (t1.position() - t2.position()).norm();
    let theta = misalignment_angle(t1.rotation(), t2.rotation()).max(MIN_SCORE_ANGLE);
    let b = (baseline - cfg.d_m) / cfg.ell;
    (-b * b).exp() * (cfg.alpha_m / theta).max(1.0)
}

/// Best-scoring index in `range` against `anchor`; earliest index wins ties.
fn best_in(
    poses: &[&Pose],
    anchor: usize,
    range: impl Iterator<Item = usize>,
    cfg: &KeyframeConfig,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in range {
        let s = keyframe_score(poses[anchor], poses[i], cfg);
        if best.map_or(true, |(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy bidirectional search from `seed_id`.
///
/// Each step scores the `delta_k` frames strictly beyond the current
/// backward (forward) seed against that seed and moves the seed to the
/// winner. Steps alternate backward then forward, each direction taking at
/// most `(group_size − 1)/2` steps and stopping at the sequence boundary.
/// Returns ids in sequence order.
pub fn select_keyframes(
    training: &[Frame],
    seed_id: FrameId,
    cfg: &KeyframeConfig,
) -> Result<Vec<FrameId>> {
    cfg.validate()?;
    let seed = training
        .iter()
        .position(|f| f.id == seed_id)
        .ok_or(Error::UnknownSeed { frame_id: seed_id })?;
    let poses: Vec<&Pose> = training.iter().map(Frame::pose).collect::<Result<_>>()?;
    let n = poses.len();
    let per_side = (cfg.group_size - 1) / 2;

    let mut selected = vec![seed];
    let (mut kb, mut kf) = (seed, seed);
    let (mut back_done, mut fwd_done) = (0usize, 0usize);
    let (mut back_open, mut fwd_open) = (true, true);

    while (back_open || fwd_open) && selected.len() < cfg.group_size {
        if back_open {
            let lo = kb.saturating_sub(cfg.delta_k);
            match best_in(&poses, kb, lo..kb, cfg) {
                Some(i) => {
                    selected.push(i);
                    kb = i;
                    back_done += 1;
                    back_open = back_done < per_side;
                }
                None => back_open = false,
            }
        }
        if fwd_open && selected.len() < cfg.group_size {
            let hi = (kf + cfg.delta_k).min(n - 1);
            match best_in(&poses, kf, kf + 1..=hi, cfg) {
                Some(i) => {
                    selected.push(i);
                    kf = i;
                    fwd_done += 1;
                    fwd_open = fwd_done < per_side;
                }
                None => fwd_open = false,
            }
        }
    }
    selected.sort_unstable();
    Ok(selected.into_iter().map(|i| training[i].id).collect())
}
