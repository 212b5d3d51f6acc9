use nalgebra::Vector3;
use proptest::prelude::*;
use tempfile::TempDir;

use geoloc::io;
use geoloc::{Covariance6, Frame, Observation, Pose, PoseEstimate, Source, Twist};

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-50.0..50.0f64), prop::array::uniform3(-3.0..3.0f64))
        .prop_map(|(r, p)| Pose::exp(&Twist::new(Vector3::from(r), Vector3::from(p))))
}

fn trajectory() -> impl Strategy<Value = Vec<Frame>> {
    prop::collection::vec((0.001..10.0f64, pose()), 1..40).prop_map(|rows| {
        let mut t = 0.0;
        rows.into_iter()
            .enumerate()
            .map(|(i, (dt, p))| {
                t += dt;
                Frame {
                    timestamp: Some(t),
                    ..Frame::with_pose(i as u64, p)
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn trajectory_round_trip(frames in trajectory()) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.txt");
        io::write_trajectory(&path, &frames).unwrap();
        let back = io::load_trajectory(&path).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(&back) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!(a.timestamp, b.timestamp);
            let (pa, pb) = (a.pose().unwrap(), b.pose().unwrap());
            prop_assert!((pa.position() - pb.position()).norm() <= 1e-9);
            prop_assert!((pa.rotation().matrix() - pb.rotation().matrix()).norm() <= 1e-9);
        }
    }

    #[test]
    fn tracks_round_trip(
        rows in prop::collection::btree_map((0..20u64, 0..500u64), (-1e4..1e4f64, -1e4..1e4f64), 0..200)
    ) {
        let obs: Vec<Observation> = rows
            .iter()
            .map(|(&(f, p), &(u, v))| Observation::new(f, p, u, v))
            .collect();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.csv");
        io::write_tracks(&path, &obs).unwrap();
        prop_assert_eq!(io::load_tracks(&path).unwrap(), obs);
    }

    #[test]
    fn descriptors_round_trip_bit_exactly(
        dim in 1..40usize,
        ids in prop::collection::btree_set(any::<u64>(), 1..30),
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            f32::from_bits((state >> 32) as u32 & 0x7f7f_ffff)
        };
        let entries: Vec<(u64, Vec<f32>)> = ids.into_iter().map(|id| (id, (0..dim).map(|_| next()).collect())).collect();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("d.bin");
        io::write_descriptors(&path, &entries).unwrap();
        let back = io::read_descriptors(&path).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for ((ia, va), (ib, vb)) in entries.iter().zip(&back) {
            prop_assert_eq!(ia, ib);
            let bits = |v: &Vec<f32>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(va), bits(vb));
        }
        let bytes = std::fs::read(&path).unwrap();
        prop_assert_eq!(bytes.len(), 16 + entries.len() * (8 + 4 * dim));
    }

    #[test]
    fn estimates_round_trip(
        rows in prop::collection::vec((pose(), prop::array::uniform6(1e-8..1.0f64), 0..3u8), 1..20)
    ) {
        let estimates: Vec<PoseEstimate> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (p, d, s))| PoseEstimate {
                frame_id: i as u64,
                timestamp: Some(i as f64 * 0.1),
                pose: p,
                covariance: Covariance6::from_diagonal(&d),
                source: [Source::Geometric, Source::Motion, Source::Fused][s as usize],
            })
            .collect();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("pred.txt");
        io::save_estimates(&path, &estimates).unwrap();
        let records = io::load_estimate_records(io::sidecar_path(&path)).unwrap();
        prop_assert_eq!(records.len(), estimates.len());
        for (r, e) in records.iter().zip(&estimates) {
            prop_assert_eq!(r.frame_id, e.frame_id);
            prop_assert_eq!(r.source, e.source);
            prop_assert_eq!(&r.covariance, &e.covariance);
        }
    }
}
