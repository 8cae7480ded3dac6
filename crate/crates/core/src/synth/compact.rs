use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::testset::{estimation_error, TestSet};
use crate::calibrate::{
    bootstrap_single_frame, calibrate_from, calibrate_or_refine, CalibrationResult, FrameObservation, LmOptions,
};
use crate::error::{Error, Result};
use crate::geometry::{BoardGeometry, ImageSize};

/// Frames chosen by greedy compaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compaction {
    /// Indices into the input sequence, in the order they were added.
    pub selected: Vec<usize>,
    /// Estimation error after each addition; the first entry is the init pair.
    pub trace: Vec<f64>,
    pub intrinsics: crate::geometry::IntrinsicParams,
}

fn subset(sequence: &[FrameObservation], idx: &[usize]) -> Vec<FrameObservation> {
    idx.iter().map(|&i| sequence[i].clone()).collect()
}

/// Greedy search for a smaller keyframe set with no worse estimation error.
///
/// The first two frames are taken unconditionally and calibrated the way a
/// session does, with a single-frame bootstrap as fallback. Each round then adds the
/// single remaining frame whose inclusion gives the lowest estimation error on
/// `test`, with ties going to the lowest index. The search stops as soon as no
/// candidate lowers the error.
pub fn greedy_compact(
    sequence: &[FrameObservation],
    test: &TestSet,
    board: &BoardGeometry,
    image_size: ImageSize,
    options: &LmOptions,
) -> Result<Compaction> {
    if sequence.len() < 2 {
        return Err(Error::Insufficient(format!(
            "compaction needs the two initialization frames, got {}",
            sequence.len()
        )));
    }
    let mut selected = vec![0, 1];
    let guess = bootstrap_single_frame(&sequence[0], board, image_size, options)?.intrinsics;
    let mut est = calibrate_or_refine(&subset(sequence, &selected), board, image_size, &guess, options)?;
    let mut best = estimation_error(&est.intrinsics, test, board, options)?.rms;
    let mut trace = vec![best];

    loop {
        let candidates: Vec<usize> = (2..sequence.len()).filter(|i| !selected.contains(i)).collect();
        if candidates.is_empty() {
            break;
        }
        let scored: Vec<Option<(f64, CalibrationResult)>> = candidates
            .par_iter()
            .map(|&c| {
                let mut idx = selected.clone();
                idx.push(c);
                let mut known: Vec<_> = est.poses.iter().copied().map(Some).collect();
                known.push(None);
                let r = calibrate_from(&subset(sequence, &idx), board, image_size, &est.intrinsics, &known, options).ok()?;
                let e = estimation_error(&r.intrinsics, test, board, options).ok()?;
                Some((e.rms, r))
            })
            .collect();
        let winner = candidates
            .iter()
            .zip(scored)
            .filter_map(|(&c, s)| s.map(|(e, r)| (c, e, r)))
            .fold(None::<(usize, f64, CalibrationResult)>, |acc, cur| match acc {
                Some(a) if a.1 <= cur.1 => Some(a),
                _ => Some(cur),
            });
        match winner {
            Some((c, e, r)) if e < best => {
                selected.push(c);
                best = e;
                est = r;
                trace.push(e);
            }
            _ => break,
        }
    }
    Ok(Compaction {
        selected,
        trace,
        intrinsics: est.intrinsics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poses::{init_targets, PoseConfig};
    use crate::synth::{generate_test_set, render_observation, GroundTruthCamera};

    fn init_pair(cam: &GroundTruthCamera, board: &BoardGeometry, noise: f64) -> Vec<FrameObservation> {
        let t = init_targets(board, cam.image_size, &cam.intrinsics.without_distortion(), &PoseConfig::default()).unwrap();
        t.iter()
            .enumerate()
            .map(|(k, t)| render_observation(&t.pose, cam, board, noise, 100 + k as u64).unwrap())
            .collect()
    }

    #[test]
    fn init_pair_alone_is_returned_whole() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let seq = init_pair(&cam, &board, 0.5);
        let test = generate_test_set(&cam, &board, 10, 0.0, 1).unwrap();
        let c = greedy_compact(&seq, &test, &board, cam.image_size, &LmOptions::default()).unwrap();
        assert_eq!(c.selected, vec![0, 1]);
        assert_eq!(c.trace.len(), 1);
    }

    #[test]
    fn needs_two_frames() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let seq = init_pair(&cam, &board, 0.0);
        let test = generate_test_set(&cam, &board, 5, 0.0, 1).unwrap();
        assert!(greedy_compact(&seq[..1], &test, &board, cam.image_size, &LmOptions::default()).is_err());
    }

    #[test]
    fn trace_decreases_and_new_views_beat_duplicates() {
        let cam = GroundTruthCamera::webcam();
        let board = BoardGeometry::default();
        let mut seq = init_pair(&cam, &board, 0.5);
        // exact duplicate of the first init frame
        seq.push(seq[0].clone());
        let test = generate_test_set(&cam, &board, 20, 0.0, 2).unwrap();
        for (k, (ax, ay)) in [(30.0f64, 0.0f64), (0.0, 30.0), (-25.0, 20.0), (20.0, -25.0)].into_iter().enumerate() {
            let r = crate::geometry::rotation::rot_x(ax.to_radians()) * crate::geometry::rotation::rot_y(ay.to_radians());
            let center = board.outline().iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / 4.0;
            let t = nalgebra::Vector3::new(0.0, 0.0, 2.0 * board.width()) - r * center;
            let pose = crate::geometry::BoardPose::from_matrix(&r, t);
            seq.push(render_observation(&pose, &cam, &board, 0.5, 200 + k as u64).unwrap());
        }
        let c = greedy_compact(&seq, &test, &board, cam.image_size, &LmOptions::default()).unwrap();
        assert!(c.trace.windows(2).all(|w| w[1] < w[0]), "{:?}", c.trace);
        assert!(c.selected.len() > 2);
        assert_ne!(c.selected[2], 2, "duplicate chosen before a new view");
    }
}
