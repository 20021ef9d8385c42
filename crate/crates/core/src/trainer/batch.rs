use rand::seq::SliceRandom;
use rand::Rng;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::types::{MultiviewSample, PoseSequence2D, PoseSequence3D};

/// A window start inside one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct WindowRef {
    pub sample: usize,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewWindow {
    pub view_index: usize,
    pub camera: CameraModel,
    pub input: PoseSequence2D,
    pub gt_3d: Option<PoseSequence3D>,
}

/// All views of one sample over the same frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchElement {
    pub sample: usize,
    pub start: usize,
    pub views: Vec<ViewWindow>,
}

/// Window starts on a `stride` grid; the last start `len - window` is always included.
pub fn window_starts(
    frame_count: usize,
    window_frames: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if window_frames == 0 || stride == 0 {
        return Err(Error::Invalid(
            "window length and stride must be positive".into(),
        ));
    }
    if window_frames > frame_count {
        return Err(Error::Shape(format!(
            "window of {window_frames} frames is longer than the {frame_count}-frame sequence"
        )));
    }
    let last = frame_count - window_frames;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    Ok(starts)
}

/// Every window of every sample once, in shuffled order.
pub fn epoch_windows(
    samples: &[MultiviewSample],
    window_frames: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Result<Vec<WindowRef>> {
    let mut refs = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for start in window_starts(s.frame_count(), window_frames, stride)? {
            refs.push(WindowRef { sample: i, start });
        }
    }
    refs.shuffle(rng);
    Ok(refs)
}

pub fn window_element(
    samples: &[MultiviewSample],
    r: WindowRef,
    window_frames: usize,
) -> Result<BatchElement> {
    let sample = samples
        .get(r.sample)
        .ok_or_else(|| Error::Invalid(format!("sample index {} out of range", r.sample)))?;
    if r.start + window_frames > sample.frame_count() {
        return Err(Error::Shape(format!(
            "window {}..{} exceeds {} frames of `{}`",
            r.start,
            r.start + window_frames,
            sample.frame_count(),
            sample.sequence_id
        )));
    }
    let views = sample
        .views
        .iter()
        .enumerate()
        .map(|(k, v)| ViewWindow {
            view_index: k,
            camera: v.camera.clone(),
            input: v.pose_2d.window(r.start, window_frames),
            gt_3d: v.pose_3d.as_ref().map(|p| p.window(r.start, window_frames)),
        })
        .collect();
    Ok(BatchElement {
        sample: r.sample,
        start: r.start,
        views,
    })
}

/// One epoch of batches: windows sampled without replacement, each element
/// carrying every view of its sample over identical frame indices.
pub fn assemble_multiview_batch(
    samples: &[MultiviewSample],
    window_frames: usize,
    stride: usize,
    batch_windows: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<BatchElement>>> {
    if batch_windows == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let refs = epoch_windows(samples, window_frames, stride, rng)?;
    refs.chunks(batch_windows)
        .map(|chunk| {
            chunk
                .iter()
                .map(|r| window_element(samples, *r, window_frames))
                .collect()
        })
        .collect()
}
