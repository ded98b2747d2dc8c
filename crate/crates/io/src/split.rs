//! Downsampling captured 60 fps sequences to 30 fps and cutting them into
//! fixed-length training splits.

/// Frames per split after downsampling.
pub const SPLIT_FRAMES: usize = 300;

/// Keeps every other frame (60 fps to 30 fps), then chunks the result into
/// splits of at most [`SPLIT_FRAMES`] frames. The final split keeps the
/// remainder. Requires at least two input frames.
pub fn downsample_split<T: Clone>(frames: &[T]) -> Vec<Vec<T>> {
    assert!(frames.len() >= 2, "need at least 2 frames to downsample");
    let half: Vec<T> = frames.iter().step_by(2).cloned().collect();
    half.chunks(SPLIT_FRAMES).map(<[T]>::to_vec).collect()
}

/// Names the i-th split: `s0`, `s1`, ...
pub fn split_id(index: usize) -> String {
    format!("s{index}")
}
