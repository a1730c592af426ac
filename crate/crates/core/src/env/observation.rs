use std::sync::Arc;

use super::render::Frame;

pub const PROPRIO_DIM: usize = 8;
pub const FEATURES_DIM: usize = 8;
pub const FRAME_STACK: usize = 3;

/// One control step's measurements, split into the three state groups.
///
/// - `proprio`: cup position (2), cup velocity (2), previous raw action (2),
///   action-filter state (2).
/// - `features`: ball position in the cup frame (2), ball velocity (2), cup
///   position (2), cup velocity (2); both velocities are finite differences
///   of consecutive observed positions.
/// - `frames`: the last three camera frames, oldest first. Consecutive
///   observations share frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub proprio: [f64; PROPRIO_DIM],
    pub features: [f64; FEATURES_DIM],
    pub frames: [Arc<Frame>; FRAME_STACK],
}

impl Observation {
    pub fn frame_size(&self) -> usize {
        self.frames[0].size()
    }

    /// Pixel intensities in `[channel][row][col]` order.
    pub fn pixels(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flat_map(|f| f.intensities())
    }

    pub fn previous_action(&self) -> [f64; 2] {
        [self.proprio[4], self.proprio[5]]
    }

    pub fn filter_state(&self) -> [f64; 2] {
        [self.proprio[6], self.proprio[7]]
    }
}
