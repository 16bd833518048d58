use crate::model::{SoftBody, SpringId};
use crate::vec3::Vec3;

use super::{Frame, SimParams};

/// Topology and settings at the moment recording started.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesHeader {
    pub body: SoftBody,
    pub params: SimParams,
    pub integrator: String,
    pub detector: String,
    pub stride: u32,
    pub start_tick: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    pub tick: u64,
    pub sim_time: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// Springs broken since the previous recorded frame.
    pub broken_spring_ids: Vec<SpringId>,
}

/// A recorded run: header plus frames with strictly increasing ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub header: SeriesHeader,
    pub frames: Vec<SeriesFrame>,
}

/// Collects every `stride`-th step whose tick lies inside the optional
/// inclusive interval.
#[derive(Clone, Debug)]
pub(crate) struct Recorder {
    pub series: Series,
    pub interval: Option<(u64, u64)>,
    steps_seen: u64,
    pending_broken: Vec<SpringId>,
}

impl Recorder {
    pub fn new(header: SeriesHeader, interval: Option<(u64, u64)>) -> Self {
        Recorder {
            series: Series {
                header,
                frames: Vec::new(),
            },
            interval,
            steps_seen: 0,
            pending_broken: Vec::new(),
        }
    }

    pub fn observe(&mut self, frame: &Frame) {
        if let Some((start, end)) = self.interval {
            if frame.tick < start || frame.tick > end {
                return;
            }
        }
        self.steps_seen += 1;
        self.pending_broken.extend_from_slice(&frame.broken_springs);
        if self.steps_seen.is_multiple_of(u64::from(self.series.header.stride)) {
            self.series.frames.push(SeriesFrame {
                tick: frame.tick,
                sim_time: frame.sim_time,
                positions: frame.positions.clone(),
                velocities: frame.velocities.clone().unwrap_or_default(),
                broken_spring_ids: std::mem::take(&mut self.pending_broken),
            });
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Playback {
    pub series: Series,
    pub cursor: usize,
}
