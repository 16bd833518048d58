/// Fixed-step accumulator that paces simulated time against wall-clock time.
///
/// When the simulation cannot keep up, at most `max_steps_per_tick` steps run
/// per call and the remaining backlog is dropped: the simulation slows down
/// instead of skipping physics.
#[derive(Clone, Debug)]
pub struct Pacer {
    accumulator: f64,
    pub max_steps_per_tick: u32,
}

impl Pacer {
    pub fn new(max_steps_per_tick: u32) -> Self {
        Pacer {
            accumulator: 0.0,
            max_steps_per_tick,
        }
    }

    /// Number of `dt` steps due after `elapsed` more wall-clock seconds.
    pub fn due_steps(&mut self, elapsed: f64, dt: f64) -> u32 {
        if !(dt > 0.0) || !(elapsed >= 0.0) {
            return 0;
        }
        self.accumulator += elapsed;
        let due = (self.accumulator / dt).floor();
        let steps = due.min(f64::from(self.max_steps_per_tick)) as u32;
        self.accumulator -= f64::from(steps) * dt;
        if steps == self.max_steps_per_tick {
            self.accumulator = self.accumulator.min(dt);
        }
        steps
    }

    pub fn reset(&mut self) {
        self.accumulator = 0.0;
    }
}

impl Default for Pacer {
    fn default() -> Self {
        Pacer::new(64)
    }
}
