//! Simulation instances: stepping, lifecycle, runtime mutation, recording and
//! playback.

mod pacing;
mod series;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::Collider;
use crate::forces::{
    accumulate_forces, apply_deformation_model, energy, ExternalInput, ForceDiagnostics, ForceError,
    ForceParams, InputKind,
};
use crate::integrators::{IntegrateError, ParticleState};
use crate::model::{
    create_soft_body, CreationParams, LayerLabel, MassSpec, SpringConstants, ModelError, ParticleId, SoftBody, SpringId, SpringKind};
use crate::registry::{Catalog, RegistryError};
use crate::vec3::Vec3;

pub use pacing::Pacer;
pub use series::{Series, SeriesFrame, SeriesHeader};
use series::{Playback, Recorder};

pub const DEFAULT_FRAME_RATE: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("operation not allowed while {actual}")]
    WrongStatus { actual: Status },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no algorithm named {0:?}")]
    UnknownAlgorithm(String),
    #[error("{0:?} is already the active algorithm")]
    SameAlgorithm(String),
    #[error("the instance is playing back a series and cannot be changed")]
    PlaybackImmutable,
    #[error("no particle with id {0}")]
    UnknownParticle(ParticleId),
    #[error("the series has no frames")]
    EmptySeries,
    #[error("playback reached the end of the series")]
    EndOfSeries,
    #[error("the instance is not recording")]
    NotRecording,
    #[error("integration produced a non-finite state")]
    NonFiniteState,
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::WrongStatus { .. } => "WRONG_STATUS",
            EngineError::InvalidParams(_) => "INVALID_PARAMS",
            EngineError::UnknownAlgorithm(_) => "UNKNOWN_ALGORITHM",
            EngineError::SameAlgorithm(_) => "SAME_ALGORITHM",
            EngineError::PlaybackImmutable => "PLAYBACK_IMMUTABLE",
            EngineError::UnknownParticle(_) => "UNKNOWN_PARTICLE",
            EngineError::EmptySeries => "EMPTY_SERIES",
            EngineError::EndOfSeries => "END_OF_SERIES",
            EngineError::NotRecording => "NOT_RECORDING",
            EngineError::NonFiniteState => "NONFINITE_STATE",
            EngineError::Force(e) => e.code(),
            EngineError::Model(e) => e.code(),
        }
    }
}

impl From<IntegrateError> for EngineError {
    fn from(e: IntegrateError) -> Self {
        match e {
            IntegrateError::NonFiniteState => EngineError::NonFiniteState,
            IntegrateError::InvalidTimeStep(dt) => {
                EngineError::InvalidParams(format!("time step must be positive, got {dt}"))
            }
            IntegrateError::Force(f) => EngineError::Force(f),
        }
    }
}

impl From<RegistryError> for EngineError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownAlgorithm(n) | RegistryError::DuplicateName(n) => {
                EngineError::UnknownAlgorithm(n)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Status {
    Running,
    Paused,
    Playback,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Running => "running",
            Status::Paused => "paused",
            Status::Playback => "playback",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimParams {
    pub force_params: ForceParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step_override: Option<f64>,
    pub frame_rate: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            force_params: ForceParams::default(),
            time_step_override: None,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.force_params
            .validate()
            .map_err(|e| EngineError::InvalidParams(e.to_string()))?;
        if let Some(dt) = self.time_step_override {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(EngineError::InvalidParams("time step override must be positive".into()));
            }
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(EngineError::InvalidParams("frame rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameDiagnostics {
    pub energy: f64,
    /// Enclosed volume (3-D) or area (2-D); absent for chains and open
    /// surfaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
}

/// Render payload emitted after every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub instance_id: u64,
    pub tick: u64,
    pub sim_time: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Option<Vec<Vec3>>,
    pub broken_springs: Vec<SpringId>,
    pub diagnostics: FrameDiagnostics,
}

/// Runtime parameter changes. Unset fields are left alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsPatch {
    pub gravity: Option<Vec3>,
    #[serde(alias = "dragCoefficient")]
    pub drag_coefficient: Option<f64>,
    #[serde(alias = "pressureCoefficient")]
    pub pressure_coefficient: Option<f64>,
    #[serde(alias = "elasticLimit")]
    pub elastic_limit: Option<f64>,
    #[serde(alias = "plasticRate")]
    pub plastic_rate: Option<f64>,
    #[serde(alias = "fractureStrain")]
    pub fracture_strain: Option<f64>,
    /// A value of 0 clears the override.
    #[serde(alias = "timeStepOverride")]
    pub time_step_override: Option<f64>,
    #[serde(alias = "frameRate")]
    pub frame_rate: Option<f64>,
    /// Mass of every particle, kg.
    pub mass: Option<f64>,
    /// Total particle count; split evenly over the body's layers.
    #[serde(alias = "particleCount")]
    pub particle_count: Option<usize>,
    /// Hooke constant of every spring, N/m.
    #[serde(alias = "hookConstant", alias = "stiffness")]
    pub hook_constant: Option<f64>,
    #[serde(alias = "dampingFactor")]
    pub damping_factor: Option<f64>,
    /// Uniform velocity for every unpinned particle.
    pub velocity: Option<Vec3>,
    /// Uniform acceleration for every unpinned particle.
    pub acceleration: Option<Vec3>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AlgorithmKind {
    Integrator,
    Detector,
}

/// One simulation: a body, its algorithms, clock, status and I/O buffers.
#[derive(Clone, Debug)]
pub struct SimInstance {
    pub id: u64,
    pub body: SoftBody,
    pub integrator: String,
    pub detector: String,
    pub environment: Vec<Collider>,
    pub params: SimParams,
    pub sim_time: f64,
    pub tick: u64,
    status: Status,
    pending_inputs: Vec<ExternalInput>,
    recording: Option<Recorder>,
    playback: Option<Playback>,
    /// Parameters the body was built from, reused when the particle count
    /// changes.
    pub creation: Option<CreationParams>,
    pub diagnostics: ForceDiagnostics,
    last_frame: Option<Frame>,
}

impl SimInstance {
    /// A paused instance with the default algorithms, a ground plane and
    /// default parameters.
    pub fn new(id: u64, body: SoftBody, catalog: &Catalog) -> SimInstance {
        SimInstance {
            id,
            body,
            integrator: catalog.default_integrator(),
            detector: catalog.default_detector(),
            environment: vec![Collider::ground()],
            params: SimParams::default(),
            sim_time: 0.0,
            tick: 0,
            status: Status::Paused,
            pending_inputs: Vec::new(),
            recording: None,
            playback: None,
            creation: None,
            diagnostics: ForceDiagnostics::default(),
            last_frame: None,
        }
    }

    /// Build the body from `creation` and carry its deformation range into
    /// the force parameters.
    pub fn from_creation(
        id: u64,
        creation: CreationParams,
        catalog: &Catalog,
    ) -> Result<SimInstance, EngineError> {
        let body = create_soft_body(&creation)?;
        let mut inst = SimInstance::new(id, body, catalog);
        if let Some(range) = creation.deformation_range {
            inst.params.force_params.elastic_limit = range.elastic_limit;
            inst.params.force_params.fracture_strain = range.fracture_strain;
            inst.params.validate()?;
        }
        inst.creation = Some(creation);
        Ok(inst)
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn pending_inputs(&self) -> &[ExternalInput] {
        &self.pending_inputs
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    pub fn playback_position(&self) -> Option<(usize, usize)> {
        self.playback
            .as_ref()
            .map(|p| (p.cursor, p.series.frames.len()))
    }

    /// The last emitted frame, or a frame of the current state if none.
    pub fn last_frame(&self) -> Frame {
        self.last_frame
            .clone()
            .unwrap_or_else(|| self.snapshot_frame(Vec::new()))
    }

    /// Time step used by the next step.
    pub fn effective_dt(&self, catalog: &Catalog) -> Result<f64, EngineError> {
        match self.params.time_step_override {
            Some(dt) => Ok(dt),
            None => Ok(catalog.integrators.get(&self.integrator)?.spec.time_step),
        }
    }

    pub fn snapshot_frame(&self, broken_springs: Vec<SpringId>) -> Frame {
        let volume = if self.body.dimension == crate::model::Dimension::One {
            None
        } else {
            self.body.enclosed_measure().ok()
        };
        Frame {
            instance_id: self.id,
            tick: self.tick,
            sim_time: self.sim_time,
            positions: self.body.particles.iter().map(|p| p.position).collect(),
            velocities: Some(self.body.particles.iter().map(|p| p.velocity).collect()),
            broken_springs,
            diagnostics: FrameDiagnostics {
                energy: energy(&self.body, self.params.force_params.gravity).total(),
                volume,
            },
        }
    }

    fn require(&self, status: Status) -> Result<(), EngineError> {
        if self.status == status {
            Ok(())
        } else {
            Err(EngineError::WrongStatus { actual: self.status })
        }
    }

    pub fn start(&mut self) -> Result<(), EngineError> {
        self.resume()
    }

    pub fn pause(&mut self) -> Result<(), EngineError> {
        self.require(Status::Running)?;
        self.status = Status::Paused;
        Ok(())
    }

    pub fn resume(&mut self) -> Result<(), EngineError> {
        self.require(Status::Paused)?;
        self.status = Status::Running;
        Ok(())
    }

    /// Advance one time step. On failure the instance pauses and keeps its
    /// last good state.
    pub fn step(&mut self, catalog: &Catalog) -> Result<Frame, EngineError> {
        self.require(Status::Running)?;
        match self.try_step(catalog) {
            Ok(frame) => Ok(frame),
            Err(e) => {
                self.status = Status::Paused;
                Err(e)
            }
        }
    }

    fn try_step(&mut self, catalog: &Catalog) -> Result<Frame, EngineError> {
        let integrator = catalog.integrators.get(&self.integrator)?;
        let detect = catalog.detectors.get(&self.detector)?;
        let dt = self.effective_dt(catalog)?;
        let fp = &self.params.force_params;
        let env = &self.environment;
        let inputs = &self.pending_inputs;

        let mut body = self.body.clone();
        let mut diag = self.diagnostics;
        let detection = detect(&body, env);
        accumulate_forces(&mut body, fp, inputs, &detection.contacts, env, &mut diag)?;

        let states: Vec<ParticleState> = body
            .particles
            .iter()
            .map(|p| ParticleState {
                position: p.position,
                velocity: p.velocity,
                pinned: p.pinned,
            })
            .collect();
        let mut scratch = body.clone();
        let mut eval = |candidate: &[ParticleState]| -> Result<Vec<Vec3>, ForceError> {
            for (p, s) in scratch.particles.iter_mut().zip(candidate) {
                p.position = s.position;
                p.velocity = s.velocity;
            }
            let det = detect(&scratch, env);
            let mut stage_diag = ForceDiagnostics::default();
            accumulate_forces(&mut scratch, fp, inputs, &det.contacts, env, &mut stage_diag)?;
            Ok(scratch.particles.iter().map(|p| p.acceleration).collect())
        };
        let next = integrator.step(&states, dt, &mut eval)?;

        for (p, s) in body.particles.iter_mut().zip(&next) {
            p.position = s.position;
            p.velocity = s.velocity;
        }
        let broken = apply_deformation_model(&mut body, fp);
        body.apply_dimension_mask();
        for p in body.particles.iter_mut().filter(|p| p.pinned) {
            p.velocity = Vec3::ZERO;
        }
        if body.particles.iter().any(|p| !p.position.is_finite() || !p.velocity.is_finite()) {
            return Err(EngineError::NonFiniteState);
        }

        self.body = body;
        self.diagnostics = diag;
        self.tick += 1;
        self.sim_time += dt;
        for input in &mut self.pending_inputs {
            input.remaining_steps = input.remaining_steps.saturating_sub(1);
        }
        self.pending_inputs.retain(|i| i.remaining_steps > 0);
        let frame = self.snapshot_frame(broken);
        if let Some(rec) = &mut self.recording {
            rec.observe(&frame);
        }
        self.last_frame = Some(frame.clone());
        Ok(frame)
    }

    /// Queue a user force. A drag input with zero remaining steps releases
    /// any active drag on the same particles.
    pub fn apply_user_force(&mut self, input: ExternalInput) -> Result<(), EngineError> {
        if self.status == Status::Playback {
            return Err(EngineError::PlaybackImmutable);
        }
        if input.targets.is_empty() {
            return Err(EngineError::InvalidParams("input needs at least one target".into()));
        }
        if let Some(&bad) = input.targets.iter().find(|&&t| t >= self.body.particles.len()) {
            return Err(EngineError::UnknownParticle(bad));
        }
        match input.kind {
            InputKind::ImpulseForce { force } if !force.is_finite() => {
                return Err(EngineError::InvalidParams("force must be finite".into()))
            }
            InputKind::Drag { target, stiffness }
                if !target.is_finite() || !(stiffness >= 0.0 && stiffness.is_finite()) =>
            {
                return Err(EngineError::InvalidParams(
                    "drag needs a finite target and non-negative stiffness".into(),
                ))
            }
            _ => {}
        }
        if input.remaining_steps == 0 {
            if matches!(input.kind, InputKind::Drag { .. }) {
                self.pending_inputs.retain(|p| {
                    !(matches!(p.kind, InputKind::Drag { .. })
                        && p.targets.iter().any(|t| input.targets.contains(t)))
                });
            }
            return Ok(());
        }
        self.pending_inputs.push(input);
        Ok(())
    }

    /// Apply a parameter patch atomically: either every field is applied or
    /// none is.
    pub fn set_params(&mut self, patch: &ParamsPatch) -> Result<(), EngineError> {
        if self.status == Status::Playback {
            return Err(EngineError::PlaybackImmutable);
        }
        let invalid = |m: &str| Err(EngineError::InvalidParams(m.to_string()));
        let mut params = self.params.clone();
        let fp = &mut params.force_params;
        if let Some(g) = patch.gravity {
            fp.gravity = g;
        }
        if let Some(v) = patch.drag_coefficient {
            fp.drag_coefficient = v;
        }
        if let Some(v) = patch.pressure_coefficient {
            fp.pressure_coefficient = Some(v);
        }
        if let Some(v) = patch.elastic_limit {
            fp.elastic_limit = v;
        }
        if let Some(v) = patch.plastic_rate {
            fp.plastic_rate = v;
        }
        if let Some(v) = patch.fracture_strain {
            fp.fracture_strain = v;
        }
        if let Some(dt) = patch.time_step_override {
            params.time_step_override = if dt == 0.0 { None } else { Some(dt) };
        }
        if let Some(r) = patch.frame_rate {
            params.frame_rate = r;
        }
        params.validate()?;
        if let Some(m) = patch.mass {
            if !(m > 0.0 && m.is_finite()) {
                return invalid("mass must be positive");
            }
        }
        if let Some(k) = patch.hook_constant {
            if !(k >= 0.0 && k.is_finite()) {
                return invalid("hook constant must be non-negative");
            }
        }
        if let Some(c) = patch.damping_factor {
            if !(c >= 0.0 && c.is_finite()) {
                return invalid("damping factor must be non-negative");
            }
        }
        for v in [patch.velocity, patch.acceleration].into_iter().flatten() {
            if !v.is_finite() {
                return invalid("velocity and acceleration must be finite");
            }
        }

        let mut body = match patch.particle_count {
            Some(n) if n != self.body.particle_count() => {
                if self.recording.is_some() {
                    return invalid("particle count cannot change while recording");
                }
                let layers = self.body.layers.len().max(1);
                if n % layers != 0 {
                    return Err(EngineError::InvalidParams(format!(
                        "particle count {n} is not divisible by the {layers} layers"
                    )));
                }
                self.rebuild(n / layers)?
            }
            _ => self.body.clone(),
        };
        let rebuilt = body.particle_count() != self.body.particle_count();
        let dim = body.dimension;
        for p in &mut body.particles {
            if let Some(m) = patch.mass {
                p.mass = m;
            }
            if p.pinned {
                continue;
            }
            if let Some(v) = patch.velocity {
                p.velocity = dim.mask(v);
            }
            if let Some(a) = patch.acceleration {
                p.acceleration = dim.mask(a);
            }
        }
        for s in &mut body.springs {
            if let Some(k) = patch.hook_constant {
                s.hook_constant = k;
            }
            if let Some(c) = patch.damping_factor {
                s.damping_factor = c;
            }
        }

        if let Some(cp) = &mut self.creation {
            if let Some(k) = patch.hook_constant {
                cp.stiffness = SpringConstants::uniform(k);
            }
            if let Some(c) = patch.damping_factor {
                cp.damping = SpringConstants::uniform(c);
            }
            if let Some(kp) = patch.pressure_coefficient {
                cp.pressure_coefficient = kp;
            }
        }
        if rebuilt {
            if let Some(cp) = &mut self.creation {
                cp.particle_count = body.particle_count() / body.layers.len().max(1);
            }
            self.pending_inputs.clear();
            self.last_frame = None;
        }
        self.body = body;
        self.params = params;
        Ok(())
    }

    /// Fresh body with `per_layer` particles per layer, keeping centroid, total
    /// mass, dimension and body id. Velocities become the old average.
    fn rebuild(&self, per_layer: usize) -> Result<SoftBody, EngineError> {
        let old = &self.body;
        let mut cp = match &self.creation {
            Some(cp) => cp.clone(),
            None => infer_creation(old)?,
        };
        cp.particle_count = per_layer;
        cp.mass = MassSpec::Total(old.total_mass());
        cp.center = old.centroid();
        cp.validate()?;
        let mut body = create_soft_body(&cp)?;
        let shift = old.centroid() - body.centroid();
        let avg_v = old.average_velocity();
        for p in &mut body.particles {
            p.position += shift;
            p.velocity = avg_v;
        }
        body.apply_dimension_mask();
        body.id = old.id;
        Ok(body)
    }

    pub fn swap_algorithm(
        &mut self,
        kind: AlgorithmKind,
        name: &str,
        catalog: &Catalog,
    ) -> Result<(), EngineError> {
        let (known, current) = match kind {
            AlgorithmKind::Integrator => (catalog.integrators.contains(name), &mut self.integrator),
            AlgorithmKind::Detector => (catalog.detectors.contains(name), &mut self.detector),
        };
        if !known {
            return Err(EngineError::UnknownAlgorithm(name.to_string()));
        }
        if current == name {
            return Err(EngineError::SameAlgorithm(name.to_string()));
        }
        *current = name.to_string();
        Ok(())
    }

    /// Independent deep copy at the current state running `integrator`.
    /// The copy starts paused with no queued inputs, recording or playback.
    pub fn fork(&self, id: u64, integrator: &str, catalog: &Catalog) -> Result<SimInstance, EngineError> {
        if self.status == Status::Playback {
            return Err(EngineError::WrongStatus { actual: self.status });
        }
        if !catalog.integrators.contains(integrator) {
            return Err(EngineError::UnknownAlgorithm(integrator.to_string()));
        }
        let mut copy = self.clone();
        copy.id = id;
        copy.integrator = integrator.to_string();
        copy.status = Status::Paused;
        copy.pending_inputs.clear();
        copy.recording = None;
        copy.playback = None;
        copy.last_frame = None;
        Ok(copy)
    }

    /// Start recording every `stride`-th step, optionally only for ticks in
    /// the inclusive interval.
    pub fn start_recording(&mut self, stride: u32, interval: Option<(u64, u64)>) -> Result<(), EngineError> {
        if self.status == Status::Playback {
            return Err(EngineError::PlaybackImmutable);
        }
        if stride == 0 {
            return Err(EngineError::InvalidParams("stride must be at least 1".into()));
        }
        if let Some((a, b)) = interval {
            if a > b {
                return Err(EngineError::InvalidParams("interval start after end".into()));
            }
        }
        let header = SeriesHeader {
            body: self.body.clone(),
            params: self.params.clone(),
            integrator: self.integrator.clone(),
            detector: self.detector.clone(),
            stride,
            start_tick: self.tick,
        };
        self.recording = Some(Recorder::new(header, interval));
        Ok(())
    }

    pub fn stop_recording(&mut self) -> Result<Series, EngineError> {
        self.recording
            .take()
            .map(|r| r.series)
            .ok_or(EngineError::NotRecording)
    }

    /// Enter playback of `series`. The body takes the series topology.
    pub fn start_playback(&mut self, series: Series) -> Result<(), EngineError> {
        if series.frames.is_empty() {
            return Err(EngineError::EmptySeries);
        }
        let n = series.header.body.particle_count();
        if series
            .frames
            .iter()
            .any(|f| f.positions.len() != n || (!f.velocities.is_empty() && f.velocities.len() != n))
        {
            return Err(EngineError::InvalidParams(
                "series frames do not match the header body".into(),
            ));
        }
        let id = self.body.id;
        self.body = series.header.body.clone();
        self.body.id = id;
        self.params = series.header.params.clone();
        self.recording = None;
        self.pending_inputs.clear();
        self.playback = Some(Playback { series, cursor: 0 });
        self.status = Status::Playback;
        Ok(())
    }

    /// Emit the next recorded frame verbatim.
    pub fn step_playback(&mut self) -> Result<Frame, EngineError> {
        self.require(Status::Playback)?;
        let pb = self.playback.as_mut().expect("playback status implies a series");
        let Some(rec) = pb.series.frames.get(pb.cursor).cloned() else {
            return Err(EngineError::EndOfSeries);
        };
        pb.cursor += 1;
        for &id in &rec.broken_spring_ids {
            self.body.remove_spring(id);
        }
        for (i, p) in self.body.particles.iter_mut().enumerate() {
            p.position = rec.positions[i];
            p.velocity = rec.velocities.get(i).copied().unwrap_or(Vec3::ZERO);
        }
        self.tick = rec.tick;
        self.sim_time = rec.sim_time;
        let mut frame = self.snapshot_frame(rec.broken_spring_ids);
        frame.positions = rec.positions;
        frame.velocities = (!rec.velocities.is_empty()).then_some(rec.velocities);
        self.last_frame = Some(frame.clone());
        Ok(frame)
    }

    /// Leave playback; the instance pauses at the last played frame.
    pub fn stop_playback(&mut self) -> Result<(), EngineError> {
        self.require(Status::Playback)?;
        self.playback = None;
        self.status = Status::Paused;
        Ok(())
    }

    /// Restore clock and status fields when loading a saved state.
    pub(crate) fn restore(&mut self, tick: u64, sim_time: f64) {
        self.tick = tick;
        self.sim_time = sim_time;
        self.status = Status::Paused;
    }
}

/// Best-effort creation parameters for a body that was not built here.
fn infer_creation(body: &SoftBody) -> Result<CreationParams, EngineError> {
    if body.layers.iter().any(|l| l.part != 0) {
        return Err(EngineError::InvalidParams(
            "the particle count of an attached body cannot change".into(),
        ));
    }
    let mut cp = CreationParams::default_for(body.dimension);
    cp.layer_count = body.layers.len().max(1);
    cp.color = body.color;
    if let Some(kp) = body.pressure_coefficient {
        cp.pressure_coefficient = kp;
    }
    let c = body.centroid();
    let mean_radius = |label: LayerLabel| -> Option<f64> {
        let layer = body.layers.iter().find(|l| l.label == label)?;
        if layer.particles.is_empty() {
            return None;
        }
        let sum: f64 = layer
            .particles
            .iter()
            .map(|&i| body.particles[i].position.distance(c))
            .sum();
        Some(sum / layer.particles.len() as f64)
    };
    if body.dimension == crate::model::Dimension::One {
        let xs = body.particles.iter().map(|p| p.position.x);
        let lo = xs.clone().fold(f64::INFINITY, f64::min);
        let hi = xs.fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            cp.size = hi - lo;
        }
    } else if let Some(outer) = mean_radius(LayerLabel::Outer) {
        if outer > 0.0 {
            cp.size = outer;
            if let Some(inner) = mean_radius(LayerLabel::Inner) {
                cp.inner_ratio = (inner / outer).clamp(0.01, 0.99);
            }
        }
    }
    let first = |kind: SpringKind| body.springs.iter().find(|s| s.kind == kind);
    let mut k = SpringConstants::default_stiffness();
    let mut d = SpringConstants::default_damping();
    for kind in [SpringKind::Structural, SpringKind::Radius, SpringKind::Shear] {
        if let Some(s) = first(kind) {
            match kind {
                SpringKind::Structural => {
                    k.structural = s.hook_constant;
                    d.structural = s.damping_factor;
                }
                SpringKind::Radius => {
                    k.radius = s.hook_constant;
                    d.radius = s.damping_factor;
                }
                SpringKind::Shear => {
                    k.shear = s.hook_constant;
                    d.shear = s.damping_factor;
                }
            }
        }
    }
    cp.stiffness = k;
    cp.damping = d;
    Ok(cp)
}

/// How [`Engine::add_instance`] derives the new entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AddMode {
    /// Another handle onto the same instance.
    SameAlgorithmNewView,
    /// An independent copy running the named integrator.
    NewAlgorithm(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Added {
    View { view: u64, instance: u64 },
    Instance(u64),
}

/// A set of instances sharing one catalog, with view handles. Used by the
/// CLI and tests; the server runs each instance in its own task instead.
pub struct Engine {
    pub catalog: Arc<Catalog>,
    instances: BTreeMap<u64, SimInstance>,
    views: BTreeMap<u64, u64>,
    next_id: u64,
}

impl Engine {
    pub fn new(catalog: Arc<Catalog>) -> Engine {
        Engine {
            catalog,
            instances: BTreeMap::new(),
            views: BTreeMap::new(),
            next_id: 1,
        }
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn create(&mut self, creation: CreationParams) -> Result<u64, EngineError> {
        let id = self.fresh_id();
        let inst = SimInstance::from_creation(id, creation, &self.catalog)?;
        self.instances.insert(id, inst);
        Ok(id)
    }

    /// Insert an already-built instance under a fresh id.
    pub fn insert(&mut self, mut instance: SimInstance) -> u64 {
        let id = self.fresh_id();
        instance.id = id;
        self.instances.insert(id, instance);
        id
    }

    /// Resolve an instance id or view id to an instance id.
    pub fn resolve(&self, id: u64) -> Option<u64> {
        if self.instances.contains_key(&id) {
            Some(id)
        } else {
            self.views.get(&id).copied()
        }
    }

    pub fn get(&self, id: u64) -> Option<&SimInstance> {
        self.resolve(id).and_then(|i| self.instances.get(&i))
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut SimInstance> {
        let i = self.resolve(id)?;
        self.instances.get_mut(&i)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.instances.keys().copied().collect()
    }

    pub fn add_instance(&mut self, source: u64, mode: AddMode) -> Result<Added, EngineError> {
        let src = self
            .resolve(source)
            .ok_or_else(|| EngineError::InvalidParams(format!("no instance {source}")))?;
        match mode {
            AddMode::SameAlgorithmNewView => {
                let view = self.fresh_id();
                self.views.insert(view, src);
                Ok(Added::View { view, instance: src })
            }
            AddMode::NewAlgorithm(name) => {
                let id = self.fresh_id();
                let copy = self.instances[&src].fork(id, &name, &self.catalog)?;
                self.instances.insert(id, copy);
                Ok(Added::Instance(id))
            }
        }
    }

    /// Step every running instance once, in id order.
    pub fn step_all(&mut self) -> Vec<(u64, Result<Frame, EngineError>)> {
        let catalog = self.catalog.clone();
        self.instances
            .iter_mut()
            .filter(|(_, i)| i.status() == Status::Running)
            .map(|(&id, i)| (id, i.step(&catalog)))
            .collect()
    }
}
