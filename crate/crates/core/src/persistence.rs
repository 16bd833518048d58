//! File formats: object (`.sbobj`), state (`.sbstate`), series (`.sbseries`),
//! environment (`.sbenv`) and CSV export.
//!
//! Documents are JSON written canonically: `formatVersion` first, every other
//! key sorted, floats in scientific notation with 17 significant digits,
//! integers plain, numeric arrays on one line and two-space indentation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::collision::Collider;
use crate::engine::{Series, SeriesFrame, SeriesHeader, SimInstance, SimParams};
use crate::forces::ExternalInput;
use crate::model::{
    BodyId, CreationParams, Dimension, LayerLabel, DEFAULT_COLOR, DEFAULT_PRESSURE_COEFFICIENT, Face, Layer, ModelError, Particle, Rgb, SoftBody, Spring,
    SpringId,
};
use crate::registry::Catalog;
use crate::vec3::Vec3;

pub const FORMAT_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 9] = ["tick", "sim_time", "particle_id", "x", "y", "z", "vx", "vy", "vz"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt document: {0}")]
    CorruptDocument(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("the series has no frames")]
    EmptySeries,
    #[error("i/o failure: {0}")]
    Io(String),
}

impl PersistError {
    pub fn code(&self) -> &'static str {
        match self {
            PersistError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            PersistError::CorruptDocument(_) => "CORRUPT_DOCUMENT",
            PersistError::InvariantViolation(_) => "INVARIANT_VIOLATION",
            PersistError::EmptySeries => "EMPTY_SERIES",
            PersistError::Io(_) => "IO_FAILURE",
        }
    }
}

impl From<ModelError> for PersistError {
    fn from(e: ModelError) -> Self {
        PersistError::InvariantViolation(format!("{} ({})", e, e.code()))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PersistError {
    PersistError::Io(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Canonical JSON

/// Serialize `doc` canonically.
pub fn to_canonical_string<T: Serialize>(doc: &T) -> String {
    let value = serde_json::to_value(doc).expect("documents serialize to JSON");
    let mut out = String::new();
    write_value(&mut out, &value, 0, true);
    out.push('\n');
    out
}

/// Canonical spelling of a float: 17 significant digits, scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if n.is_f64() {
        out.push_str(&format_float(n.as_f64().expect("f64 number")));
    } else {
        let _ = write!(out, "{n}");
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, level: usize, top: bool) {
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&serde_json::to_string(v).expect("scalar"))
        }
        Value::Number(n) => write_number(out, n),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(Value::is_number) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, level, false);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1, false);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            if top {
                if let Some(pos) = keys.iter().position(|k| k.as_str() == "formatVersion") {
                    let k = keys.remove(pos);
                    keys.insert(0, k);
                }
            }
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push_str(": ");
                write_value(out, &map[k.as_str()], level + 1, false);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push('}');
        }
    }
}

/// Parse a document: malformed JSON is corrupt; a wrong or missing version,
/// or fields that do not fit `T`, is a schema mismatch.
pub fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T, PersistError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| PersistError::CorruptDocument(e.to_string()))?;
    let version = value
        .get("formatVersion")
        .ok_or_else(|| PersistError::SchemaMismatch("missing formatVersion".into()))?;
    if version.as_u64() != Some(u64::from(FORMAT_VERSION)) {
        return Err(PersistError::SchemaMismatch(format!(
            "unsupported formatVersion {version}, expected {FORMAT_VERSION}"
        )));
    }
    serde_json::from_value(value).map_err(|e| PersistError::SchemaMismatch(e.to_string()))
}

fn read_text(path: &Path) -> Result<String, PersistError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PersistError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Bodies

/// Serialized form of a [`SoftBody`]. Body ids and spring normals are not
/// stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BodyDocument {
    pub dimension: Dimension,
    #[serde(default = "default_color")]
    pub color: Rgb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_coefficient: Option<f64>,
    #[serde(default)]
    pub layers: Vec<Layer>,
    pub particles: Vec<Particle>,
    #[serde(default)]
    pub springs: Vec<Spring>,
    #[serde(default)]
    pub faces: Vec<FaceDocument>,
}

fn default_color() -> Rgb {
    DEFAULT_COLOR
}

/// A face as stored. Hand-written documents may omit `springs`; importing
/// then finds or creates the edge springs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaceDocument {
    pub id: u64,
    pub vertices: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub springs: Option<[SpringId; 3]>,
}

impl BodyDocument {
    pub fn from_body(body: &SoftBody) -> BodyDocument {
        BodyDocument {
            dimension: body.dimension,
            color: body.color,
            pressure_coefficient: body.pressure_coefficient,
            layers: body.layers.clone(),
            particles: body.particles.clone(),
            springs: body.springs.clone(),
            faces: body
                .faces
                .iter()
                .map(|f| FaceDocument {
                    id: f.id,
                    vertices: f.vertices,
                    springs: Some(f.springs),
                })
                .collect(),
        }
    }

    /// Rebuild the body exactly as stored. Ids must already be dense.
    pub fn into_body(self) -> Result<SoftBody, PersistError> {
        for (i, p) in self.particles.iter().enumerate() {
            if p.id != i {
                return Err(PersistError::InvariantViolation(format!(
                    "particle at index {i} has id {}",
                    p.id
                )));
            }
        }
        let mut springs = self.springs;
        springs.sort_by_key(|s| s.id);
        let mut faces = self
            .faces
            .into_iter()
            .map(|f| match f.springs {
                Some(springs) => Ok(Face {
                    id: f.id,
                    vertices: f.vertices,
                    springs,
                }),
                None => Err(PersistError::SchemaMismatch(format!("face {} lists no springs", f.id))),
            })
            .collect::<Result<Vec<Face>, _>>()?;
        faces.sort_by_key(|f| f.id);
        Ok(SoftBody::from_parts(
            BodyId::fresh(),
            self.dimension,
            self.layers,
            self.particles,
            springs,
            faces,
            self.pressure_coefficient,
            self.color,
        )?)
    }

    /// Rebuild the body with particle, spring and face ids renumbered densely
    /// in document order.
    pub fn into_body_remapped(mut self) -> Result<SoftBody, PersistError> {
        let unknown = |what: &str, id: u64| {
            PersistError::InvariantViolation(format!("reference to unknown {what} {id}"))
        };
        let mut pmap = std::collections::HashMap::new();
        for (i, p) in self.particles.iter_mut().enumerate() {
            if pmap.insert(p.id, i).is_some() {
                return Err(PersistError::InvariantViolation(format!("duplicate particle id {}", p.id)));
            }
            p.id = i;
        }
        let pid = |id: usize| pmap.get(&id).copied().ok_or_else(|| unknown("particle", id as u64));
        let mut smap = std::collections::HashMap::new();
        for (i, s) in self.springs.iter_mut().enumerate() {
            if smap.insert(s.id, i as SpringId).is_some() {
                return Err(PersistError::InvariantViolation(format!("duplicate spring id {}", s.id)));
            }
            s.id = i as SpringId;
            s.head = pid(s.head)?;
            s.tail = pid(s.tail)?;
        }
        let mut pending = Vec::new();
        let mut next_face = 0;
        for f in std::mem::take(&mut self.faces) {
            let mut vertices = f.vertices;
            for v in &mut vertices {
                *v = pid(*v)?;
            }
            match f.springs {
                Some(springs) => {
                    let mut mapped = [0; 3];
                    for (m, s) in mapped.iter_mut().zip(springs) {
                        *m = *smap.get(&s).ok_or_else(|| unknown("spring", s))?;
                    }
                    self.faces.push(FaceDocument {
                        id: next_face,
                        vertices,
                        springs: Some(mapped),
                    });
                    next_face += 1;
                }
                None => pending.push(vertices),
            }
        }
        for layer in &mut self.layers {
            for p in &mut layer.particles {
                *p = pid(*p)?;
            }
        }
        if self.layers.is_empty() {
            self.layers.push(Layer {
                label: LayerLabel::Outer,
                part: 0,
                particles: (0..self.particles.len()).collect(),
            });
        }
        if self.dimension != Dimension::One && self.pressure_coefficient.is_none() {
            let enclosed = self.dimension == Dimension::Two || !self.faces.is_empty() || !pending.is_empty();
            self.pressure_coefficient = Some(if enclosed { DEFAULT_PRESSURE_COEFFICIENT } else { 0.0 });
        }
        if self.dimension == Dimension::One && (!self.faces.is_empty() || !pending.is_empty()) {
            return Err(ModelError::DimensionForbidsFace.into());
        }
        let mut body = self.into_body()?;
        for [a, b, c] in pending {
            body.add_face(a, b, c)?;
        }
        Ok(body)
    }
}

/// `.sbobj`: a body and optionally the parameters it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObjectDocument {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: BodyDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creation: Option<CreationParams>,
}

#[derive(Clone, Debug)]
pub struct ImportedObject {
    pub body: SoftBody,
    pub creation: Option<CreationParams>,
}

pub fn export_object(body: &SoftBody, creation: Option<&CreationParams>) -> String {
    to_canonical_string(&ObjectDocument {
        format_version: FORMAT_VERSION,
        body: BodyDocument::from_body(body),
        creation: creation.cloned(),
    })
}

/// Parse an object document into a valid body with fresh ids.
pub fn import_object(text: &str) -> Result<ImportedObject, PersistError> {
    let doc: ObjectDocument = parse_document(text)?;
    Ok(ImportedObject {
        body: doc.body.into_body_remapped()?,
        creation: doc.creation,
    })
}

pub fn save_object(path: &Path, body: &SoftBody, creation: Option<&CreationParams>) -> Result<(), PersistError> {
    write_text(path, &export_object(body, creation))
}

pub fn load_object(path: &Path) -> Result<ImportedObject, PersistError> {
    import_object(&read_text(path)?)
}

// ---------------------------------------------------------------------------
// States

/// `.sbstate`: everything needed to resume a simulation bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateDocument {
    pub format_version: u32,
    pub saved_at_tick: u64,
    pub sim_time: f64,
    pub integrator_name: String,
    pub detector_name: String,
    pub params: SimParams,
    pub body: BodyDocument,
    pub environment: Vec<Collider>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending_inputs: Vec<ExternalInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creation: Option<CreationParams>,
}

#[derive(Clone, Debug)]
pub struct LoadedState {
    pub instance: SimInstance,
    pub warnings: Vec<String>,
}

pub fn state_document(instance: &SimInstance) -> StateDocument {
    StateDocument {
        format_version: FORMAT_VERSION,
        saved_at_tick: instance.tick,
        sim_time: instance.sim_time,
        integrator_name: instance.integrator.clone(),
        detector_name: instance.detector.clone(),
        params: instance.params.clone(),
        body: BodyDocument::from_body(&instance.body),
        environment: instance.environment.clone(),
        pending_inputs: instance.pending_inputs().to_vec(),
        creation: instance.creation.clone(),
    }
}

pub fn save_state_string(instance: &SimInstance) -> String {
    to_canonical_string(&state_document(instance))
}

pub fn save_state(path: &Path, instance: &SimInstance) -> Result<(), PersistError> {
    write_text(path, &save_state_string(instance))
}

/// Build a paused instance from a state document. Unknown algorithm names
/// fall back to the catalog defaults and are reported as warnings.
pub fn instance_from_state(
    doc: StateDocument,
    id: u64,
    catalog: &Catalog,
) -> Result<LoadedState, PersistError> {
    doc.params
        .validate()
        .map_err(|e| PersistError::SchemaMismatch(e.to_string()))?;
    for c in &doc.environment {
        c.validate().map_err(|e| PersistError::SchemaMismatch(e.to_string()))?;
    }
    if !(doc.sim_time >= 0.0 && doc.sim_time.is_finite()) {
        return Err(PersistError::SchemaMismatch("simTime must be non-negative".into()));
    }
    let body = doc.body.into_body()?;
    let mut warnings = Vec::new();
    let mut inst = SimInstance::new(id, body, catalog);
    if catalog.integrators.contains(&doc.integrator_name) {
        inst.integrator = doc.integrator_name;
    } else {
        warnings.push(format!(
            "unknown integrator {:?}, using {:?}",
            doc.integrator_name, inst.integrator
        ));
    }
    if catalog.detectors.contains(&doc.detector_name) {
        inst.detector = doc.detector_name;
    } else {
        warnings.push(format!(
            "unknown detector {:?}, using {:?}",
            doc.detector_name, inst.detector
        ));
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    inst.environment = doc.environment;
    inst.params = doc.params;
    inst.creation = doc.creation;
    inst.restore(doc.saved_at_tick, doc.sim_time);
    for input in doc.pending_inputs {
        inst.apply_user_force(input)
            .map_err(|e| PersistError::InvariantViolation(e.to_string()))?;
    }
    Ok(LoadedState {
        instance: inst,
        warnings,
    })
}

pub fn load_state_str(text: &str, id: u64, catalog: &Catalog) -> Result<LoadedState, PersistError> {
    instance_from_state(parse_document(text)?, id, catalog)
}

pub fn load_state(path: &Path, id: u64, catalog: &Catalog) -> Result<LoadedState, PersistError> {
    load_state_str(&read_text(path)?, id, catalog)
}

// ---------------------------------------------------------------------------
// Series

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesHeaderDocument {
    pub body: BodyDocument,
    pub params: SimParams,
    pub integrator_name: String,
    pub detector_name: String,
    pub stride: u32,
    pub start_tick: u64,
    pub frame_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesFrameDocument {
    pub tick: u64,
    pub sim_time: f64,
    pub positions: Vec<Vec3>,
    #[serde(default)]
    pub velocities: Vec<Vec3>,
    #[serde(default)]
    pub broken_spring_ids: Vec<SpringId>,
}

/// `.sbseries`: a recorded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesDocument {
    pub format_version: u32,
    pub header: SeriesHeaderDocument,
    pub frames: Vec<SeriesFrameDocument>,
}

pub fn series_document(series: &Series) -> SeriesDocument {
    let h = &series.header;
    SeriesDocument {
        format_version: FORMAT_VERSION,
        header: SeriesHeaderDocument {
            body: BodyDocument::from_body(&h.body),
            params: h.params.clone(),
            integrator_name: h.integrator.clone(),
            detector_name: h.detector.clone(),
            stride: h.stride,
            start_tick: h.start_tick,
            frame_count: series.frames.len(),
        },
        frames: series
            .frames
            .iter()
            .map(|f| SeriesFrameDocument {
                tick: f.tick,
                sim_time: f.sim_time,
                positions: f.positions.clone(),
                velocities: f.velocities.clone(),
                broken_spring_ids: f.broken_spring_ids.clone(),
            })
            .collect(),
    }
}

/// Validate and convert a series document: non-empty, strictly increasing
/// ticks, frames matching the header topology.
pub fn series_from_document(doc: SeriesDocument) -> Result<Series, PersistError> {
    if doc.frames.is_empty() {
        return Err(PersistError::EmptySeries);
    }
    let h = doc.header;
    if h.stride == 0 {
        return Err(PersistError::SchemaMismatch("stride must be at least 1".into()));
    }
    if h.frame_count != doc.frames.len() {
        return Err(PersistError::SchemaMismatch(format!(
            "header lists {} frames, found {}",
            h.frame_count,
            doc.frames.len()
        )));
    }
    let body = h.body.into_body()?;
    let n = body.particle_count();
    let mut live: HashSet<SpringId> = body.springs.iter().map(|s| s.id).collect();
    let mut prev: Option<u64> = None;
    let mut frames = Vec::with_capacity(doc.frames.len());
    for f in doc.frames {
        if prev.is_some_and(|p| f.tick <= p) {
            return Err(PersistError::SchemaMismatch(format!(
                "frame tick {} does not increase",
                f.tick
            )));
        }
        prev = Some(f.tick);
        if f.positions.len() != n || (!f.velocities.is_empty() && f.velocities.len() != n) {
            return Err(PersistError::SchemaMismatch(format!(
                "frame at tick {} does not have {n} particles",
                f.tick
            )));
        }
        if f.positions.iter().chain(&f.velocities).any(|v| !v.is_finite()) {
            return Err(PersistError::CorruptDocument(format!(
                "frame at tick {} has non-finite values",
                f.tick
            )));
        }
        for id in &f.broken_spring_ids {
            if !live.remove(id) {
                return Err(PersistError::SchemaMismatch(format!(
                    "frame at tick {} breaks unknown spring {id}",
                    f.tick
                )));
            }
        }
        frames.push(SeriesFrame {
            tick: f.tick,
            sim_time: f.sim_time,
            positions: f.positions,
            velocities: f.velocities,
            broken_spring_ids: f.broken_spring_ids,
        });
    }
    Ok(Series {
        header: SeriesHeader {
            body,
            params: h.params,
            integrator: h.integrator_name,
            detector: h.detector_name,
            stride: h.stride,
            start_tick: h.start_tick,
        },
        frames,
    })
}

pub fn save_series_string(series: &Series) -> Result<String, PersistError> {
    if series.frames.is_empty() {
        return Err(PersistError::EmptySeries);
    }
    Ok(to_canonical_string(&series_document(series)))
}

pub fn save_series(path: &Path, series: &Series) -> Result<(), PersistError> {
    write_text(path, &save_series_string(series)?)
}

pub fn load_series_str(text: &str) -> Result<Series, PersistError> {
    series_from_document(parse_document(text)?)
}

pub fn load_series(path: &Path) -> Result<Series, PersistError> {
    load_series_str(&read_text(path)?)
}

/// One row per frame and particle, under [`CSV_HEADER`].
pub fn export_csv<W: std::io::Write>(series: &Series, sink: W) -> Result<(), PersistError> {
    let fail = |e: csv::Error| PersistError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER).map_err(fail)?;
    for f in &series.frames {
        for (i, p) in f.positions.iter().enumerate() {
            let v = f.velocities.get(i).copied().unwrap_or(Vec3::ZERO);
            let row = [
                f.tick.to_string(),
                format_float(f.sim_time),
                i.to_string(),
                format_float(p.x),
                format_float(p.y),
                format_float(p.z),
                format_float(v.x),
                format_float(v.y),
                format_float(v.z),
            ];
            w.write_record(&row).map_err(fail)?;
        }
    }
    w.flush().map_err(|e| PersistError::Io(e.to_string()))
}

pub fn export_csv_file(path: &Path, series: &Series) -> Result<(), PersistError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    export_csv(series, &mut buf)?;
    buf.flush().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Environments

/// `.sbenv`: colliders plus free-form hints for renderers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvironmentDocument {
    pub format_version: u32,
    pub colliders: Vec<Collider>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub display_hints: Value,
}

impl EnvironmentDocument {
    pub fn new(colliders: Vec<Collider>) -> Self {
        EnvironmentDocument {
            format_version: FORMAT_VERSION,
            colliders,
            display_hints: Value::Null,
        }
    }
}

pub fn load_environment_str(text: &str) -> Result<EnvironmentDocument, PersistError> {
    let doc: EnvironmentDocument = parse_document(text)?;
    for c in &doc.colliders {
        c.validate().map_err(|e| PersistError::SchemaMismatch(e.to_string()))?;
    }
    Ok(doc)
}

pub fn load_environment(path: &Path) -> Result<EnvironmentDocument, PersistError> {
    load_environment_str(&read_text(path)?)
}

pub fn save_environment(path: &Path, doc: &EnvironmentDocument) -> Result<(), PersistError> {
    write_text(path, &to_canonical_string(doc))
}
