//! Wire messages. Every WebSocket text frame carries one JSON object with a
//! `type` field. Field names are snake_case; the camelCase spellings used by
//! browser clients are accepted as aliases on input.

use serde::Deserialize;
use serde_json::{json, Map, Value};

use softbody_core::engine::{AlgorithmKind, EngineError, Frame, ParamsPatch, Status};
use softbody_core::model::{CreationParams, Dimension, ModelError, ParticleId, SpringKind};
use softbody_core::persistence::PersistError;
use softbody_core::Vec3;

/// Request types in the dispatch table.
pub const REQUEST_TYPES: &[&str] = &[
    "catalog",
    "create",
    "import_object",
    "import_state",
    "remove",
    "start",
    "pause",
    "resume",
    "step",
    "set_params",
    "swap_algorithm",
    "apply_force",
    "drag",
    "attach",
    "add_instance",
    "save_state",
    "set_environment",
    "start_series",
    "stop_series",
    "start_playback",
    "stop_playback",
    "subscribe",
    "unsubscribe",
];

/// A document passed inline, either as JSON text or as a JSON object.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Document {
    Text(String),
    Json(Map<String, Value>),
}

impl Document {
    pub fn into_text(self) -> String {
        match self {
            Document::Text(s) => s,
            Document::Json(m) => Value::Object(m).to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddInstanceMode {
    #[serde(alias = "sameAlgorithmNewView")]
    SameAlgorithmNewView,
    #[serde(alias = "newAlgorithm")]
    NewAlgorithm,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Catalog,
    Create {
        #[serde(default)]
        dimension: Option<Dimension>,
        /// Total over all layers.
        #[serde(default, alias = "particleCount")]
        particle_count: Option<usize>,
        #[serde(default, alias = "layerCount")]
        layer_count: Option<usize>,
        #[serde(default)]
        creation: Option<CreationParams>,
    },
    ImportObject {
        document: Document,
    },
    ImportState {
        document: Document,
    },
    Remove {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    Start {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    Pause {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    Resume {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    /// Advance a paused instance (or a playback) by `count` steps now.
    Step {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(default = "one")]
        count: u32,
    },
    SetParams {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        params: ParamsPatch,
    },
    SwapAlgorithm {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(default)]
        kind: Option<AlgorithmKind>,
        name: String,
    },
    ApplyForce {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(alias = "particleIds")]
        particle_ids: Vec<ParticleId>,
        force: Vec3,
        #[serde(default = "one", alias = "remainingSteps")]
        remaining_steps: u32,
    },
    Drag {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(alias = "particleIds")]
        particle_ids: Vec<ParticleId>,
        #[serde(default)]
        target: Vec3,
        #[serde(default)]
        stiffness: f64,
        #[serde(alias = "remainingSteps")]
        remaining_steps: u32,
    },
    Attach {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(alias = "otherInstanceId")]
        other_instance_id: u64,
        pairs: Vec<(ParticleId, ParticleId)>,
        #[serde(default)]
        kind: Option<SpringKind>,
        #[serde(default, alias = "hookConstant")]
        hook_constant: Option<f64>,
        #[serde(default, alias = "dampingFactor")]
        damping_factor: Option<f64>,
    },
    AddInstance {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        mode: AddInstanceMode,
        #[serde(default)]
        integrator: Option<String>,
    },
    SaveState {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    SetEnvironment {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        document: Document,
    },
    StartSeries {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(default = "one")]
        stride: u32,
        #[serde(default)]
        interval: Option<(u64, u64)>,
    },
    StopSeries {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    StartPlayback {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        document: Document,
        /// When false, frames advance only on `step`.
        #[serde(default = "yes")]
        autoplay: bool,
    },
    StopPlayback {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
    Subscribe {
        #[serde(alias = "instanceId")]
        instance_id: u64,
        #[serde(alias = "rateHz")]
        rate_hz: f64,
    },
    Unsubscribe {
        #[serde(alias = "instanceId")]
        instance_id: u64,
    },
}

/// Error reply payload. `code` is one of the stable error codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

impl WireError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        WireError {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn unknown_instance(id: u64) -> Self {
        WireError::new("UNKNOWN_INSTANCE", format!("no instance or view {id}"))
    }
}

impl From<EngineError> for WireError {
    fn from(e: EngineError) -> Self {
        WireError::new(e.code(), e.to_string())
    }
}

impl From<PersistError> for WireError {
    fn from(e: PersistError) -> Self {
        WireError::new(e.code(), e.to_string())
    }
}

impl From<ModelError> for WireError {
    fn from(e: ModelError) -> Self {
        WireError::new(e.code(), e.to_string())
    }
}

/// A parsed request with its correlation id.
#[derive(Debug)]
pub struct Envelope {
    pub request_id: Option<String>,
    pub request: Request,
}

/// Parse one text frame. The error carries whatever request id could be
/// recovered so the reply can still be correlated.
pub fn parse(text: &str) -> Result<Envelope, (Option<String>, WireError)> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| (None, WireError::new("PARSE", format!("invalid JSON: {e}"))))?;
    let Value::Object(mut obj) = value else {
        return Err((None, WireError::new("PARSE", "message must be a JSON object")));
    };
    let request_id = match obj.remove("request_id").or_else(|| obj.remove("requestId")) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(_) => {
            return Err((None, WireError::new("PARSE", "request_id must be a string")));
        }
    };
    let ty = match obj.get("type") {
        Some(Value::String(t)) => t.clone(),
        _ => return Err((request_id, WireError::new("PARSE", "missing string field `type`"))),
    };
    if !REQUEST_TYPES.contains(&ty.as_str()) {
        return Err((request_id, WireError::new("UNKNOWN_TYPE", format!("unknown message type `{ty}`"))));
    }
    match serde_json::from_value::<Request>(Value::Object(obj)) {
        Ok(request) => Ok(Envelope { request_id, request }),
        Err(e) => Err((request_id, WireError::new("PARSE", format!("bad `{ty}` message: {e}")))),
    }
}

fn with_request_id(mut v: Value, request_id: Option<&str>) -> String {
    if let (Some(id), Value::Object(m)) = (request_id, &mut v) {
        m.insert("request_id".into(), Value::String(id.to_string()));
    }
    v.to_string()
}

/// `{"type":"ack", ...payload}`.
pub fn ack(request_id: Option<&str>, payload: Value) -> String {
    let mut m = match payload {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    m.insert("type".into(), Value::String("ack".into()));
    with_request_id(Value::Object(m), request_id)
}

pub fn error(request_id: Option<&str>, e: &WireError) -> String {
    with_request_id(
        json!({"type": "error", "code": e.code, "message": e.message}),
        request_id,
    )
}

/// Frame pushed to subscribers. `instance_id` is the id the client
/// subscribed with, which may be a view id.
pub fn frame(label: u64, f: &Frame) -> String {
    let mut v = json!({
        "type": "frame",
        "instance_id": label,
        "tick": f.tick,
        "sim_time": f.sim_time,
        "positions": f.positions,
        "broken_springs": f.broken_springs,
        "energy": f.diagnostics.energy,
    });
    if let Some(vel) = &f.velocities {
        v["velocities"] = json!(vel);
    }
    if let Some(vol) = f.diagnostics.volume {
        v["volume"] = json!(vol);
    }
    v.to_string()
}

/// Unsolicited status change, e.g. the automatic pause after a failed step.
pub fn status_event(label: u64, status: Status, cause: Option<&WireError>) -> String {
    let mut v = json!({"type": "status", "instance_id": label, "status": status.to_string()});
    if let Some(e) = cause {
        v["code"] = json!(e.code);
        v["message"] = json!(e.message);
    }
    v.to_string()
}
