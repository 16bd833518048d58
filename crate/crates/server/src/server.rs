//! WebSocket service: one actor task per simulation instance, one handler
//! per connection. Handlers never touch physics state directly; they send
//! closures to the owning actor and await the reply.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;
use tower_http::services::ServeDir;

use softbody_core::collision::Collider;
use softbody_core::engine::{AlgorithmKind, EngineError, Frame, SimInstance, Status};
use softbody_core::engine::Pacer;
use softbody_core::forces::ExternalInput;
use softbody_core::model::{attach_objects, CreationParams, Dimension, ParticleRef, SpringKind};
use softbody_core::persistence::{
    export_object, import_object, load_environment_str, load_series_str, load_state_str,
    save_series_string, save_state_string,
};
use softbody_core::registry::Catalog;

use crate::protocol::{self, AddInstanceMode, Envelope, Request, WireError};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_INSTANCES: usize = 8;
/// How often actors wake up to advance running instances.
const TICK: Duration = Duration::from_millis(5);
/// Outgoing queue per connection; frames are dropped when it is full.
const OUTBOX: usize = 512;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub max_instances: usize,
    /// Colliders given to newly created or imported objects.
    pub environment: Vec<Collider>,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            max_instances: DEFAULT_MAX_INSTANCES,
            environment: vec![Collider::ground()],
            static_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("BIND_FAILURE: cannot listen on {addr}: {source}")]
pub struct BindError {
    pub addr: String,
    #[source]
    pub source: std::io::Error,
}

type Outbox = mpsc::Sender<String>;

struct Subscriber {
    conn: u64,
    label: u64,
    out: Outbox,
}

/// Subscribers sharing one rate see the same decimated frame sequence.
struct RateGroup {
    period: Duration,
    last_sent: Option<Instant>,
    /// Latest frame held back by the rate limit, sent once the period ends
    /// so a burst never hides the final state.
    pending: Option<Arc<Frame>>,
    members: Vec<Subscriber>,
}

impl RateGroup {
    fn send(&mut self, frame: &Frame, now: Instant) {
        self.last_sent = Some(now);
        self.pending = None;
        self.members.retain(|s| !s.out.is_closed());
        for s in &self.members {
            let _ = s.out.try_send(protocol::frame(s.label, frame));
        }
    }
}

/// Owner of one instance.
pub struct Actor {
    pub instance: SimInstance,
    catalog: Arc<Catalog>,
    groups: BTreeMap<u64, RateGroup>,
    pacer: Pacer,
    last_advance: Instant,
    playback_done: bool,
    /// Whether playback advances on its own or only on `step`.
    autoplay: bool,
}

type Job = Box<dyn FnOnce(&mut Actor) + Send>;

impl Actor {
    fn new(instance: SimInstance, catalog: Arc<Catalog>) -> Actor {
        Actor {
            instance,
            catalog,
            groups: BTreeMap::new(),
            pacer: Pacer::default(),
            last_advance: Instant::now(),
            playback_done: false,
            autoplay: true,
        }
    }

    async fn run(mut self, mut jobs: mpsc::Receiver<Job>) {
        let mut ticker = tokio::time::interval(TICK);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                job = jobs.recv() => match job {
                    Some(job) => {
                        let before = self.instance.status();
                        job(&mut self);
                        if self.instance.status() != before {
                            self.pacer.reset();
                            self.last_advance = Instant::now();
                            self.playback_done = false;
                        }
                    }
                    None => break,
                },
                _ = ticker.tick() => self.advance(),
            }
        }
    }

    fn advance(&mut self) {
        self.flush();
        let now = Instant::now();
        let elapsed = (now - self.last_advance).as_secs_f64();
        self.last_advance = now;
        match self.instance.status() {
            Status::Running => {
                let Ok(dt) = self.instance.effective_dt(&self.catalog) else { return };
                let n = self.pacer.due_steps(elapsed, dt);
                // failures have already been reported to subscribers
                let _ = self.step_n(n);
            }
            Status::Playback if self.autoplay && !self.playback_done => {
                let n = self.pacer.due_steps(elapsed, 1.0 / self.instance.params.frame_rate);
                for _ in 0..n {
                    if self.playback_step().is_err() {
                        break;
                    }
                }
            }
            _ => {}
        }
    }

    /// Step a running instance; on failure the instance has paused and
    /// subscribers are told why.
    fn step_n(&mut self, n: u32) -> Result<(), WireError> {
        for _ in 0..n {
            match self.instance.step(&self.catalog) {
                Ok(frame) => self.publish(&frame),
                Err(e) => {
                    let e = WireError::from(e);
                    self.notify(Some(&e));
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn playback_step(&mut self) -> Result<(), WireError> {
        match self.instance.step_playback() {
            Ok(frame) => {
                self.publish(&frame);
                Ok(())
            }
            Err(e) => {
                let e = WireError::from(e);
                if e.code == "END_OF_SERIES" && !self.playback_done {
                    self.playback_done = true;
                    self.notify(Some(&e));
                }
                Err(e)
            }
        }
    }

    fn publish(&mut self, frame: &Frame) {
        let now = Instant::now();
        let mut held: Option<Arc<Frame>> = None;
        for group in self.groups.values_mut() {
            if group.last_sent.is_some_and(|t| now - t < group.period) {
                group.pending = Some(held.get_or_insert_with(|| Arc::new(frame.clone())).clone());
            } else {
                group.send(frame, now);
            }
        }
        self.groups.retain(|_, g| !g.members.is_empty());
    }

    fn flush(&mut self) {
        let now = Instant::now();
        for group in self.groups.values_mut() {
            let due = group.last_sent.is_none_or(|t| now - t >= group.period);
            if let (true, Some(frame)) = (due, group.pending.clone()) {
                group.send(&frame, now);
            }
        }
    }

    fn notify(&mut self, cause: Option<&WireError>) {
        let status = self.instance.status();
        for group in self.groups.values_mut() {
            group.members.retain(|s| !s.out.is_closed());
            for s in &group.members {
                let _ = s.out.try_send(protocol::status_event(s.label, status, cause));
            }
        }
    }

    fn subscribe(&mut self, conn: u64, label: u64, rate_hz: f64, out: Outbox) {
        self.unsubscribe(conn, label);
        let _ = out.try_send(protocol::frame(label, &self.instance.last_frame()));
        self.groups
            .entry(rate_hz.to_bits())
            .or_insert_with(|| RateGroup {
                period: Duration::from_secs_f64(1.0 / rate_hz),
                last_sent: None,
                pending: None,
                members: Vec::new(),
            })
            .members
            .push(Subscriber { conn, label, out });
    }

    fn unsubscribe(&mut self, conn: u64, label: u64) -> bool {
        let mut found = false;
        for g in self.groups.values_mut() {
            let before = g.members.len();
            g.members.retain(|s| !(s.conn == conn && s.label == label));
            found |= g.members.len() != before;
        }
        self.groups.retain(|_, g| !g.members.is_empty());
        found
    }

    fn drop_connection(&mut self, conn: u64) {
        for g in self.groups.values_mut() {
            g.members.retain(|s| s.conn != conn);
        }
        self.groups.retain(|_, g| !g.members.is_empty());
    }
}

#[derive(Default)]
struct Registry {
    instances: BTreeMap<u64, mpsc::Sender<Job>>,
    views: BTreeMap<u64, u64>,
    next_id: u64,
}

/// Shared service state.
pub struct Hub {
    pub catalog: Arc<Catalog>,
    pub config: ServerConfig,
    registry: Mutex<Registry>,
    next_conn: AtomicU64,
}

impl Hub {
    pub fn new(config: ServerConfig) -> Arc<Hub> {
        Arc::new(Hub {
            catalog: Arc::new(Catalog::with_builtins()),
            config,
            registry: Mutex::new(Registry {
                next_id: 1,
                ..Registry::default()
            }),
            next_conn: AtomicU64::new(1),
        })
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.registry.lock().expect("registry lock poisoned")
    }

    fn check_capacity(&self) -> Result<(), WireError> {
        if self.registry().instances.len() >= self.config.max_instances {
            return Err(WireError::new(
                "INSTANCE_LIMIT",
                format!("at most {} instances", self.config.max_instances),
            ));
        }
        Ok(())
    }

    /// Start an actor for `instance` under a fresh id.
    fn spawn(&self, mut instance: SimInstance) -> Result<u64, WireError> {
        let mut r = self.registry();
        if r.instances.len() >= self.config.max_instances {
            return Err(WireError::new(
                "INSTANCE_LIMIT",
                format!("at most {} instances", self.config.max_instances),
            ));
        }
        let id = r.next_id;
        r.next_id += 1;
        instance.id = id;
        let (tx, rx) = mpsc::channel(64);
        tokio::spawn(Actor::new(instance, self.catalog.clone()).run(rx));
        r.instances.insert(id, tx);
        Ok(id)
    }

    fn sender(&self, id: u64) -> Result<mpsc::Sender<Job>, WireError> {
        let r = self.registry();
        let target = r.views.get(&id).copied().unwrap_or(id);
        r.instances
            .get(&target)
            .cloned()
            .ok_or_else(|| WireError::unknown_instance(id))
    }

    /// Run `f` on the actor owning `id` (an instance or view id).
    pub async fn call<R: Send + 'static>(
        &self,
        id: u64,
        f: impl FnOnce(&mut Actor) -> R + Send + 'static,
    ) -> Result<R, WireError> {
        let tx = self.sender(id)?;
        let (reply, rx) = oneshot::channel();
        let job: Job = Box::new(move |a| {
            let _ = reply.send(f(a));
        });
        tx.send(job).await.map_err(|_| WireError::unknown_instance(id))?;
        rx.await.map_err(|_| WireError::unknown_instance(id))
    }

    pub async fn catalog_message(&self) -> Value {
        let integrators: Vec<Value> = self
            .catalog
            .integrators
            .names()
            .into_iter()
            .map(|n| {
                let dt = self.catalog.integrators.get(&n).map(|i| i.spec.time_step).unwrap_or(0.0);
                json!({"name": n, "time_step": dt})
            })
            .collect();
        let (ids, views) = {
            let r = self.registry();
            (r.instances.keys().copied().collect::<Vec<_>>(), r.views.clone())
        };
        let mut instances = Vec::new();
        for id in ids {
            if let Ok(v) = self.call(id, |a| describe(&a.instance)).await {
                instances.push(v);
            }
        }
        let views: Vec<Value> = views
            .into_iter()
            .map(|(view, instance)| json!({"view_id": view, "instance_id": instance}))
            .collect();
        json!({
            "type": "catalog",
            "integrators": integrators,
            "detectors": self.catalog.detectors.names(),
            "instances": instances,
            "views": views,
            "max_instances": self.config.max_instances,
        })
    }

    fn new_instance(&self, body: softbody_core::model::SoftBody) -> SimInstance {
        let mut i = SimInstance::new(0, body, &self.catalog);
        i.environment = self.config.environment.clone();
        i
    }

    /// Execute one request for connection `conn`, whose outgoing queue is
    /// `out`. Returns the ack payload.
    pub async fn handle(&self, conn: u64, out: &Outbox, req: Request) -> Result<Value, WireError> {
        use Request::*;
        match req {
            Catalog => Ok(self.catalog_message().await),
            Create { dimension, particle_count, layer_count, creation } => {
                let mut cp = creation
                    .unwrap_or_else(|| CreationParams::default_for(dimension.unwrap_or(Dimension::Two)));
                if let Some(l) = layer_count {
                    cp.layer_count = l;
                }
                if let Some(n) = particle_count {
                    cp.particle_count = per_layer(n, cp.layer_count)?;
                }
                self.check_capacity()?;
                let mut inst = SimInstance::from_creation(0, cp, &self.catalog)?;
                inst.environment = self.config.environment.clone();
                let object = object_value(&inst);
                let id = self.spawn(inst)?;
                Ok(json!({"instance_id": id, "object": object}))
            }
            ImportObject { document } => {
                let imported = import_object(&document.into_text())?;
                self.check_capacity()?;
                let mut inst = self.new_instance(imported.body);
                inst.creation = imported.creation;
                let object = object_value(&inst);
                let id = self.spawn(inst)?;
                Ok(json!({"instance_id": id, "object": object}))
            }
            ImportState { document } => {
                let loaded = load_state_str(&document.into_text(), 0, &self.catalog)?;
                self.check_capacity()?;
                let object = object_value(&loaded.instance);
                let id = self.spawn(loaded.instance)?;
                Ok(json!({"instance_id": id, "object": object, "warnings": loaded.warnings}))
            }
            Remove { instance_id } => {
                let mut r = self.registry();
                if r.views.remove(&instance_id).is_none() {
                    r.instances
                        .remove(&instance_id)
                        .ok_or_else(|| WireError::unknown_instance(instance_id))?;
                    r.views.retain(|_, target| *target != instance_id);
                }
                Ok(Value::Null)
            }
            Start { instance_id } => self.engine_op(instance_id, |i| i.start()).await,
            Pause { instance_id } => self.engine_op(instance_id, |i| i.pause()).await,
            Resume { instance_id } => self.engine_op(instance_id, |i| i.resume()).await,
            Step { instance_id, count } => {
                self.call(instance_id, move |a| {
                    match a.instance.status() {
                        Status::Paused => {
                            a.instance.resume()?;
                            let r = a.step_n(count);
                            if a.instance.status() == Status::Running {
                                a.instance.pause()?;
                            }
                            r?;
                        }
                        Status::Playback => {
                            for _ in 0..count {
                                a.playback_step()?;
                            }
                        }
                        Status::Running => {
                            return Err(WireError::from(EngineError::WrongStatus { actual: Status::Running }))
                        }
                    }
                    Ok(json!({"tick": a.instance.tick, "sim_time": a.instance.sim_time}))
                })
                .await?
            }
            SetParams { instance_id, params } => {
                self.call(instance_id, move |a| {
                    a.instance.set_params(&params)?;
                    let frame = a.instance.snapshot_frame(Vec::new());
                    a.publish(&frame);
                    Ok(json!({"object": object_value(&a.instance)}))
                })
                .await?
            }
            SwapAlgorithm { instance_id, kind, name } => {
                self.call(instance_id, move |a| {
                    a.instance
                        .swap_algorithm(kind.unwrap_or(AlgorithmKind::Integrator), &name, &a.catalog)?;
                    Ok(json!({"effective_dt": a.instance.effective_dt(&a.catalog)?}))
                })
                .await?
            }
            ApplyForce { instance_id, particle_ids, force, remaining_steps } => {
                let input = ExternalInput::impulse(particle_ids, force, remaining_steps);
                self.engine_op(instance_id, move |i| i.apply_user_force(input)).await
            }
            Drag { instance_id, particle_ids, target, stiffness, remaining_steps } => {
                let input = ExternalInput::drag(particle_ids, target, stiffness, remaining_steps);
                self.engine_op(instance_id, move |i| i.apply_user_force(input)).await
            }
            Attach { instance_id, other_instance_id, pairs, kind, hook_constant, damping_factor } => {
                let a = self.call(instance_id, |a| a.instance.clone()).await?;
                let b = self.call(other_instance_id, |a| a.instance.clone()).await?;
                let refs: Vec<_> = pairs
                    .iter()
                    .map(|&(pa, pb)| (ParticleRef::new(a.body.id, pa), ParticleRef::new(b.body.id, pb)))
                    .collect();
                let defaults = a.creation.as_ref().map(|c| (c.stiffness.structural, c.damping.structural));
                let (k, d) = defaults.unwrap_or((100.0, 1.0));
                let joined = attach_objects(
                    &a.body,
                    &b.body,
                    &refs,
                    kind.unwrap_or(SpringKind::Structural),
                    hook_constant.unwrap_or(k),
                    damping_factor.unwrap_or(d),
                )?;
                self.check_capacity()?;
                let mut inst = SimInstance::new(0, joined.body, &self.catalog);
                inst.environment = a.environment.clone();
                inst.params = a.params.clone();
                let object = object_value(&inst);
                let id = self.spawn(inst)?;
                Ok(json!({"instance_id": id, "object": object, "new_springs": joined.new_springs}))
            }
            AddInstance { instance_id, mode, integrator } => match mode {
                AddInstanceMode::SameAlgorithmNewView => {
                    self.sender(instance_id)?;
                    let mut r = self.registry();
                    let target = r.views.get(&instance_id).copied().unwrap_or(instance_id);
                    let view = r.next_id;
                    r.next_id += 1;
                    r.views.insert(view, target);
                    Ok(json!({"view_id": view, "instance_id": target}))
                }
                AddInstanceMode::NewAlgorithm => {
                    let name = integrator.ok_or_else(|| {
                        WireError::new("INVALID_PARAMS", "new_algorithm needs an `integrator`")
                    })?;
                    self.check_capacity()?;
                    let copy = self
                        .call(instance_id, move |a| a.instance.fork(0, &name, &a.catalog))
                        .await??;
                    let object = object_value(&copy);
                    let id = self.spawn(copy)?;
                    Ok(json!({"instance_id": id, "object": object}))
                }
            },
            SaveState { instance_id } => {
                let doc = self.call(instance_id, |a| save_state_string(&a.instance)).await?;
                Ok(json!({"document": doc}))
            }
            SetEnvironment { instance_id, document } => {
                let env = load_environment_str(&document.into_text())?;
                self.call(instance_id, move |a| a.instance.environment = env.colliders)
                    .await?;
                Ok(Value::Null)
            }
            StartSeries { instance_id, stride, interval } => {
                self.engine_op(instance_id, move |i| i.start_recording(stride, interval)).await
            }
            StopSeries { instance_id } => {
                let series = self.call(instance_id, |a| a.instance.stop_recording()).await??;
                let frames = series.frames.len();
                let doc = save_series_string(&series)?;
                Ok(json!({"document": doc, "frame_count": frames}))
            }
            StartPlayback { instance_id, document, autoplay } => {
                let series = load_series_str(&document.into_text())?;
                let frames = series.frames.len();
                self.call(instance_id, move |a| {
                    a.instance.start_playback(series)?;
                    a.autoplay = autoplay;
                    Ok::<_, WireError>(json!({"frame_count": frames, "object": object_value(&a.instance)}))
                })
                .await?
            }
            StopPlayback { instance_id } => self.engine_op(instance_id, |i| i.stop_playback()).await,
            Subscribe { instance_id, rate_hz } => {
                if !(rate_hz > 0.0 && rate_hz.is_finite()) {
                    return Err(WireError::new("INVALID_PARAMS", "rate_hz must be positive"));
                }
                let out = out.clone();
                self.call(instance_id, move |a| a.subscribe(conn, instance_id, rate_hz, out))
                    .await?;
                Ok(Value::Null)
            }
            Unsubscribe { instance_id } => {
                self.call(instance_id, move |a| a.unsubscribe(conn, instance_id)).await?;
                Ok(Value::Null)
            }
        }
    }

    async fn engine_op(
        &self,
        id: u64,
        f: impl FnOnce(&mut SimInstance) -> Result<(), EngineError> + Send + 'static,
    ) -> Result<Value, WireError> {
        self.call(id, move |a| {
            f(&mut a.instance)?;
            Ok(json!({"status": a.instance.status().to_string()}))
        })
        .await?
    }

    async fn drop_connection(&self, conn: u64) {
        let ids: Vec<u64> = self.registry().instances.keys().copied().collect();
        for id in ids {
            let _ = self.call(id, move |a| a.drop_connection(conn)).await;
        }
    }
}

fn per_layer(total: usize, layers: usize) -> Result<usize, WireError> {
    if layers == 0 || !total.is_multiple_of(layers) {
        return Err(WireError::new(
            "INVALID_PARAMS",
            format!("particle_count {total} is not divisible by layer_count {layers}"),
        ));
    }
    Ok(total / layers)
}

fn object_value(i: &SimInstance) -> Value {
    serde_json::from_str(&export_object(&i.body, i.creation.as_ref())).expect("exported object is JSON")
}

fn describe(i: &SimInstance) -> Value {
    json!({
        "instance_id": i.id,
        "status": i.status().to_string(),
        "integrator": i.integrator,
        "detector": i.detector,
        "dimension": i.body.dimension.value(),
        "particle_count": i.body.particle_count(),
        "tick": i.tick,
    })
}

pub fn router(hub: Arc<Hub>) -> Router {
    let static_dir = hub.config.static_dir.clone();
    let router = Router::new().route("/ws", get(ws_upgrade)).with_state(hub);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> Response {
    ws.on_upgrade(move |socket| connection(hub, socket))
}

async fn connection(hub: Arc<Hub>, socket: WebSocket) {
    let conn = hub.next_conn.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbox) = mpsc::channel::<String>(OUTBOX);
    let writer = tokio::spawn(async move {
        while let Some(text) = outbox.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    let _ = out.send(hub.catalog_message().await.to_string()).await;
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(_) => {
                let e = WireError::new("PARSE", "binary frames are not supported");
                let _ = out.send(protocol::error(None, &e)).await;
                continue;
            }
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match protocol::parse(&text) {
            Ok(Envelope { request_id, request }) => match hub.handle(conn, &out, request).await {
                Ok(payload) if payload.get("type").is_some() => {
                    let mut payload = payload;
                    if let Some(id) = &request_id {
                        payload["request_id"] = json!(id);
                    }
                    payload.to_string()
                }
                Ok(payload) => protocol::ack(request_id.as_deref(), payload),
                Err(e) => protocol::error(request_id.as_deref(), &e),
            },
            Err((request_id, e)) => protocol::error(request_id.as_deref(), &e),
        };
        if out.send(reply).await.is_err() {
            break;
        }
    }
    hub.drop_connection(conn).await;
    drop(out);
    let _ = writer.await;
}

/// Bind and return the bound address together with the serving future.
pub async fn bind(
    config: ServerConfig,
) -> Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>), BindError> {
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| BindError { addr: addr.clone(), source })?;
    let local = listener.local_addr().map_err(|source| BindError { addr, source })?;
    let app = router(Hub::new(config));
    Ok((local, async move { axum::serve(listener, app).await }))
}
