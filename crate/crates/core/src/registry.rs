//! Named algorithm catalogs with runtime registration.

use std::sync::{Arc, RwLock};

use indexmap::IndexMap;
use thiserror::Error;

use crate::collision::{detect_contacts, detect_contacts_sweep, Collider, Detection};
use crate::integrators::{self, Integrator};
use crate::model::SoftBody;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("an algorithm named {0:?} is already registered")]
    DuplicateName(String),
    #[error("no algorithm named {0:?}")]
    UnknownAlgorithm(String),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::DuplicateName(_) => "DUPLICATE_NAME",
            RegistryError::UnknownAlgorithm(_) => "UNKNOWN_ALGORITHM",
        }
    }
}

/// Insertion-ordered map from name to entry. Reads run concurrently;
/// registration takes the write lock.
pub struct Registry<T> {
    entries: RwLock<IndexMap<String, T>>,
}

impl<T: Clone> Registry<T> {
    pub fn new() -> Self {
        Registry {
            entries: RwLock::new(IndexMap::new()),
        }
    }

    pub fn register(&self, name: impl Into<String>, entry: T) -> Result<(), RegistryError> {
        let name = name.into();
        let mut entries = self.entries.write().expect("registry lock poisoned");
        if entries.contains_key(&name) {
            return Err(RegistryError::DuplicateName(name));
        }
        entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<T, RegistryError> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownAlgorithm(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.read().expect("registry lock poisoned").contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .keys()
            .cloned()
            .collect()
    }
}

impl<T: Clone> Default for Registry<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub type DetectFn = Arc<dyn Fn(&SoftBody, &[Collider]) -> Detection + Send + Sync>;

pub const BRUTE_FORCE: &str = "bruteForce";
pub const SWEEP_AND_PRUNE: &str = "sweepAndPrune";

/// The integrator and collision-detector catalogs shared by all instances.
pub struct Catalog {
    pub integrators: Registry<Integrator>,
    pub detectors: Registry<DetectFn>,
}

impl Catalog {
    /// Catalog with the built-in algorithms.
    pub fn with_builtins() -> Catalog {
        let catalog = Catalog {
            integrators: Registry::new(),
            detectors: Registry::new(),
        };
        for integrator in integrators::builtin() {
            catalog
                .integrators
                .register(integrator.spec.name.clone(), integrator)
                .expect("builtin names are unique");
        }
        catalog
            .detectors
            .register(BRUTE_FORCE, Arc::new(detect_contacts) as DetectFn)
            .expect("builtin names are unique");
        catalog
            .detectors
            .register(SWEEP_AND_PRUNE, Arc::new(detect_contacts_sweep) as DetectFn)
            .expect("builtin names are unique");
        catalog
    }

    pub fn register_integrator(&self, integrator: Integrator) -> Result<(), RegistryError> {
        self.integrators.register(integrator.spec.name.clone(), integrator)
    }

    pub fn register_detector(&self, name: &str, detect: DetectFn) -> Result<(), RegistryError> {
        self.detectors.register(name, detect)
    }

    pub fn default_integrator(&self) -> String {
        integrators::SEMI_IMPLICIT_EULER.to_string()
    }

    pub fn default_detector(&self) -> String {
        BRUTE_FORCE.to_string()
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::with_builtins()
    }
}
