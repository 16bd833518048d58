//! Explicit time integrators over particle position/velocity state.
//!
//! Every step function takes the current states, a time step and a force
//! evaluator, and returns the advanced states without touching the input.
//! Pinned particles keep their position and have zero velocity.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::forces::ForceError;
use crate::vec3::Vec3;

pub const SEMI_IMPLICIT_EULER: &str = "semiImplicitEuler";
pub const EXPLICIT_EULER: &str = "explicitEuler";
pub const MIDPOINT: &str = "midpoint";
pub const RK4: &str = "rk4";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub pinned: bool,
}

impl ParticleState {
    pub fn free(position: Vec3, velocity: Vec3) -> Self {
        Self {
            position,
            velocity,
            pinned: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("integration produced a non-finite state")]
    NonFiniteState,
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error(transparent)]
    Force(#[from] ForceError),
}

impl IntegrateError {
    pub fn code(&self) -> &'static str {
        match self {
            IntegrateError::NonFiniteState => "NONFINITE_STATE",
            IntegrateError::InvalidTimeStep(_) => "INVALID_PARAMS",
            IntegrateError::Force(e) => e.code(),
        }
    }
}

/// Maps candidate particle states to per-particle accelerations. Must give the
/// same output for the same input.
pub trait ForceEvaluator {
    fn accelerations(&mut self, states: &[ParticleState]) -> Result<Vec<Vec3>, ForceError>;
}

impl<F> ForceEvaluator for F
where
    F: FnMut(&[ParticleState]) -> Result<Vec<Vec3>, ForceError>,
{
    fn accelerations(&mut self, states: &[ParticleState]) -> Result<Vec<Vec3>, ForceError> {
        self(states)
    }
}

pub type StepFn = Arc<
    dyn Fn(&[ParticleState], f64, &mut dyn ForceEvaluator) -> Result<Vec<ParticleState>, IntegrateError>
        + Send
        + Sync,
>;

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorSpec {
    pub name: String,
    /// Default time step in seconds.
    pub time_step: f64,
}

impl IntegratorSpec {
    pub fn new(name: impl Into<String>, time_step: f64) -> Result<Self, IntegrateError> {
        if !(time_step > 0.0 && time_step.is_finite()) {
            return Err(IntegrateError::InvalidTimeStep(time_step));
        }
        Ok(Self {
            name: name.into(),
            time_step,
        })
    }
}

#[derive(Clone)]
pub struct Integrator {
    pub spec: IntegratorSpec,
    pub step: StepFn,
}

impl fmt::Debug for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrator").field("spec", &self.spec).finish()
    }
}

impl Integrator {
    pub fn new(
        name: &str,
        time_step: f64,
        step: impl Fn(&[ParticleState], f64, &mut dyn ForceEvaluator) -> Result<Vec<ParticleState>, IntegrateError>
            + Send
            + Sync
            + 'static,
    ) -> Result<Self, IntegrateError> {
        Ok(Integrator {
            spec: IntegratorSpec::new(name, time_step)?,
            step: Arc::new(step),
        })
    }

    pub fn step(
        &self,
        states: &[ParticleState],
        dt: f64,
        eval: &mut dyn ForceEvaluator,
    ) -> Result<Vec<ParticleState>, IntegrateError> {
        (self.step)(states, dt, eval)
    }
}

/// The shipped integrators with their default time steps.
pub fn builtin() -> Vec<Integrator> {
    vec![
        Integrator::new(SEMI_IMPLICIT_EULER, 0.005, step_semi_implicit_euler).unwrap(),
        Integrator::new(EXPLICIT_EULER, 0.002, step_explicit_euler).unwrap(),
        Integrator::new(MIDPOINT, 0.005, step_midpoint).unwrap(),
        Integrator::new(RK4, 0.01, step_rk4).unwrap(),
    ]
}

fn check_dt(dt: f64) -> Result<(), IntegrateError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(IntegrateError::InvalidTimeStep(dt))
    }
}

fn finish(original: &[ParticleState], mut next: Vec<ParticleState>) -> Result<Vec<ParticleState>, IntegrateError> {
    for (n, o) in next.iter_mut().zip(original) {
        if o.pinned {
            n.position = o.position;
            n.velocity = Vec3::ZERO;
            n.pinned = true;
        }
        if !n.position.is_finite() || !n.velocity.is_finite() {
            return Err(IntegrateError::NonFiniteState);
        }
    }
    Ok(next)
}

fn accelerations(
    eval: &mut dyn ForceEvaluator,
    states: &[ParticleState],
) -> Result<Vec<Vec3>, IntegrateError> {
    let mut acc = eval.accelerations(states)?;
    for (a, s) in acc.iter_mut().zip(states) {
        if s.pinned {
            *a = Vec3::ZERO;
        }
    }
    Ok(acc)
}

/// `v += a·dt`, then `x += v·dt` with the updated velocity.
pub fn step_semi_implicit_euler(
    states: &[ParticleState],
    dt: f64,
    eval: &mut dyn ForceEvaluator,
) -> Result<Vec<ParticleState>, IntegrateError> {
    check_dt(dt)?;
    let acc = accelerations(eval, states)?;
    let next = states
        .iter()
        .zip(&acc)
        .map(|(s, &a)| {
            let velocity = s.velocity + a * dt;
            ParticleState {
                position: s.position + velocity * dt,
                velocity,
                pinned: s.pinned,
            }
        })
        .collect();
    finish(states, next)
}

/// `x += v_old·dt`, `v += a(x_old, v_old)·dt`.
pub fn step_explicit_euler(
    states: &[ParticleState],
    dt: f64,
    eval: &mut dyn ForceEvaluator,
) -> Result<Vec<ParticleState>, IntegrateError> {
    check_dt(dt)?;
    let acc = accelerations(eval, states)?;
    let next = states
        .iter()
        .zip(&acc)
        .map(|(s, &a)| ParticleState {
            position: s.position + s.velocity * dt,
            velocity: s.velocity + a * dt,
            pinned: s.pinned,
        })
        .collect();
    finish(states, next)
}

/// Second-order Runge-Kutta (midpoint rule).
pub fn step_midpoint(
    states: &[ParticleState],
    dt: f64,
    eval: &mut dyn ForceEvaluator,
) -> Result<Vec<ParticleState>, IntegrateError> {
    check_dt(dt)?;
    let half = 0.5 * dt;
    let a1 = accelerations(eval, states)?;
    let mid: Vec<ParticleState> = states
        .iter()
        .zip(&a1)
        .map(|(s, &a)| ParticleState {
            position: s.position + s.velocity * half,
            velocity: s.velocity + a * half,
            pinned: s.pinned,
        })
        .collect();
    let a2 = accelerations(eval, &mid)?;
    let next = states
        .iter()
        .zip(mid.iter().zip(&a2))
        .map(|(s, (m, &a))| ParticleState {
            position: s.position + m.velocity * dt,
            velocity: s.velocity + a * dt,
            pinned: s.pinned,
        })
        .collect();
    finish(states, next)
}

/// Classical fourth-order Runge-Kutta on the coupled (x, v) system.
pub fn step_rk4(
    states: &[ParticleState],
    dt: f64,
    eval: &mut dyn ForceEvaluator,
) -> Result<Vec<ParticleState>, IntegrateError> {
    check_dt(dt)?;
    let offset = |base: &[ParticleState], dx: &[Vec3], dv: &[Vec3], h: f64| -> Vec<ParticleState> {
        base.iter()
            .zip(dx.iter().zip(dv))
            .map(|(s, (&x, &v))| ParticleState {
                position: s.position + x * h,
                velocity: s.velocity + v * h,
                pinned: s.pinned,
            })
            .collect()
    };
    let v1: Vec<Vec3> = states.iter().map(|s| s.velocity).collect();
    let a1 = accelerations(eval, states)?;
    let s2 = offset(states, &v1, &a1, 0.5 * dt);
    let v2: Vec<Vec3> = s2.iter().map(|s| s.velocity).collect();
    let a2 = accelerations(eval, &s2)?;
    let s3 = offset(states, &v2, &a2, 0.5 * dt);
    let v3: Vec<Vec3> = s3.iter().map(|s| s.velocity).collect();
    let a3 = accelerations(eval, &s3)?;
    let s4 = offset(states, &v3, &a3, dt);
    let v4: Vec<Vec3> = s4.iter().map(|s| s.velocity).collect();
    let a4 = accelerations(eval, &s4)?;

    let sixth = dt / 6.0;
    let next = states
        .iter()
        .enumerate()
        .map(|(i, s)| ParticleState {
            position: s.position + (v1[i] + (v2[i] + v3[i]) * 2.0 + v4[i]) * sixth,
            velocity: s.velocity + (a1[i] + (a2[i] + a3[i]) * 2.0 + a4[i]) * sixth,
            pinned: s.pinned,
        })
        .collect();
    finish(states, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(a: Vec3) -> impl FnMut(&[ParticleState]) -> Result<Vec<Vec3>, ForceError> {
        move |s: &[ParticleState]| Ok(vec![a; s.len()])
    }

    fn one(x: f64, v: f64) -> Vec<ParticleState> {
        vec![ParticleState::free(Vec3::new(x, 0.0, 0.0), Vec3::new(v, 0.0, 0.0))]
    }

    #[test]
    fn semi_implicit_one_step() {
        let out = step_semi_implicit_euler(&one(2.0, 0.0), 0.1, &mut constant(Vec3::new(-10.0, 0.0, 0.0))).unwrap();
        assert_eq!(out[0].velocity.x, -1.0);
        assert!((out[0].position.x - 1.9).abs() < 1e-15);
    }

    #[test]
    fn explicit_uses_old_velocity() {
        let out = step_explicit_euler(&one(2.0, 0.0), 0.1, &mut constant(Vec3::new(-10.0, 0.0, 0.0))).unwrap();
        assert_eq!(out[0].position.x, 2.0);
        assert_eq!(out[0].velocity.x, -1.0);
    }

    #[test]
    fn zero_acceleration_is_straight_line() {
        for step in [step_semi_implicit_euler, step_explicit_euler, step_midpoint, step_rk4] {
            let out = step(&one(0.0, 1.0), 0.5, &mut constant(Vec3::ZERO)).unwrap();
            assert_eq!(out[0].position.x, 0.5);
            assert_eq!(out[0].velocity.x, 1.0);
        }
    }

    #[test]
    fn constant_acceleration_exact_for_second_order_and_up() {
        let out = step_midpoint(&one(0.0, 0.0), 0.1, &mut constant(Vec3::new(-10.0, 0.0, 0.0))).unwrap();
        assert!((out[0].position.x + 0.05).abs() < 1e-12);
        assert!((out[0].velocity.x + 1.0).abs() < 1e-12);
        let out = step_rk4(&one(0.0, 0.0), 0.1, &mut constant(Vec3::new(-9.81, 0.0, 0.0))).unwrap();
        assert!((out[0].position.x + 0.04905).abs() < 1e-12);
        assert!((out[0].velocity.x + 0.981).abs() < 1e-12);
    }

    #[test]
    fn pinned_particles_do_not_move() {
        let mut s = one(3.0, 0.0);
        s[0].pinned = true;
        for step in [step_semi_implicit_euler, step_explicit_euler, step_midpoint, step_rk4] {
            let out = step(&s, 0.1, &mut constant(Vec3::new(0.0, -9.81, 0.0))).unwrap();
            assert_eq!(out, s);
        }
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let err = step_semi_implicit_euler(&one(0.0, 0.0), 0.1, &mut constant(Vec3::new(f64::INFINITY, 0.0, 0.0)));
        assert_eq!(err, Err(IntegrateError::NonFiniteState));
    }

    #[test]
    fn bad_time_step_is_rejected() {
        assert!(matches!(
            step_rk4(&one(0.0, 0.0), 0.0, &mut constant(Vec3::ZERO)),
            Err(IntegrateError::InvalidTimeStep(_))
        ));
        assert!(IntegratorSpec::new("x", -1.0).is_err());
    }
}
