//! Name-keyed factories for interchangeable strategies.
//!
//! The run config names its gradient link (`mode`) and optimizer
//! (`optimizer.kind`) as strings; the registries below turn those names into
//! trait objects.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::learner::{Adam, Optimizer, OptimizerSpec, Sgd};
use crate::link::{ErrorFreeLink, GradientLink, OverTheAirLink};

pub type Factory<T, A> = fn(&A) -> Result<Box<T>>;

pub struct Registry<T: ?Sized, A> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T, A>)>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds `name`; a later registration under the same name replaces the earlier one.
    pub fn register(mut self, name: &'static str, factory: Factory<T, A>) -> Self {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown {} '{name}'; known: {}",
                    self.kind,
                    self.names().join(", ")
                ))
            })?;
        factory(args)
    }
}

/// Gradient links, keyed by the config's `mode`.
pub fn links() -> Registry<dyn GradientLink, RunConfig> {
    Registry::<dyn GradientLink, RunConfig>::new("mode")
        .register("ota", |c| Ok(Box::new(OverTheAirLink::from_config(c))))
        .register("error_free", |_| Ok(Box::new(ErrorFreeLink)))
}

/// Optimizers, keyed by `optimizer.kind`.
pub fn optimizers() -> Registry<dyn Optimizer, OptimizerSpec> {
    Registry::<dyn Optimizer, OptimizerSpec>::new("optimizer")
        .register("sgd", |o| {
            Ok(Box::new(Sgd {
                learning_rate: o.learning_rate,
            }))
        })
        .register("adam", |o| {
            Ok(Box::new(Adam::new(o.learning_rate, o.beta1, o.beta2, o.epsilon)))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names() {
        assert_eq!(links().names(), vec!["ota", "error_free"]);
        assert_eq!(optimizers().names(), vec!["sgd", "adam"]);
    }

    #[test]
    fn create_by_name() {
        let cfg = RunConfig::minimal();
        assert_eq!(links().create("ota", &cfg).unwrap().name(), "ota");
        assert_eq!(links().create("error_free", &cfg).unwrap().name(), "error_free");
        let spec = OptimizerSpec::sgd(0.1);
        assert_eq!(optimizers().create("sgd", &spec).unwrap().name(), "sgd");
        assert!(matches!(links().create("digital", &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn reregistration_replaces() {
        let r: Registry<dyn Optimizer, OptimizerSpec> = optimizers().register("sgd", |o| {
            Ok(Box::new(Adam::new(o.learning_rate, 0.5, 0.5, 1.0)))
        });
        assert_eq!(r.names(), vec!["adam", "sgd"]);
        assert_eq!(r.create("sgd", &OptimizerSpec::sgd(0.1)).unwrap().name(), "adam");
    }
}
