//! Shared fixtures for the benchmarks.

use edualloc::model::ExtensiveMode;
use edualloc::population::{generate_population, simulate_population, BudgetSampler};
use edualloc::{HouseholdRecord, HouseholdSpec, ParentEduc, PopulationConfig, Theta};

/// Two-child households with budgets uniform on 3..15 years per child.
pub fn households(n: usize, seed: u64) -> Vec<HouseholdSpec> {
    let cfg = PopulationConfig::two_child(n, ParentEduc::None, BudgetSampler::Uniform { low: 3.0, high: 15.0 }, seed);
    generate_population(&cfg).expect("valid fixture config")
}

/// Simulated outcomes for [`households`] at `theta`.
pub fn records(n: usize, theta: &Theta, seed: u64) -> Vec<HouseholdRecord> {
    simulate_population(&households(n, seed), theta, seed + 1, ExtensiveMode::Bernoulli).expect("fixture simulates")
}
