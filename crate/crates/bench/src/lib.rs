//! Fixed benchmark instances shared by the criterion benches.

use cdpkit::experiments::{
    gen_balanced_cut, gen_center_of_mass, BalancedCut, BalancedCutConfig, CenterOfMass,
    CenterOfMassConfig,
};
use cdpkit::AlmOptions;

pub const BALANCED_CUT_SIZES: [usize; 3] = [50, 100, 200];

pub fn balanced_cut(m: usize) -> BalancedCut {
    gen_balanced_cut(&BalancedCutConfig {
        m,
        q: 2,
        rho: 0.1,
        seed: 7,
    })
    .expect("benchmark instance generates")
}

pub fn center_of_mass(m: usize) -> CenterOfMass {
    gen_center_of_mass(&CenterOfMassConfig {
        m,
        q: 4,
        n_samples: 100,
        r: 0.01,
        seed: 1,
    })
    .expect("benchmark instance generates")
}

/// Solver options of the benchmark protocol: fixed penalty, bounded time.
pub fn bench_options() -> AlmOptions {
    AlmOptions {
        beta_adapt: false,
        time_budget: Some(120.0),
        ..Default::default()
    }
}
