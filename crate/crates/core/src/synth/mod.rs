//! Ground-truth patient simulator used in place of clinical exports.

pub mod behavior;
pub mod generator;
pub mod pd;
pub mod pk;

pub use behavior::{BehaviorConfig, BehaviorPolicy};
pub use generator::{
    case_id, generate_case, generate_case_with_policy, generate_cases, generate_dataset, simulate,
    write_dataset, CaseMeta, GeneratedCase, Manifest, Simulation, SynthConfig, VitalBaseline,
};
pub use pd::{bis_lag_step, pd_bis, PdParams};
pub use pk::{pk_step, Drug, PkAmounts, PkParams};
