//! Load generation, the open-loop benchmark driver, report rendering and the
//! accuracy-parity task for the routed deployment.

mod load;
mod parity;
mod report;
mod runner;

pub use load::{
    arrival_offsets, generate_load, tier_request, LoadSpec, ScheduledRequest, DEFAULT_DECODE_LEN, DEFAULT_PROMPT_LEN, TIERS,
    TIER_TILE,
};
pub use parity::{flash_parity, parity_requests, ParityConfig, ParityReport};
pub use report::{emit_report, read_report_csv, ReportFormat, ReportRow, COLUMNS};
pub use runner::{
    apply_speedups, calibrated_rate, monolith_capacity, run_benchmark, run_topology, BenchReport, BenchRun, TRIM,
};
