//! Config-driven sweeps over the asymptotic predictions, phase diagrams and
//! Monte Carlo simulations, written as CSV or JSON tables.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{
    cmd_phase, cmd_plotdata, cmd_predict, cmd_simulate, curves, meta_path, write_report, Manifest, Report,
};
pub use config::{Axis, Format, Grid, Output, Overrides, PhaseBlock, SimBlock, SweepConfig};
pub use table::{Cell, Row, Table};
