//! Live teleoperation: a fixed-rate session loop that owns the simulator,
//! filter and map, and a WebSocket front end that feeds it pilot commands
//! and fans out state snapshots.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, Snapshot};
pub use server::{serve, start, RunningServer, ServeError, DEFAULT_PORT};
pub use session::Session;
