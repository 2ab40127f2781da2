//! Websocket teleoperation bridge: snapshots out, operator commands in.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{decode_command, encode_snapshot, Command, Control, ProtocolError, Snapshot};
pub use server::{start, ServeOptions, TeleopServer};
pub use session::{CommandSlot, TeleopSession};
