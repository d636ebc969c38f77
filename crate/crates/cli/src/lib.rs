//! Simulator for gatekeeper tags and phones.
//!
//! [`tagfile`] provisions and reads tag images, [`client`] talks to the
//! organization server, [`scenario`] replays scripted runs against a server
//! in test mode and [`stress`] drives concurrent check-ins.

pub mod client;
pub mod scenario;
pub mod stress;
pub mod tagfile;
