//! Differentiation substrate: one network definition, evaluated either on a
//! reverse-mode tape (parameter gradients) or on forward Laplacian jets
//! (electron-coordinate gradient and Laplacian).

pub mod backend;
pub mod cg;
pub mod jet;
pub mod linalg;
pub mod params;
pub mod tape;

pub use backend::{Backend, LeafKey, Unary};
pub use jet::{Jet, JetBackend};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
