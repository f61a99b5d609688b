//! Layers, initialization, dropout, the Adam optimizer and parameter
//! checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod dropout;
pub mod init;
pub mod layers;

pub use adam::AdamState;
pub use dropout::{dropout, Ctx};
pub use init::InitScheme;
pub use layers::{bilstm, Activation, BiLstm, Dense, Embedding, LstmCell, PAD, UNK};
