//! From-scratch network engine for the equalizer families: batched forward
//! and backward passes, Adam, sliding-window training and an instrumented
//! forward pass that counts every real multiplication it executes.

pub mod arch;
pub mod equalizer;
mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use arch::{Architecture, Family, DEFAULT_MEMORY, INPUT_FEATURES, OUTPUT_WIDTH};
pub use equalizer::{Equalized, Equalizer, ModelHeader};
pub use network::{Counted, Network};
pub use tensor::{Batch, MulCounter};
pub use train::{train, Adam, SampleSource, Samples, TrainConfig, TrainReport};
