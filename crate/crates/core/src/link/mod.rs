//! Master ↔ slave transport: wire codec, impaired channels and the node loop.

mod channel;
mod frame;
mod nodes;

pub use channel::{Channel, ChannelModel, ChannelStats};
pub use frame::{decode, encode, CodecError, Frame, FrameKind, JointSample, FRAME_MAGIC, FRAME_VERSION, HEADER_LEN};
pub use nodes::*;
