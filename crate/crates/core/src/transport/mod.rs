//! Wire layer between the vision and language servers: bfloat16 codec,
//! feature frames, control messages and framed TCP streams.

mod bf16;
mod control;
mod error;
mod frame;
mod stream;
mod wire;

pub use bf16::{bf16_decode, bf16_encode, bf16_from_f32, bf16_round, bf16_to_f32, decode_slice, encode_slice, BF16_NAN};
pub use control::{
    decode_control, encode_control, Abort, ControlMessage, Expect, ResponseMsg, ResponseStatus, Submit, Timings,
    CONTROL_MAGIC,
};
pub use error::{FrameError, TransportError};
pub use frame::{decode_frame, encode_frame, FeatureFrame, FRAME_FIXED_LEN, FRAME_MAGIC};
pub use stream::{
    encode_message, read_message, write_message, AssemblyError, FeatureSender, MessageReader, RequestAssembler,
    WireMessage, DEFAULT_WINDOW,
};
pub use wire::{HEADER_LEN, MAX_BODY_LEN, WIRE_VERSION};
