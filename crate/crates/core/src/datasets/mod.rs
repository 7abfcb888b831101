//! Input data: the procedural Yin-Yang task and a portable spike-event file format.

pub mod spikefile;
pub mod yinyang;

pub use spikefile::{read_spike_file, write_spike_file, SpikeDataset};
pub use yinyang::{encode_yy, generate_yinyang, YinYangClass, YinYangSample};
