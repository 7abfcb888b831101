//! `SPKF` spike-event files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "SPKF" | version u16 | n_neurons u32 | n_samples u32 | n_classes u16
//! per sample: label u16 | count u32 | count x (neuron_id u32, time_ms f32)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::{InputSpike, Sample};

pub const MAGIC: &[u8; 4] = b"SPKF";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeDataset {
    pub n_neurons: u32,
    pub n_classes: u16,
    pub samples: Vec<Sample>,
}

impl SpikeDataset {
    /// Checks neuron ids, labels and per-neuron time ordering.
    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.samples.iter().enumerate() {
            if s.label >= self.n_classes as usize {
                return Err(Error::InvalidInput(format!("sample {k}: label {} out of range", s.label)));
            }
            // Keyed by the neurons present: the declared count may be huge.
            let mut last = std::collections::HashMap::new();
            for sp in &s.inputs {
                if sp.neuron >= self.n_neurons as usize {
                    return Err(Error::InvalidInput(format!("sample {k}: neuron {} out of range", sp.neuron)));
                }
                let prev = last.insert(sp.neuron, sp.time).unwrap_or(f64::NEG_INFINITY);
                if !(sp.time >= 0.0) || !sp.time.is_finite() || sp.time < prev {
                    return Err(Error::InvalidInput(format!(
                        "sample {k}: bad or decreasing time {} on neuron {}",
                        sp.time, sp.neuron
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn encode_spike_file(data: &SpikeDataset) -> Result<Vec<u8>> {
    data.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&data.n_neurons.to_le_bytes());
    let n = u32::try_from(data.samples.len()).map_err(|_| Error::InvalidInput("too many samples".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&data.n_classes.to_le_bytes());
    for s in &data.samples {
        out.extend_from_slice(&(s.label as u16).to_le_bytes());
        out.extend_from_slice(&(s.inputs.len() as u32).to_le_bytes());
        for sp in &s.inputs {
            out.extend_from_slice(&(sp.neuron as u32).to_le_bytes());
            out.extend_from_slice(&(sp.time as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(Error::parse(self.pos as u64, format!("truncated {what}")));
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(a)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(what)?))
    }
}

pub fn decode_spike_file(buf: &[u8]) -> Result<SpikeDataset> {
    let mut r = Reader { buf, pos: 0 };
    if &r.take::<4>("magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let n_neurons = r.u32("neuron count")?;
    let n_samples = r.u32("sample count")?;
    let n_classes = r.u16("class count")?;
    // Each sample needs at least 6 bytes; never trust the header for allocation.
    let mut samples = Vec::with_capacity((n_samples as usize).min((buf.len() - r.pos) / 6));
    for _ in 0..n_samples {
        let at = r.pos as u64;
        let label = r.u16("label")?;
        if label >= n_classes {
            return Err(Error::parse(at, format!("label {label} >= {n_classes}")));
        }
        let count = r.u32("spike count")? as usize;
        let remaining = (buf.len() - r.pos) / 8;
        if count > remaining {
            return Err(Error::parse(r.pos as u64, format!("{count} spikes declared, {remaining} present")));
        }
        let mut inputs = Vec::with_capacity(count);
        let mut last = std::collections::HashMap::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let neuron = r.u32("neuron id")?;
            if neuron >= n_neurons {
                return Err(Error::parse(at, format!("neuron {neuron} >= {n_neurons}")));
            }
            let time = r.f32("spike time")?;
            if !(time >= 0.0) || !time.is_finite() {
                return Err(Error::parse(at + 4, format!("bad spike time {time}")));
            }
            let prev = last.insert(neuron, time).unwrap_or(0.0);
            if time < prev {
                return Err(Error::parse(at + 4, format!("decreasing time on neuron {neuron}")));
            }
            inputs.push(InputSpike {
                neuron: neuron as usize,
                time: time as f64,
            });
        }
        samples.push(Sample {
            inputs,
            label: label as usize,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::parse(r.pos as u64, "trailing bytes"));
    }
    Ok(SpikeDataset {
        n_neurons,
        n_classes,
        samples,
    })
}

pub fn write_spike_file(path: &Path, data: &SpikeDataset) -> Result<()> {
    fs::write(path, encode_spike_file(data)?)?;
    Ok(())
}

pub fn read_spike_file(path: &Path) -> Result<SpikeDataset> {
    decode_spike_file(&fs::read(path)?)
}
