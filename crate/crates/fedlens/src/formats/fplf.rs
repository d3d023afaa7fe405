use std::path::Path;

use fedlens_core::linalg::Matrix;
use fedlens_core::metrics::{FeatureMatrix, Phase};

use super::{DecodeError, Reader};
use crate::error::{CliError, Result};

pub const FPLF_VERSION: u16 = 1;
const HEADER_LEN: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDumpHeader {
    pub version: u16,
    pub n: u32,
    pub d: u32,
    pub layer: u16,
    /// 0 pre, 1 post.
    pub phase: u8,
    pub round: u16,
}

impl FeatureDumpHeader {
    pub fn phase(&self) -> Option<Phase> {
        match self.phase {
            0 => Some(Phase::Pre),
            1 => Some(Phase::Post),
            _ => None,
        }
    }

    fn payload_len(&self) -> usize {
        self.n as usize * self.d as usize * 4 + self.n as usize * 2
    }
}

/// One layer's features at one round, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub header: FeatureDumpHeader,
    pub values: Vec<f32>,
    pub labels: Vec<u16>,
}

impl FeatureDump {
    pub fn new(features: &Matrix, labels: &[usize], layer: usize, phase: Phase, round: usize) -> Result<Self> {
        let phase = match phase {
            Phase::Pre => 0,
            Phase::Post => 1,
            other => return Err(CliError::config("output.dump_features", format!("cannot dump phase {other}"))),
        };
        let narrow = |v: usize, what: &str| -> Result<u16> {
            u16::try_from(v).map_err(|_| CliError::config("output.dump_features", format!("{what} {v} exceeds u16")))
        };
        let header = FeatureDumpHeader {
            version: FPLF_VERSION,
            n: features.rows() as u32,
            d: features.cols() as u32,
            layer: narrow(layer, "layer")?,
            phase,
            round: narrow(round, "round")?,
        };
        let labels = labels.iter().map(|&y| narrow(y, "label")).collect::<Result<_>>()?;
        Ok(Self { header, values: features.as_slice().iter().map(|&v| v as f32).collect(), labels })
    }

    pub fn to_feature_matrix(&self, num_classes: usize) -> fedlens_core::Result<FeatureMatrix> {
        let values = self.values.iter().map(|&v| v as f64).collect();
        let m = Matrix::new(self.header.n as usize, self.header.d as usize, values)?;
        FeatureMatrix::new(m, self.labels.iter().map(|&y| y as usize).collect(), num_classes)
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + h.payload_len());
        out.extend_from_slice(b"FPLF");
        out.extend_from_slice(&h.version.to_le_bytes());
        out.extend_from_slice(&h.n.to_le_bytes());
        out.extend_from_slice(&h.d.to_le_bytes());
        out.extend_from_slice(&h.layer.to_le_bytes());
        out.push(h.phase);
        out.extend_from_slice(&h.round.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for y in &self.labels {
            out.extend_from_slice(&y.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.magic(b"FPLF")?;
        let header = FeatureDumpHeader {
            version: r.u16_le("version")?,
            n: r.u32_le("N")?,
            d: r.u32_le("D")?,
            layer: r.u16_le("layer")?,
            phase: r.u8("phase")?,
            round: r.u16_le("round")?,
        };
        if header.version != FPLF_VERSION {
            return Err((4, format!("unsupported version {}", header.version)));
        }
        if header.phase().is_none() {
            return Err((16, format!("phase {} is neither 0 nor 1", header.phase)));
        }
        if r.remaining() != header.payload_len() {
            return Err((
                HEADER_LEN,
                format!("payload is {} bytes, header implies {}", r.remaining(), header.payload_len()),
            ));
        }
        let nd = header.n as usize * header.d as usize;
        let values =
            r.take(nd * 4, "features")?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let labels = r
            .take(header.n as usize * 2, "labels")?
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self { header, values, labels })
    }
}

pub fn write_fplf(path: &Path, dump: &FeatureDump) -> Result<()> {
    std::fs::write(path, dump.encode()).map_err(|e| CliError::io(path, e))
}

pub fn read_fplf(path: &Path) -> Result<FeatureDump> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    FeatureDump::decode(&bytes).map_err(|(offset, msg)| CliError::Format { path: path.into(), offset, msg })
}
