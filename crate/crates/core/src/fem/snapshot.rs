//! Self-describing snapshot files: one JSON header line, then raw little-endian arrays
//! in header order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::{FemError, State};

pub const SNAPSHOT_FORMAT: &str = "hofx-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    U64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub name: String,
    pub dtype: DType,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    meta: serde_json::Value,
    fields: Vec<FieldHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl FieldData {
    fn len(&self) -> usize {
        match self {
            FieldData::F64(v) => v.len(),
            FieldData::U64(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            FieldData::F64(_) => DType::F64,
            FieldData::U64(_) => DType::U64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub meta: serde_json::Value,
    pub fields: Vec<(String, FieldData)>,
}

impl Snapshot {
    pub fn field(&self, name: &str) -> Option<&FieldData> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn f64_field(&self, name: &str) -> Result<&[f64], FemError> {
        match self.field(name) {
            Some(FieldData::F64(v)) => Ok(v),
            _ => Err(FemError::Snapshot(format!("no f64 field '{name}'"))),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), FemError> {
        let header = Header {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            meta: self.meta.clone(),
            fields: self
                .fields
                .iter()
                .map(|(name, d)| FieldHeader { name: name.clone(), dtype: d.dtype(), len: d.len() })
                .collect(),
        };
        let line = serde_json::to_string(&header).map_err(|e| FemError::Snapshot(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, d) in &self.fields {
            match d {
                FieldData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                FieldData::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self, FemError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| FemError::Snapshot(e.to_string()))?;
        if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
            return Err(FemError::Snapshot(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut fields = Vec::with_capacity(header.fields.len());
        let mut word = [0u8; 8];
        for f in header.fields {
            let data = match f.dtype {
                DType::F64 => FieldData::F64(
                    (0..f.len)
                        .map(|_| r.read_exact(&mut word).map(|_| f64::from_le_bytes(word)))
                        .collect::<Result<_, _>>()?,
                ),
                DType::U64 => FieldData::U64(
                    (0..f.len)
                        .map(|_| r.read_exact(&mut word).map(|_| u64::from_le_bytes(word)))
                        .collect::<Result<_, _>>()?,
                ),
            };
            fields.push((f.name, data));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(FemError::Snapshot(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { meta: header.meta, fields })
    }

    /// Vertex coordinates (flattened xyz) and element connectivity.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let meta = serde_json::json!({ "kind": "mesh", "dims": mesh.dims, "extents": mesh.extents });
        let vertices = mesh.vertices.iter().flatten().copied().collect();
        let elements = mesh.elements.iter().flatten().map(|&v| v as u64).collect();
        Self { meta, fields: vec![("vertices".into(), FieldData::F64(vertices)), ("elements".into(), FieldData::U64(elements))] }
    }

    pub fn from_state(state: &State, time: f64) -> Self {
        let meta = serde_json::json!({ "kind": "state", "time": time });
        let mut fields = vec![("u".into(), FieldData::F64(state.u.clone())), ("p".into(), FieldData::F64(state.p.clone()))];
        if let Some(eta) = &state.eta {
            fields.push(("eta".into(), FieldData::F64(eta.clone())));
        }
        Self { meta, fields }
    }

    pub fn to_state(&self) -> Result<State, FemError> {
        let mut s = State::new(self.f64_field("u")?.to_vec(), self.f64_field("p")?.to_vec());
        s.eta = self.f64_field("eta").ok().map(<[f64]>::to_vec);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::build_mesh;

    #[test]
    fn state_round_trip() {
        let mut s = State::new(vec![1.0, -2.5, f64::MIN_POSITIVE], vec![3.0]);
        s.eta = Some(vec![0.25]);
        let mut buf = Vec::new();
        Snapshot::from_state(&s, 1.5).write_to(&mut buf).unwrap();
        let back = Snapshot::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.to_state().unwrap(), s);
        assert_eq!(back.meta["time"], 1.5);
    }

    #[test]
    fn mesh_round_trip_and_truncation() {
        let mesh = build_mesh(2, 1, 1, [2.0, 1.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        Snapshot::from_mesh(&mesh).write_to(&mut buf).unwrap();
        let back = Snapshot::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, Snapshot::from_mesh(&mesh));
        buf.pop();
        assert!(Snapshot::read_from(buf.as_slice()).is_err());
    }
}
