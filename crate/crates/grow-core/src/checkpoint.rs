//! Policy checkpoint format.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "GROWCKPT"
//! format version   u32      currently 1
//! input_dim        u32
//! hidden count     u32      followed by one u32 per hidden layer
//! action_count     u32
//! theta length     u64
//! theta            f64 * length
//! ```
//!
//! A JSON sidecar at `<path>.json` records the policy version counter and
//! the training step the checkpoint was taken at.

use std::fs;
use std::path::Path;

use crate::error::{GrowError, Result};
use crate::policy::{PolicyLayout, PolicyParams};

pub const MAGIC: &[u8; 8] = b"GROWCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointSidecar {
    pub schema: u32,
    pub policy_version: u64,
    pub train_step: u64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

/// Write the checkpoint and its sidecar.
pub fn save(params: &PolicyParams, train_step: u64, path: &Path) -> Result<()> {
    let layout = &params.layout;
    let mut bytes = Vec::with_capacity(32 + 8 * params.theta.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(layout.input_dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(layout.hidden_dims.len() as u32).to_le_bytes());
    for &h in &layout.hidden_dims {
        bytes.extend_from_slice(&(h as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&(layout.action_count as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.theta.len() as u64).to_le_bytes());
    for v in &params.theta {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;

    let sidecar = CheckpointSidecar {
        schema: 1,
        policy_version: params.version,
        train_step,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| GrowError::Numeric(format!("sidecar serialization failed: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GrowError::Config("checkpoint truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read a checkpoint; the sidecar is consulted when present to restore the
/// policy version counter. Returns the parameters and the recorded training
/// step (0 when no sidecar exists).
pub fn load(path: &Path) -> Result<(PolicyParams, u64)> {
    let bytes = fs::read(path).map_err(|e| {
        GrowError::Config(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };

    if r.take(8)? != MAGIC {
        return Err(GrowError::Config("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(GrowError::Config(format!(
            "unsupported checkpoint format version {version}"
        )));
    }
    let input_dim = r.u32()? as usize;
    let hidden_count = r.u32()? as usize;
    if hidden_count > 64 {
        return Err(GrowError::Config("implausible hidden layer count".into()));
    }
    let mut hidden_dims = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        hidden_dims.push(r.u32()? as usize);
    }
    let action_count = r.u32()? as usize;
    let layout = PolicyLayout::new(input_dim, hidden_dims, action_count)
        .map_err(|e| GrowError::Config(format!("checkpoint layout invalid: {e}")))?;

    let len = r.u64()? as usize;
    if len != layout.param_count() {
        return Err(GrowError::Config(format!(
            "theta length {len} does not match layout ({} expected)",
            layout.param_count()
        )));
    }
    let mut theta = Vec::with_capacity(len);
    for _ in 0..len {
        let v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(GrowError::Config(
                "non-finite parameter in checkpoint".into(),
            ));
        }
        theta.push(v);
    }
    if r.pos != bytes.len() {
        return Err(GrowError::Config(
            "trailing bytes after checkpoint payload".into(),
        ));
    }

    let (policy_version, train_step) = match fs::read_to_string(sidecar_path(path)) {
        Ok(text) => {
            let sc: CheckpointSidecar = serde_json::from_str(&text)
                .map_err(|e| GrowError::Config(format!("bad checkpoint sidecar: {e}")))?;
            (sc.policy_version, sc.train_step)
        }
        Err(_) => (0, 0),
    };

    Ok((
        PolicyParams {
            theta,
            layout,
            version: policy_version,
        },
        train_step,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::init_params;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.growckpt");
        let layout = PolicyLayout::new(7, vec![5], 3).unwrap();
        let mut params = init_params(44, &layout).unwrap();
        params.version = 12;
        save(&params, 250, &path).unwrap();

        let (loaded, step) = load(&path).unwrap();
        assert_eq!(loaded.theta, params.theta);
        assert_eq!(loaded.layout, params.layout);
        assert_eq!(loaded.version, 12);
        assert_eq!(step, 250);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.growckpt");
        let b = dir.path().join("b.growckpt");
        let layout = PolicyLayout::new(4, vec![6], 2).unwrap();
        let params = init_params(1, &layout).unwrap();
        save(&params, 10, &a).unwrap();
        save(&params, 10, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.growckpt");
        std::fs::write(&path, b"NOTMAGIC------------------------").unwrap();
        assert!(matches!(load(&path), Err(GrowError::Config(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.growckpt");
        let layout = PolicyLayout::new(4, vec![6], 2).unwrap();
        let params = init_params(1, &layout).unwrap();
        save(&params, 0, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(GrowError::Config(_))));
    }
}
