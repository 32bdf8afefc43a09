//! Deterministic seed derivation and content hashing.
//!
//! All randomness in the pipeline flows from a single root seed through
//! named streams, so that dataset content never depends on worker
//! scheduling: the stream for augmentation sample (demo, step, i) is
//! derived from those indices, not from execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

/// Derive a child seed from a root seed, a component name, and indices.
pub fn derive_seed(root: u64, component: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update([component.len() as u8]);
    h.update(component.as_bytes());
    for ix in indices {
        h.update(ix.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded stream for a named component.
pub fn rng_for(root: u64, component: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, component, indices))
}

/// SHA-256 hex digest of a byte slice.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

/// SHA-256 hex digest over a directory tree: relative paths (sorted) and
/// file contents. Two directory trees with identical content hash equal.
pub fn hash_dir(root: &Path) -> std::io::Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in &files {
        h.update(rel.as_bytes());
        h.update([0u8]);
        let data = fs::read(root.join(rel))?;
        h.update((data.len() as u64).to_le_bytes());
        h.update(&data);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entry under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
