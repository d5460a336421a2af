//! Key files written by the dealer. The public key goes to the server, the
//! secret key to every client.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hefl_core::bfv::{Bfv, KeyPair, PublicKey, SecretKey};

pub const PUBLIC_KEY_FILE: &str = "public.key";
pub const SECRET_KEY_FILE: &str = "secret.key";

/// Writes both halves into `dir` and returns their paths.
pub fn write_keys(bfv: &Bfv, keys: &KeyPair, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let public = dir.join(PUBLIC_KEY_FILE);
    let secret = dir.join(SECRET_KEY_FILE);
    std::fs::write(&public, bfv.serialize_public_key(&keys.public))?;
    std::fs::write(&secret, bfv.serialize_secret_key(&keys.secret))?;
    Ok((public, secret))
}

pub fn read_public_key(bfv: &Bfv, path: &Path) -> Result<PublicKey> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    bfv.deserialize_public_key(&bytes)
        .with_context(|| format!("decoding public key {}", path.display()))
}

/// Reads a secret key together with the public key stored next to it.
pub fn read_key_pair(bfv: &Bfv, secret_path: &Path) -> Result<KeyPair> {
    let bytes =
        std::fs::read(secret_path).with_context(|| format!("reading {}", secret_path.display()))?;
    let secret: SecretKey = bfv
        .deserialize_secret_key(&bytes)
        .with_context(|| format!("decoding secret key {}", secret_path.display()))?;
    let public_path = secret_path.with_file_name(PUBLIC_KEY_FILE);
    let public = read_public_key(bfv, &public_path)?;
    Ok(KeyPair { public, secret })
}
