//! Durable request cache and content-addressed image store.
//!
//! Cache entries live at `cache/<model>/<fingerprint>.json`; image bytes at
//! `images/<sha256>.png`. Both are plain files, so runs resume for free and
//! stay inspectable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ImageRef;

/// One cached model reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CacheEntry {
    Text { text: String },
    Image { image: ImageRef },
    Refusal { reason: String },
}

/// On-disk layout rooted at one data directory.
pub struct DataStore {
    cache_dir: PathBuf,
    images_dir: PathBuf,
    root: PathBuf,
}

impl DataStore {
    /// Opens (creating if needed) a store under `root`. `cache_dir`
    /// defaults to `root/cache` when not overridden.
    pub fn open(root: &Path, cache_dir: Option<&Path>) -> std::io::Result<Self> {
        let cache_dir = cache_dir
            .map(Path::to_path_buf)
            .unwrap_or_else(|| root.join("cache"));
        let images_dir = root.join("images");
        std::fs::create_dir_all(&cache_dir)?;
        std::fs::create_dir_all(&images_dir)?;
        Ok(DataStore {
            cache_dir,
            images_dir,
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, model: &str, fingerprint: &str) -> PathBuf {
        self.cache_dir
            .join(sanitize_component(model))
            .join(format!("{fingerprint}.json"))
    }

    pub fn cache_get(&self, model: &str, fingerprint: &str) -> std::io::Result<Option<CacheEntry>> {
        let path = self.entry_path(model, fingerprint);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(std::io::Error::other),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn cache_put(
        &self,
        model: &str,
        fingerprint: &str,
        entry: &CacheEntry,
    ) -> std::io::Result<()> {
        let path = self.entry_path(model, fingerprint);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        write_atomic(&path, json.as_bytes())
    }

    /// Stores image bytes under their own digest and returns the reference.
    /// Re-storing identical bytes is a no-op.
    pub fn store_image(&self, bytes: &[u8]) -> std::io::Result<ImageRef> {
        let sha256 = sha256_hex(bytes);
        let rel = format!("images/{sha256}.png");
        let path = self.images_dir.join(format!("{sha256}.png"));
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(ImageRef { sha256, path: rel })
    }

    /// Reads image bytes back, verifying the digest still matches.
    pub fn read_image(&self, image: &ImageRef) -> std::io::Result<Vec<u8>> {
        let path = self.root.join(&image.path);
        let bytes = std::fs::read(path)?;
        let digest = sha256_hex(&bytes);
        if digest != image.sha256 {
            return Err(std::io::Error::other(format!(
                "image {} is corrupt: digest {digest}",
                image.path
            )));
        }
        Ok(bytes)
    }
}

/// Writes via a uniquely named temp file then renames, so concurrent writers
/// of the same key can never expose a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        sha256_hex(path.as_os_str().as_encoded_bytes())
            .get(..12)
            .unwrap_or("x")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Keeps only filename-safe characters of a model name.
pub fn sanitize_component(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() || cleaned.chars().all(|c| c == '.') {
        "_".to_string()
    } else {
        cleaned
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_entries_round_trip_by_kind() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path(), None).unwrap();
        let entries = [
            CacheEntry::Text {
                text: "female".into(),
            },
            CacheEntry::Image {
                image: ImageRef {
                    sha256: "ab".repeat(32),
                    path: "images/x.png".into(),
                },
            },
            CacheEntry::Refusal {
                reason: "content_policy".into(),
            },
        ];
        for (i, entry) in entries.iter().enumerate() {
            let fp = format!("{i:064}");
            assert_eq!(store.cache_get("gpt-4", &fp).unwrap(), None);
            store.cache_put("gpt-4", &fp, entry).unwrap();
            assert_eq!(store.cache_get("gpt-4", &fp).unwrap().as_ref(), Some(entry));
        }
    }

    #[test]
    fn cache_kind_tags_are_stable_on_disk() {
        let json = serde_json::to_string(&CacheEntry::Text { text: "hi".into() }).unwrap();
        assert!(json.contains("\"kind\":\"text\""));
        let json = serde_json::to_string(&CacheEntry::Refusal {
            reason: "content_policy".into(),
        })
        .unwrap();
        assert!(json.contains("\"kind\":\"refusal\""));
    }

    #[test]
    fn images_are_content_addressed_and_verified() {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path(), None).unwrap();
        let bytes = b"fake png bytes";
        let image = store.store_image(bytes).unwrap();
        assert_eq!(image.path, format!("images/{}.png", image.sha256));
        let again = store.store_image(bytes).unwrap();
        assert_eq!(image, again);
        assert_eq!(store.read_image(&image).unwrap(), bytes);

        // Tampering is detected on read.
        std::fs::write(dir.path().join(&image.path), b"other bytes").unwrap();
        assert!(store.read_image(&image).is_err());
    }

    #[test]
    fn model_names_sanitize_to_path_components() {
        assert_eq!(sanitize_component("gpt-4o"), "gpt-4o");
        assert_eq!(sanitize_component("org/model:v1"), "org_model_v1");
        assert_eq!(sanitize_component(""), "_");
        assert_eq!(sanitize_component("../evil"), ".._evil");
        assert_eq!(sanitize_component(".."), "_");
    }

    #[test]
    fn sha256_matches_the_reference_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
