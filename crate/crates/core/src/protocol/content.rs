//! Chunked content storage.
//!
//! Objects are split into `chunk_size` chunks, the final chunk zero-padded.
//! `n - 1` copies of the final chunk are appended so that any request
//! starting inside the object can be served by `n` caches, one chunk each.
//! A SHA-256 digest of every stored chunk is computed at ingestion.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::ProtocolError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentObject {
    pub object_id: String,
    size: usize,
    chunk_size: usize,
    logical_chunks: usize,
    data: Vec<u8>,
    digests: Vec<[u8; 32]>,
}

impl ContentObject {
    pub fn from_bytes(
        object_id: impl Into<String>,
        bytes: &[u8],
        chunk_size: usize,
        n: usize,
    ) -> Self {
        assert!(chunk_size > 0 && n > 0);
        let logical_chunks = bytes.len().div_ceil(chunk_size).max(1);
        let mut data = bytes.to_vec();
        data.resize(logical_chunks * chunk_size, 0);
        let last = data[(logical_chunks - 1) * chunk_size..].to_vec();
        for _ in 1..n {
            data.extend_from_slice(&last);
        }
        let mut digests: Vec<[u8; 32]> = data[..logical_chunks * chunk_size]
            .chunks_exact(chunk_size)
            .map(|c| Sha256::digest(c).into())
            .collect();
        let last_digest = digests[logical_chunks - 1];
        digests.resize(logical_chunks + n - 1, last_digest);
        Self {
            object_id: object_id.into(),
            size: bytes.len(),
            chunk_size,
            logical_chunks,
            data,
            digests,
        }
    }

    /// Unpadded length in bytes.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Chunks holding real content.
    pub fn logical_chunks(&self) -> usize {
        self.logical_chunks
    }

    /// Stored chunks, padding included.
    pub fn stored_chunks(&self) -> usize {
        self.data.len() / self.chunk_size
    }

    /// SHA-256 of stored chunk `index`.
    pub fn chunk_digest(&self, index: u64) -> Option<&[u8; 32]> {
        self.digests.get(usize::try_from(index).ok()?)
    }

    pub fn chunk(&self, index: u64) -> Option<&[u8]> {
        let i = usize::try_from(index).ok()?;
        (i < self.stored_chunks())
            .then(|| &self.data[i * self.chunk_size..(i + 1) * self.chunk_size])
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContentStore {
    objects: HashMap<String, ContentObject>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, object: ContentObject) {
        self.objects.insert(object.object_id.clone(), object);
    }

    pub fn get(&self, object_id: &str) -> Option<&ContentObject> {
        self.objects.get(object_id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Imports every regular file in `dir`; the object id is the file name.
    pub fn ingest_dir(dir: &Path, chunk_size: usize, n: usize) -> Result<Self, ProtocolError> {
        let mut store = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| {
            ProtocolError::Config(format!("reading content dir {}: {e}", dir.display()))
        })?;
        for entry in entries {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let bytes = std::fs::read(entry.path())?;
            store.insert(ContentObject::from_bytes(name, &bytes, chunk_size, n));
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_last_chunk_and_repeats_it() {
        let obj = ContentObject::from_bytes("a", &[1u8; 40], 16, 4);
        assert_eq!(obj.logical_chunks(), 3);
        assert_eq!(obj.stored_chunks(), 6);
        let last = obj.chunk(2).unwrap();
        assert_eq!(&last[..8], &[1u8; 8]);
        assert_eq!(&last[8..], &[0u8; 8]);
        for i in 0..6 {
            let digest: [u8; 32] = Sha256::digest(obj.chunk(i).unwrap()).into();
            assert_eq!(obj.chunk_digest(i), Some(&digest));
        }
        for i in 3..6 {
            assert_eq!(obj.chunk(i).unwrap(), last);
        }
        assert!(obj.chunk_digest(6).is_none());
        assert!(obj.chunk(6).is_none());
    }

    #[test]
    fn exact_multiple_and_empty() {
        let obj = ContentObject::from_bytes("b", &[7u8; 32], 16, 1);
        assert_eq!((obj.logical_chunks(), obj.stored_chunks()), (2, 2));
        let empty = ContentObject::from_bytes("c", &[], 16, 2);
        assert_eq!((empty.logical_chunks(), empty.stored_chunks()), (1, 2));
    }

    #[test]
    fn ingests_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("movie.bin"), vec![3u8; 100]).unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        let store = ContentStore::ingest_dir(dir.path(), 64, 2).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get("movie.bin").unwrap().logical_chunks(), 2);
    }
}
