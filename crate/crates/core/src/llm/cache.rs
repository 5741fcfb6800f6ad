use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Content-addressed store of raw response payloads.
///
/// Records live at `<root>/<first two hex digits>/<digest>.json`. Writes go
/// through a temporary file in the same directory and an atomic rename, so
/// concurrent writers of the same record never expose a partial file.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ResponseCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        fs::read_to_string(self.path_for(digest)).ok()
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).is_file()
    }

    pub fn put(&self, digest: &str, raw: &str) -> io::Result<()> {
        let path = self.path_for(digest);
        let dir = path.parent().expect("record path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .suffix(".json")
            .tempfile_in(dir)?;
        tmp.write_all(raw.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Number of stored records.
    pub fn len(&self) -> usize {
        let Ok(shards) = fs::read_dir(&self.root) else {
            return 0;
        };
        shards
            .flatten()
            .filter(|e| e.path().is_dir())
            .flat_map(|e| fs::read_dir(e.path()).into_iter().flatten().flatten())
            .filter(|e| {
                let name = e.file_name();
                let name = name.to_string_lossy();
                name.ends_with(".json") && !name.starts_with(".tmp-")
            })
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("cache")).unwrap();
        let digest = "ab".to_string() + &"0".repeat(62);
        assert!(cache.get(&digest).is_none());
        cache.put(&digest, "{}").unwrap();
        cache.put(&digest, "{}").unwrap();
        assert_eq!(cache.get(&digest).as_deref(), Some("{}"));
        assert!(dir.path().join("cache/ab").join(format!("{digest}.json")).is_file());
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn concurrent_identical_writes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let digest = "cd".repeat(32);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.put(&digest, "{\"x\":1}").unwrap());
            }
        });
        assert_eq!(cache.get(&digest).as_deref(), Some("{\"x\":1}"));
        assert_eq!(cache.len(), 1);
    }
}
