use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Connector, ConnectorConfig, ConnectorKind};
use crate::error::Result;
use crate::key::ObjectKey;
use crate::relay::StoreStats;

const TMP_PREFIX: &str = ".tmp-";

/// Stores each object in `<dir>/<key text>`.
///
/// Writes go to a temporary file in the same directory and are renamed into
/// place, so readers never see a partial value. Object counts and sizes come
/// from scanning the directory; the operation counters only cover this
/// connector instance.
pub struct FileConnector {
    dir: PathBuf,
    puts: AtomicU64,
    gets: AtomicU64,
    evicts: AtomicU64,
    overwrites: AtomicU64,
}

impl FileConnector {
    /// Opens `dir`, creating it if needed.
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            puts: AtomicU64::new(0),
            gets: AtomicU64::new(0),
            evicts: AtomicU64::new(0),
            overwrites: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &ObjectKey) -> PathBuf {
        self.dir.join(key.to_string())
    }
}

impl Connector for FileConnector {
    fn put(&self, key: &ObjectKey, value: Vec<u8>) -> Result<()> {
        let target = self.path_for(key);
        let mut tmp = tempfile::Builder::new()
            .prefix(TMP_PREFIX)
            .tempfile_in(&self.dir)?;
        tmp.write_all(&value)?;
        let existed = target.exists();
        tmp.persist(&target).map_err(|e| e.error)?;
        self.puts.fetch_add(1, Ordering::Relaxed);
        if existed {
            self.overwrites.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }

    fn get(&self, key: &ObjectKey) -> Result<Option<Vec<u8>>> {
        self.gets.fetch_add(1, Ordering::Relaxed);
        match fs::read(self.path_for(key)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool> {
        Ok(self.path_for(key).try_exists()?)
    }

    fn evict(&self, key: &ObjectKey) -> Result<()> {
        match fs::remove_file(self.path_for(key)) {
            Ok(()) => {
                self.evicts.fetch_add(1, Ordering::Relaxed);
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn config(&self) -> ConnectorConfig {
        ConnectorConfig::new(ConnectorKind::File).with("path", self.dir.to_string_lossy())
    }

    fn stats(&self) -> Result<StoreStats> {
        let mut stats = StoreStats {
            put_count: self.puts.load(Ordering::Relaxed),
            get_count: self.gets.load(Ordering::Relaxed),
            evict_count: self.evicts.load(Ordering::Relaxed),
            overwrite_count: self.overwrites.load(Ordering::Relaxed),
            ..StoreStats::default()
        };
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if entry.file_name().to_string_lossy().starts_with(TMP_PREFIX) {
                continue;
            }
            let meta = match entry.metadata() {
                Ok(m) => m,
                // Evicted while scanning.
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            };
            if meta.is_file() {
                stats.object_count += 1;
                stats.total_bytes += meta.len();
            }
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_content_equals_value() {
        let dir = tempfile::tempdir().unwrap();
        let c = FileConnector::new(dir.path()).unwrap();
        let key = ObjectKey::new("f").unwrap();
        c.put(&key, vec![9; 100]).unwrap();
        let path = dir.path().join(key.to_string());
        assert_eq!(fs::read(path).unwrap(), vec![9; 100]);
        let stats = c.stats().unwrap();
        assert_eq!((stats.object_count, stats.total_bytes), (1, 100));
        c.evict(&key).unwrap();
        c.evict(&key).unwrap();
        assert_eq!(c.get(&key).unwrap(), None);
        assert_eq!(c.stats().unwrap().evict_count, 1);
    }

    #[test]
    fn no_temp_files_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let c = FileConnector::new(dir.path()).unwrap();
        for _ in 0..5 {
            c.put(&ObjectKey::new("f").unwrap(), b"x".to_vec()).unwrap();
        }
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 5);
        assert!(names.iter().all(|n| n.starts_with("f:")));
    }
}
