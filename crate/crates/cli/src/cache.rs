use std::path::PathBuf;

use sha2::{Digest, Sha256};
use sofic::entropy::{CellCache, CellKey, CountResult};

/// Content-addressed cell store: `<root>/<config hash>/<sha256(scope|cell)>.json`.
pub struct FileCache {
    dir: PathBuf,
    scope: String,
}

impl FileCache {
    pub fn new(root: PathBuf, config_hash: &str, scope: &str) -> std::io::Result<Self> {
        let dir = root.join(config_hash);
        std::fs::create_dir_all(&dir)?;
        Ok(FileCache {
            dir,
            scope: scope.to_string(),
        })
    }

    fn path(&self, key: &CellKey) -> PathBuf {
        let id = format!("{}|{}", self.scope, key.canonical());
        self.dir
            .join(format!("{}.json", hex::encode(Sha256::digest(id.as_bytes()))))
    }
}

impl CellCache for FileCache {
    fn get(&self, key: &CellKey) -> Option<CountResult> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn put(&self, key: &CellKey, result: &CountResult) {
        let path = self.path(key);
        let Ok(text) = serde_json::to_string(result) else {
            return;
        };
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        if std::fs::write(&tmp, text).is_ok() && std::fs::rename(&tmp, &path).is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
    }
}
