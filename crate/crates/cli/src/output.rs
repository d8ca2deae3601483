use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Picks the output directory: `base` if it is absent or empty, otherwise the
/// first free `base-N`. With `refuse`, an occupied `base` is an error.
pub fn reserve(base: &Path, refuse: bool) -> io::Result<PathBuf> {
    let occupied = |p: &Path| p.exists() && fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(true);
    if !occupied(base) {
        fs::create_dir_all(base)?;
        return Ok(base.to_path_buf());
    }
    if refuse {
        return Err(io::Error::new(io::ErrorKind::AlreadyExists, format!("{} exists and is not empty", base.display())));
    }
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    for k in 1.. {
        let p = base.with_file_name(format!("{name}-{k}"));
        if !occupied(&p) {
            fs::create_dir_all(&p)?;
            return Ok(p);
        }
    }
    unreachable!()
}
