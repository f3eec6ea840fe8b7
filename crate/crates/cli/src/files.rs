use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

fn by_stem(path: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let files = if path.is_dir() {
        list_with_extension(path, ext)?
    } else {
        vec![path.to_path_buf()]
    };
    Ok(files.into_iter().map(|p| (stem(&p), p)).collect())
}

/// Pairs `a` and `b` (files or directories) by file stem. Two single files pair directly.
pub fn paired_inputs(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !a.is_dir() && !b.is_dir() {
        return Ok(vec![(stem(a), a.to_path_buf(), b.to_path_buf())]);
    }
    let ext_a = if a.is_dir() && !list_with_extension(a, "wav")?.is_empty() {
        "wav"
    } else {
        "csv"
    };
    let left = by_stem(a, ext_a)?;
    let right = by_stem(b, "csv")?;
    let mut out = Vec::new();
    for (id, pa) in left {
        match right.get(&id) {
            Some(pb) => out.push((id, pa, pb.clone())),
            None => bail!("no counterpart for {} in {}", pa.display(), b.display()),
        }
    }
    if out.is_empty() {
        bail!("no inputs found in {}", a.display());
    }
    Ok(out)
}

/// Maps `f` over `items` on all available cores, preserving order and
/// returning the first error.
pub fn parallel_map<T: Sync, U: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let per = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}
