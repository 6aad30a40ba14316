//! Expansion of file-or-directory inputs and parallel per-file execution.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::{Failure, Stage};

/// One image to process, with its mask if one was given or found next to it.
#[derive(Debug, Clone)]
pub struct Item {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A single file maps to `out_dir` itself. A directory yields every `.pgm`
/// except `*_mask.pgm`, in name order, each with its own `out_dir/<stem>`
/// and the sibling `<stem>_mask.pgm` as mask when present.
pub fn expand(input: &Path, mask: Option<&Path>, out_dir: &Path, stage: &str) -> Result<Vec<Item>, Failure> {
    if !input.is_dir() {
        return Ok(vec![Item {
            image: input.to_path_buf(),
            mask: mask.map(Path::to_path_buf),
            out_dir: out_dir.to_path_buf(),
        }]);
    }
    if mask.is_some() {
        return Err(Failure::usage(
            stage,
            "--mask applies to a single input; in a directory name masks <stem>_mask.pgm",
        ));
    }
    let mut images: Vec<PathBuf> = fs::read_dir(input)
        .map_err(fingeo::Error::from)
        .at(stage)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .filter(|p| !stem(p).ends_with("_mask"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Failure::usage(stage, format!("no .pgm files in {}", input.display())));
    }
    Ok(images
        .into_iter()
        .map(|image| {
            let s = stem(&image);
            let sibling = image.with_file_name(format!("{s}_mask.pgm"));
            Item {
                mask: sibling.is_file().then_some(sibling),
                out_dir: out_dir.join(&s),
                image,
            }
        })
        .collect())
}

/// Runs `job` on every item in parallel. Each failure is reported on its own
/// line once all items finish; a batch with failures returns the most
/// severe code.
pub fn run_all(items: &[Item], stage: &str, job: impl Fn(&Item) -> Result<(), Failure> + Sync) -> Result<(), Failure> {
    if items.len() == 1 {
        return job(&items[0]);
    }
    let results: Vec<Result<(), Failure>> = items.par_iter().map(&job).collect();
    let failures: Vec<(&Item, Failure)> = items
        .iter()
        .zip(results)
        .filter_map(|(item, r)| r.err().map(|f| (item, f)))
        .collect();
    if failures.is_empty() {
        return Ok(());
    }
    for (item, f) in &failures {
        let tagged = Failure {
            message: format!("{}: {}", item.image.display(), f.message),
            ..f.clone()
        };
        eprintln!("{}", tagged.to_json());
    }
    Err(Failure {
        code: failures.iter().map(|(_, f)| f.code).max().unwrap_or(crate::EXIT_NUMERICAL),
        stage: stage.to_string(),
        message: format!("{} of {} inputs failed", failures.len(), items.len()),
    })
}
