//! The case manifest: a JSON index tying case ids to per-slice image,
//! probability, and optional truth files, plus an optional fold mapping.
//!
//! Validation happens in two layers. Structural checks (schema version,
//! unique case ids, non-empty slice lists, fold coverage) run on every
//! parse and name the JSON path of the offending field. File checks
//! (existence, header shape agreement between image, probabilities, and
//! truth) run when a manifest is read from disk, eagerly, so a batch run
//! fails before the first slice rather than midway.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::experiment::FoldAssignment;
use crate::io::dten::read_tensor_header;
use crate::io::pgm::read_pgm_header;
use crate::tensor::Dtype;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One slice's files, as paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRef {
    pub image_path: String,
    pub prob_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    /// Slice order is meaningful; indexes name output files.
    pub slices: Vec<SliceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub schema_version: u32,
    pub cases: Vec<CaseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<FoldAssignment>,
    /// Directory all relative paths resolve against; set by the reader,
    /// never serialized.
    #[serde(skip)]
    root: PathBuf,
}

impl CaseManifest {
    pub fn new(cases: Vec<CaseEntry>, folds: Option<FoldAssignment>) -> Result<Self> {
        let manifest = CaseManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            cases,
            folds,
            root: PathBuf::from("."),
        };
        manifest.validate_structure()?;
        Ok(manifest)
    }

    /// Parses and structurally validates manifest JSON. No filesystem
    /// access; relative paths resolve against `"."` until
    /// [`read_manifest`] overrides the root.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut manifest: CaseManifest =
            serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
        manifest.root = PathBuf::from(".");
        manifest.validate_structure()?;
        Ok(manifest)
    }

    /// Canonical serialization: pretty JSON, fixed key order, trailing
    /// newline. Byte-identical for equal manifests.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = root.into();
    }

    /// Resolves a manifest-relative path against the manifest directory.
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.case_id.clone()).collect()
    }

    pub fn validate_structure(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::manifest(
                "schema_version",
                format!(
                    "unsupported schema version {}, expected {MANIFEST_SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if self.cases.is_empty() {
            return Err(Error::manifest("cases", "manifest lists no cases"));
        }
        let mut seen = BTreeSet::new();
        for (i, case) in self.cases.iter().enumerate() {
            let at = format!("cases[{i}].case_id");
            // Ids become output directory names, so path syntax is banned.
            if case.case_id.is_empty() {
                return Err(Error::manifest(at, "case id is empty"));
            }
            if case.case_id.contains(['/', '\\']) || case.case_id == "." || case.case_id == ".." {
                return Err(Error::manifest(
                    at,
                    format!(
                        "case id {:?} is not usable as a directory name",
                        case.case_id
                    ),
                ));
            }
            if !seen.insert(&case.case_id) {
                return Err(Error::manifest(
                    at,
                    format!("duplicate case id {:?}", case.case_id),
                ));
            }
            if case.slices.is_empty() {
                return Err(Error::manifest(
                    format!("cases[{i}].slices"),
                    "slice list is empty",
                ));
            }
            for (j, slice) in case.slices.iter().enumerate() {
                for (field, value) in [
                    ("image_path", Some(&slice.image_path)),
                    ("prob_path", Some(&slice.prob_path)),
                    ("truth_path", slice.truth_path.as_ref()),
                ] {
                    if let Some(value) = value {
                        if value.is_empty() {
                            return Err(Error::manifest(
                                format!("cases[{i}].slices[{j}].{field}"),
                                "path is empty",
                            ));
                        }
                    }
                }
            }
        }
        if let Some(folds) = &self.folds {
            for (i, case) in self.cases.iter().enumerate() {
                if folds.fold_of(&case.case_id).is_none() {
                    return Err(Error::manifest(
                        format!("folds.mapping.{}", case.case_id),
                        format!(
                            "case {:?} (cases[{i}]) missing from fold mapping",
                            case.case_id
                        ),
                    ));
                }
            }
            for id in folds.mapping().keys() {
                if !seen.contains(id) {
                    return Err(Error::manifest(
                        format!("folds.mapping.{id}"),
                        format!("fold mapping references unknown case {id:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Eager file validation: every referenced file must exist and carry a
    /// well-formed header, probability dims must extend the image dims by
    /// a label axis, and truth masks must match the image shape.
    pub fn validate_files(&self) -> Result<()> {
        // IO errors already name the path; other errors get it prepended.
        fn describe(path: &Path, e: Error) -> String {
            match &e {
                Error::Io { .. } => e.to_string(),
                _ => format!("{}: {e}", path.display()),
            }
        }
        for (i, case) in self.cases.iter().enumerate() {
            for (j, slice) in case.slices.iter().enumerate() {
                let at = |field: &str| format!("cases[{i}].slices[{j}].{field}");
                let image = self.resolve(&slice.image_path);
                let (_, image_dims) = read_tensor_header(&image)
                    .map_err(|e| Error::manifest(at("image_path"), describe(&image, e)))?;
                if image_dims.len() != 2 {
                    return Err(Error::manifest(
                        at("image_path"),
                        format!("image tensor must be 2-D, got dims {image_dims:?}"),
                    ));
                }
                let prob = self.resolve(&slice.prob_path);
                let (prob_dtype, prob_dims) = read_tensor_header(&prob)
                    .map_err(|e| Error::manifest(at("prob_path"), describe(&prob, e)))?;
                if prob_dtype != Dtype::F32 {
                    return Err(Error::manifest(
                        at("prob_path"),
                        "probability tensors must be float32",
                    ));
                }
                if prob_dims.len() != 3
                    || prob_dims[..2] != image_dims[..]
                    || !(2..=256).contains(&prob_dims[2])
                {
                    return Err(Error::manifest(
                        at("prob_path"),
                        format!(
                            "probability dims {prob_dims:?} do not match image dims {image_dims:?} with a 2..=256 label axis"
                        ),
                    ));
                }
                if let Some(truth_path) = &slice.truth_path {
                    let truth = self.resolve(truth_path);
                    let (th, tw) = read_pgm_header(&truth)
                        .map_err(|e| Error::manifest(at("truth_path"), describe(&truth, e)))?;
                    if [th, tw] != image_dims[..] {
                        return Err(Error::manifest(
                            at("truth_path"),
                            format!(
                                "truth mask is {th}x{tw} but the image is {}x{}",
                                image_dims[0], image_dims[1]
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads, structurally validates, and file-validates a manifest. Relative
/// paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<CaseManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = CaseManifest::from_json(&text)?;
    manifest.root = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    manifest.validate_files()?;
    Ok(manifest)
}

/// Writes the canonical JSON form. The fold mapping (a sorted map) and the
/// fixed field order make repeated writes byte-identical.
pub fn write_manifest(manifest: &CaseManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate_structure()?;
    fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}
