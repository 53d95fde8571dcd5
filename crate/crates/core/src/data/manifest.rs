use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Landmarks;
use crate::imaging::{read_image, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Real,
    Fake,
}

impl Role {
    pub fn label(self) -> u8 {
        match self {
            Role::Real => 0,
            Role::Fake => 1,
        }
    }
}

/// One frame of a corpus. Paths are relative to the manifest directory on
/// disk and resolved on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
    pub identity: String,
    pub video: String,
    #[serde(default)]
    pub frame_index: usize,
    /// `None` for unlabeled frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Real frame a fake was derived from, for DSSIM masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_real: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        format!("{}#{}", self.video, self.frame_index)
    }

    pub fn load_image(&self) -> Result<Image> {
        read_image(&self.image)
    }

    pub fn load_landmarks(&self) -> Result<Option<Landmarks>> {
        self.landmarks.as_ref().map(Landmarks::load).transpose()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn relativize(base: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

impl CorpusManifest {
    /// Reads JSON lines; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::Data(format!("{}:{}: {err}", path.display(), n + 1)))?;
            e.image = resolve(base, &e.image);
            e.landmarks = e.landmarks.map(|p| resolve(base, &p));
            e.paired_real = e.paired_real.map(|p| resolve(base, &p));
            entries.push(e);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = Vec::new();
        for e in &self.entries {
            let mut e = e.clone();
            e.image = relativize(base, &e.image);
            e.landmarks = e.landmarks.map(|p| relativize(base, &p));
            e.paired_real = e.paired_real.map(|p| relativize(base, &p));
            serde_json::to_writer(&mut out, &e)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Imports `real/` and `fake/` image folders. File stems of the form
    /// `<video>_<frame>` give the video id and frame index; the video id
    /// doubles as identity. Real frames pick up `landmarks/<stem>.txt` when
    /// present, and fakes are paired with the real frame of the same name.
    pub fn discover(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut entries = Vec::new();
        for role in [Role::Real, Role::Fake] {
            let dir = root.join(match role {
                Role::Real => "real",
                Role::Fake => "fake",
            });
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|d| d.ok().map(|d| d.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                })
                .collect();
            files.sort();
            for image in files {
                let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let (video, frame_index) = match stem.rsplit_once('_') {
                    Some((v, f)) if f.parse::<usize>().is_ok() => (v.to_string(), f.parse().expect("checked")),
                    _ => (stem.clone(), 0),
                };
                let (landmarks, paired_real) = match role {
                    Role::Real => {
                        let lm = root.join("landmarks").join(format!("{stem}.txt"));
                        (lm.is_file().then_some(lm), None)
                    }
                    Role::Fake => {
                        let name = image.file_name().expect("file");
                        let pr = root.join("real").join(name);
                        (None, pr.is_file().then_some(pr))
                    }
                };
                entries.push(ManifestEntry {
                    image,
                    landmarks,
                    identity: video.clone(),
                    video: match role {
                        Role::Real => video,
                        Role::Fake => format!("{video}_fake"),
                    },
                    frame_index,
                    role: Some(role),
                    paired_real,
                });
            }
        }
        if entries.is_empty() {
            return Err(Error::Data(format!("no images under {}/real or {}/fake", root.display(), root.display())));
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::write_image;

    #[test]
    fn jsonl_paths_are_relative_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = CorpusManifest {
            entries: vec![ManifestEntry {
                image: dir.path().join("real/a_0.png"),
                landmarks: Some(dir.path().join("landmarks/a_0.txt")),
                identity: "a".into(),
                video: "a".into(),
                frame_index: 0,
                role: Some(Role::Real),
                paired_real: None,
            }],
        };
        let p = dir.path().join("manifest.jsonl");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"image\":\"real/a_0.png\""), "{text}");
        assert!(!text.contains("paired_real"));
        assert_eq!(CorpusManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "{\"image\":\"x.png\",\"identity\":\"a\",\"video\":\"a\",\"colour\":1}\n").unwrap();
        assert!(matches!(CorpusManifest::load(&p), Err(Error::Data(_))));
    }

    #[test]
    fn discovery_pairs_fakes_with_reals() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["real", "fake", "landmarks"] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
        }
        let img = Image::filled(4, 4, [0.5; 3]).unwrap();
        write_image(&img, dir.path().join("real/vid_3.png")).unwrap();
        write_image(&img, dir.path().join("fake/vid_3.png")).unwrap();
        std::fs::write(dir.path().join("landmarks/vid_3.txt"), "").unwrap();
        let m = CorpusManifest::discover(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        let (real, fake) = (&m.entries[0], &m.entries[1]);
        assert_eq!((real.video.as_str(), real.frame_index, real.role), ("vid", 3, Some(Role::Real)));
        assert!(real.landmarks.is_some());
        assert_eq!(fake.video, "vid_fake");
        assert_eq!(fake.paired_real.as_deref(), Some(dir.path().join("real/vid_3.png").as_path()));
    }
}
