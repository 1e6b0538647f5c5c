//! Image consistency checks on four static equivalence proxies:
//! file-system structure, environment variables, package-manager contents
//! and WORKDIR.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Equivalent,
    SimilarWithDiffs,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsDiff {
    pub path: String,
    pub left_hash: Option<String>,
    pub right_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDiff {
    pub name: String,
    pub left: Option<String>,
    pub right: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkgDiff {
    pub manager: String,
    pub only_left: Vec<String>,
    pub only_right: Vec<String>,
}

/// Comparison outcome across the four proxies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub fs_equal: bool,
    pub fs_diffs: Vec<FsDiff>,
    pub env_equal: bool,
    pub env_diffs: Vec<EnvDiff>,
    pub pkg_equal: bool,
    pub pkg_diffs: Vec<PkgDiff>,
    pub workdir_equal: bool,
    pub workdir_left: String,
    pub workdir_right: String,
    pub verdict: Verdict,
}

#[derive(Debug, thiserror::Error)]
pub enum ConsistencyError {
    #[error("inspector `{which}` failed: {detail}")]
    InspectorFailure { which: String, detail: String },
}

/// Capability handle over one built image.
pub trait ImageInspector {
    fn name(&self) -> &str;
    /// Sorted (path, content-hash) pairs; the hash covers bytes and mode.
    fn walk_fs(&self) -> Result<Vec<(String, String)>, ConsistencyError>;
    fn env(&self) -> Result<BTreeMap<String, String>, ConsistencyError>;
    /// Installed packages per detected manager.
    fn installed_packages(&self) -> Result<BTreeMap<String, BTreeSet<String>>, ConsistencyError>;
    fn workdir(&self) -> Result<String, ConsistencyError>;
}

/// Environment variables excluded from comparison because the runtime
/// generates them. Extensible via the CLI.
pub fn default_excludes() -> BTreeSet<String> {
    BTreeSet::from(["HOSTNAME".to_string(), "PWD".to_string()])
}

fn normalize_workdir(wd: &str) -> String {
    let t = wd.trim();
    if t.is_empty() {
        return "/".to_string();
    }
    let trimmed = t.trim_end_matches('/');
    if trimmed.is_empty() {
        "/".to_string()
    } else {
        trimmed.to_string()
    }
}

/// Compare two images on the four proxies. `dynamic_env_excludes` names are
/// removed from both sides before the environment comparison.
pub fn compare_images(
    a: &dyn ImageInspector,
    b: &dyn ImageInspector,
    dynamic_env_excludes: &BTreeSet<String>,
) -> Result<ConsistencyReport, ConsistencyError> {
    let wrap = |which: &dyn ImageInspector| {
        let name = which.name().to_string();
        move |e: ConsistencyError| match e {
            ConsistencyError::InspectorFailure { detail, .. } => {
                ConsistencyError::InspectorFailure {
                    which: name.clone(),
                    detail,
                }
            }
        }
    };

    // file system
    let fs_a: BTreeMap<String, String> = a.walk_fs().map_err(wrap(a))?.into_iter().collect();
    let fs_b: BTreeMap<String, String> = b.walk_fs().map_err(wrap(b))?.into_iter().collect();
    let mut fs_diffs = Vec::new();
    for (path, hash) in &fs_a {
        match fs_b.get(path) {
            Some(other) if other == hash => {}
            other => fs_diffs.push(FsDiff {
                path: path.clone(),
                left_hash: Some(hash.clone()),
                right_hash: other.cloned(),
            }),
        }
    }
    for (path, hash) in &fs_b {
        if !fs_a.contains_key(path) {
            fs_diffs.push(FsDiff {
                path: path.clone(),
                left_hash: None,
                right_hash: Some(hash.clone()),
            });
        }
    }
    fs_diffs.sort_by(|x, y| x.path.cmp(&y.path));
    let fs_equal = fs_diffs.is_empty();

    // environment
    let mut env_a = a.env().map_err(wrap(a))?;
    let mut env_b = b.env().map_err(wrap(b))?;
    for name in dynamic_env_excludes {
        env_a.remove(name);
        env_b.remove(name);
    }
    let mut env_diffs = Vec::new();
    let all_names: BTreeSet<&String> = env_a.keys().chain(env_b.keys()).collect();
    for name in all_names {
        let left = env_a.get(name);
        let right = env_b.get(name);
        if left != right {
            env_diffs.push(EnvDiff {
                name: name.clone(),
                left: left.cloned(),
                right: right.cloned(),
            });
        }
    }
    let env_equal = env_diffs.is_empty();

    // packages
    let pkgs_a = a.installed_packages().map_err(wrap(a))?;
    let pkgs_b = b.installed_packages().map_err(wrap(b))?;
    let managers: BTreeSet<&String> = pkgs_a.keys().chain(pkgs_b.keys()).collect();
    let empty = BTreeSet::new();
    let mut pkg_diffs = Vec::new();
    for manager in managers {
        let left = pkgs_a.get(manager).unwrap_or(&empty);
        let right = pkgs_b.get(manager).unwrap_or(&empty);
        let only_left: Vec<String> = left.difference(right).cloned().collect();
        let only_right: Vec<String> = right.difference(left).cloned().collect();
        if !only_left.is_empty() || !only_right.is_empty() {
            pkg_diffs.push(PkgDiff {
                manager: manager.clone(),
                only_left,
                only_right,
            });
        }
    }
    let pkg_equal = pkg_diffs.is_empty();

    // workdir
    let workdir_left = normalize_workdir(&a.workdir().map_err(wrap(a))?);
    let workdir_right = normalize_workdir(&b.workdir().map_err(wrap(b))?);
    let workdir_equal = workdir_left == workdir_right;

    let verdict = if fs_equal && env_equal && pkg_equal && workdir_equal {
        Verdict::Equivalent
    } else if env_equal && workdir_equal {
        Verdict::SimilarWithDiffs
    } else {
        Verdict::Divergent
    };

    Ok(ConsistencyReport {
        fs_equal,
        fs_diffs,
        env_equal,
        env_diffs,
        pkg_equal,
        pkg_diffs,
        workdir_equal,
        workdir_left,
        workdir_right,
        verdict,
    })
}

fn hash_bytes(bytes: &[u8], mode: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.update(mode.to_le_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Inspectors
// ---------------------------------------------------------------------------

/// In-memory inspector for tests and fixtures.
#[derive(Debug, Clone, Default)]
pub struct FakeInspector {
    pub label: String,
    pub files: BTreeMap<String, String>,
    pub env_vars: BTreeMap<String, String>,
    pub packages: BTreeMap<String, BTreeSet<String>>,
    pub workdir: String,
}

impl FakeInspector {
    pub fn new(label: impl Into<String>) -> Self {
        FakeInspector {
            label: label.into(),
            workdir: "/".to_string(),
            ..Default::default()
        }
    }

    pub fn file(mut self, path: &str, content: &str) -> Self {
        self.files.insert(path.to_string(), content.to_string());
        self
    }

    pub fn env(mut self, name: &str, value: &str) -> Self {
        self.env_vars.insert(name.to_string(), value.to_string());
        self
    }

    pub fn package(mut self, manager: &str, name: &str) -> Self {
        self.packages
            .entry(manager.to_string())
            .or_default()
            .insert(name.to_string());
        self
    }

    pub fn with_workdir(mut self, wd: &str) -> Self {
        self.workdir = wd.to_string();
        self
    }
}

impl ImageInspector for FakeInspector {
    fn name(&self) -> &str {
        &self.label
    }

    fn walk_fs(&self) -> Result<Vec<(String, String)>, ConsistencyError> {
        Ok(self
            .files
            .iter()
            .map(|(p, c)| (p.clone(), hash_bytes(c.as_bytes(), 0o644)))
            .collect())
    }

    fn env(&self) -> Result<BTreeMap<String, String>, ConsistencyError> {
        Ok(self.env_vars.clone())
    }

    fn installed_packages(&self) -> Result<BTreeMap<String, BTreeSet<String>>, ConsistencyError> {
        Ok(self.packages.clone())
    }

    fn workdir(&self) -> Result<String, ConsistencyError> {
        Ok(self.workdir.clone())
    }
}

/// Inspector over an exported image laid out as a directory tree:
/// `rootfs/` holds the file system; an optional `image-meta.json` supplies
/// env, packages and workdir.
pub struct DirectoryInspector {
    root: PathBuf,
    label: String,
}

#[derive(Debug, Default, Deserialize)]
struct DirectoryMeta {
    #[serde(default)]
    env: BTreeMap<String, String>,
    #[serde(default)]
    packages: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    workdir: Option<String>,
}

impl DirectoryInspector {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let label = root.display().to_string();
        DirectoryInspector { root, label }
    }

    fn meta(&self) -> Result<DirectoryMeta, ConsistencyError> {
        let path = self.root.join("image-meta.json");
        if !path.exists() {
            return Ok(DirectoryMeta::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| self.fail(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| self.fail(format!("bad image-meta.json: {e}")))
    }

    fn fail(&self, detail: String) -> ConsistencyError {
        ConsistencyError::InspectorFailure {
            which: self.label.clone(),
            detail,
        }
    }
}

impl ImageInspector for DirectoryInspector {
    fn name(&self) -> &str {
        &self.label
    }

    fn walk_fs(&self) -> Result<Vec<(String, String)>, ConsistencyError> {
        let rootfs = self.root.join("rootfs");
        let base = if rootfs.is_dir() {
            rootfs
        } else {
            self.root.clone()
        };
        let mut out = Vec::new();
        walk_dir(&base, &base, &mut out).map_err(|e| self.fail(e.to_string()))?;
        out.sort();
        Ok(out)
    }

    fn env(&self) -> Result<BTreeMap<String, String>, ConsistencyError> {
        Ok(self.meta()?.env)
    }

    fn installed_packages(&self) -> Result<BTreeMap<String, BTreeSet<String>>, ConsistencyError> {
        Ok(self.meta()?.packages)
    }

    fn workdir(&self) -> Result<String, ConsistencyError> {
        Ok(self.meta()?.workdir.unwrap_or_else(|| "/".to_string()))
    }
}

fn walk_dir(
    base: &Path,
    dir: &Path,
    out: &mut Vec<(String, String)>,
) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let rel = path
            .strip_prefix(base)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        if rel == "image-meta.json" && dir == base {
            continue;
        }
        let ft = entry.file_type()?;
        if ft.is_dir() {
            walk_dir(base, &path, out)?;
        } else if ft.is_symlink() {
            let target = std::fs::read_link(&path)?;
            out.push((
                format!("/{rel}"),
                hash_bytes(target.to_string_lossy().as_bytes(), 0o777),
            ));
        } else {
            let bytes = std::fs::read(&path)?;
            let mode = file_mode(&entry)?;
            out.push((format!("/{rel}"), hash_bytes(&bytes, mode)));
        }
    }
    Ok(())
}

#[cfg(unix)]
fn file_mode(entry: &std::fs::DirEntry) -> std::io::Result<u32> {
    use std::os::unix::fs::PermissionsExt;
    Ok(entry.metadata()?.permissions().mode() & 0o7777)
}

#[cfg(not(unix))]
fn file_mode(_entry: &std::fs::DirEntry) -> std::io::Result<u32> {
    Ok(0o644)
}

/// Inspector shelling out to the container CLI: `inspect` for config,
/// `create`/`export` for the file system, an ephemeral `run` for package
/// listings.
pub struct ContainerCliInspector {
    pub program: String,
    pub image: String,
}

impl ContainerCliInspector {
    pub fn new(program: impl Into<String>, image: impl Into<String>) -> Self {
        ContainerCliInspector {
            program: program.into(),
            image: image.into(),
        }
    }

    fn fail(&self, detail: impl Into<String>) -> ConsistencyError {
        ConsistencyError::InspectorFailure {
            which: self.image.clone(),
            detail: detail.into(),
        }
    }

    fn run(&self, args: &[&str]) -> Result<String, ConsistencyError> {
        let out = std::process::Command::new(&self.program)
            .args(args)
            .output()
            .map_err(|e| self.fail(e.to_string()))?;
        if !out.status.success() {
            return Err(self.fail(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn config_json(&self) -> Result<serde_json::Value, ConsistencyError> {
        let text = self.run(&[
            "inspect",
            "--format",
            "{{json .Config}}",
            &self.image,
        ])?;
        serde_json::from_str(text.trim()).map_err(|e| self.fail(e.to_string()))
    }
}

impl ImageInspector for ContainerCliInspector {
    fn name(&self) -> &str {
        &self.image
    }

    fn walk_fs(&self) -> Result<Vec<(String, String)>, ConsistencyError> {
        let cid = self
            .run(&["create", &self.image])?
            .trim()
            .to_string();
        let tmp = std::env::temp_dir().join(format!("relayer-export-{}", std::process::id()));
        std::fs::create_dir_all(&tmp).map_err(|e| self.fail(e.to_string()))?;
        let tar_path = tmp.join("image.tar");
        let result = (|| -> Result<Vec<(String, String)>, ConsistencyError> {
            self.run(&["export", "-o", tar_path.to_str().unwrap_or("image.tar"), &cid])?;
            let extract_dir = tmp.join("rootfs");
            std::fs::create_dir_all(&extract_dir).map_err(|e| self.fail(e.to_string()))?;
            let status = std::process::Command::new("tar")
                .args([
                    "-xf",
                    tar_path.to_str().unwrap_or("image.tar"),
                    "-C",
                    extract_dir.to_str().unwrap_or("."),
                ])
                .status()
                .map_err(|e| self.fail(e.to_string()))?;
            if !status.success() {
                return Err(self.fail("tar extraction failed"));
            }
            let mut out = Vec::new();
            walk_dir(&extract_dir, &extract_dir, &mut out)
                .map_err(|e| self.fail(e.to_string()))?;
            out.sort();
            Ok(out)
        })();
        let _ = self.run(&["rm", "-f", &cid]);
        let _ = std::fs::remove_dir_all(&tmp);
        result
    }

    fn env(&self) -> Result<BTreeMap<String, String>, ConsistencyError> {
        let config = self.config_json()?;
        let mut map = BTreeMap::new();
        if let Some(env) = config.get("Env").and_then(|v| v.as_array()) {
            for item in env {
                if let Some(pair) = item.as_str() {
                    if let Some(eq) = pair.find('=') {
                        map.insert(pair[..eq].to_string(), pair[eq + 1..].to_string());
                    }
                }
            }
        }
        Ok(map)
    }

    fn installed_packages(&self) -> Result<BTreeMap<String, BTreeSet<String>>, ConsistencyError> {
        // probe order: dpkg, apk, rpm, pip, npm
        let probes: [(&str, &str); 5] = [
            ("dpkg", "command -v dpkg-query >/dev/null 2>&1 && dpkg-query -W -f '${Package}\\n'"),
            ("apk", "command -v apk >/dev/null 2>&1 && apk info"),
            ("rpm", "command -v rpm >/dev/null 2>&1 && rpm -qa --qf '%{NAME}\\n'"),
            ("pip", "command -v pip >/dev/null 2>&1 && pip list --format=freeze 2>/dev/null | cut -d= -f1"),
            ("npm", "command -v npm >/dev/null 2>&1 && npm ls -g --parseable --depth=0 2>/dev/null"),
        ];
        let mut out = BTreeMap::new();
        for (manager, script) in probes {
            let result = std::process::Command::new(&self.program)
                .args([
                    "run",
                    "--rm",
                    "--entrypoint",
                    "sh",
                    &self.image,
                    "-c",
                    script,
                ])
                .output()
                .map_err(|e| self.fail(e.to_string()))?;
            if result.status.success() {
                let set: BTreeSet<String> = String::from_utf8_lossy(&result.stdout)
                    .lines()
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect();
                if !set.is_empty() {
                    out.insert(manager.to_string(), set);
                }
            }
        }
        Ok(out)
    }

    fn workdir(&self) -> Result<String, ConsistencyError> {
        let config = self.config_json()?;
        Ok(config
            .get("WorkingDir")
            .and_then(|v| v.as_str())
            .unwrap_or("/")
            .to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_pair() -> (FakeInspector, FakeInspector) {
        let a = FakeInspector::new("a")
            .file("/etc/os-release", "alpine")
            .file("/app/main.py", "print('hi')")
            .env("PATH", "/usr/bin")
            .env("LANG", "C.UTF-8")
            .package("apk", "python3")
            .package("apk", "musl")
            .with_workdir("/app");
        let b = a.clone();
        (a, b)
    }

    #[test]
    fn reflexivity_equivalent() {
        let (a, _) = base_pair();
        let report = compare_images(&a, &a, &default_excludes()).unwrap();
        assert_eq!(report.verdict, Verdict::Equivalent);
        assert!(report.fs_equal && report.env_equal && report.pkg_equal && report.workdir_equal);
    }

    #[test]
    fn hostname_and_pwd_excluded() {
        let (a, mut b) = base_pair();
        b.env_vars.insert("HOSTNAME".into(), "dead-beef".into());
        b.env_vars.insert("PWD".into(), "/elsewhere".into());
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(report.env_equal);
        assert_eq!(report.verdict, Verdict::Equivalent);
        assert!(report.env_diffs.iter().all(|d| d.name != "HOSTNAME"));
    }

    #[test]
    fn default_excludes_contents() {
        let ex = default_excludes();
        assert!(ex.contains("HOSTNAME"));
        assert!(ex.contains("PWD"));
        let mut extended = ex.clone();
        extended.insert("BUILD_DATE".to_string());
        assert!(extended.contains("BUILD_DATE") && extended.contains("PWD"));
    }

    #[test]
    fn one_extra_package_similar_with_diffs() {
        let (a, mut b) = base_pair();
        b.packages.get_mut("apk").unwrap().insert("curl".into());
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(!report.pkg_equal);
        assert_eq!(report.verdict, Verdict::SimilarWithDiffs);
        assert_eq!(report.pkg_diffs.len(), 1);
        assert_eq!(report.pkg_diffs[0].only_right, vec!["curl".to_string()]);
    }

    #[test]
    fn env_difference_is_divergent() {
        let (a, mut b) = base_pair();
        b.env_vars.insert("LANG".into(), "en_US".into());
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(!report.env_equal);
        assert_eq!(report.verdict, Verdict::Divergent);
    }

    #[test]
    fn fs_diff_lists_paths() {
        let (a, mut b) = base_pair();
        b.files.insert("/app/main.py".into(), "print('bye')".into());
        b.files.insert("/app/extra.txt".into(), "x".into());
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(!report.fs_equal);
        let paths: Vec<&str> = report.fs_diffs.iter().map(|d| d.path.as_str()).collect();
        assert_eq!(paths, vec!["/app/extra.txt", "/app/main.py"]);
        assert_eq!(report.verdict, Verdict::SimilarWithDiffs);
    }

    #[test]
    fn symmetry_of_booleans() {
        let (a, mut b) = base_pair();
        b.packages.get_mut("apk").unwrap().insert("curl".into());
        b.files.insert("/new".into(), "n".into());
        let ab = compare_images(&a, &b, &default_excludes()).unwrap();
        let ba = compare_images(&b, &a, &default_excludes()).unwrap();
        assert_eq!(ab.fs_equal, ba.fs_equal);
        assert_eq!(ab.env_equal, ba.env_equal);
        assert_eq!(ab.pkg_equal, ba.pkg_equal);
        assert_eq!(ab.workdir_equal, ba.workdir_equal);
        assert_eq!(ab.verdict, ba.verdict);
        // diff listings swap sides
        assert_eq!(ab.pkg_diffs[0].only_right, ba.pkg_diffs[0].only_left);
    }

    #[test]
    fn manager_absent_on_both_sides_is_equal() {
        let a = FakeInspector::new("a");
        let b = FakeInspector::new("b");
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(report.pkg_equal);
    }

    #[test]
    fn workdir_normalization() {
        let a = FakeInspector::new("a").with_workdir("/app/");
        let b = FakeInspector::new("b").with_workdir("/app");
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(report.workdir_equal);
        let c = FakeInspector::new("c").with_workdir("");
        let d = FakeInspector::new("d").with_workdir("/");
        assert!(compare_images(&c, &d, &default_excludes())
            .unwrap()
            .workdir_equal);
    }

    #[test]
    fn exclusion_soundness_no_excluded_in_diffs() {
        let (a, mut b) = base_pair();
        b.env_vars.insert("HOSTNAME".into(), "x".into());
        b.env_vars.insert("REAL_DIFF".into(), "y".into());
        let report = compare_images(&a, &b, &default_excludes()).unwrap();
        assert!(report
            .env_diffs
            .iter()
            .all(|d| !default_excludes().contains(&d.name)));
        assert_eq!(report.env_diffs.len(), 1);
    }

    #[test]
    fn directory_inspector_reads_fixture_tree() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        std::fs::create_dir_all(root.join("rootfs/app")).unwrap();
        std::fs::write(root.join("rootfs/app/x.txt"), "hello").unwrap();
        std::fs::write(
            root.join("image-meta.json"),
            r#"{"env": {"A": "1"}, "packages": {"pip": ["flask"]}, "workdir": "/app"}"#,
        )
        .unwrap();
        let insp = DirectoryInspector::new(root);
        let fs = insp.walk_fs().unwrap();
        assert_eq!(fs.len(), 1);
        assert_eq!(fs[0].0, "/app/x.txt");
        assert_eq!(insp.workdir().unwrap(), "/app");
        assert_eq!(insp.env().unwrap().get("A").map(String::as_str), Some("1"));
        let report = compare_images(&insp, &insp, &default_excludes()).unwrap();
        assert_eq!(report.verdict, Verdict::Equivalent);
    }
}
