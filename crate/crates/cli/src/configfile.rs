//! `key=value` config files.
//!
//! Each key names a long flag of the subcommand. Entries are spliced into
//! the argument list right after the subcommand, except for flags that are
//! already given on the command line, which win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses the file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value", i + 1);
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.starts_with('-') {
            bail!("line {}: bad key `{k}`", i + 1);
        }
        if k == "config" {
            bail!(
                "line {}: config files cannot include other config files",
                i + 1
            );
        }
        out.push((k.replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Returns the argument list with config-file entries inserted.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    if args.len() < 2 || args[1].to_string_lossy().starts_with('-') {
        return Ok(args);
    }
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let entries = parse(&text).with_context(|| format!("in {}", path.display()))?;
    let given: Vec<String> = args[2..]
        .iter()
        .filter_map(|a| {
            let a = a.to_string_lossy();
            let name = a.strip_prefix("--")?;
            Some(name.split('=').next().unwrap_or(name).to_string())
        })
        .collect();
    let mut injected = Vec::new();
    for (k, v) in entries.into_iter().filter(|(k, _)| !given.contains(k)) {
        match v.as_str() {
            "true" => injected.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                injected.push(format!("--{k}").into());
                injected.push(v.into());
            }
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs_and_skips_comments() {
        let p = parse("# c\n\nsigma = 2\nconf_threshold=0.5\n").unwrap();
        assert_eq!(
            p,
            vec![
                ("sigma".to_string(), "2".to_string()),
                ("conf-threshold".to_string(), "0.5".to_string())
            ]
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("sigma 2").is_err());
        assert!(parse("--sigma=2").is_err());
        assert!(parse("config=x").is_err());
    }

    #[test]
    fn user_flags_replace_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "sigma=3\nsave_maps=true\nthreads=false\n").unwrap();
        let args = os(&[
            "pqi",
            "score",
            "--config",
            cfg.to_str().unwrap(),
            "--sigma",
            "1",
        ]);
        let out = expand(args).unwrap();
        let s: Vec<_> = out
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect();
        assert_eq!(&s[..3], ["pqi", "score", "--save-maps"]);
        assert_eq!(s.iter().filter(|a| *a == "--sigma").count(), 1);
        assert_eq!(s.last().unwrap(), "1");
    }

    #[test]
    fn no_config_is_a_no_op() {
        let args = os(&["pqi", "stats", "--scores", "x"]);
        assert_eq!(expand(args.clone()).unwrap(), args);
    }
}
