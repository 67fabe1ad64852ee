//! Plain-text `key = value` config files, merged under command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got `{}`", i + 1, raw.trim());
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key.contains(char::is_whitespace) {
            bail!("config line {}: invalid key `{}`", i + 1, k.trim());
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splices config entries in front of the explicit flags of the subcommand,
/// so later (command-line) occurrences win. `--config` itself is removed.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let pos = args.iter().position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let (path, consumed) = match args[pos].split_once('=') {
        Some((_, p)) => (p.to_string(), 1),
        None => (args.get(pos + 1).cloned().context("--config needs a file path")?, 2),
    };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let entries = parse(&text)?;
    let mut rest: Vec<String> = args[..pos].to_vec();
    rest.extend_from_slice(&args[pos + consumed..]);
    // program name, then the subcommand
    let sub = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1);
    let Some(sub) = sub else {
        bail!("--config needs a subcommand")
    };
    let mut injected = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => injected.push(format!("--{k}")),
            "false" => {}
            _ => {
                injected.push(format!("--{k}"));
                injected.push(v);
            }
        }
    }
    let mut out = rest[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&rest[sub + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let e = parse("# run\nn_points = 400\n\nseed=3 # trailing\n").unwrap();
        assert_eq!(e, vec![("n-points".into(), "400".into()), ("seed".into(), "3".into())]);
        assert!(parse("oops").is_err());
        assert!(parse("a b = 1").is_err());
    }

    #[test]
    fn config_goes_before_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "seed = 1\nsamples = 10\nverbose = true\nquiet = false\n").unwrap();
        let args: Vec<String> = ["bno", "gen", "--config", p.to_str().unwrap(), "--seed", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_args(args).unwrap();
        assert_eq!(
            out,
            [
                "bno",
                "gen",
                "--seed",
                "1",
                "--samples",
                "10",
                "--verbose",
                "--seed",
                "2"
            ]
        );
    }
}
