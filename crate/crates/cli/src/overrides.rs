use tvnet::config::Config;
use tvnet::{Result, TvnetError};

/// Parses `--key value`, `--key=value` and bare `--flag` (meaning
/// `true`) into a config. Order matters: later pairs win.
pub fn parse(args: &[String]) -> Result<Config> {
    let mut cfg = Config::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| TvnetError::Config(format!("expected --key, got {arg:?}")))?;
        if let Some((k, v)) = key.split_once('=') {
            cfg.set(k, v)?;
            i += 1;
            continue;
        }
        match args.get(i + 1) {
            Some(v) if !v.starts_with("--") => {
                cfg.set(key, v.clone())?;
                i += 2;
            }
            _ => {
                cfg.set(key, "true")?;
                i += 1;
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(s: &[&str]) -> Vec<String> {
        s.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pairs_flags_and_equals() {
        let cfg = parse(&strings(&[
            "--n",
            "16",
            "--use-hrf=false",
            "--deterministic",
            "--lr",
            "-0.5",
        ]))
        .unwrap();
        assert_eq!(cfg.get_str("n"), Some("16"));
        assert_eq!(cfg.get_str("use_hrf"), Some("false"));
        assert_eq!(cfg.get_str("deterministic"), Some("true"));
        assert_eq!(cfg.get_str("lr"), Some("-0.5"));
    }

    #[test]
    fn stray_values_are_rejected() {
        assert!(parse(&strings(&["16"])).is_err());
        assert!(parse(&strings(&["--"])).is_err());
    }
}
