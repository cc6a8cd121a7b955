//! Operator command grammar.
//!
//! ```text
//! [<@mention>] [!|/]start | stop | status | help
//! [<@mention>] [!|/]configure key=value [key=value ...]
//! ```
//! Keywords and keys are case-insensitive. Anything else is `Unknown`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::clock::secs_to_duration;
use crate::flatfile::{parse_bool, parse_resolution};

pub const CONFIG_KEYS: [&str; 8] = [
    "labels",
    "resolution",
    "theta",
    "conf",
    "dwell",
    "cooldown",
    "preview",
    "model",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Start,
    Stop,
    Status,
    Help,
    Configure(BTreeMap<String, String>),
    /// Raw (trimmed) text that did not parse.
    Unknown(String),
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Start => "start",
            Command::Stop => "stop",
            Command::Status => "status",
            Command::Help => "help",
            Command::Configure(_) => "configure",
            Command::Unknown(_) => "unknown",
        }
    }

    pub fn render(&self) -> String {
        match self {
            Command::Configure(params) => {
                let mut out = "configure".to_string();
                for (k, v) in params {
                    out.push(' ');
                    out.push_str(k);
                    out.push('=');
                    out.push_str(v);
                }
                out
            }
            Command::Unknown(raw) => raw.clone(),
            other => other.kind().to_string(),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn strip_prefixes(text: &str) -> &str {
    let mut rest = text.trim_start();
    loop {
        if rest.starts_with("<@") {
            if let Some(end) = rest.find('>') {
                rest = rest[end + 1..].trim_start();
                continue;
            }
        }
        if let Some(r) = rest.strip_prefix(['!', '/']) {
            rest = r.trim_start();
            continue;
        }
        return rest;
    }
}

/// Total and deterministic; never fails.
pub fn parse_command(text: &str) -> Command {
    let raw = text.trim();
    let unknown = || Command::Unknown(raw.to_string());
    let body = strip_prefixes(raw);
    let mut tokens = body.split_whitespace();
    let Some(head) = tokens.next() else {
        return unknown();
    };
    let rest: Vec<&str> = tokens.collect();
    match head.to_ascii_lowercase().as_str() {
        "start" if rest.is_empty() => Command::Start,
        "stop" if rest.is_empty() => Command::Stop,
        "status" if rest.is_empty() => Command::Status,
        "help" if rest.is_empty() => Command::Help,
        "configure" if !rest.is_empty() => {
            let mut params = BTreeMap::new();
            for tok in rest {
                let Some((k, v)) = tok.split_once('=') else {
                    return unknown();
                };
                let k = k.to_ascii_lowercase();
                if v.is_empty() || !CONFIG_KEYS.contains(&k.as_str()) {
                    return unknown();
                }
                if params.insert(k, v.to_string()).is_some() {
                    return unknown();
                }
            }
            Command::Configure(params)
        }
        _ => unknown(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {key}: {reason}")]
pub struct ValidationError {
    pub key: String,
    pub reason: String,
}

fn invalid(key: &str, reason: impl Into<String>) -> ValidationError {
    ValidationError {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Typed, validated form of a `configure` command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigUpdate {
    pub labels: Option<BTreeSet<String>>,
    pub resolution: Option<(u32, u32)>,
    pub theta: Option<f64>,
    pub conf: Option<f64>,
    pub dwell: Option<Duration>,
    pub cooldown: Option<Duration>,
    pub preview: Option<bool>,
    pub model: Option<String>,
}

fn number(key: &str, v: &str) -> Result<f64, ValidationError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid(key, format!("{v:?} is not a number")))
}

impl ConfigUpdate {
    pub fn from_params(params: &BTreeMap<String, String>) -> Result<Self, ValidationError> {
        let mut u = ConfigUpdate::default();
        for (k, v) in params {
            match k.as_str() {
                "labels" => {
                    let set: BTreeSet<String> = v
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if set.is_empty() {
                        return Err(invalid(k, "at least one label required"));
                    }
                    u.labels = Some(set);
                }
                "resolution" => {
                    u.resolution =
                        Some(parse_resolution(k, v).map_err(|_| invalid(k, "expected WIDTHxHEIGHT"))?)
                }
                "theta" => {
                    let t = number(k, v)?;
                    if !(t > 0.0 && t < 1.0) {
                        return Err(invalid(k, format!("{t} must lie strictly between 0 and 1")));
                    }
                    u.theta = Some(t);
                }
                "conf" => {
                    let c = number(k, v)?;
                    if !(0.0..=1.0).contains(&c) {
                        return Err(invalid(k, format!("{c} must lie in [0,1]")));
                    }
                    u.conf = Some(c);
                }
                "dwell" => {
                    let d = number(k, v)?;
                    if d <= 0.0 {
                        return Err(invalid(k, "must be positive seconds"));
                    }
                    u.dwell = Some(secs_to_duration(d));
                }
                "cooldown" => {
                    let d = number(k, v)?;
                    if d < 0.0 {
                        return Err(invalid(k, "must be non-negative seconds"));
                    }
                    u.cooldown = Some(secs_to_duration(d));
                }
                "preview" => {
                    u.preview = Some(parse_bool(k, v).map_err(|_| invalid(k, "expected on/off"))?)
                }
                "model" => u.model = Some(v.clone()),
                other => return Err(invalid(other, "unrecognized key")),
            }
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn keywords() {
        assert_eq!(parse_command("start"), Command::Start);
        assert_eq!(parse_command("  STOP "), Command::Stop);
        assert_eq!(parse_command("<@U123ABC> status"), Command::Status);
        assert_eq!(parse_command("!help"), Command::Help);
        assert_eq!(parse_command("/start"), Command::Start);
    }

    #[test]
    fn configure_pairs() {
        assert_eq!(
            parse_command("configure theta=0.5 labels=person,car"),
            Command::Configure(params(&[("theta", "0.5"), ("labels", "person,car")]))
        );
        assert_eq!(
            parse_command("Configure THETA=0.5"),
            Command::Configure(params(&[("theta", "0.5")]))
        );
    }

    #[test]
    fn out_of_grammar_is_unknown() {
        for t in [
            "make me coffee",
            "",
            "configure",
            "configure colour=red",
            "configure theta",
            "configure theta=",
            "configure theta=0.1 theta=0.2",
            "start now",
        ] {
            assert_eq!(parse_command(t), Command::Unknown(t.trim().to_string()), "{t}");
        }
    }

    #[test]
    fn validation() {
        let u = ConfigUpdate::from_params(&params(&[
            ("theta", "0.5"),
            ("labels", "person,car"),
            ("resolution", "1280x720"),
            ("dwell", "2.5"),
            ("preview", "on"),
        ]))
        .unwrap();
        assert_eq!(u.theta, Some(0.5));
        assert_eq!(u.labels.unwrap().len(), 2);
        assert_eq!(u.resolution, Some((1280, 720)));
        assert_eq!(u.dwell, Some(Duration::from_millis(2500)));
        assert_eq!(u.preview, Some(true));
        for (k, v) in [
            ("theta", "1.5"),
            ("theta", "0"),
            ("conf", "-0.1"),
            ("dwell", "0"),
            ("cooldown", "-1"),
            ("resolution", "big"),
            ("labels", ","),
            ("theta", "abc"),
        ] {
            let e = ConfigUpdate::from_params(&params(&[(k, v)])).unwrap_err();
            assert_eq!(e.key, k);
        }
    }

    fn arb_command() -> impl Strategy<Value = Command> {
        let value = "[A-Za-z0-9_.,:x-]{1,12}";
        prop_oneof![
            Just(Command::Start),
            Just(Command::Stop),
            Just(Command::Status),
            Just(Command::Help),
            prop::collection::btree_map(prop::sample::select(CONFIG_KEYS.to_vec()), value, 1..5)
                .prop_map(|m| Command::Configure(
                    m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
                )),
        ]
    }

    proptest! {
        #[test]
        fn render_round_trips(c in arb_command()) {
            prop_assert_eq!(parse_command(&c.render()), c);
        }

        #[test]
        fn total_and_deterministic(s in "\\PC{0,40}") {
            prop_assert_eq!(parse_command(&s), parse_command(&s));
        }
    }
}
