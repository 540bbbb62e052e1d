//! Text formats for knob system files, the global system file and the user
//! goal file.
//!
//! All three are line-oriented UTF-8 with LF endings. `#` starts a comment
//! line. Reals are written with 17 significant digits in `%.17g` style, so
//! a serialized file parses back to bit-identical values and reserializes to
//! the same bytes.
//!
//! Knob system file (`<conf_name>.SmartConf.sys`):
//!
//! ```text
//! smartconf-sys v1
//! conf_name = max.queue.size
//! metric = memory.used
//! initial_conf = 0
//! deputy_name = queue.size
//! alpha = 1.02
//! delta = 2.5
//! lambda = 0.1
//! pole = 0.19999999999999996
//! virtual_goal = 445.5
//! samples:
//! sample,10,260.5
//! ```
//!
//! Goal file: `<metric>.goal = 495`, `<metric>.goal.hard = 1`,
//! `<metric>.goal.super_hard = 1`.
//!
//! Global file (`SmartConf.sys`): `profiling = 0|1` followed by
//! `knob,<conf_name>,<metric>` lines.

use std::path::{Path, PathBuf};

use crate::controller::compute_pole;
use crate::error::{Error, Result};
use crate::profiler::ProfileSample;

pub const SYS_HEADER: &str = "smartconf-sys v1";
pub const SYS_VERSION: u32 = 1;
pub const GLOBAL_SYS_NAME: &str = "SmartConf.sys";

/// Path of the per-knob system file inside `dir`.
pub fn knob_sys_path(dir: &Path, conf_name: &str) -> PathBuf {
    dir.join(format!("{conf_name}.SmartConf.sys"))
}

/// Synthesized controller values persisted alongside the samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthesized {
    pub alpha: f64,
    pub delta: f64,
    pub lambda: f64,
    pub pole: f64,
    pub virtual_goal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnobSysFile {
    pub format_version: u32,
    pub conf_name: String,
    pub metric: String,
    pub initial_conf: f64,
    pub deputy_name: Option<String>,
    pub synthesized: Option<Synthesized>,
    pub samples: Vec<ProfileSample<f64>>,
}

impl KnobSysFile {
    pub fn new(conf_name: impl Into<String>, metric: impl Into<String>, initial_conf: f64) -> Self {
        KnobSysFile {
            format_version: SYS_VERSION,
            conf_name: conf_name.into(),
            metric: metric.into(),
            initial_conf,
            deputy_name: None,
            synthesized: None,
            samples: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalEntry {
    pub metric: String,
    pub goal: f64,
    pub hard: bool,
    pub super_hard: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoalFile {
    pub entries: Vec<GoalEntry>,
}

impl GoalFile {
    pub fn get(&self, metric: &str) -> Option<&GoalEntry> {
        self.entries.iter().find(|e| e.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnobEntry {
    pub conf_name: String,
    pub metric: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalSysFile {
    pub profiling_enabled: bool,
    pub knobs: Vec<KnobEntry>,
}

/// Format a real as `%.17g` would.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        // Never produced for valid files; kept readable for diagnostics.
        return format!("{x}");
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    let sci = format!("{:.16e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if x < 0.0 { "-" } else { "" };

    if !(-4..17).contains(&exp) {
        let frac = digits[1..].trim_end_matches('0');
        let dot = if frac.is_empty() { "" } else { "." };
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{}{dot}{frac}e{esign}{:02}", &digits[..1], exp.abs());
    }
    if exp >= 0 {
        let split = exp as usize + 1;
        let frac = digits[split..].trim_end_matches('0');
        let dot = if frac.is_empty() { "" } else { "." };
        format!("{sign}{}{dot}{frac}", &digits[..split])
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("{sign}0.{zeros}{}", digits.trim_end_matches('0'))
    }
}

/// Parse a finite real. Only `.` is accepted as the decimal point.
pub fn parse_real(s: &str) -> Option<f64> {
    let ok = !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, ',' | '=' | '#'))
}

fn name(line: usize, key: &str, value: &str) -> Result<String> {
    if valid_name(value) {
        Ok(value.to_string())
    } else {
        Err(Error::parse(line, format!("invalid {key} {value:?}")))
    }
}

fn real(line: usize, key: &str, value: &str) -> Result<f64> {
    parse_real(value).ok_or_else(|| Error::parse(line, format!("{key}: invalid number {value:?}")))
}

/// Content lines of a file with their 1-based line numbers; blank lines and
/// comments are skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn split_key_value(line: usize, text: &str) -> Result<(&str, &str)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got {text:?}")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err(Error::parse(line, format!("empty key or value in {text:?}")));
    }
    Ok((k, v))
}

/// `key = value` pairs with line numbers, in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    content_lines(text)
        .map(|(n, l)| split_key_value(n, l).map(|(k, v)| (n, k.to_string(), v.to_string())))
        .collect()
}

fn set_once<T>(slot: &mut Option<T>, line: usize, key: &str, value: T) -> Result<()> {
    if slot.is_some() {
        return Err(Error::parse(line, format!("duplicate key {key}")));
    }
    *slot = Some(value);
    Ok(())
}

pub fn parse_knob_sys(text: &str) -> Result<KnobSysFile> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty system file"))?;
    let version = header
        .strip_prefix("smartconf-sys v")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::parse(hline, format!("bad header {header:?}")))?;
    if version != SYS_VERSION {
        return Err(Error::parse(
            hline,
            format!("unsupported format version {version}"),
        ));
    }

    let mut conf_name = None;
    let mut metric = None;
    let mut initial_conf = None;
    let mut deputy_name = None;
    let mut synth: [Option<f64>; 5] = [None; 5];
    const SYNTH_KEYS: [&str; 5] = ["alpha", "delta", "lambda", "pole", "virtual_goal"];
    let mut samples = Vec::new();
    let mut in_samples = false;

    for (n, l) in lines {
        if in_samples {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            match fields.as_slice() {
                ["sample", setting, perf] => samples.push(ProfileSample::new(
                    real(n, "sample setting", setting)?,
                    real(n, "sample perf", perf)?,
                )),
                _ => return Err(Error::parse(n, format!("expected `sample,<setting>,<perf>`, got {l:?}"))),
            }
            continue;
        }
        if l == "samples:" {
            in_samples = true;
            continue;
        }
        let (k, v) = split_key_value(n, l)?;
        match k {
            "conf_name" => set_once(&mut conf_name, n, k, name(n, k, v)?)?,
            "metric" => set_once(&mut metric, n, k, name(n, k, v)?)?,
            "initial_conf" => set_once(&mut initial_conf, n, k, real(n, k, v)?)?,
            "deputy_name" => set_once(&mut deputy_name, n, k, name(n, k, v)?)?,
            _ => match SYNTH_KEYS.iter().position(|s| *s == k) {
                Some(i) => set_once(&mut synth[i], n, k, real(n, k, v)?)?,
                None => return Err(Error::parse(n, format!("unknown key {k:?}"))),
            },
        }
    }

    let missing = |key: &str| Error::Config(format!("system file is missing `{key}`"));
    let synthesized = match synth {
        [None, None, None, None, None] => None,
        [Some(alpha), Some(delta), Some(lambda), Some(pole), Some(virtual_goal)] => {
            let s = Synthesized {
                alpha,
                delta,
                lambda,
                pole,
                virtual_goal,
            };
            check_synthesized(&s)?;
            Some(s)
        }
        _ => {
            let absent = SYNTH_KEYS
                .iter()
                .zip(&synth)
                .find(|(_, v)| v.is_none())
                .map(|(k, _)| *k)
                .unwrap_or("alpha");
            return Err(missing(absent));
        }
    };
    if let Some(bad) = samples.iter().find(|s| s.perf < 0.0) {
        return Err(Error::Config(format!("negative sample performance {}", bad.perf)));
    }

    Ok(KnobSysFile {
        format_version: version,
        conf_name: conf_name.ok_or_else(|| missing("conf_name"))?,
        metric: metric.ok_or_else(|| missing("metric"))?,
        initial_conf: initial_conf.ok_or_else(|| missing("initial_conf"))?,
        deputy_name,
        synthesized,
        samples,
    })
}

fn check_synthesized(s: &Synthesized) -> Result<()> {
    if s.alpha == 0.0 {
        return Err(Error::Config("synthesized alpha is zero".into()));
    }
    if s.delta < 1.0 || s.lambda < 0.0 || s.virtual_goal <= 0.0 {
        return Err(Error::Config(
            "synthesized values out of range (delta >= 1, lambda >= 0, virtual_goal > 0)".into(),
        ));
    }
    let expected = compute_pole(s.delta)?;
    if (expected - s.pole).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "pole {} inconsistent with delta {} (expected {})",
            s.pole, s.delta, expected
        )));
    }
    Ok(())
}

pub fn serialize_knob_sys(file: &KnobSysFile) -> String {
    let mut out = format!("smartconf-sys v{}\n", file.format_version);
    out += &format!("conf_name = {}\n", file.conf_name);
    out += &format!("metric = {}\n", file.metric);
    out += &format!("initial_conf = {}\n", format_real(file.initial_conf));
    if let Some(d) = &file.deputy_name {
        out += &format!("deputy_name = {d}\n");
    }
    if let Some(s) = &file.synthesized {
        for (k, v) in [
            ("alpha", s.alpha),
            ("delta", s.delta),
            ("lambda", s.lambda),
            ("pole", s.pole),
            ("virtual_goal", s.virtual_goal),
        ] {
            out += &format!("{k} = {}\n", format_real(v));
        }
    }
    if !file.samples.is_empty() {
        out += "samples:\n";
        for s in &file.samples {
            out += &format!("sample,{},{}\n", format_real(s.setting), format_real(s.perf));
        }
    }
    out
}

pub fn parse_goal_file(text: &str) -> Result<GoalFile> {
    struct Partial {
        metric: String,
        first_line: usize,
        goal: Option<f64>,
        hard: Option<bool>,
        super_hard: Option<bool>,
    }
    let mut partials: Vec<Partial> = Vec::new();
    for (n, k, v) in parse_key_values(text)? {
        let (metric, attr) = if let Some(m) = k.strip_suffix(".goal.super_hard") {
            (m, "super_hard")
        } else if let Some(m) = k.strip_suffix(".goal.hard") {
            (m, "hard")
        } else if let Some(m) = k.strip_suffix(".goal") {
            (m, "goal")
        } else {
            return Err(Error::parse(n, format!("unknown key {k:?}")));
        };
        if !valid_name(metric) {
            return Err(Error::parse(n, format!("invalid metric name {metric:?}")));
        }
        let idx = match partials.iter().position(|p| p.metric == metric) {
            Some(i) => i,
            None => {
                partials.push(Partial {
                    metric: metric.to_string(),
                    first_line: n,
                    goal: None,
                    hard: None,
                    super_hard: None,
                });
                partials.len() - 1
            }
        };
        let p = &mut partials[idx];
        let bad_flag = || Error::parse(n, format!("{k}: expected 0 or 1, got {v:?}"));
        match attr {
            "goal" => set_once(&mut p.goal, n, &k, real(n, &k, &v)?)?,
            "hard" => set_once(&mut p.hard, n, &k, parse_flag(&v).ok_or_else(bad_flag)?)?,
            _ => set_once(&mut p.super_hard, n, &k, parse_flag(&v).ok_or_else(bad_flag)?)?,
        }
    }

    let mut entries = Vec::with_capacity(partials.len());
    for p in partials {
        let goal = p.goal.ok_or_else(|| {
            Error::parse(p.first_line, format!("no `{}.goal` value", p.metric))
        })?;
        if goal <= 0.0 {
            return Err(Error::parse(p.first_line, format!("goal for {} must be positive", p.metric)));
        }
        let hard = p.hard.unwrap_or(false);
        let super_hard = p.super_hard.unwrap_or(false);
        if super_hard && !hard {
            return Err(Error::parse(
                p.first_line,
                format!("{}: super_hard requires hard = 1", p.metric),
            ));
        }
        entries.push(GoalEntry {
            metric: p.metric,
            goal,
            hard,
            super_hard,
        });
    }
    Ok(GoalFile { entries })
}

pub fn serialize_goal_file(file: &GoalFile) -> String {
    let mut out = String::new();
    for e in &file.entries {
        out += &format!("{}.goal = {}\n", e.metric, format_real(e.goal));
        out += &format!("{}.goal.hard = {}\n", e.metric, flag(e.hard));
        if e.super_hard {
            out += &format!("{}.goal.super_hard = 1\n", e.metric);
        }
    }
    out
}

pub fn parse_global_sys(text: &str) -> Result<GlobalSysFile> {
    let mut profiling = None;
    let mut knobs: Vec<KnobEntry> = Vec::new();
    for (n, l) in content_lines(text) {
        if let Some(rest) = l.strip_prefix("knob,") {
            let (conf, metric) = rest
                .split_once(',')
                .ok_or_else(|| Error::parse(n, "expected `knob,<conf_name>,<metric>`"))?;
            let conf = name(n, "conf_name", conf.trim())?;
            if knobs.iter().any(|k| k.conf_name == conf) {
                return Err(Error::parse(n, format!("duplicate knob {conf}")));
            }
            knobs.push(KnobEntry {
                conf_name: conf,
                metric: name(n, "metric", metric.trim())?,
            });
            continue;
        }
        let (k, v) = split_key_value(n, l)?;
        if k != "profiling" {
            return Err(Error::parse(n, format!("unknown key {k:?}")));
        }
        let f = parse_flag(v)
            .ok_or_else(|| Error::parse(n, format!("profiling: expected 0 or 1, got {v:?}")))?;
        set_once(&mut profiling, n, k, f)?;
    }
    Ok(GlobalSysFile {
        profiling_enabled: profiling.unwrap_or(false),
        knobs,
    })
}

pub fn serialize_global_sys(file: &GlobalSysFile) -> String {
    let mut out = format!("profiling = {}\n", flag(file.profiling_enabled));
    for k in &file.knobs {
        out += &format!("knob,{},{}\n", k.conf_name, k.metric);
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Replace `path` with `text` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(text.as_bytes()).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn load_knob_sys(path: &Path) -> Result<KnobSysFile> {
    parse_knob_sys(&read_text(path)?)
}

pub fn load_goal_file(path: &Path) -> Result<GoalFile> {
    parse_goal_file(&read_text(path)?)
}

pub fn load_global_sys(path: &Path) -> Result<GlobalSysFile> {
    parse_global_sys(&read_text(path)?)
}
