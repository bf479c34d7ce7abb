//! Line-oriented trial log.
//!
//! ```text
//! #trial kind=pour substance=water container=pp day=3 fill_g=150
//! C 0 812.4 ... (10 readings)
//! S 0 0
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse_trial(write_trial(t)) == t` holds bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{CapacitanceFrame, Container, Result, ScaleSample, SignalError, Substance, Trial, TrialKind, ELECTRODES};

pub fn write_trial(trial: &Trial) -> String {
    let mut out = String::with_capacity(64 + trial.frames.len() * 120 + trial.scale.len() * 24);
    let container = trial.container.map_or("none", |c| c.as_str());
    let _ = writeln!(
        out,
        "#trial kind={} substance={} container={} day={} fill_g={}",
        trial.kind.as_str(),
        trial.substance,
        container,
        trial.day_seed,
        trial.initial_fill
    );
    for f in &trial.frames {
        let _ = write!(out, "C {}", f.t);
        for r in &f.readings {
            let _ = write!(out, " {r}");
        }
        out.push('\n');
    }
    for s in &trial.scale {
        let _ = writeln!(out, "S {} {}", s.t, s.weight);
    }
    out
}

pub fn save_trial(trial: &Trial, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_trial(trial))?;
    Ok(())
}

pub fn load_trial(path: impl AsRef<Path>) -> Result<Trial> {
    let text = std::fs::read_to_string(path)?;
    parse_trial(&text)
}

fn perr(line: usize, msg: impl Into<String>) -> SignalError {
    SignalError::Parse { line, msg: msg.into() }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| perr(line, format!("bad {what} `{tok}`")))
}

struct Header {
    kind: TrialKind,
    substance: Substance,
    container: Option<Container>,
    day: i64,
    fill: f64,
}

fn parse_header(rest: &str, line: usize) -> Result<Header> {
    let (mut kind, mut substance, mut container, mut day, mut fill) = (None, None, None, None, None);
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| perr(line, format!("header field `{field}` is not key=value")))?;
        match k {
            "kind" => kind = Some(v.parse::<TrialKind>().map_err(|e| perr(line, e))?),
            "substance" => substance = Some(v.parse::<Substance>().map_err(|e| perr(line, e))?),
            "container" => {
                container = Some(if v == "none" {
                    None
                } else {
                    Some(v.parse::<Container>().map_err(|e| perr(line, e))?)
                })
            }
            "day" => day = Some(v.parse::<i64>().map_err(|_| perr(line, format!("bad day `{v}`")))?),
            "fill_g" => fill = Some(parse_f64(v, line, "fill")?),
            other => return Err(perr(line, format!("unknown header field `{other}`"))),
        }
    }
    let missing = |name: &str| perr(line, format!("header missing `{name}`"));
    Ok(Header {
        kind: kind.ok_or_else(|| missing("kind"))?,
        substance: substance.ok_or_else(|| missing("substance"))?,
        container: container.ok_or_else(|| missing("container"))?,
        day: day.ok_or_else(|| missing("day"))?,
        fill: fill.ok_or_else(|| missing("fill_g"))?,
    })
}

pub fn parse_trial(text: &str) -> Result<Trial> {
    let mut header: Option<Header> = None;
    let mut frames: Vec<CapacitanceFrame> = Vec::new();
    let mut scale: Vec<ScaleSample> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix("#trial") {
            if header.is_some() {
                return Err(perr(line, "duplicate header"));
            }
            header = Some(parse_header(rest, line)?);
            continue;
        }
        if header.is_none() {
            return Err(perr(line, "record before `#trial` header"));
        }
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("C") => {
                let idx = frames.len();
                let t = parse_f64(toks.next().ok_or_else(|| perr(line, format!("frame {idx}: missing time")))?, line, "time")?;
                let vals: Vec<&str> = toks.collect();
                if vals.len() != ELECTRODES {
                    return Err(perr(
                        line,
                        format!("frame {idx}: expected {ELECTRODES} readings, got {}", vals.len()),
                    ));
                }
                let mut readings = [0.0; ELECTRODES];
                for (r, tok) in readings.iter_mut().zip(vals) {
                    *r = parse_f64(tok, line, "reading")?;
                }
                if let Some(prev) = frames.last() {
                    if t <= prev.t {
                        return Err(perr(line, format!("frame {idx}: non-monotone timestamp {t} after {}", prev.t)));
                    }
                }
                frames.push(CapacitanceFrame { t, readings });
            }
            Some("S") => {
                let idx = scale.len();
                let vals: Vec<&str> = toks.collect();
                if vals.len() != 2 {
                    return Err(perr(line, format!("scale sample {idx}: expected time and weight")));
                }
                let t = parse_f64(vals[0], line, "time")?;
                let weight = parse_f64(vals[1], line, "weight")?;
                if let Some(prev) = scale.last() {
                    if t <= prev.t {
                        return Err(perr(line, format!("scale sample {idx}: non-monotone timestamp {t} after {}", prev.t)));
                    }
                }
                scale.push(ScaleSample { t, weight });
            }
            Some(tag) => return Err(perr(line, format!("unknown record type `{tag}`"))),
            None => unreachable!("blank lines skipped above"),
        }
    }

    let h = header.ok_or_else(|| perr(0, "missing `#trial` header"))?;
    let trial = Trial {
        kind: h.kind,
        substance: h.substance,
        container: h.container,
        frames,
        scale,
        day_seed: h.day,
        initial_fill: h.fill,
    };
    trial.validate()?;
    Ok(trial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::GRASP_FRAMES;
    use proptest::prelude::*;

    fn grasp_trial() -> Trial {
        let frames = (0..GRASP_FRAMES)
            .map(|k| CapacitanceFrame {
                t: k as f64 * 0.01,
                readings: std::array::from_fn(|e| 100.0 + e as f64 + k as f64 * 0.5),
            })
            .collect();
        Trial {
            kind: TrialKind::Grasp,
            substance: Substance::Honey,
            container: Some(Container::Glass),
            frames,
            scale: vec![],
            day_seed: 2,
            initial_fill: 150.0,
        }
    }

    #[test]
    fn grasp_log_round_trip() {
        let t = grasp_trial();
        let text = write_trial(&t);
        let back = parse_trial(&text).unwrap();
        assert_eq!(back.frames.len(), 200);
        assert_eq!(back.kind, TrialKind::Grasp);
        assert_eq!(back, t);
    }

    #[test]
    fn short_frame_reports_index() {
        let mut text = write_trial(&grasp_trial());
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        // line 0 is the header, so frame 37 sits on line index 38
        let mut toks: Vec<&str> = lines[38].split(' ').collect();
        toks.pop();
        lines[38] = toks.join(" ");
        text = lines.join("\n");
        let err = parse_trial(&text).unwrap_err().to_string();
        assert!(err.contains("frame 37: expected 10 readings"), "{err}");
        assert!(err.contains("line 39"), "{err}");
    }

    #[test]
    fn non_monotone_time_rejected() {
        let text = "#trial kind=pour substance=water container=pp day=0 fill_g=150\n\
                    C 0 1 1 1 1 1 1 1 1 1 1\nC 0 1 1 1 1 1 1 1 1 1 1\n";
        let err = parse_trial(text).unwrap_err();
        assert!(matches!(err, SignalError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn header_errors() {
        assert!(parse_trial("C 0 1 1 1 1 1 1 1 1 1 1\n").is_err());
        assert!(parse_trial("#trial kind=pour substance=water day=0 fill_g=1\n").is_err());
        assert!(parse_trial("#trial kind=pour substance=honey container=none day=0 fill_g=1\n").is_err());
        assert!(parse_trial("#trial kind=grasp substance=honey container=pp day=0 fill_g=1\n").is_err());
    }

    fn arb_reading() -> impl Strategy<Value = f64> {
        prop_oneof![0.0..5000.0f64, (0u32..100000).prop_map(|v| v as f64 / 7.0)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pour_round_trip_is_identity(
            n in 1usize..60,
            m in 0usize..8,
            day in -5i64..50,
            fill in 0.0..400.0f64,
            seed in proptest::collection::vec(arb_reading(), 10),
            dts in proptest::collection::vec(0.001..0.05f64, 60),
        ) {
            let mut t = 0.0;
            let frames: Vec<CapacitanceFrame> = (0..n).map(|k| {
                t += dts[k];
                CapacitanceFrame { t, readings: std::array::from_fn(|e| seed[e] * (1.0 + k as f64 / 3.0)) }
            }).collect();
            let scale = (0..m).map(|k| ScaleSample { t: k as f64 * 0.1, weight: k as f64 * 1.5 - 1.0 }).collect();
            let trial = Trial {
                kind: TrialKind::Pour, substance: Substance::Rice, container: None,
                frames, scale, day_seed: day, initial_fill: fill,
            };
            let text = write_trial(&trial);
            let back = parse_trial(&text).unwrap();
            prop_assert_eq!(&back, &trial);
            prop_assert_eq!(write_trial(&back), text);
        }
    }
}
