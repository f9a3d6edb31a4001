//! Text dump of one scene's ranked instances.
//!
//! ```text
//! psgformer-predictions 1
//! scene room_000
//! points 2000
//! superpoints 312
//! instances 2
//! 1 0.8731 10:25,40:3
//! 0 0.5120 100:60
//! ```
//!
//! Each instance line holds the class, the final score and the point mask as
//! `start:length` runs of set points (`-` for an empty mask).

use std::io::{self, BufRead, Write};

use super::PointInstance;

const MAGIC: &str = "psgformer-predictions 1";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDump {
    pub scene: String,
    pub points: usize,
    pub superpoints: usize,
    pub instances: Vec<PointInstance>,
}

pub fn encode_rle(mask: &[bool]) -> String {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let start = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            runs.push(format!("{start}:{}", i - start));
        } else {
            i += 1;
        }
    }
    if runs.is_empty() {
        "-".into()
    } else {
        runs.join(",")
    }
}

/// Inverse of [`encode_rle`] for a mask of `len` points.
pub fn decode_rle(text: &str, len: usize) -> Result<Vec<bool>, String> {
    let mut mask = vec![false; len];
    if text == "-" {
        return Ok(mask);
    }
    for run in text.split(',') {
        let (start, n) = run.split_once(':').ok_or_else(|| format!("malformed run {run:?}"))?;
        let start: usize = start.parse().map_err(|_| format!("malformed run {run:?}"))?;
        let n: usize = n.parse().map_err(|_| format!("malformed run {run:?}"))?;
        if n == 0 || start + n > len {
            return Err(format!("run {run:?} outside {len} points"));
        }
        mask[start..start + n].fill(true);
    }
    Ok(mask)
}

pub fn write_dump<W: Write>(mut w: W, dump: &PredictionDump) -> io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "scene {}", dump.scene)?;
    writeln!(w, "points {}", dump.points)?;
    writeln!(w, "superpoints {}", dump.superpoints)?;
    writeln!(w, "instances {}", dump.instances.len())?;
    for inst in &dump.instances {
        writeln!(w, "{} {} {}", inst.class, inst.score, encode_rle(&inst.mask))?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(r: R) -> Result<PredictionDump, DumpError> {
    let lines: Vec<String> = r.lines().collect::<Result<_, _>>()?;
    let err = |line: usize, message: String| DumpError::Parse {
        line: line + 1,
        message,
    };
    let field = |i: usize, key: &str| -> Result<&str, DumpError> {
        let line = lines.get(i).ok_or_else(|| err(i, format!("missing {key} line")))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| err(i, format!("expected `{key} ...`")))
    };
    let number = |i: usize, key: &str| -> Result<usize, DumpError> {
        field(i, key)?
            .parse()
            .map_err(|_| err(i, format!("{key} is not a count")))
    };
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(err(0, "not a prediction dump".into()));
    }
    let scene = field(1, "scene")?.to_string();
    let points = number(2, "points")?;
    let superpoints = number(3, "superpoints")?;
    let count = number(4, "instances")?;
    if lines.len() != 5 + count {
        return Err(err(lines.len(), format!("expected {count} instance lines")));
    }
    let mut instances = Vec::with_capacity(count);
    for (i, line) in lines.iter().enumerate().skip(5) {
        let parts: Vec<&str> = line.split(' ').collect();
        let [class, score, rle] = parts[..] else {
            return Err(err(i, "expected `class score runs`".into()));
        };
        instances.push(PointInstance {
            class: class.parse().map_err(|_| err(i, format!("bad class {class:?}")))?,
            score: score.parse().map_err(|_| err(i, format!("bad score {score:?}")))?,
            mask: decode_rle(rle, points).map_err(|m| err(i, m))?,
        });
    }
    Ok(PredictionDump {
        scene,
        points,
        superpoints,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let mask = [false, true, true, false, true, false, false, true];
        assert_eq!(encode_rle(&mask), "1:2,4:1,7:1");
        assert_eq!(decode_rle("1:2,4:1,7:1", 8).unwrap(), mask);
        assert_eq!(encode_rle(&[false; 3]), "-");
        assert!(decode_rle("2:5", 4).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let dump = PredictionDump {
            scene: "room_001".into(),
            points: 5,
            superpoints: 2,
            instances: vec![PointInstance {
                class: 2,
                score: 0.123456789,
                mask: vec![true, false, false, true, true],
            }],
        };
        let mut buf = Vec::new();
        write_dump(&mut buf, &dump).unwrap();
        assert_eq!(read_dump(&buf[..]).unwrap(), dump);
        let text = String::from_utf8(buf).unwrap().replace("instances 1", "instances 2");
        assert!(matches!(read_dump(text.as_bytes()), Err(DumpError::Parse { .. })));
    }
}
