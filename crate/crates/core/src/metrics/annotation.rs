//! Tab-separated `onset<TAB>offset<TAB>label` event lists.

use std::fmt::Write;

use super::roll::EventRoll;
use crate::error::{Result, SedError};
use crate::features::FrameLayout;

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset: f64,
    pub offset: f64,
    pub label: String,
}

/// Parses one event per non-blank line. Fields may be separated by tabs or
/// runs of whitespace. Lines with extra leading columns (file name, scene)
/// are accepted: the first two consecutive numeric fields are taken as
/// onset and offset and the next field as the label.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let err = |reason: String| SedError::Annotation {
            line: line_no,
            reason,
        };
        let start = (0..fields.len().saturating_sub(2))
            .find(|&i| fields[i].parse::<f64>().is_ok() && fields[i + 1].parse::<f64>().is_ok())
            .ok_or_else(|| err(format!("expected onset, offset and label in {trimmed:?}")))?;
        let onset: f64 = fields[start].parse().expect("checked");
        let offset: f64 = fields[start + 1].parse().expect("checked");
        let label = fields[start + 2].to_string();
        if !(onset.is_finite() && offset.is_finite()) || onset < 0.0 || offset < onset {
            return Err(err(format!("invalid interval [{onset}, {offset})")));
        }
        if label.is_empty() {
            return Err(err("empty label".into()));
        }
        events.push(Annotation {
            onset,
            offset,
            label,
        });
    }
    Ok(events)
}

/// Inverse of [`parse_annotations`]; times use the shortest representation
/// that reads back to the same `f64`.
pub fn format_annotations(events: &[Annotation]) -> String {
    let mut out = String::new();
    for e in events {
        writeln!(out, "{}\t{}\t{}", e.onset, e.offset, e.label).expect("write to string");
    }
    out
}

/// A frame is active for an event when its centre lies in `[onset, offset)`.
pub fn annotations_to_roll(
    events: &[Annotation],
    classes: &[String],
    n_frames: usize,
    layout: &FrameLayout,
) -> Result<EventRoll> {
    let mut roll = EventRoll::new(n_frames, classes.len());
    for e in events {
        let class = classes
            .iter()
            .position(|c| *c == e.label)
            .ok_or_else(|| SedError::Data(format!("unknown event label {:?}", e.label)))?;
        for f in 0..n_frames {
            let centre = layout.frame_center_seconds(f);
            if centre >= e.onset && centre < e.offset {
                roll.set(f, class, true);
            }
        }
    }
    Ok(roll)
}

/// One event per maximal run of active frames, with onset at the centre of
/// the first frame and offset at the centre of the frame after the run, so
/// that [`annotations_to_roll`] maps the result back to the same roll.
pub fn roll_to_annotations(roll: &EventRoll, classes: &[String], layout: &FrameLayout) -> Vec<Annotation> {
    let mut events = Vec::new();
    for (c, label) in classes.iter().enumerate().take(roll.n_classes()) {
        let mut start = None;
        for f in 0..=roll.n_frames() {
            let on = f < roll.n_frames() && roll.get(f, c);
            match (on, start) {
                (true, None) => start = Some(f),
                (false, Some(s)) => {
                    events.push(Annotation {
                        onset: layout.frame_center_seconds(s),
                        offset: layout.frame_center_seconds(f),
                        label: label.clone(),
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then_with(|| a.label.cmp(&b.label)));
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    #[test]
    fn parse_three_and_five_column_lines() {
        let text = "0.5\t1.25\tdog\n\n# comment\n2  3  cat\nfile.wav\thome\t4.0\t4.5\tdog\n";
        let events = parse_annotations(text).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0], Annotation { onset: 0.5, offset: 1.25, label: "dog".into() });
        assert_eq!(events[1].label, "cat");
        assert_eq!(events[2].onset, 4.0);
        assert!(parse_annotations("1.0\tdog\n").is_err());
        assert!(parse_annotations("2.0\t1.0\tdog\n").is_err());
    }

    #[test]
    fn frame_centres_decide_activity() {
        let layout = FrameLayout::new(&FeatureConfig::default(), 16000);
        // frame centres are at 0.01, 0.02, 0.03, ...
        let classes = vec!["a".to_string()];
        let events = vec![Annotation { onset: 0.02, offset: 0.04, label: "a".into() }];
        let roll = annotations_to_roll(&events, &classes, 5, &layout).unwrap();
        assert_eq!(roll.cells(), &[false, true, true, false, false]);
        let unknown = vec![Annotation { onset: 0.0, offset: 1.0, label: "b".into() }];
        assert!(annotations_to_roll(&unknown, &classes, 5, &layout).is_err());
    }

    #[test]
    fn roll_round_trips_through_annotations() {
        let layout = FrameLayout::new(&FeatureConfig::default(), 44100);
        let classes = vec!["a".to_string(), "b".to_string()];
        let cells: Vec<bool> = (0..40).map(|i| (i * 7 + i / 3) % 5 < 2).collect();
        let roll = EventRoll::from_active(20, 2, cells).unwrap();
        let events = roll_to_annotations(&roll, &classes, &layout);
        let text = format_annotations(&events);
        let back = annotations_to_roll(&parse_annotations(&text).unwrap(), &classes, 20, &layout).unwrap();
        assert_eq!(back, roll);
    }
}
