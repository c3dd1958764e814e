//! CSV ingestion and export.
//!
//! `events.csv`: `patient_id,stay_seq,kind,feature,t_rel_hours,value`
//! `outcomes.csv`: `patient_id,death_t_rel_hours` (empty = survived)

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Outcome, RawEvent};
use crate::error::{Error, Result};

pub const EVENTS_HEADER: [&str; 6] = ["patient_id", "stay_seq", "kind", "feature", "t_rel_hours", "value"];
pub const OUTCOMES_HEADER: [&str; 2] = ["patient_id", "death_t_rel_hours"];

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str], what: &str) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Validation(format!(
            "{what} header must be `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

pub fn read_events<R: Read>(input: R) -> Result<Vec<RawEvent>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &EVENTS_HEADER, "events.csv")?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RawEvent>().enumerate() {
        let event = row.map_err(|e| Error::Validation(format!("events.csv line {}: {e}", i + 2)))?;
        event
            .validate()
            .map_err(|e| Error::Validation(format!("events.csv line {}: {e}", i + 2)))?;
        out.push(event);
    }
    Ok(out)
}

pub fn read_outcomes<R: Read>(input: R) -> Result<Vec<Outcome>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &OUTCOMES_HEADER, "outcomes.csv")?;
    reader
        .deserialize::<Outcome>()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Validation(format!("outcomes.csv line {}: {e}", i + 2))))
        .collect()
}

pub fn write_events<W: Write>(output: W, events: &[RawEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outcomes<W: Write>(output: W, outcomes: &[Outcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    for o in outcomes {
        w.serialize(o)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_events(path: &Path) -> Result<Vec<RawEvent>> {
    read_events(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn load_outcomes(path: &Path) -> Result<Vec<Outcome>> {
    read_outcomes(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventKind, Feature};

    #[test]
    fn events_roundtrip() {
        let events = vec![
            RawEvent {
                patient_id: "p1".into(),
                stay_seq: 1,
                kind: EventKind::Vital,
                feature: Feature::Spo2,
                t_rel_hours: 0.25,
                value: 97.5,
            },
            RawEvent {
                patient_id: "p1".into(),
                stay_seq: 1,
                kind: EventKind::Lab,
                feature: Feature::Bun,
                t_rel_hours: 3.0,
                value: 12.0,
            },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("patient_id,stay_seq,kind,feature,t_rel_hours,value\n"));
        assert!(text.contains("p1,1,vital,spo2,0.25,97.5"));
        assert_eq!(read_events(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn outcomes_empty_field_is_survivor() {
        let text = "patient_id,death_t_rel_hours\na,\nb,30.5\n";
        let o = read_outcomes(text.as_bytes()).unwrap();
        assert_eq!(o[0].death_t_rel_hours, None);
        assert_eq!(o[1].death_t_rel_hours, Some(30.5));
        let mut buf = Vec::new();
        write_outcomes(&mut buf, &o).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn bad_rows_report_line() {
        let text = "patient_id,stay_seq,kind,feature,t_rel_hours,value\np,1,vital,heart_rate,1,80\np,1,vital,pulse,1,80\n";
        let err = read_events(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let text = "patient_id,stay_seq,kind,feature,t_rel_hours,value\np,1,lab,heart_rate,1,80\n";
        assert!(read_events(text.as_bytes()).is_err());
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_events("a,b\n".as_bytes()).is_err());
    }
}
