//! Canonical record serialization.
//!
//! The canonical form is single-line JSON with lexicographically sorted
//! keys and a fixed `%Y-%m-%dT%H:%M:%S%.6fZ` timestamp format. Two records
//! that are equal as values encode to identical bytes regardless of how
//! their payload maps were populated, and the encoding is injective on
//! valid records.

use serde::Deserialize;
use thiserror::Error;

use super::TelemetryRecord;

#[derive(Debug, Error)]
pub enum CanonError {
    #[error("canonical record is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("decoded record violates invariants: {0}")]
    Invalid(#[from] super::RecordInvalid),
}

/// Encodes a record into its canonical single-line byte form (no trailing
/// newline). Total on valid records.
pub fn canonical_encode(record: &TelemetryRecord) -> Vec<u8> {
    // Struct fields are declared sorted and payload is a BTreeMap, so
    // serde_json emits sorted keys without a post-pass.
    serde_json::to_vec(record).expect("record serialization is infallible")
}

/// Decodes one canonical line back into a record, checking invariants.
pub fn canonical_decode(bytes: &[u8]) -> Result<TelemetryRecord, CanonError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let record = TelemetryRecord::deserialize(&mut de)?;
    de.end()?;
    record.validate()?;
    Ok(record)
}

/// Serde adapter for UTC timestamps with exactly six fractional digits.
pub mod ts_micros {
    use chrono::{DateTime, NaiveDateTime, Utc};
    use serde::{self, Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.6fZ";

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.format(FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        let naive = NaiveDateTime::parse_from_str(&raw, FORMAT).map_err(serde::de::Error::custom)?;
        Ok(naive.and_utc())
    }

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.format(FORMAT).to_string()
    }

    pub fn parse(raw: &str) -> Option<DateTime<Utc>> {
        NaiveDateTime::parse_from_str(raw, FORMAT)
            .ok()
            .map(|n| n.and_utc())
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use chrono::TimeZone;

    fn sample_record() -> TelemetryRecord {
        let ts = Utc.with_ymd_and_hms(2026, 2, 3, 4, 5, 6).unwrap()
            + chrono::Duration::microseconds(123_456);
        TelemetryRecord::new(RunId::generate(), "run_primitive", TelemetryLevel::L3, kind::TASK_TIMING, ts)
            .with_iteration(3)
            .with_population(1)
            .with_payload("wall_clock_s", 1.5)
            .with_payload("outcome", "ok")
            .with_payload("attempt", 0i64)
    }

    #[test]
    fn round_trip_identity() {
        let r = sample_record();
        let bytes = canonical_encode(&r);
        let back = canonical_decode(&bytes).unwrap();
        assert_eq!(back, r);
        assert_eq!(canonical_encode(&back), bytes);
    }

    #[test]
    fn empty_payload_round_trips() {
        let r = TelemetryRecord::new(
            RunId::generate(),
            "t",
            TelemetryLevel::L2,
            kind::QPU_JOB,
            now_micros(),
        );
        let back = canonical_decode(&canonical_encode(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn insertion_order_does_not_change_bytes() {
        let mut a = sample_record();
        let mut b = a.clone();
        a.payload = Payload::new();
        a.payload.insert("alpha".into(), 1i64.into());
        a.payload.insert("zeta".into(), 2i64.into());
        b.payload = Payload::new();
        b.payload.insert("zeta".into(), 2i64.into());
        b.payload.insert("alpha".into(), 1i64.into());
        assert_eq!(canonical_encode(&a), canonical_encode(&b));
    }

    #[test]
    fn keys_appear_sorted_in_output() {
        let bytes = canonical_encode(&sample_record());
        let text = String::from_utf8(bytes).unwrap();
        let positions: Vec<usize> = [
            "\"blob_refs\"",
            "\"iteration\"",
            "\"kind\"",
            "\"level\"",
            "\"payload\"",
            "\"population\"",
            "\"record_id\"",
            "\"run_id\"",
            "\"task_name\"",
            "\"timestamp\"",
        ]
        .iter()
        .map(|k| text.find(k).expect(k))
        .collect();
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        assert_eq!(positions, sorted);
        assert!(!text.contains('\n'));
    }

    #[test]
    fn timestamp_has_fixed_width_fraction() {
        let text = String::from_utf8(canonical_encode(&sample_record())).unwrap();
        assert!(text.contains("2026-02-03T04:05:06.123456Z"));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = canonical_encode(&sample_record());
        bytes.extend_from_slice(b"{}");
        assert!(canonical_decode(&bytes).is_err());
    }

    #[test]
    fn int_and_real_stay_distinct() {
        let base = TelemetryRecord::new(
            RunId::generate(),
            "t",
            TelemetryLevel::L4,
            kind::SQD_RESULT,
            now_micros(),
        );
        let i = base.clone().with_payload("v", 5i64);
        let r = base.with_payload("v", 5.0f64);
        assert_ne!(canonical_encode(&i), canonical_encode(&r));
        let ri = canonical_decode(&canonical_encode(&i)).unwrap();
        let rr = canonical_decode(&canonical_encode(&r)).unwrap();
        assert_eq!(ri.payload["v"], PayloadValue::Int(5));
        assert_eq!(rr.payload["v"], PayloadValue::Real(5.0));
    }
}
