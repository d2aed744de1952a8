//! Core records shared by every module: patient profiles, department stays,
//! trajectories and bucketed arrival series, plus event-log CSV ingestion.
//!
//! Time is a real number of hours since the scenario epoch. There is no
//! calendar arithmetic: a day is 24 h, a week 168 h and a month 720 h.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_AGE: u32 = 120;
pub const MAX_COMORBIDITY: u32 = 30;

/// Exact header of the event-log CSV.
pub const EVENT_LOG_HEADER: &str =
    "patient_id,department,enter_time,exit_time,cost,age,gender,comorbidity_count,drg";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("malformed header: expected `{EVENT_LOG_HEADER}`")]
    MalformedHeader,
    #[error("line {line}: {reason}")]
    RowParseError { line: usize, reason: String },
    #[error("line {line}: invariant violated for field `{field}`")]
    InvariantViolation { line: usize, field: &'static str },
    #[error("patient {0} carries conflicting attributes")]
    ConflictingProfile(String),
    #[error("patient {0} has overlapping stays")]
    OverlappingStays(String),
    #[error("window spans zero buckets")]
    EmptyWindow,
    #[error("horizon {horizon} h is not a multiple of the bucket width {width} h")]
    HorizonNotMultiple { horizon: f64, width: f64 },
    #[error("start time {0} h is not aligned to a bucket boundary")]
    MisalignedStart(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient_id: String,
    pub age: u32,
    pub gender: Gender,
    pub comorbidity_count: u32,
    pub drg: String,
}

impl PatientProfile {
    fn same_attributes(&self, other: &PatientProfile) -> bool {
        self.age == other.age
            && self.gender == other.gender
            && self.comorbidity_count == other.comorbidity_count
            && self.drg == other.drg
    }
}

/// One department stay of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub patient_id: String,
    pub department: String,
    pub enter_time: f64,
    pub exit_time: f64,
    pub cost: f64,
}

impl EventLogEntry {
    pub fn los(&self) -> f64 {
        self.exit_time - self.enter_time
    }
}

/// Time-ordered stays of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient_id: String,
    pub stays: Vec<EventLogEntry>,
}

impl Trajectory {
    pub fn admission_time(&self) -> f64 {
        self.stays[0].enter_time
    }

    pub fn discharge_time(&self) -> f64 {
        self.stays[self.stays.len() - 1].exit_time
    }

    pub fn departments(&self) -> impl Iterator<Item = &str> {
        self.stays.iter().map(|s| s.department.as_str())
    }

    /// Admission-level cost: the sum of the per-stay costs.
    pub fn total_cost(&self) -> f64 {
        self.stays.iter().map(|s| s.cost).sum()
    }

    pub fn total_los(&self) -> f64 {
        self.stays.iter().map(EventLogEntry::los).sum()
    }

    pub fn len(&self) -> usize {
        self.stays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stays.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BucketWidth {
    Hour,
    Day,
    Week,
    Month,
}

impl BucketWidth {
    pub fn hours(self) -> f64 {
        match self {
            BucketWidth::Hour => 1.0,
            BucketWidth::Day => 24.0,
            BucketWidth::Week => 168.0,
            BucketWidth::Month => 720.0,
        }
    }
}

impl std::str::FromStr for BucketWidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hour" => Ok(BucketWidth::Hour),
            "day" => Ok(BucketWidth::Day),
            "week" => Ok(BucketWidth::Week),
            "month" => Ok(BucketWidth::Month),
            other => Err(format!("unknown bucket width `{other}`")),
        }
    }
}

/// Admission counts per fixed-width time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSeries {
    pub bucket_width: BucketWidth,
    pub start_time: f64,
    pub counts: Vec<u64>,
}

impl ArrivalSeries {
    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Start time of bucket `k`.
    pub fn bucket_start(&self, k: usize) -> f64 {
        self.start_time + k as f64 * self.bucket_width.hours()
    }

    /// Splits into the first `head` buckets and the rest.
    pub fn split_at(&self, head: usize) -> (ArrivalSeries, ArrivalSeries) {
        let head = head.min(self.counts.len());
        let first = ArrivalSeries {
            bucket_width: self.bucket_width,
            start_time: self.start_time,
            counts: self.counts[..head].to_vec(),
        };
        let second = ArrivalSeries {
            bucket_width: self.bucket_width,
            start_time: self.bucket_start(head),
            counts: self.counts[head..].to_vec(),
        };
        (first, second)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartmentSpec {
    pub name: String,
    /// `None` means unbounded.
    #[serde(default)]
    pub bed_capacity: Option<u32>,
}

/// Optional closed alphabets checked during ingestion.
#[derive(Debug, Clone, Default)]
pub struct LogSchema {
    pub departments: Option<BTreeSet<String>>,
    pub drgs: Option<BTreeSet<String>>,
}

/// Parses an event-log CSV with open department and DRG alphabets.
pub fn parse_event_log(
    text: &str,
) -> Result<(Vec<EventLogEntry>, Vec<PatientProfile>), DomainError> {
    parse_event_log_with(text, &LogSchema::default())
}

pub fn parse_event_log_with(
    text: &str,
    schema: &LogSchema,
) -> Result<(Vec<EventLogEntry>, Vec<PatientProfile>), DomainError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    match records.next() {
        Some(Ok(header)) => {
            let joined: Vec<&str> = header.iter().collect();
            if joined.join(",") != EVENT_LOG_HEADER {
                return Err(DomainError::MalformedHeader);
            }
        }
        _ => return Err(DomainError::MalformedHeader),
    }

    let mut entries = Vec::new();
    let mut profiles: Vec<PatientProfile> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, record) in records.enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| DomainError::RowParseError {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != 9 {
            return Err(DomainError::RowParseError {
                line,
                reason: format!("expected 9 fields, found {}", record.len()),
            });
        }
        let (entry, profile) = parse_row(&record, line, schema)?;
        match seen.get(&profile.patient_id) {
            Some(&i) => {
                if !profiles[i].same_attributes(&profile) {
                    return Err(DomainError::ConflictingProfile(profile.patient_id));
                }
            }
            None => {
                seen.insert(profile.patient_id.clone(), profiles.len());
                profiles.push(profile);
            }
        }
        entries.push(entry);
    }
    Ok((entries, profiles))
}

fn parse_row(
    record: &csv::StringRecord,
    line: usize,
    schema: &LogSchema,
) -> Result<(EventLogEntry, PatientProfile), DomainError> {
    let field = |i: usize| &record[i];
    let real = |i: usize, name: &str| -> Result<f64, DomainError> {
        field(i)
            .parse::<f64>()
            .map_err(|_| DomainError::RowParseError {
                line,
                reason: format!("`{name}` is not a real number"),
            })
    };
    let int = |i: usize, name: &str| -> Result<u32, DomainError> {
        field(i)
            .parse::<u32>()
            .map_err(|_| DomainError::RowParseError {
                line,
                reason: format!("`{name}` is not a non-negative integer"),
            })
    };
    let violation = |field: &'static str| DomainError::InvariantViolation { line, field };

    let patient_id = field(0).to_string();
    if patient_id.is_empty() {
        return Err(violation("patient_id"));
    }
    let department = field(1).to_string();
    if department.is_empty()
        || schema
            .departments
            .as_ref()
            .is_some_and(|d| !d.contains(&department))
    {
        return Err(violation("department"));
    }
    let enter_time = real(2, "enter_time")?;
    let exit_time = real(3, "exit_time")?;
    let cost = real(4, "cost")?;
    if !enter_time.is_finite() || enter_time < 0.0 {
        return Err(violation("enter_time"));
    }
    if !exit_time.is_finite() || exit_time <= enter_time {
        return Err(violation("exit_time"));
    }
    if !cost.is_finite() || cost < 0.0 {
        return Err(violation("cost"));
    }
    let age = int(5, "age")?;
    if age > MAX_AGE {
        return Err(violation("age"));
    }
    let gender = match field(6) {
        "F" => Gender::F,
        "M" => Gender::M,
        _ => return Err(violation("gender")),
    };
    let comorbidity_count = int(7, "comorbidity_count")?;
    if comorbidity_count > MAX_COMORBIDITY {
        return Err(violation("comorbidity_count"));
    }
    let drg = field(8).to_string();
    if drg.is_empty() || schema.drgs.as_ref().is_some_and(|d| !d.contains(&drg)) {
        return Err(violation("drg"));
    }
    Ok((
        EventLogEntry {
            patient_id: patient_id.clone(),
            department,
            enter_time,
            exit_time,
            cost,
        },
        PatientProfile {
            patient_id,
            age,
            gender,
            comorbidity_count,
            drg,
        },
    ))
}

/// Rounds to the 6-decimal grid used by the CSV format, so that values
/// survive a write/parse cycle unchanged.
pub fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Writes the canonical CSV form: fixed header, LF endings, reals with six
/// decimals, rows in entry order.
///
/// Panics if an entry references a patient missing from `profiles`.
pub fn write_event_log(entries: &[EventLogEntry], profiles: &[PatientProfile]) -> String {
    let by_id: HashMap<&str, &PatientProfile> =
        profiles.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let mut out = String::with_capacity(64 * (entries.len() + 1));
    out.push_str(EVENT_LOG_HEADER);
    out.push('\n');
    for e in entries {
        let p = by_id
            .get(e.patient_id.as_str())
            .unwrap_or_else(|| panic!("no profile for patient {}", e.patient_id));
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{},{},{}\n",
            e.patient_id,
            e.department,
            e.enter_time,
            e.exit_time,
            e.cost,
            p.age,
            p.gender,
            p.comorbidity_count,
            p.drg
        ));
    }
    out
}

/// Earliest enter time per patient, i.e. the admission instant.
pub fn admission_times(entries: &[EventLogEntry]) -> BTreeMap<&str, f64> {
    let mut first: BTreeMap<&str, f64> = BTreeMap::new();
    for e in entries {
        first
            .entry(e.patient_id.as_str())
            .and_modify(|t| *t = t.min(e.enter_time))
            .or_insert(e.enter_time);
    }
    first
}

/// Counts admissions (first stay per patient) per bucket over
/// `[start_time, start_time + horizon)`.
pub fn bucketize(
    entries: &[EventLogEntry],
    bucket_width: BucketWidth,
    start_time: f64,
    horizon: f64,
) -> Result<ArrivalSeries, DomainError> {
    let w = bucket_width.hours();
    let n_buckets = horizon / w;
    if !(n_buckets >= 1.0) {
        return Err(DomainError::EmptyWindow);
    }
    if n_buckets.fract() != 0.0 {
        return Err(DomainError::HorizonNotMultiple { horizon, width: w });
    }
    if (start_time / w).fract() != 0.0 {
        return Err(DomainError::MisalignedStart(start_time));
    }
    let n = n_buckets as usize;
    let mut counts = vec![0u64; n];
    for &t in admission_times(entries).values() {
        if t < start_time {
            continue;
        }
        let k = ((t - start_time) / w).floor() as usize;
        if k < n {
            counts[k] += 1;
        }
    }
    Ok(ArrivalSeries {
        bucket_width,
        start_time,
        counts,
    })
}

/// Groups stays by patient. Trajectories come out ordered by admission time,
/// then patient id.
pub fn extract_trajectories(entries: &[EventLogEntry]) -> Result<Vec<Trajectory>, DomainError> {
    let mut groups: BTreeMap<&str, Vec<EventLogEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.patient_id.as_str()).or_default().push(e.clone());
    }
    let mut out = Vec::with_capacity(groups.len());
    for (id, mut stays) in groups {
        stays.sort_by(|a, b| a.enter_time.total_cmp(&b.enter_time));
        if stays.windows(2).any(|w| w[1].enter_time < w[0].exit_time) {
            return Err(DomainError::OverlappingStays(id.to_string()));
        }
        out.push(Trajectory {
            patient_id: id.to_string(),
            stays,
        });
    }
    out.sort_by(|a, b| {
        a.admission_time()
            .total_cmp(&b.admission_time())
            .then_with(|| a.patient_id.cmp(&b.patient_id))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, dept: &str, enter: f64, exit: f64) -> EventLogEntry {
        EventLogEntry {
            patient_id: id.into(),
            department: dept.into(),
            enter_time: enter,
            exit_time: exit,
            cost: 1.0,
        }
    }

    #[test]
    fn parses_two_row_file() {
        let text = format!(
            "{EVENT_LOG_HEADER}\nP1,A,0.5,10.0,12.25,40,F,1,X\nP1,B,10.0,20.0,3.0,40,F,1,X\n"
        );
        let (entries, profiles) = parse_event_log(&text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(profiles.len(), 1);
        assert_eq!(entries[1].department, "B");
        assert_eq!(profiles[0].gender, Gender::F);
    }

    #[test]
    fn accepts_crlf() {
        let text = format!("{EVENT_LOG_HEADER}\r\nP1,A,0,1,0,1,M,0,X\r\n");
        let (entries, _) = parse_event_log(&text).unwrap();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn rejects_bad_header() {
        let text = "patient,department\nP1,A\n";
        assert_eq!(parse_event_log(text), Err(DomainError::MalformedHeader));
        assert_eq!(parse_event_log(""), Err(DomainError::MalformedHeader));
    }

    #[test]
    fn exit_before_enter_is_invariant_violation() {
        let text = format!("{EVENT_LOG_HEADER}\nP1,A,5,5,0,40,F,1,X\n");
        assert_eq!(
            parse_event_log(&text),
            Err(DomainError::InvariantViolation {
                line: 2,
                field: "exit_time"
            })
        );
    }

    #[test]
    fn reports_row_errors_with_line() {
        let text = format!("{EVENT_LOG_HEADER}\nP1,A,0,1,0,40,F,1,X\nP2,A,zero,1,0,40,F,1,X\n");
        match parse_event_log(&text) {
            Err(DomainError::RowParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{EVENT_LOG_HEADER}\nP1,A,0,1,0,121,F,1,X\n");
        assert!(matches!(
            parse_event_log(&text),
            Err(DomainError::InvariantViolation { field: "age", .. })
        ));
        let text = format!("{EVENT_LOG_HEADER}\nP1,A,0,1,0,12,U,1,X\n");
        assert!(matches!(
            parse_event_log(&text),
            Err(DomainError::InvariantViolation { field: "gender", .. })
        ));
    }

    #[test]
    fn conflicting_profiles_rejected() {
        let text = format!("{EVENT_LOG_HEADER}\nP1,A,0,1,0,40,F,1,X\nP1,B,1,2,0,41,F,1,X\n");
        assert_eq!(
            parse_event_log(&text),
            Err(DomainError::ConflictingProfile("P1".into()))
        );
    }

    #[test]
    fn schema_restricts_alphabets() {
        let schema = LogSchema {
            departments: Some(["A".to_string()].into()),
            drgs: None,
        };
        let text = format!("{EVENT_LOG_HEADER}\nP1,B,0,1,0,40,F,1,X\n");
        assert!(matches!(
            parse_event_log_with(&text, &schema),
            Err(DomainError::InvariantViolation {
                field: "department",
                ..
            })
        ));
    }

    #[test]
    fn bucketize_daily_example() {
        let entries = vec![
            entry("a", "A", 2.0, 3.0),
            entry("b", "A", 12.0, 13.0),
            entry("c", "A", 30.0, 31.0),
            // transfer, not an admission
            entry("a", "B", 3.0, 40.0),
        ];
        let s = bucketize(&entries, BucketWidth::Day, 0.0, 48.0).unwrap();
        assert_eq!(s.counts, vec![2, 1]);
    }

    #[test]
    fn bucketize_empty_log_and_window_errors() {
        let s = bucketize(&[], BucketWidth::Hour, 0.0, 5.0).unwrap();
        assert_eq!(s.counts, vec![0; 5]);
        assert_eq!(
            bucketize(&[], BucketWidth::Day, 0.0, 0.0),
            Err(DomainError::EmptyWindow)
        );
        assert!(matches!(
            bucketize(&[], BucketWidth::Day, 0.0, 30.0),
            Err(DomainError::HorizonNotMultiple { .. })
        ));
        assert!(matches!(
            bucketize(&[], BucketWidth::Day, 5.0, 48.0),
            Err(DomainError::MisalignedStart(_))
        ));
    }

    #[test]
    fn trajectories_sorted_and_checked() {
        let entries = vec![
            entry("P1", "B", 5.0, 9.0),
            entry("P1", "A", 0.0, 5.0),
            entry("P2", "A", 1.0, 2.0),
        ];
        let t = extract_trajectories(&entries).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].departments().collect::<Vec<_>>(), vec!["A", "B"]);
        assert_eq!(t[1].len(), 1);

        let bad = vec![entry("P1", "A", 0.0, 5.0), entry("P1", "B", 4.0, 9.0)];
        assert_eq!(
            extract_trajectories(&bad),
            Err(DomainError::OverlappingStays("P1".into()))
        );
    }

    fn arb_log() -> impl Strategy<Value = (Vec<EventLogEntry>, Vec<PatientProfile>)> {
        prop::collection::vec(
            (0u32..40, 0u32..3, 0.0f64..500.0, 0.01f64..50.0, 0.0f64..1e4),
            1..60,
        )
        .prop_map(|rows| {
            let mut entries = Vec::new();
            let mut profiles = BTreeMap::new();
            let mut clock: BTreeMap<u32, f64> = BTreeMap::new();
            for (pid, dept, start, los, cost) in rows {
                let id = format!("P{pid}");
                let enter = quantize(*clock.get(&pid).unwrap_or(&start));
                let exit = quantize(enter + los).max(enter + 1e-6);
                let exit = quantize(exit);
                clock.insert(pid, exit);
                entries.push(EventLogEntry {
                    patient_id: id.clone(),
                    department: ["A", "B", "C"][dept as usize].into(),
                    enter_time: enter,
                    exit_time: exit,
                    cost: quantize(cost),
                });
                profiles.entry(pid).or_insert(PatientProfile {
                    patient_id: id,
                    age: pid * 3 % 121,
                    gender: if pid % 2 == 0 { Gender::F } else { Gender::M },
                    comorbidity_count: pid % 7,
                    drg: format!("D{}", pid % 4),
                });
            }
            (entries, profiles.into_values().collect())
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_roundtrip((entries, profiles) in arb_log()) {
            let text = write_event_log(&entries, &profiles);
            let (parsed, parsed_profiles) = parse_event_log(&text).unwrap();
            prop_assert_eq!(&parsed, &entries);
            prop_assert_eq!(write_event_log(&parsed, &parsed_profiles), text);
        }

        #[test]
        fn bucketize_conserves_admissions((entries, _) in arb_log()) {
            let s = bucketize(&entries, BucketWidth::Hour, 0.0, 600.0).unwrap();
            let admitted = admission_times(&entries).values().filter(|&&t| t < 600.0).count();
            prop_assert_eq!(s.counts.iter().sum::<u64>() as usize, admitted);
        }

        #[test]
        fn trajectories_partition_entries((entries, _) in arb_log()) {
            let trajectories = extract_trajectories(&entries).unwrap();
            let total: usize = trajectories.iter().map(Trajectory::len).sum();
            prop_assert_eq!(total, entries.len());
            for t in &trajectories {
                prop_assert!(t.stays.iter().all(|s| s.patient_id == t.patient_id));
            }
        }
    }
}
