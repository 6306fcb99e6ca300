//! Label spaces for the dual classification task and the strict output
//! contract: a completion is accepted only when it is exactly one JSON object
//! with the keys `humanitarian_label` and `event_type`, both drawn from the
//! closed label sets. Anything else is classified into one of three violation
//! kinds so that error reporting is total.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The ten humanitarian information categories.
///
/// Variant order is the canonical alphabetical order of the lowercase names;
/// iteration helpers and stratified sampling rely on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanitarianLabel {
    CautionAndAdvice,
    DisplacedPeopleAndEvacuations,
    InfrastructureAndUtilityDamage,
    InjuredOrDeadPeople,
    MissingOrFoundPeople,
    NotHumanitarian,
    OtherRelevantInformation,
    RequestsOrUrgentNeeds,
    RescueVolunteeringOrDonationEffort,
    SympathyAndSupport,
}

impl HumanitarianLabel {
    pub const ALL: [HumanitarianLabel; 10] = [
        HumanitarianLabel::CautionAndAdvice,
        HumanitarianLabel::DisplacedPeopleAndEvacuations,
        HumanitarianLabel::InfrastructureAndUtilityDamage,
        HumanitarianLabel::InjuredOrDeadPeople,
        HumanitarianLabel::MissingOrFoundPeople,
        HumanitarianLabel::NotHumanitarian,
        HumanitarianLabel::OtherRelevantInformation,
        HumanitarianLabel::RequestsOrUrgentNeeds,
        HumanitarianLabel::RescueVolunteeringOrDonationEffort,
        HumanitarianLabel::SympathyAndSupport,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            HumanitarianLabel::CautionAndAdvice => "caution_and_advice",
            HumanitarianLabel::DisplacedPeopleAndEvacuations => "displaced_people_and_evacuations",
            HumanitarianLabel::InfrastructureAndUtilityDamage => {
                "infrastructure_and_utility_damage"
            }
            HumanitarianLabel::InjuredOrDeadPeople => "injured_or_dead_people",
            HumanitarianLabel::MissingOrFoundPeople => "missing_or_found_people",
            HumanitarianLabel::NotHumanitarian => "not_humanitarian",
            HumanitarianLabel::OtherRelevantInformation => "other_relevant_information",
            HumanitarianLabel::RequestsOrUrgentNeeds => "requests_or_urgent_needs",
            HumanitarianLabel::RescueVolunteeringOrDonationEffort => {
                "rescue_volunteering_or_donation_effort"
            }
            HumanitarianLabel::SympathyAndSupport => "sympathy_and_support",
        }
    }

    pub fn from_str_strict(s: &str) -> Option<HumanitarianLabel> {
        HumanitarianLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
    }

    /// Index into [`HumanitarianLabel::ALL`]; rows/columns of confusion
    /// matrices use this.
    pub fn index(&self) -> usize {
        HumanitarianLabel::ALL
            .iter()
            .position(|l| l == self)
            .unwrap()
    }
}

impl fmt::Display for HumanitarianLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four disaster event types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Earthquake,
    Fire,
    Flood,
    Hurricane,
}

impl EventType {
    pub const ALL: [EventType; 4] = [
        EventType::Earthquake,
        EventType::Fire,
        EventType::Flood,
        EventType::Hurricane,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::Earthquake => "earthquake",
            EventType::Fire => "fire",
            EventType::Flood => "flood",
            EventType::Hurricane => "hurricane",
        }
    }

    pub fn from_str_strict(s: &str) -> Option<EventType> {
        EventType::ALL.iter().copied().find(|e| e.as_str() == s)
    }

    pub fn index(&self) -> usize {
        EventType::ALL.iter().position(|e| e == self).unwrap()
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A successfully parsed dual-task prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub humanitarian: HumanitarianLabel,
    pub event: EventType,
    /// The completion text the prediction was parsed from, kept for audit.
    pub raw: String,
    /// Confidence in [0, 1] when the backend supplied token logprobs.
    pub confidence: Option<f64>,
}

/// Why a completion failed the output contract. `Repetition` is the
/// format-violation subtype for completions that do contain a valid object
/// but echo other content around it.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseViolation {
    #[error("format violation: {detail}")]
    Format { detail: String },
    #[error("repetition violation: {detail}")]
    Repetition { detail: String },
    #[error("label violation: field `{field}` has unknown value `{value}`")]
    Label { field: String, value: String },
}

impl ParseViolation {
    /// Both `Format` and its `Repetition` subtype count as format violations.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            ParseViolation::Format { .. } | ParseViolation::Repetition { .. }
        )
    }
}

/// Renders the canonical answer object, e.g.
/// `{"humanitarian_label": "sympathy_and_support", "event_type": "flood"}`.
/// This is the exact shape demonstrations and mock completions use.
pub fn format_prediction_json(humanitarian: HumanitarianLabel, event: EventType) -> String {
    format!(
        "{{\"humanitarian_label\": \"{}\", \"event_type\": \"{}\"}}",
        humanitarian.as_str(),
        event.as_str()
    )
}

/// Strict parse of a model completion.
///
/// Accepts iff the completion, after trimming surrounding whitespace, is
/// exactly one JSON object whose keys are exactly `humanitarian_label` and
/// `event_type` with values from the closed label sets. A well-formed object
/// surrounded by extra content is a [`ParseViolation::Repetition`]; every
/// other malformed shape is a [`ParseViolation::Format`]; an unknown label
/// value is a [`ParseViolation::Label`].
pub fn parse_prediction(completion: &str) -> Result<Prediction, ParseViolation> {
    let trimmed = completion.trim();
    if trimmed.is_empty() {
        return Err(ParseViolation::Format {
            detail: "empty completion".into(),
        });
    }

    let value: serde_json::Value = match serde_json::from_str(trimmed) {
        Ok(v) => v,
        Err(_) => {
            // Not a clean single JSON document. If a balanced object hides
            // inside, the model echoed content around it.
            return match extract_embedded_object(trimmed) {
                Some(_) => Err(ParseViolation::Repetition {
                    detail: "extra content around the JSON object".into(),
                }),
                None => Err(ParseViolation::Format {
                    detail: "no JSON object found".into(),
                }),
            };
        }
    };

    let obj = match value {
        serde_json::Value::Object(m) => m,
        _ => {
            return Err(ParseViolation::Format {
                detail: "top-level value is not an object".into(),
            })
        }
    };

    validate_object(&obj, completion)
}

fn validate_object(
    obj: &serde_json::Map<String, serde_json::Value>,
    raw: &str,
) -> Result<Prediction, ParseViolation> {
    if obj.len() != 2 || !obj.contains_key("humanitarian_label") || !obj.contains_key("event_type")
    {
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        return Err(ParseViolation::Format {
            detail: format!(
                "expected exactly keys `humanitarian_label` and `event_type`, got {keys:?}"
            ),
        });
    }

    let hum_raw = obj["humanitarian_label"]
        .as_str()
        .ok_or_else(|| ParseViolation::Format {
            detail: "`humanitarian_label` is not a string".into(),
        })?;
    let event_raw = obj["event_type"]
        .as_str()
        .ok_or_else(|| ParseViolation::Format {
            detail: "`event_type` is not a string".into(),
        })?;

    let humanitarian =
        HumanitarianLabel::from_str_strict(hum_raw).ok_or_else(|| ParseViolation::Label {
            field: "humanitarian_label".into(),
            value: hum_raw.into(),
        })?;
    let event = EventType::from_str_strict(event_raw).ok_or_else(|| ParseViolation::Label {
        field: "event_type".into(),
        value: event_raw.into(),
    })?;

    Ok(Prediction {
        humanitarian,
        event,
        raw: raw.to_string(),
        confidence: None,
    })
}

/// Finds the first balanced `{...}` region that parses as a JSON object.
/// Used only to tell "object with extra prose" apart from "no object".
fn extract_embedded_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let bytes = text.as_bytes();
    for (start, &b) in bytes.iter().enumerate() {
        if b != b'{' {
            continue;
        }
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &c) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if c == b'\\' {
                    escaped = true;
                } else if c == b'"' {
                    in_string = false;
                }
                continue;
            }
            match c {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &text[start..start + offset + 1];
                        if let Ok(serde_json::Value::Object(m)) = serde_json::from_str(candidate) {
                            return Some(m);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// Lenient diagnostic pass: tries to recover a label pair from a rejected
/// completion by extracting the first embedded object and case/space-folding
/// its values. Only ever used for near-miss counting in reports; strict
/// scoring never consults it.
pub fn lenient_near_miss(completion: &str) -> Option<(HumanitarianLabel, EventType)> {
    if parse_prediction(completion).is_ok() {
        return None;
    }
    let trimmed = completion.trim();
    let obj = match serde_json::from_str::<serde_json::Value>(trimmed) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => extract_embedded_object(trimmed)?,
    };
    let fold = |s: &str| s.trim().to_lowercase().replace([' ', '-'], "_");
    let hum = obj.iter().find_map(|(k, v)| {
        (fold(k) == "humanitarian_label")
            .then(|| v.as_str().map(&fold))
            .flatten()
    })?;
    let event = obj.iter().find_map(|(k, v)| {
        (fold(k) == "event_type")
            .then(|| v.as_str().map(&fold))
            .flatten()
    })?;
    Some((
        HumanitarianLabel::from_str_strict(&hum)?,
        EventType::from_str_strict(&event)?,
    ))
}
