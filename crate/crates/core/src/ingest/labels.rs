use super::IngestError;
use crate::SleepStage;

/// What a raw hypnogram label denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Stage(SleepStage),
    Movement,
    NotScored,
}

/// Classifies a raw hypnogram label. Accepts the Sleep-EDF vocabulary
/// (`"Sleep stage W"`, `"Sleep stage 1"` .. `"Sleep stage 4"`, `"Sleep stage R"`,
/// `"Sleep stage ?"`, `"Movement time"`) and the bare short forms used in
/// label CSVs.
pub fn classify_label(raw: &str) -> Result<LabelKind, IngestError> {
    let trimmed = raw.trim();
    let short = trimmed
        .strip_prefix("Sleep stage ")
        .or_else(|| trimmed.strip_prefix("Sleep_stage_"))
        .unwrap_or(trimmed);
    let kind = match short {
        "W" | "Wake" => LabelKind::Stage(SleepStage::W),
        "1" | "N1" => LabelKind::Stage(SleepStage::N1),
        "2" | "N2" => LabelKind::Stage(SleepStage::N2),
        "3" | "4" | "N3" | "N4" => LabelKind::Stage(SleepStage::N3),
        "R" | "REM" => LabelKind::Stage(SleepStage::R),
        "?" | "Not scored" => LabelKind::NotScored,
        "M" | "Movement time" | "Movement" => LabelKind::Movement,
        _ => return Err(IngestError::UnknownLabel(raw.to_string())),
    };
    Ok(kind)
}

/// Maps a raw label to a stage; Movement and Not Scored map to `None`.
/// Unknown text is an error so new vocabularies surface instead of being
/// silently dropped.
pub fn map_label(raw: &str) -> Result<Option<SleepStage>, IngestError> {
    Ok(match classify_label(raw)? {
        LabelKind::Stage(s) => Some(s),
        LabelKind::Movement | LabelKind::NotScored => None,
    })
}

/// Lights-out markers are not stage labels.
pub fn is_lights_out_marker(raw: &str) -> bool {
    let l = raw.trim().to_ascii_lowercase();
    l == "lights off" || l == "lights out"
}
