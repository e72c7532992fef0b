use super::EvalError;
use crate::SleepStage;

/// `(lights_out, end)`: the in-bed span from lights-out through the last
/// non-W epoch, inclusive.
pub fn time_in_bed(labels: &[SleepStage], lights_out: usize) -> Result<(usize, usize), EvalError> {
    if lights_out >= labels.len() {
        return Err(EvalError::LightsOut { epoch: lights_out, len: labels.len() });
    }
    let end = labels[lights_out..].iter().rposition(|s| s.is_sleep()).ok_or(EvalError::NoSleepOnset)?;
    Ok((lights_out, lights_out + end))
}

/// Percentage of in-bed epochs that are not W.
pub fn sleep_efficiency(labels: &[SleepStage], lights_out: usize) -> Result<f64, EvalError> {
    let (start, end) = time_in_bed(labels, lights_out)?;
    let span = &labels[start..=end];
    let asleep = span.iter().filter(|s| s.is_sleep()).count();
    Ok(100.0 * asleep as f64 / span.len() as f64)
}

/// Percentage of in-bed epochs with a differing neighbor inside the span.
pub fn transitional_fraction(labels: &[SleepStage], lights_out: usize) -> Result<f64, EvalError> {
    let (start, end) = time_in_bed(labels, lights_out)?;
    let span = &labels[start..=end];
    let transitional = (0..span.len())
        .filter(|&i| (i > 0 && span[i - 1] != span[i]) || (i + 1 < span.len() && span[i + 1] != span[i]))
        .count();
    Ok(100.0 * transitional as f64 / span.len() as f64)
}
