//! Writes a small Sleep-EDF style corpus, then ingests it and prints what
//! survived trimming.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use somno::ingest::{load_corpus, DEFAULT_CHANNEL};
use somno::synthetic::{stage_sequence, write_edf_pair, SyntheticNight};

fn main() -> somno::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for subject in 0..3 {
        let mut night = SyntheticNight::from_stages(&stage_sequence(40, &mut rng), subject);
        // Legacy stage 4 and a movement epoch, as found in older hypnograms.
        night.labels[10] = "Sleep stage 4".into();
        night.labels[20] = "Movement time".into();
        write_edf_pair(dir.path(), &format!("SC40{subject}1E0"), &night)?;
    }

    for (files, rec, report) in load_corpus(dir.path(), DEFAULT_CHANNEL)? {
        let h = rec.stage_histogram();
        println!(
            "{} subject {} night {}: {} of {} epochs kept ({} movement removed), N1/N2/N3/R/W = {:?}",
            files.name, rec.subject_id, rec.night, report.retained_epochs, report.total_epochs, report.removed_movement, h
        );
    }
    Ok(())
}
