//! First-layer filter analysis: kernel spectra, per-stage activation power,
//! the two-step profile normalization and display ordering.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, WindowKey};
use crate::model::ModelParameters;
use crate::svg::{heat_color, Svg};
use crate::tensor::{self, Real, Tensor};
use crate::{Error, Result, SleepStage, CONTEXT_EPOCHS};

const S: usize = SleepStage::COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpectrum {
    pub filter_index: usize,
    /// Bin spacing in Hz (`fs / taps`).
    pub bin_hz: f64,
    /// One-sided `|X_k|²` for `k = 0..=taps/2`.
    pub power: Vec<f64>,
}

/// One-sided power spectrum `|DFT(kernel)_k|²`, `k = 0..=n/2`.
pub fn filter_power_spectrum(kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

pub fn filter_spectra<T: Real>(params: &ModelParameters<T>, fs: f64) -> Vec<FilterSpectrum> {
    let k = params.config.c1_len;
    params
        .weights
        .c1
        .weight
        .data()
        .chunks(k)
        .enumerate()
        .map(|(i, row)| {
            let kernel: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            FilterSpectrum { filter_index: i, bin_hz: fs / k as f64, power: filter_power_spectrum(&kernel) }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationTap {
    PreRelu,
    #[default]
    PostRelu,
}

/// First-layer output positions whose receptive field lies inside the middle
/// epoch: `[2E, 3E − K]` for epoch length `E` and kernel length `K`.
pub fn middle_region(input_len: usize, kernel_len: usize) -> std::ops::RangeInclusive<usize> {
    let e = input_len / CONTEXT_EPOCHS;
    2 * e..=(3 * e).saturating_sub(kernel_len)
}

/// Mean squared first-layer response over the middle region, per filter.
pub fn c1_activation_power<T: Real>(params: &ModelParameters<T>, window: &[T], tap: ActivationTap) -> Result<Vec<f64>> {
    let cfg = &params.config;
    if window.len() != cfg.input_len {
        return Err(crate::model::ModelError::InputLength { expected: cfg.input_len, got: window.len() }.into());
    }
    let scale = T::of(cfg.input_scale);
    let x = Tensor::new(&[1, window.len()], window.iter().map(|&v| v * scale).collect())?;
    let mut y = tensor::conv1d_valid(&x, &params.weights.c1.weight, &params.weights.c1.bias)?;
    if tap == ActivationTap::PostRelu {
        tensor::relu_in_place(&mut y);
    }
    let out_len = y.shape()[1];
    let region = middle_region(cfg.input_len, cfg.c1_len);
    let n = region.clone().count() as f64;
    Ok(y.data()
        .chunks(out_len)
        .map(|row| row[region.clone()].iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / n)
        .collect())
}

/// `raw[f][c]`: mean power of filter `f` over windows whose expert stage is `c`.
pub fn class_activation_matrix<T: Real>(
    params: &ModelParameters<T>,
    corpus: &Corpus<'_>,
    keys: &[WindowKey],
    tap: ActivationTap,
) -> Result<Vec<[f64; S]>> {
    let powers: Vec<(SleepStage, Vec<f64>)> = keys
        .par_iter()
        .map(|&key| {
            let mut raw = vec![0f32; corpus.window_len(key)];
            corpus.write_signal(key, &mut raw);
            let signal: Vec<T> = raw.iter().map(|&v| T::from_sample(v)).collect();
            let label = corpus.label(key).expect("scored window");
            c1_activation_power(params, &signal, tap).map(|p| (label, p))
        })
        .collect::<Result<_>>()?;
    class_means(params.config.c1_filters, &powers)
}

/// Per-stage mean of per-window filter powers, reduced in input order.
pub fn class_means(filters: usize, powers: &[(SleepStage, Vec<f64>)]) -> Result<Vec<[f64; S]>> {
    let mut sums = vec![[0.0; S]; filters];
    let mut counts = [0usize; S];
    for (stage, p) in powers {
        counts[stage.index()] += 1;
        for (row, v) in sums.iter_mut().zip(p) {
            row[stage.index()] += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Usage(format!("no test windows of stage {}", SleepStage::ALL[c])));
    }
    for row in &mut sums {
        for (v, &n) in row.iter_mut().zip(&counts) {
            *v /= n as f64;
        }
    }
    Ok(sums)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    L2,
    L1,
}

impl Norm {
    fn of(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            Norm::L2 => v.map(|x| x * x).sum::<f64>().sqrt(),
            Norm::L1 => v.map(f64::abs).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProfile {
    pub matrix: Vec<[f64; S]>,
    /// Stage columns that were all zero before the first step.
    pub zero_columns: Vec<SleepStage>,
    /// Filter rows that were all zero before the second step.
    pub zero_rows: Vec<usize>,
}

/// Scales each stage column to unit norm across filters, then each filter
/// row to unit norm across stages. Zero columns and rows stay zero.
pub fn normalize_profile(raw: &[[f64; S]], norm: Norm) -> NormalizedProfile {
    let mut m = raw.to_vec();
    let mut zero_columns = Vec::new();
    for c in 0..S {
        let n = norm.of(m.iter().map(|r| r[c]));
        if n == 0.0 {
            zero_columns.push(SleepStage::ALL[c]);
            continue;
        }
        m.iter_mut().for_each(|r| r[c] /= n);
    }
    let mut zero_rows = Vec::new();
    for (f, row) in m.iter_mut().enumerate() {
        let n = norm.of(row.iter().copied());
        if n == 0.0 {
            zero_rows.push(f);
            continue;
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    NormalizedProfile { matrix: m, zero_columns, zero_rows }
}

/// Stage with the largest value; ties go to the lowest stage index.
fn argmax(row: &[f64; S]) -> usize {
    (1..S).fold(0, |best, c| if row[c] > row[best] { c } else { best })
}

/// Filters grouped by their strongest stage (N1, N2, N3, R, W), ascending
/// filter index within a group.
pub fn order_filters(normalized: &[[f64; S]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..normalized.len()).collect();
    idx.sort_by_key(|&f| (argmax(&normalized[f]), f));
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationProfile {
    pub raw: Vec<[f64; S]>,
    pub normalized: NormalizedProfile,
    pub ordering: Vec<usize>,
}

impl ActivationProfile {
    pub fn from_raw(raw: Vec<[f64; S]>, norm: Norm) -> Self {
        let normalized = normalize_profile(&raw, norm);
        let ordering = order_filters(&normalized.matrix);
        ActivationProfile { raw, normalized, ordering }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ProfileBundle {
    pub fold: Option<usize>,
    pub spectra: Vec<FilterSpectrum>,
    pub profile: ActivationProfile,
}

pub fn profile_csv(profile: &ActivationProfile) -> String {
    let mut out = String::from("filter,stage,value\n");
    for (f, row) in profile.normalized.matrix.iter().enumerate() {
        for s in SleepStage::ALL {
            out.push_str(&format!("{f},{s},{}\n", row[s.index()]));
        }
    }
    out
}

pub fn spectra_csv(spectra: &[FilterSpectrum]) -> String {
    let mut out = String::from("filter,freq_hz,power\n");
    for s in spectra {
        for (k, p) in s.power.iter().enumerate() {
            out.push_str(&format!("{},{},{p}\n", s.filter_index, k as f64 * s.bin_hz));
        }
    }
    out
}

/// Parses [`profile_csv`] output back into a filter × stage matrix.
pub fn parse_profile_csv(text: &str) -> Result<Vec<[f64; S]>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut m: Vec<[f64; S]> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv("profile.csv", e))?;
        let bad = || Error::Usage(format!("bad profile row {row:?}"));
        let f: usize = row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let s: SleepStage = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let v: f64 = row.get(2).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if f >= m.len() {
            m.resize(f + 1, [0.0; S]);
        }
        m[f][s.index()] = v;
    }
    Ok(m)
}

/// Heatmap of the normalized profile: ordered filters down, stages across.
pub fn profile_svg(profile: &ActivationProfile) -> String {
    let (cell, left, top) = (22.0, 50.0, 30.0);
    let rows = profile.ordering.len();
    let mut svg = Svg::new(left + S as f64 * cell + 20.0, top + rows as f64 * cell + 20.0);
    for s in SleepStage::ALL {
        svg.text(left + (s.index() as f64 + 0.5) * cell, top - 8.0, 11.0, "middle", s.name());
    }
    for (r, &f) in profile.ordering.iter().enumerate() {
        let y = top + r as f64 * cell;
        svg.text(left - 6.0, y + cell * 0.7, 10.0, "end", &format!("f{f}"));
        for s in SleepStage::ALL {
            let v = profile.normalized.matrix[f][s.index()];
            svg.rect(left + s.index() as f64 * cell, y, cell, cell, &heat_color(v), "stage-cell");
        }
    }
    svg.finish()
}

/// Heatmap of spectra: filters down (in `ordering`), frequency across, each
/// row scaled to its own maximum.
pub fn spectra_svg(spectra: &[FilterSpectrum], ordering: &[usize]) -> String {
    let bins = spectra.first().map_or(0, |s| s.power.len());
    let (cw, ch, left, top) = (6.0, 22.0, 50.0, 30.0);
    let mut svg = Svg::new(left + bins as f64 * cw + 20.0, top + ordering.len() as f64 * ch + 30.0);
    for (r, &f) in ordering.iter().enumerate() {
        let s = &spectra[f];
        let max = s.power.iter().copied().fold(0.0, f64::max);
        let y = top + r as f64 * ch;
        svg.text(left - 6.0, y + ch * 0.7, 10.0, "end", &format!("f{f}"));
        for (k, p) in s.power.iter().enumerate() {
            let v = if max > 0.0 { p / max } else { 0.0 };
            svg.rect(left + k as f64 * cw, y, cw, ch, &heat_color(v), "freq-cell");
        }
    }
    if let Some(s) = spectra.first() {
        let y = top + ordering.len() as f64 * ch + 16.0;
        for k in (0..bins).step_by(20) {
            svg.text(left + k as f64 * cw, y, 10.0, "middle", &format!("{} Hz", k as f64 * s.bin_hz));
        }
    }
    svg.finish()
}

/// Writes `profile.csv`, `spectra.csv`, `profile.svg`, `spectra.svg` and
/// `bundle.json` into `dir`; returns the written paths.
pub fn export_profile(profile: &ActivationProfile, spectra: &[FilterSpectrum], fold: Option<usize>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bundle = ProfileBundle { fold, spectra: spectra.to_vec(), profile: profile.clone() };
    let json_path = dir.join("bundle.json");
    let json = serde_json::to_string_pretty(&bundle).map_err(|e| Error::json(&json_path, e))?;
    let files = [
        (dir.join("profile.csv"), profile_csv(profile)),
        (dir.join("spectra.csv"), spectra_csv(spectra)),
        (dir.join("profile.svg"), profile_svg(profile)),
        (dir.join("spectra.svg"), spectra_svg(spectra, &profile.ordering)),
        (json_path, json),
    ];
    let mut out = Vec::new();
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy one-to-one matching of two filter banks by spectral cosine
/// similarity; the score is the mean similarity of matched pairs.
pub fn matching_score(a: &[FilterSpectrum], b: &[FilterSpectrum]) -> f64 {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            pairs.push((cosine(&x.power, &y.power), i, j));
        }
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let (mut total, mut n) = (0.0, 0);
    for (s, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            total += s;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let a = -std::f64::consts::TAU * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let k: Vec<f64> = (0..200).map(|i| (std::f64::consts::TAU * 10.0 * i as f64 / 100.0).cos()).collect();
        let p = filter_power_spectrum(&k);
        assert_eq!(p.len(), 101);
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(best as f64 * 0.5, 10.0);
        assert!(filter_power_spectrum(&[0.0; 200]).iter().all(|&v| v == 0.0));
        let mut imp = vec![0.0; 200];
        imp[0] = 1.0;
        assert!(filter_power_spectrum(&imp).iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn one_sided_matches_full_dft(x in prop::collection::vec(-1.0f64..1.0, 2..64)) {
            let full = naive_dft_power(&x);
            let one = filter_power_spectrum(&x);
            let n = x.len();
            for k in 0..=n / 2 {
                prop_assert!((one[k] - full[k]).abs() < 1e-9);
                // Real input: the discarded half mirrors the kept half.
                prop_assert!((full[k] - full[(n - k) % n]).abs() < 1e-9);
            }
        }

        #[test]
        fn column_scaling_invariance(m in prop::collection::vec(prop::array::uniform5(0.01f64..10.0), 1..25),
                                     scale in prop::array::uniform5(0.1f64..100.0)) {
            let a = normalize_profile(&m, Norm::L2).matrix;
            let scaled: Vec<[f64; 5]> = m.iter().map(|r| std::array::from_fn(|c| r[c] * scale[c])).collect();
            let b = normalize_profile(&scaled, Norm::L2).matrix;
            for (x, y) in a.iter().zip(&b) {
                for c in 0..5 {
                    prop_assert!((x[c] - y[c]).abs() < 1e-12);
                }
                prop_assert!((x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn ordering_is_grouped_permutation(m in prop::collection::vec(prop::array::uniform5(0.0f64..1.0), 1..30)) {
            let order = order_filters(&m);
            let mut sorted = order.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..m.len()).collect::<Vec<_>>());
            let groups: Vec<usize> = order.iter().map(|&f| argmax(&m[f])).collect();
            prop_assert!(groups.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn constant_matrix_normalizes_to_uniform() {
        let n = normalize_profile(&vec![[3.0; 5]; 20], Norm::L2);
        for row in &n.matrix {
            for v in row {
                assert!((v - 1.0 / 5f64.sqrt()).abs() < 1e-12);
            }
        }
        let z = normalize_profile(&[[0.0; 5], [1.0, 0.0, 0.0, 0.0, 0.0]], Norm::L2);
        assert_eq!(z.zero_rows, vec![0]);
        assert_eq!(z.zero_columns.len(), 4);
    }

    #[test]
    fn ordering_examples() {
        let grouped = vec![[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0]];
        assert_eq!(order_filters(&grouped), vec![0, 1, 2]);
        let reversed: Vec<_> = grouped.iter().rev().copied().collect();
        assert_eq!(order_filters(&reversed), vec![2, 1, 0]);
        assert_eq!(argmax(&[0.5; 5]), 0);
    }

    #[test]
    fn middle_region_extent() {
        let r = middle_region(15000, 200);
        assert_eq!((*r.start(), *r.end(), r.count()), (6000, 8800, 2801));
    }

    #[test]
    fn zero_signal_has_zero_power() {
        let c = ModelConfig::reduced();
        let mut p: ModelParameters<f64> = init_params(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.weights.c1.bias.fill(0.0);
        let powers = c1_activation_power(&p, &vec![0.0; 300], ActivationTap::PostRelu).unwrap();
        assert!(powers.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_means_single_and_duplicated() {
        let powers: Vec<(SleepStage, Vec<f64>)> = SleepStage::ALL.iter().map(|&s| (s, vec![s.index() as f64, 1.0])).collect();
        let m = class_means(2, &powers).unwrap();
        assert_eq!(m[0], [0.0, 1.0, 2.0, 3.0, 4.0]);
        let doubled: Vec<_> = powers.iter().chain(&powers).cloned().collect();
        assert_eq!(class_means(2, &doubled).unwrap(), m);
        assert!(class_means(2, &powers[..4]).is_err());
    }

    #[test]
    fn export_counts_and_reimport() {
        let raw: Vec<[f64; 5]> = (0..20).map(|f| std::array::from_fn(|c| ((f * 7 + c * 3) % 11) as f64 + 0.5)).collect();
        let profile = ActivationProfile::from_raw(raw, Norm::L2);
        let spectra: Vec<FilterSpectrum> =
            (0..20).map(|i| FilterSpectrum { filter_index: i, bin_hz: 0.5, power: vec![i as f64; 101] }).collect();
        let dir = tempfile::tempdir().unwrap();
        export_profile(&profile, &spectra, Some(3), dir.path()).unwrap();
        let p = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
        let s = std::fs::read_to_string(dir.path().join("spectra.csv")).unwrap();
        assert_eq!(p.lines().count() - 1 + s.lines().count() - 1, 20 * 5 + 20 * 101);
        assert_eq!(parse_profile_csv(&p).unwrap(), profile.normalized.matrix);
        let svg = std::fs::read_to_string(dir.path().join("profile.svg")).unwrap();
        assert_eq!(svg.matches("class=\"stage-cell\"").count(), 100);
        let bundle: ProfileBundle = serde_json::from_str(&std::fs::read_to_string(dir.path().join("bundle.json")).unwrap()).unwrap();
        assert_eq!(bundle.fold, Some(3));
        assert_eq!(bundle.profile.ordering, profile.ordering);
    }

    #[test]
    fn identical_banks_match_perfectly() {
        let c = ModelConfig::reduced();
        let p: ModelParameters<f64> = init_params(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let s = filter_spectra(&p, 100.0);
        assert!((matching_score(&s, &s) - 1.0).abs() < 1e-12);
    }
}
