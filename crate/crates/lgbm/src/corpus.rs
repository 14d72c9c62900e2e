//! Hidden-Markov corpus simulation: a slowly drifting discourse vector on
//! the unit sphere drives a softmax emission over the code embedding rows.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::EmbeddingMatrix;

/// One simulated patient/document: 0-based code ids. On disk the ids are
/// 1-based, whitespace separated, one sequence per line.
pub type TokenSequence = Vec<u32>;

/// Persistence probability of the discourse random walk: `1 - ln(d) / p^2`.
pub fn default_alpha(d: usize, p: usize) -> Result<f64> {
    if d == 0 || p == 0 {
        return Err(Error::invalid("d and p must be >= 1"));
    }
    let alpha = 1.0 - (d as f64).ln() / (p as f64 * p as f64);
    if alpha <= 0.0 {
        return Err(Error::invalid(format!(
            "alpha = 1 - ln(d)/p^2 = {alpha} is not in (0, 1); increase p"
        )));
    }
    Ok(alpha)
}

/// Latent random-walk state `z` and its unit-norm projection `c = z / |z|`.
#[derive(Debug, Clone)]
pub struct DiscourseState {
    pub z: DVector<f64>,
    pub c: DVector<f64>,
    pub alpha: f64,
}

impl DiscourseState {
    /// Draw from the stationary law `z ~ N(0, I_p / p)`.
    pub fn stationary<R: Rng + ?Sized>(p: usize, alpha: f64, rng: &mut R) -> Self {
        assert!(p >= 1, "discourse dimension p must be >= 1");
        let scale = 1.0 / (p as f64).sqrt();
        loop {
            let z = DVector::from_fn(p, |_, _| {
                let g: f64 = rng.sample(StandardNormal);
                g * scale
            });
            let norm = z.norm();
            // A zero draw has probability 0; re-draw rather than divide by it.
            if norm >= 1e-300 {
                let c = &z / norm;
                return DiscourseState { z, c, alpha };
            }
        }
    }

    /// Advance one step: `z <- sqrt(alpha) z + sqrt(1-alpha) r` with
    /// `r ~ N(0, I_p / p)`, then renormalize `c`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let p = self.z.len();
        let keep = self.alpha.sqrt();
        let mix = (1.0 - self.alpha).sqrt();
        let scale = 1.0 / (p as f64).sqrt();
        for zi in self.z.iter_mut() {
            let r: f64 = rng.sample(StandardNormal);
            *zi = keep * *zi + mix * r * scale;
        }
        let norm = self.z.norm();
        if norm >= 1e-300 {
            self.c.copy_from(&self.z);
            self.c /= norm;
        }
    }
}

/// Softmax emission probabilities `p_j = exp(<V_j, c>) / Z` with
/// max-subtraction so the exponentials cannot overflow.
pub fn emission_probs(v: &EmbeddingMatrix, c: &DVector<f64>) -> DVector<f64> {
    assert_eq!(
        v.ncols(),
        c.len(),
        "embedding dimension must match discourse dimension"
    );
    let mut logits = v * c;
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits /= sum;
    logits
}

/// Simulate a length-`t` token sequence. Each step samples one code from the
/// emission distribution at the current discourse vector and then advances
/// the chain; the chain starts from its stationary law.
pub fn simulate_corpus<R: Rng + ?Sized>(
    v: &EmbeddingMatrix,
    t: usize,
    alpha: f64,
    rng: &mut R,
) -> TokenSequence {
    let d = v.nrows();
    let mut tokens = Vec::with_capacity(t);
    if t == 0 || d == 0 {
        return tokens;
    }
    let mut state = DiscourseState::stationary(v.ncols(), alpha, rng);
    for step in 0..t {
        let probs = emission_probs(v, &state.c);
        let u: f64 = rng.random();
        tokens.push(sample_categorical(&probs, u));
        if step + 1 < t {
            state.step(rng);
        }
    }
    tokens
}

/// Inverse-CDF draw; `u` is uniform on [0, 1).
fn sample_categorical(probs: &DVector<f64>, u: f64) -> u32 {
    let mut acc = 0.0;
    for (j, &pj) in probs.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j as u32;
        }
    }
    (probs.len() - 1) as u32
}

/// Write sequences as text: one per line, whitespace-separated 1-based ids.
pub fn write_sequences(path: &Path, sequences: &[TokenSequence]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in sequences {
        let mut first = true;
        for &tok in seq {
            if !first {
                write!(w, " ").map_err(|e| Error::io(path, e))?;
            }
            write!(w, "{}", tok + 1).map_err(|e| Error::io(path, e))?;
            first = false;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read sequences written by [`write_sequences`]. Blank lines are empty
/// sequences; ids are converted back to 0-based.
pub fn read_sequences(path: &Path) -> Result<Vec<TokenSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut sequences = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut seq = Vec::new();
        for field in line.split_whitespace() {
            let id: u64 = field.parse().map_err(|_| {
                Error::parse(path, lineno + 1, format!("invalid token id {field:?}"))
            })?;
            if id == 0 {
                return Err(Error::parse(path, lineno + 1, "token ids are 1-based"));
            }
            seq.push((id - 1) as u32);
        }
        sequences.push(seq);
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_alpha_known_values() {
        // d = e: ln d = 1.
        let d_e = std::f64::consts::E;
        let alpha = 1.0 - d_e.ln() / 100.0;
        assert_abs_diff_eq!(alpha, 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(
            default_alpha(25, 50).unwrap(),
            1.0 - 25f64.ln() / 2500.0,
            epsilon = 1e-15
        );
        // d=2, p=1: 1 - ln 2 is still positive.
        assert_abs_diff_eq!(default_alpha(2, 1).unwrap(), 1.0 - 2f64.ln(), epsilon = 1e-15);
        // 1 - ln(3)/1 < 0: rejected.
        assert!(default_alpha(3, 1).is_err());
    }

    #[test]
    fn stationary_state_is_unit_norm() {
        for seed in 0..20 {
            let s = DiscourseState::stationary(7, 0.9, &mut rng(seed));
            assert_abs_diff_eq!(s.c.norm(), 1.0, epsilon = 1e-12);
            assert!(s.z.norm() > 0.0);
        }
    }

    #[test]
    fn stationary_norm_squared_has_unit_mean() {
        // |z|^2 ~ chi2_p / p: mean 1, variance 2/p.
        let p = 10;
        let n = 100_000;
        let mut r = rng(100);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += DiscourseState::stationary(p, 0.9, &mut r).z.norm_squared();
        }
        let mean = acc / n as f64;
        let se = (2.0 / p as f64 / n as f64).sqrt();
        assert!(
            (mean - 1.0).abs() <= 3.0 * se,
            "E|z|^2 estimate {mean} departs from 1 by more than 3 SE ({se})"
        );
    }

    #[test]
    fn stationary_coordinates_are_exchangeable() {
        let p = 5;
        let n = 100_000;
        let mut r = rng(200);
        let mut sq = vec![0.0f64; p];
        for _ in 0..n {
            let s = DiscourseState::stationary(p, 0.9, &mut r);
            for (i, zi) in s.z.iter().enumerate() {
                sq[i] += zi * zi;
            }
        }
        // Each coordinate variance estimates 1/p; chi-square SE of the mean
        // of n squared draws is sqrt(2/p^2/n).
        let se = (2.0 / (p * p) as f64 / n as f64).sqrt();
        for (i, &s) in sq.iter().enumerate() {
            let var = s / n as f64;
            assert!(
                (var - 1.0 / p as f64).abs() <= 3.0 * se,
                "coordinate {i}: variance {var} vs {} (SE {se})",
                1.0 / p as f64
            );
        }
    }

    #[test]
    fn step_with_alpha_one_is_identity() {
        let mut s = DiscourseState::stationary(6, 1.0, &mut rng(7));
        let z0 = s.z.clone();
        let c0 = s.c.clone();
        s.step(&mut rng(8));
        assert_eq!(s.z, z0);
        assert_eq!(s.c, c0);
    }

    #[test]
    fn chain_norm_stays_stationary_at_t_1000() {
        // 1e4 chains advanced 1000 steps; E|z_t|^2 should remain 1.
        let p = 10;
        let chains = 10_000;
        let alpha = 0.99;
        let mut r = rng(300);
        let mut acc = 0.0;
        for _ in 0..chains {
            let mut s = DiscourseState::stationary(p, alpha, &mut r);
            for _ in 0..1000 {
                s.step(&mut r);
            }
            acc += s.z.norm_squared();
        }
        let mean = acc / chains as f64;
        let se = (2.0 / p as f64 / chains as f64).sqrt();
        assert!(
            (mean - 1.0).abs() <= 3.0 * se,
            "E|z_1000|^2 estimate {mean} departs from 1 by more than 3 SE ({se})"
        );
    }

    #[test]
    fn unit_norm_invariant_along_the_chain() {
        let mut s = DiscourseState::stationary(8, 0.97, &mut rng(9));
        for _ in 0..500 {
            s.step(&mut rng(10));
            assert_abs_diff_eq!(s.c.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn discourse_moves_slowly_at_default_alpha() {
        // With alpha = 1 - ln(d)/p^2, the median step |c_{t+1} - c_t| stays
        // below 5 sqrt(ln d) / p.
        let (d, p) = (25usize, 30usize);
        let alpha = default_alpha(d, p).unwrap();
        let mut r = rng(400);
        let mut s = DiscourseState::stationary(p, alpha, &mut r);
        let mut steps = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let prev = s.c.clone();
            s.step(&mut r);
            steps.push((&s.c - &prev).norm());
        }
        steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = steps[steps.len() / 2];
        let bound = 5.0 * (d as f64).ln().sqrt() / p as f64;
        assert!(
            median < bound,
            "median discourse step {median} exceeds slow-movement bound {bound}"
        );
    }

    #[test]
    fn emission_single_code_is_certain() {
        let v = DMatrix::from_row_slice(1, 3, &[0.3, -0.2, 1.0]);
        let c = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let probs = emission_probs(&v, &c);
        assert_eq!(probs.len(), 1);
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn emission_identical_rows_are_uniform() {
        let row = [0.4, -1.2, 0.7, 0.1];
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&row);
        }
        let v = DMatrix::from_row_slice(5, 4, &data);
        let c = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]).normalize();
        let probs = emission_probs(&v, &c);
        for &pj in probs.iter() {
            assert_abs_diff_eq!(pj, 0.2, epsilon = 1e-14);
        }
    }

    /// Independent oracle: naive two-pass softmax without max subtraction.
    fn naive_softmax(v: &DMatrix<f64>, c: &DVector<f64>) -> Vec<f64> {
        let logits: Vec<f64> = (0..v.nrows()).map(|j| v.row(j).transpose().dot(c)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        logits.iter().map(|l| l.exp() / z).collect()
    }

    #[test]
    fn emission_matches_naive_softmax() {
        let mut r = rng(500);
        for _ in 0..20 {
            let v = DMatrix::from_fn(5, 8, |_, _| r.sample::<f64, _>(StandardNormal));
            let c = DVector::from_fn(8, |_, _| r.sample::<f64, _>(StandardNormal)).normalize();
            let probs = emission_probs(&v, &c);
            let oracle = naive_softmax(&v, &c);
            let mut sum = 0.0;
            for j in 0..5 {
                assert_abs_diff_eq!(probs[j], oracle[j], epsilon = 1e-14);
                assert!(probs[j] > 0.0);
                sum += probs[j];
            }
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn corpus_edge_cases() {
        let v = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        assert!(simulate_corpus(&v, 0, 0.9, &mut rng(1)).is_empty());
        let seq = simulate_corpus(&v, 50, 0.9, &mut rng(2));
        assert!(seq.iter().all(|&t| t == 0));
    }

    #[test]
    fn corpus_is_seed_deterministic() {
        let mut r = rng(600);
        let v = DMatrix::from_fn(6, 10, |_, _| r.sample::<f64, _>(StandardNormal));
        let s1 = simulate_corpus(&v, 2000, 0.95, &mut rng(601));
        let s2 = simulate_corpus(&v, 2000, 0.95, &mut rng(601));
        assert_eq!(s1, s2);
    }

    #[test]
    fn token_frequencies_match_emission_probs_at_fixed_discourse() {
        // alpha = 1 freezes the discourse vector, so tokens are i.i.d. from
        // the softmax at c_1. Check per-token binomial 3-SE bands and a
        // chi-square statistic under the 0.001 critical value (df=2: 13.816).
        let d = 3;
        let mut r = rng(700);
        let v = DMatrix::from_fn(d, 6, |_, _| r.sample::<f64, _>(StandardNormal));
        let t = 1_000_000usize;
        let mut sim_rng = rng(701);
        // Replicate the discourse start to learn the frozen c.
        let probe = DiscourseState::stationary(6, 1.0, &mut rng(701));
        let seq = simulate_corpus(&v, t, 1.0, &mut sim_rng);
        let expected = emission_probs(&v, &probe.c);

        let mut counts = vec![0usize; d];
        for &tok in &seq {
            counts[tok as usize] += 1;
        }
        let mut chi2 = 0.0;
        for j in 0..d {
            let pj = expected[j];
            let observed = counts[j] as f64;
            let mean = t as f64 * pj;
            let se = (t as f64 * pj * (1.0 - pj)).sqrt();
            assert!(
                (observed - mean).abs() <= 3.0 * se,
                "token {j}: count {observed} vs mean {mean} (SE {se})"
            );
            chi2 += (observed - mean).powi(2) / mean;
        }
        assert!(chi2 < 13.816, "chi-square statistic {chi2} too large");
    }

    #[test]
    fn sequences_round_trip_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        let seqs = vec![vec![0u32, 1, 4, 2], vec![], vec![3, 3, 3]];
        write_sequences(&path, &seqs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1 2 5 3\n\n4 4 4\n");
        assert_eq!(read_sequences(&path).unwrap(), seqs);
    }

    #[test]
    fn sequence_reader_rejects_bad_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1 0 2\n").unwrap();
        assert!(read_sequences(&path).is_err());
        std::fs::write(&path, "1 x 2\n").unwrap();
        assert!(read_sequences(&path).is_err());
    }
}
