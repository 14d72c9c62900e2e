//! Windowed co-occurrence counting over token sequences.
//!
//! `C(w, w')` counts ordered position pairs `(t, s)` with `0 < |t - s| <= q`
//! inside a single sequence; windows never cross sequence boundaries and
//! same-position pairs are excluded, so a single length-T sequence always
//! contributes exactly `2qT - q^2 - q` to the total (for `T > q`).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};

/// Symmetric d x d co-occurrence counts with window size `q`.
///
/// Counts are held densely (row-major); the on-disk format is sparse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoocMatrix {
    d: usize,
    q: usize,
    counts: Vec<u64>,
    row_margins: Vec<u64>,
    total: u64,
}

impl CoocMatrix {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `C(i, j)` for 0-based codes.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.d + j]
    }

    /// `C(i, .) = sum_j C(i, j)`.
    pub fn row_margin(&self, i: usize) -> u64 {
        self.row_margins[i]
    }

    /// `C = sum_{i,j} C(i, j)`.
    pub fn total(&self) -> u64 {
        self.total
    }

    fn from_counts(d: usize, q: usize, counts: Vec<u64>) -> Self {
        let mut row_margins = vec![0u64; d];
        for i in 0..d {
            for j in 0..d {
                row_margins[i] += counts[i * d + j];
            }
        }
        let total = row_margins.iter().sum();
        CoocMatrix {
            d,
            q,
            counts,
            row_margins,
            total,
        }
    }
}

/// Count co-occurrences of `sequences` over a window of `q` positions, with
/// code ids validated against `0..d`. Sequences are counted independently
/// (in parallel) and merged by addition.
pub fn count_cooccurrences(sequences: &[TokenSequence], q: usize, d: usize) -> Result<CoocMatrix> {
    if q == 0 {
        return Err(Error::invalid("window size q must be >= 1"));
    }
    if d == 0 {
        return Err(Error::invalid("code count d must be >= 1"));
    }
    for (s, seq) in sequences.iter().enumerate() {
        for (pos, &tok) in seq.iter().enumerate() {
            if tok as usize >= d {
                return Err(Error::Ingestion {
                    sequence: s + 1,
                    position: pos + 1,
                    message: format!("code id {} out of range 1..={d}", tok + 1),
                });
            }
        }
    }
    let counts = sequences
        .par_iter()
        .map(|seq| {
            let mut local = vec![0u64; d * d];
            count_one(seq, q, d, &mut local);
            local
        })
        .reduce(
            || vec![0u64; d * d],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(CoocMatrix::from_counts(d, q, counts))
}

fn count_one(seq: &[u32], q: usize, d: usize, counts: &mut [u64]) {
    let t_len = seq.len();
    for t in 0..t_len {
        let hi = (t + q).min(t_len.saturating_sub(1));
        let wt = seq[t] as usize;
        for s in (t + 1)..=hi {
            let ws = seq[s] as usize;
            // Ordered pairs (t,s) and (s,t) both count.
            counts[wt * d + ws] += 1;
            counts[ws * d + wt] += 1;
        }
    }
}

/// Write the sparse count file: header `d q total`, then one line
/// `i j count` per nonzero upper-triangle entry (1-based, i <= j).
pub fn write_cooc(path: &Path, c: &CoocMatrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{} {} {}", c.d, c.q, c.total).map_err(|e| Error::io(path, e))?;
    for i in 0..c.d {
        for j in i..c.d {
            let count = c.count(i, j);
            if count > 0 {
                writeln!(w, "{} {} {}", i + 1, j + 1, count).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a sparse count file written by [`write_cooc`], restoring symmetry
/// from the stored upper triangle.
pub fn read_cooc(path: &Path) -> Result<CoocMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::parse(path, 1, "header must be `d q total`"));
    }
    let d: usize = fields[0]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid d {:?}", fields[0])))?;
    let q: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid q {:?}", fields[1])))?;
    let total: u64 = fields[2]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid total {:?}", fields[2])))?;
    if d == 0 || q == 0 {
        return Err(Error::parse(path, 1, "d and q must be >= 1"));
    }

    let mut counts = vec![0u64; d * d];
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, lineno, "expected `i j count`"));
        }
        let i: i64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid row {:?}", fields[0])))?;
        let j: i64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid col {:?}", fields[1])))?;
        let count: i64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid count {:?}", fields[2])))?;
        if count < 0 {
            return Err(Error::parse(path, lineno, format!("negative count {count}")));
        }
        if i < 1 || j < 1 || i as usize > d || j as usize > d {
            return Err(Error::parse(
                path,
                lineno,
                format!("indices ({i}, {j}) out of range 1..={d}"),
            ));
        }
        if i > j {
            return Err(Error::parse(
                path,
                lineno,
                format!("lower-triangle entry ({i}, {j}); the format stores i <= j"),
            ));
        }
        let (i, j) = (i as usize - 1, j as usize - 1);
        counts[i * d + j] = count as u64;
        if i != j {
            counts[j * d + i] = count as u64;
        }
    }
    let matrix = CoocMatrix::from_counts(d, q, counts);
    if matrix.total != total {
        return Err(Error::parse(
            path,
            1,
            format!(
                "header total {total} does not match sum of entries {}",
                matrix.total
            ),
        ));
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(T^2) oracle: enumerate all ordered position pairs.
    fn brute_force(sequences: &[TokenSequence], q: usize, d: usize) -> Vec<u64> {
        let mut counts = vec![0u64; d * d];
        for seq in sequences {
            for t in 0..seq.len() {
                for s in 0..seq.len() {
                    let dist = t.abs_diff(s);
                    if dist > 0 && dist <= q {
                        counts[seq[t] as usize * d + seq[s] as usize] += 1;
                    }
                }
            }
        }
        counts
    }

    #[test]
    fn two_token_sequence_counts_one_pair_each_way() {
        let c = count_cooccurrences(&[vec![0, 1]], 1, 2).unwrap();
        assert_eq!(c.count(0, 1), 1);
        assert_eq!(c.count(1, 0), 1);
        assert_eq!(c.total(), 2);
        // 2qT - q^2 - q with q=1, T=2.
        assert_eq!(c.total(), 2 * 1 * 2 - 1 - 1);
    }

    #[test]
    fn repeated_code_counts_all_ordered_pairs() {
        let c = count_cooccurrences(&[vec![0, 0, 0]], 2, 1).unwrap();
        assert_eq!(c.count(0, 0), 6);
        assert_eq!(
            brute_force(&[vec![0, 0, 0]], 2, 1)[0],
            6,
            "oracle disagrees on the hand example"
        );
    }

    #[test]
    fn empty_input_gives_zero_matrix() {
        let c = count_cooccurrences(&[], 3, 4).unwrap();
        assert_eq!(c.total(), 0);
        for i in 0..4 {
            assert_eq!(c.row_margin(i), 0);
        }
    }

    #[test]
    fn out_of_range_id_reports_position() {
        let err = count_cooccurrences(&[vec![0, 1], vec![2, 9]], 1, 5).unwrap_err();
        match err {
            Error::Ingestion {
                sequence, position, ..
            } => {
                assert_eq!((sequence, position), (2, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn margins_and_total_are_consistent() {
        let seqs = vec![vec![0u32, 1, 2, 1, 0], vec![2, 2, 0]];
        let c = count_cooccurrences(&seqs, 2, 3).unwrap();
        for i in 0..3 {
            let sum: u64 = (0..3).map(|j| c.count(i, j)).sum();
            assert_eq!(c.row_margin(i), sum);
        }
        assert_eq!(c.total(), (0..3).map(|i| c.row_margin(i)).sum::<u64>());
    }

    #[test]
    fn round_trip_through_sparse_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cooc.txt");
        let seqs = vec![vec![0u32, 3, 1, 1, 2], vec![0, 0]];
        let c = count_cooccurrences(&seqs, 3, 4).unwrap();
        write_cooc(&path, &c).unwrap();
        let back = read_cooc(&path).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn reader_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        // Negative count.
        std::fs::write(&path, "2 1 2\n1 2 -1\n").unwrap();
        assert!(matches!(read_cooc(&path), Err(Error::Parse { line: 2, .. })));
        // Column index beyond d.
        std::fs::write(&path, "2 1 2\n1 3 2\n").unwrap();
        assert!(matches!(read_cooc(&path), Err(Error::Parse { line: 2, .. })));
        // Garbled header.
        std::fs::write(&path, "2 1\n").unwrap();
        assert!(matches!(read_cooc(&path), Err(Error::Parse { line: 1, .. })));
        // Total mismatch.
        std::fs::write(&path, "2 1 5\n1 2 1\n").unwrap();
        assert!(read_cooc(&path).is_err());
    }

    #[test]
    fn single_sequence_total_matches_closed_form() {
        // 2qT - q^2 - q, independent of token values, whenever T > q.
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state
        };
        for _ in 0..50 {
            let q = (next() % 10 + 1) as usize;
            let t = (next() % (500 - q as u64) + q as u64 + 1) as usize;
            let d = (next() % 6 + 1) as usize;
            let seq: Vec<u32> = (0..t).map(|_| (next() % d as u64) as u32).collect();
            let c = count_cooccurrences(&[seq], q, d).unwrap();
            let expected = 2 * q as u64 * t as u64 - (q * q) as u64 - q as u64;
            assert_eq!(c.total(), expected, "T={t}, q={q}");
        }
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(
            seqs in proptest::collection::vec(
                proptest::collection::vec(0u32..6, 0..200),
                0..4
            ),
            q in 1usize..12,
        ) {
            let c = count_cooccurrences(&seqs, q, 6).unwrap();
            let oracle = brute_force(&seqs, q, 6);
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(c.count(i, j), oracle[i * 6 + j]);
                }
            }
        }

        #[test]
        fn sequence_order_does_not_matter(
            a in proptest::collection::vec(0u32..5, 0..60),
            b in proptest::collection::vec(0u32..5, 0..60),
            q in 1usize..6,
        ) {
            let ab = count_cooccurrences(&[a.clone(), b.clone()], q, 5).unwrap();
            let ba = count_cooccurrences(&[b, a], q, 5).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn concatenation_only_adds_boundary_pairs(
            a in proptest::collection::vec(0u32..5, 0..60),
            b in proptest::collection::vec(0u32..5, 0..60),
            q in 1usize..6,
        ) {
            let separate = count_cooccurrences(&[a.clone(), b.clone()], q, 5).unwrap();
            let mut joined = a;
            joined.extend(b);
            let concat = count_cooccurrences(&[joined], q, 5).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    prop_assert!(separate.count(i, j) <= concat.count(i, j));
                }
            }
        }
    }
}
