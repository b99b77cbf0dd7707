//! Rate-1/2 (3,6)-regular LDPC code: construction, systematic encoding,
//! parity checks and alist import/export.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::seeds::mix;
use crate::{Bits, Error, Result};

const VN_DEGREE: usize = 3;
const CN_DEGREE: usize = 6;
const MAX_ATTEMPTS: usize = 5000;

/// A binary code given by its parity-check matrix, with columns ordered so
/// that codewords read `[message | parity]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    seed: u64,
    /// Check-node adjacency: columns touched by each row.
    cn_adj: Vec<Vec<usize>>,
    /// Variable-node adjacency: rows touching each column.
    vn_adj: Vec<Vec<usize>>,
    /// `perm[j]` is the column of the unpermuted matrix that became column j.
    perm: Vec<usize>,
    /// Row `i` gives the message bits XORed into parity bit `k + i`.
    parity_map: Vec<Vec<u64>>,
}

impl LdpcCode {
    /// Builds a (3,6)-regular code with Bc message bits and 2 Bc code bits.
    pub fn build(seed: u64, bc: usize) -> Result<Self> {
        if bc < 14 || bc % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "Bc = {bc}: need an even Bc >= 14 for a 4-cycle-free (3,6)-regular code"
            )));
        }
        let n = 2 * bc;
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, attempt as u64));
            let Some(vn_adj) = peg(n, bc, &mut rng) else {
                last = "edge growth ran out of admissible check nodes".into();
                continue;
            };
            let cn_adj = transpose(&vn_adj, bc);
            if !is_girth_at_least_6(&cn_adj, n) {
                last = "4-cycle in constructed graph".into();
                continue;
            }
            match Self::from_rows(cn_adj, n, seed) {
                Ok(code) => return Ok(code),
                Err(_) => last = "rank-deficient parity-check matrix".into(),
            }
        }
        Err(Error::ConstructionFailed { attempts: MAX_ATTEMPTS, reason: last })
    }

    /// Wraps an arbitrary full-rank parity-check matrix given by its rows.
    /// Columns are permuted so that the information positions come first.
    pub fn from_rows(rows: Vec<Vec<usize>>, n: usize, seed: u64) -> Result<Self> {
        let n_checks = rows.len();
        let words = n.div_ceil(64);
        let mut mat: Vec<Vec<u64>> = rows
            .iter()
            .map(|r| {
                let mut w = vec![0u64; words];
                for &c in r {
                    w[c / 64] ^= 1 << (c % 64);
                }
                w
            })
            .collect();
        // Reduced row echelon form scanning from the last column, so a matrix
        // whose trailing square block is invertible keeps its column order.
        let mut pivots = Vec::with_capacity(n_checks);
        let mut r = 0;
        for col in (0..n).rev() {
            if r == n_checks {
                break;
            }
            let bit = |row: &Vec<u64>| (row[col / 64] >> (col % 64)) & 1 == 1;
            let Some(p) = (r..n_checks).find(|&i| bit(&mat[i])) else {
                continue;
            };
            mat.swap(r, p);
            let pivot_row = mat[r].clone();
            for (i, row) in mat.iter_mut().enumerate() {
                if i != r && bit(row) {
                    row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(col);
            r += 1;
        }
        if r < n_checks {
            return Err(Error::ConstructionFailed {
                attempts: 1,
                reason: format!("rank {r} < {n_checks}"),
            });
        }
        // Pair each pivot column with its reduced row, in column order.
        let mut pivot_rows: Vec<(usize, usize)> = pivots.iter().copied().zip(0..).collect();
        pivot_rows.sort_unstable();
        let pivots: Vec<usize> = pivot_rows.iter().map(|p| p.0).collect();
        let mut is_pivot = vec![false; n];
        pivots.iter().for_each(|&c| is_pivot[c] = true);
        let info: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info.len();
        let perm: Vec<usize> = info.iter().chain(&pivots).copied().collect();
        let mut new_pos = vec![0; n];
        perm.iter().enumerate().for_each(|(j, &c)| new_pos[c] = j);

        let kw = k.div_ceil(64).max(1);
        let parity_map = pivot_rows
            .iter()
            .map(|&(_, i)| {
                let mut w = vec![0u64; kw];
                for (j, &c) in info.iter().enumerate() {
                    if (mat[i][c / 64] >> (c % 64)) & 1 == 1 {
                        w[j / 64] |= 1 << (j % 64);
                    }
                }
                w
            })
            .collect();
        let cn_adj: Vec<Vec<usize>> = rows
            .iter()
            .map(|r| {
                let mut v: Vec<usize> = r.iter().map(|&c| new_pos[c]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        let vn_adj = transpose(&cn_adj, n);
        let cn_adj = transpose(&vn_adj, n_checks);
        Ok(LdpcCode { n, k, seed, cn_adj, vn_adj, perm, parity_map })
    }

    /// Code length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Message length.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_checks(&self) -> usize {
        self.cn_adj.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cn_adj(&self) -> &[Vec<usize>] {
        &self.cn_adj
    }

    pub fn vn_adj(&self) -> &[Vec<usize>] {
        &self.vn_adj
    }

    /// Column permutation applied to the constructed matrix.
    pub fn column_permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Systematic encoding: the first `k` code bits are the message.
    pub fn encode(&self, msg: &[u8]) -> Bits {
        assert_eq!(msg.len(), self.k, "message length");
        let mut packed = vec![0u64; self.k.div_ceil(64).max(1)];
        for (j, &b) in msg.iter().enumerate() {
            packed[j / 64] |= (b as u64 & 1) << (j % 64);
        }
        let mut cw = msg.to_vec();
        cw.extend(self.parity_map.iter().map(|row| {
            let ones: u32 = row.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            (ones & 1) as u8
        }));
        cw
    }

    /// True iff every check is satisfied.
    pub fn parity_check(&self, word: &[u8]) -> bool {
        word.len() == self.n
            && self
                .cn_adj
                .iter()
                .all(|r| r.iter().fold(0u8, |acc, &c| acc ^ word[c]) == 0)
    }

    /// Message part of a codeword.
    pub fn message<'a>(&self, word: &'a [u8]) -> &'a [u8] {
        &word[..self.k]
    }

    /// Dense rows of H, for tests and export.
    pub fn dense(&self) -> Vec<Vec<u8>> {
        self.cn_adj
            .iter()
            .map(|r| {
                let mut row = vec![0u8; self.n];
                r.iter().for_each(|&c| row[c] = 1);
                row
            })
            .collect()
    }

    /// MacKay's alist text format (1-based indices, zero padded).
    pub fn to_alist(&self) -> String {
        let mut s = String::new();
        let max_col = self.vn_adj.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.cn_adj.iter().map(Vec::len).max().unwrap_or(0);
        let _ = writeln!(s, "{} {}", self.n, self.n_checks());
        let _ = writeln!(s, "{max_col} {max_row}");
        let join = |v: Vec<usize>| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{}", join(self.vn_adj.iter().map(Vec::len).collect()));
        let _ = writeln!(s, "{}", join(self.cn_adj.iter().map(Vec::len).collect()));
        for (adj, width) in [(&self.vn_adj, max_col), (&self.cn_adj, max_row)] {
            for list in adj.iter() {
                let mut v: Vec<usize> = list.iter().map(|x| x + 1).collect();
                v.resize(width, 0);
                let _ = writeln!(s, "{}", join(v));
            }
        }
        s
    }

    pub fn from_alist(text: &str, seed: u64) -> Result<Self> {
        let mut it = text.split_whitespace().map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse(format!("alist: bad token `{t}`")))
        });
        let mut next = || it.next().unwrap_or_else(|| Err(Error::Parse("alist: truncated".into())));
        let n = next()?;
        let m = next()?;
        let max_col = next()?;
        let max_row = next()?;
        for _ in 0..n + m {
            next()?;
        }
        // Column lists are redundant with the row lists; read and skip them.
        for _ in 0..n * max_col {
            next()?;
        }
        let mut rows = Vec::with_capacity(m);
        for _ in 0..m {
            let mut r = Vec::new();
            for _ in 0..max_row {
                let c = next()?;
                if c > n {
                    return Err(Error::Parse(format!("alist: column {c} out of range")));
                }
                if c > 0 {
                    r.push(c - 1);
                }
            }
            rows.push(r);
        }
        Self::from_rows(rows, n, seed)
    }
}

fn transpose(adj: &[Vec<usize>], other: usize) -> Vec<Vec<usize>> {
    let mut t = vec![Vec::new(); other];
    for (i, list) in adj.iter().enumerate() {
        for &j in list {
            t[j].push(i);
        }
    }
    t
}

/// True iff no two columns share more than one row.
pub fn is_girth_at_least_6(cn_adj: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n * n];
    for r in cn_adj {
        for (a, &i) in r.iter().enumerate() {
            for &j in &r[a + 1..] {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                if std::mem::replace(&mut seen[lo * n + hi], true) {
                    return false;
                }
            }
        }
    }
    true
}

/// Progressive edge growth with a check-degree cap. Returns the column
/// adjacency or `None` when the greedy growth gets stuck.
fn peg(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<usize>>> {
    let mut vn_adj: Vec<Vec<usize>> = vec![Vec::with_capacity(VN_DEGREE); n];
    let mut cn_adj: Vec<Vec<usize>> = vec![Vec::with_capacity(CN_DEGREE); m];
    let mut depth = vec![usize::MAX; m];
    let mut vseen = vec![false; n];
    for v in 0..n {
        for _ in 0..VN_DEGREE {
            let open = |c: usize, cn: &[Vec<usize>]| cn[c].len() < CN_DEGREE;
            let candidates: Vec<usize> = if vn_adj[v].is_empty() {
                (0..m).filter(|&c| open(c, &cn_adj)).collect()
            } else {
                // Breadth-first distances from v to every check node.
                depth.iter_mut().for_each(|d| *d = usize::MAX);
                vseen.iter_mut().for_each(|s| *s = false);
                vseen[v] = true;
                let mut queue = VecDeque::new();
                for &c in &vn_adj[v] {
                    depth[c] = 0;
                    queue.push_back(c);
                }
                while let Some(c) = queue.pop_front() {
                    for &u in &cn_adj[c] {
                        if std::mem::replace(&mut vseen[u], true) {
                            continue;
                        }
                        for &c2 in &vn_adj[u] {
                            if depth[c2] == usize::MAX {
                                depth[c2] = depth[c] + 1;
                                queue.push_back(c2);
                            }
                        }
                    }
                }
                let open_cns: Vec<usize> = (0..m).filter(|&c| open(c, &cn_adj)).collect();
                let unreached: Vec<usize> =
                    open_cns.iter().copied().filter(|&c| depth[c] == usize::MAX).collect();
                if !unreached.is_empty() {
                    unreached
                } else {
                    let far = open_cns.iter().map(|&c| depth[c]).max()?;
                    // Depth 0 means an existing neighbour, depth 1 closes a 4-cycle.
                    if far < 2 {
                        return None;
                    }
                    open_cns.into_iter().filter(|&c| depth[c] == far).collect()
                }
            };
            let min_deg = candidates.iter().map(|&c| cn_adj[c].len()).min()?;
            let lightest: Vec<usize> =
                candidates.into_iter().filter(|&c| cn_adj[c].len() == min_deg).collect();
            let &c = lightest.choose(rng)?;
            vn_adj[v].push(c);
            cn_adj[c].push(v);
        }
    }
    Some(vn_adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gf2_rank(mut rows: Vec<Vec<u8>>) -> usize {
        let n = rows.first().map_or(0, Vec::len);
        let mut rank = 0;
        for col in 0..n {
            if let Some(p) = (rank..rows.len()).find(|&i| rows[i][col] == 1) {
                rows.swap(rank, p);
                let pr = rows[rank].clone();
                for (i, r) in rows.iter_mut().enumerate() {
                    if i != rank && r[col] == 1 {
                        r.iter_mut().zip(&pr).for_each(|(a, b)| *a ^= b);
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    #[test]
    fn full_size_code_is_regular() {
        let code = LdpcCode::build(1, 84).unwrap();
        let h = code.dense();
        assert_eq!((h.len(), h[0].len()), (84, 168));
        assert!(h.iter().all(|r| r.iter().map(|&b| b as usize).sum::<usize>() == 6));
        for c in 0..168 {
            assert_eq!(h.iter().map(|r| r[c] as usize).sum::<usize>(), 3);
        }
        assert!(is_girth_at_least_6(code.cn_adj(), 168));
        assert_eq!(gf2_rank(h), 84);
    }

    #[test]
    fn deterministic() {
        assert_eq!(LdpcCode::build(9, 24).unwrap(), LdpcCode::build(9, 24).unwrap());
        assert_ne!(LdpcCode::build(9, 24).unwrap(), LdpcCode::build(10, 24).unwrap());
    }

    #[test]
    fn encoding_is_systematic_and_valid() {
        let code = LdpcCode::build(4, 24).unwrap();
        assert_eq!(code.encode(&[0; 24]), vec![0; 48]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let v: Bits = (0..24).map(|_| rng.random_range(0..2)).collect();
            let cw = code.encode(&v);
            assert!(code.parity_check(&cw));
            assert_eq!(code.message(&cw), &v[..]);
            // Direct dense product as an independent check.
            for row in code.dense() {
                let s: u32 = row.iter().zip(&cw).map(|(a, b)| (a & b) as u32).sum();
                assert_eq!(s % 2, 0);
            }
            let mut flipped = cw.clone();
            let j = rng.random_range(0..48);
            flipped[j] ^= 1;
            assert!(!code.parity_check(&flipped));
        }
    }

    #[test]
    fn codebook_dimension_at_small_size() {
        // Exhaustive: the 2^k encoder outputs are exactly the null space of H.
        let code = LdpcCode::build(2, 16).unwrap();
        let k = code.k();
        let mut words = std::collections::HashSet::new();
        for x in 0u32..(1 << k) {
            let v: Bits = (0..k).map(|j| ((x >> j) & 1) as u8).collect();
            let cw = code.encode(&v);
            assert!(code.parity_check(&cw));
            words.insert(cw);
        }
        assert_eq!(words.len(), 1 << k);
    }

    #[test]
    fn alist_round_trip() {
        let code = LdpcCode::build(3, 24).unwrap();
        let text = code.to_alist();
        let back = LdpcCode::from_alist(&text, 3).unwrap();
        assert_eq!(back.dense(), code.dense());
        assert_eq!(back.encode(&[1; 24]), code.encode(&[1; 24]));
        assert!(LdpcCode::from_alist("4 2\n", 0).is_err());
    }

    #[test]
    fn rejects_rank_deficient_matrix() {
        let rows = vec![vec![0, 1], vec![0, 1]];
        assert!(LdpcCode::from_rows(rows, 4, 0).is_err());
    }

    #[test]
    fn rejects_too_small() {
        assert!(LdpcCode::build(0, 12).is_err());
        assert!(LdpcCode::build(0, 15).is_err());
    }
}
