//! Exact evaluation of alpha-determinants, permanents and the
//! determinant-partition expansion of the permanent.
//!
//! `det_a A = sum_{sigma} a^{n - nu(sigma)} prod_i A[i, sigma(i)]` with
//! `nu(sigma)` the cycle count. Dispatch:
//!
//! * `a = -1` — LU determinant (any n)
//! * `a = 0`  — diagonal product
//! * `a = +1` — Ryser permanent (n <= 30)
//! * general  — cycle-cover subset dynamic program, O(2^n n^2), n <= 12 by
//!   default (configurable); each cycle is anchored at its minimal element so
//!   every permutation is counted exactly once.

use nalgebra::DMatrix;
use thiserror::Error;

pub const GENERAL_ALPHA_LIMIT: usize = 12;
pub const RYSER_LIMIT: usize = 30;
pub const PARTITION_LIMIT: usize = 10;
pub const BELL_LIMIT: usize = 25;

#[derive(Debug, Error)]
pub enum AlphaDetError {
    #[error("matrix of size {n} exceeds the {what} limit {limit}")]
    SizeLimit {
        n: usize,
        limit: usize,
        what: &'static str,
    },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

fn check_square(a: &DMatrix<f64>) -> Result<usize, AlphaDetError> {
    if a.nrows() != a.ncols() {
        return Err(AlphaDetError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// `det_a A` with the default general-path size limit.
pub fn alpha_determinant(a: &DMatrix<f64>, alpha: f64) -> Result<f64, AlphaDetError> {
    alpha_determinant_with_limit(a, alpha, GENERAL_ALPHA_LIMIT)
}

pub fn alpha_determinant_with_limit(
    a: &DMatrix<f64>,
    alpha: f64,
    general_limit: usize,
) -> Result<f64, AlphaDetError> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(1.0);
    }
    if alpha == -1.0 {
        return Ok(det_lu(a));
    }
    if alpha == 0.0 {
        return Ok((0..n).map(|i| a[(i, i)]).product());
    }
    if alpha == 1.0 {
        return permanent_ryser(a);
    }
    if n > general_limit {
        return Err(AlphaDetError::SizeLimit {
            n,
            limit: general_limit,
            what: "general-alpha",
        });
    }
    Ok(cycle_cover_dp(a, alpha))
}

/// LU determinant.
pub fn det_lu(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant()
}

/// Permanent via Ryser's inclusion-exclusion with Gray-code updates.
pub fn permanent_ryser(a: &DMatrix<f64>) -> Result<f64, AlphaDetError> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(1.0);
    }
    if n > RYSER_LIMIT {
        return Err(AlphaDetError::SizeLimit {
            n,
            limit: RYSER_LIMIT,
            what: "ryser",
        });
    }
    // per(A) = (-1)^n sum_{S != 0} (-1)^{|S|} prod_i (sum_{j in S} a_ij)
    let mut row_sums = vec![0.0f64; n];
    let mut total = 0.0;
    let mut prev_gray: u64 = 0;
    for t in 1u64..(1u64 << n) {
        let gray = t ^ (t >> 1);
        let changed = gray ^ prev_gray;
        let j = changed.trailing_zeros() as usize;
        let sign = if gray & changed != 0 { 1.0 } else { -1.0 };
        for (i, rs) in row_sums.iter_mut().enumerate() {
            *rs += sign * a[(i, j)];
        }
        prev_gray = gray;
        let prod: f64 = row_sums.iter().product();
        let popcount = gray.count_ones() as usize;
        let s = if (n - popcount) % 2 == 0 { 1.0 } else { -1.0 };
        total += s * prod;
    }
    Ok(total)
}

/// Sum over weighted cycle covers; exact value of the defining permutation
/// sum without enumerating n! permutations.
///
/// Every cycle is anchored at its minimal element, so a cycle anchored at s
/// only visits vertices > s. For each anchor a subset-path DP accumulates
/// `cyc[s][S]` = sum over cycles through s with extra vertex set S of
/// `alpha^{|S|} * prod(entries)`; a second DP assembles covers.
pub(crate) fn cycle_cover_dp(a: &DMatrix<f64>, alpha: f64) -> f64 {
    let n = a.nrows();
    debug_assert!(n <= 24);
    let full: usize = (1usize << n) - 1;
    let mut cyc: Vec<Vec<f64>> = Vec::with_capacity(n);
    for s in 0..n {
        let t = n - s - 1;
        let mut c = vec![0.0; 1 << t];
        c[0] = a[(s, s)];
        // pdp[S][j] = sum over simple paths s -> ... -> (s+1+j) visiting S
        let mut pdp = vec![vec![0.0f64; t.max(1)]; 1 << t];
        for k in 0..t {
            pdp[1 << k][k] = a[(s, s + 1 + k)];
        }
        for sm in 1usize..(1 << t) {
            let weight = alpha.powi(sm.count_ones() as i32);
            for j in 0..t {
                let w = pdp[sm][j];
                if w == 0.0 {
                    continue;
                }
                c[sm] += weight * w * a[(s + 1 + j, s)];
                let mut rem = !sm & ((1usize << t) - 1);
                while rem != 0 {
                    let k = rem.trailing_zeros() as usize;
                    rem &= rem - 1;
                    pdp[sm | (1 << k)][k] += w * a[(s + 1 + j, s + 1 + k)];
                }
            }
        }
        cyc.push(c);
    }
    let mut closed = vec![0.0f64; 1 << n];
    closed[0] = 1.0;
    for mask in 1..=full {
        let s = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << s);
        let rz = rest >> (s + 1);
        let mut acc = 0.0;
        let mut sub = rz;
        loop {
            acc += cyc[s][sub] * closed[rest ^ (sub << (s + 1))];
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rz;
        }
        closed[mask] = acc;
    }
    closed[full]
}

/// Permanent through the determinant-partition expansion:
/// `per A = sum over set partitions sigma of (-1)^{n + iota(sigma)}
///  prod_blocks det A[block]`.
pub fn permanent_via_partitions(a: &DMatrix<f64>) -> Result<f64, AlphaDetError> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(1.0);
    }
    if n > PARTITION_LIMIT {
        return Err(AlphaDetError::SizeLimit {
            n,
            limit: PARTITION_LIMIT,
            what: "partition-expansion",
        });
    }
    let mut total = 0.0;
    let mut iter = SetPartitions::new(n);
    while let Some(p) = iter.next_partition() {
        let iota = p.block_count();
        let mut prod = 1.0;
        for block in p.blocks() {
            let sub = a.select_rows(block.iter()).select_columns(block.iter());
            prod *= det_lu(&sub);
        }
        let sign = if (n + iota) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * prod;
    }
    Ok(total)
}

/// Bell number `B_n` (number of set partitions of an n-set), n <= 25.
pub fn bell_number(n: usize) -> Result<u128, AlphaDetError> {
    if n > BELL_LIMIT {
        return Err(AlphaDetError::SizeLimit {
            n,
            limit: BELL_LIMIT,
            what: "bell",
        });
    }
    // Bell triangle
    let mut row = vec![1u128];
    for _ in 1..=n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &v in &row {
            next.push(next.last().unwrap() + v);
        }
        row = next;
    }
    Ok(row[0])
}

/// A set partition of `{0..n-1}` into disjoint nonempty blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    pub fn new(blocks: Vec<Vec<usize>>, n: usize) -> Option<Self> {
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.is_empty() {
                return None;
            }
            for &i in b {
                if i >= n || seen[i] {
                    return None;
                }
                seen[i] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            Some(SetPartition { blocks })
        } else {
            None
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// `iota(sigma)`: the number of nonempty blocks.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Iterator over all set partitions of `{0..n-1}` in restricted-growth-string
/// order.
pub struct SetPartitions {
    n: usize,
    rgs: Vec<usize>,
    maxes: Vec<usize>,
    started: bool,
    done: bool,
}

impl SetPartitions {
    pub fn new(n: usize) -> Self {
        SetPartitions {
            n,
            rgs: vec![0; n],
            maxes: vec![0; n],
            started: false,
            done: false,
        }
    }

    fn current(&self) -> SetPartition {
        let nb = self.rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); nb];
        for (i, &b) in self.rgs.iter().enumerate() {
            blocks[b].push(i);
        }
        SetPartition { blocks }
    }

    /// Advance and return the next partition (lending-style; the returned
    /// value owns its blocks).
    pub fn next_partition(&mut self) -> Option<SetPartition> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.current());
        }
        // RGS successor: rightmost position (>= 1) that can be incremented,
        // i.e. rgs[i] <= max(rgs[..i]); zero the tail afterwards.
        let n = self.n;
        let mut i = n;
        loop {
            if i <= 1 {
                self.done = true;
                return None;
            }
            i -= 1;
            if self.rgs[i] <= self.maxes[i] {
                break;
            }
        }
        self.rgs[i] += 1;
        for j in (i + 1)..n {
            self.rgs[j] = 0;
        }
        let mut running = 0;
        for j in 1..n {
            running = running.max(self.rgs[j - 1]);
            self.maxes[j] = running;
        }
        Some(self.current())
    }

    /// Count the partitions without materializing them.
    pub fn count(n: usize) -> u128 {
        let mut it = SetPartitions::new(n);
        let mut c = 0u128;
        while it.next_partition().is_some() {
            c += 1;
        }
        c
    }
}

/// Adjugate matrix: `Adj(A) A = det(A) I`. Used by the analytic gradient of
/// `log det`; computed from the LU inverse when well conditioned, falling
/// back to cofactors for (near-)singular inputs.
pub fn adjugate(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let det = det_lu(a);
    if det.abs() > 1e-12 * a.abs().max().max(1.0).powi(n as i32) {
        if let Some(inv) = a.clone().try_inverse() {
            return inv * det;
        }
    }
    // cofactor fallback
    DMatrix::from_fn(n, n, |i, j| {
        let minor = a
            .clone()
            .remove_row(j)
            .remove_column(i);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * det_lu(&minor)
    })
}

/// Matrix of permanental minors `per(A with row i and column j removed)`;
/// the gradient of `per` with respect to the entries.
pub fn permanental_minors(a: &DMatrix<f64>) -> Result<DMatrix<f64>, AlphaDetError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let minor = a.clone().remove_row(i).remove_column(j);
            out[(i, j)] = permanent_ryser(&minor)?;
        }
    }
    Ok(out)
}

/// Entry gradient of `det_a`: since the defining sum is affine in every
/// single entry, the exact derivative is a symmetric difference with unit
/// perturbation.
pub fn alpha_det_entry_gradient(
    a: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>, AlphaDetError> {
    let n = check_square(a)?;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut p = a.clone();
            p[(i, j)] += 1.0;
            let mut m = a.clone();
            m[(i, j)] -= 1.0;
            out[(i, j)] =
                (alpha_determinant(&p, alpha)? - alpha_determinant(&m, alpha)?) / 2.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: plain permutation enumeration with cycle counting
    /// by explicit traversal (different code path from the production DP).
    pub(crate) fn alpha_det_bruteforce(a: &DMatrix<f64>, alpha: f64) -> f64 {
        let n = a.nrows();
        if n == 0 {
            return 1.0;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        permute(&mut perm, 0, &mut |p| {
            let mut seen = vec![false; n];
            let mut cycles = 0usize;
            for start in 0..n {
                if !seen[start] {
                    cycles += 1;
                    let mut j = start;
                    while !seen[j] {
                        seen[j] = true;
                        j = p[j];
                    }
                }
            }
            let prod: f64 = (0..n).map(|i| a[(i, p[i])]).product();
            total += alpha.powi((n - cycles) as i32) * prod;
        });
        total
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn two_by_two_reference_values() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!((alpha_determinant(&a, -1.0).unwrap() + 2.0).abs() < 1e-14);
        assert!((alpha_determinant(&a, 1.0).unwrap() - 10.0).abs() < 1e-14);
        assert!((alpha_determinant(&a, 0.0).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn identity_matrix_for_any_alpha() {
        for n in [1usize, 3, 5] {
            let a = DMatrix::identity(n, n);
            for alpha in [-1.0, -0.5, 0.0, 0.25, 1.0, 2.0] {
                assert!((alpha_determinant(&a, alpha).unwrap() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn general_alpha_matches_independent_enumeration() {
        let a = random_matrix(5, 11);
        for alpha in [-0.5, 0.5, 2.0, -1.0 / 3.0] {
            let dp = alpha_determinant(&a, alpha).unwrap();
            let bf = alpha_det_bruteforce(&a, alpha);
            assert!(
                (dp - bf).abs() <= 1e-10 * bf.abs().max(1.0),
                "alpha {alpha}: {dp} vs {bf}"
            );
        }
    }

    #[test]
    fn dispatch_paths_agree_on_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=8usize);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            for alpha in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                let fast = alpha_determinant(&a, alpha).unwrap();
                let dp = cycle_cover_dp(&a, alpha);
                assert!(
                    (fast - dp).abs() <= 1e-10 * dp.abs().max(1.0),
                    "n {n} alpha {alpha}"
                );
            }
        }
    }

    #[test]
    fn size_limit_errors() {
        let a = DMatrix::<f64>::identity(13, 13);
        assert!(matches!(
            alpha_determinant(&a, 0.5),
            Err(AlphaDetError::SizeLimit { .. })
        ));
        // fast paths still work beyond the general limit
        assert!((alpha_determinant(&a, -1.0).unwrap() - 1.0).abs() < 1e-12);
        let b = DMatrix::<f64>::identity(11, 11);
        assert!(matches!(
            permanent_via_partitions(&b),
            Err(AlphaDetError::SizeLimit { .. })
        ));
    }

    #[test]
    fn ryser_small_cases_and_bruteforce() {
        let a1 = DMatrix::from_row_slice(1, 1, &[3.25]);
        assert!((permanent_ryser(&a1).unwrap() - 3.25).abs() < 1e-14);
        let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!((permanent_ryser(&a2).unwrap() - 2.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(8, 8, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let ry = permanent_ryser(&a).unwrap();
        let bf = alpha_det_bruteforce(&a, 1.0);
        assert!((ry - bf).abs() <= 1e-10 * bf.abs().max(1.0), "{ry} vs {bf}");
    }

    #[test]
    fn partition_expansion_matches_ryser() {
        // n = 2 algebraic case: ad + bc
        let a = DMatrix::from_row_slice(2, 2, &[1.3, -0.7, 2.1, 0.4]);
        let v = permanent_via_partitions(&a).unwrap();
        assert!((v - (1.3 * 0.4 + (-0.7) * 2.1)).abs() < 1e-12);

        let m = random_matrix(6, 21);
        let vp = permanent_via_partitions(&m).unwrap();
        let ry = permanent_ryser(&m).unwrap();
        assert!((vp - ry).abs() <= 1e-9 * ry.abs().max(1.0), "{vp} vs {ry}");

        let one = DMatrix::from_row_slice(1, 1, &[0.77]);
        assert!((permanent_via_partitions(&one).unwrap() - 0.77).abs() < 1e-14);
    }

    #[test]
    fn bell_numbers_match_partition_iterator() {
        assert_eq!(bell_number(1).unwrap(), 1);
        assert_eq!(bell_number(3).unwrap(), 5);
        for n in 1..=10 {
            assert_eq!(bell_number(n).unwrap(), SetPartitions::count(n), "n = {n}");
        }
        assert_eq!(bell_number(10).unwrap(), 115_975);
        assert!(bell_number(26).is_err());
    }

    #[test]
    fn partition_blocks_are_disjoint_and_cover() {
        let mut it = SetPartitions::new(5);
        let mut count = 0;
        while let Some(p) = it.next_partition() {
            count += 1;
            let mut seen = vec![false; 5];
            for b in p.blocks() {
                assert!(!b.is_empty());
                for &i in b {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&x| x));
            assert_eq!(p.block_count(), p.blocks().len());
        }
        assert_eq!(count, 52); // B_5
    }

    #[test]
    fn repeated_rows_vanish_only_for_determinant() {
        let mut a = random_matrix(4, 31);
        for j in 0..4 {
            a[(1, j)] = a[(0, j)];
        }
        assert!(alpha_determinant(&a, -1.0).unwrap().abs() < 1e-12);
        assert!(alpha_determinant(&a, 1.0).unwrap().abs() > 1e-6);
    }

    #[test]
    fn det_neg_inverse_m_vanishes_with_m_plus_one_repeats() {
        // det_{-1/m} of a matrix with m+1 identical rows and columns is 0
        for m in [2usize, 3] {
            let n = m + 2;
            let mut a = random_matrix(n, 40 + m as u64);
            a = symmetrize_local(&a);
            for r in 1..=m {
                for j in 0..n {
                    a[(r, j)] = a[(0, j)];
                }
            }
            for r in 1..=m {
                for i in 0..n {
                    a[(i, r)] = a[(i, 0)];
                }
            }
            let v = alpha_determinant(&a, -1.0 / m as f64).unwrap();
            assert!(v.abs() < 1e-12, "m = {m}: {v}");
        }
    }

    fn symmetrize_local(a: &DMatrix<f64>) -> DMatrix<f64> {
        (a + a.transpose()) * 0.5
    }

    #[test]
    fn multilinearity_in_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let n = rng.gen_range(2..=6usize);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let row = rng.gen_range(0..n);
            let split: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut b = a.clone();
            let mut c = a.clone();
            for j in 0..n {
                b[(row, j)] = split[j];
                c[(row, j)] = a[(row, j)] - split[j];
            }
            for alpha in [-0.5, 0.5, 1.0] {
                let va = alpha_determinant(&a, alpha).unwrap();
                let vb = alpha_determinant(&b, alpha).unwrap();
                let vc = alpha_determinant(&c, alpha).unwrap();
                assert!(
                    (va - (vb + vc)).abs() <= 1e-10 * va.abs().max(1.0),
                    "alpha {alpha}"
                );
            }
        }
    }

    #[test]
    fn relabeling_invariance() {
        let a = random_matrix(6, 90);
        let sigma = [3usize, 0, 5, 1, 4, 2];
        let pa = DMatrix::from_fn(6, 6, |i, j| a[(sigma[i], sigma[j])]);
        for alpha in [-1.0, -0.5, 0.5, 1.0] {
            let va = alpha_determinant(&a, alpha).unwrap();
            let vp = alpha_determinant(&pa, alpha).unwrap();
            assert!((va - vp).abs() <= 1e-10 * va.abs().max(1.0));
        }
    }

    #[test]
    fn adjugate_identity() {
        let a = random_matrix(5, 13);
        let adj = adjugate(&a);
        let d = det_lu(&a);
        let prod = &adj * &a;
        let expect = DMatrix::identity(5, 5) * d;
        assert!((prod - expect).abs().max() < 1e-10);
    }

    #[test]
    fn permanental_minors_are_per_gradient() {
        let a = random_matrix(5, 17);
        let minors = permanental_minors(&a).unwrap();
        let grad = alpha_det_entry_gradient(&a, 1.0).unwrap();
        assert!((minors - grad).abs().max() < 1e-9);
    }

    #[test]
    fn entry_gradient_matches_adjugate_for_determinant() {
        let a = random_matrix(5, 19);
        let grad = alpha_det_entry_gradient(&a, -1.0).unwrap();
        let adj = adjugate(&a);
        // d det / d a_ij = Adj(A)[j, i]
        assert!((grad - adj.transpose()).abs().max() < 1e-9);
    }
}
