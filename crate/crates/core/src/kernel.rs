//! Inner loops: f32 dot products and XOR-popcount over packed words.
//!
//! Summation order is fixed by the lane layout, not by the instruction set,
//! and no fused multiply-add is enabled, so the AVX2 and portable paths
//! produce bit-identical results.

const LANES: usize = 32;

/// Lanes per row and vector in [`dot_tile`].
const TILE_LANES: usize = 8;

#[inline(always)]
fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let mut width = LANES / 2;
    while width > 0 {
        for i in 0..width {
            acc[i] += acc[i + width];
        }
        width /= 2;
    }
    acc[0] + tail
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f32 {
    use std::arch::x86_64::*;
    let n = a.len().min(b.len());
    let full = n - n % LANES;
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut acc = [_mm256_setzero_ps(); LANES / 8];
    let mut start = 0;
    while start < full {
        for (j, acc) in acc.iter_mut().enumerate() {
            let x = _mm256_loadu_ps(pa.add(start + 8 * j));
            let y = _mm256_loadu_ps(pb.add(start + 8 * j));
            *acc = _mm256_add_ps(*acc, _mm256_mul_ps(x, y));
        }
        start += LANES;
    }
    let mut tail = 0f32;
    for i in full..n {
        tail += a[i] * b[i];
    }
    // same tree as the portable path: halves of 32, then of 16, then in-register
    let lo = _mm256_add_ps(acc[0], acc[2]);
    let hi = _mm256_add_ps(acc[1], acc[3]);
    let mut lanes = [0f32; 8];
    _mm256_storeu_ps(lanes.as_mut_ptr(), _mm256_add_ps(lo, hi));
    reduce8(lanes) + tail
}

#[inline(always)]
fn reduce8(mut lanes: [f32; 8]) -> f32 {
    let mut width = 4;
    while width > 0 {
        for i in 0..width {
            lanes[i] += lanes[i + width];
        }
        width /= 2;
    }
    lanes[0]
}

/// Dot product over the common prefix of `a` and `b`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { dot_avx2(a, b) };
        }
    }
    dot_lanes(a, b)
}

#[inline(always)]
fn dot_tile_lanes(rows: [&[f32]; 2], vs: [&[f32]; 4]) -> [[f32; 4]; 2] {
    let n = vs.iter().chain(&rows).fold(usize::MAX, |n, v| n.min(v.len()));
    let rows = rows.map(|r| &r[..n]);
    let vs = vs.map(|v| &v[..n]);
    let mut acc = [[[0f32; TILE_LANES]; 4]; 2];
    let full = n - n % TILE_LANES;
    for start in (0..full).step_by(TILE_LANES) {
        let r: [&[f32; TILE_LANES]; 2] =
            rows.map(|r| r[start..start + TILE_LANES].try_into().expect("lane chunk"));
        let x: [&[f32; TILE_LANES]; 4] =
            vs.map(|v| v[start..start + TILE_LANES].try_into().expect("lane chunk"));
        for p in 0..2 {
            for k in 0..4 {
                for i in 0..TILE_LANES {
                    acc[p][k][i] += r[p][i] * x[k][i];
                }
            }
        }
    }
    let mut out = [[0f32; 4]; 2];
    for p in 0..2 {
        for k in 0..4 {
            let mut tail = 0f32;
            for i in full..n {
                tail += rows[p][i] * vs[k][i];
            }
            out[p][k] = reduce8(acc[p][k]) + tail;
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_tile_avx2(rows: [&[f32]; 2], vs: [&[f32]; 4]) -> [[f32; 4]; 2] {
    use std::arch::x86_64::*;
    let n = vs.iter().chain(&rows).fold(usize::MAX, |n, v| n.min(v.len()));
    let full = n - n % TILE_LANES;
    let rp = rows.map(|r| r.as_ptr());
    let vp = vs.map(|v| v.as_ptr());
    let mut acc = [[_mm256_setzero_ps(); 4]; 2];
    let mut start = 0;
    while start < full {
        let r = [_mm256_loadu_ps(rp[0].add(start)), _mm256_loadu_ps(rp[1].add(start))];
        for k in 0..4 {
            let x = _mm256_loadu_ps(vp[k].add(start));
            acc[0][k] = _mm256_add_ps(acc[0][k], _mm256_mul_ps(r[0], x));
            acc[1][k] = _mm256_add_ps(acc[1][k], _mm256_mul_ps(r[1], x));
        }
        start += TILE_LANES;
    }
    let mut out = [[0f32; 4]; 2];
    for p in 0..2 {
        for k in 0..4 {
            let mut tail = 0f32;
            for i in full..n {
                tail += rows[p][i] * vs[k][i];
            }
            let mut lanes = [0f32; 8];
            _mm256_storeu_ps(lanes.as_mut_ptr(), acc[p][k]);
            out[p][k] = reduce8(lanes) + tail;
        }
    }
    out
}

/// Dot products of two rows against four vectors, `out[row][vector]`,
/// sharing every load. Summation order differs from [`dot`] but is fixed.
#[inline]
pub fn dot_tile(rows: [&[f32]; 2], vs: [&[f32]; 4]) -> [[f32; 4]; 2] {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { dot_tile_avx2(rows, vs) };
        }
    }
    dot_tile_lanes(rows, vs)
}

/// Euclidean norm, with the squared sum taken from [`dot`].
#[inline]
pub fn norm(v: &[f32]) -> f64 {
    f64::from(dot(v, v)).sqrt()
}

/// `1 - dot / (|a| |b|)`, clamped to `[0, 2]`.
#[inline]
pub fn cosine_from_parts(dot: f32, norm_a: f64, norm_b: f64) -> f64 {
    (1.0 - f64::from(dot) / (norm_a * norm_b)).clamp(0.0, 2.0)
}

#[inline(always)]
fn hamming_lanes(a: &[u64], b: &[u64]) -> u32 {
    let mut acc = [0u32; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: u32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += (x[i] ^ y[i]).count_ones();
        }
    }
    acc.iter().sum::<u32>() + tail
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn hamming_popcnt(a: &[u64], b: &[u64]) -> u32 {
    hamming_lanes(a, b)
}

/// Number of differing bits between two equal-length word slices.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports POPCNT.
            return unsafe { hamming_popcnt(a, b) };
        }
    }
    hamming_lanes(a, b)
}

/// Running best/second-best under the total order `(distance, place_id)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Top2<D> {
    pub best: Option<(D, u64, usize)>,
    pub second: Option<(D, u64, usize)>,
}

impl<D: PartialOrd + Copy> Top2<D> {
    pub fn new() -> Self {
        Self {
            best: None,
            second: None,
        }
    }

    #[inline(always)]
    fn before(a: (D, u64), b: Option<(D, u64, usize)>) -> bool {
        match b {
            None => true,
            Some((d, id, _)) => a.0 < d || (a.0 == d && a.1 < id),
        }
    }

    /// Whether `distance` could still enter the top two.
    #[inline(always)]
    pub fn admits(&self, distance: D) -> bool {
        match self.second {
            None => true,
            Some((d, _, _)) => distance <= d,
        }
    }

    #[inline(always)]
    pub fn offer(&mut self, distance: D, place_id: u64, position: usize) {
        if Self::before((distance, place_id), self.best) {
            self.second = self.best;
            self.best = Some((distance, place_id, position));
        } else if Self::before((distance, place_id), self.second) {
            self.second = Some((distance, place_id, position));
        }
    }
}

/// Records fetched ahead of the one being scanned.
const PREFETCH_AHEAD: usize = 8;

#[inline(always)]
fn prefetch(words: &[u64], start: usize, len: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let end = (start + len).min(words.len());
        let mut at = start;
        while at < end {
            // SAFETY: prefetching never faults and `at` is in bounds.
            unsafe { _mm_prefetch::<_MM_HINT_T0>(words.as_ptr().add(at).cast()) };
            at += 8;
        }
    }
}

#[inline(always)]
fn hamming_scan_body(
    words: &[u64],
    n_words: usize,
    query: &[u64],
    ids: &[u64],
    positions: Option<&[usize]>,
) -> Top2<u32> {
    let mut top = Top2::new();
    match positions {
        None => {
            for (pos, (sig, &id)) in words.chunks_exact(n_words).zip(ids).enumerate() {
                prefetch(words, (pos + PREFETCH_AHEAD) * n_words, n_words);
                let d = hamming_lanes(sig, query);
                if top.admits(d) {
                    top.offer(d, id, pos);
                }
            }
        }
        Some(positions) => {
            for &pos in positions {
                let sig = &words[pos * n_words..(pos + 1) * n_words];
                let d = hamming_lanes(sig, query);
                if top.admits(d) {
                    top.offer(d, ids[pos], pos);
                }
            }
        }
    }
    top
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn hamming_scan_popcnt(
    words: &[u64],
    n_words: usize,
    query: &[u64],
    ids: &[u64],
    positions: Option<&[usize]>,
) -> Top2<u32> {
    hamming_scan_body(words, n_words, query, ids, positions)
}

/// Exhaustive top-2 Hamming scan over record-major packed words,
/// optionally restricted to the given record positions.
pub(crate) fn hamming_scan(
    words: &[u64],
    n_words: usize,
    query: &[u64],
    ids: &[u64],
    positions: Option<&[usize]>,
) -> Top2<u32> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports POPCNT.
            return unsafe { hamming_scan_popcnt(words, n_words, query, ids, positions) };
        }
    }
    hamming_scan_body(words, n_words, query, ids, positions)
}
