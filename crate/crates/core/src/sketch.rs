//! The nine sketching operators, their application, the one-pass countsketch
//! accumulator, and the structural checks on `Pi'Pi` and `Pi Pi'`.
//!
//! An operator is stored compactly: sampling schemes keep the selected row
//! indices and their Horvitz-Thompson weights, countsketch keeps its bucket and
//! sign maps, SRHT keeps its sign flips and the sampled rows of the transformed
//! data, and the dense projections regenerate each row of `P` from the seed on
//! demand. Every representation is a pure function of `(scheme, n, m, seed)`.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::amm::AliasTable;
use crate::error::{Error, Result};
use crate::linalg::{dot, leverage_scores, DenseMatrix};
use crate::rng::{self, below, derive, hash_at, stream};

/// Upper bound on `rows * cols` for [`materialize`].
pub const DEFAULT_MATERIALIZE_CAP: usize = 100_000_000;

/// Default sparsity parameter for the sparse random projection.
pub const DEFAULT_SPARSITY: f64 = 3.0;

const PI_TOL: f64 = 1e-10;
const SIGN_SALT: u64 = 0xC0FF_EE00_5167_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    /// Uniform sampling without replacement.
    Rs1,
    /// Uniform sampling with replacement.
    Rs2,
    /// Bernoulli sampling, each row kept with probability `m / n`.
    Rs3,
    /// Leverage-score sampling with replacement.
    Rs4,
    /// Gaussian projection.
    Rp1,
    /// Rademacher projection.
    Rp2,
    /// Subsampled randomized Hadamard transform.
    Rp3,
    /// Sparse random projection.
    Rp4,
    /// Countsketch.
    Cs,
}

impl SchemeId {
    pub const ALL: [SchemeId; 9] = [
        SchemeId::Rs1,
        SchemeId::Rs2,
        SchemeId::Rs3,
        SchemeId::Rp1,
        SchemeId::Rp2,
        SchemeId::Rp3,
        SchemeId::Rp4,
        SchemeId::Cs,
        SchemeId::Rs4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SchemeId::Rs1 => "rs1",
            SchemeId::Rs2 => "rs2",
            SchemeId::Rs3 => "rs3",
            SchemeId::Rs4 => "lev",
            SchemeId::Rp1 => "rp1",
            SchemeId::Rp2 => "rp2",
            SchemeId::Rp3 => "rp3",
            SchemeId::Rp4 => "rp4",
            SchemeId::Cs => "cs",
        }
    }

    /// Stable numeric code used in seed derivation.
    pub fn code(self) -> u64 {
        match self {
            SchemeId::Rs1 => 1,
            SchemeId::Rs2 => 2,
            SchemeId::Rs3 => 3,
            SchemeId::Rs4 => 4,
            SchemeId::Rp1 => 5,
            SchemeId::Rp2 => 6,
            SchemeId::Rp3 => 7,
            SchemeId::Rp4 => 8,
            SchemeId::Cs => 9,
        }
    }

    pub fn is_sampling(self) -> bool {
        matches!(self, SchemeId::Rs1 | SchemeId::Rs2 | SchemeId::Rs3 | SchemeId::Rs4)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "rs1" | "uniform" => SchemeId::Rs1,
            "rs2" => SchemeId::Rs2,
            "rs3" | "bernoulli" => SchemeId::Rs3,
            "rs4" | "lev" | "leverage" => SchemeId::Rs4,
            "rp1" | "gaussian" => SchemeId::Rp1,
            "rp2" | "rademacher" => SchemeId::Rp2,
            "rp3" | "srht" => SchemeId::Rp3,
            "rp4" | "sparse" => SchemeId::Rp4,
            "cs" | "countsketch" => SchemeId::Cs,
            other => {
                return Err(Error::InvalidArgument(format!("unknown scheme {other:?}")));
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProjectionKind {
    Gaussian,
    Rademacher,
    /// Entries `+-sqrt(s/m)` each with probability `1/(2s)`, zero otherwise.
    Sparse { s: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Representation {
    /// Output row `r` is `weights[r] * A[indices[r]]`.
    SampledRows { indices: Vec<usize>, weights: Vec<f64> },
    /// Input row `i` is added to output row `buckets[i]` with sign `signs[i]`.
    HashSign { buckets: Vec<usize>, signs: Vec<f64> },
    /// Dense `m x n` matrix whose row `r` is regenerated from `derive(seed, [r])`.
    Projection { kind: ProjectionKind },
    /// `sqrt(N/m) * P H D` with orthonormal Hadamard `H` of order `N = padded_n`.
    Srht { signs: Vec<f64>, rows: Vec<usize>, padded_n: usize },
    /// An explicit operator.
    Dense(DenseMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchOperator {
    /// `None` for operators assembled by hand.
    pub scheme: Option<SchemeId>,
    pub n: usize,
    /// Requested sketch size; for Bernoulli sampling the expected row count.
    pub m: usize,
    pub seed: u64,
    pub repr: Representation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchOptions {
    pub sparsity: f64,
}

impl Default for SketchOptions {
    fn default() -> Self {
        Self {
            sparsity: DEFAULT_SPARSITY,
        }
    }
}

/// Bucket of row `index` under the seeded countsketch hash.
#[inline]
pub fn cs_bucket(seed: u64, index: usize, m: usize) -> usize {
    below(hash_at(seed, index as u64), m as u64) as usize
}

/// Sign of row `index` under the seeded countsketch hash.
#[inline]
pub fn cs_sign(seed: u64, index: usize) -> f64 {
    if hash_at(seed ^ SIGN_SALT, index as u64) >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_sketch(
    scheme: SchemeId,
    n: usize,
    m: usize,
    seed: u64,
    source: Option<&DenseMatrix>,
) -> Result<SketchOperator> {
    build_sketch_with(scheme, n, m, seed, source, &SketchOptions::default())
}

pub fn build_sketch_with(
    scheme: SchemeId,
    n: usize,
    m: usize,
    seed: u64,
    source: Option<&DenseMatrix>,
    opts: &SketchOptions,
) -> Result<SketchOperator> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDims(format!("need 1 <= m <= n, got n={n}, m={m}")));
    }
    if m > n {
        return Err(Error::InvalidDims(format!("sketch size m={m} exceeds n={n}")));
    }
    let mut rng = stream(seed);
    let scale = (n as f64 / m as f64).sqrt();
    let repr = match scheme {
        SchemeId::Rs1 => Representation::SampledRows {
            indices: rng::sample_without_replacement(&mut rng, n, m),
            weights: vec![scale; m],
        },
        SchemeId::Rs2 => Representation::SampledRows {
            indices: (0..m).map(|_| rng.random_range(0..n)).collect(),
            weights: vec![scale; m],
        },
        SchemeId::Rs3 => {
            let p = m as f64 / n as f64;
            let indices: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < p).collect();
            let weights = vec![scale; indices.len()];
            Representation::SampledRows { indices, weights }
        }
        SchemeId::Rs4 => {
            let a = source.ok_or(Error::MissingSource)?;
            if a.rows() != n {
                return Err(Error::DimMismatch(format!(
                    "leverage source has {} rows, operator n = {n}",
                    a.rows()
                )));
            }
            let lev = leverage_scores(a)?;
            let table = AliasTable::new(&lev.probabilities)?;
            return Ok(leverage_sketch(&table, m, seed));
        }
        SchemeId::Rp1 => Representation::Projection {
            kind: ProjectionKind::Gaussian,
        },
        SchemeId::Rp2 => Representation::Projection {
            kind: ProjectionKind::Rademacher,
        },
        SchemeId::Rp4 => {
            if !(opts.sparsity >= 1.0 && opts.sparsity.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sparsity must be >= 1, got {}",
                    opts.sparsity
                )));
            }
            Representation::Projection {
                kind: ProjectionKind::Sparse { s: opts.sparsity },
            }
        }
        SchemeId::Rp3 => {
            let padded_n = n.next_power_of_two();
            let signs = (0..padded_n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let rows = rng::sample_without_replacement(&mut rng, padded_n, m);
            Representation::Srht {
                signs,
                rows,
                padded_n,
            }
        }
        SchemeId::Cs => Representation::HashSign {
            buckets: (0..n).map(|i| cs_bucket(seed, i, m)).collect(),
            signs: (0..n).map(|i| cs_sign(seed, i)).collect(),
        },
    };
    Ok(SketchOperator {
        scheme: Some(scheme),
        n,
        m,
        seed,
        repr,
    })
}

/// Leverage-score sampling from precomputed probabilities. Row `k` drawn with
/// probability `p_k` receives weight `1 / sqrt(m p_k)`.
pub fn leverage_sketch(table: &AliasTable, m: usize, seed: u64) -> SketchOperator {
    let mut rng = stream(seed);
    let mut indices = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for _ in 0..m {
        let k = table.sample(&mut rng);
        indices.push(k);
        weights.push(1.0 / (m as f64 * table.probability(k)).sqrt());
    }
    SketchOperator {
        scheme: Some(SchemeId::Rs4),
        n: table.len(),
        m,
        seed,
        repr: Representation::SampledRows { indices, weights },
    }
}

impl SketchOperator {
    /// A sampling operator with explicit rows and weights.
    pub fn sampled_rows(n: usize, indices: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if indices.len() != weights.len() {
            return Err(Error::DimMismatch(format!(
                "{} indices but {} weights",
                indices.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidDims(format!("row index {bad} out of range for n={n}")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        Ok(Self {
            scheme: None,
            n,
            m: indices.len(),
            seed: 0,
            repr: Representation::SampledRows { indices, weights },
        })
    }

    /// A countsketch with explicit zero-based bucket map `h` and signs `g`.
    pub fn countsketch_from_maps(h: Vec<usize>, g: Vec<f64>, m: usize) -> Result<Self> {
        if h.len() != g.len() {
            return Err(Error::DimMismatch(format!(
                "{} buckets but {} signs",
                h.len(),
                g.len()
            )));
        }
        if let Some(&bad) = h.iter().find(|&&b| b >= m) {
            return Err(Error::InvalidDims(format!("bucket {bad} out of range for m={m}")));
        }
        if g.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
        }
        Ok(Self {
            scheme: None,
            n: h.len(),
            m,
            seed: 0,
            repr: Representation::HashSign { buckets: h, signs: g },
        })
    }

    pub fn from_dense(p: DenseMatrix) -> Self {
        Self {
            scheme: None,
            n: p.cols(),
            m: p.rows(),
            seed: 0,
            repr: Representation::Dense(p),
        }
    }

    /// Rows of `apply_sketch`'s output. Differs from `m` only for Bernoulli sampling.
    pub fn output_rows(&self) -> usize {
        match &self.repr {
            Representation::SampledRows { indices, .. } => indices.len(),
            _ => self.m,
        }
    }

    /// Indices of the source rows kept by a sampling operator.
    pub fn selected_rows(&self) -> Option<&[usize]> {
        match &self.repr {
            Representation::SampledRows { indices, .. } => Some(indices),
            _ => None,
        }
    }

    /// Content hash of the realized operator.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n.hash(&mut h);
        self.m.hash(&mut h);
        match &self.repr {
            Representation::SampledRows { indices, weights } => {
                indices.hash(&mut h);
                weights.iter().for_each(|w| w.to_bits().hash(&mut h));
            }
            Representation::HashSign { buckets, signs } => {
                buckets.hash(&mut h);
                signs.iter().for_each(|s| s.to_bits().hash(&mut h));
            }
            Representation::Projection { .. } => {
                for r in 0..self.m.min(4) {
                    self.projection_row(r)
                        .iter()
                        .for_each(|v| v.to_bits().hash(&mut h));
                }
            }
            Representation::Srht { signs, rows, .. } => {
                signs.iter().for_each(|s| s.to_bits().hash(&mut h));
                rows.hash(&mut h);
            }
            Representation::Dense(p) => p.as_slice().iter().for_each(|v| v.to_bits().hash(&mut h)),
        }
        h.finish()
    }

    /// Row `r` of a seeded dense projection, scaled.
    fn projection_row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        if let Representation::Projection { kind } = &self.repr {
            fill_projection_row(*kind, self.seed, r, self.m, &mut out);
        }
        out
    }

    /// Text record from which the operator can be rebuilt.
    pub fn to_record(&self) -> Result<String> {
        let scheme = self.scheme.ok_or_else(|| {
            Error::InvalidArgument("explicit operators have no seed record".into())
        })?;
        let mut rec = format!("sketch scheme={} n={} m={} seed={}", scheme, self.n, self.m, self.seed);
        if let Representation::Projection {
            kind: ProjectionKind::Sparse { s },
        } = self.repr
        {
            rec.push_str(&format!(" sparsity={s}"));
        }
        Ok(rec)
    }

    /// Rebuilds an operator from [`SketchOperator::to_record`] output. Leverage
    /// sampling needs the same source matrix it was built from.
    pub fn from_record(record: &str, source: Option<&DenseMatrix>) -> Result<Self> {
        let mut words = record.split_whitespace();
        if words.next() != Some("sketch") {
            return Err(Error::Parse {
                row: 0,
                col: 0,
                msg: "record must start with 'sketch'".into(),
            });
        }
        let (mut scheme, mut n, mut m, mut seed) = (None, None, None, None);
        let mut opts = SketchOptions::default();
        for (col, w) in words.enumerate() {
            let (k, v) = w.split_once('=').ok_or_else(|| Error::Parse {
                row: 0,
                col: col + 1,
                msg: format!("expected key=value, got {w:?}"),
            })?;
            let bad = |msg: String| Error::Parse { row: 0, col: col + 1, msg };
            match k {
                "scheme" => scheme = Some(v.parse::<SchemeId>()?),
                "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "m" => m = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "sparsity" => opts.sparsity = v.parse::<f64>().map_err(|e| bad(e.to_string()))?,
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        let missing = |f: &str| Error::Parse {
            row: 0,
            col: 0,
            msg: format!("record lacks {f}"),
        };
        build_sketch_with(
            scheme.ok_or_else(|| missing("scheme"))?,
            n.ok_or_else(|| missing("n"))?,
            m.ok_or_else(|| missing("m"))?,
            seed.ok_or_else(|| missing("seed"))?,
            source,
            &opts,
        )
    }
}

fn fill_projection_row(kind: ProjectionKind, seed: u64, r: usize, m: usize, out: &mut [f64]) {
    let mut rng = stream(derive(seed, &[r as u64]));
    let inv = 1.0 / (m as f64).sqrt();
    match kind {
        ProjectionKind::Gaussian => {
            for v in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * inv;
            }
        }
        ProjectionKind::Rademacher => {
            let magnitude = inv.to_bits();
            for chunk in out.chunks_mut(64) {
                let bits = rng.next_u64();
                for (k, v) in chunk.iter_mut().enumerate() {
                    let negative = (!(bits >> k) & 1) << 63;
                    *v = f64::from_bits(magnitude | negative);
                }
            }
        }
        ProjectionKind::Sparse { s } => {
            let val = (s / m as f64).sqrt();
            let t = ((1u64 << 32) as f64 / (2.0 * s)) as u64;
            for chunk in out.chunks_mut(2) {
                let word = rng.next_u64();
                for (k, v) in chunk.iter_mut().enumerate() {
                    let x = (word >> (32 * k)) & 0xFFFF_FFFF;
                    let sign = (x < t) as i32 - (x >= t && x < 2 * t) as i32;
                    *v = val * sign as f64;
                }
            }
        }
    }
}

/// In-place unnormalized fast Walsh-Hadamard transform; `x.len()` must be a power of two.
pub(crate) fn fwht(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in x.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
}

/// `Pi * A`.
pub fn apply_sketch(op: &SketchOperator, a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != op.n {
        return Err(Error::DimMismatch(format!(
            "operator expects {} rows, matrix has {}",
            op.n,
            a.rows()
        )));
    }
    let d = a.cols();
    match &op.repr {
        Representation::SampledRows { indices, weights } => {
            let mut out = Vec::with_capacity(indices.len() * d);
            for (&i, &w) in indices.iter().zip(weights) {
                out.extend(a.row(i).iter().map(|v| v * w));
            }
            Ok(DenseMatrix::from_raw(indices.len(), d, out))
        }
        Representation::HashSign { buckets, signs } => {
            let mut out = DenseMatrix::zeros(op.m, d);
            for i in 0..op.n {
                let g = signs[i];
                let dst = out.row_mut(buckets[i]);
                for (o, v) in dst.iter_mut().zip(a.row(i)) {
                    *o += g * v;
                }
            }
            Ok(out)
        }
        Representation::Projection { kind } => {
            let mut out = DenseMatrix::zeros(op.m, d);
            let columns = a.transpose();
            let mut buf = vec![0.0; op.n];
            for r in 0..op.m {
                fill_projection_row(*kind, op.seed, r, op.m, &mut buf);
                let dst = out.row_mut(r);
                for (c, o) in dst.iter_mut().enumerate() {
                    *o = dot(&buf, columns.row(c));
                }
            }
            Ok(out)
        }
        Representation::Srht {
            signs,
            rows,
            padded_n,
        } => {
            let inv = 1.0 / (op.m as f64).sqrt();
            let mut out = DenseMatrix::zeros(rows.len(), d);
            let mut col = vec![0.0; *padded_n];
            for c in 0..d {
                col.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..op.n {
                    col[i] = signs[i] * a.get(i, c);
                }
                fwht(&mut col);
                for (r, &k) in rows.iter().enumerate() {
                    out.as_mut_slice()[r * d + c] = col[k] * inv;
                }
            }
            Ok(out)
        }
        Representation::Dense(p) => p.matmul(a),
    }
}

/// `Pi' * B` for `B` with `output_rows` rows.
pub fn apply_sketch_transpose(op: &SketchOperator, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows() != op.output_rows() {
        return Err(Error::DimMismatch(format!(
            "transpose expects {} rows, matrix has {}",
            op.output_rows(),
            b.rows()
        )));
    }
    let d = b.cols();
    let mut out = DenseMatrix::zeros(op.n, d);
    match &op.repr {
        Representation::SampledRows { indices, weights } => {
            for (r, (&i, &w)) in indices.iter().zip(weights).enumerate() {
                for (o, v) in out.row_mut(i).iter_mut().zip(b.row(r)) {
                    *o += w * v;
                }
            }
        }
        Representation::HashSign { buckets, signs } => {
            for i in 0..op.n {
                let g = signs[i];
                let src = b.row(buckets[i]);
                for (o, v) in out.row_mut(i).iter_mut().zip(src) {
                    *o = g * v;
                }
            }
        }
        _ => return materialize(op)?.t_matmul(b),
    }
    Ok(out)
}

/// `Pi * v` for a single vector.
pub fn apply_sketch_vec(op: &SketchOperator, v: &[f64]) -> Result<Vec<f64>> {
    Ok(apply_sketch(op, &DenseMatrix::column_vector(v)?)?.into_vec())
}

pub fn materialize(op: &SketchOperator) -> Result<DenseMatrix> {
    materialize_with_cap(op, DEFAULT_MATERIALIZE_CAP)
}

/// The explicit `output_rows x n` matrix of `op`, refusing anything above `cap` entries.
pub fn materialize_with_cap(op: &SketchOperator, cap: usize) -> Result<DenseMatrix> {
    let rows = op.output_rows();
    let entries = rows.saturating_mul(op.n);
    if entries > cap {
        return Err(Error::TooLarge { entries, cap });
    }
    let n = op.n;
    let mut p = DenseMatrix::zeros(rows, n);
    match &op.repr {
        Representation::SampledRows { indices, weights } => {
            for (r, (&i, &w)) in indices.iter().zip(weights).enumerate() {
                p.as_mut_slice()[r * n + i] = w;
            }
        }
        Representation::HashSign { buckets, signs } => {
            for i in 0..n {
                p.as_mut_slice()[buckets[i] * n + i] = signs[i];
            }
        }
        Representation::Projection { kind } => {
            for r in 0..rows {
                fill_projection_row(*kind, op.seed, r, op.m, p.row_mut(r));
            }
        }
        Representation::Srht { signs, rows: sel, .. } => {
            let inv = 1.0 / (op.m as f64).sqrt();
            for (r, &k) in sel.iter().enumerate() {
                for i in 0..n {
                    let h = if (k & i).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    p.as_mut_slice()[r * n + i] = h * signs[i] * inv;
                }
            }
        }
        Representation::Dense(d) => return Ok(d.clone()),
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertyReport {
    /// `Pi'Pi` is diagonal.
    pub prop1_holds: bool,
    /// `Pi Pi' = (n/m) I`.
    pub prop2_holds: bool,
    pub max_offdiag_pi_t_pi: f64,
    pub max_dev_pipit: f64,
}

/// Measures the two structural properties on the materialized operator.
///
/// Bernoulli sampling is checked in its `n x n` form `diag(w_i 1{row i kept})`,
/// the representation in which its expected size is `m`.
pub fn check_pi_properties(op: &SketchOperator) -> Result<PropertyReport> {
    let p = if op.scheme == Some(SchemeId::Rs3) {
        let entries = op.n.saturating_mul(op.n);
        if entries > DEFAULT_MATERIALIZE_CAP {
            return Err(Error::TooLarge {
                entries,
                cap: DEFAULT_MATERIALIZE_CAP,
            });
        }
        let mut p = DenseMatrix::zeros(op.n, op.n);
        if let Representation::SampledRows { indices, weights } = &op.repr {
            for (&i, &w) in indices.iter().zip(weights) {
                p.set(i, i, w);
            }
        }
        p
    } else {
        materialize(op)?
    };
    let ptp = p.gram();
    let mut max_off = 0.0f64;
    for i in 0..ptp.rows() {
        for j in 0..ptp.cols() {
            if i != j {
                max_off = max_off.max(ptp.get(i, j).abs());
            }
        }
    }
    let ppt = p.transpose().gram();
    let target = op.n as f64 / op.m as f64;
    let mut max_dev = 0.0f64;
    for i in 0..ppt.rows() {
        for j in 0..ppt.cols() {
            let e = if i == j { target } else { 0.0 };
            max_dev = max_dev.max((ppt.get(i, j) - e).abs());
        }
    }
    Ok(PropertyReport {
        prop1_holds: max_off <= PI_TOL,
        prop2_holds: max_dev <= PI_TOL,
        max_offdiag_pi_t_pi: max_off,
        max_dev_pipit: max_dev,
    })
}

#[derive(Clone, Debug)]
enum CsMaps {
    Seeded(u64),
    Explicit { h: Vec<usize>, g: Vec<f64> },
}

/// One-pass countsketch: rows arrive one at a time, in any order, and are
/// added with their sign into their bucket.
#[derive(Clone, Debug)]
pub struct CsAccumulator {
    m: usize,
    cols: usize,
    maps: CsMaps,
    state: DenseMatrix,
    seen: Vec<u64>,
    rows_seen: usize,
}

pub fn countsketch_stream(m: usize, cols: usize, seed: u64) -> Result<CsAccumulator> {
    CsAccumulator::new(m, cols, seed)
}

pub fn cs_update(acc: &mut CsAccumulator, row_index: usize, row: &[f64]) -> Result<()> {
    acc.update(row_index, row)
}

pub fn cs_finalize(acc: CsAccumulator) -> DenseMatrix {
    acc.finalize()
}

impl CsAccumulator {
    /// Accumulator whose maps agree with `build_sketch(Cs, n, m, seed, None)`.
    pub fn new(m: usize, cols: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDims("countsketch needs m >= 1".into()));
        }
        Ok(Self {
            m,
            cols,
            maps: CsMaps::Seeded(seed),
            state: DenseMatrix::zeros(m, cols),
            seen: Vec::new(),
            rows_seen: 0,
        })
    }

    /// Accumulator for an operator built by [`SketchOperator::countsketch_from_maps`]
    /// or [`build_sketch`] with the countsketch scheme.
    pub fn for_operator(op: &SketchOperator, cols: usize) -> Result<Self> {
        match &op.repr {
            Representation::HashSign { buckets, signs } => Ok(Self {
                m: op.m,
                cols,
                maps: match op.scheme {
                    Some(SchemeId::Cs) => CsMaps::Seeded(op.seed),
                    _ => CsMaps::Explicit {
                        h: buckets.clone(),
                        g: signs.clone(),
                    },
                },
                state: DenseMatrix::zeros(op.m, cols),
                seen: Vec::new(),
                rows_seen: 0,
            }),
            _ => Err(Error::InvalidArgument(
                "streaming requires a countsketch operator".into(),
            )),
        }
    }

    #[inline]
    fn target(&self, i: usize) -> Result<(usize, f64)> {
        match &self.maps {
            CsMaps::Seeded(seed) => Ok((cs_bucket(*seed, i, self.m), cs_sign(*seed, i))),
            CsMaps::Explicit { h, g } => match (h.get(i), g.get(i)) {
                (Some(&b), Some(&s)) => Ok((b, s)),
                _ => Err(Error::InvalidDims(format!(
                    "row {i} is outside the operator's {} rows",
                    h.len()
                ))),
            },
        }
    }

    pub fn update(&mut self, row_index: usize, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimMismatch(format!(
                "row of length {} streamed into {} columns",
                row.len(),
                self.cols
            )));
        }
        if let Some((c, _)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: row_index,
                col: c,
            });
        }
        let (word, bit) = (row_index / 64, row_index % 64);
        if word >= self.seen.len() {
            self.seen.resize(word + 1, 0);
        }
        if self.seen[word] >> bit & 1 == 1 {
            return Err(Error::DuplicateRow(row_index));
        }
        let (b, g) = self.target(row_index)?;
        self.seen[word] |= 1 << bit;
        self.rows_seen += 1;
        for (o, v) in self.state.row_mut(b).iter_mut().zip(row) {
            *o += g * v;
        }
        Ok(())
    }

    /// Current partial sketch.
    pub fn state(&self) -> &DenseMatrix {
        &self.state
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    /// Entrywise sum of two accumulators over disjoint row sets with the same maps.
    pub fn merge(mut self, other: CsAccumulator) -> Result<CsAccumulator> {
        let same_maps = match (&self.maps, &other.maps) {
            (CsMaps::Seeded(a), CsMaps::Seeded(b)) => a == b,
            (CsMaps::Explicit { h: h1, g: g1 }, CsMaps::Explicit { h: h2, g: g2 }) => {
                h1 == h2 && g1 == g2
            }
            _ => false,
        };
        if !same_maps || self.m != other.m || self.cols != other.cols {
            return Err(Error::InvalidArgument(
                "accumulators must share m, columns and hash maps".into(),
            ));
        }
        if other.seen.len() > self.seen.len() {
            self.seen.resize(other.seen.len(), 0);
        }
        for (w, (a, b)) in self.seen.iter_mut().zip(&other.seen).enumerate() {
            let overlap = *a & *b;
            if overlap != 0 {
                return Err(Error::DuplicateRow(w * 64 + overlap.trailing_zeros() as usize));
            }
            *a |= *b;
        }
        for (a, b) in self.state.as_mut_slice().iter_mut().zip(other.state.as_slice()) {
            *a += b;
        }
        self.rows_seen += other.rows_seen;
        Ok(self)
    }

    pub fn finalize(self) -> DenseMatrix {
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motivating_a() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-0.25, 0.5],
            vec![0.25, -0.5],
            vec![0.0, 0.0],
        ])
        .unwrap()
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream(seed);
        DenseMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal)).unwrap()
    }

    fn worked_example_maps() -> (Vec<usize>, Vec<f64>) {
        let h1 = [2, 3, 1, 2, 1, 1, 3, 2, 1];
        let g = vec![-1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        (h1.iter().map(|b| b - 1).collect(), g)
    }

    #[test]
    fn scheme_labels_round_trip() {
        for s in SchemeId::ALL {
            assert_eq!(s.label().parse::<SchemeId>().unwrap(), s);
        }
        assert_eq!("SRHT".parse::<SchemeId>().unwrap(), SchemeId::Rp3);
        assert!("rp9".parse::<SchemeId>().is_err());
    }

    #[test]
    fn explicit_uniform_selection_matches_worked_case() {
        // rows 9, 5, 1 (one-based) of a 9-row matrix, each scaled by sqrt(9/3)
        let w = 3f64.sqrt();
        let op = SketchOperator::sampled_rows(9, vec![8, 4, 0], vec![w; 3]).unwrap();
        let a = DenseMatrix::from_fn(9, 2, |i, j| (10 * (i + 1) + j) as f64).unwrap();
        let s = apply_sketch(&op, &a).unwrap();
        assert_eq!(s.row(0), &[90.0 * w, 91.0 * w]);
        assert_eq!(s.row(1), &[50.0 * w, 51.0 * w]);
        assert_eq!(s.row(2), &[10.0 * w, 11.0 * w]);
    }

    #[test]
    fn uniform_sketch_has_distinct_rows_and_uniform_weights() {
        for seed in 0..20 {
            let op = build_sketch(SchemeId::Rs1, 9, 3, seed, None).unwrap();
            let Representation::SampledRows { indices, weights } = &op.repr else {
                panic!("sampling representation expected")
            };
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 3);
            assert!(weights.iter().all(|&w| (w - 3f64.sqrt()).abs() < 1e-15));
        }
    }

    #[test]
    fn selecting_first_two_rows_recovers_identity() {
        let op = SketchOperator::sampled_rows(5, vec![0, 1], vec![1.0, 1.0]).unwrap();
        let s = apply_sketch(&op, &motivating_a()).unwrap();
        assert_eq!(s, DenseMatrix::identity(2));
    }

    #[test]
    fn full_permutation_reproduces_rows() {
        let a = random_matrix(7, 3, 1);
        let op = build_sketch(SchemeId::Rs1, 7, 7, 4, None).unwrap();
        let Representation::SampledRows { indices, .. } = &op.repr else {
            unreachable!()
        };
        let s = apply_sketch(&op, &a).unwrap();
        for (r, &i) in indices.iter().enumerate() {
            assert_eq!(s.row(r), a.row(i));
        }
    }

    #[test]
    fn worked_countsketch_materializes_to_expected_matrix() {
        let (h, g) = worked_example_maps();
        let op = SketchOperator::countsketch_from_maps(h, g, 3).unwrap();
        let p = materialize(&op).unwrap();
        let expected = DenseMatrix::from_rows(&[
            vec![0.0, 0.0, 1.0, 0.0, 1.0, -1.0, 0.0, 0.0, 1.0],
            vec![-1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0],
            vec![0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(p, expected);
    }

    #[test]
    fn worked_countsketch_stream_states() {
        let (h, g) = worked_example_maps();
        let op = SketchOperator::countsketch_from_maps(h, g, 3).unwrap();
        // row i is the indicator e_i so each state entry reads off which rows were added
        let a = DenseMatrix::identity(9);
        let mut acc = CsAccumulator::for_operator(&op, 9).unwrap();
        for i in 0..5 {
            acc.update(i, a.row(i)).unwrap();
        }
        let s = acc.state();
        assert_eq!(s.row(0), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.row(1), &[-1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.row(2), &[0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for i in 5..9 {
            acc.update(i, a.row(i)).unwrap();
        }
        assert_eq!(acc.finalize(), materialize(&op).unwrap());
    }

    #[test]
    fn single_streamed_row_lands_in_its_bucket() {
        let op = SketchOperator::countsketch_from_maps(vec![0, 1, 2], vec![1.0, -1.0, 1.0], 3).unwrap();
        let mut acc = CsAccumulator::for_operator(&op, 2).unwrap();
        acc.update(1, &[3.0, -4.0]).unwrap();
        let out = acc.finalize();
        assert_eq!(out.row(0), &[0.0, 0.0]);
        assert_eq!(out.row(1), &[-3.0, 4.0]);
        assert_eq!(out.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn streaming_rejects_duplicates() {
        let mut acc = countsketch_stream(4, 2, 9).unwrap();
        cs_update(&mut acc, 3, &[1.0, 2.0]).unwrap();
        assert!(matches!(
            cs_update(&mut acc, 3, &[1.0, 2.0]),
            Err(Error::DuplicateRow(3))
        ));
    }

    #[test]
    fn streamed_and_batch_countsketch_agree() {
        let a = random_matrix(1000, 4, 2);
        let op = build_sketch(SchemeId::Cs, 1000, 50, 77, None).unwrap();
        let batch = apply_sketch(&op, &a).unwrap();
        let mut acc = countsketch_stream(50, 4, 77).unwrap();
        // reverse order exercises order independence
        for i in (0..1000).rev() {
            cs_update(&mut acc, i, a.row(i)).unwrap();
        }
        assert!(cs_finalize(acc).max_abs_diff(&batch) <= 1e-12);
    }

    #[test]
    fn disjoint_accumulators_merge() {
        let a = random_matrix(200, 3, 3);
        let mut lo = countsketch_stream(20, 3, 5).unwrap();
        let mut hi = countsketch_stream(20, 3, 5).unwrap();
        for i in 0..200 {
            if i < 120 {
                lo.update(i, a.row(i)).unwrap();
            } else {
                hi.update(i, a.row(i)).unwrap();
            }
        }
        let merged = lo.merge(hi).unwrap();
        assert_eq!(merged.rows_seen(), 200);
        let op = build_sketch(SchemeId::Cs, 200, 20, 5, None).unwrap();
        assert!(merged.finalize().max_abs_diff(&apply_sketch(&op, &a).unwrap()) < 1e-12);

        let mut x = countsketch_stream(20, 3, 5).unwrap();
        let mut y = countsketch_stream(20, 3, 5).unwrap();
        x.update(4, a.row(4)).unwrap();
        y.update(4, a.row(4)).unwrap();
        assert!(matches!(x.merge(y), Err(Error::DuplicateRow(4))));
    }

    #[test]
    fn apply_matches_materialized_product() {
        let n = 40;
        let a = random_matrix(n, 3, 8);
        let src = random_matrix(n, 3, 9);
        for scheme in SchemeId::ALL {
            let op = build_sketch(scheme, n, 12, 21, Some(&src)).unwrap();
            let direct = apply_sketch(&op, &a).unwrap();
            let via = materialize(&op).unwrap().matmul(&a).unwrap();
            assert!(
                direct.max_abs_diff(&via) <= 1e-12,
                "{scheme}: {}",
                direct.max_abs_diff(&via)
            );
        }
    }

    #[test]
    fn transpose_matches_materialized() {
        let n = 24;
        let src = random_matrix(n, 2, 2);
        for scheme in SchemeId::ALL {
            let op = build_sketch(scheme, n, 8, 5, Some(&src)).unwrap();
            let b = random_matrix(op.output_rows(), 3, 6);
            let direct = apply_sketch_transpose(&op, &b).unwrap();
            let via = materialize(&op).unwrap().t_matmul(&b).unwrap();
            assert!(direct.max_abs_diff(&via) < 1e-12, "{scheme}");
        }
    }

    #[test]
    fn sampling_rows_have_one_nonzero_and_countsketch_columns_have_one() {
        let src = random_matrix(30, 2, 1);
        for scheme in [SchemeId::Rs1, SchemeId::Rs2, SchemeId::Rs3, SchemeId::Rs4] {
            let p = materialize(&build_sketch(scheme, 30, 10, 3, Some(&src)).unwrap()).unwrap();
            for r in 0..p.rows() {
                assert_eq!(p.row(r).iter().filter(|v| **v != 0.0).count(), 1);
            }
        }
        let p = materialize(&build_sketch(SchemeId::Cs, 30, 10, 3, None).unwrap()).unwrap();
        for c in 0..p.cols() {
            let col = p.column(c);
            assert_eq!(col.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(col.iter().map(|v| v * v).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            build_sketch(SchemeId::Rs4, 10, 3, 0, None),
            Err(Error::MissingSource)
        ));
        assert!(matches!(
            build_sketch(SchemeId::Rs1, 3, 10, 0, None),
            Err(Error::InvalidDims(_))
        ));
        let op = build_sketch(SchemeId::Rs1, 10, 3, 0, None).unwrap();
        assert!(matches!(
            apply_sketch(&op, &DenseMatrix::zeros(9, 2)),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let src = random_matrix(64, 2, 1);
        for scheme in SchemeId::ALL {
            let a = build_sketch(scheme, 64, 16, 5, Some(&src)).unwrap();
            let b = build_sketch(scheme, 64, 16, 5, Some(&src)).unwrap();
            let c = build_sketch(scheme, 64, 16, 6, Some(&src)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.fingerprint(), b.fingerprint());
            assert_ne!(a.fingerprint(), c.fingerprint(), "{scheme}");
        }
    }

    #[test]
    fn property_table() {
        let n = 16;
        let m = 8;
        let src = random_matrix(n, 2, 4);
        let report = |s, seed| check_pi_properties(&build_sketch(s, n, m, seed, Some(&src)).unwrap()).unwrap();

        let rs1 = report(SchemeId::Rs1, 1);
        assert!(rs1.prop1_holds && rs1.prop2_holds);
        let srht = report(SchemeId::Rp3, 1);
        assert!(srht.prop2_holds);
        assert!(!srht.prop1_holds);
        for s in [SchemeId::Rp1, SchemeId::Rp2, SchemeId::Rp4, SchemeId::Cs] {
            let r = report(s, 1);
            assert!(!r.prop1_holds && !r.prop2_holds, "{s}");
        }
        let rs3 = report(SchemeId::Rs3, 1);
        assert!(rs3.prop1_holds && !rs3.prop2_holds);
        let lev = report(SchemeId::Rs4, 1);
        assert!(lev.prop1_holds && !lev.prop2_holds);
        // with replacement: Pi'Pi stays diagonal, and a repeated row breaks Pi Pi'
        let mut saw_repeat = false;
        for seed in 0..20 {
            let r = report(SchemeId::Rs2, seed);
            assert!(r.prop1_holds);
            saw_repeat |= !r.prop2_holds;
        }
        assert!(saw_repeat);
    }

    #[test]
    fn hadamard_with_signs_is_orthonormal_on_power_of_two() {
        let n = 32;
        let op = build_sketch(SchemeId::Rp3, n, n, 3, None).unwrap();
        // with m = N every row is kept, so Pi = HD and Pi'Pi = I
        let p = materialize(&op).unwrap();
        assert!(p.gram().max_abs_diff(&DenseMatrix::identity(n)) < 1e-10);
    }

    #[test]
    fn srht_pads_non_power_of_two() {
        let n = 20;
        let a = random_matrix(n, 2, 5);
        let op = build_sketch(SchemeId::Rp3, n, 32.min(n), 8, None).unwrap();
        let Representation::Srht { padded_n, .. } = op.repr else {
            unreachable!()
        };
        assert_eq!(padded_n, 32);
        let via = materialize(&op).unwrap().matmul(&a).unwrap();
        assert!(apply_sketch(&op, &a).unwrap().max_abs_diff(&via) < 1e-12);
    }

    #[test]
    fn sparse_projection_zero_frequency() {
        let n = 300;
        let m = 30;
        let mut zeros = 0usize;
        let mut total = 0usize;
        for seed in 0..20 {
            let p = materialize(&build_sketch(SchemeId::Rp4, n, m, seed, None).unwrap()).unwrap();
            let val = (3.0 / m as f64).sqrt();
            for &v in p.as_slice() {
                assert!(v == 0.0 || (v.abs() - val).abs() < 1e-15);
                zeros += (v == 0.0) as usize;
                total += 1;
            }
        }
        let freq = zeros as f64 / total as f64;
        let se = (2.0 / 9.0 / total as f64).sqrt();
        assert!((freq - 2.0 / 3.0).abs() < 4.0 * se, "zero frequency {freq}");
    }

    #[test]
    fn record_round_trip() {
        let op = build_sketch_with(
            SchemeId::Rp4,
            50,
            10,
            99,
            None,
            &SketchOptions { sparsity: 50f64.sqrt() },
        )
        .unwrap();
        let rec = op.to_record().unwrap();
        assert!(rec.starts_with("sketch scheme=rp4 n=50 m=10 seed=99"));
        assert_eq!(SketchOperator::from_record(&rec, None).unwrap(), op);
        let cs = build_sketch(SchemeId::Cs, 50, 10, 1, None).unwrap();
        assert_eq!(SketchOperator::from_record(&cs.to_record().unwrap(), None).unwrap(), cs);
        assert!(SketchOperator::from_record("sketch scheme=cs n=x", None).is_err());
    }

    #[test]
    fn materialize_respects_cap() {
        let op = build_sketch(SchemeId::Rp1, 1000, 100, 1, None).unwrap();
        assert!(matches!(
            materialize_with_cap(&op, 1000),
            Err(Error::TooLarge { entries: 100_000, cap: 1000 })
        ));
    }

    #[test]
    fn fwht_of_unit_vector_is_a_hadamard_row() {
        let mut x = vec![0.0; 8];
        x[3] = 1.0;
        fwht(&mut x);
        for (i, v) in x.iter().enumerate() {
            let expect = if (i & 3).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(*v, expect);
        }
    }
}
