//! Innovation fields driven by a counter-based generator.
//!
//! Every innovation value is a pure function of `(seed, lattice cell)`: the
//! cell coordinates are packed into a ChaCha8 word position, so any
//! sub-window can be regenerated independently of generation order or
//! thread count. Coordinates must lie in `[-32768, 32767]`.

use crate::lattice::{self, LatticeIndex, Window};
use crate::FieldError;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

const COORD_BIAS: i64 = 1 << 15;
const WORDS_PER_CELL: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    StandardNormal,
    Rademacher,
    /// Uniform on `[-1, 1]`.
    CenteredUniform,
}

impl Distribution {
    pub fn variance(self) -> f64 {
        match self {
            Distribution::StandardNormal | Distribution::Rademacher => 1.0,
            Distribution::CenteredUniform => 1.0 / 3.0,
        }
    }

    fn sample(self, w1: u64, w2: u64) -> f64 {
        match self {
            Distribution::Rademacher => {
                if w1 >> 63 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Distribution::CenteredUniform => 2.0 * unit_open_right(w1) - 1.0,
            Distribution::StandardNormal => {
                // Box-Muller, cosine branch only: a fixed two words per cell.
                let u1 = ((w1 >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
                let u2 = unit_open_right(w2);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
        }
    }
}

fn unit_open_right(w: u64) -> f64 {
    (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Independent, identically distributed cells.
    Iid,
    /// `d = 2` only: independent columns, each a martingale-difference
    /// sequence along the first axis, `xi[n,m] = e[n,m] * g(e[n-1,m])` with
    /// `g(x) = sqrt(2) * 1{x > 0}` and `e` iid from the base distribution.
    ColumnMds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnovationSpec {
    #[serde(rename = "dist")]
    pub distribution: Distribution,
    pub structure: Structure,
    pub seed: u64,
}

impl InnovationSpec {
    pub fn new(distribution: Distribution, structure: Structure, seed: u64) -> Self {
        Self { distribution, structure, seed }
    }

    pub fn iid(distribution: Distribution, seed: u64) -> Self {
        Self::new(distribution, Structure::Iid, seed)
    }

    /// Variance of a single innovation (both structures have the base variance).
    pub fn variance(&self) -> f64 {
        self.distribution.variance()
    }

    /// Same spec with the seed of replication `r`.
    pub fn for_replication(&self, r: u64) -> Self {
        Self { seed: derive_seed(self.seed, r), ..*self }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under base `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn cell_code(coords: &[i64]) -> Result<u64, FieldError> {
    let mut code = 0u64;
    for &c in coords {
        if !(-COORD_BIAS..COORD_BIAS).contains(&c) {
            return Err(FieldError::CoordinateRange(c));
        }
        code = (code << 16) | (c + COORD_BIAS) as u64;
    }
    Ok(code)
}

/// Row-major iid draws over `[origin, origin + extent)`.
fn fill_iid(dist: Distribution, seed: u64, origin: &[i64], extent: &[usize]) -> Result<Vec<f64>, FieldError> {
    let d = extent.len();
    let upper: Vec<i64> = origin.iter().zip(extent).map(|(o, &e)| o + e as i64 - 1).collect();
    cell_code(origin)?;
    cell_code(&upper)?;
    let last = extent[d - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(extent.iter().product());
    let mut row = origin.to_vec();
    let mut emit_row = |row: &[i64], out: &mut Vec<f64>| {
        // Consecutive cells along the last axis have consecutive codes, so a
        // row is one contiguous run of the keystream.
        let code = cell_code(row).expect("range checked above");
        rng.set_word_pos(code as u128 * WORDS_PER_CELL);
        for _ in 0..last {
            let w1 = rng.next_u64();
            let w2 = rng.next_u64();
            out.push(dist.sample(w1, w2));
        }
    };
    if d == 1 {
        emit_row(&row, &mut out);
        return Ok(out);
    }
    lattice::for_each_offset(&extent[..d - 1], |idx| {
        for a in 0..d - 1 {
            row[a] = origin[a] + idx[a] as i64;
        }
        emit_row(&row, &mut out);
    });
    Ok(out)
}

/// Innovation values materialized on `[pad_origin, field upper corner]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationArray {
    spec: InnovationSpec,
    field_origin: LatticeIndex,
    field_extent: Vec<usize>,
    values: Window,
}

impl InnovationArray {
    pub fn spec(&self) -> &InnovationSpec {
        &self.spec
    }

    pub fn pad_origin(&self) -> &LatticeIndex {
        self.values.origin()
    }

    /// Origin of the field window these innovations were generated for.
    pub fn field_origin(&self) -> &LatticeIndex {
        &self.field_origin
    }

    pub fn field_extent(&self) -> &[usize] {
        &self.field_extent
    }

    pub fn window(&self) -> &Window {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.field_extent.len()
    }

    pub fn get(&self, k: &LatticeIndex) -> Option<f64> {
        self.values.get(k)
    }

    /// Pad available below the field origin on each axis.
    pub fn pad(&self) -> Vec<usize> {
        self.field_origin
            .coords()
            .iter()
            .zip(self.pad_origin().coords())
            .map(|(f, p)| (f - p) as usize)
            .collect()
    }

    /// Wraps externally supplied innovations (used by tests and the oracle).
    pub fn from_window(
        spec: InnovationSpec,
        field_origin: LatticeIndex,
        field_extent: Vec<usize>,
        values: Window,
    ) -> Result<Self, FieldError> {
        if field_origin.dim() != values.dim() || field_extent.len() != values.dim() {
            return Err(FieldError::Model("innovation window dimension mismatch".into()));
        }
        let upper: Vec<i64> = field_origin
            .coords()
            .iter()
            .zip(&field_extent)
            .map(|(o, &e)| o + e as i64 - 1)
            .collect();
        if !values.origin().le(&field_origin) || !LatticeIndex::new(upper)?.le(&values.upper()) {
            return Err(FieldError::Model("innovation window does not cover the field window".into()));
        }
        Ok(Self { spec, field_origin, field_extent, values })
    }
}

/// Innovations for a field window at origin `(1, .., 1)`.
pub fn gen_innovations(spec: &InnovationSpec, extent: &[usize], pad: &[usize]) -> Result<InnovationArray, FieldError> {
    gen_innovations_at(spec, &LatticeIndex::ones(extent.len()), extent, pad)
}

/// Innovations for the field window `[origin, origin + extent)`, padded by
/// `pad` cells below the origin on each axis.
pub fn gen_innovations_at(
    spec: &InnovationSpec,
    origin: &LatticeIndex,
    extent: &[usize],
    pad: &[usize],
) -> Result<InnovationArray, FieldError> {
    let d = extent.len();
    lattice::check_dim(d)?;
    if origin.dim() != d || pad.len() != d {
        return Err(FieldError::Model(format!(
            "origin, extent and pad must all have {d} axes"
        )));
    }
    if extent.iter().any(|&e| e == 0) {
        return Err(FieldError::Lattice(crate::LatticeError::Dimension("empty field extent".into())));
    }
    let lo: Vec<i64> = origin.coords().iter().zip(pad).map(|(o, &p)| o - p as i64).collect();
    let full: Vec<usize> = extent.iter().zip(pad).map(|(e, p)| e + p).collect();
    let values = match spec.structure {
        Structure::Iid => fill_iid(spec.distribution, spec.seed, &lo, &full)?,
        Structure::ColumnMds => {
            if d != 2 {
                return Err(FieldError::UnsupportedStructure(format!(
                    "column-mds innovations need d = 2, got d = {d}"
                )));
            }
            // One extra row below on the martingale axis feeds g(e[n-1, m]).
            let base_lo = vec![lo[0] - 1, lo[1]];
            let base_ext = vec![full[0] + 1, full[1]];
            let eps = fill_iid(spec.distribution, spec.seed, &base_lo, &base_ext)?;
            let cols = full[1];
            let mut out = Vec::with_capacity(full[0] * cols);
            for n in 0..full[0] {
                for m in 0..cols {
                    let prev = eps[n * cols + m];
                    let cur = eps[(n + 1) * cols + m];
                    out.push(cur * mds_gate(prev));
                }
            }
            out
        }
    };
    let window = Window::new(LatticeIndex::new(lo)?, full, values)?;
    Ok(InnovationArray {
        spec: *spec,
        field_origin: origin.clone(),
        field_extent: extent.to_vec(),
        values: window,
    })
}

/// `g(x) = sqrt(2) * 1{x > 0}`; every base distribution has median 0.
pub fn mds_gate(prev: f64) -> f64 {
    if prev > 0.0 {
        std::f64::consts::SQRT_2
    } else {
        0.0
    }
}
