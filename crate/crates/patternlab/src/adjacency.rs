//! Two-variable tables on `X x Y`, combinatorial rectangles, and rectangle
//! mixtures. These are the objects the counting lemmas manipulate.

use crate::error::{Error, Result};
use crate::par;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// A `[0,1]`-valued table on `X x Y` with its density cached. Boolean tables
/// additionally keep a bit-packed view for fast rectangle counting.
#[derive(Debug, Clone)]
pub struct AdjacencyFunction {
    pub left_size: usize,
    pub right_size: usize,
    values: Vec<f64>,
    /// Row-major bitset, one u64 block per 64 columns; present iff all
    /// values are exactly 0 or 1.
    bits: Option<Vec<u64>>,
    density: f64,
}

impl AdjacencyFunction {
    pub fn new(left_size: usize, right_size: usize, values: Vec<f64>) -> Result<Self> {
        if left_size == 0 || right_size == 0 {
            return Err(Error::Precondition("empty part in adjacency table".into()));
        }
        if values.len() != left_size * right_size {
            return Err(Error::Structural(format!(
                "table length {} != {left_size} x {right_size}",
                values.len()
            )));
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("adjacency values must lie in [0,1]".into()));
        }
        let boolean = values.iter().all(|&v| v == 0.0 || v == 1.0);
        let bits = boolean.then(|| {
            let blocks_per_row = right_size.div_ceil(64);
            let mut bits = vec![0u64; left_size * blocks_per_row];
            for x in 0..left_size {
                for y in 0..right_size {
                    if values[x * right_size + y] == 1.0 {
                        bits[x * blocks_per_row + y / 64] |= 1 << (y % 64);
                    }
                }
            }
            bits
        });
        let density =
            par::sum_f64(values.len(), |i| values[i]) / (left_size * right_size) as f64;
        Ok(AdjacencyFunction {
            left_size,
            right_size,
            values,
            bits,
            density,
        })
    }

    pub fn from_bool<F>(left_size: usize, right_size: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> bool,
    {
        let mut values = Vec::with_capacity(left_size * right_size);
        for x in 0..left_size {
            for y in 0..right_size {
                values.push(f64::from(f(x, y) as u8));
            }
        }
        AdjacencyFunction::new(left_size, right_size, values)
    }

    pub fn constant(left_size: usize, right_size: usize, c: f64) -> Result<Self> {
        AdjacencyFunction::new(left_size, right_size, vec![c; left_size * right_size])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.right_size + y]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn is_boolean(&self) -> bool {
        self.bits.is_some()
    }

    /// Exact 1-count when boolean.
    pub fn one_count(&self) -> Option<u64> {
        self.bits
            .as_ref()
            .map(|b| b.iter().map(|w| w.count_ones() as u64).sum())
    }

    /// Mean of one row.
    pub fn row_mean(&self, x: usize) -> f64 {
        let row = &self.values[x * self.right_size..(x + 1) * self.right_size];
        row.iter().sum::<f64>() / self.right_size as f64
    }

    /// All row means `E_y A(x, y)`.
    pub fn row_means(&self) -> Vec<f64> {
        par::map_collect(self.left_size, |x| self.row_mean(x))
    }

    /// Mean of the table over `S x T` (any values).
    pub fn rect_mean(&self, s: &[usize], t: &[usize]) -> f64 {
        if s.is_empty() || t.is_empty() {
            return 0.0;
        }
        let total = par::sum_f64(s.len(), |i| {
            let x = s[i];
            t.iter().map(|&y| self.at(x, y)).sum::<f64>()
        });
        total / (s.len() * t.len()) as f64
    }
}

/// A combinatorial rectangle `S x T` with its statistics relative to a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    /// `|S||T| / (|X||Y|)`.
    pub measure: f64,
    /// Mean of the reference table over `S x T`.
    pub density: f64,
}

impl Rectangle {
    pub fn new(mut s: Vec<usize>, mut t: Vec<usize>, table: &AdjacencyFunction) -> Result<Self> {
        s.sort_unstable();
        s.dedup();
        t.sort_unstable();
        t.dedup();
        if s.is_empty() || t.is_empty() {
            return Err(Error::Precondition("rectangle with an empty side".into()));
        }
        let measure = (s.len() * t.len()) as f64 / (table.left_size * table.right_size) as f64;
        let density = table.rect_mean(&s, &t);
        Ok(Rectangle {
            s,
            t,
            measure,
            density,
        })
    }
}

/// A convex combination of rectangles. Entries whose conditioning assignment
/// evaluates to zero are dropped from the list; `residual_weight` keeps the
/// weights summing to one (dropped entries are all-zero rectangles, so they
/// can never survive the extraction threshold anyway).
#[derive(Debug, Clone)]
pub struct RectangleMixture {
    pub left_size: usize,
    pub right_size: usize,
    /// `(weight, S, T)` with S, T as sorted index lists.
    pub entries: Vec<(f64, Vec<usize>, Vec<usize>)>,
    pub residual_weight: f64,
}

impl RectangleMixture {
    pub fn new(
        left_size: usize,
        right_size: usize,
        entries: Vec<(f64, Vec<usize>, Vec<usize>)>,
        residual_weight: f64,
    ) -> Result<Self> {
        let total: f64 = entries.iter().map(|e| e.0).sum::<f64>() + residual_weight;
        // Accumulation error grows with the entry count; keep the absolute
        // 1e-12 floor for small mixtures.
        let tol = 1e-12f64.max(entries.len() as f64 * 4.0 * f64::EPSILON);
        if (total - 1.0).abs() > tol {
            return Err(Error::Structural(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if entries.iter().any(|e| e.0 < 0.0) || residual_weight < 0.0 {
            return Err(Error::Structural("negative mixture weight".into()));
        }
        Ok(RectangleMixture {
            left_size,
            right_size,
            entries,
            residual_weight,
        })
    }

    /// `||F||_1 = sum_i c_i |S_i||T_i| / (|X||Y|)`.
    pub fn l1_norm(&self) -> f64 {
        let cells = (self.left_size * self.right_size) as f64;
        self.entries
            .iter()
            .map(|(c, s, t)| c * (s.len() * t.len()) as f64 / cells)
            .sum()
    }

    /// `<F, D> = E_{x,y} F(x,y) D(x,y)` for any table given by `at(x, y)`.
    pub fn inner_product<F>(&self, at: F) -> f64
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let cells = (self.left_size * self.right_size) as f64;
        par::sum_f64(self.entries.len(), |i| {
            let (c, s, t) = &self.entries[i];
            if *c == 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for &x in s {
                for &y in t {
                    acc += at(x, y);
                }
            }
            c * acc / cells
        })
    }
}

// ---------------------------------------------------------------------------
// File formats: dense binary (magic + header + row-major u8-per-cell f64 or
// bit-packed payload, flagged in the header) and CSV import.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"PLAB";
const FLAG_BITPACKED: u8 = 1;

pub fn write_table<W: Write>(table: &AdjacencyFunction, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let flags = if table.is_boolean() { FLAG_BITPACKED } else { 0 };
    w.write_all(&[1u8, flags])?;
    w.write_all(&(table.left_size as u32).to_le_bytes())?;
    w.write_all(&(table.right_size as u32).to_le_bytes())?;
    if flags & FLAG_BITPACKED != 0 {
        let blocks_per_row = table.right_size.div_ceil(64);
        let mut packed = vec![0u8; table.left_size * blocks_per_row * 8];
        for x in 0..table.left_size {
            for y in 0..table.right_size {
                if table.at(x, y) == 1.0 {
                    let bit = x * blocks_per_row * 64 + (y / 64) * 64 + y % 64;
                    packed[bit / 8] |= 1 << (bit % 8);
                }
            }
        }
        w.write_all(&packed)?;
    } else {
        for &v in table.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_table<R: Read>(mut r: R) -> Result<AdjacencyFunction> {
    let mut head = [0u8; 14];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::Parse {
            file: "<table>".into(),
            line: 0,
            msg: "bad magic".into(),
        });
    }
    let flags = head[5];
    let left = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let right = u32::from_le_bytes(head[10..14].try_into().unwrap()) as usize;
    if flags & FLAG_BITPACKED != 0 {
        let blocks_per_row = right.div_ceil(64);
        let mut packed = vec![0u8; left * blocks_per_row * 8];
        r.read_exact(&mut packed)?;
        AdjacencyFunction::from_bool(left, right, |x, y| {
            let bit = x * blocks_per_row * 64 + (y / 64) * 64 + y % 64;
            packed[bit / 8] & (1 << (bit % 8)) != 0
        })
    } else {
        let mut values = Vec::with_capacity(left * right);
        let mut buf = [0u8; 8];
        for _ in 0..left * right {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        AdjacencyFunction::new(left, right, values)
    }
}

pub fn parse_table_csv(text: &str, file: &str) -> Result<AdjacencyFunction> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim().parse().map_err(|_| Error::Parse {
                    file: file.into(),
                    line: lineno + 1,
                    msg: format!("bad cell {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    file: file.into(),
                    line: lineno + 1,
                    msg: "ragged csv".into(),
                });
            }
        }
        rows.push(row);
    }
    let left = rows.len();
    let right = rows.first().map_or(0, Vec::len);
    AdjacencyFunction::new(left, right, rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bool_table(rows: &[&[u8]]) -> AdjacencyFunction {
        AdjacencyFunction::from_bool(rows.len(), rows[0].len(), |x, y| rows[x][y] == 1).unwrap()
    }

    #[test]
    fn density_and_counts() {
        let t = bool_table(&[&[1, 0, 1], &[0, 0, 1]]);
        assert!((t.density() - 0.5).abs() < 1e-15);
        assert_eq!(t.one_count(), Some(3));
        assert!((t.row_mean(0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rectangle_stats() {
        let t = bool_table(&[&[1, 0, 1], &[0, 0, 1], &[1, 1, 1]]);
        let r = Rectangle::new(vec![0, 2], vec![0, 2], &t).unwrap();
        assert!((r.measure - 4.0 / 9.0).abs() < 1e-15);
        assert!((r.density - 1.0).abs() < 1e-15);
        assert!(Rectangle::new(vec![], vec![0], &t).is_err());
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        assert!(RectangleMixture::new(2, 2, vec![(0.5, vec![0], vec![0])], 0.5).is_ok());
        assert!(RectangleMixture::new(2, 2, vec![(0.5, vec![0], vec![0])], 0.0).is_err());
    }

    #[test]
    fn binary_format_round_trip() {
        let t = bool_table(&[&[1, 0, 1, 1], &[0, 1, 1, 0]]);
        let mut buf = Vec::new();
        write_table(&t, &mut buf).unwrap();
        let back = read_table(&buf[..]).unwrap();
        assert_eq!(back.values(), t.values());

        let real = AdjacencyFunction::new(2, 2, vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_table(&real, &mut buf).unwrap();
        let back = read_table(&buf[..]).unwrap();
        assert_eq!(back.values(), real.values());
    }

    #[test]
    fn csv_import() {
        let t = parse_table_csv("1,0\n0.5,1\n", "mem").unwrap();
        assert_eq!(t.values(), &[1.0, 0.0, 0.5, 1.0]);
        assert!(parse_table_csv("1,0\n1\n", "mem").is_err());
        assert!(parse_table_csv("2,0\n", "mem").is_err());
    }
}
