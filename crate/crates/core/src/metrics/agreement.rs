use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Hubert–Arabie adjusted Rand index of two labelings of the same items.
///
/// The pair counts are combined in exact integer arithmetic and divided
/// once, so the result is the correctly rounded value of the rational ARI.
pub fn adjusted_rand_index<L: Ord + Clone>(a: &[L], b: &[L]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "ARI needs at least two items".into(),
        ));
    }
    let table = ContingencyTable::from_labels(a, b);
    let index: i128 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_a: i128 = table.row_totals().into_iter().map(pairs).sum();
    let sum_b: i128 = table.col_totals().into_iter().map(pairs).sum();
    let total = pairs(a.len() as u64);
    // ARI = (index - ab/N) / ((a+b)/2 - ab/N), scaled by 2N
    let num = 2 * total * index - 2 * sum_a * sum_b;
    let den = total * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if den == 0 {
        // both partitions are trivial in the same way, hence identical
        return Ok(1.0);
    }
    Ok(ratio(num, den))
}

/// `num / den` for integers whose magnitude may exceed 2^53.
fn ratio(num: i128, den: i128) -> f64 {
    let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
    let (num, den) = (num / g, den / g);
    if num.unsigned_abs() < (1 << 53) && den.unsigned_abs() < (1 << 53) {
        num as f64 / den as f64
    } else {
        let q = num / den;
        q as f64 + (num - q * den) as f64 / den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Cross-tabulation of two partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl ContingencyTable {
    pub fn new(
        counts: Vec<Vec<u64>>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument(
                "contingency counts must form a non-empty rectangle".into(),
            ));
        }
        if row_labels.len() != counts.len() || col_labels.len() != cols {
            return Err(Error::InvalidArgument(
                "label counts do not match the table".into(),
            ));
        }
        Ok(Self {
            counts,
            row_labels,
            col_labels,
        })
    }

    /// Unlabelled table; rows and columns are named 1, 2, ….
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let rows = (1..=counts.len()).map(|i| i.to_string()).collect();
        let cols = (1..=counts.first().map_or(0, Vec::len))
            .map(|i| i.to_string())
            .collect();
        Self::new(counts, rows, cols)
    }

    /// Rows and columns follow the sorted distinct labels.
    pub fn from_labels<L: Ord + Clone>(a: &[L], b: &[L]) -> Self {
        let index = |labels: &[L]| -> BTreeMap<L, usize> {
            let mut m: BTreeMap<L, usize> = labels.iter().map(|l| (l.clone(), 0)).collect();
            for (i, v) in m.values_mut().enumerate() {
                *v = i;
            }
            m
        };
        let (ra, rb) = (index(a), index(b));
        let mut counts = vec![vec![0u64; rb.len()]; ra.len()];
        for (x, y) in a.iter().zip(b) {
            counts[ra[x]][rb[y]] += 1;
        }
        Self {
            counts,
            row_labels: (1..=ra.len()).map(|i| i.to_string()).collect(),
            col_labels: (1..=rb.len()).map(|i| i.to_string()).collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols)
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson's test of independence, without continuity correction.
pub fn chi_squared_independence(table: &ContingencyTable) -> Result<ChiSquaredTest> {
    let rows = table.row_totals();
    let cols = table.col_totals();
    if rows.iter().chain(&cols).any(|&t| t == 0) {
        return Err(Error::InvalidArgument(
            "every row and column total must be positive".into(),
        ));
    }
    let df = (rows.len() - 1) * (cols.len() - 1);
    if df == 0 {
        return Err(Error::InvalidArgument(
            "a single row or column leaves zero degrees of freedom".into(),
        ));
    }
    let n = table.total() as f64;
    let mut statistic = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &o) in row.iter().enumerate() {
            let e = rows[r] as f64 * cols[c] as f64 / n;
            statistic += (o as f64 - e).powi(2) / e;
        }
    }
    let p_value = if statistic > 0.0 {
        gamma_ur(df as f64 / 2.0, statistic / 2.0)
    } else {
        1.0
    };
    Ok(ChiSquaredTest {
        statistic,
        df,
        p_value,
    })
}
