use super::table::IndicatorTable;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Evaluation protocol for assigning rows to train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    /// Cross-city prediction restricted to one year, split 3:1:1.
    CcpSingleYear { year: i32 },
    /// Cross-city prediction over all years, split 3:1:1.
    CcpMixedYear,
    /// Cross-time prediction: the final year is the test set, earlier
    /// years split 3:1 into train and validation.
    Ctp,
}

impl Protocol {
    pub fn label(&self) -> String {
        match self {
            Protocol::CcpSingleYear { year } => format!("ccp_single_year({year})"),
            Protocol::CcpMixedYear => "ccp_mixed_year".into(),
            Protocol::Ctp => "ctp".into(),
        }
    }
}

/// Deterministic assignment of row indices to the three splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Build a split plan for `table` under `protocol`, shuffled by `seed`.
pub fn make_split(table: &IndicatorTable, protocol: Protocol, seed: u64) -> Result<SplitPlan> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = match protocol {
        Protocol::CcpSingleYear { year } => {
            let eligible: Vec<usize> = (0..table.len())
                .filter(|&i| table.rows()[i].year == year)
                .collect();
            if eligible.is_empty() {
                return Err(Error::Protocol(format!("no rows for year {year}")));
            }
            three_way(eligible, &mut rng)
        }
        Protocol::CcpMixedYear => {
            if table.is_empty() {
                return Err(Error::Protocol("empty table".into()));
            }
            let eligible: Vec<usize> = (0..table.len()).collect();
            three_way(eligible, &mut rng)
        }
        Protocol::Ctp => {
            let years = table.years();
            if years.len() < 2 {
                return Err(Error::Protocol(format!(
                    "cross-time prediction needs at least 2 distinct years, found {}",
                    years.len()
                )));
            }
            let last = *years.last().expect("non-empty");
            let test: Vec<usize> = (0..table.len())
                .filter(|&i| table.rows()[i].year == last)
                .collect();
            let mut earlier: Vec<usize> = (0..table.len())
                .filter(|&i| table.rows()[i].year != last)
                .collect();
            earlier.shuffle(&mut rng);
            let n = earlier.len();
            let n_val = (n as f64 * 0.25).round() as usize;
            let val = earlier.split_off(n - n_val);
            (earlier, val, test)
        }
    };
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        protocol,
        seed,
        train,
        val,
        test,
    })
}

/// Shuffle and partition 3:1:1 (±1 row from rounding).
fn three_way(mut indices: Vec<usize>, rng: &mut ChaCha20Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    indices.shuffle(rng);
    let n = indices.len();
    let n_test = (n as f64 * 0.2).round() as usize;
    let n_val = (n as f64 * 0.2).round() as usize;
    let test = indices.split_off(n - n_test);
    let val = indices.split_off(indices.len() - n_val);
    (indices, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::table::{IndicatorType, SampleRow, SchemaColumn};

    fn table_with_years(per_year: &[(i32, usize)]) -> IndicatorTable {
        let schema = vec![
            SchemaColumn { name: "p".into(), itype: IndicatorType::PJ },
            SchemaColumn { name: "d".into(), itype: IndicatorType::DJ },
            SchemaColumn { name: "e".into(), itype: IndicatorType::JE },
            SchemaColumn { name: "c".into(), itype: IndicatorType::JC },
        ];
        let mut rows = Vec::new();
        for &(year, count) in per_year {
            for c in 0..count {
                rows.push(SampleRow {
                    city_id: format!("C{c}"),
                    year,
                    indicators: vec![0.0; 4],
                    fdi: 0.0,
                });
            }
        }
        IndicatorTable::new(schema, rows).unwrap()
    }

    #[test]
    fn mixed_year_ten_rows_split_6_2_2() {
        let table = table_with_years(&[(2016, 10)]);
        let plan = make_split(&table, Protocol::CcpMixedYear, 3).unwrap();
        assert_eq!(plan.train.len(), 6);
        assert_eq!(plan.val.len(), 2);
        assert_eq!(plan.test.len(), 2);
    }

    #[test]
    fn ctp_tests_exactly_the_final_year() {
        let table = table_with_years(&[(2016, 5), (2017, 5), (2018, 5), (2019, 7)]);
        let plan = make_split(&table, Protocol::Ctp, 0).unwrap();
        assert_eq!(plan.test.len(), 7);
        for &i in &plan.test {
            assert_eq!(table.rows()[i].year, 2019);
        }
        for &i in plan.train.iter().chain(&plan.val) {
            assert_ne!(table.rows()[i].year, 2019);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_lists() {
        let table = table_with_years(&[(2016, 13), (2017, 9)]);
        let a = make_split(&table, Protocol::CcpMixedYear, 99).unwrap();
        let b = make_split(&table, Protocol::CcpMixedYear, 99).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn single_year_uses_only_that_year() {
        let table = table_with_years(&[(2016, 8), (2017, 12)]);
        let plan = make_split(&table, Protocol::CcpSingleYear { year: 2017 }, 1).unwrap();
        assert_eq!(plan.total(), 12);
        for &i in plan.train.iter().chain(&plan.val).chain(&plan.test) {
            assert_eq!(table.rows()[i].year, 2017);
        }
    }

    #[test]
    fn infeasible_protocols_error() {
        let table = table_with_years(&[(2016, 4)]);
        assert!(make_split(&table, Protocol::Ctp, 0).is_err());
        assert!(make_split(&table, Protocol::CcpSingleYear { year: 1999 }, 0).is_err());
    }
}
