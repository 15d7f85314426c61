//! Per-class precision, sensitivity and F1 from a confusion matrix given as
//! rows of counts (truth by prediction).
//!
//! cargo run --example metrics_table -- "13,2" "0,220"

use skelfall::metrics::{metrics, ConfusionMatrix};

fn main() -> skelfall::Result<()> {
    let mut rows: Vec<Vec<u64>> = std::env::args()
        .skip(1)
        .map(|row| row.split(',').map(|x| x.trim().parse().expect("count")).collect())
        .collect();
    if rows.is_empty() {
        rows = vec![vec![13, 2], vec![0, 220]];
    }
    let names: Vec<String> = (0..rows.len()).map(|i| format!("class {i}")).collect();
    let report = metrics(&ConfusionMatrix::from_counts(rows)?, &names)?;
    print!("{}", report.to_table());
    Ok(())
}
