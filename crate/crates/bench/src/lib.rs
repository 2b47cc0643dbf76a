//! Synthetic inputs shared by the benchmarks.

use fairvic::{Dataset, Matrix};

/// `rows × features` dataset with a deterministic pattern; column 0 is the
/// binary protected attribute and the label depends on columns 0 and 1.
pub fn synthetic_dataset(rows: usize, features: usize) -> Dataset {
    assert!(features >= 2, "need a protected column and a signal column");
    let mut data = Vec::with_capacity(rows * features);
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let group = (i % 3 != 0) as u8 as f64;
        data.push(group);
        for j in 1..features {
            let x = ((i * 31 + j * 17) % 97) as f64 / 48.5 - 1.0;
            data.push(x);
        }
        let signal = data[i * features + 1] + 0.3 * group;
        labels.push(if signal > 0.0 { 1.0 } else { 0.0 });
    }
    let names = (0..features).map(|j| format!("f{j}")).collect();
    let features_m = Matrix::from_vec(rows, features, data).expect("consistent shape");
    Dataset::new("synthetic", features_m, labels, 0, names).expect("binary labels and groups")
}
