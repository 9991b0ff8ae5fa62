use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_layer_objective: Vec<f64>,
}

/// Accuracy and F1 scores from paired labels. Classes that never occur in
/// either sequence score an F1 of 0.
pub fn classification_report(truth: &[usize], predicted: &[usize], classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_f1: Vec<f64> = (0..classes)
        .map(|c| {
            let tp = confusion[c][c];
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (actual + predicted) as f64
            }
        })
        .collect();
    let macro_f1 = if classes == 0 {
        0.0
    } else {
        per_class_f1.iter().sum::<f64>() / classes as f64
    };
    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        macro_f1,
        per_class_f1,
        confusion,
        per_layer_objective: Vec::new(),
    }
}
