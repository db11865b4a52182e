//! Published results used as fixtures by the acceptance suite: confusion
//! matrices with the per-stage and overall metrics printed next to them.

use msdan::evaluation::ConfusionMatrix;
use msdan::StageLabel;

/// Per-stage metrics as printed, in percent.
#[derive(Clone, Copy, Debug)]
pub struct PrintedStage {
    pub stage: StageLabel,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Overall metrics as printed. Recall and accuracies in percent, kappa and
/// macro F1 as fractions.
#[derive(Clone, Copy, Debug)]
pub struct PrintedSummary {
    pub mean_recall: f64,
    pub mean_accuracy: f64,
    pub overall_accuracy: f64,
    pub kappa: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct PublishedResult {
    pub name: &'static str,
    /// Rows are true W, R, N1, N2, N3; columns predicted N3, N2, N1, R, W.
    pub display: [[u64; 5]; 5],
    pub stages: [PrintedStage; 5],
    pub summary: PrintedSummary,
}

impl PublishedResult {
    pub fn matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix::from_display(self.display)
    }
}

const fn st(stage: StageLabel, accuracy: f64, recall: f64, precision: f64, f1: f64) -> PrintedStage {
    PrintedStage { stage, accuracy, recall, precision, f1 }
}

use StageLabel::{N1, N2, N3, R, W};

pub fn published_results() -> Vec<PublishedResult> {
    vec![
        PublishedResult {
            name: "Sleep-EDF 5-fold",
            display: [
                [9, 2, 97, 58, 7792],
                [1, 111, 153, 1310, 20],
                [6, 71, 364, 123, 38],
                [185, 3198, 118, 91, 8],
                [1134, 144, 2, 2, 3],
            ],
            stages: [
                st(W, 98.44, 97.91, 99.12, 98.51),
                st(R, 96.28, 82.13, 82.70, 82.42),
                st(N1, 95.96, 60.36, 49.52, 54.41),
                st(N2, 95.15, 88.83, 90.65, 89.73),
                st(N3, 97.66, 88.25, 84.75, 86.47),
            ],
            summary: PrintedSummary {
                mean_recall: 83.50,
                mean_accuracy: 96.70,
                overall_accuracy: 91.74,
                kappa: 0.8723,
                macro_f1: 0.8231,
            },
        },
        PublishedResult {
            name: "Sleep-EDFx hold-out",
            display: [
                [12, 48, 1438, 363, 55132],
                [9, 665, 1006, 5343, 104],
                [83, 1055, 3041, 793, 653],
                [1321, 14299, 1918, 649, 86],
                [3072, 408, 19, 1, 2],
            ],
            stages: [
                st(W, 97.04, 96.73, 98.49, 97.60),
                st(R, 96.08, 74.97, 74.74, 74.85),
                st(N1, 92.39, 54.05, 40.97, 46.61),
                st(N2, 93.28, 78.25, 86.78, 82.30),
                st(N3, 97.97, 87.72, 68.27, 76.78),
            ],
            summary: PrintedSummary {
                mean_recall: 78.35,
                mean_accuracy: 95.35,
                overall_accuracy: 88.38,
                kappa: 0.7963,
                macro_f1: 0.7563,
            },
        },
        PublishedResult {
            name: "Sleep-EDFx 5-fold",
            display: [
                [97, 379, 7807, 1105, 280164],
                [25, 2196, 4078, 27578, 293],
                [93, 4477, 16384, 2802, 1401],
                [4752, 72114, 8543, 3258, 284],
                [16917, 2385, 104, 21, 23],
            ],
            stages: [
                st(W, 97.51, 96.76, 99.29, 98.01),
                st(R, 96.99, 80.71, 79.33, 80.01),
                st(N1, 93.59, 65.12, 44.38, 52.79),
                st(N2, 94.25, 81.07, 88.43, 84.59),
                st(N3, 98.36, 86.98, 77.30, 81.85),
            ],
            summary: PrintedSummary {
                mean_recall: 82.13,
                mean_accuracy: 96.14,
                overall_accuracy: 90.35,
                kappa: 0.8284,
                macro_f1: 0.7945,
            },
        },
    ]
}

/// Per-stage epoch counts of the 20-subject Sleep-EDF subset.
pub const SLEEP_EDF_COUNTS: [(StageLabel, u64); 5] = [(W, 8030), (N1, 604), (N2, 3621), (N3, 1299), (R, 1609)];

/// Stage proportions of the same subset, indexed by class code (N3, N2, N1, R, W).
pub const SLEEP_EDF_PROPORTIONS: [f64; 5] = [0.085, 0.238, 0.040, 0.106, 0.528];
