//! Confusion-matrix metrics on a worked example: Cohen's kappa, accuracy,
//! and per-class F1.

use viptt::metrics::{accuracy, cohen_kappa, confusion_matrix, per_class_f1};

fn main() {
    let y_true = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let y_pred = [0, 0, 0, 0, 1, 0, 0, 1, 1, 1];
    let cm = confusion_matrix(&y_true, &y_pred, 2).unwrap();
    // counts: [[4,1],[2,3]] -> p0 = 0.7, pe = 0.5, kappa = 0.4
    let k = cohen_kappa(&cm).unwrap();
    println!("p0 {:.3} pe {:.3} kappa {:.3}", k.p0, k.pe, k.kappa);
    println!("accuracy {:.3}", accuracy(&cm));
    println!("per-class F1 {:?}", per_class_f1(&cm));
}
