//! Class co-occurrence statistics of the ground truth.
//!
//! Entry `(i, j)` is the expected number of class-`j` instances in an image
//! that contains at least one class-`i` instance, minus one on the diagonal
//! (the observed instance itself).

use std::fmt::Write as _;

use crate::ap::csv_field;
use crate::dataset::{CategoryTable, ImageRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    pub num_classes: usize,
    /// Row-major `num_classes x num_classes`; rows of unseen classes are `None`.
    pub entries: Vec<Option<f64>>,
    /// Number of images containing each class.
    pub support: Vec<usize>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.num_classes + j]
    }

    /// Header row of class names; missing entries are left empty.
    pub fn to_csv(&self, table: &CategoryTable) -> String {
        let mut s = String::from("observed");
        for j in 0..self.num_classes {
            let _ = write!(s, ",{}", csv_field(table.name(j)));
        }
        s.push('\n');
        for i in 0..self.num_classes {
            s.push_str(&csv_field(table.name(i)));
            for j in 0..self.num_classes {
                match self.get(i, j) {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub fn cooccurrence_matrix(images: &[ImageRecord], num_classes: usize) -> CooccurrenceMatrix {
    let k = num_classes;
    let mut sums = vec![0usize; k * k];
    let mut support = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for img in images {
        counts.iter_mut().for_each(|c| *c = 0);
        for g in &img.gts {
            counts[g.class_idx] += 1;
        }
        for i in (0..k).filter(|&i| counts[i] > 0) {
            support[i] += 1;
            for j in 0..k {
                sums[i * k + j] += counts[j];
            }
        }
    }
    let entries = (0..k * k)
        .map(|idx| {
            let (i, j) = (idx / k, idx % k);
            (support[i] > 0).then(|| {
                let mean = sums[idx] as f64 / support[i] as f64;
                if i == j {
                    mean - 1.0
                } else {
                    mean
                }
            })
        })
        .collect();
    CooccurrenceMatrix {
        num_classes: k,
        entries,
        support,
    }
}
