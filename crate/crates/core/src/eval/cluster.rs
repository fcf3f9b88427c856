//! Average-linkage agglomerative clustering of similarity-matrix rows.

use serde::{Deserialize, Serialize};

use super::ssim::SimilarityMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Members of the two merged clusters, each sorted by name.
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// Average Euclidean distance between the members of `left` and `right`.
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linkage {
    pub merges: Vec<Merge>,
}

impl Linkage {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,left,right,height,size\n");
        for (i, m) in self.merges.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.9},{}\n",
                i + 1,
                m.left.join("+"),
                m.right.join("+"),
                m.height,
                m.size
            ));
        }
        out
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// UPGMA over the matrix rows. Among equally distant pairs the one whose
/// (smaller, larger) leading member names sort first is merged.
pub fn cluster_methods(matrix: &SimilarityMatrix) -> Result<Linkage> {
    let n = matrix.methods.len();
    if n < 2 {
        return Err(Error::data("clustering needs at least two methods"));
    }
    if matrix.values.len() != n || matrix.values.iter().any(|r| r.len() != n) {
        return Err(Error::dim("similarity matrix must be square"));
    }
    for i in 0..n {
        for j in 0..n {
            if (matrix.values[i][j] - matrix.values[j][i]).abs() > 1e-12 {
                return Err(Error::data("similarity matrix is not symmetric"));
            }
        }
    }

    // Active clusters: sorted member names and pairwise distances (Lance-Williams updates).
    let mut clusters: Vec<Option<Vec<String>>> = matrix.methods.iter().map(|m| Some(vec![m.clone()])).collect();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            dist[i][j] = euclidean(&matrix.values[i], &matrix.values[j]);
        }
    }
    let mut merges = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        let mut best: Option<(f64, (&str, &str), usize, usize)> = None;
        for i in 0..n {
            let Some(ci) = &clusters[i] else { continue };
            for j in i + 1..n {
                let Some(cj) = &clusters[j] else { continue };
                let d = dist[i][j];
                let (a, b) = (ci[0].as_str(), cj[0].as_str());
                let key = if a <= b { (a, b) } else { (b, a) };
                let better = match &best {
                    None => true,
                    Some((bd, bk, _, _)) => d < *bd || (d == *bd && key < *bk),
                };
                if better {
                    best = Some((d, key, i, j));
                }
            }
        }
        let (height, _, i, j) = best.expect("two active clusters");
        let ci = clusters[i].take().unwrap();
        let cj = clusters[j].take().unwrap();
        let (ni, nj) = (ci.len() as f64, cj.len() as f64);
        for k in 0..n {
            if clusters[k].is_some() {
                let d = (ni * dist[i][k] + nj * dist[j][k]) / (ni + nj);
                dist[i][k] = d;
                dist[k][i] = d;
            }
        }
        let (left, right) = if ci[0] <= cj[0] { (ci, cj) } else { (cj, ci) };
        let mut members = left.clone();
        members.extend(right.iter().cloned());
        members.sort();
        merges.push(Merge {
            size: members.len(),
            left,
            right,
            height,
        });
        clusters[i] = Some(members);
    }
    Ok(Linkage { merges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(names: &[&str], values: Vec<Vec<f64>>) -> SimilarityMatrix {
        SimilarityMatrix {
            methods: names.iter().map(|s| s.to_string()).collect(),
            values,
        }
    }

    #[test]
    fn two_methods_merge_once_at_their_distance() {
        let m = matrix(&["a", "b"], vec![vec![1.0, 0.4], vec![0.4, 1.0]]);
        let l = cluster_methods(&m).unwrap();
        assert_eq!(l.merges.len(), 1);
        let expected = (2.0f64 * 0.6 * 0.6).sqrt();
        assert!((l.merges[0].height - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_merge_first() {
        let m = matrix(
            &["c", "a", "b"],
            vec![vec![1.0, 0.2, 0.2], vec![0.2, 1.0, 1.0], vec![0.2, 1.0, 1.0]],
        );
        let l = cluster_methods(&m).unwrap();
        assert_eq!(l.merges[0].left, vec!["a"]);
        assert_eq!(l.merges[0].right, vec!["b"]);
        assert_eq!(l.merges[0].height, 0.0);
        assert_eq!(l.merges[1].size, 3);
    }

    #[test]
    fn rejects_single_method() {
        let m = matrix(&["a"], vec![vec![1.0]]);
        assert!(cluster_methods(&m).is_err());
    }
}
