//! k-nearest neighbours over the stored training set.

use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseDistance,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Manhattan, Metric::Cosine];

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => crate::matrix::sq_dist(a, b).sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Cosine => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot(a, b) / (na * nb)).max(0.0)
                }
            }
        }
    }
}

impl Weighting {
    pub const ALL: [Weighting; 2] = [Weighting::Uniform, Weighting::InverseDistance];
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub metric: Metric,
    pub weighting: Weighting,
    pub n_classes: usize,
    pub x: Matrix,
    pub y: Vec<usize>,
}

pub fn train_knn(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    k: usize,
    metric: Metric,
    weighting: Weighting,
) -> Result<KnnModel> {
    if k == 0 {
        return Err(Error::invalid("knn k must be at least 1"));
    }
    if k > x.rows() {
        return Err(Error::invalid(format!("knn k = {k} exceeds {} training rows", x.rows())));
    }
    Ok(KnnModel {
        k,
        metric,
        weighting,
        n_classes,
        x: x.clone(),
        y: y.to_vec(),
    })
}

impl KnnModel {
    /// The `k` nearest training rows as `(distance, index)`, closest first,
    /// equal distances ordered by index.
    pub fn neighbours(&self, q: &[f64]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = (0..self.x.rows())
            .map(|i| (self.metric.distance(q, self.x.row(i)), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d
    }

    pub fn scores(&self, q: &[f64]) -> Vec<f64> {
        let nb = self.neighbours(q);
        let mut s = vec![0.0; self.n_classes];
        match self.weighting {
            Weighting::Uniform => nb.iter().for_each(|&(_, i)| s[self.y[i]] += 1.0),
            Weighting::InverseDistance => {
                // exact matches dominate: only they vote when present
                if nb.iter().any(|&(d, _)| d <= 1e-12) {
                    nb.iter()
                        .filter(|&&(d, _)| d <= 1e-12)
                        .for_each(|&(_, i)| s[self.y[i]] += 1.0);
                } else {
                    nb.iter().for_each(|&(d, i)| s[self.y[i]] += 1.0 / d);
                }
            }
        }
        let total: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= total);
        s
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.usize(self.k);
        w.u8(self.metric as u8);
        w.u8(self.weighting as u8);
        w.usize(self.n_classes);
        w.usize(self.x.rows());
        w.usize(self.x.cols());
        w.f64s(self.x.data());
        w.usizes(&self.y);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let k = r.usize()?;
        let metric = match r.u8()? {
            0 => Metric::Euclidean,
            1 => Metric::Manhattan,
            2 => Metric::Cosine,
            m => return Err(Error::ModelDecode(format!("bad knn metric {m}"))),
        };
        let weighting = match r.u8()? {
            0 => Weighting::Uniform,
            1 => Weighting::InverseDistance,
            m => return Err(Error::ModelDecode(format!("bad knn weighting {m}"))),
        };
        let n_classes = r.usize()?;
        let rows = r.usize()?;
        let cols = r.usize()?;
        let data = r.f64s()?;
        let y = r.usizes()?;
        if data.len() != rows * cols || y.len() != rows || k == 0 || k > rows || y.iter().any(|&c| c >= n_classes) {
            return Err(Error::ModelDecode("inconsistent knn block".into()));
        }
        Ok(Self {
            k,
            metric,
            weighting,
            n_classes,
            x: Matrix::from_vec(rows, cols, data),
            y,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> (Matrix, Vec<usize>) {
        (
            Matrix::from_rows(&[[0.0], [1.0], [2.0], [10.0], [11.0]]),
            vec![0, 0, 0, 1, 1],
        )
    }

    #[test]
    fn k1_recalls_training_points() {
        let (x, y) = line();
        let m = train_knn(&x, &y, 2, 1, Metric::Euclidean, Weighting::Uniform).unwrap();
        for i in 0..5 {
            let s = m.scores(x.row(i));
            assert_eq!(s[y[i]], 1.0);
        }
    }

    #[test]
    fn k_equal_rows_gives_priors() {
        let (x, y) = line();
        let m = train_knn(&x, &y, 2, 5, Metric::Manhattan, Weighting::Uniform).unwrap();
        assert_eq!(m.scores(&[-100.0]), vec![0.6, 0.4]);
        assert_eq!(m.scores(&[100.0]), vec![0.6, 0.4]);
    }

    #[test]
    fn hand_enumerated_query_between_clusters() {
        let (x, y) = line();
        let m = train_knn(&x, &y, 2, 3, Metric::Euclidean, Weighting::Uniform).unwrap();
        // from 6.5: distances 6.5, 5.5, 4.5, 3.5, 4.5 -> rows 3, 2, 4 (tie 2 vs 4 by index)
        let nb: Vec<usize> = m.neighbours(&[6.5]).into_iter().map(|p| p.1).collect();
        assert_eq!(nb, vec![3, 2, 4]);
        let s = m.scores(&[6.5]);
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_distance_and_exact_hits() {
        let (x, y) = line();
        let m = train_knn(&x, &y, 2, 2, Metric::Euclidean, Weighting::InverseDistance).unwrap();
        // neighbours of 3.0: row 2 (d=1) and row 1 (d=2), both class 0
        assert_eq!(m.scores(&[3.0]), vec![1.0, 0.0]);
        assert_eq!(m.scores(&[10.0]), vec![0.0, 1.0]);
        // k=3 from 6.0: rows 2 and 3 at 4, then row 1 beats row 4 at 5 by index
        let m3 = train_knn(&x, &y, 2, 3, Metric::Euclidean, Weighting::InverseDistance).unwrap();
        let s = m3.scores(&[6.0]);
        assert!((s[1] - 0.25 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn cosine_ignores_scale() {
        assert!(Metric::Cosine.distance(&[1.0, 1.0], &[3.0, 3.0]) < 1e-12);
        assert!((Metric::Cosine.distance(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-12);
        assert_eq!(Metric::Cosine.distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn bad_k_is_rejected() {
        let (x, y) = line();
        assert!(train_knn(&x, &y, 2, 0, Metric::Euclidean, Weighting::Uniform).is_err());
        assert!(train_knn(&x, &y, 2, 6, Metric::Euclidean, Weighting::Uniform).is_err());
    }
}
