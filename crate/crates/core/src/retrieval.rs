//! Bag-of-visual-words image retrieval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Descriptor, DESCRIPTOR_DIM};
use crate::par::{self, Exec};

pub const DEFAULT_VOCAB_SIZE: usize = 1024;
pub const DEFAULT_SHORTLIST: usize = 25;
const MAX_ITERATIONS: usize = 50;

/// Visual words as k-means centers over local descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub centers: Vec<[f32; DESCRIPTOR_DIM]>,
}

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

impl Vocabulary {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Index of the nearest center; ties go to the lower index.
    pub fn quantize(&self, d: &[f32]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centers.iter().enumerate() {
            let v = sq(d, c);
            if v < best.1 {
                best = (i, v);
            }
        }
        best.0
    }
}

/// Seeded k-means++ initialization followed by at most 50 Lloyd iterations.
pub fn build_vocabulary(descriptors: &[Descriptor], k: usize, seed: u64, exec: Exec) -> Result<Vocabulary> {
    let n = descriptors.len();
    if k < 2 || n < k {
        return Err(Error::TooFewDescriptors { needed: k.max(2), got: n });
    }
    let data: Vec<&[f32]> = descriptors.iter().map(|d| &d.0[..]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers: Vec<[f32; DESCRIPTOR_DIM]> = Vec::with_capacity(k);
    centers.push(descriptors[rng.random_range(0..n)].0);
    let mut d2: Vec<f64> = data.iter().map(|x| sq(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::TooFewDescriptors { needed: k, got: centers.len() });
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // rounding can land on a zero-weight tail; step back to a positive one
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        let c = descriptors[pick].0;
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq(x, &c));
        }
        centers.push(c);
    }

    let mut vocab = Vocabulary { centers };
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let new_labels = par::map_slice(exec, &data, |x| vocab.quantize(x));
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        let mut sums = vec![[0.0f64; DESCRIPTOR_DIM]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x.iter()) {
                *s += *v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in vocab.centers[c].iter_mut().zip(&sums[c]) {
                    *dst = (s / counts[c] as f64) as f32;
                }
            }
        }
    }
    Ok(vocab)
}

/// tf-idf vectors of the indexed images.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub idf: Vec<f64>,
    pub ids: Vec<u64>,
    /// Unit-norm, or zero for images with no usable words.
    pub vectors: Vec<Vec<f64>>,
}

fn term_frequencies(vocab: &Vocabulary, descriptors: &[Descriptor], exec: Exec) -> Vec<f64> {
    let mut tf = vec![0.0; vocab.k()];
    let words = par::map_slice(exec, descriptors, |d| vocab.quantize(&d.0));
    for w in &words {
        tf[*w] += 1.0;
    }
    let total = words.len() as f64;
    if total > 0.0 {
        tf.iter_mut().for_each(|v| *v /= total);
    }
    tf
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl InvertedIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Unit tf-idf vector of a descriptor set under this index's weights.
    pub fn query_vector(&self, vocab: &Vocabulary, descriptors: &[Descriptor], exec: Exec) -> Vec<f64> {
        let tf = term_frequencies(vocab, descriptors, exec);
        normalized(tf.iter().zip(&self.idf).map(|(t, w)| t * w).collect())
    }
}

/// Build the index; `idf = max(0, ln(N / (1 + n_w)))`.
pub fn index_images(images: &[(u64, Vec<Descriptor>)], vocab: &Vocabulary, exec: Exec) -> InvertedIndex {
    let k = vocab.k();
    let tfs: Vec<Vec<f64>> = images.iter().map(|(_, d)| term_frequencies(vocab, d, exec)).collect();
    let n = images.len() as f64;
    let idf: Vec<f64> = (0..k)
        .map(|w| {
            let df = tfs.iter().filter(|tf| tf[w] > 0.0).count() as f64;
            (n / (1.0 + df)).ln().max(0.0)
        })
        .collect();
    let vectors = tfs.into_iter().map(|tf| normalized(tf.iter().zip(&idf).map(|(t, w)| t * w).collect())).collect();
    InvertedIndex { idf, ids: images.iter().map(|(id, _)| *id).collect(), vectors }
}

/// Up to `k` image ids ranked by cosine similarity, descending; ties by
/// ascending id.
pub fn shortlist(query: &[Descriptor], index: &InvertedIndex, vocab: &Vocabulary, k: usize, exec: Exec) -> Vec<(u64, f64)> {
    rank(&index.query_vector(vocab, query, exec), index, k)
}

/// Rank by cosine similarity against a precomputed query vector.
pub fn rank(qv: &[f64], index: &InvertedIndex, k: usize) -> Vec<(u64, f64)> {
    let mut scored: Vec<(u64, f64)> = index
        .ids
        .iter()
        .zip(&index.vectors)
        .map(|(&id, v)| (id, v.iter().zip(qv).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
