use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AudioError, MelSpectrogram};

const MAGIC: &[u8; 4] = b"SWKM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Mel frames per label when assigning units.
    pub label_hop: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            label_hop: 2,
        }
    }
}

/// `k × dims` centroids over log-mel frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<f32>,
    k: usize,
    dims: usize,
    hop: usize,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

/// Frame-level unit ids in `[0, k)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteLabelSeq {
    pub labels: Vec<u32>,
    pub k: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(x: &[f64], centroids: &[f64], dims: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks(dims).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[f64], dims: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, AudioError> {
    let n = points.len() / dims;
    let mut centroids = Vec::with_capacity(k * dims);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * dims..(first + 1) * dims]);
    let mut d2: Vec<f64> = points.chunks(dims).map(|p| sq_dist(p, &centroids[..dims])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(AudioError::TooFewPoints { points: n, k });
        }
        let mut r = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if r < d {
                pick = i;
                break;
            }
            r -= d;
            pick = i;
        }
        let c = &points[pick * dims..(pick + 1) * dims];
        centroids.extend_from_slice(c);
        for (dist, p) in d2.iter_mut().zip(points.chunks(dims)) {
            *dist = dist.min(sq_dist(p, c));
        }
    }
    Ok(centroids)
}

/// Lloyd's algorithm from a k-means++ start; deterministic for a fixed seed.
///
/// `features` is row-major `n × dims`. Empty clusters keep their previous
/// centroid so inertia never increases.
pub fn fit_kmeans(
    features: &[f32],
    dims: usize,
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(ClusterModel, FitReport), AudioError> {
    assert!(dims > 0 && features.len() % dims == 0);
    let n = features.len() / dims;
    if k == 0 || n < k {
        return Err(AudioError::TooFewPoints { points: n, k });
    }
    let points: Vec<f64> = features.iter().map(|&v| f64::from(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, dims, k, &mut rng)?;
    let mut assign = vec![0usize; n];
    let mut report = FitReport {
        iterations: 0,
        converged: false,
        inertia: Vec::new(),
    };
    for _ in 0..cfg.max_iter {
        let mut inertia = 0.0;
        for (a, p) in assign.iter_mut().zip(points.chunks(dims)) {
            let (j, d) = nearest(p, &centroids, dims);
            *a = j;
            inertia += d;
        }
        report.inertia.push(inertia);
        report.iterations += 1;

        let mut sums = vec![0.0; k * dims];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points.chunks(dims)) {
            counts[a] += 1;
            for (s, v) in sums[a * dims..(a + 1) * dims].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let c = &mut centroids[j * dims..(j + 1) * dims];
            let mut moved = 0.0;
            for (cv, s) in c.iter_mut().zip(&sums[j * dims..(j + 1) * dims]) {
                let nv = s / counts[j] as f64;
                moved += (nv - *cv) * (nv - *cv);
                *cv = nv;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < cfg.tol {
            report.converged = true;
            break;
        }
    }
    let model = ClusterModel {
        centroids: centroids.iter().map(|&v| v as f32).collect(),
        k,
        dims,
        hop: cfg.label_hop.max(1),
    };
    Ok((model, report))
}

impl ClusterModel {
    pub fn new(centroids: Vec<f32>, k: usize, dims: usize, hop: usize) -> Self {
        assert_eq!(centroids.len(), k * dims);
        Self { centroids, k, dims, hop }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Mel frames per label.
    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dims..(j + 1) * self.dims]
    }

    /// Nearest centroid for one feature vector (ties → lowest index).
    pub fn assign(&self, x: &[f32]) -> u32 {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let c: Vec<f64> = self.centroids.iter().map(|&v| f64::from(v)).collect();
        nearest(&x, &c, self.dims).0 as u32
    }

    /// Sum of squared distances to the nearest centroid.
    pub fn inertia(&self, features: &[f32]) -> f64 {
        let c: Vec<f64> = self.centroids.iter().map(|&v| f64::from(v)).collect();
        features
            .chunks(self.dims)
            .map(|p| {
                let p: Vec<f64> = p.iter().map(|&v| f64::from(v)).collect();
                nearest(&p, &c, self.dims).1
            })
            .sum()
    }

    /// Header (`SWKM`, version, k, dims, hop as little-endian u32) followed
    /// by row-major little-endian f32 centroids.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.k as u32, self.dims as u32, self.hop as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in &self.centroids {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AudioError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AudioError::BadModel("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [version, k, dims, hop] = header;
        if version != VERSION {
            return Err(AudioError::BadModel(format!("unsupported version {version}")));
        }
        if k == 0 || dims == 0 || hop == 0 {
            return Err(AudioError::BadModel("zero-sized header field".into()));
        }
        let (k, dims) = (k as usize, dims as usize);
        let mut centroids = Vec::with_capacity(k * dims);
        for _ in 0..k * dims {
            r.read_exact(&mut word)?;
            let v = f32::from_le_bytes(word);
            if !v.is_finite() {
                return Err(AudioError::BadModel("non-finite centroid".into()));
            }
            centroids.push(v);
        }
        Ok(Self::new(centroids, k, dims, hop as usize))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), AudioError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AudioError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Units for every `hop`-th mel frame.
pub fn assign_labels(model: &ClusterModel, mel: &MelSpectrogram) -> Result<DiscreteLabelSeq, AudioError> {
    if mel.n_mels() != model.dims {
        return Err(AudioError::DimMismatch {
            expected: model.dims,
            found: mel.n_mels(),
        });
    }
    let labels = (0..mel.n_frames())
        .step_by(model.hop)
        .map(|t| model.assign(mel.frame(t)))
        .collect();
    Ok(DiscreteLabelSeq { labels, k: model.k })
}

/// Fit a label sequence to `frames` encoder pre-net outputs: truncate when
/// longer, repeat the final label when shorter.
pub fn align_labels(seq: &DiscreteLabelSeq, frames: usize) -> DiscreteLabelSeq {
    let mut labels: Vec<u32> = seq.labels.iter().copied().take(frames).collect();
    if let Some(&last) = labels.last() {
        labels.resize(frames, last);
    }
    DiscreteLabelSeq { labels, k: seq.k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, seed: u64) -> (Vec<f32>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers = [[-5.0, 0.0, 2.0], [5.0, 1.0, -2.0]];
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2 * n_per {
            let c = i % 2;
            for d in 0..3 {
                data.push((centers[c][d] + noise.sample(&mut rng)) as f32);
            }
            truth.push(c);
        }
        (data, truth)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (data, _) = blobs(20, 1);
        let (m, _) = fit_kmeans(&data, 3, 1, 0, &KMeansConfig::default()).unwrap();
        for d in 0..3 {
            let mean = data.iter().skip(d).step_by(3).map(|&v| f64::from(v)).sum::<f64>() / 40.0;
            assert!((f64::from(m.centroid(0)[d]) - mean).abs() < 1e-5);
        }
    }

    #[test]
    fn separates_two_blobs() {
        let (data, truth) = blobs(50, 2);
        let (m, _) = fit_kmeans(&data, 3, 2, 7, &KMeansConfig::default()).unwrap();
        // brute-force nearest-centroid oracle
        let labels: Vec<usize> = data
            .chunks(3)
            .map(|p| {
                let d: Vec<f64> = (0..2)
                    .map(|j| p.iter().zip(m.centroid(j)).map(|(a, b)| f64::from(a - b).powi(2)).sum())
                    .collect();
                usize::from(d[1] < d[0])
            })
            .collect();
        let flip = labels[0] != truth[0];
        for (l, t) in labels.iter().zip(&truth) {
            assert_eq!(*l != *t, flip);
        }
    }

    #[test]
    fn k_equals_n_is_exact() {
        let (data, _) = blobs(5, 3);
        let (m, report) = fit_kmeans(&data, 3, 10, 1, &KMeansConfig::default()).unwrap();
        assert_eq!(m.inertia(&data), 0.0);
        assert_eq!(*report.inertia.last().unwrap(), 0.0);
    }

    #[test]
    fn too_few_points() {
        let data = vec![0.0f32; 6];
        assert!(matches!(
            fit_kmeans(&data, 3, 3, 0, &KMeansConfig::default()),
            Err(AudioError::TooFewPoints { points: 2, k: 3 })
        ));
        // duplicates leave too few distinct points
        assert!(matches!(
            fit_kmeans(&data, 3, 2, 0, &KMeansConfig::default()),
            Err(AudioError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn inertia_never_increases_and_fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (m1, r1) = fit_kmeans(&data, 4, 8, 3, &KMeansConfig::default()).unwrap();
        let (m2, _) = fit_kmeans(&data, 4, 8, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(m1, m2);
        for w in r1.inertia.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        for i in 0..8 {
            for j in 0..i {
                let d: f32 = m1.centroid(i).iter().zip(m1.centroid(j)).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-9);
            }
        }
    }

    fn toy_model() -> ClusterModel {
        ClusterModel::new(vec![0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 5.0, 5.0], 4, 2, 1)
    }

    #[test]
    fn labels_from_centroids_and_ties() {
        let m = toy_model();
        let frames: Vec<f32> = (0..5).flat_map(|_| [5.0f32, 5.0]).collect();
        let mel = MelSpectrogram::from_frames(frames, 2, 0.01, 0.025);
        assert_eq!(assign_labels(&m, &mel).unwrap().labels, vec![3; 5]);
        // equidistant between c0 and c1
        assert_eq!(m.assign(&[1.0, 0.0]), 0);
    }

    #[test]
    fn labels_match_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = ClusterModel::new((0..40).map(|_| rng.gen_range(-2.0..2.0)).collect(), 10, 4, 1);
        let frames: Vec<f32> = (0..400).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mel = MelSpectrogram::from_frames(frames.clone(), 4, 0.01, 0.025);
        let labels = assign_labels(&m, &mel).unwrap().labels;
        for (t, f) in frames.chunks(4).enumerate() {
            let mut best = (0, f64::INFINITY);
            for j in 0..10 {
                let d: f64 = f.iter().zip(m.centroid(j)).map(|(a, b)| f64::from(a - b).powi(2)).sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            assert_eq!(labels[t] as usize, best.0);
        }
    }

    #[test]
    fn decimation_and_dim_check() {
        let m = ClusterModel::new(vec![0.0, 1.0], 2, 1, 2);
        let mel = MelSpectrogram::from_frames(vec![0.0, 1.0, 1.0, 0.0, 1.0], 1, 0.01, 0.025);
        assert_eq!(assign_labels(&m, &mel).unwrap().labels, vec![0, 1, 1]);
        let wide = MelSpectrogram::from_frames(vec![0.0; 4], 2, 0.01, 0.025);
        assert!(matches!(assign_labels(&m, &wide), Err(AudioError::DimMismatch { expected: 1, found: 2 })));
    }

    #[test]
    fn alignment_truncates_or_pads() {
        let seq = DiscreteLabelSeq { labels: vec![1, 2, 3], k: 4 };
        assert_eq!(align_labels(&seq, 2).labels, vec![1, 2]);
        assert_eq!(align_labels(&seq, 5).labels, vec![1, 2, 3, 3, 3]);
    }

    #[test]
    fn binary_format_round_trip() {
        let m = toy_model();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SWKM");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4);
        assert_eq!(buf.len(), 4 + 16 + 8 * 4);
        assert_eq!(ClusterModel::read_from(&buf[..]).unwrap(), m);
        buf[0] = b'X';
        assert!(ClusterModel::read_from(&buf[..]).is_err());
    }
}
