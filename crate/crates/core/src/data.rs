//! Synthetic corpus generation with exact word alignments, the tensor
//! container file format used for features and model checkpoints, and corpus
//! directory IO.
//!
//! Container layout: an 8-byte little-endian manifest length, the JSON
//! manifest, then a flat little-endian f32 payload. The manifest carries
//! `format_version`, optional `meta` JSON, and per-tensor name/shape/dtype/
//! byte_offset entries.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Params, Tensor};
use crate::scout::WordSpan;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Write named tensors (f32, little endian) plus optional JSON metadata.
pub fn write_container(path: &Path, params: &Params, meta: serde_json::Value) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    let mut payload = Vec::new();
    for (name, tensor) in params.iter() {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            dtype: "f32".to_string(),
            byte_offset: offset,
        });
        for &v in tensor.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += tensor.numel() as u64 * 4;
    }
    let manifest = Manifest { format_version: FORMAT_VERSION, meta, tensors: entries };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    file.write_all(&payload)?;
    Ok(())
}

/// Read a container back; bit-exact inverse of [`write_container`] at f32
/// precision. Rejects unknown versions, unknown dtypes, overlapping offsets,
/// and payload length mismatches.
pub fn read_container(path: &Path) -> Result<(Params, serde_json::Value)> {
    let mut file = fs::File::open(path)?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::data(format!("{}: truncated header", path.display())))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)
        .map_err(|_| Error::data(format!("{}: truncated manifest", path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unknown format_version {}",
            path.display(),
            manifest.format_version
        )));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;

    let mut regions: Vec<(u64, u64)> = Vec::with_capacity(manifest.tensors.len());
    let mut total = 0u64;
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(Error::data(format!(
                "{}: unknown dtype `{}` for `{}`",
                path.display(),
                entry.dtype,
                entry.name
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let bytes = numel as u64 * 4;
        regions.push((entry.byte_offset, entry.byte_offset + bytes));
        total += bytes;
    }
    regions.sort_unstable();
    for w in regions.windows(2) {
        if w[0].1 > w[1].0 {
            return Err(Error::data(format!("{}: overlapping tensor regions", path.display())));
        }
    }
    if total != payload.len() as u64 {
        return Err(Error::data(format!(
            "{}: payload is {} bytes, manifest needs {total}",
            path.display(),
            payload.len()
        )));
    }

    let mut params = Params::new();
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let start = entry.byte_offset as usize;
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let b = &payload[start + 4 * i..start + 4 * i + 4];
            data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((params, manifest.meta))
}

/// Parameters of the synthetic corpus. Each word type maps to a fixed random
/// feature template; utterances are concatenated templates with optional
/// silence plus Gaussian noise, so the word alignments are exact by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub vocab_size: usize,
    /// Template length range in 10 ms frames, inclusive.
    pub template_frames: (usize, usize),
    pub feat_dim: usize,
    pub noise_std: f64,
    /// Silence length range between words, inclusive, may start at 0.
    pub silence_frames: (usize, usize),
    /// Words per utterance, inclusive.
    pub utterance_words: (usize, usize),
    pub num_train: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            vocab_size: 12,
            template_frames: (24, 40),
            feat_dim: 8,
            noise_std: 0.1,
            silence_frames: (0, 8),
            utterance_words: (3, 6),
            num_train: 200,
            num_test: 50,
            seed: 17,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.feat_dim == 0 {
            return Err(Error::invalid("corpus spec: vocab_size and feat_dim must be >= 1"));
        }
        if self.template_frames.0 == 0 || self.template_frames.0 > self.template_frames.1 {
            return Err(Error::invalid("corpus spec: bad template length range"));
        }
        if self.silence_frames.0 > self.silence_frames.1 {
            return Err(Error::invalid("corpus spec: bad silence length range"));
        }
        if self.utterance_words.0 == 0 || self.utterance_words.0 > self.utterance_words.1 {
            return Err(Error::invalid("corpus spec: bad utterance length range"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::invalid("corpus spec: negative noise"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub features: Tensor,
    pub tokens: Vec<usize>,
    pub words: Vec<String>,
    pub alignment: Vec<WordSpan>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: SyntheticCorpusSpec,
    pub vocab: Vec<String>,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn word(&self, token: usize) -> &str {
        &self.vocab[token]
    }

    pub fn words_of(&self, tokens: &[usize]) -> Vec<String> {
        tokens.iter().map(|&t| self.vocab[t].clone()).collect()
    }
}

fn generate_utterance(
    id: String,
    spec: &SyntheticCorpusSpec,
    templates: &[Tensor],
    vocab: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Utterance> {
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let n_words = rng.random_range(spec.utterance_words.0..=spec.utterance_words.1);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut tokens = Vec::with_capacity(n_words);
    let mut alignment = Vec::with_capacity(n_words);

    let push_silence = |rows: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng| {
        let n = rng.random_range(spec.silence_frames.0..=spec.silence_frames.1);
        for _ in 0..n {
            rows.push(vec![0.0; spec.feat_dim]);
        }
    };

    push_silence(&mut rows, rng);
    for k in 0..n_words {
        let w = rng.random_range(0..spec.vocab_size);
        tokens.push(w);
        let start = rows.len();
        let template = &templates[w];
        for r in 0..template.rows() {
            rows.push(template.row(r).to_vec());
        }
        alignment.push(WordSpan {
            word: vocab[w].clone(),
            start_ms: start as u64 * 10,
            end_ms: rows.len() as u64 * 10,
        });
        if k + 1 < n_words {
            push_silence(&mut rows, rng);
        }
    }
    push_silence(&mut rows, rng);

    if spec.noise_std > 0.0 {
        for row in &mut rows {
            for v in row.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
    let words = tokens.iter().map(|&t| vocab[t].clone()).collect();
    Ok(Utterance { id, features: Tensor::from_rows(&rows)?, tokens, words, alignment })
}

/// Deterministic synthetic corpus: same spec (including seed) twice gives
/// identical features, transcripts, and alignments.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i:02}")).collect();
    let templates: Vec<Tensor> = (0..spec.vocab_size)
        .map(|_| {
            let len = rng.random_range(spec.template_frames.0..=spec.template_frames.1);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let data: Vec<f64> = (0..len * spec.feat_dim).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(vec![len, spec.feat_dim], data)
        })
        .collect::<Result<_>>()?;

    let train = (0..spec.num_train)
        .map(|i| generate_utterance(format!("train-{i:04}"), spec, &templates, &vocab, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.num_test)
        .map(|i| generate_utterance(format!("test-{i:04}"), spec, &templates, &vocab, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { spec: spec.clone(), vocab, train, test })
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceMeta {
    id: String,
    frames: usize,
    tokens: Vec<usize>,
    words: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusIndex {
    format_version: u32,
    spec: SyntheticCorpusSpec,
    vocab: Vec<String>,
    train: Vec<UtteranceMeta>,
    test: Vec<UtteranceMeta>,
}

fn feats_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("feats").join(format!("{id}.tc"))
}

fn align_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("align").join(format!("{id}.json"))
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join("feats"))?;
    fs::create_dir_all(dir.join("align"))?;
    let meta_of = |u: &Utterance| UtteranceMeta {
        id: u.id.clone(),
        frames: u.features.rows(),
        tokens: u.tokens.clone(),
        words: u.words.clone(),
    };
    let index = CorpusIndex {
        format_version: FORMAT_VERSION,
        spec: corpus.spec.clone(),
        vocab: corpus.vocab.clone(),
        train: corpus.train.iter().map(meta_of).collect(),
        test: corpus.test.iter().map(meta_of).collect(),
    };
    let mut file = fs::File::create(dir.join("corpus.json"))?;
    file.write_all(&serde_json::to_vec_pretty(&index)?)?;
    file.write_all(b"\n")?;
    for u in corpus.train.iter().chain(&corpus.test) {
        let mut params = Params::new();
        params.insert("features", u.features.clone());
        write_container(&feats_path(dir, &u.id), &params, serde_json::json!({ "id": u.id }))?;
        let mut align = fs::File::create(align_path(dir, &u.id))?;
        align.write_all(&serde_json::to_vec_pretty(&u.alignment)?)?;
        align.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let index_bytes = fs::read(dir.join("corpus.json"))
        .map_err(|e| Error::data(format!("{}: {e}", dir.join("corpus.json").display())))?;
    let index: CorpusIndex = serde_json::from_slice(&index_bytes)?;
    if index.format_version != FORMAT_VERSION {
        return Err(Error::data(format!("corpus: unknown format_version {}", index.format_version)));
    }
    let load_split = |metas: &[UtteranceMeta]| -> Result<Vec<Utterance>> {
        metas
            .iter()
            .map(|m| {
                let (params, _) = read_container(&feats_path(dir, &m.id))?;
                let features = params.get("features")?.clone();
                if features.rows() != m.frames {
                    return Err(Error::data(format!("{}: frame count mismatch", m.id)));
                }
                let align_bytes = fs::read(align_path(dir, &m.id))?;
                let alignment: Vec<WordSpan> = serde_json::from_slice(&align_bytes)?;
                Ok(Utterance {
                    id: m.id.clone(),
                    features,
                    tokens: m.tokens.clone(),
                    words: m.words.clone(),
                    alignment,
                })
            })
            .collect()
    };
    Ok(Corpus {
        spec: index.spec.clone(),
        vocab: index.vocab.clone(),
        train: load_split(&index.train)?,
        test: load_split(&index.test)?,
    })
}

/// Save a model checkpoint: parameters plus a JSON config blob under `meta`.
pub fn save_model(path: &Path, params: &Params, kind: &str, config: serde_json::Value) -> Result<()> {
    write_container(path, params, serde_json::json!({ "kind": kind, "config": config }))
}

/// Load a checkpoint, checking the recorded kind.
pub fn load_model(path: &Path, kind: &str) -> Result<(Params, serde_json::Value)> {
    let (params, meta) = read_container(path)?;
    let got = meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if got != kind {
        return Err(Error::data(format!(
            "{}: expected a {kind} checkpoint, found `{got}`",
            path.display()
        )));
    }
    let config = meta.get("config").cloned().unwrap_or(serde_json::Value::Null);
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("scoutrn-data-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn container_roundtrip_is_bit_exact() {
        let dir = tmpdir("roundtrip");
        let mut params = Params::new();
        // Values representable in f32 so the roundtrip is exact.
        params.insert("a", Tensor::from_rows(&[vec![1.0, -2.5], vec![0.125, 3.0]]).unwrap());
        params.insert("b", Tensor::scalar(42.0));
        let path = dir.join("x.tc");
        write_container(&path, &params, serde_json::json!({"k": 1})).unwrap();
        let (back, meta) = read_container(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(meta["k"], 1);
    }

    #[test]
    fn scalar_one_serializes_to_ieee754_bytes() {
        let dir = tmpdir("ieee");
        let mut params = Params::new();
        params.insert("one", Tensor::scalar(1.0));
        let path = dir.join("one.tc");
        write_container(&path, &params, serde_json::Value::Null).unwrap();
        let bytes = fs::read(&path).unwrap();
        // Payload is the trailing 4 bytes.
        assert_eq!(&bytes[bytes.len() - 4..], &[0x00, 0x00, 0x80, 0x3F]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tmpdir("trunc");
        let mut params = Params::new();
        params.insert("a", Tensor::zeros(2, 2));
        let path = dir.join("x.tc");
        write_container(&path, &params, serde_json::Value::Null).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_container(&path).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tmpdir("version");
        let path = dir.join("x.tc");
        let manifest = serde_json::json!({
            "format_version": 99,
            "tensors": [],
        });
        let manifest_bytes = serde_json::to_vec(&manifest).unwrap();
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes()).unwrap();
        f.write_all(&manifest_bytes).unwrap();
        drop(f);
        assert!(read_container(&path).is_err());
    }

    #[test]
    fn same_seed_generates_identical_corpora() {
        let spec = SyntheticCorpusSpec {
            num_train: 3,
            num_test: 2,
            ..SyntheticCorpusSpec::default()
        };
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.train.len(), 3);
        for (ua, ub) in a.train.iter().zip(&b.train) {
            assert_eq!(ua.features, ub.features);
            assert_eq!(ua.tokens, ub.tokens);
            assert_eq!(ua.alignment, ub.alignment);
        }
    }

    #[test]
    fn zero_noise_reproduces_templates_exactly() {
        let spec = SyntheticCorpusSpec {
            noise_std: 0.0,
            silence_frames: (0, 0),
            utterance_words: (2, 2),
            num_train: 1,
            num_test: 0,
            ..SyntheticCorpusSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let u = &corpus.train[0];
        // With no silence and no noise, feature rows are exactly the two
        // templates back to back; alignment ends are cumulative lengths.
        assert_eq!(u.alignment.len(), 2);
        assert_eq!(u.alignment[0].start_ms, 0);
        assert_eq!(u.alignment[1].end_ms, u.features.rows() as u64 * 10);
        for span in &u.alignment {
            assert_eq!((span.end_ms - span.start_ms) % 10, 0);
        }
    }

    #[test]
    fn alignment_ends_are_cumulative_template_and_silence_lengths() {
        let spec = SyntheticCorpusSpec { num_train: 5, num_test: 0, ..Default::default() };
        let corpus = generate_corpus(&spec).unwrap();
        for u in &corpus.train {
            let mut prev_end = 0;
            for span in &u.alignment {
                assert!(span.start_ms >= prev_end);
                assert!(span.end_ms > span.start_ms);
                prev_end = span.end_ms;
            }
            assert!(prev_end <= u.features.rows() as u64 * 10);
        }
    }

    #[test]
    fn alignment_labels_reproduce_generator_boundaries() {
        use crate::scout::labels_from_alignment;
        use crate::transformer::{subsampled_len, SUBSAMPLE_RATE};
        let spec = SyntheticCorpusSpec { num_train: 8, num_test: 0, ..Default::default() };
        let corpus = generate_corpus(&spec).unwrap();
        for u in &corpus.train {
            let t_prime = subsampled_len(u.features.rows());
            let labels = labels_from_alignment(&u.alignment, SUBSAMPLE_RATE, t_prime).unwrap();
            // Generator-known boundaries: one per word at ceil(end_ms / 40).
            let expect: std::collections::BTreeSet<usize> =
                u.alignment.iter().map(|s| s.end_ms.div_ceil(40) as usize).collect();
            let got: std::collections::BTreeSet<usize> = labels
                .values()
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i + 1))
                .collect();
            assert_eq!(got, expect, "{}", u.id);
        }
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let dir = tmpdir("corpus");
        let spec = SyntheticCorpusSpec { num_train: 2, num_test: 1, ..Default::default() };
        let corpus = generate_corpus(&spec).unwrap();
        save_corpus(&dir, &corpus).unwrap();
        let back = load_corpus(&dir).unwrap();
        assert_eq!(back.vocab, corpus.vocab);
        assert_eq!(back.train.len(), 2);
        assert_eq!(back.test.len(), 1);
        for (a, b) in corpus.train.iter().zip(&back.train) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.alignment, b.alignment);
            // f32 storage: equal after one f32 roundtrip.
            assert_eq!(a.features.rows(), b.features.rows());
            for r in 0..a.features.rows() {
                for c in 0..a.features.cols() {
                    assert_eq!(a.features.at(r, c) as f32, b.features.at(r, c) as f32);
                }
            }
        }
    }
}
