//! Model checkpoints: a directory holding `params.bin`, `model.json` and the
//! vocabularies the model was indexed with.

use std::path::Path;

use evadapt_core::features::Vocab;
use evadapt_core::nets::{AnyModel, LearnerKind, PoolMode, TaggerArch};
use evadapt_core::tensor::Parameters;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{format_err, parse_vocab, read_bytes, read_json, read_text, vocab_text, write_file, write_json};
use crate::Result;

pub const PARAMS: &str = "params.bin";
pub const MODEL: &str = "model.json";
pub const VOCAB: &str = "vocab.txt";
pub const POS_VOCAB: &str = "pos_vocab.txt";

const MAGIC: &[u8; 8] = b"EVCKPT01";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    Sha256::digest(bytes.as_ref()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn vocab_hash(v: &Vocab) -> String {
    sha256_hex(vocab_text(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub format_version: u32,
    pub kind: LearnerKind,
    pub feda: bool,
    pub lambda: Option<f64>,
    pub pooling: Option<PoolMode>,
    pub case_fold: bool,
    /// Optimizer updates applied before saving.
    pub updates: usize,
    pub arch: TaggerArch,
    pub vocab_hash: String,
    pub config_hash: String,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub meta: ModelMeta,
    pub vocab: Vocab,
    pub pos_vocab: Vocab,
}

pub fn encode_params(model: &AnyModel) -> Vec<u8> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit("", &mut |name, p| tensors.push((name.to_string(), p.shape.clone(), p.value.clone())));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, shape, values) in tensors {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend((d as u64).to_le_bytes());
        }
        for v in values {
            out.extend((v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

pub fn decode_params(buf: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a parameter file".into());
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("tensor {name} is too large"))?;
        let bytes = r.take(count.checked_mul(4).ok_or("tensor too large")?)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((name, shape, values));
    }
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(out)
}

pub fn save_checkpoint(dir: &Path, model: &AnyModel, vocab: &Vocab, pos_vocab: &Vocab, config_hash: &str) -> Result<()> {
    let arch = model.arch().clone();
    let meta = ModelMeta {
        format_version: FORMAT_VERSION,
        kind: arch.kind,
        feda: model.is_feda(),
        lambda: arch.domain_head.as_ref().map(|d| d.lambda),
        pooling: arch.domain_head.as_ref().map(|d| d.pooling),
        case_fold: vocab.case_fold(),
        updates: match model {
            AnyModel::Tagger(t) => t.updates,
            AnyModel::Feda(f) => f.updates,
        },
        vocab_hash: vocab_hash(vocab),
        config_hash: config_hash.to_string(),
        arch,
    };
    write_file(&dir.join(PARAMS), encode_params(model))?;
    write_file(&dir.join(VOCAB), vocab_text(vocab))?;
    write_file(&dir.join(POS_VOCAB), vocab_text(pos_vocab))?;
    write_json(&dir.join(MODEL), &meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join(MODEL);
    let meta: ModelMeta = read_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(format_err(&meta_path, format!("unsupported format version {}", meta.format_version)));
    }
    let declared = (
        meta.arch.kind,
        meta.arch.domain_head.as_ref().map(|d| d.lambda),
        meta.arch.domain_head.as_ref().map(|d| d.pooling),
    );
    if declared != (meta.kind, meta.lambda, meta.pooling) {
        return Err(format_err(&meta_path, "kind, lambda or pooling disagrees with the architecture"));
    }
    let vocab = parse_vocab(&read_text(&dir.join(VOCAB))?, meta.case_fold);
    if vocab_hash(&vocab) != meta.vocab_hash {
        return Err(format_err(&dir.join(VOCAB), "vocabulary does not match the recorded hash"));
    }
    let pos_vocab = parse_vocab(&read_text(&dir.join(POS_VOCAB))?, false);
    let params_path = dir.join(PARAMS);
    let named = decode_params(&read_bytes(&params_path)?).map_err(|m| format_err(&params_path, m))?;
    let mut model = AnyModel::blank(meta.arch.clone(), meta.feda)?;
    model.load_params(&named).map_err(|e| format_err(&params_path, e))?;
    match &mut model {
        AnyModel::Tagger(t) => t.updates = meta.updates,
        AnyModel::Feda(f) => f.updates = meta.updates,
    }
    Ok(Checkpoint {
        model,
        meta,
        vocab,
        pos_vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use evadapt_core::features::FeaturePlan;
    use evadapt_core::nets::Tagger;

    fn small_arch() -> TaggerArch {
        let plan = FeaturePlan {
            word_dim: 4,
            ..FeaturePlan::default()
        };
        let mut a = TaggerArch::new(LearnerKind::Bilstm, plan, 0).with_domain_head(PoolMode::Max, 0.5);
        a.hidden = 3;
        a.classifier_hidden = 5;
        a
    }

    fn vocab() -> Vocab {
        Vocab::from_counts(["ran", "fell"], 1, false)
    }

    #[test]
    fn roundtrip_preserves_params_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let model = AnyModel::Tagger(Tagger::new(small_arch(), 7).unwrap());
        save_checkpoint(dir.path(), &model, &vocab(), &vocab(), "abc").unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.meta.lambda, Some(0.5));
        assert_eq!(ck.meta.pooling, Some(PoolMode::Max));
        assert_eq!(ck.meta.config_hash, "abc");
        assert_eq!(ck.vocab.words(), vocab().words());
        let mut a = Vec::new();
        model.visit("", &mut |n, p| a.push((n.to_string(), p.value.clone())));
        let mut b = Vec::new();
        ck.model.visit("", &mut |n, p| b.push((n.to_string(), p.value.clone())));
        assert_eq!(a.len(), b.len());
        for ((na, va), (nb, vb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            for (x, y) in va.iter().zip(vb) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = AnyModel::Tagger(Tagger::new(small_arch(), 7).unwrap());
        save_checkpoint(dir.path(), &model, &vocab(), &vocab(), "").unwrap();
        let mut meta: ModelMeta = read_json(&dir.path().join(MODEL)).unwrap();
        meta.arch.hidden = 4;
        write_json(&dir.path().join(MODEL), &meta).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(decode_params(b"EVCKPT01\x01\x00\x00\x00").is_err());
        assert!(decode_params(b"garbage!").is_err());
        let model = AnyModel::Tagger(Tagger::new(small_arch(), 1).unwrap());
        let mut bytes = encode_params(&model);
        bytes.push(0);
        assert!(decode_params(&bytes).unwrap_err().contains("trailing"));

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &vocab(), &vocab(), "").unwrap();
        std::fs::write(dir.path().join(VOCAB), "<pad>\n<unk>\nother\n").unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
