//! Binary model files.
//!
//! Layout: the magic `JWPD`, a little-endian `u32` version, a length-prefixed
//! UTF-8 header (configuration, vocabularies, lexicon), then every parameter
//! in registration order as name, shape and little-endian `f64` payload.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::encoder::{TagSet, Vocab};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::model::{Mode, Model, ModelConfig, Vocabularies};

const MAGIC: &[u8; 4] = b"JWPD";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn header(model: &Model) -> String {
    let c = &model.config;
    let d = &c.dims;
    let f = &c.features;
    let mut h = String::new();
    for (k, v) in [
        ("mode", c.mode.as_str().to_string()),
        ("seed", model.store.seed().to_string()),
        ("keep_probability", c.keep.to_string()),
        ("word_dropout_alpha", c.alpha.to_string()),
        ("syllable_dim", d.syllable.to_string()),
        ("boundary_dim", d.boundary.to_string()),
        ("word_dim", d.word.to_string()),
        ("pos_dim", d.pos.to_string()),
        ("hidden_size", d.hidden.to_string()),
        ("layers", d.layers.to_string()),
        ("ffnn_dim", d.ffnn.to_string()),
        ("initial_bio", f.initial_bio.to_string()),
        ("crf_wseg", f.crf_wseg.to_string()),
        ("crf_pos", f.crf_pos.to_string()),
        ("pos_embedding", f.pos_embedding.to_string()),
    ] {
        h.push_str(&format!("{k}={v}\n"));
    }
    let counted = |h: &mut String, name: &str, v: &Vocab| {
        h.push_str(&format!("[{name}]\n"));
        for (t, c) in v.tokens().iter().zip(v.counts()) {
            h.push_str(&format!("{t}\t{c}\n"));
        }
    };
    counted(&mut h, "syllables", &model.vocab.syllables);
    counted(&mut h, "words", &model.vocab.words);
    for (name, set) in [("pos", &model.vocab.pos), ("labels", &model.vocab.labels)] {
        h.push_str(&format!("[{name}]\n"));
        for t in set.names() {
            h.push_str(t);
            h.push('\n');
        }
    }
    h.push_str("[lexicon]\n");
    h.push_str(&model.lexicon.to_text());
    h
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let h = header(model);
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    out.extend_from_slice(&(model.store.len() as u64).to_le_bytes());
    for (_, p) in model.store.iter() {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("length overflow"))
    }
}

struct Header {
    config: ModelConfig,
    seed: u64,
    vocab: Vocabularies,
    lexicon: Lexicon,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut config = ModelConfig::default();
    let mut seed = None;
    let mut section: Option<&str> = None;
    let mut counted: [(Vec<String>, Vec<usize>); 2] = Default::default();
    let mut names: [Vec<String>; 2] = Default::default();
    let mut lexicon = String::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name);
            continue;
        }
        match section {
            None => {
                let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("header line {line:?}")))?;
                let num = || v.parse::<usize>().map_err(|_| bad(format!("bad {k}")));
                let flag = || v.parse::<bool>().map_err(|_| bad(format!("bad {k}")));
                let real = || v.parse::<f64>().map_err(|_| bad(format!("bad {k}")));
                match k {
                    "mode" => {
                        config.mode = match v {
                            "joint" => Mode::Joint,
                            "pipeline" => Mode::Pipeline,
                            _ => return Err(bad(format!("unknown mode {v:?}"))),
                        }
                    }
                    "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("bad seed"))?),
                    "keep_probability" => config.keep = real()?,
                    "word_dropout_alpha" => config.alpha = real()?,
                    "syllable_dim" => config.dims.syllable = num()?,
                    "boundary_dim" => config.dims.boundary = num()?,
                    "word_dim" => config.dims.word = num()?,
                    "pos_dim" => config.dims.pos = num()?,
                    "hidden_size" => config.dims.hidden = num()?,
                    "layers" => config.dims.layers = num()?,
                    "ffnn_dim" => config.dims.ffnn = num()?,
                    "initial_bio" => config.features.initial_bio = flag()?,
                    "crf_wseg" => config.features.crf_wseg = flag()?,
                    "crf_pos" => config.features.crf_pos = flag()?,
                    "pos_embedding" => config.features.pos_embedding = flag()?,
                    _ => return Err(bad(format!("unknown header key {k:?}"))),
                }
            }
            Some(s @ ("syllables" | "words")) => {
                let (t, c) = line.rsplit_once('\t').ok_or_else(|| bad(format!("vocabulary line {line:?}")))?;
                let slot = &mut counted[usize::from(s == "words")];
                slot.0.push(t.to_string());
                slot.1.push(c.parse().map_err(|_| bad("bad token count"))?);
            }
            Some(s @ ("pos" | "labels")) => names[usize::from(s == "labels")].push(line.to_string()),
            Some("lexicon") => {
                lexicon.push_str(line);
                lexicon.push('\n');
            }
            Some(other) => return Err(bad(format!("unknown section {other:?}"))),
        }
    }
    let [(st, sc), (wt, wc)] = counted;
    let [pos, labels] = names;
    Ok(Header {
        config,
        seed: seed.ok_or_else(|| bad("missing seed"))?,
        vocab: Vocabularies {
            syllables: Vocab::from_parts(st, sc),
            words: Vocab::from_parts(wt, wc),
            pos: TagSet::new(pos),
            labels: TagSet::new(labels),
        },
        lexicon: Lexicon::parse(&lexicon).map_err(|e| bad(e.to_string()))?,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| bad("header is not UTF-8"))?;
    let h = parse_header(text)?;
    let mut model = Model::new(h.config, h.vocab, h.lexicon, h.seed)?;
    let count = r.len()?;
    if count != model.store.len() {
        return Err(bad(format!("{count} parameters, architecture expects {}", model.store.len())));
    }
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| bad("parameter name is not UTF-8"))?;
        let id = model.store.get(name).ok_or_else(|| bad(format!("unexpected parameter {name:?}")))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if shape != model.store.value(id).shape() {
            return Err(bad(format!("shape mismatch for {name}")));
        }
        let size: usize = shape.iter().product();
        let raw = r.take(size.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        *model.store.value_mut(id) = Tensor::new(shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_conllu;
    use crate::encoder::Dims;
    use crate::trainer::{build_model, Corpora, TrainingConfig};

    fn model(mode: Mode) -> Model {
        let s = read_conllu(
            "1\tTôi\t_\tPRON\t_\t_\t2\tsub\t_\t_\n\
             2\tlà\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
             3\tsinh_viên\t_\tNOUN\t_\t_\t2\tvmod\t_\t_\n\n",
        )
        .unwrap();
        let mut config = TrainingConfig::default();
        config.model.mode = mode;
        config.model.features.crf_pos = false;
        config.model.dims = Dims {
            syllable: 3,
            boundary: 2,
            word: 3,
            pos: 2,
            hidden: 2,
            layers: 1,
            ffnn: 3,
        };
        build_model(&config, &Corpora::shared(s), None, None).unwrap()
    }

    #[test]
    fn round_trip() {
        for mode in [Mode::Joint, Mode::Pipeline] {
            let m = model(mode);
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back.config, m.config);
            assert_eq!(back.vocab, m.vocab);
            assert_eq!(back.lexicon, m.lexicon);
            assert_eq!(to_bytes(&back), bytes);
            let raw = crate::corpus::AnnotatedSentence::raw(vec!["Tôi".into(), "là".into()]);
            assert_eq!(m.predict(&raw, false).unwrap(), back.predict(&raw, false).unwrap());
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&model(Mode::Joint));
        assert!(from_bytes(b"nope").is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(from_bytes(&version), Err(Error::Checkpoint(_))));
    }
}
