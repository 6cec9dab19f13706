//! On-disk formats.
//!
//! | file                 | layout                                                          |
//! |----------------------|-----------------------------------------------------------------|
//! | features (`.fea`)    | `SMENFEA1`, u32 T, u32 d, T·d f32, all little-endian            |
//! | checkpoint (`.prm`)  | `SMENPRM1`, u32 d, h, C, r, then each tensor row-major as f64   |
//! | annotations          | `SMENANN1` header, `video`/`gt` tab-separated records           |
//! | manifest             | `SMENCORPUS1` header, key/value lines, one `video` line each    |
//! | masks                | `video_id<TAB>bitstring` per line                               |
//! | proposals            | CSV `video_id,class_id,start_sec,end_sec,confidence`            |
//! | run config           | `key=value` lines                                               |
//!
//! Text floats use Rust's shortest round-trip formatting, so every text
//! round trip is exact.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::metrics::{Detection, GroundTruthSegment};
use crate::mining::SlowMask;
use crate::tensorseq::{FeatureSequence, Matrix, VideoLabel};

pub const FEATURE_MAGIC: &[u8; 8] = b"SMENFEA1";
pub const PARAMS_MAGIC: &[u8; 8] = b"SMENPRM1";
pub const ANNOTATION_TAG: &str = "SMENANN1";
pub const MANIFEST_TAG: &str = "SMENCORPUS1";

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const ANNOTATION_FILE: &str = "annotations.tsv";
pub const FEATURE_DIR: &str = "features";

/// One video with its features, weak label and (optionally empty) segment annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub features: FeatureSequence,
    pub label: VideoLabel,
    pub gts: Vec<GroundTruthSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub num_classes: usize,
    pub snippet_seconds: f64,
    pub videos: Vec<Video>,
}

impl Corpus {
    pub fn ground_truth(&self) -> Vec<GroundTruthSegment> {
        self.videos.iter().flat_map(|v| v.gts.iter().cloned()).collect()
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports positioned format errors.
struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated while reading {what} ({n} bytes needed at offset {})", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != magic {
            return Err(self.err(0, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_features(x: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * x.len() * x.dim());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(x.len() as u32).to_le_bytes());
    out.extend_from_slice(&(x.dim() as u32).to_le_bytes());
    for v in x.data().as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(path: &Path, bytes: &[u8], snippet_seconds: f64) -> Result<FeatureSequence> {
    let mut r = ByteReader::new(path, bytes);
    r.magic(FEATURE_MAGIC)?;
    let t = r.u32("T")? as usize;
    let d = r.u32("d")? as usize;
    if t == 0 || d == 0 {
        return Err(r.err(8, format!("empty feature shape {t}x{d}")));
    }
    let payload = r.take(4 * t * d, "feature payload")?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let m = Matrix::new(t, d, data)?;
    FeatureSequence::new(m, snippet_seconds).map_err(|e| r.err(16, e.to_string()))
}

pub fn write_features(path: &Path, x: &FeatureSequence) -> Result<()> {
    write_file(path, &encode_features(x))
}

pub fn read_features(path: &Path, snippet_seconds: f64) -> Result<FeatureSequence> {
    decode_features(path, &read_file(path)?, snippet_seconds)
}

pub fn encode_params(p: &BackboneParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * p.num_scalars());
    out.extend_from_slice(PARAMS_MAGIC);
    for dim in [p.input_dim(), p.hidden_dim(), p.num_classes(), p.context_radius] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for t in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(path: &Path, bytes: &[u8]) -> Result<BackboneParams> {
    let mut r = ByteReader::new(path, bytes);
    r.magic(PARAMS_MAGIC)?;
    let d = r.u32("d")? as usize;
    let h = r.u32("h")? as usize;
    let c = r.u32("C")? as usize;
    let radius = r.u32("context radius")? as usize;
    if d == 0 || h == 0 || c == 0 {
        return Err(r.err(8, format!("invalid dims d={d} h={h} C={c}")));
    }
    let mut p = crate::backbone::init_params(d, h, c, radius, 0);
    for (i, t) in p.tensors_mut().into_iter().enumerate() {
        let raw = r.take(8 * t.len(), &format!("tensor {i}"))?;
        for (dst, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    r.finish()?;
    Ok(p)
}

pub fn write_params(path: &Path, p: &BackboneParams) -> Result<()> {
    write_file(path, &encode_params(p))
}

pub fn read_params(path: &Path) -> Result<BackboneParams> {
    decode_params(path, &read_file(path)?)
}

/// Weak labels and segments of one video as stored in an annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub classes: Vec<usize>,
    pub gts: Vec<GroundTruthSegment>,
}

fn fmt_classes(classes: &[usize]) -> String {
    classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_annotations(anns: &[VideoAnnotation]) -> String {
    let mut s = format!("{ANNOTATION_TAG}\n");
    for a in anns {
        s.push_str(&format!("video\t{}\t{}\n", a.video_id, fmt_classes(&a.classes)));
        for g in &a.gts {
            s.push_str(&format!(
                "gt\t{}\t{}\t{}\t{}\t{}\n",
                g.video_id,
                g.class_id,
                g.start_sec,
                g.end_sec,
                u8::from(g.slow_motion)
            ));
        }
    }
    s
}

pub fn parse_annotations(path: &Path, text: &str) -> Result<Vec<VideoAnnotation>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, tag)) if tag == ANNOTATION_TAG => {}
        _ => return Err(perr(1, format!("missing {ANNOTATION_TAG} header"))),
    }
    let mut out: Vec<VideoAnnotation> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "video" if fields.len() == 3 => {
                let classes = if fields[2].is_empty() {
                    Vec::new()
                } else {
                    fields[2]
                        .split(',')
                        .map(|c| c.parse::<usize>().map_err(|e| perr(n, format!("class {c:?}: {e}"))))
                        .collect::<Result<Vec<_>>>()?
                };
                if out.iter().any(|a| a.video_id == fields[1]) {
                    return Err(perr(n, format!("duplicate video {}", fields[1])));
                }
                out.push(VideoAnnotation {
                    video_id: fields[1].to_string(),
                    classes,
                    gts: Vec::new(),
                });
            }
            "gt" if fields.len() == 6 => {
                let class_id = fields[2].parse::<usize>().map_err(|e| perr(n, format!("class_id: {e}")))?;
                let start_sec = fields[3].parse::<f64>().map_err(|e| perr(n, format!("start_sec: {e}")))?;
                let end_sec = fields[4].parse::<f64>().map_err(|e| perr(n, format!("end_sec: {e}")))?;
                let slow_motion = match fields[5] {
                    "0" => false,
                    "1" => true,
                    other => return Err(perr(n, format!("slow flag {other:?} is not 0/1"))),
                };
                if !(start_sec.is_finite() && end_sec.is_finite() && start_sec < end_sec) {
                    return Err(perr(n, format!("segment [{start_sec}, {end_sec}) is empty or invalid")));
                }
                let video = out
                    .iter_mut()
                    .find(|a| a.video_id == fields[1])
                    .ok_or_else(|| perr(n, format!("gt for undeclared video {}", fields[1])))?;
                video.gts.push(GroundTruthSegment {
                    video_id: fields[1].to_string(),
                    class_id,
                    start_sec,
                    end_sec,
                    slow_motion,
                });
            }
            _ => return Err(perr(n, format!("malformed record {line:?}"))),
        }
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, anns: &[VideoAnnotation]) -> Result<()> {
    write_file(path, format_annotations(anns).as_bytes())
}

pub fn read_annotations(path: &Path) -> Result<Vec<VideoAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(path, &text)
}

/// Flattened ground truth of an annotation file.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthSegment>> {
    Ok(read_annotations(path)?.into_iter().flat_map(|a| a.gts).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_file: String,
    pub t: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub version: String,
    pub num_classes: usize,
    pub snippet_seconds: f64,
    pub entries: Vec<ManifestEntry>,
}

pub fn format_manifest(m: &CorpusManifest) -> String {
    let mut s = format!(
        "{}\nnum_classes\t{}\nsnippet_seconds\t{}\n",
        m.version, m.num_classes, m.snippet_seconds
    );
    for e in &m.entries {
        s.push_str(&format!("video\t{}\t{}\t{}\t{}\n", e.video_id, e.feature_file, e.t, e.d));
    }
    s
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<CorpusManifest> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let version = match lines.next() {
        Some((_, v)) if v == MANIFEST_TAG => v.to_string(),
        _ => return Err(perr(1, format!("missing {MANIFEST_TAG} header"))),
    };
    let mut num_classes = None;
    let mut snippet_seconds = None;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match (f[0], f.len()) {
            ("num_classes", 2) => num_classes = Some(f[1].parse::<usize>().map_err(|e| perr(n, e.to_string()))?),
            ("snippet_seconds", 2) => {
                snippet_seconds = Some(f[1].parse::<f64>().map_err(|e| perr(n, e.to_string()))?)
            }
            ("video", 5) => {
                if !seen.insert(f[1].to_string()) {
                    return Err(perr(n, format!("duplicate video id {}", f[1])));
                }
                entries.push(ManifestEntry {
                    video_id: f[1].to_string(),
                    feature_file: f[2].to_string(),
                    t: f[3].parse().map_err(|e| perr(n, format!("T: {e}")))?,
                    d: f[4].parse().map_err(|e| perr(n, format!("d: {e}")))?,
                });
            }
            _ => return Err(perr(n, format!("malformed record {line:?}"))),
        }
    }
    Ok(CorpusManifest {
        version,
        num_classes: num_classes.ok_or_else(|| perr(0, "missing num_classes".into()))?,
        snippet_seconds: snippet_seconds.ok_or_else(|| perr(0, "missing snippet_seconds".into()))?,
        entries,
    })
}

/// Writes `manifest.txt`, `annotations.tsv` and `features/<id>.fea` under `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let mut entries = Vec::new();
    let mut anns = Vec::new();
    for v in &corpus.videos {
        let rel = format!("{FEATURE_DIR}/{}.fea", v.id);
        write_features(&dir.join(&rel), &v.features)?;
        entries.push(ManifestEntry {
            video_id: v.id.clone(),
            feature_file: rel,
            t: v.features.len(),
            d: v.features.dim(),
        });
        anns.push(VideoAnnotation {
            video_id: v.id.clone(),
            classes: v.label.classes(),
            gts: v.gts.clone(),
        });
    }
    let manifest = CorpusManifest {
        version: MANIFEST_TAG.to_string(),
        num_classes: corpus.num_classes,
        snippet_seconds: corpus.snippet_seconds,
        entries,
    };
    write_file(&dir.join(MANIFEST_FILE), format_manifest(&manifest).as_bytes())?;
    write_annotations(&dir.join(ANNOTATION_FILE), &anns)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = parse_manifest(&mpath, &text)?;
    let apath = dir.join(ANNOTATION_FILE);
    let anns: BTreeMap<String, VideoAnnotation> = read_annotations(&apath)?
        .into_iter()
        .map(|a| (a.video_id.clone(), a))
        .collect();
    let mut videos = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let fpath = dir.join(&e.feature_file);
        let features = read_features(&fpath, manifest.snippet_seconds)?;
        if features.len() != e.t || features.dim() != e.d {
            return Err(Error::InvalidInput(format!(
                "{}: manifest says {}x{}, file holds {}x{}",
                fpath.display(),
                e.t,
                e.d,
                features.len(),
                features.dim()
            )));
        }
        let ann = anns.get(&e.video_id).ok_or_else(|| {
            Error::InvalidInput(format!("video {} has no annotation record", e.video_id))
        })?;
        let label = VideoLabel::from_classes(manifest.num_classes, &ann.classes)?;
        videos.push(Video {
            id: e.video_id.clone(),
            features,
            label,
            gts: ann.gts.clone(),
        });
    }
    Ok(Corpus {
        num_classes: manifest.num_classes,
        snippet_seconds: manifest.snippet_seconds,
        videos,
    })
}

pub fn format_masks(masks: &[(String, SlowMask)]) -> String {
    masks
        .iter()
        .map(|(id, m)| format!("{id}\t{}\n", m.to_bitstring()))
        .collect()
}

pub fn write_masks(path: &Path, masks: &[(String, SlowMask)]) -> Result<()> {
    write_file(path, format_masks(masks).as_bytes())
}

pub fn read_masks(path: &Path) -> Result<Vec<(String, SlowMask)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let perr = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (id, bits) = l.split_once('\t').ok_or_else(|| perr("expected video_id<TAB>bits".into()))?;
            let mask = SlowMask::from_bitstring(bits).map_err(|e| perr(e.to_string()))?;
            Ok((id.to_string(), mask))
        })
        .collect()
}

pub const DETECTION_HEADER: &str = "video_id,class_id,start_sec,end_sec,confidence";

pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = format!("{DETECTION_HEADER}\n");
    for d in dets {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            d.video_id, d.class_id, d.start_sec, d.end_sec, d.confidence
        ));
    }
    s
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_file(path, format_detections(dets).as_bytes())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == DETECTION_HEADER => {}
        _ => return Err(perr(1, format!("expected header {DETECTION_HEADER}"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let n = i + 1;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(perr(n, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|e| perr(n, format!("{what}: {e}")));
            Ok(Detection {
                video_id: f[0].to_string(),
                class_id: f[1].parse().map_err(|e| perr(n, format!("class_id: {e}")))?,
                start_sec: num(f[2], "start_sec")?,
                end_sec: num(f[3], "end_sec")?,
                confidence: num(f[4], "confidence")?,
            })
        })
        .collect()
}

/// `key=value` lines in the given order.
pub fn format_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected key=value, got {raw:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn write_kv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    write_file(path, format_kv(pairs).as_bytes())
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(path, &text)
}

pub fn format_loss_curve(curve: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn loss_curve(&self) -> PathBuf {
        self.root.join("loss_curve.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.prm")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_params;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn feature_layout_size() {
        let x = FeatureSequence::from_matrix(Matrix::filled(2, 3, 0.5)).unwrap();
        assert_eq!(encode_features(&x).len(), 8 + 8 + 24);
    }

    #[test]
    fn feature_errors_are_positioned() {
        match decode_features(p(), &[], 0.64) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let x = FeatureSequence::from_matrix(Matrix::filled(2, 3, 0.5)).unwrap();
        let mut bytes = encode_features(&x);
        bytes[0] = b'X';
        assert!(matches!(decode_features(p(), &bytes, 0.64), Err(Error::Format { offset: 0, .. })));
        let bytes = encode_features(&x);
        match decode_features(p(), &bytes[..30], 0.64) {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, 30);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_features(p(), &long, 0.64), Err(Error::Format { offset: 40, .. })));
    }

    #[test]
    fn params_round_trip_exact() {
        let prm = init_params(5, 7, 3, 2, 42);
        let bytes = encode_params(&prm);
        assert_eq!(&bytes[..8], PARAMS_MAGIC);
        assert_eq!(bytes.len(), 8 + 16 + 8 * prm.num_scalars());
        assert_eq!(decode_params(p(), &bytes).unwrap(), prm);
        assert!(decode_params(p(), &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn annotation_parse_errors_carry_line() {
        let text = format!("{ANNOTATION_TAG}\nvideo\tv0\t0\ngt\tv0\tx\t0\t1\t0\n");
        match parse_annotations(p(), &text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = format!("{ANNOTATION_TAG}\ngt\tv9\t0\t0\t1\t0\n");
        assert!(matches!(parse_annotations(p(), &text), Err(Error::Parse { line: 2, .. })));
        assert!(parse_annotations(p(), "nope\n").is_err());
    }

    #[test]
    fn annotation_mixed_fixture_counts() {
        let text = format!(
            "{ANNOTATION_TAG}\nvideo\tv0\t0,2\ngt\tv0\t0\t1.28\t5.12\t1\ngt\tv0\t2\t6.4\t7.04\t0\nvideo\tv1\t1\nvideo\tv2\t\ngt\tv2\t1\t0\t0.64\t1\n"
        );
        let anns = parse_annotations(p(), &text).unwrap();
        assert_eq!(anns.len(), 3);
        assert_eq!(anns[0].classes, vec![0, 2]);
        assert_eq!(anns[0].gts.len(), 2);
        assert!(anns[1].gts.is_empty());
        assert!(anns[2].classes.is_empty());
        let slow = anns.iter().flat_map(|a| &a.gts).filter(|g| g.slow_motion).count();
        assert_eq!(slow, 2);
        assert_eq!(parse_annotations(p(), &format_annotations(&anns)).unwrap(), anns);
    }

    #[test]
    fn kv_and_detections() {
        let kv = parse_kv(p(), "# c\ntau = 4\n\ntheta=0.4 # note\n").unwrap();
        assert_eq!(kv, vec![("tau".into(), "4".into()), ("theta".into(), "0.4".into())]);
        assert!(parse_kv(p(), "oops\n").is_err());
        assert_eq!(format_loss_curve(&[1.5, 0.25]), "iteration,loss\n0,1.5\n1,0.25\n");
    }
}
