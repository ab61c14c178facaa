//! Artifact persistence: datasets, observation blocks, model checkpoints,
//! and metric reports.
//!
//! Every binary container is a descriptive text header (one `key value…`
//! line each, ending with a bare `data` line) followed by little-endian
//! 32-bit-float payload in declared order. Files round-trip bit-exactly:
//! saving what was loaded reproduces the original bytes. Artifacts are
//! append-only — writers refuse to overwrite an existing path.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::models::gru_ablation::{GruArch, GruBaselineModel};
use crate::models::intervention::InterventionModel;
use crate::models::native::{NativeArch, NativeModel};
use crate::nn::params::ParamSet;
use crate::sim::{Dataset, DatasetKind, EpisodeMeta, StimulusEvent, VoltageSequence};

const DATASET_MAGIC: &str = "foci-dataset v1";
const META_MAGIC: &str = "foci-meta v1";
const OBS_MAGIC: &str = "foci-observations v1";
const CKPT_MAGIC: &str = "foci-checkpoint v1";
const REPORT_HEADER: &str = "model\tpct_identified\ttimestep_mae\tlocation_error_mm";

/// Create a file, refusing to clobber an existing artifact.
pub fn create_new_file(path: &Path) -> Result<fs::File> {
    match fs::OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(f) => Ok(f),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidArgument {
            context: "artifact output",
            detail: format!("refusing to overwrite existing artifact {}", path.display()),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Error for a required input that is not on disk.
pub fn require_artifact(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.display().to_string(),
            hint: hint.to_string(),
        })
    }
}

// ---------------------------------------------------------------------------
// Header parsing

/// Line-by-line reader over the text header of a container file.
struct HeaderLines<'a> {
    path: &'a Path,
    lines: Vec<String>,
    cursor: usize,
}

impl<'a> HeaderLines<'a> {
    fn new(path: &'a Path, text: &str) -> Self {
        HeaderLines {
            path,
            lines: text.lines().map(str::to_owned).collect(),
            cursor: 0,
        }
    }

    fn err(&self, detail: String) -> Error {
        Error::MalformedFile {
            path: self.path.display().to_string(),
            line: self.cursor,
            detail,
        }
    }

    /// Next line split into whitespace fields; the first field must equal
    /// `key`.
    fn expect(&mut self, key: &str) -> Result<Vec<String>> {
        self.cursor += 1;
        let Some(line) = self.lines.get(self.cursor - 1) else {
            return Err(self.err(format!("unexpected end of header, wanted `{key}`")));
        };
        let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if fields.first().map(String::as_str) != Some(key) {
            return Err(self.err(format!("expected `{key}`, found `{line}`")));
        }
        Ok(fields[1..].to_vec())
    }

    fn expect_exact(&mut self, full: &str) -> Result<()> {
        self.cursor += 1;
        match self.lines.get(self.cursor - 1) {
            Some(line) if line == full => Ok(()),
            Some(line) => Err(self.err(format!("expected `{full}`, found `{line}`"))),
            None => Err(self.err(format!("unexpected end of header, wanted `{full}`"))),
        }
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let fields = self.expect(key)?;
        if fields.len() != 1 {
            return Err(self.err(format!("`{key}` takes exactly one value, found {}", fields.len())));
        }
        fields[0]
            .parse()
            .map_err(|_| self.err(format!("cannot parse `{}` as {} value", fields[0], key)))
    }
}

/// Split a container file into its text header and binary payload at the
/// terminating `data` line.
fn split_container(path: &Path, bytes: &[u8]) -> Result<(String, Vec<u8>)> {
    let marker: &[u8] = b"\ndata\n";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::MalformedFile {
            path: path.display().to_string(),
            line: 0,
            detail: "missing `data` header terminator".into(),
        })?;
    let header = String::from_utf8(bytes[..pos].to_vec()).map_err(|_| Error::MalformedFile {
        path: path.display().to_string(),
        line: 0,
        detail: "header is not valid UTF-8".into(),
    })?;
    Ok((header, bytes[pos + marker.len()..].to_vec()))
}

fn f64s_to_f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn f32_bytes_to_f64s(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 4 {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            line: 0,
            detail: format!("payload holds {} bytes, expected {}", bytes.len(), expected * 4),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

// ---------------------------------------------------------------------------
// Datasets

/// Write the episode frames (`[episode][frame][row][col]`, f32 LE) and the
/// metadata sidecar.
pub fn save_dataset(data_path: &Path, meta_path: &Path, ds: &Dataset, kind: DatasetKind, seed: u64) -> Result<()> {
    let (episodes, frames, rows, cols) = dataset_dims(ds)?;
    let mut header = String::new();
    header.push_str(DATASET_MAGIC);
    header.push('\n');
    header.push_str(&format!("kind {}\n", kind_str(kind)));
    header.push_str(&format!("episodes {episodes}\n"));
    header.push_str(&format!("frames {frames}\n"));
    header.push_str(&format!("rows {rows}\n"));
    header.push_str(&format!("cols {cols}\n"));
    header.push_str("dtype f32le\n");
    header.push_str(&format!("seed {seed}\n"));
    header.push_str("data\n");

    let mut file = create_new_file(data_path)?;
    file.write_all(header.as_bytes())?;
    for ep in &ds.episodes {
        file.write_all(&f64s_to_f32_bytes(ep.iter().copied()))?;
    }

    let mut meta = String::new();
    meta.push_str(META_MAGIC);
    meta.push('\n');
    meta.push_str(&format!("episodes {episodes}\n"));
    for (i, m) in ds.metas.iter().enumerate() {
        meta.push_str(&format!("episode {i}\n"));
        meta.push_str(&format!("seed {}\n", m.seed));
        meta.push_str(&format!("grid_size {}\n", m.grid_size));
        meta.push_str(&format!("frames {}\n", m.frames));
        for s in &m.initial_stims {
            meta.push_str(&format!("initial_stim {}\n", stim_fields(s)));
        }
        if let Some(s) = &m.foci_stim {
            meta.push_str(&format!("foci_stim {}\n", stim_fields(s)));
        }
        meta.push_str("end\n");
    }
    let mut meta_file = create_new_file(meta_path)?;
    meta_file.write_all(meta.as_bytes())?;
    Ok(())
}

/// Load a dataset and its sidecar; returns episodes, metadata, kind, and the
/// generation seed.
pub fn load_dataset(data_path: &Path, meta_path: &Path) -> Result<(Dataset, DatasetKind, u64)> {
    require_artifact(data_path, "generate it with the `simulate` subcommand")?;
    require_artifact(meta_path, "generate it with the `simulate` subcommand")?;
    let bytes = fs::read(data_path)?;
    let (header, payload) = split_container(data_path, &bytes)?;
    let mut h = HeaderLines::new(data_path, &header);
    h.expect_exact(DATASET_MAGIC)?;
    let kind = parse_kind(&mut h)?;
    let episodes: usize = h.value("episodes")?;
    let frames: usize = h.value("frames")?;
    let rows: usize = h.value("rows")?;
    let cols: usize = h.value("cols")?;
    h.expect_exact("dtype f32le")?;
    let seed: u64 = h.value("seed")?;

    let values = f32_bytes_to_f64s(data_path, &payload, episodes * frames * rows * cols)?;
    let per = frames * rows * cols;
    let eps: Vec<VoltageSequence> = (0..episodes)
        .map(|e| {
            VoltageSequence::from_shape_vec((frames, rows, cols), values[e * per..(e + 1) * per].to_vec())
                .expect("shape matches slice length")
        })
        .collect();

    let metas = load_metas(meta_path, episodes)?;
    Ok((Dataset { episodes: eps, metas }, kind, seed))
}

fn load_metas(meta_path: &Path, expect_episodes: usize) -> Result<Vec<EpisodeMeta>> {
    let text = fs::read_to_string(meta_path)?;
    let mut h = HeaderLines::new(meta_path, &text);
    h.expect_exact(META_MAGIC)?;
    let episodes: usize = h.value("episodes")?;
    if episodes != expect_episodes {
        return Err(h.err(format!(
            "sidecar lists {episodes} episodes but dataset holds {expect_episodes}"
        )));
    }
    let mut metas = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let idx: usize = h.value("episode")?;
        if idx != i {
            return Err(h.err(format!("episode records out of order: expected {i}, found {idx}")));
        }
        let seed: u64 = h.value("seed")?;
        let grid_size: usize = h.value("grid_size")?;
        let frames: usize = h.value("frames")?;
        let mut initial_stims = Vec::new();
        let mut foci_stim = None;
        loop {
            let fields = h.expect_any()?;
            match fields.0.as_str() {
                "initial_stim" => initial_stims.push(parse_stim(&h, &fields.1)?),
                "foci_stim" => foci_stim = Some(parse_stim(&h, &fields.1)?),
                "end" => break,
                other => return Err(h.err(format!("unexpected record `{other}` in episode block"))),
            }
        }
        metas.push(EpisodeMeta {
            initial_stims,
            foci_stim,
            seed,
            grid_size,
            frames,
        });
    }
    Ok(metas)
}

impl HeaderLines<'_> {
    /// Next line split into (first field, remaining fields).
    fn expect_any(&mut self) -> Result<(String, Vec<String>)> {
        self.cursor += 1;
        let Some(line) = self.lines.get(self.cursor - 1) else {
            return Err(self.err("unexpected end of file".into()));
        };
        let mut fields = line.split_whitespace().map(str::to_owned);
        let Some(first) = fields.next() else {
            return Err(self.err("blank line in record block".into()));
        };
        Ok((first, fields.collect()))
    }
}

fn stim_fields(s: &StimulusEvent) -> String {
    format!(
        "{} {} {} {} {} {}",
        s.center.0, s.center.1, s.radius_px, s.amplitude, s.onset_frame, s.duration_frames
    )
}

fn parse_stim(h: &HeaderLines, fields: &[String]) -> Result<StimulusEvent> {
    if fields.len() != 6 {
        return Err(h.err(format!("stimulus record needs 6 fields, found {}", fields.len())));
    }
    let bad = |what: &str| h.err(format!("cannot parse stimulus {what}"));
    Ok(StimulusEvent {
        center: (
            fields[0].parse().map_err(|_| bad("center row"))?,
            fields[1].parse().map_err(|_| bad("center col"))?,
        ),
        radius_px: fields[2].parse().map_err(|_| bad("radius"))?,
        amplitude: fields[3].parse().map_err(|_| bad("amplitude"))?,
        onset_frame: fields[4].parse().map_err(|_| bad("onset frame"))?,
        duration_frames: fields[5].parse().map_err(|_| bad("duration"))?,
    })
}

fn dataset_dims(ds: &Dataset) -> Result<(usize, usize, usize, usize)> {
    let first = ds.episodes.first().ok_or(Error::InvalidArgument {
        context: "save_dataset",
        detail: "dataset holds no episodes".into(),
    })?;
    let (frames, rows, cols) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    for (i, e) in ds.episodes.iter().enumerate() {
        if e.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                context: "save_dataset",
                expected: format!("{:?}", first.shape()),
                got: format!("episode {i} has {:?}", e.shape()),
            });
        }
    }
    if ds.metas.len() != ds.episodes.len() {
        return Err(Error::ShapeMismatch {
            context: "save_dataset",
            expected: format!("{} metadata records", ds.episodes.len()),
            got: format!("{}", ds.metas.len()),
        });
    }
    Ok((ds.episodes.len(), frames, rows, cols))
}

fn kind_str(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Native => "native",
        DatasetKind::Intervention => "intervention",
    }
}

fn parse_kind(h: &mut HeaderLines) -> Result<DatasetKind> {
    let v: String = h.value("kind")?;
    match v.as_str() {
        "native" => Ok(DatasetKind::Native),
        "intervention" => Ok(DatasetKind::Intervention),
        other => Err(h.err(format!("unknown dataset kind `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Observations

/// Write per-episode observation blocks (`[episode][frame][electrode]`).
pub fn save_observations(path: &Path, y: &[Array2<f64>], sigma: f64, seed: u64) -> Result<()> {
    let first = y.first().ok_or(Error::InvalidArgument {
        context: "save_observations",
        detail: "no observation blocks".into(),
    })?;
    let (frames, electrodes) = first.dim();
    for (i, b) in y.iter().enumerate() {
        if b.dim() != first.dim() {
            return Err(Error::ShapeMismatch {
                context: "save_observations",
                expected: format!("{:?}", first.dim()),
                got: format!("block {i} has {:?}", b.dim()),
            });
        }
    }
    let mut header = String::new();
    header.push_str(OBS_MAGIC);
    header.push('\n');
    header.push_str(&format!("episodes {}\n", y.len()));
    header.push_str(&format!("frames {frames}\n"));
    header.push_str(&format!("electrodes {electrodes}\n"));
    header.push_str("dtype f32le\n");
    header.push_str(&format!("sigma {sigma}\n"));
    header.push_str(&format!("seed {seed}\n"));
    header.push_str("data\n");
    let mut file = create_new_file(path)?;
    file.write_all(header.as_bytes())?;
    for b in y {
        file.write_all(&f64s_to_f32_bytes(b.iter().copied()))?;
    }
    Ok(())
}

/// Load observation blocks plus the noise level and seed they were made
/// with.
pub fn load_observations(path: &Path) -> Result<(Vec<Array2<f64>>, f64, u64)> {
    require_artifact(path, "generate it with the `simulate` subcommand")?;
    let bytes = fs::read(path)?;
    let (header, payload) = split_container(path, &bytes)?;
    let mut h = HeaderLines::new(path, &header);
    h.expect_exact(OBS_MAGIC)?;
    let episodes: usize = h.value("episodes")?;
    let frames: usize = h.value("frames")?;
    let electrodes: usize = h.value("electrodes")?;
    h.expect_exact("dtype f32le")?;
    let sigma: f64 = h.value("sigma")?;
    let seed: u64 = h.value("seed")?;
    let values = f32_bytes_to_f64s(path, &payload, episodes * frames * electrodes)?;
    let per = frames * electrodes;
    let blocks = (0..episodes)
        .map(|e| {
            Array2::from_shape_vec((frames, electrodes), values[e * per..(e + 1) * per].to_vec())
                .expect("shape matches slice length")
        })
        .collect();
    Ok((blocks, sigma, seed))
}

// ---------------------------------------------------------------------------
// Checkpoints

fn write_paramset_payload(file: &mut fs::File, params: &ParamSet) -> Result<()> {
    for e in params.entries() {
        file.write_all(&f64s_to_f32_bytes(e.data.iter().copied()))?;
    }
    Ok(())
}

fn paramset_header(params: &ParamSet) -> String {
    let mut s = format!("arrays {}\n", params.len());
    for e in params.entries() {
        let dims: Vec<String> = e.data.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!(
            "array {} {} {} trainable {}\n",
            e.name,
            e.data.ndim(),
            dims.join(" "),
            u8::from(e.trainable)
        ));
    }
    s
}

fn read_paramset(path: &Path, h: &mut HeaderLines, payload: &[u8]) -> Result<ParamSet> {
    let count: usize = h.value("arrays")?;
    struct Decl {
        name: String,
        shape: Vec<usize>,
        trainable: bool,
    }
    let mut decls = Vec::with_capacity(count);
    let mut total = 0usize;
    for _ in 0..count {
        let fields = h.expect("array")?;
        // name ndims dims… trainable flag
        if fields.len() < 4 {
            return Err(h.err(format!("array record needs at least 4 fields, found {}", fields.len())));
        }
        let name = fields[0].clone();
        let ndims: usize = fields[1]
            .parse()
            .map_err(|_| h.err(format!("bad ndims for array {name}")))?;
        if fields.len() != 2 + ndims + 2 {
            return Err(h.err(format!("array {name} record has wrong field count")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for d in &fields[2..2 + ndims] {
            shape.push(d.parse::<usize>().map_err(|_| h.err(format!("bad dim for array {name}")))?);
        }
        if fields[2 + ndims] != "trainable" {
            return Err(h.err(format!("array {name} record missing `trainable` marker")));
        }
        let trainable = match fields[3 + ndims].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(h.err(format!("bad trainable flag `{other}` for array {name}"))),
        };
        total += shape.iter().product::<usize>();
        decls.push(Decl { name, shape, trainable });
    }
    let values = f32_bytes_to_f64s(path, payload, total)?;
    let mut params = ParamSet::new();
    let mut offset = 0usize;
    for d in decls {
        let len: usize = d.shape.iter().product();
        let data = ArrayD::from_shape_vec(IxDyn(&d.shape), values[offset..offset + len].to_vec())
            .expect("shape matches slice length");
        offset += len;
        params.add(d.name, data, d.trainable);
    }
    Ok(params)
}

/// Save a stage-1 checkpoint: architecture header, array declarations in
/// parameter order, then the packed f32 payload.
pub fn save_native_checkpoint(path: &Path, model: &NativeModel, step: u64) -> Result<()> {
    let a = model.arch;
    let mut header = String::new();
    header.push_str(CKPT_MAGIC);
    header.push('\n');
    header.push_str("model native\n");
    header.push_str(&format!("step {step}\n"));
    header.push_str(&format!(
        "arch grid_size {} obs_side {} k {} d_z {} rk4_steps {}\n",
        a.grid_size, a.obs_side, a.k, a.d_z, a.rk4_steps
    ));
    header.push_str(&paramset_header(&model.params));
    header.push_str("data\n");
    let mut file = create_new_file(path)?;
    file.write_all(header.as_bytes())?;
    write_paramset_payload(&mut file, &model.params)
}

fn parse_native_arch(h: &mut HeaderLines) -> Result<NativeArch> {
    let fields = h.expect("arch")?;
    let expect_tag = |h: &HeaderLines, fields: &[String], at: usize, tag: &str| -> Result<usize> {
        if fields.get(at).map(String::as_str) != Some(tag) {
            return Err(h.err(format!("arch line missing `{tag}`")));
        }
        fields[at + 1]
            .parse()
            .map_err(|_| h.err(format!("bad value for arch `{tag}`")))
    };
    if fields.len() != 10 {
        return Err(h.err(format!("native arch line needs 10 fields, found {}", fields.len())));
    }
    Ok(NativeArch {
        grid_size: expect_tag(h, &fields, 0, "grid_size")?,
        obs_side: expect_tag(h, &fields, 2, "obs_side")?,
        k: expect_tag(h, &fields, 4, "k")?,
        d_z: expect_tag(h, &fields, 6, "d_z")?,
        rk4_steps: expect_tag(h, &fields, 8, "rk4_steps")?,
    })
}

/// Load a stage-1 checkpoint; returns the model and the recorded step count.
pub fn load_native_checkpoint(path: &Path) -> Result<(NativeModel, u64)> {
    require_artifact(path, "train it with the `train-native` subcommand")?;
    let bytes = fs::read(path)?;
    let (header, payload) = split_container(path, &bytes)?;
    let mut h = HeaderLines::new(path, &header);
    h.expect_exact(CKPT_MAGIC)?;
    h.expect_exact("model native")?;
    let step: u64 = h.value("step")?;
    let arch = parse_native_arch(&mut h)?;
    let params = read_paramset(path, &mut h, &payload)?;
    Ok((NativeModel::from_params(arch, params)?, step))
}

/// Save a stage-2 checkpoint: only the trainable stage-2 arrays plus the
/// hash of the frozen stage-1 weights it was trained against.
pub fn save_intervention_checkpoint(path: &Path, model: &InterventionModel, step: u64) -> Result<()> {
    let mut header = String::new();
    header.push_str(CKPT_MAGIC);
    header.push('\n');
    header.push_str("model intervention\n");
    header.push_str(&format!("step {step}\n"));
    header.push_str(&format!("d_a {}\n", model.arch.d_a));
    header.push_str(&format!("native_hash {}\n", model.native_hash()));
    header.push_str(&paramset_header(&model.stage2));
    header.push_str("data\n");
    let mut file = create_new_file(path)?;
    file.write_all(header.as_bytes())?;
    write_paramset_payload(&mut file, &model.stage2)
}

/// Load a stage-2 checkpoint against an already-loaded stage-1 model. The
/// stage-1 weights must hash to the value recorded at save time.
pub fn load_intervention_checkpoint(path: &Path, native: NativeModel) -> Result<(InterventionModel, u64)> {
    require_artifact(path, "train it with the `train-intv` subcommand")?;
    let bytes = fs::read(path)?;
    let (header, payload) = split_container(path, &bytes)?;
    let mut h = HeaderLines::new(path, &header);
    h.expect_exact(CKPT_MAGIC)?;
    h.expect_exact("model intervention")?;
    let step: u64 = h.value("step")?;
    let d_a: usize = h.value("d_a")?;
    let recorded: String = h.value("native_hash")?;
    let actual = native.params.full_hash();
    if recorded != actual {
        return Err(Error::CheckpointMismatch {
            detail: format!(
                "stage-2 checkpoint was trained against stage-1 weights {recorded}, but the provided stage-1 model hashes to {actual}"
            ),
        });
    }
    let stage2 = read_paramset(path, &mut h, &payload)?;
    Ok((InterventionModel::from_params(native, d_a, stage2)?, step))
}

/// Save the GRU-baseline checkpoint.
pub fn save_gru_checkpoint(path: &Path, model: &GruBaselineModel, step: u64) -> Result<()> {
    let a = model.arch;
    let mut header = String::new();
    header.push_str(CKPT_MAGIC);
    header.push('\n');
    header.push_str("model gru-baseline\n");
    header.push_str(&format!("step {step}\n"));
    header.push_str(&format!(
        "arch grid_size {} obs_side {} k {} d_z {} rk4_steps {}\n",
        a.native.grid_size, a.native.obs_side, a.native.k, a.native.d_z, a.native.rk4_steps
    ));
    header.push_str(&format!("obs_frames {}\n", a.obs_frames));
    header.push_str(&paramset_header(&model.params));
    header.push_str("data\n");
    let mut file = create_new_file(path)?;
    file.write_all(header.as_bytes())?;
    write_paramset_payload(&mut file, &model.params)
}

/// Load the GRU-baseline checkpoint.
pub fn load_gru_checkpoint(path: &Path) -> Result<(GruBaselineModel, u64)> {
    require_artifact(path, "train it with the `train-gru-ablation` subcommand")?;
    let bytes = fs::read(path)?;
    let (header, payload) = split_container(path, &bytes)?;
    let mut h = HeaderLines::new(path, &header);
    h.expect_exact(CKPT_MAGIC)?;
    h.expect_exact("model gru-baseline")?;
    let step: u64 = h.value("step")?;
    let native = parse_native_arch(&mut h)?;
    let obs_frames: usize = h.value("obs_frames")?;
    let arch = GruArch { native, obs_frames };
    let params = read_paramset(path, &mut h, &payload)?;
    Ok((GruBaselineModel::from_params(arch, params)?, step))
}

// ---------------------------------------------------------------------------
// Reports

/// One row of the localization comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub pct_identified: f64,
    pub timestep_mae: f64,
    pub location_error_mm: f64,
}

fn metric_str(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.4}")
    }
}

/// Render rows as the tab-delimited comparison table.
pub fn report_to_text(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.model,
            metric_str(r.pct_identified),
            metric_str(r.timestep_mae),
            metric_str(r.location_error_mm)
        ));
    }
    s
}

/// Write the comparison table (append-only).
pub fn save_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut file = create_new_file(path)?;
    file.write_all(report_to_text(rows).as_bytes())?;
    Ok(())
}

/// Parse a comparison table back into rows.
pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    require_artifact(path, "produce it with the `eval` subcommand")?;
    let text = fs::read_to_string(path)?;
    let mut h = HeaderLines::new(path, &text);
    h.expect_exact(REPORT_HEADER)?;
    let mut rows = Vec::new();
    while h.cursor < h.lines.len() {
        let line = h.lines[h.cursor].clone();
        h.cursor += 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(h.err(format!("report row needs 4 columns, found {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            if s == "nan" {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|_| h.err(format!("bad metric value `{s}`")))
            }
        };
        rows.push(ReportRow {
            model: fields[0].to_string(),
            pct_identified: num(fields[1])?,
            timestep_mae: num(fields[2])?,
            location_error_mm: num(fields[3])?,
        });
    }
    Ok(rows)
}
