//! Checkpoint container: a directory with a `ckpt.json` manifest listing
//! component files (codebook, projection, speaker encoder, adaptor,
//! decoders and their configs). Each component file is a flat
//! little-endian f32 array behind a one-line shape header; the manifest
//! records a SHA-256 per component. Format id: `svc-ckpt-v1`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptor::MelAdaptorModel;
use crate::audio::MelConfig;
use crate::decoder::{DecoderConfig, DecoderModel, DecoderVariant, VcSystem};
use crate::error::{Error, Result};
use crate::nn::{Mat, Param};
use crate::speaker::SpeakerEncoderModel;
use crate::units::{UnitCodebook, UnitProjection};

pub const FORMAT: &str = "svc-ckpt-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentMeta {
    file: String,
    shape: Vec<usize>,
    sha256: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct DecoderMeta {
    use_speaker_embedding: bool,
    completed_stage: u8,
    k_units: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CkptMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    k_units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speaker_labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adaptor_src: Option<MelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adaptor_dst: Option<MelConfig>,
    #[serde(default)]
    adaptor_identity: bool,
    #[serde(default)]
    decoders: BTreeMap<String, DecoderMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CkptManifest {
    format: String,
    components: BTreeMap<String, ComponentMeta>,
    meta: CkptMeta,
}

impl Default for CkptManifest {
    fn default() -> Self {
        CkptManifest {
            format: FORMAT.to_string(),
            components: BTreeMap::new(),
            meta: CkptMeta::default(),
        }
    }
}

/// Handle on a checkpoint directory.
pub struct Checkpoint {
    dir: PathBuf,
}

impl Checkpoint {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Checkpoint { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join("ckpt.json")
    }

    fn read_manifest(&self) -> Result<CkptManifest> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(CkptManifest::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CkptManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("bad ckpt.json: {e}")))?;
        if manifest.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {}",
                manifest.format
            )));
        }
        Ok(manifest)
    }

    fn write_manifest(&self, manifest: &CkptManifest) -> Result<()> {
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::Checkpoint(format!("serialize ckpt.json: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn write_tensor(&self, name: &str, shape: &[usize], data: &[f32]) -> Result<ComponentMeta> {
        let file = format!("{name}.f32");
        let path = self.dir.join(&file);
        let mut bytes = format!(
            "svc-tensor v1 {} {}\n",
            shape.len(),
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        )
        .into_bytes();
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        Ok(ComponentMeta {
            file,
            shape: shape.to_vec(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }

    fn read_tensor(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let manifest = self.read_manifest()?;
        let meta = manifest
            .components
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing checkpoint component {name}")))?;
        let path = self.dir.join(&meta.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint(format!("{name}: missing tensor header")))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Checkpoint(format!("{name}: bad tensor header")))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("svc-tensor") || parts.next() != Some("v1") {
            return Err(Error::Checkpoint(format!("{name}: bad tensor magic")));
        }
        let ndim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("{name}: bad ndim")))?;
        let shape: Vec<usize> = parts
            .take(ndim)
            .map(|s| s.parse().map_err(|_| Error::Checkpoint(format!("{name}: bad shape"))))
            .collect::<Result<_>>()?;
        let expected: usize = shape.iter().product();
        let body = &bytes[nl + 1..];
        if body.len() != expected * 4 {
            return Err(Error::Checkpoint(format!(
                "{name}: expected {} f32 values, got {} bytes",
                expected,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((shape, data))
    }

    fn record_component(&self, name: &str, meta: ComponentMeta) -> Result<()> {
        let mut manifest = self.read_manifest()?;
        manifest.components.insert(name.to_string(), meta);
        self.write_manifest(&manifest)
    }

    /// Per-component SHA-256 digests (the reproducibility stamp inputs).
    pub fn component_hashes(&self) -> Result<BTreeMap<String, String>> {
        let manifest = self.read_manifest()?;
        Ok(manifest
            .components
            .iter()
            .map(|(k, v)| (k.clone(), v.sha256.clone()))
            .collect())
    }

    pub fn has_component(&self, name: &str) -> bool {
        self.read_manifest()
            .map(|m| m.components.contains_key(name))
            .unwrap_or(false)
    }

    pub fn save_codebook(&self, cb: &UnitCodebook) -> Result<()> {
        let meta = self.write_tensor(
            "codebook",
            &[cb.centroids.rows, cb.centroids.cols],
            &cb.centroids.data,
        )?;
        let mut manifest = self.read_manifest()?;
        manifest.components.insert("codebook".into(), meta);
        manifest.meta.k_units = Some(cb.k());
        self.write_manifest(&manifest)
    }

    pub fn load_codebook(&self) -> Result<UnitCodebook> {
        let (shape, data) = self.read_tensor("codebook")?;
        if shape.len() != 2 {
            return Err(Error::Checkpoint("codebook must be 2-D".into()));
        }
        Ok(UnitCodebook {
            centroids: Mat::from_vec(shape[0], shape[1], data),
        })
    }

    pub fn save_projection(&self, proj: &UnitProjection) -> Result<()> {
        let flat = flatten(&proj.layer.params());
        let meta = self.write_tensor("projection", &[flat.len()], &flat)?;
        self.record_component("projection", meta)
    }

    pub fn load_projection(&self) -> Result<UnitProjection> {
        let manifest = self.read_manifest()?;
        let k = manifest
            .meta
            .k_units
            .ok_or_else(|| Error::Checkpoint("missing k_units metadata".into()))?;
        let (_, data) = self.read_tensor("projection")?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand_chacha::rand_core::SeedableRng;
        let mut layer = crate::nn::Dense::seeded(k, crate::units::FRONTEND_DIM, &mut rng);
        unflatten(&data, &mut layer.params_mut())?;
        Ok(UnitProjection { layer })
    }

    pub fn save_speaker_encoder(&self, model: &SpeakerEncoderModel) -> Result<()> {
        let flat = flatten(&model.params());
        let meta = self.write_tensor("spk_encoder", &[flat.len()], &flat)?;
        let mut manifest = self.read_manifest()?;
        manifest.components.insert("spk_encoder".into(), meta);
        manifest.meta.speaker_labels = Some(model.speaker_labels.clone());
        self.write_manifest(&manifest)
    }

    pub fn load_speaker_encoder(&self) -> Result<SpeakerEncoderModel> {
        let manifest = self.read_manifest()?;
        let labels = manifest
            .meta
            .speaker_labels
            .clone()
            .ok_or_else(|| Error::Checkpoint("missing speaker labels metadata".into()))?;
        let (_, data) = self.read_tensor("spk_encoder")?;
        let mut model = SpeakerEncoderModel::seeded(labels.len().max(1), 0);
        model.speaker_labels = labels;
        unflatten(&data, &mut model.params_mut())?;
        Ok(model)
    }

    pub fn save_adaptor(&self, model: &MelAdaptorModel) -> Result<()> {
        let flat = flatten(&model.params());
        let meta = self.write_tensor("adaptor", &[flat.len()], &flat)?;
        let mut manifest = self.read_manifest()?;
        manifest.components.insert("adaptor".into(), meta);
        manifest.meta.adaptor_src = Some(model.src_config.clone());
        manifest.meta.adaptor_dst = Some(model.dst_config.clone());
        manifest.meta.adaptor_identity = model.is_identity();
        self.write_manifest(&manifest)
    }

    pub fn load_adaptor(&self) -> Result<MelAdaptorModel> {
        let manifest = self.read_manifest()?;
        let src = manifest
            .meta
            .adaptor_src
            .clone()
            .ok_or_else(|| Error::Checkpoint("missing adaptor source config".into()))?;
        let dst = manifest
            .meta
            .adaptor_dst
            .clone()
            .ok_or_else(|| Error::Checkpoint("missing adaptor destination config".into()))?;
        let (_, data) = self.read_tensor("adaptor")?;
        let mut model = if manifest.meta.adaptor_identity {
            MelAdaptorModel::identity(src)
        } else {
            MelAdaptorModel::seeded(src, dst, 0)
        };
        unflatten(&data, &mut model.params_mut())?;
        Ok(model)
    }

    pub fn save_decoder(&self, model: &DecoderModel) -> Result<()> {
        let name = format!("decoder_{}", model.variant().as_str());
        let flat = flatten(&model.params());
        let meta = self.write_tensor(&name, &[flat.len()], &flat)?;
        let mut manifest = self.read_manifest()?;
        manifest.components.insert(name.clone(), meta);
        manifest.meta.decoders.insert(
            name,
            DecoderMeta {
                use_speaker_embedding: model.cfg.use_speaker_embedding,
                completed_stage: model.completed_stage,
                k_units: model.cfg.k_units,
            },
        );
        self.write_manifest(&manifest)
    }

    pub fn load_decoder(&self, variant: DecoderVariant) -> Result<DecoderModel> {
        let name = format!("decoder_{}", variant.as_str());
        let manifest = self.read_manifest()?;
        let meta = manifest
            .meta
            .decoders
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing checkpoint component {name}")))?
            .clone();
        let (_, data) = self.read_tensor(&name)?;
        let mut cfg = DecoderConfig::new(variant, meta.k_units);
        cfg.use_speaker_embedding = meta.use_speaker_embedding;
        let mut model = DecoderModel::seeded(cfg, 0);
        model.completed_stage = meta.completed_stage;
        unflatten(&data, &mut model.params_mut())?;
        Ok(model)
    }

    /// Assemble a full conversion system, failing on any missing
    /// component.
    pub fn load_system(&self, variant: DecoderVariant, gl_iterations: usize) -> Result<VcSystem> {
        Ok(VcSystem {
            codebook: self.load_codebook()?,
            projection: self.load_projection()?,
            spk_encoder: self.load_speaker_encoder()?,
            adaptor: self.load_adaptor()?,
            decoder: self.load_decoder(variant)?,
            gl_iterations,
        })
    }
}

fn flatten(params: &[&Param]) -> Vec<f32> {
    let total: usize = params.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(total);
    for p in params {
        out.extend_from_slice(&p.w);
    }
    out
}

fn unflatten(data: &[f32], params: &mut [&mut Param]) -> Result<()> {
    let total: usize = params.iter().map(|p| p.len()).sum();
    if data.len() != total {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: file has {}, model needs {total}",
            data.len()
        )));
    }
    let mut offset = 0;
    for p in params.iter_mut() {
        let n = p.len();
        p.w.copy_from_slice(&data[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoder_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::open(dir.path()).unwrap();
        let mut cfg = DecoderConfig::new(DecoderVariant::SpeakerVc, 16);
        cfg.use_speaker_embedding = false;
        let mut model = DecoderModel::seeded(cfg, 42);
        model.completed_stage = 2;
        ckpt.save_decoder(&model).unwrap();
        let back = ckpt.load_decoder(DecoderVariant::SpeakerVc).unwrap();
        assert_eq!(back.completed_stage, 2);
        assert!(!back.cfg.use_speaker_embedding);
        assert_eq!(back.param_hash(), model.param_hash());
    }

    #[test]
    fn missing_component_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::open(dir.path()).unwrap();
        match ckpt.load_codebook() {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("missing")),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn all_components_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::open(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        use rand::Rng;
        let k = 8;
        let cb = UnitCodebook {
            centroids: Mat::from_vec(
                k,
                crate::units::FRONTEND_DIM,
                (0..k * crate::units::FRONTEND_DIM)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            ),
        };
        ckpt.save_codebook(&cb).unwrap();
        let proj = UnitProjection {
            layer: crate::nn::Dense::seeded(k, crate::units::FRONTEND_DIM, &mut rng),
        };
        ckpt.save_projection(&proj).unwrap();
        let mut spk = SpeakerEncoderModel::seeded(3, 9);
        spk.speaker_labels = vec!["a".into(), "b".into(), "c".into()];
        ckpt.save_speaker_encoder(&spk).unwrap();
        let adaptor = MelAdaptorModel::seeded(MelConfig::decoder(), MelConfig::speaker(), 3);
        ckpt.save_adaptor(&adaptor).unwrap();

        let cb2 = ckpt.load_codebook().unwrap();
        assert_eq!(cb2.centroids.data, cb.centroids.data);
        let proj2 = ckpt.load_projection().unwrap();
        assert_eq!(proj2.layer.w.w, proj.layer.w.w);
        let spk2 = ckpt.load_speaker_encoder().unwrap();
        assert_eq!(spk2.param_hash(), spk.param_hash());
        assert_eq!(spk2.speaker_labels, spk.speaker_labels);
        let ad2 = ckpt.load_adaptor().unwrap();
        assert_eq!(ad2.param_hash(), adaptor.param_hash());
        // hashes recorded for every component
        let hashes = ckpt.component_hashes().unwrap();
        assert_eq!(hashes.len(), 4);
    }
}
