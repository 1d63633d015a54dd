//! Binary scene checkpoints.
//!
//! Layout (little-endian): magic `SPSPLAT\0`, `u32` version, `u32` section
//! count, then sections of `u16` name length, UTF-8 name, `u8` dtype
//! (0 = f64, 1 = u8, 2 = u64), `u8` rank, `u64` dims, payload. Only base
//! environment maps are stored; mips are rebuilt on load.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{BandAppearance, IdentityClassifier, SpectralGaussian, SpectralScene, ENCODING_DIM};
use crate::color::{Band, BandTable};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::shading::EnvironmentLight;

const MAGIC: &[u8; 8] = b"SPSPLAT\0";
const VERSION: u32 = 1;

enum Payload {
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

struct Section {
    dims: Vec<u64>,
    payload: Payload,
}

impl Section {
    fn f64(dims: &[usize], data: Vec<f64>) -> Self {
        Self {
            dims: dims.iter().map(|&d| d as u64).collect(),
            payload: Payload::F64(data),
        }
    }
}

pub fn to_bytes(scene: &SpectralScene) -> Vec<u8> {
    let n = scene.gaussians.len();
    let mut sections: Vec<(String, Section)> = Vec::new();

    let bands: Vec<f64> = scene
        .band_table
        .bands
        .iter()
        .flat_map(|b| match *b {
            Band::Narrow {
                center_nm,
                delta_nm,
            } => [0.0, center_nm, delta_nm],
            Band::FullSpectra => [1.0, 0.0, 0.0],
        })
        .collect();
    sections.push(("bands".into(), Section::f64(&[scene.num_bands(), 3], bands)));
    sections.push((
        "flags".into(),
        Section {
            dims: vec![2],
            payload: Payload::U8(vec![
                scene.full_priors_initialized as u8,
                scene.shared_environment() as u8,
            ]),
        },
    ));

    let gather = |f: &dyn Fn(&SpectralGaussian) -> Vec<f64>| {
        scene.gaussians.iter().flat_map(f).collect::<Vec<f64>>()
    };
    sections.push((
        "mean".into(),
        Section::f64(&[n, 3], gather(&|g| g.mean.to_vec())),
    ));
    sections.push((
        "log_scale".into(),
        Section::f64(&[n, 3], gather(&|g| g.log_scale.to_vec())),
    ));
    sections.push((
        "rotation".into(),
        Section::f64(&[n, 4], gather(&|g| g.rotation.to_vec())),
    ));
    sections.push((
        "opacity_logit".into(),
        Section::f64(&[n], gather(&|g| vec![g.opacity_logit])),
    ));
    sections.push((
        "normal_params".into(),
        Section::f64(&[n, 2], gather(&|g| g.normal_params.to_vec())),
    ));

    for b in 0..scene.num_bands() {
        let p = format!("band{b}/");
        sections.push((
            format!("{p}diffuse_logits"),
            Section::f64(&[n, 3], gather(&|g| g.bands[b].diffuse_logits.to_vec())),
        ));
        sections.push((
            format!("{p}specular_logits"),
            Section::f64(&[n, 3], gather(&|g| g.bands[b].specular_logits.to_vec())),
        ));
        sections.push((
            format!("{p}roughness_logit"),
            Section::f64(&[n], gather(&|g| vec![g.bands[b].roughness_logit])),
        ));
        sections.push((
            format!("{p}encoding"),
            Section::f64(
                &[n, ENCODING_DIM],
                gather(&|g| g.bands[b].encoding.to_vec()),
            ),
        ));
        let clf = &scene.classifiers[b];
        let k = clf.num_classes();
        sections.push((
            format!("{p}classifier_weight"),
            Section::f64(
                &[k, ENCODING_DIM],
                clf.weight.iter().flatten().copied().collect(),
            ),
        ));
        sections.push((
            format!("{p}classifier_bias"),
            Section::f64(&[k], clf.bias.clone()),
        ));
    }

    for (e, env) in scene.environments.iter().enumerate() {
        let base = env.base();
        sections.push((
            format!("env{e}/base"),
            Section::f64(&[base.height(), base.width(), 3], base.data().to_vec()),
        ));
        sections.push((
            format!("env{e}/levels"),
            Section {
                dims: vec![1],
                payload: Payload::U64(vec![env.levels() as u64]),
            },
        ));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();
    out.write_u32::<LE>(sections.len() as u32).unwrap();
    for (name, s) in &sections {
        out.write_u16::<LE>(name.len() as u16).unwrap();
        out.write_all(name.as_bytes()).unwrap();
        let dtype = match s.payload {
            Payload::F64(_) => 0,
            Payload::U8(_) => 1,
            Payload::U64(_) => 2,
        };
        out.write_u8(dtype).unwrap();
        out.write_u8(s.dims.len() as u8).unwrap();
        for &d in &s.dims {
            out.write_u64::<LE>(d).unwrap();
        }
        match &s.payload {
            Payload::F64(v) => v.iter().for_each(|&x| out.write_f64::<LE>(x).unwrap()),
            Payload::U8(v) => out.extend_from_slice(v),
            Payload::U64(v) => v.iter().for_each(|&x| out.write_u64::<LE>(x).unwrap()),
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_sections(bytes: &[u8]) -> Result<BTreeMap<String, Section>> {
    let mut cur = Cursor::new(bytes);
    let eof = |_| bad("truncated file");
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.read_u32::<LE>().map_err(eof)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = cur.read_u32::<LE>().map_err(eof)?;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let len = cur.read_u16::<LE>().map_err(eof)? as usize;
        let mut name = vec![0u8; len];
        cur.read_exact(&mut name).map_err(eof)?;
        let name = String::from_utf8(name).map_err(|_| bad("section name is not UTF-8"))?;
        let dtype = cur.read_u8().map_err(eof)?;
        let rank = cur.read_u8().map_err(eof)? as usize;
        let dims: Vec<u64> = (0..rank)
            .map(|_| cur.read_u64::<LE>())
            .collect::<std::io::Result<_>>()
            .map_err(eof)?;
        let count: u64 = dims.iter().product();
        let remaining = (bytes.len() as u64).saturating_sub(cur.position());
        let elem = match dtype {
            0 | 2 => 8,
            1 => 1,
            other => return Err(bad(format!("section {name}: unknown dtype {other}"))),
        };
        if count.saturating_mul(elem) > remaining {
            return Err(bad(format!("section {name}: truncated payload")));
        }
        let payload = match dtype {
            0 => Payload::F64(
                (0..count)
                    .map(|_| cur.read_f64::<LE>())
                    .collect::<std::io::Result<_>>()
                    .map_err(eof)?,
            ),
            1 => {
                let mut v = vec![0u8; count as usize];
                cur.read_exact(&mut v).map_err(eof)?;
                Payload::U8(v)
            }
            _ => Payload::U64(
                (0..count)
                    .map(|_| cur.read_u64::<LE>())
                    .collect::<std::io::Result<_>>()
                    .map_err(eof)?,
            ),
        };
        map.insert(name, Section { dims, payload });
    }
    if cur.position() as usize != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(map)
}

fn take_f64<'a>(
    map: &'a BTreeMap<String, Section>,
    name: &str,
    dims: &[usize],
) -> Result<&'a [f64]> {
    let s = map
        .get(name)
        .ok_or_else(|| bad(format!("missing section {name}")))?;
    let want: Vec<u64> = dims.iter().map(|&d| d as u64).collect();
    if s.dims != want {
        return Err(bad(format!(
            "section {name}: shape {:?}, expected {:?}",
            s.dims, want
        )));
    }
    match &s.payload {
        Payload::F64(v) => Ok(v),
        _ => Err(bad(format!("section {name}: expected f64"))),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SpectralScene> {
    let map = read_sections(bytes)?;
    let bands_raw = map
        .get("bands")
        .ok_or_else(|| bad("missing section bands"))?;
    let n_bands = *bands_raw
        .dims
        .first()
        .ok_or_else(|| bad("bands: bad shape"))? as usize;
    let bands = take_f64(&map, "bands", &[n_bands, 3])?
        .chunks_exact(3)
        .map(|r| {
            if r[0] == 1.0 {
                Band::FullSpectra
            } else {
                Band::Narrow {
                    center_nm: r[1],
                    delta_nm: r[2],
                }
            }
        })
        .collect();
    let band_table = BandTable::new(bands)?;

    let flags = match map.get("flags").map(|s| &s.payload) {
        Some(Payload::U8(v)) if v.len() == 2 => v.clone(),
        _ => return Err(bad("missing or malformed flags")),
    };

    let n = map
        .get("mean")
        .and_then(|s| s.dims.first())
        .ok_or_else(|| bad("missing section mean"))? as &u64;
    let n = *n as usize;
    let mean = take_f64(&map, "mean", &[n, 3])?;
    let log_scale = take_f64(&map, "log_scale", &[n, 3])?;
    let rotation = take_f64(&map, "rotation", &[n, 4])?;
    let opacity = take_f64(&map, "opacity_logit", &[n])?;
    let normal = take_f64(&map, "normal_params", &[n, 2])?;

    let mut gaussians: Vec<SpectralGaussian> = (0..n)
        .map(|i| SpectralGaussian {
            mean: [mean[3 * i], mean[3 * i + 1], mean[3 * i + 2]],
            log_scale: [log_scale[3 * i], log_scale[3 * i + 1], log_scale[3 * i + 2]],
            rotation: [
                rotation[4 * i],
                rotation[4 * i + 1],
                rotation[4 * i + 2],
                rotation[4 * i + 3],
            ],
            opacity_logit: opacity[i],
            normal_params: [normal[2 * i], normal[2 * i + 1]],
            bands: vec![BandAppearance::default(); n_bands],
        })
        .collect();

    let mut classifiers = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let p = format!("band{b}/");
        let diffuse = take_f64(&map, &format!("{p}diffuse_logits"), &[n, 3])?;
        let specular = take_f64(&map, &format!("{p}specular_logits"), &[n, 3])?;
        let rough = take_f64(&map, &format!("{p}roughness_logit"), &[n])?;
        let enc = take_f64(&map, &format!("{p}encoding"), &[n, ENCODING_DIM])?;
        for (i, g) in gaussians.iter_mut().enumerate() {
            let a = &mut g.bands[b];
            a.diffuse_logits.copy_from_slice(&diffuse[3 * i..3 * i + 3]);
            a.specular_logits
                .copy_from_slice(&specular[3 * i..3 * i + 3]);
            a.roughness_logit = rough[i];
            a.encoding
                .copy_from_slice(&enc[ENCODING_DIM * i..ENCODING_DIM * (i + 1)]);
        }
        let bias_name = format!("{p}classifier_bias");
        let k = *map
            .get(&bias_name)
            .and_then(|s| s.dims.first())
            .ok_or_else(|| bad(format!("missing section {bias_name}")))? as usize;
        let weight = take_f64(&map, &format!("{p}classifier_weight"), &[k, ENCODING_DIM])?;
        let bias = take_f64(&map, &bias_name, &[k])?;
        classifiers.push(IdentityClassifier {
            weight: weight
                .chunks_exact(ENCODING_DIM)
                .map(|r| {
                    let mut row = [0.0; ENCODING_DIM];
                    row.copy_from_slice(r);
                    row
                })
                .collect(),
            bias: bias.to_vec(),
        });
    }

    let n_envs = if flags[1] == 1 { 1 } else { n_bands };
    let mut environments = Vec::with_capacity(n_envs);
    for e in 0..n_envs {
        let name = format!("env{e}/base");
        let dims = map
            .get(&name)
            .map(|s| s.dims.clone())
            .ok_or_else(|| bad(format!("missing section {name}")))?;
        if dims.len() != 3 || dims[2] != 3 {
            return Err(bad(format!("{name}: bad shape {dims:?}")));
        }
        let (h, w) = (dims[0] as usize, dims[1] as usize);
        let data = take_f64(&map, &name, &[h, w, 3])?.to_vec();
        let levels = match map.get(&format!("env{e}/levels")).map(|s| &s.payload) {
            Some(Payload::U64(v)) if v.len() == 1 => v[0] as usize,
            _ => return Err(bad(format!("missing env{e}/levels"))),
        };
        environments.push(EnvironmentLight::new(
            Image::from_vec(w, h, 3, data)?,
            levels,
        )?);
    }

    let scene = SpectralScene {
        band_table,
        gaussians,
        environments,
        classifiers,
        full_priors_initialized: flags[0] == 1,
    };
    scene.validate().map_err(|e| bad(e.to_string()))?;
    Ok(scene)
}

pub fn save(scene: &SpectralScene, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(scene)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SpectralScene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SpectralScene {
        let table = BandTable::from_centers(&[500.0, 600.0], 40.0).unwrap();
        let mut gaussians = Vec::new();
        for i in 0..4 {
            let mut g = SpectralGaussian::new([i as f64 * 0.1, -0.2, 0.3 + 1e-17], 3);
            g.rotation = [0.9, 0.1 * i as f64, -0.2, 0.05];
            g.bands[1].encoding[3] = std::f64::consts::PI * i as f64;
            g.bands[2].roughness_logit = -1.0 / 3.0;
            gaussians.push(g);
        }
        let env = EnvironmentLight::constant(8, 4, 2, [0.1, 0.2, 1.0 / 3.0]).unwrap();
        SpectralScene {
            band_table: table,
            gaussians,
            environments: vec![env.clone(), env.clone(), env],
            classifiers: vec![IdentityClassifier::zeros(3); 3],
            full_priors_initialized: true,
        }
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let s = scene();
        let a = to_bytes(&s);
        let back = from_bytes(&a).unwrap();
        assert_eq!(back, s);
        assert_eq!(to_bytes(&back), a);
    }

    #[test]
    fn shared_environment_round_trips() {
        let mut s = scene();
        s.environments.truncate(1);
        let back = from_bytes(&to_bytes(&s)).unwrap();
        assert!(back.shared_environment());
        assert_eq!(back, s);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&scene());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(from_bytes(&wrong), Err(Error::Checkpoint(_))));
    }
}
