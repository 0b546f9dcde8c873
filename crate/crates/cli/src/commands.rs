use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use wavemae::eval::features::extract_features_at;
use wavemae::eval::recon::write_dumps;
use wavemae::eval::tuples::sign_flip_p_value;
use wavemae::eval::{
    gpe_embeddings_eval, gpe_pairs_eval, make_tuples, reconstruction_report, sample_pairs, GpeSource,
    OraclePredictor, ZeroPredictor,
};
use wavemae::geo::GeoCoord;
use wavemae::io::{read_msr, write_msr, RunConfig};
use wavemae::model::gradcheck::{gradcheck as run_gradcheck, GradcheckOptions};
use wavemae::model::{load_checkpoint, Model, ModelConfig};
use wavemae::raster::GeoMeta;
use wavemae::tokenizer::{tube_mask, PatchConfig};
use wavemae::training::{pretrain as run_pretrain, synth_dataset, SynthSpec};
use wavemae::wavelet::{component_order, dwt_multi, idwt_multi, Component, DecompositionSet, DetailBands, WaveletFilter};
use wavemae::{Error, Raster};

use crate::{
    DwtArgs, FeaturesArgs, GradcheckArgs, IdwtArgs, PairsArgs, PretrainArgs, ReconstructArgs, SynthArgs, TuplesArgs,
};

pub enum CliError {
    Core(Error),
    CheckFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::CheckFailed(_) => "check_failed",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::CheckFailed(m) => m.clone(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn report_error(category: &str, message: &str) {
    eprintln!("{}", json!({ "error": category, "message": message }));
}

pub const COMMAND_FILE: &str = "command.json";
pub const REPORT_FILE: &str = "report.json";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).map_err(io(path))
}

/// Writes `command.json`: subcommand, version, arguments and resolved inputs.
fn echo(dir: &Path, command: &str, args: &impl Serialize, resolved: Value) -> Result<()> {
    create_dir(dir)?;
    write_json(
        &dir.join(COMMAND_FILE),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
            "resolved": resolved,
        }),
    )
}

fn load_run(path: &Option<PathBuf>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let run = load_run(&a.config)?;
    let mut spec = run.synth.unwrap_or_else(|| SynthSpec::new(128, 4, 64, 64, 0));
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(count, channels, height, width, seed, levels, geo_signal, texture_strength);
    let data = synth_dataset(&spec)?;
    echo(&a.out, "synth", &a, serde_json::to_value(&spec)?)?;
    for (i, x) in data.iter().enumerate() {
        write_msr(x, a.out.join(format!("sample_{i:05}.msr")))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    level: usize,
    component: String,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    levels: usize,
    channels: usize,
    height: usize,
    width: usize,
    #[serde(default)]
    geo: Option<GeoMeta>,
    components: Vec<ManifestEntry>,
}

const MANIFEST_FILE: &str = "manifest.json";

fn component_file(level: usize, c: Component) -> String {
    format!("L{level}_{c}.msr")
}

pub fn dwt(a: DwtArgs) -> Result<()> {
    let x = read_msr(&a.input)?;
    let s = dwt_multi(&x, a.levels, &WaveletFilter::haar())?;
    echo(&a.out, "dwt", &a, json!({ "filter": "haar" }))?;
    let mut components = Vec::new();
    for ((level, c), band) in s.iter() {
        let file = component_file(level, c);
        write_msr(band, a.out.join(&file))?;
        components.push(ManifestEntry {
            level,
            component: c.to_string(),
            file,
        });
    }
    let (channels, height, width) = x.shape();
    write_json(
        &a.out.join(MANIFEST_FILE),
        &Manifest {
            levels: a.levels,
            channels,
            height,
            width,
            geo: x.geo.clone(),
            components,
        },
    )
}

pub fn idwt(a: IdwtArgs) -> Result<()> {
    let mpath = a.input.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let find = |level: usize, c: Component| -> Result<Raster<f32>> {
        let e = m
            .components
            .iter()
            .find(|e| e.level == level && Component::parse(&e.component) == Some(c))
            .ok_or_else(|| Error::Format(format!("manifest lacks level {level} {c}")))?;
        Ok(read_msr(a.input.join(&e.file))?)
    };
    let mut details = Vec::with_capacity(m.levels);
    for level in 1..=m.levels {
        details.push(DetailBands {
            lh: find(level, Component::LH)?,
            hl: find(level, Component::HL)?,
            hh: find(level, Component::HH)?,
        });
    }
    let s = DecompositionSet {
        details,
        ll: find(m.levels, Component::LL)?,
    };
    debug_assert_eq!(s.component_count(), component_order(m.levels).len());
    let x = idwt_multi(&s, &WaveletFilter::haar())?;
    if x.shape() != (m.channels, m.height, m.width) {
        return Err(Error::Shape(format!("components rebuild {:?}, manifest says {:?}", x.shape(), (m.channels, m.height, m.width))).into());
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_msr(&x.with_geo(m.geo), &a.out)?;
    Ok(())
}

fn read_dataset(dir: &Path) -> Result<Vec<Raster<f32>>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "msr"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no .msr files in {}", dir.display())).into());
    }
    files.iter().map(|f| Ok(read_msr(f)?)).collect()
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut run = load_run(&a.config)?;
    if let Some(v) = a.seed {
        run.train.seed = v;
    }
    if let Some(v) = a.epochs {
        run.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        run.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        run.train.lr = v;
    }
    if let Some(v) = a.mask_ratio {
        run.train.mask_ratio = v;
    }
    if let Some(d) = &a.dataset {
        run.train.dataset = Some(d.clone());
    }
    run.train.validate()?;
    let data = match (&run.train.dataset, &run.synth) {
        (Some(d), _) => read_dataset(d)?,
        (None, Some(spec)) => synth_dataset(spec)?,
        (None, None) => {
            return Err(Error::Config("pretrain needs --dataset or a synth section in the config".into()).into())
        }
    };
    echo(&a.out, "pretrain", &a, serde_json::to_value(&run)?)?;
    let report = run_pretrain(&run, &data, Some(&a.out))?;
    write_json(
        &a.out.join(REPORT_FILE),
        &json!({
            "steps": report.state.step,
            "epoch_means": report.epoch_means,
            "dead_params": report.dead_params,
            "checkpoint": report.checkpoint,
        }),
    )
}

pub fn pairs(a: PairsArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?.model),
        None => None,
    };
    let src = match (&model, a.raw) {
        (_, true) => GpeSource::Raw { cutoff: a.cutoff },
        (Some(m), false) => GpeSource::Projected(m),
        (None, false) => return Err(Error::Config("give --checkpoint or --raw".into()).into()),
    };
    let pairs = sample_pairs(a.pairs, a.seed);
    let r = gpe_pairs_eval(src, &pairs)?;
    echo(&a.out, "eval-gpe-pairs", &a, json!({ "source": if a.raw { "raw" } else { "projected" } }))?;
    write_json(&a.out.join(REPORT_FILE), &r)
}

pub fn tuples(a: TuplesArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let c = &model.config;
    let mut spec = SynthSpec::new(1, c.channels, c.height, c.width, a.seed);
    spec.levels = c.levels;
    let tuples = make_tuples(&spec, a.tuples, a.seed)?;
    let r = gpe_embeddings_eval(&model, &tuples)?;
    let p = if a.permutations > 0 {
        Some(sign_flip_p_value(&r.margins(), a.permutations, a.seed))
    } else {
        None
    };
    echo(&a.out, "eval-gpe-tuples", &a, serde_json::to_value(&spec)?)?;
    write_json(&a.out.join(REPORT_FILE), &json!({ "report": r, "sign_flip_p": p }))
}

pub fn features(a: FeaturesArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let x = read_msr(&a.input)?;
    let layers = a.layers.clone().unwrap_or_else(|| model.config.feature_layers());
    let f = extract_features_at(&model, &x, &layers)?;
    echo(&a.out, "features", &a, json!({ "layers": layers }))?;
    write_msr(&f.to_raster(), a.out.join("features.msr"))?;
    write_json(
        &a.out.join(REPORT_FILE),
        &json!({ "dim": f.dim, "fh": f.fh, "fw": f.fw, "layers": layers }),
    )
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let x = read_msr(&a.input)?;
    let (c, h, w) = x.shape();
    let geometry = || -> Result<PatchConfig> { Ok(PatchConfig::new(c, h, w, a.base_patch, a.levels)?) };
    let r = if a.oracle {
        reconstruction_report(&OraclePredictor(geometry()?), &x, a.mask_ratio, a.seed, 1.0)?
    } else if a.zero {
        reconstruction_report(&ZeroPredictor(geometry()?), &x, a.mask_ratio, a.seed, 1.0)?
    } else {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("give --checkpoint, --oracle or --zero".into()))?;
        let model = load_checkpoint(path)?.model;
        let beta = model.config.smooth_l1_beta;
        reconstruction_report(&model, &x, a.mask_ratio, a.seed, beta)?
    };
    echo(&a.out, "reconstruct", &a, Value::Null)?;
    write_json(&a.out.join(REPORT_FILE), &r)?;
    if a.dump {
        write_dumps(&r, &a.out.join("dumps"))?;
    }
    Ok(())
}

/// The Tiny configuration: width 64, 2 blocks, decoder width 32 with 2
/// blocks, 3 levels, 32x32 inputs with 2 bands.
pub fn gradcheck_setup(seed: u64) -> Result<(Model, Raster<f64>)> {
    use rand::{Rng, SeedableRng};
    let cfg = ModelConfig::tiny(2, 32, 32);
    let model = Model::new(cfg, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Raster::<f64>::from_fn(2, 32, 32, |_, _, _| rng.gen_range(0.0..1.0)).with_geo(Some(GeoMeta {
        coord: GeoCoord::new(rng.gen_range(-80.0..80.0), rng.gen_range(-180.0..180.0))?,
        category: None,
    }));
    Ok((model, x))
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let (model, x) = gradcheck_setup(a.seed)?;
    let mask = tube_mask(model.patch_config().n_spatial(), 0.75, a.seed)?;
    let opts = GradcheckOptions {
        samples: a.samples,
        step: a.step,
        floor: a.floor,
        richardson: true,
        seed: a.seed,
    };
    let r = run_gradcheck(&model, &x, &mask, opts)?;
    let pass = r.max_rel_error < a.tolerance;
    let summary = json!({ "pass": pass, "tolerance": a.tolerance, "report": r });
    if let Some(dir) = &a.out {
        echo(dir, "gradcheck", &a, json!({ "model": model.config }))?;
        write_json(&dir.join(REPORT_FILE), &summary)?;
    }
    println!("{summary}");
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "max relative gradient error {:e} >= {:e} at {}",
            r.max_rel_error, a.tolerance, r.worst.param
        )))
    }
}
