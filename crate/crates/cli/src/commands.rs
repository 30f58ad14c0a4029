use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use limo_core::encoders::tokenize;
use limo_core::fsutil::write_atomic;
use limo_core::index::{
    bench_latency, bench_single_vector, evaluate, reports_csv, train_pq, Direction, EvalReport, GalleryIndex,
    SingleVectorIndex, StorageMode,
};
use limo_core::interaction_map::{compute_map, export_grid, token_heatmap, MapFormat};
use limo_core::kinematics::io::{features_from_bytes, features_from_csv, features_to_bytes, features_to_csv, read_motion};
use limo_core::kinematics::{extract_sequence, FeatureSequence, Skeleton};
use limo_core::late_interaction::interaction_matrix;
use limo_core::motion_image::{build_motion_image, write_image, write_png, FeatureLayout, PartProjectionSet};
use limo_core::pipeline::{self, Model, HISTORY_FILE};
use limo_core::synth::{self, Manifest, SynthConfig};
use limo_core::training::{history_csv, LossConfig};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{
    BenchArgs, Command, CompressArgs, EvalArgs, ExplainArgs, ExtractArgs, FormatArg, ImageArgs, IndexArgs, QueryArgs,
    SkeletonArg, SynthArgs, TrainArgs,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(limo_core::Error),
}

impl From<limo_core::Error> for CliError {
    fn from(e: limo_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(_) => EXIT_INTERNAL,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e) if e.is_data_error() => ("data", e.to_string()),
            CliError::Core(e) => ("io", e.to_string()),
        };
        json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Sizes the global rayon pool from `LIMO_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("LIMO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("LIMO_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

pub fn run(command: Command) -> CliResult<Value> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Image(a) => image(a),
        Command::Train(a) => train(a),
        Command::Index(a) => index(a),
        Command::Compress(a) => compress(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Explain(a) => explain(a),
    }
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

fn skeleton(arg: &SkeletonArg) -> CliResult<Skeleton> {
    match &arg.skeleton {
        Some(p) => {
            require(p)?;
            Ok(Skeleton::load(p)?)
        }
        None => Ok(Skeleton::smpl22()),
    }
}

fn load_model(dir: &Path) -> CliResult<Model> {
    require(dir)?;
    Ok(Model::load(dir)?)
}

fn load_index(path: &Path) -> CliResult<GalleryIndex> {
    require(path)?;
    Ok(GalleryIndex::load(path)?)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

fn joint_names(skeleton: &Skeleton) -> Vec<String> {
    skeleton.features().iter().map(|f| f.name.clone()).collect()
}

fn synth(a: SynthArgs) -> CliResult<Value> {
    let skel = skeleton(&a.skeleton)?;
    let config = SynthConfig {
        train: a.train,
        val: a.val,
        test: a.test,
        seed: a.seed,
    };
    let manifest = synth::write_dataset(&a.out, &config, &skel)?;
    log::info!("wrote {} items to {}", manifest.items.len(), a.out.display());
    Ok(json!({
        "command": "synth",
        "out": a.out,
        "seed": a.seed,
        "train": a.train,
        "val": a.val,
        "test": a.test,
        "items": manifest.items.len(),
    }))
}

fn extract(a: ExtractArgs) -> CliResult<Value> {
    require(&a.input)?;
    let skel = skeleton(&a.skeleton)?;
    let features = extract_sequence(&read_motion(&a.input, &skel)?, &skel)?;
    let bytes = match extension(&a.out).as_str() {
        "csv" => features_to_csv(&features, skel.feature_labels()).into_bytes(),
        _ => features_to_bytes(&features),
    };
    write_atomic(&a.out, &bytes)?;
    Ok(json!({
        "command": "extract",
        "out": a.out,
        "frames": features.len(),
        "features": features.rows.first().map_or(0, |r| r.len()),
    }))
}

fn read_features(path: &Path, skel: &Skeleton) -> CliResult<FeatureSequence> {
    require(path)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| limo_core::Error::Io { path: p.into(), source: e });
    Ok(match extension(path).as_str() {
        "json" => extract_sequence(&read_motion(path, skel)?, skel)?,
        "csv" => {
            let text = String::from_utf8(read(path)?)
                .map_err(|_| limo_core::Error::Format { what: "feature CSV", detail: "not UTF-8".into() })?;
            features_from_csv(&text, synth::FPS)?
        }
        _ => features_from_bytes(&read(path)?, synth::FPS)?,
    })
}

fn image(a: ImageArgs) -> CliResult<Value> {
    let skel = skeleton(&a.skeleton)?;
    let parts = match (&a.model, a.seed) {
        (Some(dir), _) => load_model(dir)?.params.parts,
        (None, Some(seed)) => PartProjectionSet::init(&FeatureLayout::from_skeleton(&skel), seed),
        (None, None) => return Err(CliError::Usage("image needs --model or --seed".into())),
    };
    let features = read_features(&a.input, &skel)?;
    let img = build_motion_image(&features, &parts)?;
    match extension(&a.out).as_str() {
        "png" => write_png(&a.out, &img)?,
        _ => write_image(&a.out, &img)?,
    }
    Ok(json!({
        "command": "image",
        "out": a.out,
        "frames": features.len(),
        "valid_frames": img.valid_frames,
    }))
}

fn train(a: TrainArgs) -> CliResult<Value> {
    require(&a.data)?;
    let skel = skeleton(&a.skeleton)?;
    let mut config = match &a.config {
        Some(p) => {
            require(p)?;
            LossConfig::load(p)?
        }
        None if a.seed.is_none() => {
            return Err(CliError::Usage("train needs --seed or a --config file".into()));
        }
        None => LossConfig::default(),
    };
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.lr {
        config.learning_rate = v;
    }
    if let Some(v) = a.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = a.lambda_mlm {
        config.lambda_mlm = v;
    }
    if let Some(v) = a.mask_rate {
        config.mask_rate = v;
    }
    config.validate()?;

    let start = Instant::now();
    let (model, history) = pipeline::train_on_dataset(&a.data, &skel, &config)?;
    let seconds = start.elapsed().as_secs_f64();
    model.save(&a.out)?;
    write_atomic(&a.out.join(HISTORY_FILE), history_csv(&history).as_bytes())?;
    let config_toml = toml::to_string(&config).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    write_atomic(&a.out.join("config.toml"), config_toml.as_bytes())?;

    let last = history.last();
    Ok(json!({
        "command": "train",
        "out": a.out,
        "epochs": history.len(),
        "seed": config.seed,
        "vocab": model.vocab.len(),
        "final": last,
        "seconds": seconds,
    }))
}

fn split_data(data: &Path, split: &str, skel: &Skeleton) -> CliResult<pipeline::SplitData> {
    require(data)?;
    let manifest = Manifest::load(data)?;
    Ok(pipeline::load_split(data, &manifest, split, skel)?)
}

fn index(a: IndexArgs) -> CliResult<Value> {
    let skel = skeleton(&a.skeleton)?;
    let model = load_model(&a.model)?;
    let split = split_data(&a.data, &a.split, &skel)?;
    let direction: Direction = a.direction.into();
    let ix = pipeline::build_split_index(&model, &split, direction)?;
    ix.save(&a.out)?;
    Ok(json!({
        "command": "index",
        "out": a.out,
        "direction": direction,
        "mode": ix.mode(),
        "items": ix.len(),
        "rows": ix.total_rows(),
        "dim": ix.dim(),
        "bytes": ix.payload_bytes(),
    }))
}

fn compress(a: CompressArgs) -> CliResult<Value> {
    let source = load_index(&a.index)?;
    if source.mode() != StorageMode::Float32 {
        return Err(CliError::Usage(format!(
            "compress needs a float32 index, {} is {}",
            a.index.display(),
            source.mode()
        )));
    }
    let mode: StorageMode = a.mode.into();
    let out = match mode {
        StorageMode::Float32 => source.clone(),
        StorageMode::Pq => {
            let seed = a.seed.ok_or_else(|| CliError::Usage("--mode pq needs --seed".into()))?;
            let rows = source.sample_rows(a.train_rows, seed)?;
            let codebook = train_pq(&rows, source.dim(), a.subspaces, a.bits, a.iters, seed)?;
            source.encode_pq(&codebook)?
        }
        StorageMode::Binary => source.encode_binary()?,
    };
    out.save(&a.out)?;
    Ok(json!({
        "command": "compress",
        "out": a.out,
        "mode": mode,
        "items": out.len(),
        "source_bytes": source.payload_bytes(),
        "bytes": out.payload_bytes(),
        "aux_bytes": out.aux_bytes(),
        "ratio": source.payload_bytes() as f64 / out.payload_bytes() as f64,
    }))
}

fn query(a: QueryArgs) -> CliResult<Value> {
    let model = load_model(&a.model)?;
    let ix = load_index(&a.index)?;
    let (matrix, direction) = match (&a.text, &a.motion) {
        (Some(text), _) => (model.encode_caption(text)?.matrix, Direction::T2M),
        (None, Some(path)) => {
            require(path)?;
            let skel = skeleton(&a.skeleton)?;
            (model.encode_motion(&read_motion(path, &skel)?, &skel)?.matrix, Direction::M2T)
        }
        (None, None) => return Err(CliError::Usage("query needs --text or --motion".into())),
    };
    let hits = ix.search(matrix.view(), a.k, direction)?;
    Ok(json!({
        "command": "query",
        "direction": direction,
        "mode": ix.mode(),
        "hits": hits,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankingsFile {
    #[serde(default)]
    direction: Option<Direction>,
    queries: Vec<RankedQuery>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankedQuery {
    ranking: Vec<String>,
    relevant: Vec<String>,
}

fn eval(a: EvalArgs) -> CliResult<Value> {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(CliError::Usage("--k values must be positive".into()));
    }
    let reports: Vec<EvalReport> = if let Some(path) = &a.rankings {
        require(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| limo_core::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let file: RankingsFile = serde_json::from_str(&text).map_err(|source| limo_core::Error::Json {
            path: path.clone(),
            source,
        })?;
        let rankings: Vec<Vec<String>> = file.queries.iter().map(|q| q.ranking.clone()).collect();
        let relevant: Vec<HashSet<String>> =
            file.queries.iter().map(|q| q.relevant.iter().cloned().collect()).collect();
        vec![evaluate(&rankings, &relevant, &a.k, file.direction.unwrap_or(Direction::T2M))?]
    } else {
        let (Some(data), Some(model_dir)) = (&a.data, &a.model) else {
            return Err(CliError::Usage("eval needs --rankings, or --data with --model".into()));
        };
        let skel = skeleton(&a.skeleton)?;
        let model = load_model(model_dir)?;
        let split = split_data(data, &a.split, &skel)?;
        match &a.index {
            Some(path) => {
                let ix = load_index(path)?;
                vec![pipeline::evaluate_split(&model, &split, a.direction.into(), Some(&ix), &a.k)?]
            }
            None => [Direction::T2M, Direction::M2T]
                .into_iter()
                .map(|d| pipeline::evaluate_split(&model, &split, d, None, &a.k))
                .collect::<limo_core::Result<_>>()?,
        }
    };
    if let Some(out) = &a.out {
        let body = match a.format {
            FormatArg::Csv => reports_csv(&reports),
            FormatArg::Json => serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n",
        };
        write_atomic(out, body.as_bytes())?;
    }
    Ok(json!({ "command": "eval", "reports": reports }))
}

fn bench(a: BenchArgs) -> CliResult<Value> {
    let skel = skeleton(&a.skeleton)?;
    let model = load_model(&a.model)?;
    let ix = load_index(&a.index)?;
    let split = split_data(&a.data, &a.split, &skel)?;
    let direction: Direction = a.direction.into();
    let queries = pipeline::query_matrices(&model, &split, direction)?;
    let mut report = bench_latency(&ix, &queries, direction, a.k, a.warmup, a.queries)?;
    if ix.mode() == StorageMode::Float32 && direction == Direction::T2M {
        let pooled = SingleVectorIndex::from_index(&ix)?;
        report.single_vector = Some(bench_single_vector(&pooled, &queries, a.k, a.warmup, a.queries)?);
    }
    if let Some(out) = &a.out {
        let csv = format!("{}\n{}\n", limo_core::index::LatencyReport::CSV_HEADER, report.csv_row());
        write_atomic(out, csv.as_bytes())?;
    }
    Ok(json!({ "command": "bench", "report": report }))
}

fn map_format(path: &Path) -> CliResult<MapFormat> {
    extension(path)
        .parse()
        .map_err(|_| CliError::Usage(format!("{}: output must end in .csv, .pgm or .png", path.display())))
}

fn explain(a: ExplainArgs) -> CliResult<Value> {
    let format = map_format(&a.out)?;
    require(&a.motion)?;
    let skel = skeleton(&a.skeleton)?;
    let model = load_model(&a.model)?;
    let motion = read_motion(&a.motion, &skel)?;
    let text = model.encode_caption(&a.text)?;
    let patches = model.encode_motion(&motion, &skel)?;
    let s = interaction_matrix(&text, &patches)?;
    let map = compute_map(&s, Some(&model.vocab))?;
    let names = joint_names(&skel);
    map.export(&a.out, format, &names, motion.len())?;

    let mut token_files: Vec<PathBuf> = Vec::new();
    if let Some(dir) = &a.token_maps {
        std::fs::create_dir_all(dir).map_err(|e| limo_core::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (i, at) in map.attributions.iter().enumerate() {
            let path = dir.join(format!("{i:02}_{}.csv", at.token.replace(['/', '\\', '<', '>'], "_")));
            export_grid(&token_heatmap(&s, i)?, &path, MapFormat::Csv, &names, motion.len())?;
            token_files.push(path);
        }
    }
    let (row, col) = map.argmax_cell();
    Ok(json!({
        "command": "explain",
        "out": a.out,
        "tokens": tokenize(&a.text, &model.vocab)?.len(),
        "score": s.maxsim(),
        "argmax_cell": [row, col],
        "argmax_joint": names[map.argmax_row()],
        "total": map.total(),
        "attributions": map.attributions,
        "token_maps": token_files,
    }))
}
