use std::fs;
use std::io::Write;
use std::path::Path;

use cpg_core::gradfield::{correlate, extract_boundary_with, magnitude_direction};
use cpg_core::metrics::{argmax_labels, boundary_sharpness, miou, transect, Axis};
use cpg_core::synthlab::{generate_scene, train_toy, SceneSpec, TrainerConfig};
use cpg_core::tensor::{export_pgm, read_tensor_file, Tensor};
use cpg_core::{
    combined_loss, generate_kernel, one_hot, softmax, CpgConfig, Error, LabelMap, LogitMap,
    ProbKind, ProbMap, Result,
};
use serde::Serialize;

use crate::{
    Cli, Command, EvalArgs, GradArgs, LabelInput, LossArgs, ProbArgs, TrainArgs, TransectArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Kernel { size, out } => kernel(cli, *size, out.as_deref()),
        Command::Prob(args) => prob(args),
        Command::Grad(args) => grad(cli, args),
        Command::Boundary(args) => boundary(cli, args),
        Command::Loss(args) => loss(cli, args),
        Command::Eval(args) => eval(cli, args),
        Command::Transect(args) => transect_cmd(args),
        Command::TrainToy(args) => train(cli, args),
    }
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    text
}

fn print_json(value: &impl Serialize) -> Result<()> {
    write_stdout(to_json(value).as_bytes())
}

#[derive(Serialize)]
struct KernelOut<'a> {
    size: usize,
    kx: Vec<&'a [f32]>,
}

#[derive(Serialize)]
struct GradOut {
    dims: Vec<usize>,
    kernel: usize,
    max_magnitude: f32,
}

#[derive(Serialize)]
struct BoundaryOut<'a> {
    kernel: usize,
    n_plus: usize,
    per_class: &'a [usize],
}

#[derive(Serialize)]
struct LossOut<'a> {
    ce: f32,
    cpg: f32,
    combined: f32,
    n_plus: usize,
    per_class: &'a [usize],
}

#[derive(Serialize)]
struct EvalOut<'a> {
    miou: f32,
    per_class: &'a [f32],
    sharpness: f32,
}

#[derive(Serialize)]
struct TrainOut<'a> {
    scene: &'a str,
    config: &'a TrainerConfig,
    ce: f32,
    cpg: f32,
    combined: f32,
    n_plus: usize,
    miou: f32,
    per_class: &'a [f32],
    sharpness: f32,
}

fn save_tensor(t: &Tensor<f32>, path: &Path) -> Result<()> {
    fs::write(path, t.to_bytes())?;
    Ok(())
}

fn load_labels(path: &Path, classes: usize, ignore_index: i32) -> Result<LabelMap> {
    let t = read_tensor_file(path)?.into_i32()?;
    LabelMap::from_tensor(&t, classes, Some(ignore_index))
}

fn load_label_input(input: &LabelInput) -> Result<LabelMap> {
    load_labels(&input.labels, input.classes, input.ignore_index)
}

fn load_logits(path: &Path) -> Result<LogitMap> {
    LogitMap::from_tensor(read_tensor_file(path)?.into_f32()?)
}

fn kernel(cli: &Cli, size: usize, out: Option<&Path>) -> Result<()> {
    let k = generate_kernel(size)?;
    if let Some(path) = out {
        save_tensor(&Tensor::new(vec![size, size], k.kx().to_vec())?, path)?;
    }
    if cli.json {
        let rows: Vec<&[f32]> = k.kx().chunks_exact(size).collect();
        print_json(&KernelOut { size, kx: rows })
    } else {
        write_stdout(k.format_kx().as_bytes())
    }
}

fn prob(args: &ProbArgs) -> Result<()> {
    let map = match (&args.labels, &args.logits) {
        (Some(path), None) => {
            let classes = args
                .classes
                .ok_or_else(|| Error::Argument("--labels needs --classes".into()))?;
            one_hot(&load_labels(path, classes, args.ignore_index)?)
        }
        (None, Some(path)) => softmax(&load_logits(path)?),
        _ => {
            return Err(Error::Argument(
                "exactly one of --labels / --logits is required".into(),
            ))
        }
    };
    let bytes = map.to_tensor().to_bytes();
    match &args.out {
        Some(path) => Ok(fs::write(path, bytes)?),
        None => write_stdout(&bytes),
    }
}

fn grad(cli: &Cli, args: &GradArgs) -> Result<()> {
    let labels = load_label_input(&args.input)?;
    let k = generate_kernel(args.kernel)?;
    let field = correlate(&one_hot(&labels), &k)?;
    if let Some(path) = &args.out {
        save_tensor(&field.to_tensor(), path)?;
    }
    let (mag, _) = magnitude_direction(&field);
    let max_mag = mag.data().iter().copied().fold(0.0f32, f32::max);
    if let Some(dir) = &args.pgm_magnitude {
        fs::create_dir_all(dir)?;
        let hi = if max_mag > 0.0 { max_mag } else { 1.0 };
        let shape = field.shape();
        for c in 0..shape.classes {
            let plane = &mag.data()[c * shape.pixels()..(c + 1) * shape.pixels()];
            let t = Tensor::new(vec![shape.height, shape.width], plane.to_vec())?;
            let mut bytes = Vec::new();
            export_pgm(&t, 0.0, hi, &mut bytes)?;
            fs::write(dir.join(format!("magnitude_class{c}.pgm")), bytes)?;
        }
    }
    let dims = field.to_tensor().dims().to_vec();
    if cli.json {
        print_json(&GradOut {
            dims,
            kernel: args.kernel,
            max_magnitude: max_mag,
        })
    } else {
        write_stdout(
            format!(
                "dims {dims:?}\nkernel {}\nmax_magnitude {max_mag}\n",
                args.kernel
            )
            .as_bytes(),
        )
    }
}

fn boundary(cli: &Cli, args: &crate::BoundaryArgs) -> Result<()> {
    let labels = load_label_input(&args.input)?;
    let k = generate_kernel(args.kernel)?;
    let field = correlate(&one_hot(&labels), &k)?;
    let mask = extract_boundary_with(&field, args.collapse.into());
    if let Some(path) = &args.out {
        save_tensor(&mask.to_tensor(), path)?;
    }
    if cli.json {
        print_json(&BoundaryOut {
            kernel: args.kernel,
            n_plus: mask.n_plus(),
            per_class: mask.per_class_counts(),
        })
    } else {
        let counts: Vec<String> = mask
            .per_class_counts()
            .iter()
            .map(|c| c.to_string())
            .collect();
        write_stdout(
            format!("n_plus {}\nper_class {}\n", mask.n_plus(), counts.join(" ")).as_bytes(),
        )
    }
}

fn loss(cli: &Cli, args: &LossArgs) -> Result<()> {
    let logits = load_logits(&args.logits)?;
    let classes = args.classes.unwrap_or(logits.shape().classes);
    let labels = load_labels(&args.labels, classes, args.ignore_index)?;
    let cfg = CpgConfig::new(args.kernel, args.alpha)
        .with_ce(args.ce.into())
        .with_collapse(args.collapse.into());
    let report = combined_loss(&logits, &labels, &cfg)?;
    if let Some(path) = &args.grad_out {
        save_tensor(&report.grad_logits.to_tensor(), path)?;
    }
    if cli.json {
        print_json(&LossOut {
            ce: report.ce,
            cpg: report.cpg,
            combined: report.combined,
            n_plus: report.n_plus,
            per_class: &report.per_class_boundary_counts,
        })
    } else {
        write_stdout(
            format!(
                "ce {}\ncpg {}\ncombined {}\nn_plus {}\n",
                report.ce, report.cpg, report.combined, report.n_plus
            )
            .as_bytes(),
        )
    }
}

fn load_pred(path: &Path) -> Result<ProbMap> {
    ProbMap::from_tensor(read_tensor_file(path)?.into_f32()?, ProbKind::Predicted)
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let pred = load_pred(&args.pred)?;
    let labels = load_labels(&args.labels, pred.shape().classes, args.ignore_index)?;
    let iou = miou(&argmax_labels(&pred), &labels)?;
    let sharpness = boundary_sharpness(&pred, &labels)?;
    if cli.json {
        print_json(&EvalOut {
            miou: iou.mean,
            per_class: &iou.per_class,
            sharpness,
        })
    } else {
        let per: Vec<String> = iou.per_class.iter().map(|v| v.to_string()).collect();
        write_stdout(
            format!(
                "miou {}\nper_class {}\nsharpness {sharpness}\n",
                iou.mean,
                per.join(" ")
            )
            .as_bytes(),
        )
    }
}

fn transect_cmd(args: &TransectArgs) -> Result<()> {
    let pred = load_pred(&args.pred)?;
    let labels = load_labels(&args.labels, pred.shape().classes, args.ignore_index)?;
    let (axis, index) = match (args.row, args.col) {
        (Some(r), None) => (Axis::Row, r),
        (None, Some(c)) => (Axis::Column, c),
        _ => {
            return Err(Error::Argument(
                "exactly one of --row / --col is required".into(),
            ))
        }
    };
    let t = transect(&pred, &one_hot(&labels), args.class, axis, index)?;
    let csv = t.to_csv();
    match &args.out {
        Some(path) => Ok(fs::write(path, csv)?),
        None => write_stdout(csv.as_bytes()),
    }
}

fn load_scene(scene: &str) -> Result<SceneSpec> {
    if let Some(name) = scene.strip_prefix("builtin:") {
        return SceneSpec::builtin(name)
            .ok_or_else(|| Error::Argument(format!("unknown builtin scene {name:?}")));
    }
    SceneSpec::from_json(&fs::read_to_string(scene)?)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let spec = load_scene(&args.scene)?;
    let labels = generate_scene(&spec)?;
    let cfg = TrainerConfig {
        steps: args.steps as usize,
        lr: args.lr,
        lr_power: args.lr_power,
        blur_radius: args.blur,
        cpg: CpgConfig::new(args.kernel, args.alpha)
            .with_ce(args.ce.into())
            .with_collapse(args.collapse.into()),
        seed: cli.seed,
    };
    let outcome = train_toy(&labels, &cfg)?;
    let fit = outcome.evaluate(&labels)?;

    let dir = &args.out_dir;
    fs::create_dir_all(dir)?;
    let mut history = String::from("step,lr,ce,cpg,combined\n");
    for s in &outcome.history {
        history.push_str(&format!(
            "{},{},{},{},{}\n",
            s.step, s.lr, s.ce, s.cpg, s.combined
        ));
    }
    fs::write(dir.join("history.csv"), history)?;
    fs::write(
        dir.join("logits.cpgt"),
        outcome.logits.to_tensor().to_bytes(),
    )?;
    fs::write(dir.join("labels.cpgt"), labels.to_tensor().to_bytes())?;
    let pred = softmax(&outcome.logits);
    for c in 0..pred.shape().classes {
        let mut bytes = Vec::new();
        export_pgm(&pred.channel_tensor(c), 0.0, 1.0, &mut bytes)?;
        fs::write(dir.join(format!("prob_class{c}.pgm")), bytes)?;
    }
    let last = outcome.history.last().expect("steps >= 1");
    let text = to_json(&TrainOut {
        scene: &args.scene,
        config: &cfg,
        ce: last.ce,
        cpg: last.cpg,
        combined: last.combined,
        n_plus: cpg_core::CpgTarget::from_labels(&labels, &cfg.cpg)?
            .mask()
            .n_plus(),
        miou: fit.miou,
        per_class: &fit.per_class,
        sharpness: fit.sharpness,
    });
    fs::write(dir.join("metrics.json"), &text)?;

    if cli.json {
        write_stdout(text.as_bytes())
    } else {
        write_stdout(
            format!(
                "steps {}\nce {}\ncpg {}\ncombined {}\nmiou {}\nsharpness {}\n",
                cfg.steps, last.ce, last.cpg, last.combined, fit.miou, fit.sharpness
            )
            .as_bytes(),
        )
    }
}
