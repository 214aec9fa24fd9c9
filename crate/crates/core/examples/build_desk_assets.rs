//! Regenerates the shipped desk dataset and checkpoints.
//!
//! ```text
//! cargo run --release --example build_desk_assets -- assets
//! ```
//!
//! Images are oriented gratings, one orientation per class, with random
//! frequency, phase, colour, contrast, a distractor blob and pixel noise.
//! Both networks are trained with plain SGD + momentum on the float path,
//! then max-abs quantizers are calibrated and the quantized clean accuracy
//! on the test split is stored as the reference accuracy.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use htsim::cli::format::{save_dataset, save_model, Model};
use htsim::faultmodel::BitErrorModel;
use htsim::nn::{self, Dataset, NetworkDef, NoisePlan, NoiseScope, Params, QuantSchemes};
use htsim::zoo;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 10;
const SIDE: usize = 32;

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn grating(rng: &mut ChaCha8Rng, class: usize) -> Vec<f64> {
    let theta = PI * class as f64 / CLASSES as f64 + rng.gen_range(-0.18..0.18);
    let freq = rng.gen_range(0.10..0.22);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let contrast = rng.gen_range(0.25..0.45);
    let mean = rng.gen_range(0.35..0.65);
    let tint: [f64; 3] = [rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0)];
    let (bx, by) = (rng.gen_range(0.0..SIDE as f64), rng.gen_range(0.0..SIDE as f64));
    let brad = rng.gen_range(3.0..7.0);
    let bamp = rng.gen_range(-0.3..0.3);
    let (c, s) = (theta.cos(), theta.sin());
    let mut img = vec![0.0; 3 * SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (fx, fy) = (x as f64, y as f64);
            let wave = (2.0 * PI * freq * (fx * c + fy * s) + phase).sin();
            let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
            let blob = bamp * (-d2 / (2.0 * brad * brad)).exp();
            for ch in 0..3 {
                let v = mean + contrast * tint[ch] * wave + blob + gauss(rng, 0.06);
                img[(ch * SIDE + y) * SIDE + x] = (v * 255.0).round().clamp(0.0, 255.0) / 255.0;
            }
        }
    }
    img
}

fn make_split(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * 3 * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % CLASSES;
        pixels.extend(grating(&mut rng, class));
        labels.push(class);
    }
    // interleave classes deterministically
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let per = 3 * SIDE * SIDE;
    let px: Vec<f64> = order
        .iter()
        .flat_map(|&i| pixels[i * per..(i + 1) * per].iter().copied())
        .collect();
    let lb = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(vec![3, SIDE, SIDE], px, lb).unwrap()
}

fn init_params(net: &NetworkDef, rng: &mut ChaCha8Rng) -> Params {
    let mut p = Params::zeros(net);
    for (layer, lp) in net.layers.iter().zip(&mut p.layers) {
        if !layer.has_parameter_mb() {
            continue;
        }
        let w = lp.weight.as_mut().unwrap();
        let fan_in: usize = w.shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        for v in &mut w.data {
            *v = gauss(rng, std);
        }
    }
    p
}

fn float_accuracy(net: &NetworkDef, p: &Params, data: &Dataset) -> f64 {
    let correct = (0..data.len())
        .filter(|&i| {
            let (x, t) = data.example(i).unwrap();
            let z = nn::forward_float(net, p, &x).unwrap().data;
            let top = (0..z.len()).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            top == t
        })
        .count();
    100.0 * correct as f64 / data.len() as f64
}

fn train(net: &NetworkDef, train: &Dataset, test: &Dataset, epochs: usize, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(net, &mut rng);
    let mut velocity = Params::zeros(net);
    let batch = 32;
    let base_lr = 0.02;
    let momentum = 0.9;
    let decay = 1e-4;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        let lr = base_lr * 0.5 * (1.0 + (PI * epoch as f64 / epochs as f64).cos());
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let g = nn::batch_param_gradients(net, &params, train, chunk).unwrap();
            let scale = 1.0 / chunk.len() as f64;
            for ((p, v), g) in params.layers.iter_mut().zip(&mut velocity.layers).zip(&g.layers) {
                for (pt, vt, gt) in [(&mut p.weight, &mut v.weight, &g.weight), (&mut p.bias, &mut v.bias, &g.bias)] {
                    let (Some(pt), Some(vt), Some(gt)) = (pt.as_mut(), vt.as_mut(), gt.as_ref()) else {
                        continue;
                    };
                    for i in 0..pt.data.len() {
                        let grad = gt.data[i] * scale + decay * pt.data[i];
                        vt.data[i] = momentum * vt.data[i] + grad;
                        pt.data[i] -= lr * vt.data[i];
                    }
                }
            }
        }
        eprintln!(
            "epoch {epoch:2} lr {lr:.4} test float acc {:.2}%",
            float_accuracy(net, &params, &test.head(500))
        );
    }
    // round to the f32 values the model file stores
    for lp in &mut params.layers {
        for t in [&mut lp.weight, &mut lp.bias].into_iter().flatten() {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }
    params
}

fn build(name: &str, net: NetworkDef, train_set: &Dataset, test: &Dataset, epochs: usize, out: &Path) {
    eprintln!("training {name}");
    let params = train(&net, train_set, test, epochs, 0x5eed_0001);
    let schemes = QuantSchemes::calibrate(&net, &params, &train_set.head(500)).unwrap();
    let mut model = Model {
        name: name.to_string(),
        net,
        params,
        schemes,
        reference_accuracy: None,
    };
    let qnet = model.quantized().unwrap();
    let clean = nn::evaluate(
        &qnet,
        test,
        &NoisePlan::none(),
        BitErrorModel::reference(),
        0,
        NoiseScope::Image,
    )
    .unwrap();
    eprintln!(
        "{name}: float {:.2}%, quantized {:.2}% (confidence {:.2}%)",
        float_accuracy(&model.net, &model.params, test),
        clean.accuracy,
        clean.mean_confidence
    );
    for eps in [0.05, 0.3] {
        let adv = htsim::attacks::fgsm_dataset(&model.net, &model.params, test, eps).unwrap();
        let r = nn::evaluate(&qnet, &adv, &NoisePlan::none(), BitErrorModel::reference(), 0, NoiseScope::Image).unwrap();
        eprintln!("{name}: fgsm {eps}: {:.2}%", r.accuracy);
    }
    model.reference_accuracy = Some(clean.accuracy);
    save_model(&out.join(format!("{name}.htm")), &model).unwrap();
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("assets"));
    let which = args.get(2).map(String::as_str).unwrap_or("all");
    let n_train: usize = std::env::var("DESK_TRAIN").ok().and_then(|v| v.parse().ok()).unwrap_or(8000);
    let epochs: usize = std::env::var("DESK_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(14);

    let train_set = make_split(11, n_train);
    let test = make_split(12, 1000);
    save_dataset(&out.join("desk_test.images.htsr"), &out.join("desk_test.labels.htsr"), &test).unwrap();
    if which == "all" || which == "vgg" {
        build("desk_vgg", zoo::desk_vgg(), &train_set, &test, epochs, &out);
    }
    if which == "all" || which == "resnet" {
        build("desk_resnet", zoo::desk_resnet(), &train_set, &test, epochs, &out);
    }
}
