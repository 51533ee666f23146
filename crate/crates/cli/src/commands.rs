use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppa_core::array::{ArrayGeometry, BitPlane, DReg, NoiseModel, PeArray};
use ppa_core::eval::{accuracy, calibrate_noise, simulate_classes, SimSettings};
use ppa_core::kernels::{stack_count, StackRegs};
use ppa_core::mnist::{self, Split};
use ppa_core::netplan::{compile, infer, parse, serialize, NetworkSpec, Preset, QuantizedWeights, Summation};
use ppa_core::oracle::{self, OracleConfig};
use ppa_core::pgm;
use ppa_core::trainer::{FitConfig, Optimizer, RealValuedNet};

use crate::{Command, Net, Opt, Switch};

impl From<Net> for Preset {
    fn from(n: Net) -> Self {
        match n {
            Net::TwoLayer => Preset::TwoLayer,
            Net::ThreeLayer => Preset::ThreeLayer,
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            net,
            epochs,
            seed,
            out,
            mnist_dir,
            limit,
            optimizer,
            lr,
            batch,
            init,
        } => {
            let spec = NetworkSpec::preset(net.into());
            let data = load(&mnist_dir, Split::Train, limit)?;
            let test = load(&mnist_dir, Split::Test, None).ok();
            let side = spec.input_side;
            let images = mnist::binarize_all(&data, side);
            let optimizer = match optimizer {
                Opt::Sgd => Optimizer::Sgd { momentum: 0.9 },
                Opt::Adam => Optimizer::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                },
            };
            let defaults = FitConfig::default();
            let config = FitConfig {
                epochs,
                batch_size: batch,
                lr: lr.unwrap_or(defaults.lr),
                optimizer,
                ..defaults
            };
            let mut model = RealValuedNet::new(&spec, init, seed)?;
            let test_images = test.as_ref().map(|t| mnist::binarize_all(t, side));
            model.fit(&images, &data.labels, &config, |s, m| {
                let acc = match (&test, &test_images) {
                    (Some(t), Some(ti)) => m
                        .accuracy(ti, &t.labels)
                        .map(|a| format!("  test {:.2}%", 100.0 * a))
                        .unwrap_or_default(),
                    _ => String::new(),
                };
                eprintln!("epoch {:>3}  lr {:.5}  train loss {:.4}{acc}", s.epoch + 1, s.lr, s.mean_loss);
            })?;
            let weights = model.export_quantized();
            fs::write(&out, serialize(&weights)).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval {
            weights,
            mnist_dir,
            noise_sigma,
            isolation,
            repeats,
            limit,
            seed,
            oracle_only,
        } => {
            let w = read_weights(&weights)?;
            let mut spec = NetworkSpec::preset(w.preset);
            if let Some(r) = repeats {
                match &mut spec.summation {
                    Summation::AnalogAvg { repeats } => *repeats = r,
                    Summation::DigitalStack { .. } => bail!("--repeats applies only to analog summation"),
                }
            }
            let data = load(&mnist_dir, Split::Test, limit)?;
            let images = preprocess(&data, w.preset);
            let oracle_acc = oracle::score(&w, &images, &data.labels, &OracleConfig::for_spec(&spec))?;
            println!("images: {}", images.len());
            println!("oracle accuracy: {:.2}%", 100.0 * oracle_acc);
            if !oracle_only {
                let plan = compile(&spec, &w)?;
                let settings = SimSettings {
                    noise: noise_for(noise_sigma)?,
                    isolation: isolation == Switch::On,
                    seed,
                };
                let classes = simulate_classes(&plan, &images, &settings)?;
                println!(
                    "simulated accuracy (noise x{noise_sigma}, isolation {}): {:.2}%",
                    if settings.isolation { "on" } else { "off" },
                    100.0 * accuracy(&classes, &data.labels)
                );
            }
            Ok(())
        }
        Command::Infer {
            weights,
            index,
            dump_dir,
            mnist_dir,
            noise_sigma,
            seed,
        } => {
            let w = read_weights(&weights)?;
            let spec = NetworkSpec::preset(w.preset);
            let data = load(&mnist_dir, Split::Test, Some(index + 1))?;
            if index >= data.len() {
                bail!("index {index} out of range ({} test images)", data.len());
            }
            let img = mnist::preprocess(data.image(index), data.rows, data.cols, w.preset);
            let plan = compile(&spec, &w)?;
            let mut state = PeArray::new(spec.geometry)
                .with_noise(noise_for(noise_sigma)?.with_seed(seed))?
                .with_block_isolation(true);
            let r = infer(&plan, &img, &mut state)?;
            let o = oracle::dense_forward(&w, &img, &OracleConfig::for_spec(&spec))?;
            println!("label {}  predicted {}  oracle {}", data.labels[index], r.class, o.class());
            for (n, (a, b)) in r.activations.iter().zip(&o.activations).enumerate() {
                println!("neuron {n}: simulated {a:>10.3}  oracle {b:>10.3}");
            }
            print!("{}", r.report);
            if let Some(dir) = dump_dir {
                let files = pgm::dump_state(&state, &dir)?;
                println!("dumped {} files to {}", files.len(), dir.display());
            }
            Ok(())
        }
        Command::Count { random, seed } => {
            let g = ArrayGeometry::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let regs = StackRegs {
                below: DReg::D1,
                moving: DReg::D2,
                bottom: DReg::D3,
            };
            let mut failures = 0;
            for i in 0..random {
                let density = [0.0, 0.5, 1.0].get(i).copied().unwrap_or_else(|| rng.random());
                let plane = BitPlane::from_fn(g.width, g.height, |_, _| rng.random_bool(density));
                let mut state = PeArray::new(g);
                state.load_bits(DReg::D0, &plane)?;
                let got = stack_count(&mut state, DReg::D0, &regs)?;
                let want = plane.count_ones();
                let ok = got == want;
                failures += usize::from(!ok);
                println!(
                    "plane {i:>4}  density {density:.3}  stack {got:>6}  popcount {want:>6}  {}  {:.1} µs",
                    if ok { "ok" } else { "MISMATCH" },
                    state.report().total_us()
                );
            }
            if failures > 0 {
                bail!("{failures} mismatches");
            }
            Ok(())
        }
        Command::CostReport { weights, net } => {
            let preset: Preset = net.into();
            let spec = NetworkSpec::preset(preset);
            let w = match weights {
                Some(p) => read_weights(&p)?,
                None => QuantizedWeights::random(&spec, &mut ChaCha8Rng::seed_from_u64(0)),
            };
            if w.preset != preset {
                bail!("weights are {}, --net is {preset}", w.preset);
            }
            let plan = compile(&spec, &w)?;
            let img = ppa_core::array::AnalogPlane::zeros(spec.input_side, spec.input_side);
            let mut state = PeArray::new(spec.geometry).with_block_isolation(true);
            let r = infer(&plan, &img, &mut state)?;
            println!("{preset}");
            print!("{}", r.report);
            Ok(())
        }
        Command::Calibrate {
            weights,
            mnist_dir,
            sweep,
            band,
            bracket,
            max_probes,
            limit,
            seed,
        } => {
            let w = read_weights(&weights)?;
            let spec = NetworkSpec::preset(w.preset);
            let data = load(&mnist_dir, Split::Test, Some(limit))?;
            let images = preprocess(&data, w.preset);
            let plan = compile(&spec, &w)?;
            println!("{:>10} {:>10}", "scale", "accuracy");
            if let Some(scales) = sweep {
                for scale in scales {
                    let settings = SimSettings {
                        noise: NoiseModel::scaled(scale),
                        isolation: true,
                        seed,
                    };
                    let classes = simulate_classes(&plan, &images, &settings)?;
                    println!("{scale:>10.4} {:>9.2}%", 100.0 * accuracy(&classes, &data.labels));
                }
                return Ok(());
            }
            let (&[b0, b1], &[l, h]) = (band.as_slice(), bracket.as_slice()) else {
                bail!("--band and --bracket take two values each");
            };
            let cal = calibrate_noise(&plan, &images, &data.labels, (b0, b1), (l, h), max_probes, seed)?;
            for (scale, acc) in &cal.probes {
                println!("{scale:>10.4} {:>9.2}%", 100.0 * acc);
            }
            println!("selected scale {:.4} ({:.2}%)", cal.scale, 100.0 * cal.accuracy);
            Ok(())
        }
    }
}

fn noise_for(multiplier: f64) -> Result<NoiseModel> {
    if !(multiplier.is_finite() && multiplier >= 0.0) {
        bail!("noise multiplier must be a non-negative number, got {multiplier}");
    }
    Ok(NoiseModel::scaled(NoiseModel::CALIBRATED_SCALE * multiplier))
}

fn read_weights(path: &Path) -> Result<QuantizedWeights> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(dir: &Path, split: Split, limit: Option<usize>) -> Result<mnist::Dataset> {
    let d = mnist::load_split(dir, split).with_context(|| format!("loading MNIST from {}", dir.display()))?;
    Ok(match limit {
        Some(n) => d.truncated(n),
        None => d,
    })
}

fn preprocess(data: &mnist::Dataset, preset: Preset) -> Vec<ppa_core::array::AnalogPlane> {
    (0..data.len())
        .map(|i| mnist::preprocess(data.image(i), data.rows, data.cols, preset))
        .collect()
}
