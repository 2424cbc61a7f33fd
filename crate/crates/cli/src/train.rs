use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use eqprop::diagnostics::{fleet_member, FleetSpec};
use eqprop::dynamics::{argmax, projected_residual, relax_with_trajectory, Phase1Init};
use eqprop::learning::{error_rate, train_epoch, train_epoch_warm, WarmStartCache};
use eqprop::mnist::{load_idx, subset_and_shuffle, Dataset};
use eqprop::network::layer_sizes_from_architecture;
use eqprop::{cost, mu_augmented, Activation, FieldKind, HyperParams, LayeredNetwork, NetworkState};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

const TRAIN_ARCHITECTURE: [usize; 3] = [784, 128, 10];

fn train_defaults() -> HyperParams {
    HyperParams {
        epsilon: 0.001,
        beta: 1.0,
        alphas: vec![0.5, 0.2],
        iters_phase1: 10_000,
        iters_phase2: 4_000,
        minibatch: 20,
        ..HyperParams::default()
    }
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    mean_free_cost: f64,
    train_error: f64,
    wall_seconds: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    train_examples: usize,
    final_mean_free_cost: Option<f64>,
    final_train_error: Option<f64>,
    test_examples: Option<usize>,
    test_error: Option<f64>,
}

fn dataset(images: Option<&Path>, labels: Option<&Path>, what: &str) -> Result<Option<Dataset>, CliError> {
    match (images, labels) {
        (Some(i), Some(l)) => Ok(Some(load_idx(i, l)?)),
        (None, None) => Ok(None),
        _ => Err(CliError::Config(format!("{what}_images and {what}_labels must be given together"))),
    }
}

/// The snapshot named by `init_weights`, or a Glorot draw seeded with `seed`.
fn initial_network(cfg: &RunConfig, default_arch: &[usize], seed: u64) -> Result<LayeredNetwork, CliError> {
    if let Some(path) = &cfg.init_weights {
        let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let net: LayeredNetwork = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        net.validate()?;
        if let Some(arch) = &cfg.architecture {
            if layer_sizes_from_architecture(arch) != net.layer_sizes() {
                return Err(CliError::Config("architecture disagrees with the weights snapshot".into()));
            }
        }
        return Ok(net);
    }
    let sizes = layer_sizes_from_architecture(&cfg.architecture_or(default_arch));
    let activation = cfg.activation.unwrap_or(Activation::HardSigmoid);
    let field_kind = cfg.field_kind.unwrap_or(FieldKind::Leaky);
    Ok(LayeredNetwork::glorot(sizes, activation, field_kind, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn check_input_size(net: &LayeredNetwork, data: &Dataset) -> Result<(), CliError> {
    if net.input_size() != data.pixels() {
        return Err(CliError::Config(format!(
            "network reads {} inputs but images have {} pixels",
            net.input_size(),
            data.pixels()
        )));
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let hp = cfg.hyper_params(train_defaults());
    hp.validate()?;
    let mode = cfg.update_mode.unwrap_or_default();
    let epochs = cfg.epochs.unwrap_or(1);

    let mut data = dataset(cfg.train_images.as_deref(), cfg.train_labels.as_deref(), "train")?
        .ok_or_else(|| CliError::Config("train needs train_images and train_labels".into()))?;
    if let Some(n) = cfg.subset {
        data = subset_and_shuffle(&data, n, hp.seed)?;
    }
    let test = dataset(cfg.test_images.as_deref(), cfg.test_labels.as_deref(), "test")?;

    let mut net = initial_network(cfg, &TRAIN_ARCHITECTURE, hp.seed)?;
    check_input_size(&net, &data)?;
    if let Some(test) = &test {
        check_input_size(&net, test)?;
    }

    let mut writer = csv::Writer::from_path(out.join("train.csv"))?;
    let mut cache = WarmStartCache::new(data.len());
    let mut last = None;
    let start = Instant::now();
    for epoch in 1..=epochs {
        let (next, stats) = match hp.phase1_init {
            Phase1Init::Zeros => train_epoch(&net, &data, &hp, mode)?,
            Phase1Init::WarmStart => train_epoch_warm(&net, &data, &hp, mode, &mut cache)?,
        };
        net = next;
        let row = EpochRow {
            epoch,
            mean_free_cost: stats.mean_cost,
            train_error: stats.error_rate,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        writer.serialize(&row)?;
        writer.flush()?;
        println!(
            "epoch {epoch}: mean free cost {:.6}, train error {:.4}, {:.1} s",
            row.mean_free_cost, row.train_error, row.wall_seconds
        );
        last = Some(stats);
    }

    fs::write(out.join("weights.json"), serde_json::to_vec(&net)?)?;

    let test_error = test.as_ref().map(|t| error_rate(&net, t, &hp)).transpose()?;
    if let Some(e) = test_error {
        println!("test error {e:.4}");
    }
    let summary = TrainSummary {
        epochs,
        train_examples: data.len(),
        final_mean_free_cost: last.map(|s| s.mean_cost),
        final_train_error: last.map(|s| s.error_rate),
        test_examples: test.as_ref().map(Dataset::len),
        test_error,
    };
    fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

#[derive(Serialize)]
struct RelaxDump {
    beta: f64,
    iterations: usize,
    residual_inf_norm: f64,
    saturated_units: usize,
    prediction: usize,
    target_class: usize,
    cost: f64,
    /// Layer activities, output layer first.
    state: Vec<Vec<f64>>,
}

/// Network, input and target for `relax`: a dataset example when
/// `train_images` is set, otherwise a seeded random input and one-hot target.
fn relax_case(cfg: &RunConfig, seed: u64) -> Result<(LayeredNetwork, DVector<f64>, DVector<f64>), CliError> {
    if let Some(data) = dataset(cfg.train_images.as_deref(), cfg.train_labels.as_deref(), "train")? {
        let index = cfg.example_index.unwrap_or(0);
        if index >= data.len() {
            return Err(CliError::Config(format!("example_index {index} outside a dataset of {}", data.len())));
        }
        let net = initial_network(cfg, &TRAIN_ARCHITECTURE, seed)?;
        check_input_size(&net, &data)?;
        return Ok((net, data.image(index), data.onehot(index)));
    }
    let spec = FleetSpec {
        architecture: cfg.architecture_or(&FleetSpec::default().architecture),
        activation: cfg.activation.unwrap_or(Activation::Logistic),
        field_kind: cfg.field_kind.unwrap_or(FieldKind::Leaky),
        target_at_free_output: false,
    };
    let (net, x, y) = fleet_member(&spec, seed)?;
    match &cfg.init_weights {
        Some(_) => {
            let snapshot = initial_network(cfg, &spec.architecture, seed)?;
            if snapshot.input_size() != net.input_size() || snapshot.output_size() != net.output_size() {
                return Err(CliError::Config("architecture disagrees with the weights snapshot".into()));
            }
            Ok((snapshot, x, y))
        }
        None => Ok((net, x, y)),
    }
}

pub fn relax(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let hp = cfg.hyper_params(HyperParams { epsilon: 0.1, beta: 0.0, iters_phase1: 500, ..HyperParams::default() });
    hp.validate()?;
    let (net, x, y) = relax_case(cfg, hp.seed)?;
    let (fp, trajectory) =
        relax_with_trajectory(&net, &x, Some(&y), hp.beta, &NetworkState::zeros(&net), &hp, hp.iters_phase1)?;

    let mut writer = csv::Writer::from_path(out.join("trajectory.csv"))?;
    let mut header = vec!["step".to_string(), "residual".to_string()];
    header.extend((0..net.output_size()).map(|i| format!("out_{i}")));
    writer.write_record(&header)?;
    for (step, s) in trajectory.iter().enumerate() {
        let field = mu_augmented(&net, &x, &y, s, hp.beta)?;
        let mut record = vec![step.to_string(), projected_residual(&net, s, &field, hp.euler_sign).to_string()];
        record.extend(s.output().iter().map(f64::to_string));
        writer.write_record(&record)?;
    }
    writer.flush()?;

    let dump = RelaxDump {
        beta: hp.beta,
        iterations: fp.iterations_used,
        residual_inf_norm: fp.residual_inf_norm,
        saturated_units: fp.saturated_count(),
        prediction: argmax(fp.state.output()),
        target_class: argmax(&y),
        cost: cost(&y, &fp.state, &net, hp.lambda),
        state: fp.state.layers.iter().map(|l| l.iter().copied().collect()).collect(),
    };
    let mut file = File::create(out.join("relax.json"))?;
    file.write_all(&serde_json::to_vec_pretty(&dump)?)?;
    println!(
        "{} steps, residual {:.3e}, {} saturated units, predicted class {}",
        dump.iterations, dump.residual_inf_norm, dump.saturated_units, dump.prediction
    );
    Ok(())
}
