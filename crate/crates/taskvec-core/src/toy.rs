// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tiny trained classifiers for exercising task arithmetic end to end.
//! Synthetic Gaussian-cluster tasks come in families that share a latent
//! feature basis, two-layer tanh networks are fine-tuned on them by
//! full-batch gradient descent, and the weight deltas feed the
//! decomposition pipeline. Every value is a deterministic function of the
//! seeds involved.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decompose::{self, Mode};
use crate::error::Error;
use crate::fmath;
use crate::matrix::Matrix;
use crate::synth;
use crate::tensor::{self, TaskVector, Tensor};
use crate::Result;

/// Hidden width of the generated classifiers.
pub const HIDDEN_DIM: usize = 16;

/// Input dimension of generated tasks.
pub const FEATURES: usize = 12;

/// Number of classes in generated tasks.
pub const CLASSES: usize = 3;

/// Samples drawn per class; every generated task is exactly balanced.
pub const SAMPLES_PER_CLASS: usize = 40;

/// Seeds per task family. Dividing a seed by this gives the family index;
/// all tasks in a family share a latent basis and the latent coordinates
/// of their class means.
pub const VARIANTS_PER_FAMILY: u64 = 8;

/// Default gradient-descent step count for scenario training runs.
pub const DEFAULT_TRAIN_STEPS: usize = 400;

/// Default gradient-descent learning rate for scenario training runs.
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;

/// Relative rank cutoff used when decomposing trained weight deltas.
/// Deltas of trained models are numerically full rank with their energy
/// concentrated in the few class-separating directions; this cutoff keeps
/// those and drops the broadband tail.
pub const DELTA_RANK_TOL: f64 = 0.2;

/// Dimension of the latent basis a task family shares.
const LATENT_DIM: usize = 4;

/// Scale of the latent coordinates of class means.
const LATENT_SCALE: f64 = 4.0;

/// Dimension of each task's private latent block.
const PRIVATE_DIM: usize = 3;

/// Scale of the private-block coordinates of class means.
const PRIVATE_SCALE: f64 = 0.7;

/// Scale of the unstructured per-task jitter added to class means.
const OFFSET_SCALE: f64 = 0.2;

/// Standard deviation of samples around their class mean.
const SAMPLE_NOISE: f64 = 0.9;

/// Magnitude of the constant input shift applied to corrupted tasks.
const CORRUPT_SHIFT: f64 = 3.0;

/// Weight scale of randomly initialized models.
const INIT_SCALE: f64 = 0.1;

/// Stream salts keeping basis, task, and init draws independent.
const BASIS_SALT: u64 = 0x517c_c1b7_2722_0a95;
const TASK_SALT: u64 = 0x9e6d_6a1e_0f8a_3c11;
const INIT_SALT: u64 = 0x6c62_272e_07bb_0142;

/// Deterministic generator for a given (index, salt) pair; distinct pairs
/// give independent streams.
fn stream(index: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt))
}

/// Role a generated task plays in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// A task drawn from the family distribution, used as a training
    /// source.
    SharedStructure,
    /// The same distribution, used as the held-out evaluation task.
    Target,
    /// The target with a constant shift added to every input.
    Corrupted,
}

impl TaskKind {
    /// Stable text tag used in task names and report rows.
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::SharedStructure => "shared-structure",
            TaskKind::Target => "target",
            TaskKind::Corrupted => "corrupted",
        }
    }
}

/// A balanced synthetic classification dataset.
#[derive(Debug, Clone)]
pub struct ToyTask {
    /// Sample matrix, samples x features.
    pub inputs: Matrix,
    /// Class index per sample; each is below `num_classes` and the counts
    /// per class are equal.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Identifier of the form `<kind>-<seed>`.
    pub name: String,
}

/// A fully connected classifier. Weights are stored input x output, the
/// forward pass computes `x * W + b` per layer with tanh between layers,
/// and the final layer is linear.
#[derive(Debug, Clone)]
pub struct ToyModel {
    /// (weight, bias) per layer; the bias length equals the weight's
    /// column count, and consecutive weights compose.
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl ToyModel {
    /// Gaussian-initialized model with the given layer widths, listed as
    /// input, hidden widths, output. Biases start at zero.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "a model needs an input and an output width, got {} widths",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidSpec("zero layer width".into()));
        }
        let mut rng = stream(seed, INIT_SALT);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let w = synth::gaussian_matrix(pair[0], pair[1], INIT_SCALE, &mut rng);
            layers.push((w, alloc::vec![0.0; pair[1]]));
        }
        Ok(Self { layers })
    }

    /// Two-layer classifier shaped for the generated tasks.
    pub fn classifier_init(seed: u64) -> Self {
        Self::random(&[FEATURES, HIDDEN_DIM, CLASSES], seed).expect("static widths")
    }

    /// Checks layer composition and parameter finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("model has no layers".into()));
        }
        for (i, (w, b)) in self.layers.iter().enumerate() {
            if b.len() != w.cols() {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    b.len(),
                    w.cols()
                )));
            }
            if let Some(bad) = b.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidSpec(format!("layer {i}: non-finite bias {bad}")));
            }
            if i + 1 < self.layers.len() && w.cols() != self.layers[i + 1].0.rows() {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    w.cols(),
                    i + 1,
                    self.layers[i + 1].0.rows()
                )));
            }
        }
        Ok(())
    }

    /// Input dimension.
    pub fn feature_dim(&self) -> usize {
        self.layers[0].0.rows()
    }

    /// Output (class) dimension.
    pub fn class_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].0.cols()
    }

    /// Output of every layer for a batch of inputs; entries after the last
    /// are logits, all earlier ones are post-tanh activations.
    fn activations(&self, inputs: &Matrix) -> Result<Vec<Matrix>> {
        let last = self.layers.len() - 1;
        let mut outs = Vec::with_capacity(self.layers.len());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let x = if i == 0 { inputs } else { &outs[i - 1] };
            let mut a = affine(x, w, b)?;
            if i != last {
                a = map_entries(&a, fmath::tanh);
            }
            outs.push(a);
        }
        Ok(outs)
    }

    /// Batch logits for the given inputs.
    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.activations(inputs)?.pop().expect("at least one layer"))
    }

    /// All parameters as a task vector with layers named `layer<i>.weight`
    /// and `layer<i>.bias`.
    pub fn to_task_vector(&self) -> TaskVector {
        let mut tv = TaskVector::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            tv.insert(format!("layer{i}.weight"), Tensor::from_matrix(w.clone()))
                .expect("fresh names");
            tv.insert(format!("layer{i}.bias"), Tensor::from_vec(b.clone()).expect("nonempty bias"))
                .expect("fresh names");
        }
        tv
    }

    /// Rebuilds a model of this architecture from parameters produced by
    /// [`to_task_vector`] or an edit of it.
    fn with_parameters(&self, params: &TaskVector) -> Result<Self> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wt = params
                .get(&format!("layer{i}.weight"))
                .ok_or_else(|| Error::ArchitectureMismatch(format!("missing layer{i}.weight")))?;
            let bt = params
                .get(&format!("layer{i}.bias"))
                .ok_or_else(|| Error::ArchitectureMismatch(format!("missing layer{i}.bias")))?;
            if wt.dims() != [w.rows(), w.cols()] || bt.dims() != [b.len()] {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer {i}: parameter shapes do not match the base model"
                )));
            }
            let wm = wt.as_matrix_2d()?;
            layers.push((wm, bt.data().to_vec()));
        }
        Ok(Self { layers })
    }
}

/// Linear edit: (component, coefficient) pairs applied on top of a base
/// model. Components must carry the base architecture's layer names and
/// shapes; coefficients may be negative.
#[derive(Debug, Clone, Default)]
pub struct EditRecipe<'a> {
    pub entries: Vec<(&'a TaskVector, f64)>,
}

impl<'a> EditRecipe<'a> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Appends one component with its coefficient.
    pub fn push(&mut self, component: &'a TaskVector, lambda: f64) {
        self.entries.push((component, lambda));
    }
}

/// Generates a deterministic Gaussian-cluster task.
///
/// Class means are `L c_k + M d_k + o_k`: the orthonormal latent basis `L`
/// and the latent coordinates `c_k` belong to the seed's family, while the
/// private orthonormal block `M`, its coordinates `d_k`, and the jitter
/// `o_k` belong to the seed alone. Tasks in one family therefore separate
/// the same classes along the same latent directions, and everything else
/// that distinguishes a task lives in its own private block. The kind
/// changes only the name and, for [`TaskKind::Corrupted`], adds a fixed
/// shift vector to every input, so a corrupted task matches its target bit
/// for bit except for the shift.
pub fn make_task(kind: TaskKind, seed: u64) -> ToyTask {
    let family = seed / VARIANTS_PER_FAMILY;
    let mut basis_rng = stream(family, BASIS_SALT);
    let basis = crate::linalg::qr_orthonormal(&synth::gaussian_matrix(
        FEATURES,
        LATENT_DIM,
        1.0,
        &mut basis_rng,
    ))
    .expect("random basis has full column rank");
    let latent = synth::gaussian_matrix(CLASSES, LATENT_DIM, LATENT_SCALE, &mut basis_rng);

    let mut task_rng = stream(seed, TASK_SALT);
    let private = crate::linalg::qr_orthonormal(&synth::gaussian_matrix(
        FEATURES,
        PRIVATE_DIM,
        1.0,
        &mut task_rng,
    ))
    .expect("random basis has full column rank");
    let private_coords = synth::gaussian_matrix(CLASSES, PRIVATE_DIM, PRIVATE_SCALE, &mut task_rng);
    let offsets = synth::gaussian_matrix(CLASSES, FEATURES, OFFSET_SCALE, &mut task_rng);
    let mut means = Vec::with_capacity(CLASSES);
    for k in 0..CLASSES {
        let mut mu = Vec::with_capacity(FEATURES);
        for r in 0..FEATURES {
            let mut v = offsets.get(k, r);
            for j in 0..LATENT_DIM {
                v += basis.get(r, j) * latent.get(k, j);
            }
            for j in 0..PRIVATE_DIM {
                v += private.get(r, j) * private_coords.get(k, j);
            }
            mu.push(v);
        }
        means.push(mu);
    }

    let samples = CLASSES * SAMPLES_PER_CLASS;
    let noise = synth::gaussian_matrix(samples, FEATURES, SAMPLE_NOISE, &mut task_rng);
    let mut data = Vec::with_capacity(samples * FEATURES);
    let mut labels = Vec::with_capacity(samples);
    let corrupt = matches!(kind, TaskKind::Corrupted);
    let shift_unit = CORRUPT_SHIFT / fmath::sqrt(FEATURES as f64);
    for k in 0..CLASSES {
        for s in 0..SAMPLES_PER_CLASS {
            let row = k * SAMPLES_PER_CLASS + s;
            for j in 0..FEATURES {
                let mut x = means[k][j] + noise.get(row, j);
                if corrupt {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    x += sign * shift_unit;
                }
                data.push(x);
            }
            labels.push(k);
        }
    }
    ToyTask {
        inputs: Matrix::new(samples, FEATURES, data).expect("finite samples"),
        labels,
        num_classes: CLASSES,
        name: format!("{}-{}", kind.label(), seed),
    }
}

/// Mean softmax cross-entropy and its analytic gradients, ordered like the
/// model's layers.
pub fn loss_and_gradient(
    model: &ToyModel,
    task: &ToyTask,
) -> Result<(f64, Vec<(Matrix, Vec<f64>)>)> {
    model.validate()?;
    check_task_shapes(model, task)?;
    let n = task.inputs.rows();
    let acts = model.activations(&task.inputs)?;
    let logits = &acts[acts.len() - 1];

    let mut loss = 0.0;
    let mut delta = Matrix::zeros(n, model.class_dim());
    for i in 0..n {
        let row = logits.row(i);
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &l in row {
            sum += fmath::exp(l - top);
        }
        let lse = top + fmath::ln(sum);
        loss += lse - row[task.labels[i]];
        for (c, &l) in row.iter().enumerate() {
            let mut p = fmath::exp(l - lse);
            if c == task.labels[i] {
                p -= 1.0;
            }
            delta.set(i, c, p / n as f64);
        }
    }
    loss /= n as f64;

    let mut grads = Vec::with_capacity(model.layers.len());
    for l in (0..model.layers.len()).rev() {
        let input = if l == 0 { &task.inputs } else { &acts[l - 1] };
        let gw = input.transpose().matmul(&delta)?;
        let gb = column_sums(&delta);
        grads.push((gw, gb));
        if l > 0 {
            let back = delta.matmul(&model.layers[l].0.transpose())?;
            let h = &acts[l - 1];
            delta = Matrix::from_fn(back.rows(), back.cols(), |i, j| {
                let t = h.get(i, j);
                back.get(i, j) * (1.0 - t * t)
            });
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

/// Mean softmax cross-entropy alone.
pub fn loss(model: &ToyModel, task: &ToyTask) -> Result<f64> {
    Ok(evaluate(model, task)?.1)
}

/// Analytic gradients alone.
pub fn gradient(model: &ToyModel, task: &ToyTask) -> Result<Vec<(Matrix, Vec<f64>)>> {
    Ok(loss_and_gradient(model, task)?.1)
}

/// Full-batch gradient descent on mean softmax cross-entropy.
///
/// The descent is deterministic given the model and task; the full batch
/// draws nothing from `_seed`. A non-finite loss or parameter update stops
/// training with the offending step index.
pub fn train(
    init: &ToyModel,
    task: &ToyTask,
    steps: usize,
    lr: f64,
    _seed: u64,
) -> Result<ToyModel> {
    if steps == 0 {
        return Err(Error::InvalidSpec("training needs at least one step".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidSpec(format!("learning rate {lr} must be positive")));
    }
    let mut model = init.clone();
    for step in 0..steps {
        // An overflowed forward or backward pass means the parameters have
        // already left the representable range.
        let (l, grads) = match loss_and_gradient(&model, task) {
            Err(Error::InvalidMatrix(_)) => return Err(Error::DivergedTraining { step }),
            other => other?,
        };
        if !l.is_finite() {
            return Err(Error::DivergedTraining { step });
        }
        for (layer, (gw, gb)) in model.layers.iter_mut().zip(grads.iter()) {
            let mut data = Vec::with_capacity(layer.0.rows() * layer.0.cols());
            for (w, g) in layer.0.data().iter().zip(gw.data().iter()) {
                data.push(w - lr * g);
            }
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::DivergedTraining { step });
            }
            layer.0 = Matrix::new(layer.0.rows(), layer.0.cols(), data)?;
            for (b, g) in layer.1.iter_mut().zip(gb.iter()) {
                *b -= lr * g;
            }
            if layer.1.iter().any(|x| !x.is_finite()) {
                return Err(Error::DivergedTraining { step });
            }
        }
    }
    Ok(model)
}

/// Per-layer parameter difference `ft - pre`.
pub fn task_vector(ft: &ToyModel, pre: &ToyModel) -> Result<TaskVector> {
    same_architecture(ft, pre)?;
    let mut tv = TaskVector::new();
    for (i, ((wf, bf), (wp, bp))) in ft.layers.iter().zip(pre.layers.iter()).enumerate() {
        tv.insert(format!("layer{i}.weight"), Tensor::from_matrix(wf.sub(wp)?))?;
        let db: Vec<f64> = bf.iter().zip(bp.iter()).map(|(a, b)| a - b).collect();
        tv.insert(format!("layer{i}.bias"), Tensor::from_vec(db)?)?;
    }
    Ok(tv)
}

/// Adds `sum_t lambda_t * component_t` to the base model's parameters.
/// The base is untouched; an empty recipe reproduces it bit for bit.
pub fn apply_edit(base: &ToyModel, recipe: &EditRecipe) -> Result<ToyModel> {
    base.validate()?;
    let params = base.to_task_vector();
    let terms: Vec<(&TaskVector, f64)> = recipe.entries.to_vec();
    let edited = tensor::combine(&params, &terms)
        .map_err(|e| Error::ArchitectureMismatch(format!("recipe does not fit the base: {e}")))?;
    base.with_parameters(&edited)
}

/// Argmax accuracy, ties resolved to the lowest class index, and mean
/// softmax cross-entropy.
pub fn evaluate(model: &ToyModel, task: &ToyTask) -> Result<(f64, f64)> {
    model.validate()?;
    check_task_shapes(model, task)?;
    let logits = model.logits(&task.inputs)?;
    let n = task.inputs.rows();
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let mut arg = 0usize;
        for (c, &l) in row.iter().enumerate() {
            if l > row[arg] {
                arg = c;
            }
        }
        if arg == task.labels[i] {
            correct += 1;
        }
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &l in row {
            sum += fmath::exp(l - top);
        }
        loss += top + fmath::ln(sum) - row[task.labels[i]];
    }
    Ok((correct as f64 / n as f64, loss / n as f64))
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub lambda: f64,
    pub accuracy: f64,
    pub loss: f64,
}

/// Grid evaluation of one component; `component` indexes the input slice.
#[derive(Debug, Clone)]
pub struct ComponentCurve {
    pub component: usize,
    pub points: Vec<CurvePoint>,
}

impl ComponentCurve {
    /// Highest accuracy over the grid.
    pub fn best_accuracy(&self) -> f64 {
        self.points.iter().map(|p| p.accuracy).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-component grid evaluations, in input order.
#[derive(Debug, Clone)]
pub struct SweepCurve {
    pub curves: Vec<ComponentCurve>,
}

/// The default coefficient grid, -2 to 2 in steps of 1/4. Every point is
/// exactly representable.
pub fn default_grid() -> Vec<f64> {
    (0..17).map(|i| -2.0 + 0.25 * i as f64).collect()
}

/// Evaluates each component independently at every coefficient in the
/// grid. Grid points are pure functions of (component, coefficient), so
/// the parallel build produces the serial result exactly.
pub fn coefficient_sweep(
    base: &ToyModel,
    components: &[TaskVector],
    grid: &[f64],
    task: &ToyTask,
) -> Result<SweepCurve> {
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let jobs: Vec<(usize, f64)> = components
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| grid.iter().map(move |&l| (ci, l)))
        .collect();
    let eval_point = |&(ci, lambda): &(usize, f64)| -> Result<CurvePoint> {
        let mut recipe = EditRecipe::new();
        recipe.push(&components[ci], lambda);
        let edited = apply_edit(base, &recipe)?;
        let (accuracy, loss) = evaluate(&edited, task)?;
        Ok(CurvePoint { lambda, accuracy, loss })
    };

    #[cfg(feature = "parallel")]
    let points: Vec<CurvePoint> = {
        use rayon::prelude::*;
        jobs.par_iter().map(eval_point).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let points: Vec<CurvePoint> = jobs.iter().map(eval_point).collect::<Result<_>>()?;

    let per_component = grid.len();
    let curves = points
        .chunks(per_component)
        .enumerate()
        .map(|(component, chunk)| ComponentCurve { component, points: chunk.to_vec() })
        .collect();
    Ok(SweepCurve { curves })
}

/// Outcome of sweeping decomposed components against one target task.
/// Curve 0 belongs to the merged shared component, curve `1 + i` to source
/// `i`'s unique component.
#[derive(Debug, Clone)]
pub struct TargetOutcome {
    pub task_name: String,
    pub base_accuracy: f64,
    /// Best grid accuracy of the merged shared component.
    pub shared_best: f64,
    /// Best grid accuracy per unique component, in source order.
    pub unique_best: Vec<f64>,
    pub sweep: SweepCurve,
}

/// One transfer experiment: two sources fine-tuned from a common base,
/// their deltas decomposed, and the components swept against the clean and
/// the corrupted target of the same family.
#[derive(Debug, Clone)]
pub struct TransferTrial {
    pub seed: u64,
    /// Accuracy of each fine-tuned source on its own training task.
    pub source_accuracy: Vec<f64>,
    /// Shared dimensions kept per decomposed layer.
    pub shared_dims: BTreeMap<String, usize>,
    pub clean: TargetOutcome,
    pub corrupted: TargetOutcome,
}

/// One negation experiment: a model fine-tuned on the corrupted target,
/// its full delta swept with signed coefficients against both the
/// corrupted task and the clean target.
#[derive(Debug, Clone)]
pub struct NegationTrial {
    pub seed: u64,
    /// Accuracy of the fine-tuned model on the corrupted task.
    pub tuned_accuracy: f64,
    pub base_corrupted_accuracy: f64,
    pub base_clean_accuracy: f64,
    /// Sweep of the delta against the corrupted task it was trained on.
    pub corrupted_sweep: SweepCurve,
    /// Sweep of the same delta against the clean target.
    pub clean_sweep: SweepCurve,
}

/// Runs the transfer scenario for one seed: sources are variants 1 and 2
/// of the seed's task family, the targets are variant 0 clean and
/// corrupted. Components are decomposed at the default threshold with the
/// delta rank cutoff and swept over the default grid.
pub fn transfer_scenario(seed: u64) -> Result<TransferTrial> {
    let base = ToyModel::classifier_init(seed);
    let first = seed * VARIANTS_PER_FAMILY;
    let target = make_task(TaskKind::Target, first);
    let corrupted = make_task(TaskKind::Corrupted, first);
    let sources = [
        make_task(TaskKind::SharedStructure, first + 1),
        make_task(TaskKind::SharedStructure, first + 2),
    ];

    let mut vectors = Vec::with_capacity(sources.len());
    let mut source_accuracy = Vec::with_capacity(sources.len());
    for task in &sources {
        let ft = train(&base, task, DEFAULT_TRAIN_STEPS, DEFAULT_LEARNING_RATE, seed)?;
        source_accuracy.push(evaluate(&ft, task)?.0);
        vectors.push(task_vector(&ft, &base)?);
    }

    let dec = decompose::decompose_set(&vectors, decompose::DEFAULT_TAU, DELTA_RANK_TOL, Mode::Chain)?;
    let mut shared_dims = BTreeMap::new();
    for (name, report) in &dec.layers {
        if let decompose::LayerReport::Chain(rep) = report {
            shared_dims.insert(name.clone(), rep.basis.r_shared());
        }
    }
    let mut components = Vec::with_capacity(1 + dec.unique.len());
    components.push(dec.merged[0].vector.clone());
    components.extend(dec.unique.iter().cloned());

    let grid = default_grid();
    let clean = sweep_against(&base, &components, &grid, &target)?;
    let corrupted = sweep_against(&base, &components, &grid, &corrupted)?;
    Ok(TransferTrial { seed, source_accuracy, shared_dims, clean, corrupted })
}

/// Runs the negation scenario for one seed: fine-tune on the corrupted
/// target, then sweep the full delta against the corrupted task and the
/// clean target over the default grid.
pub fn negation_scenario(seed: u64) -> Result<NegationTrial> {
    let base = ToyModel::classifier_init(seed);
    let first = seed * VARIANTS_PER_FAMILY;
    let target = make_task(TaskKind::Target, first);
    let corrupted = make_task(TaskKind::Corrupted, first);

    let ft = train(&base, &corrupted, DEFAULT_TRAIN_STEPS, DEFAULT_LEARNING_RATE, seed)?;
    let delta = alloc::vec![task_vector(&ft, &base)?];
    let grid = default_grid();
    Ok(NegationTrial {
        seed,
        tuned_accuracy: evaluate(&ft, &corrupted)?.0,
        base_corrupted_accuracy: evaluate(&base, &corrupted)?.0,
        base_clean_accuracy: evaluate(&base, &target)?.0,
        corrupted_sweep: coefficient_sweep(&base, &delta, &grid, &corrupted)?,
        clean_sweep: coefficient_sweep(&base, &delta, &grid, &target)?,
    })
}

fn sweep_against(
    base: &ToyModel,
    components: &[TaskVector],
    grid: &[f64],
    task: &ToyTask,
) -> Result<TargetOutcome> {
    let sweep = coefficient_sweep(base, components, grid, task)?;
    Ok(TargetOutcome {
        task_name: task.name.clone(),
        base_accuracy: evaluate(base, task)?.0,
        shared_best: sweep.curves[0].best_accuracy(),
        unique_best: sweep.curves[1..].iter().map(|c| c.best_accuracy()).collect(),
        sweep,
    })
}

fn same_architecture(a: &ToyModel, b: &ToyModel) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.layers.len() != b.layers.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "{} layers vs {}",
            a.layers.len(),
            b.layers.len()
        )));
    }
    for (i, ((wa, _), (wb, _))) in a.layers.iter().zip(b.layers.iter()).enumerate() {
        if wa.rows() != wb.rows() || wa.cols() != wb.cols() {
            return Err(Error::ArchitectureMismatch(format!(
                "layer {i}: {}x{} vs {}x{}",
                wa.rows(),
                wa.cols(),
                wb.rows(),
                wb.cols()
            )));
        }
    }
    Ok(())
}

fn check_task_shapes(model: &ToyModel, task: &ToyTask) -> Result<()> {
    if task.inputs.cols() != model.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "task has {} features, model takes {}",
            task.inputs.cols(),
            model.feature_dim()
        )));
    }
    if task.num_classes != model.class_dim() {
        return Err(Error::DimensionMismatch(format!(
            "task has {} classes, model outputs {}",
            task.num_classes,
            model.class_dim()
        )));
    }
    if task.labels.len() != task.inputs.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            task.labels.len(),
            task.inputs.rows()
        )));
    }
    if let Some(&bad) = task.labels.iter().find(|&&l| l >= task.num_classes) {
        return Err(Error::DimensionMismatch(format!(
            "label {bad} outside {} classes",
            task.num_classes
        )));
    }
    Ok(())
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            let v = out.get(i, j) + b[j];
            if !v.is_finite() {
                return Err(Error::InvalidMatrix("affine output overflowed".into()));
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}

fn map_entries(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| f(m.get(i, j)))
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = alloc::vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, s) in sums.iter_mut().enumerate() {
            *s += m.get(i, j);
        }
    }
    sums
}
