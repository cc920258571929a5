//! Central finite-difference gradient checking.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Array, DiffError, NodeId, Tape};

/// Settings for a gradient check. The default step of 1e-5 balances
/// truncation against round-off at double precision.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per parameter block; 0 checks every entry.
    pub samples_per_block: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_block: 0,
            seed: 0x9e3779b9,
        }
    }
}

/// Worst relative error observed within one parameter block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "  {:<28} checked {:>4}  max rel err {:.3e}",
                b.name, b.checked, b.max_rel_error
            )?;
        }
        write!(
            f,
            "  max {:.3e} (tolerance {:.1e}) -> {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare analytic gradients against central finite differences of
/// `eval`. `params` is perturbed in place and restored before returning.
pub fn grad_check<F>(
    mut eval: F,
    params: &mut [Array],
    names: &[String],
    analytic: &[Array],
    config: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[Array]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    assert_eq!(params.len(), names.len());
    let mut blocks = Vec::with_capacity(params.len());
    for block in 0..params.len() {
        let len = params[block].len();
        let entries: Vec<usize> = if config.samples_per_block == 0 || len <= config.samples_per_block
        {
            (0..len).collect()
        } else {
            // deterministic subsample, distinct indices
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (block as u64).wrapping_mul(0x9e37));
            let mut picked = Vec::with_capacity(config.samples_per_block);
            while picked.len() < config.samples_per_block {
                let idx = rng.gen_range(0..len);
                if !picked.contains(&idx) {
                    picked.push(idx);
                }
            }
            picked
        };
        let mut max_rel = 0.0f64;
        for &idx in &entries {
            let original = params[block].data()[idx];
            params[block].data_mut()[idx] = original + config.step;
            let plus = eval(params);
            params[block].data_mut()[idx] = original - config.step;
            let minus = eval(params);
            params[block].data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * config.step);
            max_rel = max_rel.max(rel_error(analytic[block].data()[idx], numeric));
        }
        blocks.push(BlockReport {
            name: names[block].clone(),
            checked: entries.len(),
            max_rel_error: max_rel,
        });
    }
    GradCheckReport {
        tolerance: config.tolerance,
        blocks,
    }
}

/// Gradient-check every tape operation on small random graphs. Inputs
/// are drawn away from relu/max ties so the finite differences stay on
/// one side of each kink. Returns one report per operation.
pub fn op_battery(config: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>, DiffError> {
    use super::{Phase, TppConfig, TppPool};

    // uniform in [0.1, 1.1) plus a random sign: bounded away from zero
    fn sample(shape: &[usize], seed: u64) -> Array {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array::zeros(shape);
        for v in a.data_mut() {
            let mag = 0.1 + rng.gen::<f64>();
            *v = if rng.gen::<bool>() { mag } else { -mag };
        }
        a
    }

    let mut reports = Vec::new();
    let mut run = |name: &str,
                   params: Vec<Array>,
                   names: Vec<&str>,
                   build: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError>|
     -> Result<(), DiffError> {
        let names: Vec<String> = names.into_iter().map(String::from).collect();
        let report = grad_check_graph(build, &params, &names, config)?;
        reports.push((name.to_string(), report));
        Ok(())
    };

    // conv2d at stride 1 and 2, with bias, reduced to a scalar by tpp+linear
    for stride in [1usize, 2] {
        let x = sample(&[2, 5, 7], 100 + stride as u64);
        let w = sample(&[3, 2, 3, 3], 200 + stride as u64);
        let b = sample(&[3], 300 + stride as u64);
        run(
            &format!("conv2d stride {stride}"),
            vec![x, w, b],
            vec!["input", "filters", "bias"],
            &move |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), stride)?;
                let p = tape.tpp(y, &TppConfig { levels: 2, pool: TppPool::Avg })?;
                let len = tape.value(p).len();
                let ones = tape.input(Array::filled(&[1, len], 1.0));
                let zb = tape.input(Array::zeros(&[1]));
                tape.linear(p, ones, zb)
            },
        )?;
    }

    run(
        "max_pool2d",
        vec![sample(&[2, 6, 6], 7)],
        vec!["input"],
        &|tape, ids| {
            let y = tape.max_pool2d(ids[0], 2, 2)?;
            let p = tape.tpp(y, &TppConfig { levels: 3, pool: TppPool::Avg })?;
            let len = tape.value(p).len();
            let ones = tape.input(Array::filled(&[1, len], 1.0));
            let zb = tape.input(Array::zeros(&[1]));
            tape.linear(p, ones, zb)
        },
    )?;

    run(
        "avg_pool2d",
        vec![sample(&[2, 6, 6], 8)],
        vec!["input"],
        &|tape, ids| {
            let y = tape.avg_pool2d(ids[0], 3, 2)?;
            let p = tape.tpp(y, &TppConfig { levels: 2, pool: TppPool::Max })?;
            let len = tape.value(p).len();
            let ones = tape.input(Array::filled(&[1, len], 1.0));
            let zb = tape.input(Array::zeros(&[1]));
            tape.linear(p, ones, zb)
        },
    )?;

    run(
        "relu + sigmoid + bce_loss",
        vec![sample(&[6], 9)],
        vec!["input"],
        &|tape, ids| {
            let r = tape.relu(ids[0]);
            let s = tape.sigmoid(r);
            tape.bce_loss(s, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
        },
    )?;

    run(
        "linear",
        vec![sample(&[5], 10), sample(&[1, 5], 11), sample(&[1], 12)],
        vec!["input", "weights", "bias"],
        &|tape, ids| tape.linear(ids[0], ids[1], ids[2]),
    )?;

    run(
        "dropout (train, fixed mask)",
        vec![sample(&[12], 13)],
        vec!["input"],
        &|tape, ids| {
            // reseeded per evaluation, so the mask is identical across
            // the finite-difference probes
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let d = tape.dropout(ids[0], 0.5, Phase::Train, &mut rng)?;
            let s = tape.sigmoid(d);
            tape.bce_loss(s, &[1.0; 12])
        },
    )?;

    run(
        "add + concat_channels + scale",
        vec![sample(&[2, 3, 4], 14), sample(&[1, 3, 4], 15)],
        vec!["a", "b"],
        &|tape, ids| {
            let doubled = tape.add(ids[0], ids[0])?;
            let cat = tape.concat_channels(doubled, ids[1])?;
            let scaled = tape.scale(cat, 0.25);
            let p = tape.tpp(scaled, &TppConfig { levels: 2, pool: TppPool::Avg })?;
            let len = tape.value(p).len();
            let ones = tape.input(Array::filled(&[1, len], 1.0));
            let zb = tape.input(Array::zeros(&[1]));
            tape.linear(p, ones, zb)
        },
    )?;

    for (name, pool) in [("tpp max", TppPool::Max), ("tpp avg", TppPool::Avg)] {
        run(
            name,
            vec![sample(&[3, 4, 9], 16)],
            vec!["input"],
            &move |tape, ids| {
                let p = tape.tpp(ids[0], &TppConfig { levels: 3, pool })?;
                let s = tape.sigmoid(p);
                let t: Vec<f64> = (0..18).map(|i| (i % 2) as f64).collect();
                tape.bce_loss(s, &t)
            },
        )?;
    }

    run(
        "conv + relu + tpp + linear + sigmoid + bce composite",
        vec![
            sample(&[2, 6, 9], 20),
            sample(&[3, 2, 3, 3], 21),
            sample(&[3], 22),
            sample(&[4, 9], 23),
            sample(&[4], 24),
        ],
        vec!["input", "conv.w", "conv.b", "fc.w", "fc.b"],
        &|tape, ids| {
            let c = tape.conv2d(ids[0], ids[1], Some(ids[2]), 1)?;
            let r = tape.relu(c);
            let p = tape.tpp(r, &TppConfig { levels: 2, pool: TppPool::Max })?;
            let l = tape.linear(p, ids[3], ids[4])?;
            let s = tape.sigmoid(l);
            tape.bce_loss(s, &[1.0, 0.0, 0.0, 1.0])
        },
    )?;

    Ok(reports)
}

/// Gradient-check a graph given as a builder that consumes leaf nodes for
/// every parameter block and returns a scalar output node. The analytic
/// side runs one tape backward; the numeric side re-evaluates the graph
/// with perturbed parameters.
pub fn grad_check_graph<B>(
    build: B,
    params: &[Array],
    names: &[String],
    config: &GradCheckConfig,
) -> Result<GradCheckReport, DiffError>
where
    B: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.input(p.clone())).collect();
    let output = build(&mut tape, &ids)?;
    tape.backward(output)?;
    let analytic: Vec<Array> = ids.iter().map(|&id| tape.grad(id).clone()).collect();

    let mut work: Vec<Array> = params.to_vec();
    let eval = |ps: &[Array]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.input(p.clone())).collect();
        let output = build(&mut tape, &ids).expect("graph rebuild failed during finite differences");
        tape.value(output).item()
    };
    Ok(grad_check(eval, &mut work, names, &analytic, config))
}
