use super::{Model, ModelError, ModelMode, ModelSpec, Params, RunningStats, COORDS};
use crate::nn::batchnorm::{update_running, BatchNormCache};
use crate::nn::lstm::BiLstmCache;
use crate::nn::{self, NnError};
use crate::rng::StreamRng;
use crate::tensor::{Element, Tensor};

fn check_input<T: Element>(spec: &ModelSpec, x: &Tensor<T>) -> Result<usize, ModelError> {
    if spec.mode == ModelMode::PaperLiteral {
        return Err(ModelError::NotExecutable);
    }
    x.expect_rank(4)?;
    let n = x.shape()[0];
    x.expect_shape("model input", &[n, spec.frames, spec.keypoints, COORDS])?;
    if n == 0 {
        return Err(NnError::Empty("model input batch").into());
    }
    Ok(n)
}

/// Inference-mode logits: batch-norm running statistics, no dropout.
pub(super) fn infer_logits<T: Element>(
    spec: &ModelSpec,
    p: &Params<T>,
    s: &RunningStats<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let n = check_input(spec, x)?;
    let mut a = x.clone();
    for (i, b) in p.blocks.iter().enumerate() {
        let z = nn::relu(&nn::conv2d(&a, &b.kernel, &b.bias)?);
        let z = nn::batchnorm_infer(&z, &b.gamma, &b.beta, &s.mean[i], &s.var[i], spec.bn_eps)?;
        a = nn::maxpool2d(&z, spec.pool())?.output;
    }
    let (w, bias) = p.proj.as_ref().ok_or(ModelError::NotExecutable)?;
    let t = spec.frames;
    let flat = a.reshape(&[n * t, spec.conv_features()])?;
    let h = nn::dense(&flat, w, bias)?.reshape(&[n, t, spec.lstm_proj_dim])?;
    let (h, _) = nn::bilstm(&h, &p.lstm1[0], &p.lstm1[1], true)?;
    let (h, _) = nn::bilstm(&h, &p.lstm2[0], &p.lstm2[1], false)?;
    Ok(nn::dense(&h, &p.head_w, &p.head_b)?)
}

struct BlockCache {
    input: Tensor,
    relu_out: Tensor,
    bn: BatchNormCache<f64>,
    bn_out_shape: Vec<usize>,
    argmax: Vec<usize>,
    mask: Option<Vec<bool>>,
}

/// Everything the backward pass needs from one training-mode forward pass.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    proj_in: Tensor,
    lstm1_in: Tensor,
    lstm1: BiLstmCache<f64>,
    mask1: Option<Vec<bool>>,
    lstm2_in: Tensor,
    lstm2: BiLstmCache<f64>,
    mask2: Option<Vec<bool>>,
    head_in: Tensor,
}

impl ForwardCache {
    /// True when both passes took the same ReLU and max-pool branches, so a
    /// finite difference between them is free of kinks.
    pub fn same_branches(&self, other: &ForwardCache) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| {
                a.argmax == b.argmax
                    && a.relu_out
                        .data()
                        .iter()
                        .zip(b.relu_out.data())
                        .all(|(x, y)| (*x > 0.0) == (*y > 0.0))
            })
    }
}

fn maybe_dropout(
    x: Tensor,
    rate: f64,
    rng: &mut Option<&mut StreamRng>,
) -> Result<(Tensor, Option<Vec<bool>>), ModelError> {
    match rng {
        Some(r) if rate > 0.0 => {
            let (y, m) = nn::dropout(&x, rate, &mut **r)?;
            Ok((y, Some(m)))
        }
        _ => Ok((x, None)),
    }
}

fn undo_dropout(g: Tensor, mask: &Option<Vec<bool>>, rate: f64) -> Result<Tensor, ModelError> {
    match mask {
        Some(m) => Ok(nn::dropout_backward(m, rate, &g)?),
        None => Ok(g),
    }
}

impl Model {
    /// Training-mode forward pass: batch statistics for batch norm, and
    /// dropout when `rng` is given. Returns logits.
    pub fn forward_train(
        &self,
        x: &Tensor,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<(Tensor, ForwardCache), ModelError> {
        let spec = &self.spec;
        let n = check_input(spec, x)?;
        let p = &self.params;
        let mut blocks = Vec::with_capacity(p.blocks.len());
        let mut a = x.clone();
        for b in &p.blocks {
            let relu_out = nn::relu(&nn::conv2d(&a, &b.kernel, &b.bias)?);
            let (z, bn) = nn::batchnorm_train(&relu_out, &b.gamma, &b.beta, spec.bn_eps)?;
            let pooled = nn::maxpool2d(&z, spec.pool())?;
            let rate = if spec.post_conv_dropout { spec.dropout } else { 0.0 };
            let (out, mask) = maybe_dropout(pooled.output, rate, &mut rng)?;
            blocks.push(BlockCache {
                input: a,
                relu_out,
                bn,
                bn_out_shape: z.shape().to_vec(),
                argmax: pooled.argmax,
                mask,
            });
            a = out;
        }
        let (w, bias) = p.proj.as_ref().ok_or(ModelError::NotExecutable)?;
        let t = spec.frames;
        let proj_in = a.reshape(&[n * t, spec.conv_features()])?;
        let lstm1_in = nn::dense(&proj_in, w, bias)?.reshape(&[n, t, spec.lstm_proj_dim])?;
        let (h1, lstm1) = nn::bilstm(&lstm1_in, &p.lstm1[0], &p.lstm1[1], true)?;
        let (lstm2_in, mask1) = maybe_dropout(h1, spec.dropout, &mut rng)?;
        let (h2, lstm2) = nn::bilstm(&lstm2_in, &p.lstm2[0], &p.lstm2[1], false)?;
        let (head_in, mask2) = maybe_dropout(h2, spec.dropout, &mut rng)?;
        let logits = nn::dense(&head_in, &p.head_w, &p.head_b)?;
        Ok((
            logits,
            ForwardCache {
                blocks,
                proj_in,
                lstm1_in,
                lstm1,
                mask1,
                lstm2_in,
                lstm2,
                mask2,
                head_in,
            },
        ))
    }

    /// Parameter gradients given the loss gradient at the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Params, ModelError> {
        let spec = &self.spec;
        let p = &self.params;
        let mut g = p.zeros_like();
        let head = nn::dense_backward(&cache.head_in, &p.head_w, grad_logits)?;
        g.head_w = head.weights;
        g.head_b = head.bias;
        let dh2 = undo_dropout(head.input, &cache.mask2, spec.dropout)?;
        let l2 = nn::bilstm_backward(&cache.lstm2_in, &cache.lstm2, &p.lstm2[0], &p.lstm2[1], &dh2, false)?;
        g.lstm2 = [l2.fwd, l2.bwd];
        let dh1 = undo_dropout(l2.input, &cache.mask1, spec.dropout)?;
        let l1 = nn::bilstm_backward(&cache.lstm1_in, &cache.lstm1, &p.lstm1[0], &p.lstm1[1], &dh1, true)?;
        g.lstm1 = [l1.fwd, l1.bwd];
        let (w, _) = p.proj.as_ref().ok_or(ModelError::NotExecutable)?;
        let n_t = cache.proj_in.shape()[0];
        let dproj = l1.input.reshape(&[n_t, spec.lstm_proj_dim])?;
        let pr = nn::dense_backward(&cache.proj_in, w, &dproj)?;
        g.proj = Some((pr.weights, pr.bias));
        let mut da = pr.input;
        let rate = if spec.post_conv_dropout { spec.dropout } else { 0.0 };
        for (i, (b, c)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let &(t, k, ch) = &spec.block_shapes()[i];
            let n = c.input.shape()[0];
            let dpool = undo_dropout(da.reshape(&[n, t, k, ch])?, &c.mask, rate)?;
            let dz = nn::maxpool2d_backward(&c.bn_out_shape, &c.argmax, &dpool)?;
            let bn = nn::batchnorm_backward(&c.bn, &b.gamma, &dz)?;
            let dr = nn::relu_backward(&c.relu_out, &bn.input)?;
            let conv = nn::conv2d_backward(&c.input, &b.kernel, &dr)?;
            let gb = &mut g.blocks[i];
            gb.kernel = conv.kernel;
            gb.bias = conv.bias;
            gb.gamma = bn.gamma;
            gb.beta = bn.beta;
            da = conv.input;
        }
        Ok(g)
    }

    /// Folds a training pass's batch statistics into the running averages.
    pub fn update_running(&mut self, cache: &ForwardCache) {
        let m = self.spec.bn_momentum;
        for (i, c) in cache.blocks.iter().enumerate() {
            update_running(&mut self.stats.mean[i], &c.bn.batch_mean, m);
            update_running(&mut self.stats.var[i], &c.bn.batch_var, m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn batch(n: usize, spec: &ModelSpec, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "batch", 0);
        Tensor::from_fn(&[n, spec.frames, spec.keypoints, COORDS], |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn scaled_forward_rows_sum_to_one() {
        let m = Model::build(ModelSpec::scaled(5), 3).unwrap();
        let x = batch(3, m.spec(), 0);
        let p = m.predict(&x).unwrap();
        assert_eq!(p.shape(), &[3, 5]);
        for row in p.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn rows_are_independent_of_the_batch() {
        let m = Model::build(ModelSpec::scaled(4), 1).unwrap();
        let x = batch(3, m.spec(), 5);
        let all = m.predict(&x).unwrap();
        for i in 0..3 {
            let one = Tensor::from_vec(&[1, 30, 63, 3], x.outer(i).to_vec()).unwrap();
            assert_eq!(m.predict(&one).unwrap().data(), all.outer(i));
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut m = Model::build(ModelSpec::scaled(4), 1).unwrap();
        m.params.head_w.data_mut().fill(0.0);
        let p = m.predict(&batch(2, m.spec(), 1)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn paper_literal_does_not_execute() {
        let m = Model::build(ModelSpec::paper_literal(), 0).unwrap();
        let x = Tensor::zeros(&[1, 30, 522, 3]);
        assert!(matches!(m.predict(&x), Err(ModelError::NotExecutable)));
    }

    #[test]
    fn train_pass_without_dropout_matches_infer_with_batch_stats() {
        let mut m = Model::build(ModelSpec::scaled(3), 2).unwrap();
        let x = batch(2, m.spec(), 2);
        let (logits, cache) = m.forward_train(&x, None).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        // With momentum 0 the running stats become this batch's statistics.
        m.spec.bn_momentum = 0.0;
        m.update_running(&cache);
        let inf = m.logits(&x).unwrap();
        assert!(inf.max_abs_diff(&logits) < 1e-9);
    }

    #[test]
    fn f32_inference_tracks_f64() {
        let m = Model::build(ModelSpec::scaled(5), 4).unwrap();
        let x = batch(2, m.spec(), 4);
        let p64 = m.predict(&x).unwrap();
        let mut m32 = m.clone();
        m32.spec.dtype = crate::tensor::DType::F32;
        let p32 = m32.predict(&x).unwrap();
        assert!(p32.max_abs_diff(&p64) < 1e-3);
    }
}
