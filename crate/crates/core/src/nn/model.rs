use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Primitive, Tape, Var};
use crate::lstm_pool::{project_slice, LstmPoolParams, ModulationActivation, PoolSharingMode, PARAMS_PER_UNIT};
use crate::real::Real;
use crate::tensor::{Tensor, TensorError};

use super::spec::{LayerSpec, NetworkSpec, PoolKind, SampleShape};
use super::NnError;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    Pool,
}

#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor<T>,
}

/// Running batch-norm statistics, updated as `m ← 0.9·m + 0.1·batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv { w: usize, b: usize, stride: usize, pad: usize },
    Act(ModulationActivation),
    MaxPool { k: usize, stride: usize },
    AvgPool { k: usize, stride: usize },
    LstmPool { p: usize, k: usize, stride: usize, psi: ModulationActivation },
    Fc { w: usize, b: usize },
    Dropout(f64),
    BatchNorm { gamma: usize, beta: usize, stats: usize },
    Identity,
}

pub enum Mode<'a> {
    /// Sample dropout masks from the rng and normalize with batch statistics.
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// A built network: its spec, parameters and batch-norm statistics.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    spec: NetworkSpec,
    shapes: Vec<SampleShape>,
    layers: Vec<Layer>,
    params: Vec<Param<T>>,
    running: Vec<BnRunning>,
}

fn he_uniform<T: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape")
}

impl<T: Real> Model<T> {
    /// Validate the shape chain and initialize every parameter from `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Param<T>> = Vec::new();
        let mut running = Vec::new();
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shared_pool = None;
        let mut prev = SampleShape::Map {
            c: spec.input[0],
            h: spec.input[1],
            w: spec.input[2],
        };
        let push = |params: &mut Vec<Param<T>>, name: String, role, value| {
            params.push(Param { name, role, value });
            params.len() - 1
        };
        for (i, (layer, &shape)) in spec.layers.iter().zip(&shapes).enumerate() {
            let tag = format!("{i}.{}", layer.name());
            let l = match layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    let cin = prev.dims()[0];
                    let fan_in = cin * kernel * kernel;
                    let w = he_uniform(&mut rng, vec![*out_channels, cin, *kernel, *kernel], fan_in);
                    let w = push(&mut params, format!("{tag}.weight"), ParamRole::Weight, w);
                    let b = push(&mut params, format!("{tag}.bias"), ParamRole::Bias, Tensor::zeros(vec![*out_channels]));
                    Layer::Conv {
                        w,
                        b,
                        stride: *stride,
                        pad: *pad,
                    }
                }
                LayerSpec::Fc { out_units } => {
                    let fan_in = prev.numel();
                    let w = he_uniform(&mut rng, vec![fan_in, *out_units], fan_in);
                    let w = push(&mut params, format!("{tag}.weight"), ParamRole::Weight, w);
                    let b = push(&mut params, format!("{tag}.bias"), ParamRole::Bias, Tensor::zeros(vec![*out_units]));
                    Layer::Fc { w, b }
                }
                LayerSpec::BatchNorm => {
                    let c = prev.dims()[0];
                    let gamma = push(&mut params, format!("{tag}.gamma"), ParamRole::BnGamma, Tensor::full(vec![c], T::one()));
                    let beta = push(&mut params, format!("{tag}.beta"), ParamRole::BnBeta, Tensor::zeros(vec![c]));
                    running.push(BnRunning {
                        mean: vec![0.0; c],
                        var: vec![1.0; c],
                    });
                    Layer::BatchNorm {
                        gamma,
                        beta,
                        stats: running.len() - 1,
                    }
                }
                LayerSpec::Activation { function } => Layer::Act(*function),
                LayerSpec::Dropout { rate } => Layer::Dropout(*rate),
                LayerSpec::SoftmaxXent { .. } => Layer::Identity,
                LayerSpec::Pool { kind, k, stride, sharing, .. } => match kind {
                    PoolKind::Max => Layer::MaxPool { k: *k, stride: *stride },
                    PoolKind::Avg => Layer::AvgPool { k: *k, stride: *stride },
                    PoolKind::Lstm => {
                        let psi = spec.pool_psi(i);
                        let p = match (sharing, shared_pool) {
                            (PoolSharingMode::GlobalShared, Some(p)) => p,
                            _ => {
                                let units = match sharing {
                                    PoolSharingMode::PerRegion => shape.dims()[1] * shape.dims()[2],
                                    _ => 1,
                                };
                                let mut data = Vec::with_capacity(units * PARAMS_PER_UNIT);
                                for _ in 0..units {
                                    data.extend(LstmPoolParams::init_for_len(&mut rng, k * k).to_array().map(T::lit));
                                }
                                let t = if units == 1 && *sharing != PoolSharingMode::PerRegion {
                                    Tensor::new(vec![PARAMS_PER_UNIT], data)
                                } else {
                                    Tensor::new(vec![units, PARAMS_PER_UNIT], data)
                                }
                                .expect("shape");
                                let name = match sharing {
                                    PoolSharingMode::GlobalShared => "shared.lstm_pool".to_string(),
                                    _ => format!("{tag}.unit"),
                                };
                                let p = push(&mut params, name, ParamRole::Pool, t);
                                if *sharing == PoolSharingMode::GlobalShared {
                                    shared_pool = Some(p);
                                }
                                p
                            }
                        };
                        Layer::LstmPool {
                            p,
                            k: *k,
                            stride: *stride,
                            psi,
                        }
                    }
                },
            };
            layers.push(l);
            prev = shape;
        }
        Ok(Model {
            spec: spec.clone(),
            shapes,
            layers,
            params,
            running,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn output_shape(&self) -> SampleShape {
        *self.shapes.last().unwrap_or(&SampleShape::Map {
            c: self.spec.input[0],
            h: self.spec.input[1],
            w: self.spec.input[2],
        })
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[BnRunning] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [BnRunning] {
        &mut self.running
    }

    /// Number of trainable scalars; an aliased pooling unit counts once.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Index into [`Model::params`] of each learnable pooling layer's unit,
    /// in layer order (repeated when shared).
    pub fn pool_units(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::LstmPool { p, .. } => Some((i, *p)),
                _ => None,
            })
            .collect()
    }

    /// ψ of the learnable pooling layer at spec index `layer`.
    pub fn pool_psi(&self, layer: usize) -> Option<ModulationActivation> {
        match self.layers.get(layer) {
            Some(Layer::LstmPool { psi, .. }) => Some(*psi),
            _ => None,
        }
    }

    /// Clamp `w_g ≥ eps` and `b_g ≥ 0` on every pooling unit.
    pub fn project_pool_constraints(&mut self, eps: f64) {
        for p in self.params.iter_mut().filter(|p| p.role == ParamRole::Pool) {
            project_slice(p.value.data_mut(), eps);
        }
    }

    /// Put every parameter on the tape, trainable or not.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Forward `x[B,C,H,W]`. In training mode parameters are trainable leaves;
    /// in eval mode they are constants. Returns the output and the bound
    /// parameters, aligned with [`Model::params`].
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<(Var, Vec<Var>), NnError> {
        let pv = self.bind(tape, matches!(mode, Mode::Train(_)));
        let out = self.forward_with(tape, x, &pv, mode)?;
        Ok((out, pv))
    }

    /// Forward with caller-bound parameters. Returns the pre-softmax output,
    /// `[B, n]` after a flat layer and `[B, C, H, W]` otherwise.
    pub fn forward_with(&mut self, tape: &mut Tape<T>, x: Var, pv: &[Var], mode: Mode) -> Result<Var, NnError> {
        self.run_layers(tape, x, pv, mode, self.layers.len())
    }

    /// Eval-mode activations entering layer `upto` (the input itself for 0).
    pub fn features(&mut self, x: Tensor<T>, upto: usize) -> Result<Tensor<T>, NnError> {
        let upto = upto.min(self.layers.len());
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let pv = self.bind(&mut tape, false);
        let y = self.run_layers(&mut tape, xv, &pv, Mode::Eval, upto)?;
        Ok(tape.value(y).clone())
    }

    fn run_layers(&mut self, tape: &mut Tape<T>, x: Var, pv: &[Var], mut mode: Mode, end: usize) -> Result<Var, NnError> {
        let xs = tape.shape(x);
        if xs.len() != 4 || xs[1..] != self.spec.input {
            return Err(NnError::Input {
                got: xs.to_vec(),
                expected: self.spec.input.to_vec(),
            });
        }
        let batch = xs[0];
        let mut h = x;
        for i in 0..end {
            let name = self.spec.layers[i].name();
            let wrap = |source: TensorError| NnError::Layer { index: i, layer: name, source };
            h = self.layer_forward(tape, i, h, pv, batch, &mut mode).map_err(wrap)?;
            if !tape.value(h).is_finite() {
                return Err(NnError::NonFinite { index: i, layer: name });
            }
        }
        Ok(h)
    }

    fn layer_forward(
        &mut self,
        tape: &mut Tape<T>,
        i: usize,
        h: Var,
        pv: &[Var],
        batch: usize,
        mode: &mut Mode,
    ) -> Result<Var, TensorError> {
        match self.layers[i].clone() {
            Layer::Conv { w, b, stride, pad } => tape.conv2d(h, pv[w], Some(pv[b]), stride, pad),
            Layer::Act(f) => match f {
                ModulationActivation::Relu => tape.relu(h),
                ModulationActivation::LeakyRelu { alpha } => tape.leaky_relu(h, alpha),
                ModulationActivation::Tanh => tape.tanh(h),
            },
            Layer::MaxPool { k, stride } => tape.apply(Primitive::MaxPool2d { k, stride }, &[h]),
            Layer::AvgPool { k, stride } => tape.apply(Primitive::AvgPool2d { k, stride }, &[h]),
            Layer::LstmPool { p, k, stride, psi } => tape.lstm_pool(h, pv[p], k, stride, psi),
            Layer::Fc { w, b } => {
                let n = tape.value(h).numel() / batch;
                let flat = if tape.shape(h).len() == 2 { h } else { tape.reshape(h, &[batch, n])? };
                let y = tape.matmul(flat, pv[w])?;
                tape.add(y, pv[b])
            }
            Layer::Dropout(rate) => match mode {
                Mode::Train(rng) if rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let scale = T::lit(1.0 / keep);
                    let shape = tape.shape(h).to_vec();
                    let n = tape.value(h).numel();
                    let mask = (0..n)
                        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                        .collect();
                    let mask = tape.constant(Tensor::new(shape, mask)?);
                    tape.mul(h, mask)
                }
                _ => Ok(h),
            },
            Layer::BatchNorm { gamma, beta, stats } => match mode {
                Mode::Train(_) => {
                    let (y, s) = tape.batch_norm_train(h, pv[gamma], pv[beta], BN_EPS)?;
                    let r = &mut self.running[stats];
                    for (m, b) in r.mean.iter_mut().zip(&s.mean) {
                        *m = BN_MOMENTUM * *m + (1.0 - BN_MOMENTUM) * b;
                    }
                    for (v, b) in r.var.iter_mut().zip(&s.var) {
                        *v = BN_MOMENTUM * *v + (1.0 - BN_MOMENTUM) * b;
                    }
                    Ok(y)
                }
                Mode::Eval => {
                    let r = &self.running[stats];
                    tape.batch_norm_eval(h, pv[gamma], pv[beta], &r.mean, &r.var, BN_EPS)
                }
            },
            Layer::Identity => Ok(h),
        }
    }

    /// Eval-mode output for a batch without keeping a tape around.
    pub fn predict(&mut self, x: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (y, _) = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }
}
