//! The SDF network, the radiance network, and their shared parameter pair.
//!
//! Both networks exist in two equivalent forms:
//! - `eval_raw`: plain matrix arithmetic, used by sphere tracing, sampling,
//!   and mesh extraction where no parameter gradients are needed.
//! - `eval_tape`: the same computation written with tape primitives for
//!   training.
//!
//! Spatial SDF gradients are produced by propagating the encoding Jacobian
//! through every layer alongside the value (three extra streams, one per
//! input coordinate). On the tape this makes the gradient itself a
//! differentiable function of the weights, which the loss terms rely on.

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape, TapeBinding, TapeError};
use crate::fields::config::{Activation, FieldConfig};
use crate::fields::encoding::{encode, encode_with_jacobian, encoded_dim};
use crate::mat::Mat;
use crate::math::Vec3;
use crate::scalar::{real, Real};
use rand::Rng;
use rand_distr::StandardNormal;

fn normal<T: Real>(rng: &mut impl Rng, mean: f64, std: f64) -> T {
    let n: f64 = rng.sample(StandardNormal);
    real(mean + std * n)
}

fn add_bias<T: Real>(mut m: Mat<T>, b: &Mat<T>) -> Mat<T> {
    for i in 0..m.rows() {
        for (x, y) in m.row_mut(i).iter_mut().zip(b.as_slice()) {
            *x += *y;
        }
    }
    m
}

fn hconcat<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.rows(), b.rows());
    let mut out = Mat::zeros(a.rows(), a.cols() + b.cols());
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        row[..a.cols()].copy_from_slice(a.row(i));
        row[a.cols()..].copy_from_slice(b.row(i));
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Signed distance network: hidden layers with an optional encoded-input skip
/// concat, and a linear output producing the distance plus a feature vector.
#[derive(Clone, Debug)]
pub struct SdfNetwork {
    layers: Vec<Layer>,
    out: Layer,
    pos_octaves: usize,
    skip_layer: usize,
    feature_dim: usize,
    activation: Activation,
    sharpness: f64,
}

/// Raw evaluation output.
pub struct SdfEval<T> {
    /// `[N x 1]` signed distances.
    pub sdf: Mat<T>,
    /// `[N x 3]` spatial gradients, if requested.
    pub grad: Option<Mat<T>>,
    /// `[N x feature_dim]` geometry features, if requested.
    pub feat: Option<Mat<T>>,
}

/// Tape evaluation output.
pub struct SdfTapeOut {
    pub sdf: NodeId,
    pub grad: Option<NodeId>,
    pub feat: NodeId,
}

impl SdfNetwork {
    /// Registers freshly initialized parameters into `set`.
    ///
    /// Initialization follows the geometric recipe for SDF networks: hidden
    /// weights `N(0, sqrt(2/width))`, Fourier columns of the first layer and
    /// of the skip block zeroed, and an output layer whose distance column
    /// has mean `sqrt(pi)/sqrt(width)` with bias `-r0`, so the fresh field
    /// approximates `|x| - r0`.
    pub fn init<T: Real>(cfg: &FieldConfig, set: &mut ParamSet<T>, rng: &mut impl Rng) -> Self {
        let e = encoded_dim(cfg.pos_octaves);
        let w = cfg.sdf_width;
        let mut layers = Vec::with_capacity(cfg.sdf_layers);
        for l in 0..cfg.sdf_layers {
            let has_skip = cfg.skip_layer > 0 && l + 1 == cfg.skip_layer;
            let in_dim = if l == 0 {
                e
            } else if has_skip {
                w + e
            } else {
                w
            };
            let std = (2.0 / w as f64).sqrt();
            let mut wm = Mat::from_fn(in_dim, w, |_, _| normal::<T>(rng, 0.0, std));
            if l == 0 && cfg.pos_octaves > 0 {
                for i in 3..in_dim {
                    for v in wm.row_mut(i) {
                        *v = T::zero();
                    }
                }
            }
            if has_skip && cfg.pos_octaves > 0 {
                // Rows w..w+3 see the raw coordinates of the skip block and
                // keep their init; the sin/cos rows start silent.
                for i in (w + 3)..in_dim {
                    for v in wm.row_mut(i) {
                        *v = T::zero();
                    }
                }
            }
            layers.push(Layer {
                w: set.add(format!("sdf.w{l}"), wm),
                b: set.add(format!("sdf.b{l}"), Mat::zeros(1, w)),
            });
        }

        let out_dim = 1 + cfg.feature_dim;
        let dist_mean = std::f64::consts::PI.sqrt() / (w as f64).sqrt();
        let feat_std = (2.0 / out_dim as f64).sqrt();
        let wm = Mat::from_fn(w, out_dim, |_, j| {
            if j == 0 {
                normal::<T>(rng, dist_mean, 1e-4)
            } else {
                normal::<T>(rng, 0.0, feat_std)
            }
        });
        let mut bm = Mat::zeros(1, out_dim);
        *bm.at_mut(0, 0) = real::<T>(-cfg.geometric_init_radius);
        let out = Layer {
            w: set.add("sdf.out.w", wm),
            b: set.add("sdf.out.b", bm),
        };

        Self {
            layers,
            out,
            pos_octaves: cfg.pos_octaves,
            skip_layer: cfg.skip_layer,
            feature_dim: cfg.feature_dim,
            activation: cfg.sdf_activation,
            sharpness: cfg.softplus_sharpness,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Evaluates points given as an `[N x 3]` matrix.
    pub fn eval_raw<T: Real>(
        &self,
        set: &ParamSet<T>,
        pts: &Mat<T>,
        want_grad: bool,
        want_feat: bool,
    ) -> SdfEval<T> {
        self.eval_raw_probed(set, pts, want_grad, want_feat, |_, _| {})
    }

    /// `eval_raw` with a probe receiving each hidden layer's input matrix.
    /// Exposed for structural tests.
    #[doc(hidden)]
    pub fn eval_raw_probed<T: Real>(
        &self,
        set: &ParamSet<T>,
        pts: &Mat<T>,
        want_grad: bool,
        want_feat: bool,
        mut probe: impl FnMut(usize, &Mat<T>),
    ) -> SdfEval<T> {
        let s = real::<T>(self.sharpness);
        let (enc, jac) = if want_grad {
            let (e, j) = encode_with_jacobian(pts, self.pos_octaves);
            (e, Some(j))
        } else {
            (encode(pts, self.pos_octaves), None)
        };
        let mut h = enc.clone();
        let mut jh = jac.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            if self.skip_layer > 0 && l + 1 == self.skip_layer {
                h = hconcat(&h, &enc);
                if let (Some(jh), Some(jac)) = (jh.as_mut(), jac.as_ref()) {
                    for k in 0..3 {
                        jh[k] = hconcat(&jh[k], &jac[k]);
                    }
                }
            }
            probe(l, &h);
            let wv = set.value(layer.w);
            let z = add_bias(h.matmul(wv), set.value(layer.b));
            if let Some(jh) = jh.as_mut() {
                let dphi = match self.activation {
                    Activation::Softplus => {
                        z.map(|x| crate::autodiff::sigmoid_stable(x, s))
                    }
                    Activation::Relu => z.map(|x| {
                        if x > T::zero() {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }),
                };
                for k in 0..3 {
                    let mut p = jh[k].matmul(wv);
                    for (a, d) in p.as_mut_slice().iter_mut().zip(dphi.as_slice()) {
                        *a = *a * *d;
                    }
                    jh[k] = p;
                }
            }
            h = match self.activation {
                Activation::Softplus => z.map(|x| crate::autodiff::softplus_stable(x, s)),
                Activation::Relu => z.map(|x| x.max(T::zero())),
            };
        }

        let wv = set.value(self.out.w);
        let bv = set.value(self.out.b);
        let n = pts.rows();
        // Distance column of the output layer.
        let wcol = Mat::from_fn(wv.rows(), 1, |i, _| wv.at(i, 0));
        let mut sdf = h.matmul(&wcol);
        let b0 = bv.at(0, 0);
        for v in sdf.as_mut_slice() {
            *v += b0;
        }
        let grad = jh.as_ref().map(|jh| {
            let cols: Vec<Mat<T>> = (0..3).map(|k| jh[k].matmul(&wcol)).collect();
            Mat::from_fn(n, 3, |i, k| cols[k].at(i, 0))
        });
        let feat = want_feat.then(|| {
            let wf = Mat::from_fn(wv.rows(), self.feature_dim, |i, j| wv.at(i, 1 + j));
            let mut f = h.matmul(&wf);
            for i in 0..n {
                for (j, v) in f.row_mut(i).iter_mut().enumerate() {
                    *v += bv.at(0, 1 + j);
                }
            }
            f
        });
        SdfEval { sdf, grad, feat }
    }

    /// Tape evaluation; `pts` enter as constants, so gradients flow to the
    /// parameters only.
    pub fn eval_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bind: &TapeBinding,
        pts: &Mat<T>,
        with_grad: bool,
    ) -> Result<SdfTapeOut, TapeError> {
        let s = real::<T>(self.sharpness);
        let (enc_m, jac_m) = if with_grad {
            let (e, j) = encode_with_jacobian(pts, self.pos_octaves);
            (e, Some(j))
        } else {
            (encode(pts, self.pos_octaves), None)
        };
        let enc = tape.constant(enc_m)?;
        let jc: Option<[NodeId; 3]> = match jac_m {
            Some([j0, j1, j2]) => Some([
                tape.constant(j0)?,
                tape.constant(j1)?,
                tape.constant(j2)?,
            ]),
            None => None,
        };
        let mut h = enc;
        let mut jh = jc;
        for (l, layer) in self.layers.iter().enumerate() {
            if self.skip_layer > 0 && l + 1 == self.skip_layer {
                h = tape.concat_cols(h, enc)?;
                if let (Some(jh), Some(jc)) = (jh.as_mut(), jc.as_ref()) {
                    for k in 0..3 {
                        jh[k] = tape.concat_cols(jh[k], jc[k])?;
                    }
                }
            }
            let w = bind.node(layer.w);
            let b = bind.node(layer.b);
            let z0 = tape.matmul(h, w)?;
            let z = tape.add_row_vec(z0, b)?;
            if let Some(jh) = jh.as_mut() {
                let dphi = match self.activation {
                    Activation::Softplus => tape.sigmoid(z, s)?,
                    Activation::Relu => {
                        let r = tape.relu(z)?;
                        tape.sign(r)?
                    }
                };
                for k in 0..3 {
                    let p = tape.matmul(jh[k], w)?;
                    jh[k] = tape.mul(dphi, p)?;
                }
            }
            h = match self.activation {
                Activation::Softplus => tape.softplus(z, s)?,
                Activation::Relu => tape.relu(z)?,
            };
        }
        let w = bind.node(self.out.w);
        let b = bind.node(self.out.b);
        let y0 = tape.matmul(h, w)?;
        let y = tape.add_row_vec(y0, b)?;
        let sdf = tape.slice_cols(y, 0, 1)?;
        let feat = tape.slice_cols(y, 1, self.feature_dim)?;
        let grad = match jh {
            Some(jh) => {
                let wcol = tape.slice_cols(w, 0, 1)?;
                let g0 = tape.matmul(jh[0], wcol)?;
                let g1 = tape.matmul(jh[1], wcol)?;
                let g2 = tape.matmul(jh[2], wcol)?;
                let g01 = tape.concat_cols(g0, g1)?;
                Some(tape.concat_cols(g01, g2)?)
            }
            None => None,
        };
        Ok(SdfTapeOut { sdf, grad, feat })
    }
}

/// View-dependent radiance network over `(x, n, v, z)`.
#[derive(Clone, Debug)]
pub struct RadianceNetwork {
    layers: Vec<Layer>,
    out: Layer,
    pos_octaves: usize,
    dir_octaves: usize,
    activation: Activation,
    sharpness: f64,
    feature_dim: usize,
}

impl RadianceNetwork {
    pub fn init<T: Real>(cfg: &FieldConfig, set: &mut ParamSet<T>, rng: &mut impl Rng) -> Self {
        let in_dim =
            encoded_dim(cfg.pos_octaves) + 3 + encoded_dim(cfg.dir_octaves) + cfg.feature_dim;
        let w = cfg.radiance_width;
        let mut layers = Vec::with_capacity(cfg.radiance_layers);
        let mut prev = in_dim;
        for l in 0..cfg.radiance_layers {
            let std = (2.0 / prev as f64).sqrt();
            let wm = Mat::from_fn(prev, w, |_, _| normal::<T>(rng, 0.0, std));
            layers.push(Layer {
                w: set.add(format!("rad.w{l}"), wm),
                b: set.add(format!("rad.b{l}"), Mat::zeros(1, w)),
            });
            prev = w;
        }
        let wm = Mat::from_fn(prev, 3, |_, _| normal::<T>(rng, 0.0, (1.0 / prev as f64).sqrt()));
        let out = Layer {
            w: set.add("rad.out.w", wm),
            b: set.add("rad.out.b", Mat::zeros(1, 3)),
        };
        Self {
            layers,
            out,
            pos_octaves: cfg.pos_octaves,
            dir_octaves: cfg.dir_octaves,
            activation: cfg.radiance_activation,
            sharpness: cfg.softplus_sharpness,
            feature_dim: cfg.feature_dim,
        }
    }

    fn hidden<T: Real>(&self, z: Mat<T>) -> Mat<T> {
        let s = real::<T>(self.sharpness);
        match self.activation {
            Activation::Softplus => z.map(|x| crate::autodiff::softplus_stable(x, s)),
            Activation::Relu => z.map(|x| x.max(T::zero())),
        }
    }

    /// RGB in `[0, 1]` for unit-norm normals and view directions.
    pub fn eval_raw<T: Real>(
        &self,
        set: &ParamSet<T>,
        x: &Mat<T>,
        n: &Mat<T>,
        v: &Mat<T>,
        feat: &Mat<T>,
    ) -> Mat<T> {
        assert_eq!(feat.cols(), self.feature_dim, "feature width mismatch");
        let enc_x = encode(x, self.pos_octaves);
        let enc_v = encode(v, self.dir_octaves);
        let mut h = hconcat(&hconcat(&enc_x, n), &hconcat(&enc_v, feat));
        for layer in &self.layers {
            let z = add_bias(h.matmul(set.value(layer.w)), set.value(layer.b));
            h = self.hidden(z);
        }
        let z = add_bias(h.matmul(set.value(self.out.w)), set.value(self.out.b));
        z.map(|x| crate::autodiff::sigmoid_stable(x, T::one()))
    }

    /// Tape evaluation. `x` and `v` enter as constants; `n` and `feat` are
    /// tape nodes so appearance gradients reach the geometry.
    pub fn eval_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bind: &TapeBinding,
        x: &Mat<T>,
        n: NodeId,
        v: &Mat<T>,
        feat: NodeId,
    ) -> Result<NodeId, TapeError> {
        let s = real::<T>(self.sharpness);
        let enc_x = tape.constant(encode(x, self.pos_octaves))?;
        let enc_v = tape.constant(encode(v, self.dir_octaves))?;
        let a = tape.concat_cols(enc_x, n)?;
        let b = tape.concat_cols(enc_v, feat)?;
        let mut h = tape.concat_cols(a, b)?;
        for layer in &self.layers {
            let z0 = tape.matmul(h, bind.node(layer.w))?;
            let z = tape.add_row_vec(z0, bind.node(layer.b))?;
            h = match self.activation {
                Activation::Softplus => tape.softplus(z, s)?,
                Activation::Relu => tape.relu(z)?,
            };
        }
        let z0 = tape.matmul(h, bind.node(self.out.w))?;
        let z = tape.add_row_vec(z0, bind.node(self.out.b))?;
        tape.sigmoid(z, T::one())
    }
}

/// The trainable geometry/appearance pair plus the two density parameters.
///
/// Positivity of the density parameters is guaranteed by storing their
/// logarithms; `alpha` starts at `1/beta`.
#[derive(Clone, Debug)]
pub struct FieldPair {
    pub cfg: FieldConfig,
    pub sdf: SdfNetwork,
    pub radiance: RadianceNetwork,
    pub log_alpha: ParamId,
    pub log_beta: ParamId,
}

impl FieldPair {
    pub fn init<T: Real>(
        cfg: FieldConfig,
        set: &mut ParamSet<T>,
        rng: &mut impl Rng,
    ) -> crate::Result<Self> {
        cfg.validate()?;
        let sdf = SdfNetwork::init(&cfg, set, rng);
        let radiance = RadianceNetwork::init(&cfg, set, rng);
        let lb = cfg.beta_init.ln();
        let log_alpha = set.add("density.log_alpha", Mat::scalar(real::<T>(-lb)));
        let log_beta = set.add("density.log_beta", Mat::scalar(real::<T>(lb)));
        Ok(Self {
            cfg,
            sdf,
            radiance,
            log_alpha,
            log_beta,
        })
    }

    pub fn alpha<T: Real>(&self, set: &ParamSet<T>) -> T {
        set.value(self.log_alpha).item().exp()
    }

    pub fn beta<T: Real>(&self, set: &ParamSet<T>) -> T {
        set.value(self.log_beta).item().exp()
    }

    /// Signed distance at a single point.
    pub fn sdf_value_at<T: Real>(&self, set: &ParamSet<T>, p: Vec3<T>) -> T {
        let pts = Mat::from_vec(1, 3, vec![p.x, p.y, p.z]);
        self.sdf.eval_raw(set, &pts, false, false).sdf.at(0, 0)
    }

    /// Signed distance and spatial gradient at a single point.
    pub fn sdf_grad_at<T: Real>(&self, set: &ParamSet<T>, p: Vec3<T>) -> (T, Vec3<T>) {
        let pts = Mat::from_vec(1, 3, vec![p.x, p.y, p.z]);
        let out = self.sdf.eval_raw(set, &pts, true, false);
        let g = out.grad.as_ref().unwrap();
        (
            out.sdf.at(0, 0),
            Vec3::new(g.at(0, 0), g.at(0, 1), g.at(0, 2)),
        )
    }
}
