//! Dense reduced-basis network `(m_r, z) -> φ` with exact control Jacobians.
//!
//! Inputs are `[s ∘ m_r; z]` with `s` a per-coefficient input scale, outputs
//! are centered and divided by one shared deviation. The Jacobian-augmented
//! loss is differentiated forward-over-reverse: `d_Z` tangent columns per
//! record are pushed through the network alongside the primal values, and one
//! reverse sweep handles the augmented graph. Records and tangents are stacked as matrix columns so
//! every layer is a single matrix product.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::rng::{streams, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Sigmoid,
    /// Vector softmax over the units of a hidden layer.
    Softmax,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "tanh" => Activation::Tanh,
            "softplus" => Activation::Softplus,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            "identity" => Activation::Identity,
            other => return Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        })
    }

    /// Value, first and second derivative of an elementwise activation.
    #[inline]
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                (x.max(0.0) + (-x.abs()).exp().ln_1p(), s, s * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            Activation::Identity => (x, 1.0, 0.0),
            Activation::Softmax => unreachable!("softmax is not elementwise"),
        }
    }
}

fn as_row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `r_M`
    pub param_dim: usize,
    /// `d_Z`
    pub control_dim: usize,
    pub hidden: Vec<usize>,
    /// `r_U`
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn input_dim(&self) -> usize {
        self.param_dim + self.control_dim
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_dim == 0 || self.output_dim == 0 || self.widths().contains(&0) {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        Ok(())
    }

    pub fn num_weights(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    /// Multiplies `m_r` componentwise.
    pub input_scale: DVector<f64>,
    pub output_mean: DVector<f64>,
    pub output_std: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub scaling: Scaling,
}

/// Records of `(m_r, z, u_r, J_r)`, one per row (`J_r` as a list of matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub m_r: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub u_r: DMatrix<f64>,
    pub jac: Option<Vec<DMatrix<f64>>>,
    /// Per-record `||(I - P) u||_M` (POD truncation residual).
    pub truncation_norms: Option<Vec<f64>>,
    /// Per-record `||u||_M`.
    pub state_norms: Option<Vec<f64>>,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.m_r.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        check_len("dataset controls", n, self.z.nrows())?;
        check_len("dataset states", n, self.u_r.nrows())?;
        if let Some(jac) = &self.jac {
            check_len("dataset jacobians", n, jac.len())?;
            for j in jac {
                check_len("jacobian rows", self.u_r.ncols(), j.nrows())?;
                check_len("jacobian columns", self.z.ncols(), j.ncols())?;
            }
        }
        for norms in [&self.truncation_norms, &self.state_norms].into_iter().flatten() {
            check_len("dataset norms", n, norms.len())?;
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let rows = |m: &DMatrix<f64>| m.select_rows(idx);
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            m_r: rows(&self.m_r),
            z: rows(&self.z),
            u_r: rows(&self.u_r),
            jac: self.jac.as_ref().map(|j| idx.iter().map(|&i| j[i].clone()).collect()),
            truncation_norms: self.truncation_norms.as_ref().map(pick),
            state_norms: self.state_norms.as_ref().map(pick),
        }
    }
}

/// Values kept from a forward sweep for differentiation.
struct Trace {
    /// Post-activation values `a_0 .. a_{L-1}` (`a_0` is the scaled input).
    post: Vec<DMatrix<f64>>,
    /// Pre-activation values of the hidden layers.
    pre: Vec<DMatrix<f64>>,
    /// Network output in the scaled frame.
    out: DMatrix<f64>,
    /// Tangents: post-activation `ȧ_1 .. ȧ_{L-1}`, hidden pre-activation, output.
    t_post: Vec<DMatrix<f64>>,
    t_pre: Vec<DMatrix<f64>>,
    t_out: Option<DMatrix<f64>>,
}

impl SurrogateModel {
    /// Network with zero weights, unit input scale and identity output scaling.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                w: DMatrix::zeros(w[1], w[0]),
                b: DVector::zeros(w[1]),
            })
            .collect();
        let scaling = Scaling {
            input_scale: DVector::from_element(spec.param_dim, 1.0),
            output_mean: DVector::zeros(spec.output_dim),
            output_std: DVector::from_element(spec.output_dim, 1.0),
        };
        Ok(Self { spec, layers, scaling })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn initialized(spec: NetworkSpec, scaling: Scaling, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        check_len("input scale", model.spec.param_dim, scaling.input_scale.len())?;
        check_len("output scaling", model.spec.output_dim, scaling.output_mean.len())?;
        check_len("output scaling", model.spec.output_dim, scaling.output_std.len())?;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let mut rng = substream(seed, streams::WEIGHT_INIT, l as u64);
            let limit = (6.0 / (layer.w.nrows() + layer.w.ncols()) as f64).sqrt();
            for v in layer.w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        model.scaling = scaling;
        Ok(model)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn activation_at(&self, l: usize) -> Activation {
        if l + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.spec.activation
        }
    }

    /// Scaled inputs as columns (`n_0 x n`).
    fn inputs(&self, m_r: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("parameter coefficients", self.spec.param_dim, m_r.ncols())?;
        check_len("controls", self.spec.control_dim, z.ncols())?;
        check_len("batch size", m_r.nrows(), z.nrows())?;
        let rm = self.spec.param_dim;
        let mut x = DMatrix::zeros(self.spec.input_dim(), m_r.nrows());
        for b in 0..m_r.nrows() {
            for i in 0..rm {
                x[(i, b)] = m_r[(b, i)] * self.scaling.input_scale[i];
            }
            for k in 0..self.spec.control_dim {
                x[(rm + k, b)] = z[(b, k)];
            }
        }
        Ok(x)
    }

    fn forward_trace(&self, x: DMatrix<f64>, tangents: bool) -> Trace {
        let n = x.ncols();
        let dz = self.spec.control_dim;
        let rm = self.spec.param_dim;
        // input tangents are [0; I] per record and never stored densely
        let mut t_a: Option<DMatrix<f64>> = None;
        let mut post = vec![x];
        let mut pre = Vec::new();
        let mut t_post = Vec::new();
        let mut t_pre = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = post.last().unwrap();
            let mut h = &layer.w * a;
            for mut col in h.column_iter_mut() {
                col += &layer.b;
            }
            let t_h = if l == 0 {
                tangents.then(|| {
                    let wz = layer.w.columns(rm, dz);
                    let mut t = DMatrix::zeros(layer.w.nrows(), n * dz);
                    for b in 0..n {
                        t.columns_mut(b * dz, dz).copy_from(&wz);
                    }
                    t
                })
            } else {
                t_a.as_ref().map(|t| &layer.w * t)
            };
            if let Some(t) = t_a.take() {
                t_post.push(t);
            }
            if l + 1 == self.layers.len() {
                return Trace {
                    post,
                    pre,
                    out: h,
                    t_post,
                    t_pre,
                    t_out: t_h,
                };
            }
            let act = self.spec.activation;
            let (a_next, t_next) = apply_activation(act, &h, t_h.as_ref(), dz);
            pre.push(h);
            if let Some(t) = t_h {
                t_pre.push(t);
            }
            post.push(a_next);
            t_a = t_next;
        }
        unreachable!("network has at least one layer")
    }

    fn unscale_columns(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let s = &self.scaling;
        DMatrix::from_fn(y.ncols(), y.nrows(), |b, i| {
            s.output_mean[i] + s.output_std[i] * y[(i, b)]
        })
    }

    pub fn forward(&self, m_r: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.forward_batch(&as_row(m_r), &as_row(z))?;
        Ok(out.row(0).transpose())
    }

    /// Rows of `m_r` and `z` are records; returns one reduced state per row.
    pub fn forward_batch(&self, m_r: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self.inputs(m_r, z)?;
        let tr = self.forward_trace(x, false);
        Ok(self.unscale_columns(&tr.out))
    }

    /// Exact `∂_z φ` (`r_U x d_Z`) in the unscaled output frame.
    pub fn z_jacobian(&self, m_r: &DVector<f64>, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.z_jacobian_batch(&as_row(m_r), &as_row(z))?.remove(0))
    }

    pub fn z_jacobian_batch(&self, m_r: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let x = self.inputs(m_r, z)?;
        let n = x.ncols();
        let dz = self.spec.control_dim;
        let tr = self.forward_trace(x, true);
        let t = tr.t_out.expect("tangents requested");
        Ok((0..n)
            .map(|b| {
                let mut j = t.columns(b * dz, dz).into_owned();
                for (i, mut row) in j.row_iter_mut().enumerate() {
                    row *= self.scaling.output_std[i];
                }
                j
            })
            .collect())
    }

    /// Outputs and `(∂_z φ)^T c` for per-record output cotangents `c`
    /// (rows of `cot`, unscaled frame).
    pub fn forward_and_vjp_z(
        &self,
        m_r: &DMatrix<f64>,
        z: &DMatrix<f64>,
        cot: impl Fn(usize, &DVector<f64>) -> DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let x = self.inputs(m_r, z)?;
        let tr = self.forward_trace(x, false);
        let phi = self.unscale_columns(&tr.out);
        let n = phi.nrows();
        let mut bar = DMatrix::zeros(self.spec.output_dim, n);
        for b in 0..n {
            let c = cot(b, &phi.row(b).transpose());
            check_len("output cotangent", self.spec.output_dim, c.len())?;
            bar.set_column(b, &c.component_mul(&self.scaling.output_std));
        }
        for l in (0..self.layers.len()).rev() {
            let mut a_bar = self.layers[l].w.transpose() * &bar;
            if l == 0 {
                let rm = self.spec.param_dim;
                let g = a_bar.rows(rm, self.spec.control_dim).transpose();
                return Ok((phi, g));
            }
            let (h_bar, _) = activation_backward(
                self.activation_at(l - 1),
                &tr.pre[l - 1],
                &tr.post[l],
                &mut a_bar,
                None,
                None,
                0,
            );
            bar = h_bar;
        }
        unreachable!("network has at least one layer")
    }
}

/// Returns `σ(h)` and the propagated tangents `σ'(h) ḣ`.
fn apply_activation(
    act: Activation,
    h: &DMatrix<f64>,
    t_h: Option<&DMatrix<f64>>,
    dz: usize,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    if act == Activation::Softmax {
        let mut a = h.clone();
        for mut col in a.column_iter_mut() {
            let mx = col.max();
            col.apply(|v| *v = (*v - mx).exp());
            let s = col.sum();
            col /= s;
        }
        let t = t_h.map(|t_h| {
            let mut t = t_h.clone();
            for b in 0..a.ncols() {
                let ab = a.column(b);
                for k in 0..dz {
                    let mut tc = t.column_mut(b * dz + k);
                    let dot = ab.dot(&tc);
                    for i in 0..ab.len() {
                        tc[i] = ab[i] * (tc[i] - dot);
                    }
                }
            }
            t
        });
        return (a, t);
    }
    let mut a = h.clone();
    let mut d1 = h.clone();
    for (v, d) in a.iter_mut().zip(d1.iter_mut()) {
        let (f, g, _) = act.eval(*v);
        *v = f;
        *d = g;
    }
    let t = t_h.map(|t_h| {
        let mut t = t_h.clone();
        for b in 0..h.ncols() {
            let db = d1.column(b);
            for k in 0..dz {
                t.column_mut(b * dz + k).component_mul_assign(&db);
            }
        }
        t
    });
    (a, t)
}

/// Reverse sweep through one activation. `a_bar` and `t_bar` are the adjoints
/// of the post-activation values and tangents; returns the adjoints of the
/// pre-activation values and tangents.
fn activation_backward(
    act: Activation,
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    a_bar: &mut DMatrix<f64>,
    t_pre: Option<&DMatrix<f64>>,
    t_bar: Option<DMatrix<f64>>,
    dz: usize,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let n = h.ncols();
    if act == Activation::Softmax {
        let mut t_out = t_bar;
        if let (Some(tp), Some(tb)) = (t_pre, t_out.as_mut()) {
            for b in 0..n {
                let ab = a.column(b);
                for k in 0..dz {
                    let c = b * dz + k;
                    let hd = tp.column(c);
                    let mut tbc = tb.column_mut(c);
                    let a_hd = ab.dot(&hd);
                    let a_tb = ab.dot(&tbc);
                    for i in 0..ab.len() {
                        a_bar[(i, b)] += tbc[i] * hd[i] - tbc[i] * a_hd - hd[i] * a_tb;
                        tbc[i] = ab[i] * (tbc[i] - a_tb);
                    }
                }
            }
        }
        let mut h_bar = a_bar.clone();
        for b in 0..n {
            let ab = a.column(b);
            let dot = ab.dot(&a_bar.column(b));
            for i in 0..ab.len() {
                h_bar[(i, b)] = ab[i] * (a_bar[(i, b)] - dot);
            }
        }
        return (h_bar, t_out);
    }
    let mut d1 = h.clone();
    let mut d2 = h.clone();
    for ((v, g1), g2) in h.iter().zip(d1.iter_mut()).zip(d2.iter_mut()) {
        let (_, a1, a2) = act.eval(*v);
        *g1 = a1;
        *g2 = a2;
    }
    let mut h_bar = a_bar.component_mul(&d1);
    let mut t_out = t_bar;
    if let (Some(tp), Some(tb)) = (t_pre, t_out.as_mut()) {
        for b in 0..n {
            let (d1b, d2b) = (d1.column(b), d2.column(b));
            let mut hb = h_bar.column_mut(b);
            for k in 0..dz {
                let c = b * dz + k;
                let tpc = tp.column(c);
                let mut tbc = tb.column_mut(c);
                for i in 0..hb.len() {
                    hb[i] += d2b[i] * tpc[i] * tbc[i];
                    tbc[i] *= d1b[i];
                }
            }
        }
    }
    (h_bar, t_out)
}

/// Gradient of the loss with respect to every layer's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.norm_squared() + l.b.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// Mean over the selected records of `||y - ũ||^2 + λ_J ||ẏ - J̃||_F^2`,
/// both in the standardized output frame, and its exact weight gradient.
pub fn loss_and_grad(
    model: &SurrogateModel,
    data: &TrainingDataset,
    indices: &[usize],
    jacobian_weight: f64,
) -> Result<(f64, Gradients)> {
    if indices.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    if !(jacobian_weight >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jacobian weight must be >= 0, got {jacobian_weight}"
        )));
    }
    let use_jac = jacobian_weight > 0.0;
    let jac = match (&data.jac, use_jac) {
        (None, true) => return Err(Error::MissingJacobian),
        (j, _) => j.as_ref().filter(|_| use_jac),
    };
    let spec = &model.spec;
    let dz = spec.control_dim;
    let nb = indices.len();
    let inv_n = 1.0 / nb as f64;
    let sc = &model.scaling;

    let x = model.inputs(&data.m_r.select_rows(indices), &data.z.select_rows(indices))?;
    check_len("dataset outputs", spec.output_dim, data.u_r.ncols())?;
    let tr = model.forward_trace(x, use_jac);

    let mut loss = 0.0;
    let mut y_bar = DMatrix::zeros(spec.output_dim, nb);
    for (b, &r) in indices.iter().enumerate() {
        for i in 0..spec.output_dim {
            let target = (data.u_r[(r, i)] - sc.output_mean[i]) / sc.output_std[i];
            let e = tr.out[(i, b)] - target;
            loss += e * e;
            y_bar[(i, b)] = 2.0 * e * inv_n;
        }
    }
    let mut t_bar = None;
    if let (Some(jac), Some(t_out)) = (jac, tr.t_out.as_ref()) {
        let mut tb = DMatrix::zeros(spec.output_dim, nb * dz);
        for (b, &r) in indices.iter().enumerate() {
            let j = &jac[r];
            for k in 0..dz {
                for i in 0..spec.output_dim {
                    let e = t_out[(i, b * dz + k)] - j[(i, k)] / sc.output_std[i];
                    loss += jacobian_weight * e * e;
                    tb[(i, b * dz + k)] = 2.0 * jacobian_weight * e * inv_n;
                }
            }
        }
        t_bar = Some(tb);
    }
    loss *= inv_n;

    let mut grads: Vec<Layer> = Vec::with_capacity(model.layers.len());
    let mut h_bar = y_bar;
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let mut gw = &h_bar * tr.post[l].transpose();
        if let Some(tb) = &t_bar {
            if l == 0 {
                let rm = spec.param_dim;
                let mut gz = gw.columns_mut(rm, dz);
                for b in 0..nb {
                    gz += tb.columns(b * dz, dz);
                }
            } else {
                gw.gemm(1.0, tb, &tr.t_post[l - 1].transpose(), 1.0);
            }
        }
        grads.push(Layer {
            w: gw,
            b: h_bar.column_sum(),
        });
        if l == 0 {
            break;
        }
        let wt = layer.w.transpose();
        let mut a_bar = &wt * &h_bar;
        let ta_bar = t_bar.as_ref().map(|tb| &wt * tb);
        let (hb, tb) = activation_backward(
            model.activation_at(l - 1),
            &tr.pre[l - 1],
            &tr.post[l],
            &mut a_bar,
            tr.t_pre.get(l - 1),
            ta_bar,
            dz,
        );
        h_bar = hb;
        t_bar = tb;
    }
    grads.reverse();
    Ok((loss, Gradients { layers: grads }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_epoch: usize,
    pub jacobian_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1600,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_drop_factor: 0.25,
            lr_drop_epoch: 800,
            jacobian_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.learning_rate * self.lr_drop_factor
        } else {
            self.learning_rate
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_drop_factor > 0.0) || !(self.jacobian_weight >= 0.0) {
            return Err(Error::InvalidArgument("invalid learning rate or loss weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSurrogate {
    pub model: SurrogateModel,
    /// Record-weighted mean loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Per-component mean of the reduced outputs and one shared deviation, the
/// square root of the total variance. A shared scale keeps the loss
/// proportional to the M-norm state error; per-component scaling would
/// inflate the trailing POD modes to unit size. A zero total variance is
/// replaced by one.
pub fn output_scaling(u_r: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = u_r.nrows() as f64;
    let mean = u_r.row_mean().transpose();
    let var: f64 = (0..u_r.ncols())
        .map(|i| u_r.column(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n)
        .sum();
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, DVector::from_element(u_r.ncols(), std))
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Layer]) -> Self {
        let zero = |l: &Layer| Layer {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: DVector::zeros(l.b.len()),
        };
        Self {
            m: layers.iter().map(zero).collect(),
            v: layers.iter().map(zero).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Layer], grads: &[Layer], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        };
        for l in 0..params.len() {
            apply(
                params[l].w.as_mut_slice(),
                grads[l].w.as_slice(),
                self.m[l].w.as_mut_slice(),
                self.v[l].w.as_mut_slice(),
            );
            apply(
                params[l].b.as_mut_slice(),
                grads[l].b.as_slice(),
                self.m[l].b.as_mut_slice(),
                self.v[l].b.as_mut_slice(),
            );
        }
    }
}

/// Adam training from a seeded Glorot initialization. `input_scale`
/// multiplies `m_r`.
pub fn train(
    data: &TrainingDataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    input_scale: &DVector<f64>,
) -> Result<TrainedSurrogate> {
    config.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if config.jacobian_weight > 0.0 && data.jac.is_none() {
        return Err(Error::MissingJacobian);
    }
    let (output_mean, output_std) = output_scaling(&data.u_r);
    let scaling = Scaling {
        input_scale: input_scale.clone(),
        output_mean,
        output_std,
    };
    let mut model = SurrogateModel::initialized(spec.clone(), scaling, config.seed)?;
    let mut adam = Adam::new(&model.layers);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = substream(config.seed, streams::SHUFFLE, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = loss_and_grad(&model, data, idx, config.jacobian_weight)?;
            if !loss.is_finite() || !grads.norm().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += loss * idx.len() as f64;
            adam.update(&mut model.layers, &grads.layers, lr);
        }
        history.push(total / data.len() as f64);
    }
    Ok(TrainedSurrogate {
        model,
        loss_history: history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Mean relative `M`-norm state error.
    pub state_rel_l2: f64,
    /// Mean relative Frobenius error of the reduced Jacobian.
    pub jac_rel_hs: f64,
    pub state_errors: Vec<f64>,
    pub jac_errors: Vec<f64>,
}

/// Full-space relative state errors (reduced error combined with the stored
/// POD truncation residual) and relative reduced-Jacobian errors.
pub fn evaluate_errors(model: &SurrogateModel, data: &TrainingDataset) -> Result<ErrorReport> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("test dataset"));
    }
    let (Some(trunc), Some(norms), Some(jac)) = (&data.truncation_norms, &data.state_norms, &data.jac) else {
        return Err(Error::InvalidArgument(
            "test data needs Jacobians, truncation norms and state norms".into(),
        ));
    };
    let phi = model.forward_batch(&data.m_r, &data.z)?;
    let jw = model.z_jacobian_batch(&data.m_r, &data.z)?;
    let n = data.len();
    let mut state_errors = Vec::with_capacity(n);
    let mut jac_errors = Vec::with_capacity(n);
    for i in 0..n {
        let reduced = (phi.row(i) - data.u_r.row(i)).norm_squared();
        state_errors.push((reduced + trunc[i] * trunc[i]).sqrt() / norms[i]);
        jac_errors.push((&jw[i] - &jac[i]).norm() / jac[i].norm());
    }
    Ok(ErrorReport {
        state_rel_l2: state_errors.iter().sum::<f64>() / n as f64,
        jac_rel_hs: jac_errors.iter().sum::<f64>() / n as f64,
        state_errors,
        jac_errors,
    })
}
