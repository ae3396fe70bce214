//! GRU, grouped dilated convolution, group normalisation and the G3 block.
//!
//! Layers are thin descriptors: they know their shapes and the names of their
//! parameters, while the values live in a [`ParamStore`] owned by the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gru_cell, Array2, Conv1dSpec, Graph, ParamStore, RngState, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const GROUP_NORM_EPS: f64 = 1e-5;

pub(crate) fn gaussian(rng: &mut RngState, rows: usize, cols: usize, std: f64) -> Array2 {
    let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
    Array2::from_vec(rows, cols, data).expect("shape")
}

/// Matrix with orthonormal rows (if `rows <= cols`) or columns, via
/// Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut RngState) -> Array2 {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        for b in &basis {
            let p = crate::numerics::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut out = Array2::zeros(rows, cols);
    for (i, b) in basis.iter().enumerate() {
        for (j, &v) in b.iter().enumerate() {
            if rows <= cols {
                out[(i, j)] = v;
            } else {
                out[(j, i)] = v;
            }
        }
    }
    out
}

fn copy_block(dst: &mut Array2, row0: usize, src: &Array2) {
    for r in 0..src.rows() {
        dst.row_mut(row0 + r).copy_from_slice(src.row(r));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    prefix: String,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input_dim: usize, output_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            output_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Uniform Glorot-style weights scaled by `1/sqrt(fan_in)`, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) -> Result<()> {
        let std = 1.0 / (self.input_dim as f64).sqrt();
        store.insert(
            self.weight_name(),
            gaussian(rng, self.output_dim, self.input_dim, std),
        )?;
        store.insert(self.bias_name(), Array2::zeros(self.output_dim, 1))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        let y = g.matmul(w, x)?;
        g.add_column(y, b)
    }

    /// Graph-free evaluation on a single column.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.value(&self.weight_name());
        let b = store.value(&self.bias_name());
        (0..self.output_dim)
            .map(|o| crate::numerics::dot(w.row(o), x) + b[(o, 0)])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruLayer {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn param_names(&self) -> [String; 3] {
        [
            format!("{}.w", self.prefix),
            format!("{}.u", self.prefix),
            format!("{}.b", self.prefix),
        ]
    }

    /// Orthogonal input and recurrent weights per gate, zero biases.
    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) -> Result<()> {
        let h = self.hidden_dim;
        let mut w = Array2::zeros(3 * h, self.input_dim);
        let mut u = Array2::zeros(3 * h, h);
        for gate in 0..3 {
            copy_block(&mut w, gate * h, &orthogonal(h, self.input_dim, rng));
            copy_block(&mut u, gate * h, &orthogonal(h, h, rng));
        }
        let [wn, un, bn] = self.param_names();
        store.insert(wn, w)?;
        store.insert(un, u)?;
        store.insert(bn, Array2::zeros(3 * h, 1))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_from(g, store, x, None)
    }

    pub fn forward_from(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h0: Option<Var>,
    ) -> Result<Var> {
        if g.value(x).rows() != self.input_dim {
            return Err(Error::Shape(format!(
                "GRU {} expects {} rows, got {}",
                self.prefix,
                self.input_dim,
                g.value(x).rows()
            )));
        }
        let [wn, un, bn] = self.param_names();
        let w = g.param(store, &wn)?;
        let u = g.param(store, &un)?;
        let b = g.param(store, &bn)?;
        g.gru(x, w, u, b, h0)
    }

    /// One recurrence step outside any graph.
    pub fn step(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> Vec<f64> {
        let [wn, un, bn] = self.param_names();
        let (w, u, b) = (store.value(&wn), store.value(&un), store.value(&bn));
        let a: Vec<f64> = (0..3 * self.hidden_dim)
            .map(|r| crate::numerics::dot(w.row(r), x) + b[(r, 0)])
            .collect();
        gru_cell(u, &a, h).0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDilatedConv1d {
    prefix: String,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl GroupedDilatedConv1d {
    pub fn new(
        prefix: impl Into<String>,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !channels_in.is_multiple_of(groups) || !channels_out.is_multiple_of(groups) {
            return Err(Error::Shape(format!(
                "channels {channels_in}->{channels_out} not divisible by {groups} groups"
            )));
        }
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument("kernel size must be odd".into()));
        }
        Ok(Self {
            prefix: prefix.into(),
            channels_in,
            channels_out,
            kernel,
            dilation,
            groups,
        })
    }

    pub fn spec(&self) -> Conv1dSpec {
        Conv1dSpec {
            kernel: self.kernel,
            dilation: self.dilation,
            groups: self.groups,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn fan_in(&self) -> usize {
        self.channels_in / self.groups * self.kernel
    }

    /// He-normal weights, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) -> Result<()> {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        store.insert(
            self.weight_name(),
            gaussian(rng, self.channels_out, self.fan_in(), std),
        )?;
        store.insert(self.bias_name(), Array2::zeros(self.channels_out, 1))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).rows() != self.channels_in {
            return Err(Error::Shape(format!(
                "conv {} expects {} rows, got {}",
                self.prefix,
                self.channels_in,
                g.value(x).rows()
            )));
        }
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        g.conv1d(x, w, b, self.spec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm {
    prefix: String,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(prefix: impl Into<String>, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Shape(format!(
                "{channels} channels not divisible into {groups} groups"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            channels,
            groups,
            eps: GROUP_NORM_EPS,
        })
    }

    pub fn scale_name(&self) -> String {
        format!("{}.gamma", self.prefix)
    }

    pub fn shift_name(&self) -> String {
        format!("{}.beta", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(self.scale_name(), Array2::filled(self.channels, 1, 1.0))?;
        store.insert(self.shift_name(), Array2::zeros(self.channels, 1))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.value(x).rows() != self.channels {
            return Err(Error::Shape(format!(
                "group norm {} expects {} rows, got {}",
                self.prefix,
                self.channels,
                g.value(x).rows()
            )));
        }
        let gamma = g.param(store, &self.scale_name())?;
        let beta = g.param(store, &self.shift_name())?;
        g.group_norm(x, gamma, beta, self.groups, self.eps)
    }
}

/// Where the leaky ReLU of a G3 block sits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationPlacement {
    /// `x + gru(x) + lrelu(norm(conv(gru(x))))`: the activation closes the
    /// conv/norm branch, following the layer order of the block table.
    #[default]
    Branch,
    /// `lrelu(x + gru(x) + norm(conv(gru(x))))`.
    AfterSum,
}

/// GRU → grouped dilated conv → group norm, with the block input, the GRU
/// output and the normalised branch summed.
#[derive(Clone, Debug, PartialEq)]
pub struct G3Block {
    pub gru: GruLayer,
    pub conv: GroupedDilatedConv1d,
    pub norm: GroupNorm,
    pub placement: ActivationPlacement,
}

impl G3Block {
    pub fn new(prefix: &str, width: usize, placement: ActivationPlacement) -> Result<Self> {
        Ok(Self {
            gru: GruLayer::new(format!("{prefix}.gru"), width, width),
            conv: GroupedDilatedConv1d::new(format!("{prefix}.conv"), width, width, 3, 2, 4)?,
            norm: GroupNorm::new(format!("{prefix}.norm"), width, 4)?,
            placement,
        })
    }

    pub fn width(&self) -> usize {
        self.gru.input_dim
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut RngState) -> Result<()> {
        self.gru.init(store, rng)?;
        self.conv.init(store, rng)?;
        self.norm.init(store)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.gru.forward(g, store, x)?;
        let c = self.conv.forward(g, store, h)?;
        let n = self.norm.forward(g, store, c)?;
        let xh = g.add(x, h)?;
        match self.placement {
            ActivationPlacement::Branch => {
                let a = g.leaky_relu(n, LEAKY_SLOPE)?;
                g.add(xh, a)
            }
            ActivationPlacement::AfterSum => {
                let s = g.add(xh, n)?;
                g.leaky_relu(s, LEAKY_SLOPE)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, GradCheckOptions};
    use crate::numerics::sample_gaussian;

    fn run(
        store: &ParamStore,
        x: Array2,
        f: impl Fn(&mut Graph, &ParamStore, Var) -> Result<Var>,
    ) -> Array2 {
        let mut g = Graph::new();
        let xv = g.constant(x).unwrap();
        let y = f(&mut g, store, xv).unwrap();
        g.value(y).clone()
    }

    fn zero_all(store: &mut ParamStore) {
        for (_, e) in store.iter_mut() {
            e.value.fill(0.0);
        }
    }

    #[test]
    fn gru_zero_weights_give_zero_output() {
        let layer = GruLayer::new("gru", 3, 4);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut RngState::new(1)).unwrap();
        zero_all(&mut store);
        let x = sample_gaussian(&mut RngState::new(2), 3, 6);
        let y = run(&store, x, |g, s, x| layer.forward(g, s, x));
        assert_eq!(y.shape(), (4, 6));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_scalar_step_matches_hand_evaluation() {
        let layer = GruLayer::new("gru", 1, 1);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut RngState::new(1)).unwrap();
        // Gate order r, z, n.
        *store.value_mut("gru.w") = Array2::column(&[0.5, -1.0, 2.0]);
        *store.value_mut("gru.u") = Array2::column(&[0.3, 0.7, -0.4]);
        *store.value_mut("gru.b") = Array2::column(&[0.1, 0.2, -0.3]);
        let x = 0.8;
        let y = run(&store, Array2::column(&[x]), |g, s, x| layer.forward(g, s, x));
        // h0 = 0: r and the recurrent terms drop out of h̃.
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(-x + 0.2);
        let n = (2.0 * x - 0.3_f64).tanh();
        let expected = z * n;
        assert!((y[(0, 0)] - expected).abs() < 1e-15, "{} vs {expected}", y[(0, 0)]);
    }

    #[test]
    fn gru_step_agrees_with_graph() {
        let layer = GruLayer::new("gru", 3, 5);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut RngState::new(4)).unwrap();
        let x = sample_gaussian(&mut RngState::new(5), 3, 7);
        let y = run(&store, x.clone(), |g, s, x| layer.forward(g, s, x));
        let mut h = vec![0.0; 5];
        for t in 0..7 {
            h = layer.step(&store, &x.col(t), &h);
            for (i, v) in h.iter().enumerate() {
                assert!((v - y[(i, t)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let conv = GroupedDilatedConv1d::new("c", 4, 4, 3, 2, 4).unwrap();
        let mut store = ParamStore::new();
        conv.init(&mut store, &mut RngState::new(0)).unwrap();
        let mut w = Array2::zeros(4, 3);
        for o in 0..4 {
            w[(o, 1)] = 1.0;
        }
        *store.value_mut("c.w") = w;
        let x = sample_gaussian(&mut RngState::new(9), 4, 11);
        let y = run(&store, x.clone(), |g, s, x| conv.forward(g, s, x));
        assert_eq!(y, x);
    }

    #[test]
    fn grouped_conv_equals_block_diagonal_full_conv() {
        let (cin, cout, k, g) = (4, 6, 3, 2);
        let grouped = GroupedDilatedConv1d::new("g", cin, cout, k, 2, g).unwrap();
        let full = GroupedDilatedConv1d::new("f", cin, cout, k, 2, 1).unwrap();
        let mut store = ParamStore::new();
        let mut rng = RngState::new(12);
        grouped.init(&mut store, &mut rng).unwrap();
        full.init(&mut store, &mut rng).unwrap();
        *store.value_mut("g.b") = Array2::column(&[0.1, 0.2, 0.3, -0.1, -0.2, -0.3]);
        *store.value_mut("f.b") = store.value("g.b").clone();
        // Embed the grouped weights in a full weight matrix with zeroed
        // cross-group taps.
        let gw = store.value("g.w").clone();
        let (cin_g, cout_g) = (cin / g, cout / g);
        let mut fw = Array2::zeros(cout, cin * k);
        for o in 0..cout {
            let grp = o / cout_g;
            for cl in 0..cin_g {
                for j in 0..k {
                    fw[(o, (grp * cin_g + cl) * k + j)] = gw[(o, cl * k + j)];
                }
            }
        }
        *store.value_mut("f.w") = fw;
        let x = sample_gaussian(&mut RngState::new(3), cin, 9);
        let yg = run(&store, x.clone(), |gr, s, x| grouped.forward(gr, s, x));
        let yf = run(&store, x, |gr, s, x| full.forward(gr, s, x));
        for (a, b) in yg.data().iter().zip(yf.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_indivisible_groups() {
        assert!(GroupedDilatedConv1d::new("c", 6, 8, 3, 2, 4).is_err());
        assert!(GroupNorm::new("n", 6, 4).is_err());
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let norm = GroupNorm::new("n", 8, 4).unwrap();
        let mut store = ParamStore::new();
        norm.init(&mut store).unwrap();
        let y = run(&store, Array2::filled(8, 5, 3.5), |g, s, x| norm.forward(g, s, x));
        assert!(y.max_abs() < 1e-9);
    }

    #[test]
    fn group_norm_zero_scale_gives_shift() {
        let norm = GroupNorm::new("n", 8, 4).unwrap();
        let mut store = ParamStore::new();
        norm.init(&mut store).unwrap();
        store.value_mut("n.gamma").fill(0.0);
        store.value_mut("n.beta").fill(5.0);
        let x = sample_gaussian(&mut RngState::new(1), 8, 6);
        let y = run(&store, x, |g, s, x| norm.forward(g, s, x));
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn group_norm_standardises_each_group() {
        let norm = GroupNorm::new("n", 8, 4).unwrap();
        let mut store = ParamStore::new();
        norm.init(&mut store).unwrap();
        let x = sample_gaussian(&mut RngState::new(8), 8, 30).map(|v| 3.0 * v + 1.0);
        let y = run(&store, x, |g, s, x| norm.forward(g, s, x));
        for grp in 0..4 {
            let vals: Vec<f64> = (2 * grp..2 * grp + 2).flat_map(|r| y.row(r).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            // eps in the denominator pulls the variance just under 1.
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        {
            let placement = ActivationPlacement::Branch;
            let block = G3Block::new("blk", 8, placement).unwrap();
            let mut store = ParamStore::new();
            block.init(&mut store, &mut RngState::new(3)).unwrap();
            zero_all(&mut store);
            let x = sample_gaussian(&mut RngState::new(4), 8, 7);
            let y = run(&store, x.clone(), |g, s, x| block.forward(g, s, x));
            assert_eq!(y, x);
        }
    }

    #[test]
    fn block_preserves_length() {
        let block = G3Block::new("blk", 8, ActivationPlacement::Branch).unwrap();
        let mut store = ParamStore::new();
        block.init(&mut store, &mut RngState::new(3)).unwrap();
        for t in [1, 7, 100] {
            let x = sample_gaussian(&mut RngState::new(t as u64), 8, t);
            let y = run(&store, x, |g, s, x| block.forward(g, s, x));
            assert_eq!(y.shape(), (8, t));
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for placement in [ActivationPlacement::Branch, ActivationPlacement::AfterSum] {
            let block = G3Block::new("blk", 8, placement).unwrap();
            let mut store = ParamStore::new();
            let mut rng = RngState::new(21);
            block.init(&mut store, &mut rng).unwrap();
            let x = sample_gaussian(&mut rng, 8, 5);
            let proj = sample_gaussian(&mut rng, 8, 5);
            let report = check_gradients(
                "g3block",
                &store,
                &[("x", x)],
                |g, s, v| {
                    let y = block.forward(g, s, v[0])?;
                    g.weighted_sum(y, proj.clone())
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "{report:?}");
        }
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let q = orthogonal(4, 6, &mut RngState::new(2));
        let p = q.matmul_t(&q).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
