use rccm_autograd::{BatchStats, Graph, NormMode, Real, Var};

use super::params::{NormId, ParamBuilder, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Whether normalization layers use batch statistics or the frozen running
/// averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the tape, the parameter handles on it, and the batch
/// statistics observed along the way.
pub struct Session<'s, T: Real> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    params: Vec<Var>,
    mode: Mode,
    stats: Vec<(NormId, BatchStats<T>)>,
}

impl<'s, T: Real> Session<'s, T> {
    /// With `trainable` the parameters become gradient leaves, otherwise
    /// constants.
    pub fn new(store: &'s ParamStore<T>, mode: Mode, trainable: bool) -> Self {
        let mut graph = Graph::new();
        let params = store
            .params()
            .iter()
            .map(|p| {
                if trainable {
                    graph.leaf(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        Self {
            graph,
            store,
            params,
            mode,
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    /// Graph handles of every parameter, in store order.
    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    pub fn take_stats(&mut self) -> Vec<(NormId, BatchStats<T>)> {
        std::mem::take(&mut self.stats)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub(crate) fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
    ) -> Self {
        let weight = b.fan_in_uniform(format!("{name}.weight"), &[cout, cin, kernel, kernel], cin * kernel * kernel);
        let bias = bias.then(|| b.filled(format!("{name}.bias"), &[cout], 0.0));
        Self {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(s.graph.conv2d(x, w, b, self.kernel / 2)?)
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: NormId,
}

impl Norm {
    pub(crate) fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: b.filled(format!("{name}.gamma"), &[channels], 1.0),
            beta: b.filled(format!("{name}.beta"), &[channels], 0.0),
            stats: b.running_stats(format!("{name}.running"), channels),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (s.param(self.gamma), s.param(self.beta));
        let (out, stats) = match s.mode {
            Mode::Train => s.graph.batch_norm(x, gamma, beta, NormMode::Batch)?,
            Mode::Eval => {
                let r = s.store.running(self.stats);
                s.graph.batch_norm(
                    x,
                    gamma,
                    beta,
                    NormMode::Frozen {
                        mean: &r.mean,
                        var: &r.var,
                    },
                )?
            }
        };
        if let Some(stats) = stats {
            s.stats.push((self.stats, stats));
        }
        Ok(out)
    }
}

/// Bottleneck residual block: `1×1 → 3×3 → 1×1` convolutions, each followed
/// by normalization, with rectification after the first two. The shortcut
/// is added last and the sum is not rectified, so a block whose residual
/// branch is zero passes its input through unchanged.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    reduce: Conv,
    reduce_norm: Norm,
    spatial: Conv,
    spatial_norm: Norm,
    expand: Conv,
    expand_norm: Norm,
    shortcut: Option<Conv>,
}

impl ResidualBlock {
    /// Block with a projection shortcut exactly when channel counts differ.
    pub(crate) fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize) -> Self {
        Self::with_shortcut(b, name, cin, cout, cin != cout).expect("projection configured for mismatch")
    }

    pub(crate) fn with_shortcut<T: Real>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        projection: bool,
    ) -> Result<Self> {
        if cin != cout && !projection {
            return Err(Error::Config(format!(
                "{name}: {cin} -> {cout} channels needs a projection shortcut"
            )));
        }
        let mid = (cout / 2).max(1);
        Ok(Self {
            in_channels: cin,
            out_channels: cout,
            reduce: Conv::new(b, &format!("{name}.reduce"), cin, mid, 1, false),
            reduce_norm: Norm::new(b, &format!("{name}.reduce_norm"), mid),
            spatial: Conv::new(b, &format!("{name}.spatial"), mid, mid, 3, false),
            spatial_norm: Norm::new(b, &format!("{name}.spatial_norm"), mid),
            expand: Conv::new(b, &format!("{name}.expand"), mid, cout, 1, false),
            expand_norm: Norm::new(b, &format!("{name}.expand_norm"), cout),
            shortcut: projection.then(|| Conv::new(b, &format!("{name}.shortcut"), cin, cout, 1, true)),
        })
    }

    /// Parameters of the residual branch (everything except the shortcut).
    pub fn branch_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (conv, norm) in [
            (&self.reduce, &self.reduce_norm),
            (&self.spatial, &self.spatial_norm),
            (&self.expand, &self.expand_norm),
        ] {
            ids.push(conv.weight);
            ids.extend(conv.bias);
            ids.push(norm.gamma);
            ids.push(norm.beta);
        }
        ids
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let c = s.graph.value(x).dims4()?.1;
        if c != self.in_channels {
            return Err(Error::Invalid(format!(
                "residual block expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let h = self.reduce.forward(s, x)?;
        let h = self.reduce_norm.forward(s, h)?;
        let h = s.graph.relu(h);
        let h = self.spatial.forward(s, h)?;
        let h = self.spatial_norm.forward(s, h)?;
        let h = s.graph.relu(h);
        let h = self.expand.forward(s, h)?;
        let h = self.expand_norm.forward(s, h)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(s, x)?,
            None => x,
        };
        Ok(s.graph.add(h, skip)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Real>(b: &mut ParamBuilder<T>, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: b.fan_in_uniform(format!("{name}.weight"), &[outputs, inputs], inputs),
            bias: b.filled(format!("{name}.bias"), &[outputs], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        Ok(s.graph.linear(x, w, b)?)
    }
}
