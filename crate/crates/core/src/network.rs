//! Declarative network configurations, their resolved op graph, and forward
//! passes on a [`Tape`].
//!
//! Every architecture is a stack of U structures. A U with `L` levels runs
//! one conv block per level on the way down (max pooling between levels) and
//! one per level on the way up (trilinear upsampling, then concatenation with
//! the same-level down features). Consecutive U's are linked at every lower
//! level: the pooled input of level `l` is concatenated with the previous U's
//! level-`l` output. A shallow U has `L = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::dataset::stable_hash;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kernel of the per-branch segmentation conv.
pub const BRANCH_KERNEL: usize = 3;
/// Outputs of the temporary classification head.
pub const HEAD_OUTPUTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    ShallowUStack { stack: usize },
    DeepUStack { stack: usize, bottom: usize },
    /// Shallow stack without any concatenation skips.
    NoSkip { stack: usize },
    /// Deep stack without the links between consecutive U's.
    Shn3d { stack: usize, bottom: usize },
}

impl Arch {
    pub fn stack(&self) -> usize {
        match *self {
            Arch::ShallowUStack { stack }
            | Arch::DeepUStack { stack, .. }
            | Arch::NoSkip { stack }
            | Arch::Shn3d { stack, .. } => stack,
        }
    }

    fn skips(&self) -> (bool, bool) {
        match self {
            Arch::ShallowUStack { .. } | Arch::DeepUStack { .. } => (true, true),
            Arch::NoSkip { .. } => (false, false),
            Arch::Shn3d { .. } => (true, false),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Arch::ShallowUStack { stack } => write!(f, "shallow_u_stack({stack})"),
            Arch::DeepUStack { stack, bottom } => write!(f, "deep_u_stack({stack},{bottom})"),
            Arch::NoSkip { stack } => write!(f, "no_skip({stack})"),
            Arch::Shn3d { stack, bottom } => write!(f, "shn3d({stack},{bottom})"),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Config(format!("unknown arch {s:?}"));
        let (name, args) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                let args = inner
                    .split(',')
                    .map(|a| a.parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                (name.to_string(), args)
            }
            None => (s.clone(), vec![]),
        };
        Ok(match (name.as_str(), args.as_slice()) {
            ("shallow_u_stack", [k]) => Arch::ShallowUStack { stack: *k },
            ("deep_u_stack", [k]) => Arch::DeepUStack { stack: *k, bottom: 4 },
            ("deep_u_stack", [k, b]) => Arch::DeepUStack { stack: *k, bottom: *b },
            ("no_skip", []) => Arch::NoSkip { stack: 3 },
            ("no_skip", [k]) => Arch::NoSkip { stack: *k },
            ("shn3d", []) => Arch::Shn3d { stack: 3, bottom: 4 },
            ("shn3d", [k, b]) => Arch::Shn3d { stack: *k, bottom: *b },
            _ => return Err(bad()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub arch: Arch,
    pub inception: bool,
    pub channels: usize,
    pub convs_per_block: usize,
    pub kernel: usize,
    pub branches: usize,
    pub input_res: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            arch: Arch::ShallowUStack { stack: 3 },
            inception: false,
            channels: 12,
            convs_per_block: 2,
            kernel: 5,
            branches: 2,
            input_res: 64,
        }
    }
}

impl NetConfig {
    /// Levels below full resolution in each U.
    pub fn levels(&self) -> Result<usize> {
        let n = self.input_res;
        let bottom = match self.arch {
            Arch::ShallowUStack { .. } | Arch::NoSkip { .. } => n / 2,
            Arch::DeepUStack { bottom, .. } | Arch::Shn3d { bottom, .. } => bottom,
        };
        if bottom == 0 || n % bottom != 0 || !(n / bottom).is_power_of_two() || n / bottom < 2 {
            return Err(Error::Config(format!(
                "input_res {n} must be bottom resolution {bottom} times a power of two >= 2"
            )));
        }
        Ok((n / bottom).trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.arch.stack() < 1 {
            return fail("stack must be >= 1");
        }
        if self.branches < 2 {
            return fail("branches must be >= 2");
        }
        if self.channels < 1 || self.convs_per_block < 1 || self.kernel < 1 {
            return fail("channels, convs_per_block and kernel must be >= 1");
        }
        self.levels().map(|_| ())
    }

    /// `(key, value)` pairs in config-file form.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("arch", self.arch.to_string()),
            ("inception", self.inception.to_string()),
            ("channels", self.channels.to_string()),
            ("convs_per_block", self.convs_per_block.to_string()),
            ("kernel", self.kernel.to_string()),
            ("branches", self.branches.to_string()),
            ("input_res", self.input_res.to_string()),
        ]
    }

    /// Apply one `key = value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: expected integer, got {v:?}")));
        match key {
            "arch" => self.arch = value.parse()?,
            "inception" => {
                self.inception = value.parse().map_err(|_| Error::Config(format!("inception: expected bool, got {value:?}")))?
            }
            "channels" => self.channels = num(value)?,
            "convs_per_block" => self.convs_per_block = num(value)?,
            "kernel" => self.kernel = num(value)?,
            "branches" => self.branches = num(value)?,
            "input_res" => self.input_res = num(value)?,
            _ => return Err(Error::Config(format!("unknown network key {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Conv { input: usize, name: String, cin: usize, cout: usize, k: usize, relu: bool },
    MaxPool { input: usize },
    Upsample { input: usize },
    Concat { a: usize, b: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub op: Op,
    pub channels: usize,
    pub res: usize,
}

/// Trunk topology in topological order; the last node is the feature output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    pub nodes: Vec<Node>,
}

struct Builder<'a> {
    cfg: &'a NetConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn push(&mut self, op: Op, channels: usize, res: usize) -> usize {
        self.nodes.push(Node { op, channels, res });
        self.nodes.len() - 1
    }

    fn conv(&mut self, input: usize, name: String, cout: usize, k: usize, relu: bool) -> usize {
        let (cin, res) = (self.nodes[input].channels, self.nodes[input].res);
        self.push(Op::Conv { input, name, cin, cout, k, relu }, cout, res)
    }

    fn concat(&mut self, a: usize, b: usize) -> usize {
        let c = self.nodes[a].channels + self.nodes[b].channels;
        let res = self.nodes[a].res;
        self.push(Op::Concat { a, b }, c, res)
    }

    fn layer(&mut self, input: usize, name: &str) -> usize {
        let (c, k) = (self.cfg.channels, self.cfg.kernel);
        if !self.cfg.inception {
            return self.conv(input, name.to_string(), c, k, true);
        }
        let mut merged = None;
        for kk in [k, 3, 2] {
            let out = self.conv(input, format!("{name}.k{kk}"), c, kk, true);
            merged = Some(match merged {
                None => out,
                Some(m) => self.concat(m, out),
            });
        }
        self.conv(merged.unwrap(), format!("{name}.proj"), c, 1, true)
    }

    fn block(&mut self, mut x: usize, prefix: &str) -> usize {
        for j in 0..self.cfg.convs_per_block {
            x = self.layer(x, &format!("{prefix}.c{j}"));
        }
        x
    }

    /// One U; returns its output at every level (index 0 = full res).
    fn u(&mut self, input: usize, i: usize, levels: usize, prev: Option<&[usize]>) -> Vec<usize> {
        let (intra, inter) = self.cfg.arch.skips();
        let mut down = vec![self.block(input, &format!("u{i}.l0.down"))];
        for l in 1..=levels {
            let res = self.nodes[down[l - 1]].res / 2;
            let ch = self.nodes[down[l - 1]].channels;
            let mut x = self.push(Op::MaxPool { input: down[l - 1] }, ch, res);
            if let (true, Some(p)) = (inter, prev) {
                x = self.concat(x, p[l]);
            }
            down.push(self.block(x, &format!("u{i}.l{l}.down")));
        }
        let mut outs = down.clone();
        let mut cur = down[levels];
        for l in (0..levels).rev() {
            let ch = self.nodes[cur].channels;
            let res = self.nodes[cur].res * 2;
            let mut x = self.push(Op::Upsample { input: cur }, ch, res);
            if intra {
                x = self.concat(x, down[l]);
            }
            cur = self.block(x, &format!("u{i}.l{l}.up"));
            outs[l] = cur;
        }
        outs
    }
}

impl Graph {
    pub fn build(cfg: &NetConfig) -> Result<Graph> {
        cfg.validate()?;
        let levels = cfg.levels()?;
        let mut b = Builder { cfg, nodes: Vec::new() };
        let mut x = b.push(Op::Input, 1, cfg.input_res);
        let mut prev: Option<Vec<usize>> = None;
        for i in 0..cfg.arch.stack() {
            let outs = b.u(x, i, levels, prev.as_deref());
            x = outs[0];
            prev = Some(outs);
        }
        Ok(Graph { nodes: b.nodes })
    }

    pub fn output(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn convs(&self) -> impl Iterator<Item = &Op> {
        self.nodes.iter().map(|n| &n.op).filter(|op| matches!(op, Op::Conv { .. }))
    }
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k * k + cout
}

/// Trainable element count of trunk plus segmentation branches (the
/// temporary classification head is excluded, see [`head_param_count`]).
pub fn param_count(cfg: &NetConfig) -> Result<usize> {
    let g = Graph::build(cfg)?;
    let trunk: usize = g
        .convs()
        .map(|op| match op {
            Op::Conv { cin, cout, k, .. } => conv_params(*cin, *cout, *k),
            _ => 0,
        })
        .sum();
    Ok(trunk + conv_params(cfg.channels, cfg.branches, BRANCH_KERNEL))
}

pub fn head_param_count(cfg: &NetConfig) -> usize {
    HEAD_OUTPUTS * cfg.channels + HEAD_OUTPUTS
}

/// Fan-in scaled Gaussian weights (`gain / fan_in` variance), seeded by
/// `(seed, name)` so each tensor is independent of construction order.
pub fn init_weight<T: Scalar>(name: &str, dims: &[usize], gain: f64, seed: u64) -> Tensor<T> {
    let fan_in: usize = dims[1..].iter().product();
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(name));
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(dims, |_| T::of(normal.sample(&mut rng)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Masked branch maps, average pooling of the given kernel, global max.
    Weak { kernel: usize },
    /// Masked branch maps only.
    Strong,
    /// Global max of the trunk features followed by the linear head.
    Phase1,
}

/// Tape handles produced by [`Network::run`].
#[derive(Clone, Debug)]
pub struct TapeOutputs {
    pub features: Var,
    /// Masked sigmoid maps `[B, branches, n, n, n]`.
    pub seg: Option<Var>,
    /// `[B, branches]` in weak mode, `[B, 2]` in phase-1 mode.
    pub scores: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult<T> {
    pub wu_features: Tensor<T>,
    /// One `[B, 1, n, n, n]` map per branch.
    pub branch_maps: Vec<Tensor<T>>,
    pub class_scores: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: NetConfig,
    pub graph: Graph,
    pub params: ParamStore<T>,
    pub init_seed: u64,
}

pub const BRANCH_W: &str = "branch.w";
pub const BRANCH_B: &str = "branch.b";
pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";

impl<T: Scalar> Network<T> {
    /// Trunk and branches; the phase-1 head is added by [`Network::attach_head`].
    pub fn build(config: &NetConfig, init_seed: u64) -> Result<Self> {
        let graph = Graph::build(config)?;
        let mut params = ParamStore::new();
        for op in graph.convs() {
            if let Op::Conv { name, cin, cout, k, .. } = op {
                params.insert(&format!("{name}.w"), init_weight(&format!("{name}.w"), &[*cout, *cin, *k, *k, *k], 2.0, init_seed));
                params.insert(&format!("{name}.b"), Tensor::zeros(&[*cout]));
            }
        }
        let mut net = Network { config: config.clone(), graph, params, init_seed };
        net.init_branches(init_seed);
        Ok(net)
    }

    pub fn init_branches(&mut self, seed: u64) {
        let (c, k, kb) = (self.config.channels, self.config.branches, BRANCH_KERNEL);
        self.params.insert(BRANCH_W, init_weight(BRANCH_W, &[k, c, kb, kb, kb], 1.0, seed));
        self.params.insert(BRANCH_B, Tensor::zeros(&[k]));
    }

    pub fn attach_head(&mut self, seed: u64) {
        let c = self.config.channels;
        self.params.insert(HEAD_W, init_weight(HEAD_W, &[HEAD_OUTPUTS, c], 1.0, seed));
        self.params.insert(HEAD_B, Tensor::zeros(&[HEAD_OUTPUTS]));
    }

    pub fn detach_head(&mut self) {
        self.params.remove_prefix("head.");
    }

    pub fn has_head(&self) -> bool {
        self.params.contains(HEAD_W)
    }

    /// Put every parameter on the tape; `trainable` decides which receive gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone(), trainable(name))))
            .collect()
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        let n = self.config.input_res;
        if dims.len() != 5 || dims[1] != 1 || dims[2..] != [n, n, n] {
            return Err(Error::shape("network input", dims, &[0, 1, n, n, n]));
        }
        Ok(())
    }

    /// Record the forward pass for `mode`; `x` is the `[B,1,n,n,n]` occupancy.
    pub fn run(&self, tape: &mut Tape<T>, vars: &BTreeMap<String, Var>, x: Var, mode: Mode) -> Result<TapeOutputs> {
        self.check_input(tape.value(x).dims())?;
        let get = |name: &str| vars.get(name).copied().ok_or_else(|| Error::Argument(format!("parameter {name} not bound")));
        let mut at: Vec<Var> = Vec::with_capacity(self.graph.nodes.len());
        for node in &self.graph.nodes {
            let v = match &node.op {
                Op::Input => x,
                Op::Conv { input, name, relu, .. } => {
                    let y = tape.conv3d(at[*input], get(&format!("{name}.w"))?, get(&format!("{name}.b"))?)?;
                    if *relu {
                        tape.relu(y)
                    } else {
                        y
                    }
                }
                Op::MaxPool { input } => tape.maxpool2(at[*input])?,
                Op::Upsample { input } => tape.upsample2(at[*input])?,
                Op::Concat { a, b } => tape.concat(at[*a], at[*b])?,
            };
            at.push(v);
        }
        let features = at[self.graph.output()];
        if mode == Mode::Phase1 {
            let m = tape.global_max(features)?;
            let scores = tape.linear(m, get(HEAD_W)?, get(HEAD_B)?)?;
            return Ok(TapeOutputs { features, seg: None, scores: Some(scores) });
        }
        let logits = tape.conv3d(features, get(BRANCH_W)?, get(BRANCH_B)?)?;
        let probs = tape.sigmoid(logits);
        let seg = tape.mask(probs, x)?;
        let scores = match mode {
            Mode::Weak { kernel } => {
                let pooled = tape.avgpool(seg, kernel)?;
                Some(tape.global_max(pooled)?)
            }
            _ => None,
        };
        Ok(TapeOutputs { features, seg: Some(seg), scores })
    }

    /// Gradient-free forward pass.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<ForwardResult<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_| false);
        let x = tape.leaf(input.clone(), false);
        let out = self.run(&mut tape, &vars, x, mode)?;
        let branch_maps = match out.seg {
            Some(s) => {
                let seg = tape.value(s);
                (0..self.config.branches).map(|b| seg.channels(b, 1)).collect::<Result<_>>()?
            }
            None => vec![],
        };
        Ok(ForwardResult {
            wu_features: tape.value(out.features).clone(),
            branch_maps,
            class_scores: out.scores.map(|s| tape.value(s).clone()),
        })
    }

    /// Human-readable layer listing.
    pub fn describe(&self) -> String {
        describe(&self.config, &self.graph)
    }
}

pub fn describe(cfg: &NetConfig, g: &Graph) -> String {
    let mut out = String::new();
    for (k, v) in cfg.to_pairs() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for (i, n) in g.nodes.iter().enumerate() {
        let line = match &n.op {
            Op::Input => "input".to_string(),
            Op::Conv { input, name, cin, cout, k, relu } => format!(
                "conv {name} <- {input} {cin}->{cout} k{k}{} params {}",
                if *relu { " relu" } else { "" },
                conv_params(*cin, *cout, *k)
            ),
            Op::MaxPool { input } => format!("maxpool2 <- {input}"),
            Op::Upsample { input } => format!("upsample2 <- {input}"),
            Op::Concat { a, b } => format!("concat <- {a}, {b}"),
        };
        out.push_str(&format!("{i:4} {line} [{}ch @{}]\n", n.channels, n.res));
    }
    let c = cfg.channels;
    out.push_str(&format!(
        "branch conv {c}->{} k{BRANCH_KERNEL} sigmoid mask params {}\n",
        cfg.branches,
        conv_params(c, cfg.branches, BRANCH_KERNEL)
    ));
    out.push_str(&format!("phase-1 head global max -> linear {c}->{HEAD_OUTPUTS} params {}\n", head_param_count(cfg)));
    if let Ok(total) = param_count(cfg) {
        out.push_str(&format!("param_count {total}\n"));
    }
    out
}
