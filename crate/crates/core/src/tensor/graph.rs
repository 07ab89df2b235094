use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

/// Errors emitted by tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operands have incompatible shapes; the message names the op and extents.
    ShapeMismatch { op: &'static str, detail: String },
    /// Axis index out of range for the operand's rank.
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    /// Backward requires a scalar loss.
    NotScalar { shape: Vec<usize> },
    /// Data buffer length does not match the product of the shape extents.
    DataLength { expected: usize, got: usize },
    /// Tensors from different graphs were mixed in one call.
    GraphMismatch { op: &'static str },
    /// An op received an empty operand list or empty extent where one is not allowed.
    Empty(&'static str),
    /// A precondition on a numeric argument failed (e.g. even kernel size).
    BadArgument { op: &'static str, detail: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Self::InvalidAxis { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            Self::NotScalar { shape } => {
                write!(f, "backward: loss must be scalar, got shape {shape:?}")
            }
            Self::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            Self::GraphMismatch { op } => write!(f, "{op}: tensors belong to different graphs"),
            Self::Empty(what) => write!(f, "{what}: empty input"),
            Self::BadArgument { op, detail } => write!(f, "{op}: {detail}"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Pooling mode for [`Graph::pool_axis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Handle to a node in a [`Graph`]. Cheap to clone; only valid for the graph
/// that created it.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) id: usize,
    graph_id: u64,
    shape: Vec<usize>,
    requires_grad: bool,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// One recorded primitive application: the op id, its input ids, and any
/// forward-computed auxiliaries its backward rule needs.
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// out = x * v with v's shape a prefix of x's shape (v broadcast over the
    /// trailing axes).
    MulPrefix(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Exp(usize),
    Ln(usize),
    /// Elementwise power with a constant exponent; requires positive inputs
    /// for non-integer exponents.
    Powf(usize, f64),
    Sigmoid(usize),
    /// out = x + v with v's shape a prefix of x's shape.
    AddPrefix(usize, usize),
    SumAll(usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    ConvDw {
        x: usize,
        k: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    ConvPw {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    /// Normalization over axis 0 per trailing position, with per-channel
    /// affine parameters. `aux` holds (mean, inv_std) per position.
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        aux: Vec<(f64, f64)>,
    },
    GlobalAvgPool(usize),
    PoolAxis {
        x: usize,
        axis: usize,
        mode: PoolMode,
        /// For max mode: per output element, the flat input index of the
        /// selected maximum (lowest index on ties).
        argmax: Vec<usize>,
    },
    Permute {
        x: usize,
        axes: Vec<usize>,
    },
    Reshape(usize),
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    /// Mean cross-entropy over rows of [N,K] logits (or a single [K] row).
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
    },
    /// Row-wise (rank 2) or whole-vector (rank 1) scaling to unit L2 norm.
    /// `norms` holds the pre-clamp norm per row.
    L2Normalize {
        x: usize,
        eps: f64,
        norms: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulPrefix(..) => "mul_prefix",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Powf(..) => "powf",
            Op::AddPrefix(..) => "add_prefix",
            Op::Sigmoid(..) => "sigmoid",
            Op::SumAll(..) => "sum_all",
            Op::Linear { .. } => "linear",
            Op::ConvDw { .. } => "conv2d_depthwise",
            Op::ConvPw { .. } => "conv2d_pointwise",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::PoolAxis { .. } => "pool_axis",
            Op::Permute { .. } => "permute",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::L2Normalize { .. } => "l2_normalize",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulPrefix(a, b)
            | Op::AddPrefix(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddConst(x)
            | Op::Powf(x, _)
            | Op::Exp(x)
            | Op::Ln(x)
            | Op::Sigmoid(x)
            | Op::SumAll(x)
            | Op::GlobalAvgPool(x)
            | Op::Reshape(x) => vec![*x],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter());
                v
            }
            Op::ConvDw { x, k, b, .. } => {
                let mut v = vec![*x, *k];
                v.extend(b.iter());
                v
            }
            Op::ConvPw { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter());
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::PoolAxis { x, .. } => vec![*x],
            Op::Permute { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::L2Normalize { x, .. } => vec![*x],
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Summary of one recorded node, for introspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub id: usize,
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub shape: Vec<usize>,
}

static GRAPH_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Recording context for one forward/backward pass. Nodes are appended in
/// topological order by construction, so backward is a single reverse sweep
/// that touches each node exactly once.
pub struct Graph {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

type Result<T> = std::result::Result<T, TensorError>;

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: GRAPH_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Recorded applications in topological order.
    pub fn nodes_info(&self) -> Vec<NodeInfo> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .map(|(id, n)| NodeInfo {
                id,
                op: n.op.name(),
                inputs: n.op.inputs(),
                shape: n.shape.clone(),
            })
            .collect()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        self.push_shared(shape, Rc::new(data), requires_grad, op)
    }

    fn push_shared(
        &self,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        requires_grad: bool,
        op: Op,
    ) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape: shape.clone(),
            data,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            id,
            graph_id: self.id,
            shape,
            requires_grad,
        }
    }

    fn check_owned(&self, op: &'static str, t: &Tensor) -> Result<()> {
        if t.graph_id != self.id {
            return Err(TensorError::GraphMismatch { op });
        }
        Ok(())
    }

    /// New leaf holding `data`.
    pub fn input(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    /// New leaf sharing an existing buffer (used to bind parameters without
    /// copying them each forward pass).
    pub fn input_shared(
        &self,
        data: Rc<Vec<f64>>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(self.push_shared(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.input(data, shape, false)
    }

    pub fn scalar_const(&self, v: f64) -> Tensor {
        self.push(vec![], vec![v], false, Op::Leaf)
    }

    /// Copy of a node's forward value.
    pub fn data(&self, t: &Tensor) -> Vec<f64> {
        self.nodes.borrow()[t.id].data.as_ref().clone()
    }

    /// Shared handle to a node's forward value (no copy).
    pub fn data_rc(&self, t: &Tensor) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes.borrow()[t.id].data)
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn scalar(&self, t: &Tensor) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[t.id].data.len(), 1);
        nodes[t.id].data[0]
    }

    /// Gradient populated by the last [`Graph::backward`] call, if any.
    pub fn grad(&self, t: &Tensor) -> Option<Vec<f64>> {
        self.nodes.borrow()[t.id].grad.clone()
    }

    /// Gradient of a node by tape id (introspection; pairs with
    /// [`Graph::nodes_info`]).
    pub fn grad_by_id(&self, id: usize) -> Option<Vec<f64>> {
        self.nodes.borrow().get(id).and_then(|n| n.grad.clone())
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        self.check_owned(op, a)?;
        self.check_owned(op, b)?;
        if a.shape != b.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", a.shape, b.shape),
            });
        }
        Ok(())
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        let nodes = self.nodes.borrow();
        let out: Vec<f64> = nodes[a.id]
            .data
            .iter()
            .zip(nodes[b.id].data.iter())
            .map(|(x, y)| x + y)
            .collect();
        drop(nodes);
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(a.shape.clone(), out, rg, Op::Add(a.id, b.id)))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.same_shape("sub", a, b)?;
        let nodes = self.nodes.borrow();
        let out: Vec<f64> = nodes[a.id]
            .data
            .iter()
            .zip(nodes[b.id].data.iter())
            .map(|(x, y)| x - y)
            .collect();
        drop(nodes);
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(a.shape.clone(), out, rg, Op::Sub(a.id, b.id)))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.same_shape("mul", a, b)?;
        let nodes = self.nodes.borrow();
        let out: Vec<f64> = nodes[a.id]
            .data
            .iter()
            .zip(nodes[b.id].data.iter())
            .map(|(x, y)| x * y)
            .collect();
        drop(nodes);
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(a.shape.clone(), out, rg, Op::Mul(a.id, b.id)))
    }

    /// Elementwise multiply with `v` broadcast over the trailing axes of `x`
    /// (`v.shape` must equal a leading prefix of `x.shape`).
    pub fn mul_prefix(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.check_owned("mul_prefix", x)?;
        self.check_owned("mul_prefix", v)?;
        if v.rank() > x.rank() || x.shape[..v.rank()] != v.shape[..] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_prefix",
                detail: format!("{:?} not a prefix of {:?}", v.shape, x.shape),
            });
        }
        let inner: usize = x.shape[v.rank()..].iter().product();
        let nodes = self.nodes.borrow();
        let xd = &nodes[x.id].data;
        let vd = &nodes[v.id].data;
        let mut out = vec![0.0; xd.len()];
        for (i, &vi) in vd.iter().enumerate() {
            let base = i * inner;
            for j in 0..inner {
                out[base + j] = xd[base + j] * vi;
            }
        }
        drop(nodes);
        let rg = x.requires_grad || v.requires_grad;
        Ok(self.push(x.shape.clone(), out, rg, Op::MulPrefix(x.id, v.id)))
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.check_owned("scale", x)?;
        let out: Vec<f64> = self.nodes.borrow()[x.id].data.iter().map(|v| v * c).collect();
        Ok(self.push(x.shape.clone(), out, x.requires_grad, Op::Scale(x.id, c)))
    }

    pub fn add_const(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.check_owned("add_const", x)?;
        let out: Vec<f64> = self.nodes.borrow()[x.id].data.iter().map(|v| v + c).collect();
        Ok(self.push(x.shape.clone(), out, x.requires_grad, Op::AddConst(x.id)))
    }

    pub fn exp(&self, x: &Tensor) -> Result<Tensor> {
        self.check_owned("exp", x)?;
        let out: Vec<f64> = self.nodes.borrow()[x.id].data.iter().map(|v| v.exp()).collect();
        Ok(self.push(x.shape.clone(), out, x.requires_grad, Op::Exp(x.id)))
    }

    pub fn ln(&self, x: &Tensor) -> Result<Tensor> {
        self.check_owned("ln", x)?;
        let out: Vec<f64> = self.nodes.borrow()[x.id].data.iter().map(|v| v.ln()).collect();
        Ok(self.push(x.shape.clone(), out, x.requires_grad, Op::Ln(x.id)))
    }

    /// Elementwise x^p for constant p. Non-integer exponents require
    /// positive inputs.
    pub fn powf(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        self.check_owned("powf", x)?;
        let out: Vec<f64> = self.nodes.borrow()[x.id].data.iter().map(|v| v.powf(p)).collect();
        Ok(self.push(x.shape.clone(), out, x.requires_grad, Op::Powf(x.id, p)))
    }

    /// Elementwise add with `v` broadcast over the trailing axes of `x`
    /// (`v.shape` must equal a leading prefix of `x.shape`).
    pub fn add_prefix(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.check_owned("add_prefix", x)?;
        self.check_owned("add_prefix", v)?;
        if v.rank() > x.rank() || x.shape[..v.rank()] != v.shape[..] {
            return Err(TensorError::ShapeMismatch {
                op: "add_prefix",
                detail: format!("{:?} not a prefix of {:?}", v.shape, x.shape),
            });
        }
        let inner: usize = x.shape[v.rank()..].iter().product();
        let nodes = self.nodes.borrow();
        let xd = &nodes[x.id].data;
        let vd = &nodes[v.id].data;
        let mut out = vec![0.0; xd.len()];
        for (i, &vi) in vd.iter().enumerate() {
            let base = i * inner;
            for j in 0..inner {
                out[base + j] = xd[base + j] + vi;
            }
        }
        drop(nodes);
        let rg = x.requires_grad || v.requires_grad;
        Ok(self.push(x.shape.clone(), out, rg, Op::AddPrefix(x.id, v.id)))
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.check_owned("sigmoid", x)?;
        let out: Vec<f64> = self.nodes.borrow()[x.id]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        Ok(self.push(x.shape.clone(), out, x.requires_grad, Op::Sigmoid(x.id)))
    }

    /// x * sigmoid(x); smooth activation used by the network blocks.
    pub fn silu(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.sigmoid(x)?;
        self.mul(x, &s)
    }

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        self.check_owned("sum_all", x)?;
        let s: f64 = self.nodes.borrow()[x.id].data.iter().sum();
        Ok(self.push(vec![], vec![s], x.requires_grad, Op::SumAll(x.id)))
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel();
        if n == 0 {
            return Err(TensorError::Empty("mean_all"));
        }
        let s = self.sum_all(x)?;
        self.scale(&s, 1.0 / n as f64)
    }

    /// Mean squared difference between two same-shape tensors.
    pub fn mse(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let d = self.sub(a, b)?;
        let sq = self.mul(&d, &d)?;
        self.mean_all(&sq)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// Affine map along the trailing axis: `x` is `[D]` or `[N,D]`, `w` is
    /// `[D',D]`, optional bias `[D']`.
    pub fn linear(&self, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        self.check_owned("linear", x)?;
        self.check_owned("linear", w)?;
        if w.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("weights must be rank 2, got {:?}", w.shape),
            });
        }
        let (dp, d) = (w.shape[0], w.shape[1]);
        let (n, xd) = match x.rank() {
            1 => (1usize, x.shape[0]),
            2 => (x.shape[0], x.shape[1]),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    detail: format!("input must be rank 1 or 2, got {:?}", x.shape),
                })
            }
        };
        if xd != d {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("trailing extent {xd} != weight inner extent {d}"),
            });
        }
        if let Some(bias) = b {
            self.check_owned("linear", bias)?;
            if bias.shape != [dp] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    detail: format!("bias {:?} != [{dp}]", bias.shape),
                });
            }
        }
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let wv = &nodes[w.id].data;
        let bv = b.map(|t| Rc::clone(&nodes[t.id].data));
        let mut out = vec![0.0; n * dp];
        for row in 0..n {
            let xr = &xv[row * d..(row + 1) * d];
            let or = &mut out[row * dp..(row + 1) * dp];
            for (o, wr) in or.iter_mut().zip(wv.chunks_exact(d)) {
                let mut acc = 0.0;
                for (xi, wi) in xr.iter().zip(wr.iter()) {
                    acc += xi * wi;
                }
                *o = acc;
            }
            if let Some(ref bias) = bv {
                for (o, bi) in or.iter_mut().zip(bias.iter()) {
                    *o += bi;
                }
            }
        }
        drop(nodes);
        let out_shape = if x.rank() == 1 { vec![dp] } else { vec![n, dp] };
        let rg = x.requires_grad || w.requires_grad || b.is_some_and(|t| t.requires_grad);
        Ok(self.push(
            out_shape,
            out,
            rg,
            Op::Linear {
                x: x.id,
                w: w.id,
                b: b.map(|t| t.id),
            },
        ))
    }

    /// Depthwise 2-D convolution: `x` is `[C,H,W]`, `kernel` `[C,k,k]` with k
    /// odd, optional bias `[C]`. Channel c of the output depends only on
    /// channel c of the input.
    pub fn conv2d_depthwise(
        &self,
        x: &Tensor,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        self.check_owned("conv2d_depthwise", x)?;
        self.check_owned("conv2d_depthwise", kernel)?;
        if x.rank() != 3 || kernel.rank() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_depthwise",
                detail: format!("need [C,H,W] input and [C,k,k] kernel, got {:?} and {:?}", x.shape, kernel.shape),
            });
        }
        let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let (kc, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2]);
        if kc != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_depthwise",
                detail: format!("kernel channels {kc} != input channels {c}"),
            });
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::BadArgument {
                op: "conv2d_depthwise",
                detail: format!("kernel must be square with odd extent, got {kh}x{kw}"),
            });
        }
        if stride == 0 {
            return Err(TensorError::BadArgument {
                op: "conv2d_depthwise",
                detail: "stride must be >= 1".into(),
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_depthwise",
                detail: format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            });
        }
        if let Some(bt) = bias {
            self.check_owned("conv2d_depthwise", bt)?;
            if bt.shape != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d_depthwise",
                    detail: format!("bias {:?} != [{c}]", bt.shape),
                });
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let kv = &nodes[kernel.id].data;
        let bv = bias.map(|t| Rc::clone(&nodes[t.id].data));
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            let xplane = &xv[ci * h * w..(ci + 1) * h * w];
            let kplane = &kv[ci * kh * kw..(ci + 1) * kh * kw];
            let b0 = bv.as_ref().map_or(0.0, |bb| bb[ci]);
            let oplane = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b0;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += xplane[iy as usize * w + ix as usize] * kplane[ky * kw + kx];
                        }
                    }
                    oplane[oy * ow + ox] = acc;
                }
            }
        }
        drop(nodes);
        let rg = x.requires_grad || kernel.requires_grad || bias.is_some_and(|t| t.requires_grad);
        Ok(self.push(
            vec![c, oh, ow],
            out,
            rg,
            Op::ConvDw {
                x: x.id,
                k: kernel.id,
                b: bias.map(|t| t.id),
                stride,
                pad,
            },
        ))
    }

    /// 1x1 convolution: `x` is `[C,H,W]`, `weights` `[C',C]`, optional bias
    /// `[C']`. Each output pixel is a linear map of the corresponding input
    /// pixel across channels.
    pub fn conv2d_pointwise(&self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        self.check_owned("conv2d_pointwise", x)?;
        self.check_owned("conv2d_pointwise", w)?;
        if x.rank() != 3 || w.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_pointwise",
                detail: format!("need [C,H,W] input and [C',C] weights, got {:?} and {:?}", x.shape, w.shape),
            });
        }
        let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
        let (cp, cin) = (w.shape[0], w.shape[1]);
        if cin != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_pointwise",
                detail: format!("weight inner extent {cin} != input channels {c}"),
            });
        }
        if let Some(bt) = bias {
            self.check_owned("conv2d_pointwise", bt)?;
            if bt.shape != [cp] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d_pointwise",
                    detail: format!("bias {:?} != [{cp}]", bt.shape),
                });
            }
        }
        let hw = h * wd;
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let wv = &nodes[w.id].data;
        let bv = bias.map(|t| Rc::clone(&nodes[t.id].data));
        let mut out = vec![0.0; cp * hw];
        for co in 0..cp {
            let wrow = &wv[co * c..(co + 1) * c];
            let oplane = &mut out[co * hw..(co + 1) * hw];
            if let Some(ref bb) = bv {
                oplane.fill(bb[co]);
            }
            for (ci, &wi) in wrow.iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                let xplane = &xv[ci * hw..(ci + 1) * hw];
                for (o, xp) in oplane.iter_mut().zip(xplane.iter()) {
                    *o += wi * xp;
                }
            }
        }
        drop(nodes);
        let rg = x.requires_grad || w.requires_grad || bias.is_some_and(|t| t.requires_grad);
        Ok(self.push(
            vec![cp, h, wd],
            out,
            rg,
            Op::ConvPw {
                x: x.id,
                w: w.id,
                b: bias.map(|t| t.id),
            },
        ))
    }

    /// Per-position normalization over axis 0 with learnable per-channel scale
    /// and shift. For `[C,L]` or `[C,H,W]` input, every trailing position is
    /// normalized to mean 0 / variance 1 across the C channels (epsilon added
    /// to the variance), then scaled by `gamma` and shifted by `beta`.
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        self.check_owned("layer_norm", x)?;
        self.check_owned("layer_norm", gamma)?;
        self.check_owned("layer_norm", beta)?;
        if x.rank() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: "input must have rank >= 1".into(),
            });
        }
        let c = x.shape[0];
        if gamma.shape != [c] || beta.shape != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!("gamma/beta must be [{c}], got {:?} and {:?}", gamma.shape, beta.shape),
            });
        }
        let positions: usize = x.shape[1..].iter().product();
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let gv = &nodes[gamma.id].data;
        let bv = &nodes[beta.id].data;
        let mut out = vec![0.0; xv.len()];
        let mut aux = Vec::with_capacity(positions);
        for p in 0..positions {
            let mut mean = 0.0;
            for ci in 0..c {
                mean += xv[ci * positions + p];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ci in 0..c {
                let d = xv[ci * positions + p] - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            aux.push((mean, inv_std));
            for ci in 0..c {
                let xhat = (xv[ci * positions + p] - mean) * inv_std;
                out[ci * positions + p] = gv[ci] * xhat + bv[ci];
            }
        }
        drop(nodes);
        let rg = x.requires_grad || gamma.requires_grad || beta.requires_grad;
        Ok(self.push(
            x.shape.clone(),
            out,
            rg,
            Op::LayerNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                aux,
            },
        ))
    }

    /// Mean over all trailing axes: `[C,...]` -> `[C]`.
    pub fn global_avg_pool(&self, x: &Tensor) -> Result<Tensor> {
        self.check_owned("global_avg_pool", x)?;
        if x.rank() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "global_avg_pool",
                detail: format!("input must have rank >= 2, got {:?}", x.shape),
            });
        }
        let c = x.shape[0];
        let positions: usize = x.shape[1..].iter().product();
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let out: Vec<f64> = (0..c)
            .map(|ci| xv[ci * positions..(ci + 1) * positions].iter().sum::<f64>() / positions as f64)
            .collect();
        drop(nodes);
        Ok(self.push(vec![c], out, x.requires_grad, Op::GlobalAvgPool(x.id)))
    }

    /// Reduce one axis by max or mean. Max ties break to the lowest index
    /// along the axis, and the subgradient routes to that element.
    pub fn pool_axis(&self, x: &Tensor, axis: usize, mode: PoolMode) -> Result<Tensor> {
        self.check_owned("pool_axis", x)?;
        if axis >= x.rank() {
            return Err(TensorError::InvalidAxis {
                op: "pool_axis",
                axis,
                rank: x.rank(),
            });
        }
        let outer: usize = x.shape[..axis].iter().product();
        let n = x.shape[axis];
        let inner: usize = x.shape[axis + 1..].iter().product();
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match mode {
            PoolMode::Avg => {
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += xv[(o * n + j) * inner + i];
                        }
                        out[o * inner + i] = acc / n as f64;
                    }
                }
            }
            PoolMode::Max => {
                argmax = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for j in 0..n {
                            let idx = (o * n + j) * inner + i;
                            if xv[idx] > best {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = best_idx;
                    }
                }
            }
        }
        drop(nodes);
        let mut shape = x.shape.clone();
        shape.remove(axis);
        Ok(self.push(
            shape,
            out,
            x.requires_grad,
            Op::PoolAxis {
                x: x.id,
                axis,
                mode,
                argmax,
            },
        ))
    }

    pub fn permute(&self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        self.check_owned("permute", x)?;
        let rank = x.rank();
        if axes.len() != rank {
            return Err(TensorError::BadArgument {
                op: "permute",
                detail: format!("axes {axes:?} must be a permutation of 0..{rank}"),
            });
        }
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(TensorError::BadArgument {
                    op: "permute",
                    detail: format!("axes {axes:?} must be a permutation of 0..{rank}"),
                });
            }
            seen[a] = true;
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape[a]).collect();
        let nodes = self.nodes.borrow();
        let out = permute_data(&nodes[x.id].data, &x.shape, axes);
        drop(nodes);
        Ok(self.push(
            out_shape,
            out,
            x.requires_grad,
            Op::Permute {
                x: x.id,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Rank-2 transpose, equivalent to `permute(x, [1,0])`.
    pub fn transpose(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                detail: format!("input must be rank 2, got {:?}", x.shape),
            });
        }
        self.permute(x, &[1, 0])
    }

    /// View with a new shape of identical element count. Shares the data
    /// buffer; no copy.
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        self.check_owned("reshape", x)?;
        let expected: usize = shape.iter().product();
        if expected != x.numel() {
            return Err(TensorError::DataLength {
                expected,
                got: x.numel(),
            });
        }
        let data = self.data_rc(x);
        Ok(self.push_shared(shape.to_vec(), data, x.requires_grad, Op::Reshape(x.id)))
    }

    /// `[C,H,W]` -> `[C,H*W]`.
    pub fn flatten_spatial(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "flatten_spatial",
                detail: format!("input must be rank 3, got {:?}", x.shape),
            });
        }
        self.reshape(x, &[x.shape[0], x.shape[1] * x.shape[2]])
    }

    pub fn concat(&self, xs: &[&Tensor], axis: usize) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let rank = xs[0].rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank,
            });
        }
        for t in xs {
            self.check_owned("concat", t)?;
            if t.rank() != rank
                || t.shape[..axis] != xs[0].shape[..axis]
                || t.shape[axis + 1..] != xs[0].shape[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} along axis {axis}", t.shape, xs[0].shape),
                });
            }
        }
        let outer: usize = xs[0].shape[..axis].iter().product();
        let inner: usize = xs[0].shape[axis + 1..].iter().product();
        let total_axis: usize = xs.iter().map(|t| t.shape[axis]).sum();
        let mut out = vec![0.0; outer * total_axis * inner];
        let nodes = self.nodes.borrow();
        let mut offset = 0usize;
        for t in xs {
            let na = t.shape[axis];
            let tv = &nodes[t.id].data;
            for o in 0..outer {
                let src = &tv[o * na * inner..(o + 1) * na * inner];
                let dst_start = (o * total_axis + offset) * inner;
                out[dst_start..dst_start + na * inner].copy_from_slice(src);
            }
            offset += na;
        }
        drop(nodes);
        let mut shape = xs[0].shape.clone();
        shape[axis] = total_axis;
        let rg = xs.iter().any(|t| t.requires_grad);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                xs: xs.iter().map(|t| t.id).collect(),
                axis,
            },
        ))
    }

    /// Stack rank-1 tensors of equal length into an `[N,D]` matrix.
    pub fn stack_rows(&self, xs: &[&Tensor]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(TensorError::Empty("stack_rows"));
        }
        let mut rows = Vec::with_capacity(xs.len());
        for t in xs {
            if t.rank() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    detail: format!("expected rank-1 rows, got {:?}", t.shape),
                });
            }
            rows.push(self.reshape(t, &[1, t.shape[0]])?);
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        self.concat(&refs, 0)
    }

    /// Mean cross-entropy of `logits` (`[K]` or `[N,K]`) against integer
    /// targets, computed with a stable log-softmax.
    pub fn cross_entropy(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        self.check_owned("cross_entropy", logits)?;
        let (n, k) = match logits.rank() {
            1 => (1usize, logits.shape[0]),
            2 => (logits.shape[0], logits.shape[1]),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "cross_entropy",
                    detail: format!("logits must be rank 1 or 2, got {:?}", logits.shape),
                })
            }
        };
        if targets.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} targets for {n} rows", targets.len()),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::BadArgument {
                op: "cross_entropy",
                detail: format!("target {t} out of range for {k} classes"),
            });
        }
        let nodes = self.nodes.borrow();
        let lv = &nodes[logits.id].data;
        let mut loss = 0.0;
        for (row, &t) in targets.iter().enumerate() {
            let r = &lv[row * k..(row + 1) * k];
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - r[t];
        }
        loss /= n as f64;
        drop(nodes);
        Ok(self.push(
            vec![],
            vec![loss],
            logits.requires_grad,
            Op::CrossEntropy {
                logits: logits.id,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Scale to unit L2 norm: whole vector for rank 1, each row for rank 2.
    /// Norms below `eps` are clamped to `eps`.
    pub fn l2_normalize(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        self.check_owned("l2_normalize", x)?;
        let (n, d) = match x.rank() {
            1 => (1usize, x.shape[0]),
            2 => (x.shape[0], x.shape[1]),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "l2_normalize",
                    detail: format!("input must be rank 1 or 2, got {:?}", x.shape),
                })
            }
        };
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.id].data;
        let mut out = vec![0.0; xv.len()];
        let mut norms = Vec::with_capacity(n);
        for row in 0..n {
            let r = &xv[row * d..(row + 1) * d];
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let clamped = norm.max(eps);
            norms.push(norm);
            for (o, v) in out[row * d..(row + 1) * d].iter_mut().zip(r.iter()) {
                *o = v / clamped;
            }
        }
        drop(nodes);
        Ok(self.push(
            x.shape.clone(),
            out,
            x.requires_grad,
            Op::L2Normalize {
                x: x.id,
                eps,
                norms,
            },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` for every tracked
    /// ancestor of `loss`; each tape node is visited exactly once.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        self.check_owned("backward", loss)?;
        if loss.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss.shape.clone(),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        for node in nodes.iter_mut() {
            node.grad = None;
        }
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        nodes[loss.id].grad = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if nodes[id].grad.is_none() || !nodes[id].requires_grad {
                continue;
            }
            backward_node(&mut nodes, id);
        }
        Ok(())
    }
}

/// Ensure a grad buffer exists for `id` (if that node is tracked) and return
/// whether it is.
fn wants_grad(nodes: &mut [Node], id: usize) -> bool {
    if !nodes[id].requires_grad {
        return false;
    }
    if nodes[id].grad.is_none() {
        let len = nodes[id].data.len();
        nodes[id].grad = Some(vec![0.0; len]);
    }
    true
}

fn backward_node(nodes: &mut [Node], id: usize) {
    // Take the output grad out of the node to satisfy the borrow checker;
    // nothing below reads nodes[id].grad again.
    let g = nodes[id].grad.take().expect("grad present for visited node");
    match std::mem::replace(&mut nodes[id].op, Op::Leaf) {
        Op::Leaf => {
            nodes[id].op = Op::Leaf;
            nodes[id].grad = Some(g);
            return;
        }
        op => {
            apply_backward(nodes, &op, &g);
            nodes[id].op = op;
            nodes[id].grad = Some(g);
        }
    }
}

fn apply_backward(nodes: &mut [Node], op: &Op, g: &[f64]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants_grad(nodes, *a) {
                accumulate(nodes[*a].grad.as_mut().unwrap(), g, 1.0);
            }
            if wants_grad(nodes, *b) {
                accumulate(nodes[*b].grad.as_mut().unwrap(), g, 1.0);
            }
        }
        Op::Sub(a, b) => {
            if wants_grad(nodes, *a) {
                accumulate(nodes[*a].grad.as_mut().unwrap(), g, 1.0);
            }
            if wants_grad(nodes, *b) {
                accumulate(nodes[*b].grad.as_mut().unwrap(), g, -1.0);
            }
        }
        Op::Mul(a, b) => {
            if wants_grad(nodes, *a) {
                let bd = Rc::clone(&nodes[*b].data);
                let ga = nodes[*a].grad.as_mut().unwrap();
                for i in 0..g.len() {
                    ga[i] += g[i] * bd[i];
                }
            }
            if wants_grad(nodes, *b) {
                let ad = Rc::clone(&nodes[*a].data);
                let gb = nodes[*b].grad.as_mut().unwrap();
                for i in 0..g.len() {
                    gb[i] += g[i] * ad[i];
                }
            }
        }
        Op::MulPrefix(x, v) => {
            let inner = nodes[*x].data.len() / nodes[*v].data.len();
            if wants_grad(nodes, *x) {
                let vd = Rc::clone(&nodes[*v].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for (i, &vi) in vd.iter().enumerate() {
                    for j in 0..inner {
                        gx[i * inner + j] += g[i * inner + j] * vi;
                    }
                }
            }
            if wants_grad(nodes, *v) {
                let xd = Rc::clone(&nodes[*x].data);
                let gv = nodes[*v].grad.as_mut().unwrap();
                for (i, gvi) in gv.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..inner {
                        acc += g[i * inner + j] * xd[i * inner + j];
                    }
                    *gvi += acc;
                }
            }
        }
        Op::Scale(x, c) => {
            if wants_grad(nodes, *x) {
                accumulate(nodes[*x].grad.as_mut().unwrap(), g, *c);
            }
        }
        Op::AddConst(x) => {
            if wants_grad(nodes, *x) {
                accumulate(nodes[*x].grad.as_mut().unwrap(), g, 1.0);
            }
        }
        Op::Exp(x) => {
            if wants_grad(nodes, *x) {
                let xd = Rc::clone(&nodes[*x].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for i in 0..g.len() {
                    gx[i] += g[i] * xd[i].exp();
                }
            }
        }
        Op::Ln(x) => {
            if wants_grad(nodes, *x) {
                let xd = Rc::clone(&nodes[*x].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for i in 0..g.len() {
                    gx[i] += g[i] / xd[i];
                }
            }
        }
        Op::Powf(x, p) => {
            if wants_grad(nodes, *x) {
                let xd = Rc::clone(&nodes[*x].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for i in 0..g.len() {
                    gx[i] += g[i] * p * xd[i].powf(p - 1.0);
                }
            }
        }
        Op::AddPrefix(x, v) => {
            let inner = nodes[*x].data.len() / nodes[*v].data.len();
            if wants_grad(nodes, *x) {
                accumulate(nodes[*x].grad.as_mut().unwrap(), g, 1.0);
            }
            if wants_grad(nodes, *v) {
                let gv = nodes[*v].grad.as_mut().unwrap();
                for (i, gvi) in gv.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..inner {
                        acc += g[i * inner + j];
                    }
                    *gvi += acc;
                }
            }
        }
        Op::Sigmoid(x) => {
            if wants_grad(nodes, *x) {
                let xd = Rc::clone(&nodes[*x].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for i in 0..g.len() {
                    let y = 1.0 / (1.0 + (-xd[i]).exp());
                    gx[i] += g[i] * y * (1.0 - y);
                }
            }
        }
        Op::SumAll(x) => {
            if wants_grad(nodes, *x) {
                let gx = nodes[*x].grad.as_mut().unwrap();
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
        }
        Op::Linear { x, w, b } => {
            let d = nodes[*w].shape[1];
            let dp = nodes[*w].shape[0];
            let n = nodes[*x].data.len() / d;
            if wants_grad(nodes, *x) {
                let wd = Rc::clone(&nodes[*w].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for row in 0..n {
                    let gr = &g[row * dp..(row + 1) * dp];
                    let xr = &mut gx[row * d..(row + 1) * d];
                    for (go, wr) in gr.iter().zip(wd.chunks_exact(d)) {
                        if *go == 0.0 {
                            continue;
                        }
                        for (xi, wi) in xr.iter_mut().zip(wr.iter()) {
                            *xi += go * wi;
                        }
                    }
                }
            }
            if wants_grad(nodes, *w) {
                let xd = Rc::clone(&nodes[*x].data);
                let gw = nodes[*w].grad.as_mut().unwrap();
                for row in 0..n {
                    let gr = &g[row * dp..(row + 1) * dp];
                    let xr = &xd[row * d..(row + 1) * d];
                    for (go, wr) in gr.iter().zip(gw.chunks_exact_mut(d)) {
                        if *go == 0.0 {
                            continue;
                        }
                        for (wi, xi) in wr.iter_mut().zip(xr.iter()) {
                            *wi += go * xi;
                        }
                    }
                }
            }
            if let Some(bid) = b {
                if wants_grad(nodes, *bid) {
                    let gb = nodes[*bid].grad.as_mut().unwrap();
                    for row in 0..n {
                        for (bi, go) in gb.iter_mut().zip(&g[row * dp..(row + 1) * dp]) {
                            *bi += go;
                        }
                    }
                }
            }
        }
        Op::ConvDw {
            x,
            k,
            b,
            stride,
            pad,
        } => {
            let (c, h, w) = (nodes[*x].shape[0], nodes[*x].shape[1], nodes[*x].shape[2]);
            let (kh, kw) = (nodes[*k].shape[1], nodes[*k].shape[2]);
            let oh = (h + 2 * pad - kh) / stride + 1;
            let ow = (w + 2 * pad - kw) / stride + 1;
            if wants_grad(nodes, *x) {
                let kd = Rc::clone(&nodes[*k].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for ci in 0..c {
                    let kplane = &kd[ci * kh * kw..(ci + 1) * kh * kw];
                    let gxp = &mut gx[ci * h * w..(ci + 1) * h * w];
                    let gp = &g[ci * oh * ow..(ci + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = gp[oy * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    gxp[iy as usize * w + ix as usize] += go * kplane[ky * kw + kx];
                                }
                            }
                        }
                    }
                }
            }
            if wants_grad(nodes, *k) {
                let xd = Rc::clone(&nodes[*x].data);
                let gk = nodes[*k].grad.as_mut().unwrap();
                for ci in 0..c {
                    let xplane = &xd[ci * h * w..(ci + 1) * h * w];
                    let gkp = &mut gk[ci * kh * kw..(ci + 1) * kh * kw];
                    let gp = &g[ci * oh * ow..(ci + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = gp[oy * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    gkp[ky * kw + kx] += go * xplane[iy as usize * w + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bid) = b {
                if wants_grad(nodes, *bid) {
                    let gb = nodes[*bid].grad.as_mut().unwrap();
                    for (ci, gbi) in gb.iter_mut().enumerate() {
                        *gbi += g[ci * oh * ow..(ci + 1) * oh * ow].iter().sum::<f64>();
                    }
                }
            }
        }
        Op::ConvPw { x, w, b } => {
            let c = nodes[*x].shape[0];
            let hw = nodes[*x].shape[1] * nodes[*x].shape[2];
            let cp = nodes[*w].shape[0];
            if wants_grad(nodes, *x) {
                let wd = Rc::clone(&nodes[*w].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for co in 0..cp {
                    let gp = &g[co * hw..(co + 1) * hw];
                    let wrow = &wd[co * c..(co + 1) * c];
                    for (ci, &wi) in wrow.iter().enumerate() {
                        if wi == 0.0 {
                            continue;
                        }
                        let gxp = &mut gx[ci * hw..(ci + 1) * hw];
                        for (gxi, go) in gxp.iter_mut().zip(gp.iter()) {
                            *gxi += wi * go;
                        }
                    }
                }
            }
            if wants_grad(nodes, *w) {
                let xd = Rc::clone(&nodes[*x].data);
                let gw = nodes[*w].grad.as_mut().unwrap();
                for co in 0..cp {
                    let gp = &g[co * hw..(co + 1) * hw];
                    let gwrow = &mut gw[co * c..(co + 1) * c];
                    for (ci, gwi) in gwrow.iter_mut().enumerate() {
                        let xplane = &xd[ci * hw..(ci + 1) * hw];
                        let mut acc = 0.0;
                        for (xp, go) in xplane.iter().zip(gp.iter()) {
                            acc += xp * go;
                        }
                        *gwi += acc;
                    }
                }
            }
            if let Some(bid) = b {
                if wants_grad(nodes, *bid) {
                    let gb = nodes[*bid].grad.as_mut().unwrap();
                    for (co, gbi) in gb.iter_mut().enumerate() {
                        *gbi += g[co * hw..(co + 1) * hw].iter().sum::<f64>();
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, aux } => {
            let c = nodes[*x].shape[0];
            let positions = nodes[*x].data.len() / c;
            let xd = Rc::clone(&nodes[*x].data);
            let gd = Rc::clone(&nodes[*gamma].data);
            if wants_grad(nodes, *gamma) {
                let gg = nodes[*gamma].grad.as_mut().unwrap();
                for p in 0..positions {
                    let (mean, inv_std) = aux[p];
                    for ci in 0..c {
                        let xhat = (xd[ci * positions + p] - mean) * inv_std;
                        gg[ci] += g[ci * positions + p] * xhat;
                    }
                }
            }
            if wants_grad(nodes, *beta) {
                let gb = nodes[*beta].grad.as_mut().unwrap();
                for p in 0..positions {
                    for ci in 0..c {
                        gb[ci] += g[ci * positions + p];
                    }
                }
            }
            if wants_grad(nodes, *x) {
                let gx = nodes[*x].grad.as_mut().unwrap();
                for p in 0..positions {
                    let (mean, inv_std) = aux[p];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for ci in 0..c {
                        let xhat = (xd[ci * positions + p] - mean) * inv_std;
                        let dxhat = g[ci * positions + p] * gd[ci];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let cn = c as f64;
                    for ci in 0..c {
                        let xhat = (xd[ci * positions + p] - mean) * inv_std;
                        let dxhat = g[ci * positions + p] * gd[ci];
                        gx[ci * positions + p] +=
                            inv_std * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
                    }
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            if wants_grad(nodes, *x) {
                let c = nodes[*x].shape[0];
                let positions = nodes[*x].data.len() / c;
                let gx = nodes[*x].grad.as_mut().unwrap();
                for ci in 0..c {
                    let gi = g[ci] / positions as f64;
                    for p in 0..positions {
                        gx[ci * positions + p] += gi;
                    }
                }
            }
        }
        Op::PoolAxis {
            x,
            axis,
            mode,
            argmax,
        } => {
            if wants_grad(nodes, *x) {
                let shape = nodes[*x].shape.clone();
                let outer: usize = shape[..*axis].iter().product();
                let n = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let gx = nodes[*x].grad.as_mut().unwrap();
                match mode {
                    PoolMode::Avg => {
                        for o in 0..outer {
                            for i in 0..inner {
                                let gi = g[o * inner + i] / n as f64;
                                for j in 0..n {
                                    gx[(o * n + j) * inner + i] += gi;
                                }
                            }
                        }
                    }
                    PoolMode::Max => {
                        for (oi, &src) in argmax.iter().enumerate() {
                            gx[src] += g[oi];
                        }
                    }
                }
            }
        }
        Op::Permute { x, axes } => {
            if wants_grad(nodes, *x) {
                let out_shape: Vec<usize> = axes.iter().map(|&a| nodes[*x].shape[a]).collect();
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let gperm = permute_data(g, &out_shape, &inverse);
                accumulate(nodes[*x].grad.as_mut().unwrap(), &gperm, 1.0);
            }
        }
        Op::Reshape(x) => {
            if wants_grad(nodes, *x) {
                accumulate(nodes[*x].grad.as_mut().unwrap(), g, 1.0);
            }
        }
        Op::Concat { xs, axis } => {
            let shape0 = nodes[xs[0]].shape.clone();
            let outer: usize = shape0[..*axis].iter().product();
            let inner: usize = shape0[*axis + 1..].iter().product();
            let total_axis: usize = xs.iter().map(|&t| nodes[t].shape[*axis]).sum();
            let mut offset = 0usize;
            for &t in xs {
                let na = nodes[t].shape[*axis];
                if wants_grad(nodes, t) {
                    let gt = nodes[t].grad.as_mut().unwrap();
                    for o in 0..outer {
                        let src_start = (o * total_axis + offset) * inner;
                        let dst = &mut gt[o * na * inner..(o + 1) * na * inner];
                        for (d, s) in dst.iter_mut().zip(&g[src_start..src_start + na * inner]) {
                            *d += s;
                        }
                    }
                }
                offset += na;
            }
        }
        Op::CrossEntropy { logits, targets } => {
            if wants_grad(nodes, *logits) {
                let k = *nodes[*logits].shape.last().unwrap();
                let n = targets.len();
                let ld = Rc::clone(&nodes[*logits].data);
                let gl = nodes[*logits].grad.as_mut().unwrap();
                let scale = g[0] / n as f64;
                for (row, &t) in targets.iter().enumerate() {
                    let r = &ld[row * k..(row + 1) * k];
                    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = r.iter().map(|v| (v - m).exp()).sum();
                    for (j, rv) in r.iter().enumerate() {
                        let p = (rv - m).exp() / denom;
                        let indicator = if j == t { 1.0 } else { 0.0 };
                        gl[row * k + j] += scale * (p - indicator);
                    }
                }
            }
        }
        Op::L2Normalize { x, eps, norms } => {
            if wants_grad(nodes, *x) {
                let d = nodes[*x].data.len() / norms.len();
                let xd = Rc::clone(&nodes[*x].data);
                let gx = nodes[*x].grad.as_mut().unwrap();
                for (row, &raw) in norms.iter().enumerate() {
                    let xr = &xd[row * d..(row + 1) * d];
                    let gr = &g[row * d..(row + 1) * d];
                    if raw <= *eps {
                        // Clamped region: y = x / eps, a plain scaling.
                        for (gxi, gi) in gx[row * d..(row + 1) * d].iter_mut().zip(gr.iter()) {
                            *gxi += gi / eps;
                        }
                        continue;
                    }
                    let mut dot = 0.0;
                    for (xi, gi) in xr.iter().zip(gr.iter()) {
                        dot += xi * gi / raw;
                    }
                    // y = x / norm; dx = (g - y (g . y)) / norm
                    for (i, gxi) in gx[row * d..(row + 1) * d].iter_mut().enumerate() {
                        let y = xr[i] / raw;
                        *gxi += (gr[i] - y * dot) / raw;
                    }
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s * scale;
    }
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![0.0; out_len];
    let mut coords = vec![0usize; rank];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0usize;
        for d in 0..rank {
            src += coords[d] * in_strides[axes[d]];
        }
        *o = data[src];
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use rand::Rng;

    fn randn(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn depthwise_identity_kernel_passes_input_through() {
        let g = Graph::new();
        let x = g
            .input(vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, -3.0], &[2, 2, 2], false)
            .unwrap();
        // center-one 3x3 kernel per channel
        let mut k = vec![0.0; 2 * 9];
        k[4] = 1.0;
        k[9 + 4] = 1.0;
        let kernel = g.input(k, &[2, 3, 3], false).unwrap();
        let y = g.conv2d_depthwise(&x, &kernel, None, 1, 1).unwrap();
        assert_eq!(g.data(&y), g.data(&x));
    }

    #[test]
    fn depthwise_zero_input_gives_zero_output() {
        let g = Graph::new();
        let x = g.input(vec![0.0; 3 * 5 * 5], &[3, 5, 5], false).unwrap();
        let mut rng = component_rng(3, "k");
        let kernel = g.input(randn(&mut rng, 3 * 9), &[3, 3, 3], false).unwrap();
        let y = g.conv2d_depthwise(&x, &kernel, None, 1, 1).unwrap();
        assert!(g.data(&y).iter().all(|v| *v == 0.0));
    }

    // Independent nested-loop convolution used as the oracle.
    fn conv_oracle(x: &[f64], h: usize, w: usize, k: &[f64], kk: usize, pad: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0;
                for ky in 0..kk {
                    for kx in 0..kk {
                        let iy = oy as isize + ky as isize - pad as isize;
                        let ix = ox as isize + kx as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            acc += x[iy as usize * w + ix as usize] * k[ky * kk + kx];
                        }
                    }
                }
                out[oy * w + ox] = acc;
            }
        }
        out
    }

    #[test]
    fn depthwise_matches_nested_loop_oracle() {
        let mut rng = component_rng(7, "conv");
        let xv = randn(&mut rng, 16);
        let kv = randn(&mut rng, 9);
        let expect = conv_oracle(&xv, 4, 4, &kv, 3, 1);
        let g = Graph::new();
        let x = g.input(xv, &[1, 4, 4], false).unwrap();
        let k = g.input(kv, &[1, 3, 3], false).unwrap();
        let y = g.conv2d_depthwise(&x, &k, None, 1, 1).unwrap();
        for (a, b) in g.data(&y).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_rejects_channel_mismatch() {
        let g = Graph::new();
        let x = g.input(vec![0.0; 2 * 4 * 4], &[2, 4, 4], false).unwrap();
        let k = g.input(vec![0.0; 3 * 9], &[3, 3, 3], false).unwrap();
        let err = g.conv2d_depthwise(&x, &k, None, 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn depthwise_stride_two_halves_extent() {
        let g = Graph::new();
        let x = g.input(vec![1.0; 1 * 8 * 8], &[1, 8, 8], false).unwrap();
        let k = g.input(vec![1.0; 9], &[1, 3, 3], false).unwrap();
        let y = g.conv2d_depthwise(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
    }

    #[test]
    fn pointwise_identity_weights() {
        let g = Graph::new();
        let mut rng = component_rng(9, "pw");
        let xv = randn(&mut rng, 2 * 6);
        let x = g.input(xv.clone(), &[2, 2, 3], false).unwrap();
        let w = g.input(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
        let y = g.conv2d_pointwise(&x, &w, None).unwrap();
        assert_eq!(g.data(&y), xv);
    }

    #[test]
    fn pointwise_channel_sum() {
        let g = Graph::new();
        let x = g
            .input(vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0], &[2, 2, 2], false)
            .unwrap();
        let w = g.input(vec![1.0, 1.0], &[1, 2], false).unwrap();
        let y = g.conv2d_pointwise(&x, &w, None).unwrap();
        assert_eq!(g.data(&y), vec![11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn pointwise_matches_per_pixel_matmul_oracle() {
        let mut rng = component_rng(11, "pw2");
        let (c_in, c_out, h, w) = (3usize, 4usize, 2usize, 5usize);
        let xv = randn(&mut rng, c_in * h * w);
        let wv = randn(&mut rng, c_out * c_in);
        // oracle: independent per-pixel matrix multiply
        let mut expect = vec![0.0; c_out * h * w];
        for p in 0..h * w {
            for co in 0..c_out {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    acc += wv[co * c_in + ci] * xv[ci * h * w + p];
                }
                expect[co * h * w + p] = acc;
            }
        }
        let g = Graph::new();
        let x = g.input(xv, &[c_in, h, w], false).unwrap();
        let wt = g.input(wv, &[c_out, c_in], false).unwrap();
        let y = g.conv2d_pointwise(&x, &wt, None).unwrap();
        for (a, b) in g.data(&y).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_identity_and_analytic() {
        let g = Graph::new();
        let x = g.input(vec![1.0, 2.0], &[2], false).unwrap();
        let wid = g.input(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
        let b0 = g.input(vec![0.0, 0.0], &[2], false).unwrap();
        let y = g.linear(&x, &wid, Some(&b0)).unwrap();
        assert_eq!(g.data(&y), vec![1.0, 2.0]);

        let w = g.input(vec![1.0, 1.0], &[1, 2], false).unwrap();
        let b = g.input(vec![0.0], &[1], false).unwrap();
        let z = g.linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(g.data(&z), vec![3.0]);
    }

    #[test]
    fn linear_matches_dot_product_oracle() {
        let mut rng = component_rng(13, "lin");
        let (n, d, dp) = (3usize, 5usize, 4usize);
        let xv = randn(&mut rng, n * d);
        let wv = randn(&mut rng, dp * d);
        let bv = randn(&mut rng, dp);
        let mut expect = vec![0.0; n * dp];
        for r in 0..n {
            for o in 0..dp {
                let mut acc = bv[o];
                for i in 0..d {
                    acc += xv[r * d + i] * wv[o * d + i];
                }
                expect[r * dp + o] = acc;
            }
        }
        let g = Graph::new();
        let x = g.input(xv, &[n, d], false).unwrap();
        let w = g.input(wv, &[dp, d], false).unwrap();
        let b = g.input(bv, &[dp], false).unwrap();
        let y = g.linear(&x, &w, Some(&b)).unwrap();
        for (a, e) in g.data(&y).iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_rejects_extent_mismatch() {
        let g = Graph::new();
        let x = g.input(vec![0.0; 3], &[3], false).unwrap();
        let w = g.input(vec![0.0; 4], &[2, 2], false).unwrap();
        assert!(matches!(
            g.linear(&x, &w, None),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let g = Graph::new();
        let x = g.input(vec![5.0; 4 * 3], &[4, 3], false).unwrap();
        let gamma = g.input(vec![1.0; 4], &[4], false).unwrap();
        let beta = g.input(vec![0.0; 4], &[4], false).unwrap();
        let y = g.layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        assert!(g.data(&y).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let g = Graph::new();
        let x = g.input(vec![1.0, -1.0], &[2, 1], false).unwrap();
        let gamma = g.input(vec![1.0; 2], &[2], false).unwrap();
        let beta = g.input(vec![0.0; 2], &[2], false).unwrap();
        let y = g.layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        let d = g.data(&y);
        assert!((d[0] - 1.0).abs() < 1e-4 && (d[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_moments_match_direct_computation() {
        let mut rng = component_rng(17, "ln");
        let (c, l) = (16usize, 7usize);
        let xv = randn(&mut rng, c * l);
        let g = Graph::new();
        let x = g.input(xv, &[c, l], false).unwrap();
        let gamma = g.input(vec![1.0; c], &[c], false).unwrap();
        let beta = g.input(vec![0.0; c], &[c], false).unwrap();
        let y = g.layer_norm(&x, &gamma, &beta, 1e-9).unwrap();
        let d = g.data(&y);
        for p in 0..l {
            let col: Vec<f64> = (0..c).map(|ci| d[ci * l + p]).collect();
            let mean = col.iter().sum::<f64>() / c as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn sigmoid_at_zero_and_gap_of_constant() {
        let g = Graph::new();
        let x = g.input(vec![0.0], &[1], false).unwrap();
        assert_eq!(g.data(&g.sigmoid(&x).unwrap()), vec![0.5]);
        let m = g.input(vec![2.5; 3 * 4 * 4], &[3, 4, 4], false).unwrap();
        let pooled = g.global_avg_pool(&m).unwrap();
        assert_eq!(g.data(&pooled), vec![2.5; 3]);
    }

    #[test]
    fn permute_round_trip_preserves_data_and_grads() {
        let mut rng = component_rng(19, "perm");
        let xv = randn(&mut rng, 2 * 3 * 4);
        let g = Graph::new();
        let x = g.input(xv.clone(), &[2, 3, 4], true).unwrap();
        let p = g.permute(&x, &[2, 0, 1]).unwrap();
        // inverse of [2,0,1] is [1,2,0]
        let back = g.permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(g.data(&back), xv);
        // gradient of sum(weighted back) must round-trip too
        let weights: Vec<f64> = randn(&mut rng, 24);
        let wt = g.constant(weights.clone(), &[2, 3, 4]).unwrap();
        let loss = g.sum_all(&g.mul(&back, &wt).unwrap()).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), weights);
    }

    #[test]
    fn max_pool_ties_break_to_lowest_index() {
        let g = Graph::new();
        let x = g.input(vec![1.0, 3.0, 3.0, 2.0], &[1, 4, 1], true).unwrap();
        let y = g.pool_axis(&x, 1, PoolMode::Max).unwrap();
        assert_eq!(g.data(&y), vec![3.0]);
        let loss = g.sum_all(&y).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn avg_pool_axis_matches_mean() {
        let g = Graph::new();
        let x = g.input(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], false).unwrap();
        let y = g.pool_axis(&x, 1, PoolMode::Avg).unwrap();
        assert_eq!(g.data(&y), vec![2.0, 5.0]);
        let z = g.pool_axis(&x, 0, PoolMode::Avg).unwrap();
        assert_eq!(g.data(&z), vec![2.5, 3.5, 4.5]);
    }

    #[test]
    fn invalid_axis_is_rejected() {
        let g = Graph::new();
        let x = g.input(vec![0.0; 4], &[2, 2], false).unwrap();
        assert!(matches!(
            g.pool_axis(&x, 2, PoolMode::Avg),
            Err(TensorError::InvalidAxis { .. })
        ));
    }

    #[test]
    fn concat_and_flatten_round_trip_bit_exact() {
        let mut rng = component_rng(23, "cc");
        let a = randn(&mut rng, 2 * 3);
        let b = randn(&mut rng, 2 * 3);
        let g = Graph::new();
        let ta = g.input(a.clone(), &[2, 3], false).unwrap();
        let tb = g.input(b.clone(), &[2, 3], false).unwrap();
        let cat = g.concat(&[&ta, &tb], 0).unwrap();
        assert_eq!(cat.shape(), &[4, 3]);
        let dv = g.data(&cat);
        assert_eq!(&dv[..6], a.as_slice());
        assert_eq!(&dv[6..], b.as_slice());

        let m = g.input(randn(&mut rng, 3 * 2 * 2), &[3, 2, 2], false).unwrap();
        let flat = g.flatten_spatial(&m).unwrap();
        assert_eq!(flat.shape(), &[3, 4]);
        assert_eq!(g.data(&flat), g.data(&m));
    }

    #[test]
    fn backward_sum_gives_ones_and_half_square_gives_x() {
        let g = Graph::new();
        let xv = vec![0.4, -1.5, 2.25];
        let x = g.input(xv.clone(), &[3], true).unwrap();
        let loss = g.sum_all(&x).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), vec![1.0; 3]);

        let g2 = Graph::new();
        let x2 = g2.input(xv.clone(), &[3], true).unwrap();
        let sq = g2.mul(&x2, &x2).unwrap();
        let half = g2.scale(&g2.sum_all(&sq).unwrap(), 0.5).unwrap();
        g2.backward(&half).unwrap();
        assert_eq!(g2.grad(&x2).unwrap(), xv);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let g = Graph::new();
        let x = g.input(vec![1.0, 2.0], &[2], true).unwrap();
        assert!(matches!(
            g.backward(&x),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let g = Graph::new();
        let logits = g.input(vec![0.0; 4], &[4], false).unwrap();
        let loss = g.cross_entropy(&logits, &[2]).unwrap();
        assert!((g.scalar(&loss) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_rows_are_unit() {
        let mut rng = component_rng(29, "l2");
        let xv = randn(&mut rng, 3 * 5);
        let g = Graph::new();
        let x = g.input(xv, &[3, 5], false).unwrap();
        let y = g.l2_normalize(&x, 1e-12).unwrap();
        let d = g.data(&y);
        for r in 0..3 {
            let n: f64 = d[r * 5..(r + 1) * 5].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_records_topological_order() {
        let g = Graph::new();
        let x = g.input(vec![1.0], &[1], true).unwrap();
        let y = g.sigmoid(&x).unwrap();
        let z = g.add(&x, &y).unwrap();
        let info = g.nodes_info();
        assert_eq!(info.len(), 3);
        for n in &info {
            for &i in &n.inputs {
                assert!(i < n.id, "acyclic: inputs precede outputs");
            }
        }
        assert_eq!(info[z.id].op, "add");
    }

    #[test]
    fn determinism_same_inputs_bit_identical() {
        let run = || {
            let mut rng = component_rng(31, "det");
            let xv = randn(&mut rng, 8 * 6);
            let g = Graph::new();
            let x = g.input(xv, &[8, 6], true).unwrap();
            let gamma = g.input(vec![1.0; 8], &[8], false).unwrap();
            let beta = g.input(vec![0.0; 8], &[8], false).unwrap();
            let y = g.layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
            let s = g.silu(&y).unwrap();
            let loss = g.mean_all(&s).unwrap();
            g.backward(&loss).unwrap();
            (g.scalar(&loss).to_bits(), g.grad(&x).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn diamond_graph_accumulates_once_per_path() {
        // loss = sum(x * x + x); dx = 2x + 1
        let g = Graph::new();
        let x = g.input(vec![3.0, -2.0], &[2], true).unwrap();
        let sq = g.mul(&x, &x).unwrap();
        let s = g.add(&sq, &x).unwrap();
        let loss = g.sum_all(&s).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), vec![7.0, -3.0]);
    }
}
