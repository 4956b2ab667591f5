use super::ops::{self, broadcast_index_map, ElementwiseOp};
use super::{DenseTensor, Result, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module.
///
/// `backward` receives the parent values, this node's value and the upstream
/// gradient, and returns one gradient per parent (same shapes as the parents).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&DenseTensor],
        output: &DenseTensor,
        grad: &DenseTensor,
    ) -> Result<Vec<DenseTensor>>;
}

enum Op {
    Leaf,
    Elementwise(ElementwiseOp),
    Matmul,
    Permute(Vec<usize>),
    Reshape,
    Conv2d { padding: usize },
    MeanOver(Vec<usize>),
    Sigmoid,
    AvgPool2,
    Sum,
    Scale(f32),
    Custom(Box<dyn CustomOp>),
}

struct Node {
    value: DenseTensor,
    parents: Vec<usize>,
    op: Op,
    grad: Option<DenseTensor>,
}

/// Define-by-run gradient tape. Nodes are appended in evaluation order, so the
/// graph is acyclic by construction and reverse index order is a valid
/// topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: DenseTensor, parents: Vec<usize>, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseTensor) -> Var {
        self.push(value, Vec::new(), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&DenseTensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let value = ops::elementwise(op, self.value(a), self.value(b))?;
        Ok(self.push(value, vec![a.0, b.0], Op::Elementwise(op)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, vec![a.0, b.0], Op::Matmul))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = ops::permute(self.value(a), perm)?;
        Ok(self.push(value, vec![a.0], Op::Permute(perm.to_vec())))
    }

    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 2 {
            return Err(TensorError::InvalidShape(format!(
                "transpose2d: expected rank 2, got {:?}",
                self.value(a).dims()
            )));
        }
        self.permute(a, &[1, 0])
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(dims)?;
        Ok(self.push(value, vec![a.0], Op::Reshape))
    }

    /// Batched convolution, see [`ops::conv2d_batched`].
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: usize) -> Result<Var> {
        let value = ops::conv2d_batched(self.value(input), self.value(kernel), padding)?;
        Ok(self.push(value, vec![input.0, kernel.0], Op::Conv2d { padding }))
    }

    pub fn mean_over(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let value = ops::mean_over(self.value(a), axes)?;
        Ok(self.push(value, vec![a.0], Op::MeanOver(axes.to_vec())))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = ops::sigmoid(self.value(a));
        self.push(value, vec![a.0], Op::Sigmoid)
    }

    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let value = ops::avg_pool2(self.value(a))?;
        Ok(self.push(value, vec![a.0], Op::AvgPool2))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseTensor::scalar(self.value(a).sum());
        self.push(value, vec![a.0], Op::Sum)
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, vec![a.0], Op::Scale(factor))
    }

    /// Records a node whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: DenseTensor, op: Box<dyn CustomOp>) -> Var {
        self.push(value, inputs.iter().map(|v| v.0).collect(), Op::Custom(op))
    }

    /// Reverse sweep from a single-element `root`. Gradients are added to any
    /// already accumulated on the tape; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.dims().to_vec()));
        }
        let mut pending: Vec<Option<DenseTensor>> = vec![None; root.0 + 1];
        pending[root.0] = Some(DenseTensor::full(root_value.dims(), 1.0)?);
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            let parent_grads = self.local_grads(node, &g)?;
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                match &mut pending[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn local_grads(&self, node: &Node, g: &DenseTensor) -> Result<Vec<DenseTensor>> {
        let parent = |k: usize| &self.nodes[node.parents[k]].value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Elementwise(op) => {
                let (a, b) = (parent(0), parent(1));
                let (ga, gb_full) = match op {
                    ElementwiseOp::Add => (g.clone(), g.clone()),
                    ElementwiseOp::Sub => (g.clone(), g.scale(-1.0)),
                    ElementwiseOp::Mul => (ops::mul(g, b)?, ops::mul(g, a)?),
                };
                let gb = if a.dims() == b.dims() {
                    gb_full
                } else {
                    let map = broadcast_index_map(a.dims(), b.dims(), "elementwise")?;
                    let mut acc = vec![0.0f32; b.len()];
                    for (&v, j) in gb_full.data().iter().zip(map) {
                        acc[j] += v;
                    }
                    DenseTensor::new(b.dims(), acc)?
                };
                vec![ga, gb]
            }
            Op::Matmul => {
                let (a, b) = (parent(0), parent(1));
                vec![
                    ops::matmul(g, &ops::transpose2d(b)?)?,
                    ops::matmul(&ops::transpose2d(a)?, g)?,
                ]
            }
            Op::Permute(perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                vec![ops::permute(g, &inverse)?]
            }
            Op::Reshape => vec![g.reshape(parent(0).dims())?],
            Op::Conv2d { padding } => {
                let (gi, gk) = ops::conv2d_backward(parent(0), parent(1), *padding, g)?;
                vec![gi, gk]
            }
            Op::MeanOver(axes) => {
                let input = parent(0);
                let mut keep = input.dims().to_vec();
                let mut count = 1usize;
                for &ax in axes {
                    count *= keep[ax];
                    keep[ax] = 1;
                }
                let map = broadcast_index_map(input.dims(), &keep, "mean_over")?;
                let scale = 1.0 / count as f32;
                let gd = g.data();
                let data = map.into_iter().map(|j| gd[j] * scale).collect();
                vec![DenseTensor::new(input.dims(), data)?]
            }
            Op::Sigmoid => {
                let y = &node.value;
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                vec![DenseTensor::new(y.dims(), data)?]
            }
            Op::AvgPool2 => {
                let input = parent(0);
                let &[n, c, h, w] = input.dims() else { unreachable!() };
                let (oh, ow) = (h / 2, w / 2);
                let mut data = vec![0.0f32; input.len()];
                let gd = g.data();
                for plane in 0..n * c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let v = gd[(plane * oh + y) * ow + x] * 0.25;
                            let i = plane * h * w + 2 * y * w + 2 * x;
                            data[i] = v;
                            data[i + 1] = v;
                            data[i + w] = v;
                            data[i + w + 1] = v;
                        }
                    }
                }
                vec![DenseTensor::new(input.dims(), data)?]
            }
            Op::Sum => {
                let input = parent(0);
                vec![DenseTensor::full(input.dims(), g.data()[0])?]
            }
            Op::Scale(f) => vec![g.scale(*f)],
            Op::Custom(op) => {
                let inputs: Vec<&DenseTensor> = (0..node.parents.len()).map(parent).collect();
                let grads = op.backward(&inputs, &node.value, g)?;
                debug_assert_eq!(grads.len(), inputs.len(), "{}", op.name());
                grads
            }
        })
    }
}
