//! Dynamically recorded computation tape and the reverse pass over it.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Element, NodeRef, Parameter, Tensor};
use crate::error::{Error, Result};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>)>;

struct Node<T: Element> {
    size: usize,
    /// `None` marks a leaf.
    backward: Option<BackwardFn<T>>,
}

/// Ordered record of executed differentiable operations.
///
/// A tape lives for one training step: record the forward pass, call
/// [`backward`](Tape::backward), then drop it. A non-recording tape from
/// [`Tape::inference`] lets the same forward code run without bookkeeping.
pub struct Tape<T: Element> {
    id: u64,
    recording: bool,
    nodes: RefCell<Vec<Node<T>>>,
    /// Parameter name -> leaf node, so a parameter used twice accumulates
    /// into a single gradient slot.
    named_leaves: RefCell<HashMap<String, usize>>,
    watched: RefCell<Vec<(String, usize, Vec<usize>)>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
            named_leaves: RefCell::new(HashMap::new()),
            watched: RefCell::new(Vec::new()),
        }
    }

    /// A tape that executes forwards without recording anything.
    pub fn inference() -> Self {
        let mut t = Tape::new();
        t.recording = false;
        t
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Binds a tensor as a differentiable leaf. Tensors not marked
    /// [`requiring_grad`](Tensor::requiring_grad) pass through untouched.
    pub fn leaf(&self, t: &Tensor<T>) -> Tensor<T> {
        if !self.recording || !t.requires_grad() {
            return t.detached();
        }
        let index = self.push_node(Node {
            size: t.numel(),
            backward: None,
        });
        let mut out = t.detached();
        out.node = Some(NodeRef {
            tape: self.id,
            index,
        });
        out
    }

    /// Binds a parameter's value as a named, watched leaf. Repeated binding
    /// of the same name returns the same node.
    pub fn parameter(&self, p: &Parameter<T>) -> Tensor<T> {
        if !self.recording {
            return p.value().detached();
        }
        let index = match self.named_leaves.borrow_mut().entry(p.name().to_string()) {
            std::collections::hash_map::Entry::Occupied(e) => *e.get(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let index = {
                    let mut nodes = self.nodes.borrow_mut();
                    nodes.push(Node {
                        size: p.numel(),
                        backward: None,
                    });
                    nodes.len() - 1
                };
                self.watched.borrow_mut().push((
                    p.name().to_string(),
                    index,
                    p.shape().to_vec(),
                ));
                e.insert(index);
                index
            }
        };
        let mut out = p.value().detached();
        out.node = Some(NodeRef {
            tape: self.id,
            index,
        });
        out
    }

    fn push_node(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Node index of `t` on this tape, if any. Tensors from other tapes are
    /// treated as constants.
    pub(crate) fn node_of(&self, t: &Tensor<T>) -> Option<usize> {
        t.node
            .filter(|n| n.tape == self.id)
            .map(|n| n.index)
    }

    /// Records an op output. `backward` receives the output gradient and
    /// accumulates into the parents' slots via the sink.
    pub(crate) fn record(
        &self,
        shape: Vec<usize>,
        data: Vec<T>,
        backward: BackwardFn<T>,
    ) -> Tensor<T> {
        let size = data.len();
        let index = self.push_node(Node {
            size,
            backward: Some(backward),
        });
        let mut out = Tensor::raw(shape, data);
        out.requires_grad = true;
        out.node = Some(NodeRef {
            tape: self.id,
            index,
        });
        out
    }

    /// Runs the reverse pass from a scalar loss. Each tape node is visited
    /// exactly once, in reverse recording order.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        let loss_node = self.node_of(loss).ok_or_else(|| {
            Error::shape("backward: loss was not produced on this tape".to_string())
        })?;
        if loss.numel() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let sizes: Vec<usize> = nodes.iter().map(|n| n.size).collect();
        let mut sink = GradSink {
            slots: vec![None; nodes.len()],
            sizes,
        };
        sink.slot(loss_node)[0] = T::one();

        for index in (0..=loss_node).rev() {
            let node = &nodes[index];
            match &node.backward {
                Some(back) => {
                    // Interior node: consume its gradient and propagate.
                    if let Some(grad) = sink.slots[index].take() {
                        back(&grad, &mut sink);
                    }
                }
                None => {
                    // Leaf: keep the slot for the caller.
                }
            }
        }

        let by_name: HashMap<String, (usize, Vec<usize>)> = self
            .watched
            .borrow()
            .iter()
            .map(|(name, idx, shape)| (name.clone(), (*idx, shape.clone())))
            .collect();
        Ok(Gradients {
            tape: self.id,
            slots: sink.slots,
            by_name,
        })
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradient accumulation buffers for the reverse pass, indexed by tape node.
pub struct GradSink<T: Element> {
    slots: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
}

impl<T: Element> GradSink<T> {
    /// Accumulation slot for a node, zero-initialized on first touch.
    pub fn slot(&mut self, node: usize) -> &mut [T] {
        self.slots[node].get_or_insert_with(|| vec![T::zero(); self.sizes[node]])
    }
}

/// Result of a reverse pass: per-leaf gradients.
pub struct Gradients<T: Element> {
    tape: u64,
    slots: Vec<Option<Vec<T>>>,
    by_name: HashMap<String, (usize, Vec<usize>)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to a leaf tensor bound on the originating tape.
    /// Leaves the loss never reached get a zero gradient.
    pub fn wrt(&self, leaf: &Tensor<T>) -> Option<Tensor<T>> {
        let node = leaf.node.filter(|n| n.tape == self.tape)?;
        Some(match &self.slots[node.index] {
            Some(g) => Tensor::raw(leaf.shape().to_vec(), g.clone()),
            None => Tensor::zeros(leaf.shape()),
        })
    }

    /// Gradient of a watched parameter by name; zeros when the parameter did
    /// not contribute to the loss.
    pub fn by_name(&self, name: &str) -> Option<Tensor<T>> {
        let (index, shape) = self.by_name.get(name)?;
        Some(match &self.slots[*index] {
            Some(g) => Tensor::raw(shape.clone(), g.clone()),
            None => {
                let numel = shape.iter().product();
                Tensor::raw(shape.clone(), vec![T::zero(); numel])
            }
        })
    }

    /// All watched parameter gradients as a name -> tensor map.
    pub fn into_map(self) -> HashMap<String, Tensor<T>> {
        let mut out = HashMap::with_capacity(self.by_name.len());
        for (name, (index, shape)) in &self.by_name {
            let t = match &self.slots[*index] {
                Some(g) => Tensor::raw(shape.clone(), g.clone()),
                None => {
                    let numel = shape.iter().product();
                    Tensor::raw(shape.clone(), vec![T::zero(); numel])
                }
            };
            out.insert(name.clone(), t);
        }
        out
    }
}
