use std::collections::HashMap;

use super::{Element, Result, Tensor, TensorError};

impl<T: Element> Tensor<T> {
    /// Accumulates `∂self/∂leaf` into every reachable leaf that requires
    /// gradients. Gradients of intermediate results are not retained, so
    /// repeated calls only accumulate on leaves.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        let index: HashMap<usize, usize> = order.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; order.len()];
        grads[order.len() - 1] = Some(vec![T::one()]);

        for i in (0..order.len()).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let t = &order[i];
            let Some(node) = t.node() else {
                t.accumulate_grad(gout);
                continue;
            };
            let contributions = node.op.backward(t, &gout, &node.parents);
            for (parent, g) in node.parents.iter().zip(contributions) {
                let Some(g) = g else { continue };
                let slot = &mut grads[index[&parent.id()]];
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// Post-order over tensors requiring gradients; the root comes last.
fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut seen = std::collections::HashSet::new();
    // (tensor, children pushed?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for p in node.parents.iter().rev() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}
