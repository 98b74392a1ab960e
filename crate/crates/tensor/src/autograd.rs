use std::cell::Cell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Node, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operations on this thread currently record backward closures.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with the tape disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn key<T: Scalar>(t: &Tensor<T>) -> *const Node<T> {
    Arc::as_ptr(&t.node)
}

impl<T: Scalar> Tensor<T> {
    /// Reverse-mode pass from a scalar loss.
    ///
    /// Gradients are added to every tracked leaf reachable from `self`.
    /// Calling it twice without [`Tensor::zero_grad`] accumulates.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return contract_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            );
        }
        if !self.requires_grad() {
            return contract_err("backward", "loss is not on the tape");
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<*const Node<T>, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(key(&t), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !visited.contains_key(&key(input)) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        grads.insert(key(self), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&key(t)) else {
                continue;
            };
            match &t.node.grad_fn {
                None => t.accumulate_grad(&g),
                Some(gf) => {
                    let input_grads = (gf.backward)(&g, t.data());
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op);
                    for (input, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{} grad length", gf.op);
                        match grads.get_mut(&key(input)) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(key(input), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
