//! Parameter containers generic over their leaf type.
//!
//! A layer such as [`Linear<T>`](super::Linear) is written once; with
//! `T = Tensor` it holds weights, with `T = Var` it holds the same weights
//! bound to a tape, and mapping back through [`Gradients`] yields a
//! `Linear<Tensor>` of gradients with identical structure. Field visiting
//! order is fixed per type, which is what lets optimizers and checkpoints
//! pair tensors up by position.

use crate::tensor::{Gradients, Tape, Tensor, Var};

pub trait ParamTree {
    type Elem;
    type Mapped<U>: ParamTree<Elem = U>;

    fn map<U>(&self, f: &mut dyn FnMut(&Self::Elem) -> U) -> Self::Mapped<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Self::Elem));

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Self::Elem));

    fn named(&self) -> Vec<(String, &Self::Elem)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, e| out.push((name, e)));
        out
    }

    fn elems(&self) -> Vec<&Self::Elem> {
        let mut out = Vec::new();
        self.visit("", &mut |_, e| out.push(e));
        out
    }

    fn elems_mut(&mut self) -> Vec<&mut Self::Elem> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |_, e| out.push(e));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Registers every tensor as a differentiable leaf.
pub fn bind_trainable<P: ParamTree<Elem = Tensor>>(params: &P, tape: &mut Tape) -> P::Mapped<Var> {
    params.map(&mut |t| tape.leaf(t.clone()))
}

/// Registers every tensor as a constant (inference only).
pub fn bind_frozen<P: ParamTree<Elem = Tensor>>(params: &P, tape: &mut Tape) -> P::Mapped<Var> {
    params.map(&mut |t| tape.constant(t.clone()))
}

/// Collects the gradient of every bound leaf, zero-filled where the root
/// did not depend on it.
pub fn collect_grads<P: ParamTree<Elem = Var>>(
    bound: &P,
    tape: &Tape,
    grads: &Gradients,
) -> P::Mapped<Tensor> {
    bound.map(&mut |&v| grads.get_or_zeros(v, tape.shape(v)))
}

/// Total number of scalar parameters.
pub fn parameter_count<P: ParamTree<Elem = Tensor>>(params: &P) -> usize {
    params.elems().iter().map(|t| t.len()).sum()
}

impl<P: ParamTree> ParamTree for Vec<P> {
    type Elem = P::Elem;
    type Mapped<U> = Vec<P::Mapped<U>>;

    fn map<U>(&self, f: &mut dyn FnMut(&Self::Elem) -> U) -> Self::Mapped<U> {
        self.iter().map(|p| p.map(f)).collect()
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Self::Elem)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Self::Elem)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// A lone tensor as a parameter tree (e.g. a class token).
#[derive(Clone, Debug, PartialEq)]
pub struct Single<T>(pub T);

impl<T> ParamTree for Single<T> {
    type Elem = T;
    type Mapped<U> = Single<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Single<U> {
        Single(f(&self.0))
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(prefix.to_string(), &self.0);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        f(prefix.to_string(), &mut self.0);
    }
}
