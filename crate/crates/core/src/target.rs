//! Sequences of unnormalized targets `π_k(x_{1:k})` and read-only views of paths.
//!
//! Paths are indexed from zero: a path of length `k + 1` holds `x_0..=x_k`, and
//! `log_increment` on it returns `log π_{k+1}(x_{1:k+1}) - log π_k(x_{1:k})` in
//! one-based notation. The empty prefix has `π ≡ 1`.

/// Random access to a path `x_0, ..., x_{len-1}`.
pub trait Path<S> {
    fn len(&self) -> usize;

    /// Element at position `t < len()`.
    fn get(&self, t: usize) -> &S;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn last(&self) -> Option<&S> {
        let n = self.len();
        (n > 0).then(|| self.get(n - 1))
    }

    /// Element `lag` positions before the last; `lag = 0` is the last element.
    fn back(&self, lag: usize) -> Option<&S> {
        let n = self.len();
        (lag < n).then(|| self.get(n - 1 - lag))
    }
}

impl<S> Path<S> for [S] {
    fn len(&self) -> usize {
        <[S]>::len(self)
    }

    fn get(&self, t: usize) -> &S {
        &self[t]
    }
}

impl<S> Path<S> for Vec<S> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn get(&self, t: usize) -> &S {
        &self[t]
    }
}

/// The first `len` elements of another path.
pub struct Prefix<'a, S> {
    inner: &'a dyn Path<S>,
    len: usize,
}

impl<'a, S> Prefix<'a, S> {
    pub fn new(inner: &'a dyn Path<S>, len: usize) -> Self {
        assert!(len <= inner.len(), "prefix longer than path");
        Prefix { inner, len }
    }
}

impl<S> Path<S> for Prefix<'_, S> {
    fn len(&self) -> usize {
        self.len
    }

    fn get(&self, t: usize) -> &S {
        assert!(t < self.len, "index {t} outside prefix of length {}", self.len);
        self.inner.get(t)
    }
}

/// A path followed by one extra element.
pub struct Extended<'a, S> {
    prefix: &'a dyn Path<S>,
    last: &'a S,
}

impl<'a, S> Extended<'a, S> {
    pub fn new(prefix: &'a dyn Path<S>, last: &'a S) -> Self {
        Extended { prefix, last }
    }
}

impl<S> Path<S> for Extended<'_, S> {
    fn len(&self) -> usize {
        self.prefix.len() + 1
    }

    fn get(&self, t: usize) -> &S {
        if t == self.prefix.len() {
            self.last
        } else {
            self.prefix.get(t)
        }
    }
}

/// A path of which only the last two elements are stored. Used for Markov
/// targets when the earlier elements cannot influence the increment.
pub struct MarkovPath<'a, S> {
    len: usize,
    prev: Option<&'a S>,
    last: &'a S,
}

impl<'a, S> MarkovPath<'a, S> {
    pub fn new(len: usize, prev: Option<&'a S>, last: &'a S) -> Self {
        assert!(len >= 1);
        assert_eq!(prev.is_some(), len >= 2, "previous element required iff len >= 2");
        MarkovPath { len, prev, last }
    }
}

impl<S> Path<S> for MarkovPath<'_, S> {
    fn len(&self) -> usize {
        self.len
    }

    fn get(&self, t: usize) -> &S {
        if t + 1 == self.len {
            self.last
        } else if t + 2 == self.len {
            self.prev.expect("len >= 2")
        } else {
            panic!("position {t} is outside the stored Markov window")
        }
    }
}

/// A sequence of unnormalized target densities over growing paths.
pub trait SequentialTarget: Sync {
    type State: Clone + Send + Sync;

    /// Number of steps `n`.
    fn horizon(&self) -> usize;

    /// `log π_k(x_{1:k}) - log π_{k-1}(x_{1:k-1})` for the path `x_{1:k}`, `k = path.len()`.
    fn log_increment(&self, path: &dyn Path<Self::State>) -> f64;

    /// `Some(r)` when the increment at step `k` depends only on `x_{k-r..k}`.
    /// Backward simulation uses it to skip increments unaffected by the choice
    /// of particle. `None` means every increment may depend on the full path.
    fn markov_window(&self) -> Option<usize> {
        None
    }

    /// `log π_k(x_{1:k})`, `k = path.len()`.
    fn log_pi(&self, path: &dyn Path<Self::State>) -> f64 {
        (1..=path.len())
            .map(|len| self.log_increment(&Prefix::new(path, len)))
            .sum()
    }
}
