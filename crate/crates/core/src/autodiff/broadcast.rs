//! Restricted broadcasting: an operand may be repeated along a run of
//! leading dimensions and a run of trailing dimensions, never in between.

use crate::scalar::Scalar;

use super::AutodiffError;

/// How an operand tiles into an output: `outer` repeats of the operand
/// data, each element repeated `inner` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Tiling {
    pub outer: usize,
    pub inner: usize,
}

impl Tiling {
    pub fn is_identity(&self) -> bool {
        self.outer == 1 && self.inner == 1
    }
}

fn aligned(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut out = vec![1; rank - shape.len()];
    out.extend_from_slice(shape);
    out
}

/// Output shape of an elementwise binary op.
pub(crate) fn broadcast_shape(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<Vec<usize>, AutodiffError> {
    if lhs == rhs {
        return Ok(lhs.to_vec());
    }
    let mismatch = || AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    let rank = lhs.len().max(rhs.len());
    let a = aligned(lhs, rank);
    let b = aligned(rhs, rank);
    let mut out = Vec::with_capacity(rank);
    for (&x, &y) in a.iter().zip(&b) {
        match (x, y) {
            _ if x == y => out.push(x),
            (1, _) => out.push(y),
            (_, 1) => out.push(x),
            _ => return Err(mismatch()),
        }
    }
    tiling(lhs, &out).ok_or_else(mismatch)?;
    tiling(rhs, &out).ok_or_else(mismatch)?;
    Ok(out)
}

/// Tiling of `operand` into `out`, or `None` if the operand would need a
/// singleton expanded between two non-broadcast dimensions.
pub(crate) fn tiling(operand: &[usize], out: &[usize]) -> Option<Tiling> {
    if operand.len() > out.len() {
        return None;
    }
    let s = aligned(operand, out.len());
    let mut first_kept = None;
    let mut last_kept = None;
    for (i, (&d, &o)) in s.iter().zip(out).enumerate() {
        if d != 1 && d != o {
            return None;
        }
        if d == o && o > 1 {
            first_kept.get_or_insert(i);
            last_kept = Some(i);
        }
    }
    let (Some(first), Some(last)) = (first_kept, last_kept) else {
        let total = out.iter().product();
        return Some(Tiling {
            outer: total,
            inner: 1,
        });
    };
    if (first..=last).any(|i| s[i] == 1 && out[i] > 1) {
        return None;
    }
    Some(Tiling {
        outer: out[..first].iter().product(),
        inner: out[last + 1..].iter().product(),
    })
}

/// Materializes `data` tiled per `t`.
pub(crate) fn expand<S: Scalar>(data: &[S], t: Tiling) -> Vec<S> {
    if t.is_identity() {
        return data.to_vec();
    }
    let mut out = Vec::with_capacity(t.outer * data.len() * t.inner);
    for _ in 0..t.outer {
        if t.inner == 1 {
            out.extend_from_slice(data);
        } else {
            for &v in data {
                out.extend(std::iter::repeat_n(v, t.inner));
            }
        }
    }
    out
}

/// Elementwise `f(a, b)` over two operands tiled into an output of `len`
/// elements, without materializing the broadcast copies where possible.
pub(crate) fn zip_tiled<S: Scalar>(
    a: &[S],
    ta: Tiling,
    b: &[S],
    tb: Tiling,
    len: usize,
    f: impl Fn(S, S) -> S,
) -> Vec<S> {
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    match (ta.is_identity(), tb.is_identity()) {
        (true, true) => out.extend(a.iter().zip(b).map(|(&x, &y)| f(x, y))),
        (true, false) => zip_one_side(&mut out, a, b, tb, &f),
        (false, true) => zip_one_side(&mut out, b, a, ta, |y, x| f(x, y)),
        (false, false) => {
            let ea = expand(a, ta);
            let eb = expand(b, tb);
            out.extend(ea.into_iter().zip(eb).map(|(x, y)| f(x, y)));
        }
    }
    out
}

/// `full` has the output shape; `small` tiles into it per `t`.
fn zip_one_side<S: Scalar>(
    out: &mut Vec<S>,
    full: &[S],
    small: &[S],
    t: Tiling,
    f: impl Fn(S, S) -> S,
) {
    let block = small.len() * t.inner;
    for chunk in full.chunks(block) {
        if t.inner == 1 {
            out.extend(chunk.iter().zip(small).map(|(&x, &y)| f(x, y)));
        } else {
            for (sub, &y) in chunk.chunks(t.inner).zip(small) {
                out.extend(sub.iter().map(|&x| f(x, y)));
            }
        }
    }
}

/// Sums a gradient of the tiled shape back onto the operand's `mid` elements.
pub(crate) fn reduce<S: Scalar>(grad: &[S], mid: usize, t: Tiling) -> Vec<S> {
    if t.is_identity() {
        return grad.to_vec();
    }
    let mut out = vec![S::zero(); mid];
    if t.inner == 1 {
        for chunk in grad.chunks(mid.max(1)) {
            for (slot, &g) in out.iter_mut().zip(chunk) {
                *slot += g;
            }
        }
        return out;
    }
    let mut idx = 0;
    for _ in 0..t.outer {
        for slot in out.iter_mut() {
            let mut acc = S::zero();
            for &g in &grad[idx..idx + t.inner] {
                acc += g;
            }
            *slot += acc;
            idx += t.inner;
        }
    }
    out
}
