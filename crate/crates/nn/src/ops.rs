//! Differentiable op catalog. Ops panic on shape mismatch (programmer
//! error); data-dependent failures surface as `NnError` from the callers.
//!
//! Broadcasting for add/sub/mul: identical shapes, or the right operand's
//! shape is a suffix of the left's (a scalar broadcasts everywhere).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

// --- raw matmul helpers for backward rules ---------------------------------

/// out[m,k] += g[m,n] · b[k,n]^T
fn mm_abt_accum(g: &[f64], m: usize, n: usize, b: &[f64], k: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in grow.iter().zip(brow.iter()) {
                acc += gv * bv;
            }
            out[i * k + kk] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T · g[m,n]
fn mm_atb_accum(a: &[f64], m: usize, k: usize, g: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow.iter()) {
                *o += av * gv;
            }
        }
    }
}

/// Matrix product. `a` may be rank 1 (treated as a single row, producing a
/// rank-1 result); `b` must be rank 2.
pub fn matmul(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (m, k) = tape.value(a).as_matrix_dims().expect("matmul lhs");
    let a_rank1 = tape.value(a).rank() == 1;
    let bs = tape.value(b).shape().to_vec();
    assert_eq!(bs.len(), 2, "matmul rhs must be rank 2, got {bs:?}");
    assert_eq!(bs[0], k, "matmul inner dims: lhs k={k}, rhs {bs:?}");
    let n = bs[1];

    let mut out = vec![0.0; m * n];
    tensor::mm_accum(tape.value(a).data(), m, k, tape.value(b).data(), n, &mut out);
    let out_shape = if a_rank1 { vec![n] } else { vec![m, n] };
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (aid, bid) = (a.0, b.0);
    let a_shape = tape.value(a).shape().to_vec();
    let back = needs.then(|| {
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gd = g.data();
            let av = values[aid].data();
            let bv = values[bid].data();
            {
                let da = grads.slot_mut(aid, &a_shape);
                mm_abt_accum(gd, m, n, bv, k, da.data_mut());
            }
            {
                let db = grads.slot_mut(bid, &[k, n]);
                mm_atb_accum(av, m, k, gd, n, db.data_mut());
            }
        }) as _
    });
    tape.push(Tensor::new(out_shape, out), needs, back)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EwOp {
    Add,
    Sub,
    Mul,
}

fn elementwise(tape: &mut Tape, op: EwOp, a: Var, b: Var) -> Var {
    let ashape = tape.value(a).shape().to_vec();
    let bshape = tape.value(b).shape().to_vec();
    let an = tape.value(a).numel();
    let bn = tape.value(b).numel();
    let suffix_ok = bn == 1
        || (bshape.len() <= ashape.len() && ashape[ashape.len() - bshape.len()..] == bshape[..]);
    assert!(
        suffix_ok && an % bn.max(1) == 0,
        "broadcast mismatch: {ashape:?} vs {bshape:?}"
    );

    let av = tape.value(a).data();
    let bv = tape.value(b).data();
    let mut out = Vec::with_capacity(an);
    for i in 0..an {
        let x = av[i];
        let y = bv[i % bn];
        out.push(match op {
            EwOp::Add => x + y,
            EwOp::Sub => x - y,
            EwOp::Mul => x * y,
        });
    }

    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (aid, bid) = (a.0, b.0);
    let (a_needs, b_needs) = (tape.needs_grad(a), tape.needs_grad(b));
    let back = needs.then(|| {
        let ashape = ashape.clone();
        let bshape = bshape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gd = g.data();
            if a_needs {
                let da = grads.slot_mut(aid, &ashape);
                let dd = da.data_mut();
                match op {
                    EwOp::Add | EwOp::Sub => {
                        for i in 0..gd.len() {
                            dd[i] += gd[i];
                        }
                    }
                    EwOp::Mul => {
                        let bv = values[bid].data();
                        for i in 0..gd.len() {
                            dd[i] += gd[i] * bv[i % bn];
                        }
                    }
                }
            }
            if b_needs {
                let db = grads.slot_mut(bid, &bshape);
                let dd = db.data_mut();
                match op {
                    EwOp::Add => {
                        for i in 0..gd.len() {
                            dd[i % bn] += gd[i];
                        }
                    }
                    EwOp::Sub => {
                        for i in 0..gd.len() {
                            dd[i % bn] -= gd[i];
                        }
                    }
                    EwOp::Mul => {
                        let av = values[aid].data();
                        for i in 0..gd.len() {
                            dd[i % bn] += gd[i] * av[i];
                        }
                    }
                }
            }
        }) as _
    });
    let shape = ashape;
    tape.push(Tensor::new(shape, out), needs, back)
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Var {
    elementwise(tape, EwOp::Add, a, b)
}

pub fn sub(tape: &mut Tape, a: Var, b: Var) -> Var {
    elementwise(tape, EwOp::Sub, a, b)
}

pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Var {
    elementwise(tape, EwOp::Mul, a, b)
}

pub fn relu(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    let out: Vec<f64> = v.data().iter().map(|&a| a.max(0.0)).collect();
    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let xv = values[xid].data();
            let dx = grads.slot_mut(xid, &shape);
            for (i, d) in dx.data_mut().iter_mut().enumerate() {
                if xv[i] > 0.0 {
                    *d += g.data()[i];
                }
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

pub fn exp(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    let out: Vec<f64> = v.data().iter().map(|&a| a.exp()).collect();
    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let out_id = tape.len();
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let yv = values[out_id].data();
            let dx = grads.slot_mut(xid, &shape);
            for (i, d) in dx.data_mut().iter_mut().enumerate() {
                *d += g.data()[i] * yv[i];
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    t.as_matrix_dims().expect("softmax-family input must be rank 1 or 2")
}

/// Softmax over the last dimension.
pub fn softmax(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    let (rows, cols) = rows_cols(v);
    let mut out = v.data().to_vec();
    for r in 0..rows {
        tensor::softmax_row(&mut out[r * cols..(r + 1) * cols]);
    }
    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let out_id = tape.len();
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let y = values[out_id].data();
            let gd = g.data();
            let dx = grads.slot_mut(xid, &shape);
            let dd = dx.data_mut();
            for r in 0..rows {
                let o = r * cols;
                let mut dot = 0.0;
                for c in 0..cols {
                    dot += gd[o + c] * y[o + c];
                }
                for c in 0..cols {
                    dd[o + c] += y[o + c] * (gd[o + c] - dot);
                }
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

/// Log-softmax over the last dimension.
pub fn log_softmax(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    let (rows, cols) = rows_cols(v);
    let mut out = v.data().to_vec();
    for r in 0..rows {
        tensor::log_softmax_row(&mut out[r * cols..(r + 1) * cols]);
    }
    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let out_id = tape.len();
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let y = values[out_id].data();
            let gd = g.data();
            let dx = grads.slot_mut(xid, &shape);
            let dd = dx.data_mut();
            for r in 0..rows {
                let o = r * cols;
                let mut gsum = 0.0;
                for c in 0..cols {
                    gsum += gd[o + c];
                }
                for c in 0..cols {
                    dd[o + c] += gd[o + c] - y[o + c].exp() * gsum;
                }
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

/// Layer normalization over the last dimension with affine parameters.
pub fn layer_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
    let v = tape.value(x);
    let (rows, cols) = rows_cols(v);
    assert_eq!(tape.value(gamma).numel(), cols, "layer_norm gamma size");
    assert_eq!(tape.value(beta).numel(), cols, "layer_norm beta size");

    let mut out = vec![0.0; v.numel()];
    let mut stats = Vec::with_capacity(rows);
    {
        let xv = v.data().to_vec();
        let gm = tape.value(gamma).data().to_vec();
        let bt = tape.value(beta).data().to_vec();
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            stats.push(tensor::layer_norm_row(
                row,
                &gm,
                &bt,
                eps,
                &mut out[r * cols..(r + 1) * cols],
            ));
        }
    }

    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
    let (xid, gid, bid) = (x.0, gamma.0, beta.0);
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let xv = values[xid].data();
            let gm = values[gid].data();
            let gd = g.data();
            for r in 0..rows {
                let o = r * cols;
                let (mean, inv) = stats[r];
                // xhat and h = gamma * g for this row
                let mut mean_h = 0.0;
                let mut mean_hx = 0.0;
                for c in 0..cols {
                    let xhat = (xv[o + c] - mean) * inv;
                    let h = gm[c] * gd[o + c];
                    mean_h += h;
                    mean_hx += h * xhat;
                }
                mean_h /= cols as f64;
                mean_hx /= cols as f64;
                {
                    let dg = grads.slot_mut(gid, &[cols]);
                    let dgd = dg.data_mut();
                    for c in 0..cols {
                        let xhat = (xv[o + c] - mean) * inv;
                        dgd[c] += gd[o + c] * xhat;
                    }
                }
                {
                    let db = grads.slot_mut(bid, &[cols]);
                    let dbd = db.data_mut();
                    for c in 0..cols {
                        dbd[c] += gd[o + c];
                    }
                }
                {
                    let dx = grads.slot_mut(xid, &shape);
                    let dxd = dx.data_mut();
                    for c in 0..cols {
                        let xhat = (xv[o + c] - mean) * inv;
                        let h = gm[c] * gd[o + c];
                        dxd[o + c] += inv * (h - mean_h - xhat * mean_hx);
                    }
                }
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

/// Row gather: out[i] = table[ids[i]]. Backward scatter-adds into the table.
pub fn embedding_lookup(tape: &mut Tape, table: Var, ids: &[usize]) -> Var {
    let t = tape.value(table);
    assert_eq!(t.rank(), 2, "embedding table must be rank 2");
    let (n, d) = (t.shape()[0], t.shape()[1]);
    for &id in ids {
        assert!(id < n, "embedding id {id} out of range {n}");
    }
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
    }
    let needs = tape.needs_grad(table);
    let tid = table.0;
    let ids_owned = ids.to_vec();
    let back = needs.then(|| {
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let dt = grads.slot_mut(tid, &[n, d]);
            let dd = dt.data_mut();
            for (i, &id) in ids_owned.iter().enumerate() {
                let grow = &g.data()[i * d..(i + 1) * d];
                let trow = &mut dd[id * d..(id + 1) * d];
                for (o, &gv) in trow.iter_mut().zip(grow.iter()) {
                    *o += gv;
                }
            }
        }) as _
    });
    tape.push(Tensor::new(vec![ids.len(), d], out), needs, back)
}

/// Concatenation of 2-D tensors along rows (axis 0) or columns (axis 1),
/// or of 1-D tensors end to end (axis 0).
pub fn concat(tape: &mut Tape, parts: &[Var], axis: usize) -> Var {
    assert!(!parts.is_empty(), "concat needs at least one part");
    let rank = tape.value(parts[0]).rank();
    assert!(rank == 1 || rank == 2, "concat supports rank 1 or 2");
    assert!(axis < rank.max(1), "axis {axis} out of range for rank {rank}");

    let (out, shape, meta): (Vec<f64>, Vec<usize>, Vec<(usize, usize)>) = if rank == 1 || axis == 0
    {
        let mut out = Vec::new();
        let mut meta = Vec::new();
        let mut cols = None;
        for &p in parts {
            let t = tape.value(p);
            assert_eq!(t.rank(), rank, "concat rank mismatch");
            if rank == 2 {
                let c = t.shape()[1];
                assert_eq!(*cols.get_or_insert(c), c, "concat column mismatch");
            }
            meta.push((out.len(), t.numel()));
            out.extend_from_slice(t.data());
        }
        let shape = if rank == 1 {
            vec![out.len()]
        } else {
            let c = cols.unwrap();
            vec![out.len() / c, c]
        };
        (out, shape, meta)
    } else {
        // axis 1: same row count, columns appended
        let rows = tape.value(parts[0]).shape()[0];
        let mut widths = Vec::new();
        for &p in parts {
            let t = tape.value(p);
            assert_eq!(t.rank(), 2);
            assert_eq!(t.shape()[0], rows, "concat row mismatch");
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0usize;
        let mut meta = Vec::new();
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let t = tape.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            meta.push((offset, w));
            offset += w;
        }
        (out, vec![rows, total], meta)
    };

    let needs = parts.iter().any(|&p| tape.needs_grad(p));
    let infos: Vec<(usize, bool, Vec<usize>)> = parts
        .iter()
        .map(|&p| (p.0, tape.needs_grad(p), tape.value(p).shape().to_vec()))
        .collect();
    let out_shape = shape.clone();
    let back = needs.then(|| {
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gd = g.data();
            if rank == 1 || axis == 0 {
                for ((pid, pneeds, pshape), &(start, len)) in infos.iter().zip(meta.iter()) {
                    if !*pneeds {
                        continue;
                    }
                    let dp = grads.slot_mut(*pid, pshape);
                    for (o, &gv) in dp.data_mut().iter_mut().zip(gd[start..start + len].iter()) {
                        *o += gv;
                    }
                }
            } else {
                let total = out_shape[1];
                let rows = out_shape[0];
                for ((pid, pneeds, pshape), &(offset, w)) in infos.iter().zip(meta.iter()) {
                    if !*pneeds {
                        continue;
                    }
                    let dp = grads.slot_mut(*pid, pshape);
                    let dd = dp.data_mut();
                    for r in 0..rows {
                        for c in 0..w {
                            dd[r * w + c] += gd[r * total + offset + c];
                        }
                    }
                }
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

fn reduce(tape: &mut Tape, x: Var, axis: Option<usize>, mean: bool) -> Var {
    let v = tape.value(x);
    let shape = v.shape().to_vec();
    let numel = v.numel();
    let (out, out_shape, denom): (Vec<f64>, Vec<usize>, f64) = match (axis, shape.len()) {
        (None, _) => {
            let mut s = 0.0;
            for &a in v.data() {
                s += a;
            }
            let d = if mean { numel as f64 } else { 1.0 };
            (vec![s / d], vec![], d)
        }
        (Some(0), 1) => {
            let mut s = 0.0;
            for &a in v.data() {
                s += a;
            }
            let d = if mean { numel as f64 } else { 1.0 };
            (vec![s / d], vec![], d)
        }
        (Some(0), 2) => {
            let (rows, cols) = (shape[0], shape[1]);
            let mut s = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    s[c] += v.data()[r * cols + c];
                }
            }
            let d = if mean { rows as f64 } else { 1.0 };
            for e in s.iter_mut() {
                *e /= d;
            }
            (s, vec![cols], d)
        }
        (Some(1), 2) => {
            let (rows, cols) = (shape[0], shape[1]);
            let mut s = vec![0.0; rows];
            for r in 0..rows {
                for c in 0..cols {
                    s[r] += v.data()[r * cols + c];
                }
            }
            let d = if mean { cols as f64 } else { 1.0 };
            for e in s.iter_mut() {
                *e /= d;
            }
            (s, vec![rows], d)
        }
        (a, r) => panic!("reduce axis {a:?} unsupported for rank {r}"),
    };

    let needs = tape.needs_grad(x);
    let xid = x.0;
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gd = g.data();
            let dx = grads.slot_mut(xid, &shape);
            let dd = dx.data_mut();
            match (axis, shape.len()) {
                (None, _) | (Some(0), 1) => {
                    let gv = gd[0] / denom;
                    for o in dd.iter_mut() {
                        *o += gv;
                    }
                }
                (Some(0), 2) => {
                    let (rows, cols) = (shape[0], shape[1]);
                    for r in 0..rows {
                        for c in 0..cols {
                            dd[r * cols + c] += gd[c] / denom;
                        }
                    }
                }
                (Some(1), 2) => {
                    let (rows, cols) = (shape[0], shape[1]);
                    for r in 0..rows {
                        for c in 0..cols {
                            dd[r * cols + c] += gd[r] / denom;
                        }
                    }
                }
                _ => unreachable!(),
            }
        }) as _
    });
    tape.push(Tensor::new(out_shape, out), needs, back)
}

pub fn sum(tape: &mut Tape, x: Var, axis: Option<usize>) -> Var {
    reduce(tape, x, axis, false)
}

pub fn mean(tape: &mut Tape, x: Var, axis: Option<usize>) -> Var {
    reduce(tape, x, axis, true)
}

/// Inverted dropout: identity in eval mode, deterministic under `seed` in
/// train mode, survivors scaled by 1/(1-p).
pub fn dropout(tape: &mut Tape, x: Var, p: f64, train: bool, seed: u64) -> Var {
    assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1), got {p}");
    if !train || p == 0.0 {
        return x;
    }
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = tape.value(x);
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..v.numel())
        .map(|_| if rng.gen_bool(p) { 0.0 } else { scale })
        .collect();
    let out: Vec<f64> = v.data().iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect();
    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let dx = grads.slot_mut(xid, &shape);
            for (i, o) in dx.data_mut().iter_mut().enumerate() {
                *o += g.data()[i] * mask[i];
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

const NORM_FLOOR: f64 = 1e-12;

/// L2 normalization: rows of a 2-D tensor, or a whole 1-D vector.
pub fn l2_normalize(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    let (rows, cols) = rows_cols(v);
    let mut out = vec![0.0; v.numel()];
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &v.data()[r * cols..(r + 1) * cols];
        let mut sq = 0.0;
        for &a in row {
            sq += a * a;
        }
        let n = sq.sqrt().max(NORM_FLOOR);
        norms.push(n);
        for c in 0..cols {
            out[r * cols + c] = row[c] / n;
        }
    }
    let shape = v.shape().to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let out_id = tape.len();
    let back = needs.then(|| {
        let shape = shape.clone();
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let y = values[out_id].data();
            let gd = g.data();
            let dx = grads.slot_mut(xid, &shape);
            let dd = dx.data_mut();
            for r in 0..rows {
                let o = r * cols;
                let mut dot = 0.0;
                for c in 0..cols {
                    dot += gd[o + c] * y[o + c];
                }
                for c in 0..cols {
                    dd[o + c] += (gd[o + c] - y[o + c] * dot) / norms[r];
                }
            }
        }) as _
    });
    tape.push(Tensor::new(shape, out), needs, back)
}

/// Cosine similarity of two 1-D vectors (scalar output).
pub fn cosine_similarity(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (av, bv) = (tape.value(a), tape.value(b));
    assert_eq!(av.rank(), 1, "cosine_similarity expects vectors");
    assert_eq!(av.shape(), bv.shape(), "cosine_similarity length mismatch");
    let (mut dot, mut na2, mut nb2) = (0.0, 0.0, 0.0);
    for (&x, &y) in av.data().iter().zip(bv.data().iter()) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    let na = na2.sqrt().max(NORM_FLOOR);
    let nb = nb2.sqrt().max(NORM_FLOOR);
    let cos = dot / (na * nb);

    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (aid, bid) = (a.0, b.0);
    let len = av.numel();
    let back = needs.then(|| {
        Box::new(move |values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gv = g.data()[0];
            let av = values[aid].data();
            let bv = values[bid].data();
            {
                let da = grads.slot_mut(aid, &[len]);
                let dd = da.data_mut();
                for i in 0..len {
                    dd[i] += gv * (bv[i] / (na * nb) - cos * av[i] / na2.max(NORM_FLOOR));
                }
            }
            {
                let db = grads.slot_mut(bid, &[len]);
                let dd = db.data_mut();
                for i in 0..len {
                    dd[i] += gv * (av[i] / (na * nb) - cos * bv[i] / nb2.max(NORM_FLOOR));
                }
            }
        }) as _
    });
    tape.push(Tensor::scalar(cos), needs, back)
}

/// Mean cross-entropy of logit rows against integer targets; `-1` targets are
/// ignored. Panics if every target is ignored.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[i64]) -> Var {
    let v = tape.value(logits);
    let (rows, cols) = rows_cols(v);
    assert_eq!(targets.len(), rows, "one target per logit row");
    let counted = targets.iter().filter(|&&t| t >= 0).count();
    assert!(counted > 0, "cross_entropy needs at least one non-ignored target");

    let mut loss = 0.0;
    let mut logp = vec![0.0; v.numel()];
    logp.copy_from_slice(v.data());
    for r in 0..rows {
        tensor::log_softmax_row(&mut logp[r * cols..(r + 1) * cols]);
        if targets[r] >= 0 {
            loss -= logp[r * cols + targets[r] as usize];
        }
    }
    loss /= counted as f64;

    let needs = tape.needs_grad(logits);
    let xid = logits.0;
    let shape = v.shape().to_vec();
    let targets_owned = targets.to_vec();
    let back = needs.then(|| {
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gv = g.data()[0] / counted as f64;
            let dx = grads.slot_mut(xid, &shape);
            let dd = dx.data_mut();
            for r in 0..rows {
                let t = targets_owned[r];
                if t < 0 {
                    continue;
                }
                let row = &mut dd[r * cols..(r + 1) * cols];
                // softmax(row) - onehot, recomputed from saved log-probs
                for (c, o) in row.iter_mut().enumerate() {
                    let p = logp[r * cols + c].exp();
                    let y = if c == t as usize { 1.0 } else { 0.0 };
                    *o += gv * (p - y);
                }
            }
        }) as _
    });
    tape.push(Tensor::scalar(loss), needs, back)
}

/// 2-D transpose.
pub fn transpose(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x);
    assert_eq!(v.rank(), 2, "transpose expects rank 2");
    let (rows, cols) = (v.shape()[0], v.shape()[1]);
    let mut out = vec![0.0; v.numel()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v.data()[r * cols + c];
        }
    }
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let back = needs.then(|| {
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let gd = g.data();
            let dx = grads.slot_mut(xid, &[rows, cols]);
            let dd = dx.data_mut();
            for r in 0..rows {
                for c in 0..cols {
                    dd[r * cols + c] += gd[c * rows + r];
                }
            }
        }) as _
    });
    tape.push(Tensor::new(vec![cols, rows], out), needs, back)
}

/// Contiguous row slice of a 2-D tensor.
pub fn slice_rows(tape: &mut Tape, x: Var, start: usize, len: usize) -> Var {
    let v = tape.value(x);
    assert_eq!(v.rank(), 2, "slice_rows expects rank 2");
    let (rows, cols) = (v.shape()[0], v.shape()[1]);
    assert!(start + len <= rows, "slice {start}+{len} beyond {rows} rows");
    let out = v.data()[start * cols..(start + len) * cols].to_vec();
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let back = needs.then(|| {
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let dx = grads.slot_mut(xid, &[rows, cols]);
            let dd = dx.data_mut();
            for (i, &gv) in g.data().iter().enumerate() {
                dd[start * cols + i] += gv;
            }
        }) as _
    });
    tape.push(Tensor::new(vec![len, cols], out), needs, back)
}

/// Gathers individual (row, col) entries of a 2-D tensor into a vector.
pub fn take_entries(tape: &mut Tape, x: Var, indices: &[(usize, usize)]) -> Var {
    let v = tape.value(x);
    assert_eq!(v.rank(), 2, "take_entries expects rank 2");
    let (rows, cols) = (v.shape()[0], v.shape()[1]);
    let mut out = Vec::with_capacity(indices.len());
    for &(r, c) in indices {
        assert!(r < rows && c < cols, "entry ({r},{c}) out of bounds");
        out.push(v.data()[r * cols + c]);
    }
    let needs = tape.needs_grad(x);
    let xid = x.0;
    let idx = indices.to_vec();
    let back = needs.then(|| {
        Box::new(move |_values: &[Tensor], g: &Tensor, grads: &mut crate::tape::GradStore| {
            let dx = grads.slot_mut(xid, &[rows, cols]);
            let dd = dx.data_mut();
            for (i, &(r, c)) in idx.iter().enumerate() {
                dd[r * cols + c] += g.data()[i];
            }
        }) as _
    });
    tape.push(Tensor::new(vec![indices.len()], out), needs, back)
}
