//! Differentiable operations on [`Tape`].
//!
//! Every op computes its forward value eagerly and registers a backward
//! closure that maps the output gradient to one gradient per parent, in
//! parent order.

use std::rc::Rc;

use ndarray::{concatenate, Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};

use super::{Tape, Var};

fn as2(a: &ArrayD<f64>) -> Array2<f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected a 2-d array").to_owned()
}

fn as3(a: &ArrayD<f64>) -> Array3<f64> {
    a.view().into_dimensionality::<Ix3>().expect("expected a 3-d array").to_owned()
}

fn as1(a: &ArrayD<f64>) -> Array1<f64> {
    a.view().into_dimensionality::<Ix1>().expect("expected a 1-d array").to_owned()
}

impl Tape {
    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.shape(), vb.shape());
        let out = &*va + &*vb;
        self.push(out, vec![a.0, b.0], Box::new(|g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.shape(), vb.shape());
        let out = &*va - &*vb;
        self.push(out, vec![a.0, b.0], Box::new(|g| vec![g.clone(), g.mapv(|x| -x)]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!(va.shape(), vb.shape());
        let out = &*va * &*vb;
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| vec![g * &*vb, g * &*va]),
        )
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).mapv(|x| x + c);
        self.push(out, vec![a.0], Box::new(|g| vec![g.clone()]))
    }

    pub fn mul_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).mapv(|x| x * c);
        self.push(out, vec![a.0], Box::new(move |g| vec![g.mapv(|x| x * c)]))
    }

    /// Elementwise multiply by a 0-d node.
    pub fn scale_by(&self, a: Var, s: Var) -> Var {
        let (va, vs) = (self.value(a), self.value(s));
        debug_assert_eq!(vs.len(), 1);
        let sv = *vs.first().unwrap();
        let out = va.mapv(|x| x * sv);
        self.push(
            out,
            vec![a.0, s.0],
            Box::new(move |g| {
                let da = g.mapv(|x| x * sv);
                let ds = ArrayD::from_elem(IxDyn(&[]), (g * &*va).sum());
                vec![da, ds]
            }),
        )
    }

    /// Extracts element `i` of a 1-d node as a 0-d node.
    pub fn index_1d(&self, a: Var, i: usize) -> Var {
        let va = self.value(a);
        let out = ArrayD::from_elem(IxDyn(&[]), va[[i]]);
        let shape = va.raw_dim();
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = ArrayD::zeros(shape.clone());
                da[[i]] = *g.first().unwrap();
                vec![da]
            }),
        )
    }

    /// Clamps to `[lo, hi]`; gradient passes through inside the bounds.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        let va = self.value(a);
        let out = va.mapv(|x| x.clamp(lo, hi));
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = g.clone();
                da.zip_mut_with(&va, |gv, &x| {
                    if !(lo..=hi).contains(&x) {
                        *gv = 0.0;
                    }
                });
                vec![da]
            }),
        )
    }

    // ---- nonlinearities ----

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let out_rc = Rc::new(out.clone());
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = g.clone();
                da.zip_mut_with(&out_rc, |gv, &y| *gv *= y * (1.0 - y));
                vec![da]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let va = self.value(a);
        let out = va.mapv(|x| {
            let u = C * (x + A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = g.clone();
                da.zip_mut_with(&va, |gv, &x| {
                    let u = C * (x + A * x * x * x);
                    let t = u.tanh();
                    let du = C * (1.0 + 3.0 * A * x * x);
                    *gv *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                });
                vec![da]
            }),
        )
    }

    /// `e^x` up to `knee`, continued linearly (C^1) above it: caps the
    /// gradient of exponential losses at `e^knee` without a dead zone.
    pub fn exp_linear_tail(&self, a: Var, knee: f64) -> Var {
        let va = self.value(a);
        let cap = knee.exp();
        let out = va.mapv(|x| if x <= knee { x.exp() } else { cap * (1.0 + x - knee) });
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = g.clone();
                da.zip_mut_with(&va, |gv, &x| *gv *= if x <= knee { x.exp() } else { cap });
                vec![da]
            }),
        )
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = g.clone();
                da.zip_mut_with(&va, |gv, &x| *gv *= 1.0 / (1.0 + (-x).exp()));
                vec![da]
            }),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let out_rc = Rc::new(out.clone());
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| vec![g * &*out_rc]),
        )
    }

    pub fn ln(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.mapv(f64::ln);
        self.push(out, vec![a.0], Box::new(move |g| vec![g / &*va]))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::sqrt);
        let out_rc = Rc::new(out.clone());
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = g.clone();
                da.zip_mut_with(&out_rc, |gv, &y| *gv *= 0.5 / y);
                vec![da]
            }),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.raw_dim();
        let out = ArrayD::from_elem(IxDyn(&[]), va.sum());
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| vec![ArrayD::from_elem(shape.clone(), *g.first().unwrap())]),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len() as f64;
        let shape = va.raw_dim();
        let out = ArrayD::from_elem(IxDyn(&[]), va.sum() / n);
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                vec![ArrayD::from_elem(shape.clone(), *g.first().unwrap() / n)]
            }),
        )
    }

    /// Elementwise mean over same-shaped nodes.
    pub fn mean_vars(&self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let n = vars.len() as f64;
        let mut acc = (*self.value(vars[0])).clone();
        for v in &vars[1..] {
            acc += &*self.value(*v);
        }
        acc.mapv_inplace(|x| x / n);
        let parents: Vec<usize> = vars.iter().map(|v| v.0).collect();
        let count = vars.len();
        self.push(
            acc,
            parents,
            Box::new(move |g| {
                let share = g.mapv(|x| x / n);
                vec![share; count]
            }),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let va = Rc::new(as2(&self.value(a)));
        let vb = Rc::new(as2(&self.value(b)));
        let out = va.dot(&*vb).into_dyn();
        self.push(
            out,
            vec![a.0, b.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let da = g2.dot(&vb.t()).into_dyn();
                let db = va.t().dot(&g2).into_dyn();
                vec![da, db]
            }),
        )
    }

    pub fn transpose2(&self, a: Var) -> Var {
        let out = as2(&self.value(a)).t().to_owned().into_dyn();
        self.push(
            out,
            vec![a.0],
            Box::new(|g| vec![as2(g).t().to_owned().into_dyn()]),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let orig = va.raw_dim();
        let out = va
            .to_shape(IxDyn(shape))
            .expect("reshape: element count mismatch")
            .to_owned();
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| vec![g.to_shape(orig.clone()).unwrap().to_owned()]),
        )
    }

    /// Adds a 1-d bias row-wise to a 2-d node.
    pub fn add_bias(&self, a: Var, bias: Var) -> Var {
        let va = as2(&self.value(a));
        let vb = as1(&self.value(bias));
        debug_assert_eq!(va.ncols(), vb.len());
        let out = (&va + &vb).into_dyn();
        self.push(
            out,
            vec![a.0, bias.0],
            Box::new(|g| {
                let g2 = as2(g);
                let db = g2.sum_axis(Axis(0)).into_dyn();
                vec![g.clone(), db]
            }),
        )
    }

    /// Row-wise softmax of a 2-d node.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let va = as2(&self.value(a));
        let mut out = va;
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let out_rc = Rc::new(out.clone());
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut da = &g2 * &*out_rc;
                for (mut drow, srow) in da.rows_mut().into_iter().zip(out_rc.rows()) {
                    let dot = drow.sum();
                    drow.zip_mut_with(&srow, |d, &s| *d -= dot * s);
                }
                vec![da.into_dyn()]
            }),
        )
    }

    /// Row-wise layer normalization with scale `gamma` and shift `beta`.
    pub fn layer_norm(&self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let va = as2(&self.value(a));
        let vg = as1(&self.value(gamma));
        let vb = as1(&self.value(beta));
        let d = va.ncols() as f64;
        let mut xhat = va.clone();
        let mut inv_std = Vec::with_capacity(va.nrows());
        for mut row in xhat.rows_mut() {
            let mu = row.sum() / d;
            let var = row.fold(0.0, |acc, &x| acc + (x - mu) * (x - mu)) / d;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            row.mapv_inplace(|x| (x - mu) * is);
        }
        let out = (&xhat * &vg + &vb).into_dyn();
        let xhat = Rc::new(xhat);
        self.push(
            out,
            vec![a.0, gamma.0, beta.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let dbeta = g2.sum_axis(Axis(0)).into_dyn();
                let dgamma = (&g2 * &*xhat).sum_axis(Axis(0)).into_dyn();
                // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                let mut da = &g2 * &vg;
                for ((mut drow, xrow), &is) in
                    da.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std.iter())
                {
                    let m1 = drow.sum() / d;
                    let m2 = drow
                        .iter()
                        .zip(xrow.iter())
                        .fold(0.0, |acc, (&dv, &xv)| acc + dv * xv)
                        / d;
                    drow.zip_mut_with(&xrow, |dv, &xv| *dv = is * (*dv - m1 - xv * m2));
                }
                vec![da.into_dyn(), dgamma, dbeta]
            }),
        )
    }

    // ---- structural ----

    pub fn concat(&self, axis: Axis, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let values: Vec<Rc<ArrayD<f64>>> = vars.iter().map(|v| self.value(*v)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(axis, &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis.0]).collect();
        let parents: Vec<usize> = vars.iter().map(|v| v.0).collect();
        self.push(
            out,
            parents,
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(sizes.len());
                let mut offset = 0;
                for &s in &sizes {
                    let part = g
                        .slice_axis(axis, ndarray::Slice::from(offset..offset + s))
                        .to_owned();
                    grads.push(part);
                    offset += s;
                }
                grads
            }),
        )
    }

    pub fn slice_axis(&self, a: Var, axis: Axis, from: usize, to: usize) -> Var {
        let va = self.value(a);
        let shape = va.raw_dim();
        let out = va.slice_axis(axis, ndarray::Slice::from(from..to)).to_owned();
        self.push(
            out,
            vec![a.0],
            Box::new(move |g| {
                let mut da = ArrayD::zeros(shape.clone());
                da.slice_axis_mut(axis, ndarray::Slice::from(from..to)).assign(g);
                vec![da]
            }),
        )
    }

    // ---- grouped attention primitives ----
    //
    // Rows of the 2-d operands are organized as G consecutive groups of n
    // rows; attention runs independently inside each group.

    /// Per-group score matrices: for each group, `Q_g K_g^T * scale`,
    /// flattened back to `(G*n, n)`.
    pub fn batched_scores(&self, q: Var, k: Var, n: usize, scale: f64) -> Var {
        let vq = Rc::new(as2(&self.value(q)));
        let vk = Rc::new(as2(&self.value(k)));
        let rows = vq.nrows();
        debug_assert_eq!(rows % n, 0);
        debug_assert_eq!(vk.nrows(), rows);
        let groups = rows / n;
        let mut out = Array2::zeros((rows, n));
        for g in 0..groups {
            let qg = vq.slice(ndarray::s![g * n..(g + 1) * n, ..]);
            let kg = vk.slice(ndarray::s![g * n..(g + 1) * n, ..]);
            let mut og = out.slice_mut(ndarray::s![g * n..(g + 1) * n, ..]);
            og.assign(&(qg.dot(&kg.t()) * scale));
        }
        self.push(
            out.into_dyn(),
            vec![q.0, k.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut dq = Array2::zeros(vq.raw_dim());
                let mut dk = Array2::zeros(vk.raw_dim());
                for gi in 0..groups {
                    let r = gi * n..(gi + 1) * n;
                    let gg = g2.slice(ndarray::s![r.clone(), ..]);
                    let qg = vq.slice(ndarray::s![r.clone(), ..]);
                    let kg = vk.slice(ndarray::s![r.clone(), ..]);
                    dq.slice_mut(ndarray::s![r.clone(), ..])
                        .assign(&(gg.dot(&kg) * scale));
                    dk.slice_mut(ndarray::s![r, ..]).assign(&(gg.t().dot(&qg) * scale));
                }
                vec![dq.into_dyn(), dk.into_dyn()]
            }),
        )
    }

    /// Per-group application of attention weights: for each group,
    /// `W_g V_g`, flattened back to `(G*n, d)`.
    pub fn batched_apply(&self, w: Var, v: Var) -> Var {
        let vw = Rc::new(as2(&self.value(w)));
        let vv = Rc::new(as2(&self.value(v)));
        let n = vw.ncols();
        let rows = vw.nrows();
        debug_assert_eq!(rows % n, 0);
        let groups = rows / n;
        let d = vv.ncols();
        let mut out = Array2::zeros((rows, d));
        for g in 0..groups {
            let r = g * n..(g + 1) * n;
            let wg = vw.slice(ndarray::s![r.clone(), ..]);
            let vg = vv.slice(ndarray::s![r.clone(), ..]);
            out.slice_mut(ndarray::s![r, ..]).assign(&wg.dot(&vg));
        }
        self.push(
            out.into_dyn(),
            vec![w.0, v.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut dw = Array2::zeros(vw.raw_dim());
                let mut dv = Array2::zeros(vv.raw_dim());
                for gi in 0..groups {
                    let r = gi * n..(gi + 1) * n;
                    let gg = g2.slice(ndarray::s![r.clone(), ..]);
                    let wg = vw.slice(ndarray::s![r.clone(), ..]);
                    let vg = vv.slice(ndarray::s![r.clone(), ..]);
                    dw.slice_mut(ndarray::s![r.clone(), ..]).assign(&gg.dot(&vg.t()));
                    dv.slice_mut(ndarray::s![r, ..]).assign(&wg.t().dot(&gg));
                }
                vec![dw.into_dyn(), dv.into_dyn()]
            }),
        )
    }

    /// Mean over each consecutive group of `n` rows: `(G*n, d)` -> `(G, d)`.
    pub fn group_mean_rows(&self, a: Var, n: usize) -> Var {
        let va = as2(&self.value(a));
        let rows = va.nrows();
        debug_assert_eq!(rows % n, 0);
        let groups = rows / n;
        let d = va.ncols();
        let mut out = Array2::zeros((groups, d));
        for g in 0..groups {
            for i in 0..n {
                for j in 0..d {
                    out[[g, j]] += va[[g * n + i, j]];
                }
            }
        }
        out.mapv_inplace(|x| x / n as f64);
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut da = Array2::zeros((rows, d));
                for gi in 0..groups {
                    for i in 0..n {
                        for j in 0..d {
                            da[[gi * n + i, j]] = g2[[gi, j]] / n as f64;
                        }
                    }
                }
                vec![da.into_dyn()]
            }),
        )
    }

    // ---- token/grid rearrangements ----
    //
    // Token matrices are `(h*w, C)` with rows in raster order.

    /// Groups each `r x r` block of grid positions into one token whose
    /// channel vector is the concatenation of the block's tokens:
    /// `(h*w, C)` -> `(h*w/r^2, r^2*C)`.
    pub fn space_to_depth_tokens(&self, a: Var, h: usize, w: usize, r: usize) -> Var {
        let va = as2(&self.value(a));
        let c = va.ncols();
        debug_assert_eq!(va.nrows(), h * w);
        debug_assert!(h % r == 0 && w % r == 0, "grid {h}x{w} not divisible by {r}");
        let (oh, ow) = (h / r, w / r);
        let mut out = Array2::zeros((oh * ow, r * r * c));
        for i in 0..oh {
            for j in 0..ow {
                for di in 0..r {
                    for dj in 0..r {
                        let src = (i * r + di) * w + (j * r + dj);
                        let dst_col = (di * r + dj) * c;
                        for ch in 0..c {
                            out[[i * ow + j, dst_col + ch]] = va[[src, ch]];
                        }
                    }
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut da = Array2::zeros((h * w, c));
                for i in 0..oh {
                    for j in 0..ow {
                        for di in 0..r {
                            for dj in 0..r {
                                let src = (i * r + di) * w + (j * r + dj);
                                let dst_col = (di * r + dj) * c;
                                for ch in 0..c {
                                    da[[src, ch]] = g2[[i * ow + j, dst_col + ch]];
                                }
                            }
                        }
                    }
                }
                vec![da.into_dyn()]
            }),
        )
    }

    /// Average-pools each `r x r` block of grid positions:
    /// `(h*w, C)` -> `(h*w/r^2, C)`.
    pub fn avgpool_tokens(&self, a: Var, h: usize, w: usize, r: usize) -> Var {
        if r == 1 {
            return self.mul_scalar(a, 1.0);
        }
        let va = as2(&self.value(a));
        let c = va.ncols();
        debug_assert_eq!(va.nrows(), h * w);
        debug_assert!(h % r == 0 && w % r == 0);
        let (oh, ow) = (h / r, w / r);
        let inv = 1.0 / (r * r) as f64;
        let mut out = Array2::zeros((oh * ow, c));
        for i in 0..oh {
            for j in 0..ow {
                for di in 0..r {
                    for dj in 0..r {
                        let src = (i * r + di) * w + (j * r + dj);
                        for ch in 0..c {
                            out[[i * ow + j, ch]] += va[[src, ch]] * inv;
                        }
                    }
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut da = Array2::zeros((h * w, c));
                for i in 0..oh {
                    for j in 0..ow {
                        for di in 0..r {
                            for dj in 0..r {
                                let src = (i * r + di) * w + (j * r + dj);
                                for ch in 0..c {
                                    da[[src, ch]] = g2[[i * ow + j, ch]] * inv;
                                }
                            }
                        }
                    }
                }
                vec![da.into_dyn()]
            }),
        )
    }

    /// `(h*w, C)` raster tokens -> `(C, h, w)` map.
    pub fn tokens_to_chw(&self, a: Var, h: usize, w: usize) -> Var {
        let va = as2(&self.value(a));
        let c = va.ncols();
        debug_assert_eq!(va.nrows(), h * w);
        let mut out = Array3::zeros((c, h, w));
        for p in 0..h * w {
            for ch in 0..c {
                out[[ch, p / w, p % w]] = va[[p, ch]];
            }
        }
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g3 = as3(g);
                let mut da = Array2::zeros((h * w, c));
                for p in 0..h * w {
                    for ch in 0..c {
                        da[[p, ch]] = g3[[ch, p / w, p % w]];
                    }
                }
                vec![da.into_dyn()]
            }),
        )
    }

    /// `(C, h, w)` map -> `(h*w, C)` raster tokens.
    pub fn chw_to_tokens(&self, a: Var) -> Var {
        let va = as3(&self.value(a));
        let (c, h, w) = va.dim();
        let mut out = Array2::zeros((h * w, c));
        for p in 0..h * w {
            for ch in 0..c {
                out[[p, ch]] = va[[ch, p / w, p % w]];
            }
        }
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g2 = as2(g);
                let mut da = Array3::zeros((c, h, w));
                for p in 0..h * w {
                    for ch in 0..c {
                        da[[ch, p / w, p % w]] = g2[[p, ch]];
                    }
                }
                vec![da.into_dyn()]
            }),
        )
    }

    // ---- spatial ----

    /// Bilinear upsampling of a `(C, h, w)` map to `(C, oh, ow)`,
    /// half-pixel-centered sampling.
    pub fn upsample_bilinear(&self, a: Var, oh: usize, ow: usize) -> Var {
        let va = as3(&self.value(a));
        let (c, h, w) = va.dim();
        if (h, w) == (oh, ow) {
            return self.mul_scalar(a, 1.0);
        }
        // (src index0, src index1, weight for index1) per output coordinate
        let plan_axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
            let scale = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, src - i0 as f64)
                })
                .collect()
        };
        let rows = plan_axis(h, oh);
        let cols = plan_axis(w, ow);
        let mut out = Array3::zeros((c, oh, ow));
        for ch in 0..c {
            for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
                for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                    out[[ch, oi, oj]] = va[[ch, r0, c0]] * (1.0 - fr) * (1.0 - fc)
                        + va[[ch, r0, c1]] * (1.0 - fr) * fc
                        + va[[ch, r1, c0]] * fr * (1.0 - fc)
                        + va[[ch, r1, c1]] * fr * fc;
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![a.0],
            Box::new(move |g| {
                let g3 = as3(g);
                let mut da = Array3::zeros((c, h, w));
                for ch in 0..c {
                    for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
                        for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                            let gv = g3[[ch, oi, oj]];
                            da[[ch, r0, c0]] += gv * (1.0 - fr) * (1.0 - fc);
                            da[[ch, r0, c1]] += gv * (1.0 - fr) * fc;
                            da[[ch, r1, c0]] += gv * fr * (1.0 - fc);
                            da[[ch, r1, c1]] += gv * fr * fc;
                        }
                    }
                }
                vec![da.into_dyn()]
            }),
        )
    }

    /// 2-d convolution, stride 1, symmetric zero padding. `a` is
    /// `(Cin, h, w)`, `weight` is `(Cout, Cin, kh, kw)`, `bias` is `(Cout,)`.
    pub fn conv2d(&self, a: Var, weight: Var, bias: Option<Var>, pad: usize) -> Var {
        let va = Rc::new(as3(&self.value(a)));
        let vw = self.value(weight);
        let wd = vw.shape().to_vec();
        let (cout, cin, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
        let (ci, h, w) = va.dim();
        debug_assert_eq!(ci, cin);
        let oh = h + 2 * pad + 1 - kh;
        let ow = w + 2 * pad + 1 - kw;

        // im2col: (cin*kh*kw, oh*ow)
        let build_cols = |x: &Array3<f64>| -> Array2<f64> {
            let mut cols = Array2::zeros((cin * kh * kw, oh * ow));
            for c in 0..cin {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let row = (c * kh + ki) * kw + kj;
                        for oi in 0..oh {
                            let si = oi + ki;
                            if si < pad || si >= h + pad {
                                continue;
                            }
                            for oj in 0..ow {
                                let sj = oj + kj;
                                if sj < pad || sj >= w + pad {
                                    continue;
                                }
                                cols[[row, oi * ow + oj]] = x[[c, si - pad, sj - pad]];
                            }
                        }
                    }
                }
            }
            cols
        };
        let cols = Rc::new(build_cols(&va));
        let wmat = Rc::new(
            vw.to_shape(IxDyn(&[cout, cin * kh * kw]))
                .unwrap()
                .to_owned()
                .into_dimensionality::<Ix2>()
                .unwrap(),
        );
        let mut out2 = wmat.dot(&*cols).as_standard_layout().to_owned(); // (cout, oh*ow)
        if let Some(b) = bias {
            let vb = as1(&self.value(b));
            for (mut row, &bv) in out2.rows_mut().into_iter().zip(vb.iter()) {
                row.mapv_inplace(|x| x + bv);
            }
        }
        let out = out2.into_shape_with_order((cout, oh, ow)).unwrap().into_dyn();

        let mut parents = vec![a.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        self.push(
            out,
            parents,
            Box::new(move |g| {
                let g3 = as3(g);
                let gmat = g3
                    .to_shape((cout, oh * ow))
                    .unwrap()
                    .to_owned();
                // dW = G cols^T (dot may return an F-order array; normalize)
                let dw_flat = gmat.dot(&cols.t());
                let dw = ArrayD::from_shape_vec(
                    IxDyn(&[cout, cin, kh, kw]),
                    dw_flat.as_standard_layout().to_owned().into_raw_vec_and_offset().0,
                )
                .unwrap();
                // dcols = W^T G, then col2im scatter
                let dcols = wmat.t().dot(&gmat);
                let mut da = Array3::zeros((cin, h, w));
                for c in 0..cin {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let row = (c * kh + ki) * kw + kj;
                            for oi in 0..oh {
                                let si = oi + ki;
                                if si < pad || si >= h + pad {
                                    continue;
                                }
                                for oj in 0..ow {
                                    let sj = oj + kj;
                                    if sj < pad || sj >= w + pad {
                                        continue;
                                    }
                                    da[[c, si - pad, sj - pad]] += dcols[[row, oi * ow + oj]];
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![da.into_dyn(), dw];
                if bias.is_some() {
                    grads.push(gmat.sum_axis(Axis(1)).into_dyn());
                }
                grads
            }),
        )
    }

    // ---- composites ----

    /// `x @ weight + bias`.
    pub fn linear(&self, x: Var, weight: Var, bias: Var) -> Var {
        let y = self.matmul(x, weight);
        self.add_bias(y, bias)
    }

    /// Mean squared difference between two same-shaped nodes.
    pub fn mse(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }
}
