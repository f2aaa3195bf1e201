//! Dense matrices, a parameter store and a reverse-mode tape.

mod matrix;
mod params;
mod tape;

pub use matrix::Matrix;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

pub(crate) use tape::softmax_in_place;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{compare_gradients, finite_diff_grad, rng_from_seed, standard_normals};

    fn random(rows: usize, cols: usize, seed: u64, offset: f64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_vec(
            rows,
            cols,
            standard_normals(&mut rng, rows * cols)
                .into_iter()
                .map(|x| x + offset)
                .collect(),
        )
    }

    /// Checks every op's backward rule against central differences by
    /// wiring all of them into one scalar function.
    #[test]
    fn all_ops_match_finite_differences() {
        let mut store = ParamStore::new();
        let a = store.add("a", random(5, 4, 1, 0.0));
        let b = store.add("b", random(4, 3, 2, 0.0));
        let c = store.add("c", random(1, 3, 3, 0.0));
        let p = store.add("p", random(5, 3, 4, 0.0).map(|x| x.abs() + 1.5));
        let seg_idx = vec![0, 1, 1, 2, 2, 2, 0];
        let gather = vec![4, 0, 0, 2, 3, 1, 4];

        let build = |store: &ParamStore| {
            let mut t = Tape::with_params(store);
            let (a, b, c, p) = (t.param(a), t.param(b), t.param(c), t.param(p));
            let ab = t.matmul(a, b);
            let abc = t.add(ab, c);
            let lr = t.leaky_relu(abc, 0.01);
            let sp = t.softplus(lr);
            let nt = t.matmul_nt(sp, b);
            let sm = t.softmax_rows(nt);
            let dg = t.digamma(p);
            let lg = t.ln_gamma(p);
            let q = t.div(dg, p);
            let r = t.mul(lg, c);
            let s = t.sub(q, r);
            let sq = t.square(s);
            let rs = t.sum_rows(sq);
            let rt = t.sqrt(rs);
            let ex = t.exp(sm);
            let ln = t.ln(p);
            let rc = t.recip(ln);
            let cat = t.concat_cols(&[ex, rc]);
            let sl = t.slice_cols(cat, 2, 4);
            let cl = t.clamp(sl, -10.0, 1.2);
            let ab2 = t.abs(cl);
            let g = t.gather_rows(ab2, gather.clone());
            let sc = t.scatter_add_rows(g, seg_idx.clone(), 3);
            let col = t.slice_cols(g, 1, 1);
            let ss = t.segment_softmax(col, seg_idx.clone(), 3);
            let ss2 = t.mul(ss, g);
            let cs = t.sum_cols(ss2);
            let m1 = t.mean_all(sc);
            let m2 = t.mean_cols(cs);
            let m3 = t.sum_all(rt);
            let tot = t.add(m1, m2);
            let tot = t.scale(tot, 1.7);
            let tot = t.add(tot, m3);
            let tot = t.add_scalar(tot, 0.3);
            let tot = t.mean_all(tot);
            (t, tot)
        };

        let (tape, out) = build(&store);
        let analytic: Vec<f64> = tape
            .backward(out)
            .into_param_grads(&store)
            .into_iter()
            .flat_map(Matrix::into_data)
            .collect();
        let theta = store.flatten();
        let numeric = finite_diff_grad(
            |th| {
                let mut s = store.clone();
                s.assign_flat(th);
                let (t, o) = build(&s);
                t.scalar(o)
            },
            &theta,
            1e-6,
        )
        .unwrap();
        let check = compare_gradients(&analytic, &numeric, 1e-4, 1e-6);
        assert_eq!(check.passing, check.coordinates, "max rel {}", check.max_rel_error);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let v = t.variable(Matrix::scalar(3.0));
        let m = t.mul(c, v);
        let g = t.backward(m);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(v).unwrap().data(), &[2.0]);
    }

    #[test]
    fn broadcasting_shapes() {
        let mut t = Tape::new();
        let full = t.variable(Matrix::filled(3, 2, 1.0));
        let col = t.variable(Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]));
        let row = t.variable(Matrix::row_vector(&[10.0, 20.0]));
        let x = t.mul(full, col);
        let y = t.add(x, row);
        assert_eq!(t.value(y).row(2), &[13.0, 23.0]);
        let s = t.sum_all(y);
        let g = t.backward(s);
        assert_eq!(g.get(col).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(row).unwrap().data(), &[3.0, 3.0]);
    }
}
