//! Relative representations: re-express an embedding by its cosine
//! similarity to a set of embedded anchor states.
//!
//! Both the query embedding and each anchor embedding are first passed
//! through [`normalize_vector`], which cancels translation; cosine
//! similarity then cancels rotation, reflection and rescaling. Zero vectors
//! (a constant embedding normalizes to zero) score 0 against everything.
//!
//! The batched forward keeps what the backward needs; gradients flow to
//! both the query embeddings and the anchor embeddings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{normalize_backward, normalize_vector};

/// Cosine similarity scores against anchor rows, no normalization layer.
/// This is the raw kernel: invariant to any orthogonal map and to uniform
/// rescaling applied to the query and anchors together.
pub fn cosine_scores(e: &[f64], anchors: ArrayView2<f64>) -> Result<Vec<f64>> {
    if anchors.ncols() != e.len() {
        return Err(Error::shape(format!(
            "embedding has {} dims, anchors have {}",
            e.len(),
            anchors.ncols()
        )));
    }
    let en = norm(e);
    let mut out = Vec::with_capacity(anchors.nrows());
    for row in anchors.rows() {
        let an = norm(row.as_slice().unwrap());
        if en == 0.0 || an == 0.0 {
            out.push(0.0);
            continue;
        }
        let dot: f64 = e.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        out.push(dot / (en * an));
    }
    Ok(out)
}

/// Relative representation of a single embedding: normalize the query and
/// every anchor embedding, then take cosine similarities.
pub fn relative_representation(e: &[f64], anchors: ArrayView2<f64>) -> Result<Vec<f64>> {
    if anchors.ncols() != e.len() {
        return Err(Error::shape(format!(
            "embedding has {} dims, anchors have {}",
            e.len(),
            anchors.ncols()
        )));
    }
    let en = normalize_vector(e);
    let rows: Vec<Vec<f64>> = anchors
        .rows()
        .into_iter()
        .map(|r| normalize_vector(r.as_slice().unwrap()))
        .collect();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let na = Array2::from_shape_vec((anchors.nrows(), anchors.ncols()), flat).unwrap();
    cosine_scores(&en, na.view())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Intermediates of a batched forward pass through the alignment.
#[derive(Debug)]
pub struct RelRepTape {
    e_raw: Array2<f64>,   // B x L query embeddings as given
    a_raw: Array2<f64>,   // k x L anchor embeddings as given
    u_hat: Array2<f64>,   // unit normalized queries (zero rows stay zero)
    w_hat: Array2<f64>,   // unit normalized anchors
    u_len: Array1<f64>,   // length of normalize(e) per row
    w_len: Array1<f64>,
    pub scores: Array2<f64>, // B x k
}

/// Batched relative representation with a tape for the backward pass.
pub fn relrep_forward(e: ArrayView2<f64>, anchors: ArrayView2<f64>) -> Result<RelRepTape> {
    if anchors.ncols() != e.ncols() {
        return Err(Error::shape(format!(
            "queries are {}-dim, anchors {}-dim",
            e.ncols(),
            anchors.ncols()
        )));
    }
    let (u_hat, u_len) = normalize_rows(e);
    let (w_hat, w_len) = normalize_rows(anchors);
    let scores = u_hat.dot(&w_hat.t());
    Ok(RelRepTape {
        e_raw: e.to_owned(),
        a_raw: anchors.to_owned(),
        u_hat,
        w_hat,
        u_len,
        w_len,
        scores,
    })
}

fn normalize_rows(m: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut out = Array2::zeros(m.raw_dim());
    let mut lens = Array1::zeros(m.nrows());
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = normalize_vector(row.as_slice().unwrap());
        let len = norm(&n);
        lens[i] = len;
        if len > 0.0 {
            for (j, v) in n.iter().enumerate() {
                out[(i, j)] = v / len;
            }
        }
    }
    (out, lens)
}

/// Backward pass: gradients of a scalar loss with respect to the raw query
/// embeddings and the raw anchor embeddings, given `d_scores` (B x k).
pub fn relrep_backward(
    tape: &RelRepTape,
    d_scores: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if d_scores.shape() != tape.scores.shape() {
        return Err(Error::shape("score gradient shape mismatch"));
    }
    let b = tape.e_raw.nrows();
    let k = tape.a_raw.nrows();
    let l = tape.e_raw.ncols();

    // d wrt the unit queries / anchors, with the projection term that
    // keeps the gradient tangent to the unit sphere
    let g = d_scores.to_owned();
    let gr = &g * &tape.scores; // elementwise
    let row_corr = gr.sum_axis(Axis(1)); // B
    let col_corr = gr.sum_axis(Axis(0)); // k

    let mut d_e = Array2::zeros((b, l));
    let gw = g.dot(&tape.w_hat); // B x L
    for i in 0..b {
        if tape.u_len[i] == 0.0 {
            continue; // flat by the zero-score convention
        }
        let dn: Vec<f64> = (0..l)
            .map(|j| (gw[(i, j)] - row_corr[i] * tape.u_hat[(i, j)]) / tape.u_len[i])
            .collect();
        let dv = normalize_backward(tape.e_raw.row(i).as_slice().unwrap(), &dn);
        for (j, v) in dv.iter().enumerate() {
            d_e[(i, j)] = *v;
        }
    }

    let mut d_a = Array2::zeros((k, l));
    let gu = g.t().dot(&tape.u_hat); // k x L
    for jdx in 0..k {
        if tape.w_len[jdx] == 0.0 {
            continue;
        }
        let dn: Vec<f64> = (0..l)
            .map(|j| (gu[(jdx, j)] - col_corr[jdx] * tape.w_hat[(jdx, j)]) / tape.w_len[jdx])
            .collect();
        let dv = normalize_backward(tape.a_raw.row(jdx).as_slice().unwrap(), &dn);
        for (j, v) in dv.iter().enumerate() {
            d_a[(jdx, j)] = *v;
        }
    }
    Ok((d_e, d_a))
}

/// Convenience view of one row of scores.
pub fn scores_row(tape: &RelRepTape, i: usize) -> ArrayView1<'_, f64> {
    tape.scores.row(i)
}
