//! Batched forward pass and backpropagation through time.
//!
//! Activations are stored time-major: for a batch of `B` sequences of `T`
//! frames, row `t * B + b` holds frame `t` of sequence `b`. Shifting by one
//! time step is then a contiguous shift by `B` rows, so both the convolution
//! taps and the recurrent weight gradient reduce to single GEMMs.

use super::config::BranchConfig;
use super::params::{ConvParams, LstmParams, ModelParams};
use crate::linalg::{add_column_sums, gemm, Mat, MatMut};

pub(crate) struct Batch {
    pub frames: usize,
    pub size: usize,
    /// One time-major `(frames * size) x dims` matrix per branch.
    pub branches: Vec<Vec<f64>>,
}

impl Batch {
    /// Interleaves `sequences[b][branch]` (each `frames x dims`, row-major)
    /// into time-major branch matrices.
    pub fn interleave(sequences: &[Vec<&[f64]>], dims: &[usize], frames: usize) -> Self {
        let size = sequences.len();
        let branches = dims
            .iter()
            .enumerate()
            .map(|(branch, &d)| {
                let mut out = vec![0.0; frames * size * d];
                for (b, seq) in sequences.iter().enumerate() {
                    let src = seq[branch];
                    for t in 0..frames {
                        let dst = (t * size + b) * d;
                        out[dst..dst + d].copy_from_slice(&src[t * d..(t + 1) * d]);
                    }
                }
                out
            })
            .collect();
        Self {
            frames,
            size,
            branches,
        }
    }

    fn rows(&self) -> usize {
        self.frames * self.size
    }
}

pub(crate) struct LayerCache {
    /// Post-activation gates `[i, f, g, o]`, `rows x 4H`.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
}

pub(crate) struct Cache {
    /// Concatenated branch convolution outputs after `tanh`.
    conv: Vec<f64>,
    layers: Vec<LayerCache>,
    /// Embedding activations after ReLU.
    pub embed: Vec<f64>,
    /// Per-row model output after the final `tanh`.
    pub output: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Output rows `[t_lo, t_hi)` read input rows shifted by `tap - pad` frames;
/// everything else falls in the zero padding.
fn tap_range(tap: usize, pad: usize, frames: usize) -> Option<(usize, usize)> {
    let lo = pad.saturating_sub(tap);
    let hi = (frames + pad).saturating_sub(tap).min(frames);
    (lo < hi).then_some((lo, hi))
}

pub(crate) fn forward(p: &ModelParams, batch: &Batch) -> Cache {
    let cfg = p.config();
    let rows = batch.rows();
    let width = cfg.lstm_input_dims();
    let h = cfg.lstm_units;
    let e = cfg.embed_units;

    let mut conv = vec![0.0; rows * width];
    let mut col = 0;
    for ((branch, cp), x) in cfg.branches.iter().zip(&p.conv).zip(&batch.branches) {
        conv_forward(branch, cp, x, batch, &mut conv, width, col);
        col += branch.conv_filters;
    }

    let mut layers: Vec<LayerCache> = Vec::with_capacity(p.lstm.len());
    for (l, lp) in p.lstm.iter().enumerate() {
        let cache = {
            let (input, in_dims) = if l == 0 {
                (&conv, width)
            } else {
                (&layers[l - 1].hidden, h)
            };
            lstm_forward(lp, input, in_dims, h, batch)
        };
        layers.push(cache);
    }
    let top = &layers.last().expect("at least one LSTM layer").hidden;

    let mut embed = vec![0.0; rows * e];
    for row in embed.chunks_exact_mut(e) {
        row.copy_from_slice(p.embed_b.data());
    }
    gemm(
        1.0,
        Mat::new(top, rows, h),
        Mat::new(p.embed_w.data(), h, e),
        1.0,
        MatMut::new(&mut embed, rows, e),
    );
    embed.iter_mut().for_each(|v| *v = v.max(0.0));

    let mut output = vec![p.head_b.data()[0]; rows];
    gemm(
        1.0,
        Mat::new(&embed, rows, e),
        Mat::new(p.head_w.data(), e, 1),
        1.0,
        MatMut::new(&mut output, rows, 1),
    );
    output.iter_mut().for_each(|v| *v = v.tanh());

    Cache {
        conv,
        layers,
        embed,
        output,
    }
}

fn conv_forward(
    branch: &BranchConfig,
    cp: &ConvParams,
    x: &[f64],
    batch: &Batch,
    out: &mut [f64],
    out_cols: usize,
    col: usize,
) {
    let (d, f, w) = (branch.input_dims, branch.conv_filters, branch.conv_width);
    let pad = (w - 1) / 2;
    let bsz = batch.size;
    for row in out.chunks_exact_mut(out_cols) {
        row[col..col + f].copy_from_slice(cp.bias.data());
    }
    for tap in 0..w {
        let Some((lo, hi)) = tap_range(tap, pad, batch.frames) else {
            continue;
        };
        let n = (hi - lo) * bsz;
        let src = (lo + tap - pad) * bsz * d;
        gemm(
            1.0,
            Mat::new(&x[src..], n, d),
            Mat::new(&cp.kernel.data()[tap * d * f..], d, f),
            1.0,
            MatMut::strided(&mut out[lo * bsz * out_cols + col..], n, f, out_cols),
        );
    }
    for row in out.chunks_exact_mut(out_cols) {
        row[col..col + f].iter_mut().for_each(|v| *v = v.tanh());
    }
}

fn lstm_forward(lp: &LstmParams, input: &[f64], in_dims: usize, h: usize, batch: &Batch) -> LayerCache {
    let (frames, bsz) = (batch.frames, batch.size);
    let rows = frames * bsz;
    let g4 = 4 * h;
    let mut gates = vec![0.0; rows * g4];
    for row in gates.chunks_exact_mut(g4) {
        row.copy_from_slice(lp.bias.data());
    }
    gemm(
        1.0,
        Mat::new(input, rows, in_dims),
        Mat::new(lp.w_input.data(), in_dims, g4),
        1.0,
        MatMut::new(&mut gates, rows, g4),
    );

    let mut cells = vec![0.0; rows * h];
    let mut tanh_cells = vec![0.0; rows * h];
    let mut hidden = vec![0.0; rows * h];
    for t in 0..frames {
        let blk = t * bsz;
        if t > 0 {
            gemm(
                1.0,
                Mat::new(&hidden[(blk - bsz) * h..], bsz, h),
                Mat::new(lp.w_recurrent.data(), h, g4),
                1.0,
                MatMut::new(&mut gates[blk * g4..(blk + bsz) * g4], bsz, g4),
            );
        }
        for r in blk..blk + bsz {
            let g = &mut gates[r * g4..(r + 1) * g4];
            for j in 0..h {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[h + j]);
                let c_in = g[2 * h + j].tanh();
                let o = sigmoid(g[3 * h + j]);
                g[j] = i;
                g[h + j] = f;
                g[2 * h + j] = c_in;
                g[3 * h + j] = o;
                let c_prev = if t > 0 { cells[(r - bsz) * h + j] } else { 0.0 };
                let c = f * c_prev + i * c_in;
                let tc = c.tanh();
                cells[r * h + j] = c;
                tanh_cells[r * h + j] = tc;
                hidden[r * h + j] = o * tc;
            }
        }
    }
    LayerCache {
        gates,
        cells,
        tanh_cells,
        hidden,
    }
}

/// Accumulates parameter gradients for `d_out = dLoss/d output` into `grads`.
pub(crate) fn backward(
    p: &ModelParams,
    batch: &Batch,
    cache: &Cache,
    d_out: &[f64],
    grads: &mut ModelParams,
) {
    let cfg = p.config();
    let rows = batch.rows();
    let h = cfg.lstm_units;
    let e = cfg.embed_units;
    let width = cfg.lstm_input_dims();

    let d_head: Vec<f64> = d_out
        .iter()
        .zip(&cache.output)
        .map(|(d, y)| d * (1.0 - y * y))
        .collect();
    gemm(
        1.0,
        Mat::new(&cache.embed, rows, e).t(),
        Mat::new(&d_head, rows, 1),
        1.0,
        MatMut::new(grads.head_w.data_mut(), e, 1),
    );
    grads.head_b.data_mut()[0] += d_head.iter().sum::<f64>();

    let head_w = p.head_w.data();
    let mut d_embed = vec![0.0; rows * e];
    for ((drow, arow), &dh) in d_embed
        .chunks_exact_mut(e)
        .zip(cache.embed.chunks_exact(e))
        .zip(&d_head)
    {
        for ((d, &a), &w) in drow.iter_mut().zip(arow).zip(head_w) {
            *d = if a > 0.0 { dh * w } else { 0.0 };
        }
    }
    let top = &cache.layers.last().expect("at least one LSTM layer").hidden;
    gemm(
        1.0,
        Mat::new(top, rows, h).t(),
        Mat::new(&d_embed, rows, e),
        1.0,
        MatMut::new(grads.embed_w.data_mut(), h, e),
    );
    add_column_sums(&d_embed, e, grads.embed_b.data_mut());

    let mut d_hidden = vec![0.0; rows * h];
    gemm(
        1.0,
        Mat::new(&d_embed, rows, e),
        Mat::new(p.embed_w.data(), h, e).t(),
        0.0,
        MatMut::new(&mut d_hidden, rows, h),
    );

    for l in (0..p.lstm.len()).rev() {
        let (input, in_dims) = if l == 0 {
            (&cache.conv, width)
        } else {
            (&cache.layers[l - 1].hidden, h)
        };
        d_hidden = lstm_backward(
            &p.lstm[l],
            &mut grads.lstm[l],
            &cache.layers[l],
            input,
            in_dims,
            &d_hidden,
            h,
            batch,
        );
    }

    let d_conv = d_hidden;
    let mut col = 0;
    for (b, branch) in cfg.branches.iter().enumerate() {
        conv_backward(
            branch,
            &mut grads.conv[b],
            &batch.branches[b],
            &cache.conv,
            &d_conv,
            batch,
            width,
            col,
        );
        col += branch.conv_filters;
    }
}

/// Returns the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    lp: &LstmParams,
    gp: &mut LstmParams,
    lc: &LayerCache,
    input: &[f64],
    in_dims: usize,
    d_hidden: &[f64],
    h: usize,
    batch: &Batch,
) -> Vec<f64> {
    let (frames, bsz) = (batch.frames, batch.size);
    let rows = frames * bsz;
    let g4 = 4 * h;
    let mut d_gates = vec![0.0; rows * g4];
    let mut dh_next = vec![0.0; bsz * h];
    let mut dc_next = vec![0.0; bsz * h];

    for t in (0..frames).rev() {
        let blk = t * bsz;
        for b in 0..bsz {
            let r = blk + b;
            let g = &lc.gates[r * g4..(r + 1) * g4];
            let dg = &mut d_gates[r * g4..(r + 1) * g4];
            for j in 0..h {
                let (i, f, c_in, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = lc.tanh_cells[r * h + j];
                let c_prev = if t > 0 { lc.cells[(r - bsz) * h + j] } else { 0.0 };
                let dh = d_hidden[r * h + j] + dh_next[b * h + j];
                let dc = dc_next[b * h + j] + dh * o * (1.0 - tc * tc);
                dc_next[b * h + j] = dc * f;
                dg[j] = dc * c_in * i * (1.0 - i);
                dg[h + j] = dc * c_prev * f * (1.0 - f);
                dg[2 * h + j] = dc * i * (1.0 - c_in * c_in);
                dg[3 * h + j] = dh * tc * o * (1.0 - o);
            }
        }
        if t > 0 {
            gemm(
                1.0,
                Mat::new(&d_gates[blk * g4..], bsz, g4),
                Mat::new(lp.w_recurrent.data(), h, g4).t(),
                0.0,
                MatMut::new(&mut dh_next, bsz, h),
            );
        }
    }

    if frames > 1 {
        let n = (frames - 1) * bsz;
        gemm(
            1.0,
            Mat::new(&lc.hidden, n, h).t(),
            Mat::new(&d_gates[bsz * g4..], n, g4),
            1.0,
            MatMut::new(gp.w_recurrent.data_mut(), h, g4),
        );
    }
    gemm(
        1.0,
        Mat::new(input, rows, in_dims).t(),
        Mat::new(&d_gates, rows, g4),
        1.0,
        MatMut::new(gp.w_input.data_mut(), in_dims, g4),
    );
    add_column_sums(&d_gates, g4, gp.bias.data_mut());

    let mut d_input = vec![0.0; rows * in_dims];
    gemm(
        1.0,
        Mat::new(&d_gates, rows, g4),
        Mat::new(lp.w_input.data(), in_dims, g4).t(),
        0.0,
        MatMut::new(&mut d_input, rows, in_dims),
    );
    d_input
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    branch: &BranchConfig,
    gp: &mut ConvParams,
    x: &[f64],
    activations: &[f64],
    d_out: &[f64],
    batch: &Batch,
    out_cols: usize,
    col: usize,
) {
    let (d, f, w) = (branch.input_dims, branch.conv_filters, branch.conv_width);
    let pad = (w - 1) / 2;
    let bsz = batch.size;
    let rows = batch.rows();
    let mut dz = vec![0.0; rows * f];
    for r in 0..rows {
        let a = &activations[r * out_cols + col..r * out_cols + col + f];
        let g = &d_out[r * out_cols + col..r * out_cols + col + f];
        for ((z, &a), &g) in dz[r * f..(r + 1) * f].iter_mut().zip(a).zip(g) {
            *z = g * (1.0 - a * a);
        }
    }
    add_column_sums(&dz, f, gp.bias.data_mut());
    for tap in 0..w {
        let Some((lo, hi)) = tap_range(tap, pad, batch.frames) else {
            continue;
        };
        let n = (hi - lo) * bsz;
        let src = (lo + tap - pad) * bsz * d;
        gemm(
            1.0,
            Mat::new(&x[src..], n, d).t(),
            Mat::new(&dz[lo * bsz * f..], n, f),
            1.0,
            MatMut::new(&mut gp.kernel.data_mut()[tap * d * f..(tap + 1) * d * f], d, f),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_ranges_for_width_five() {
        // pad = 2: tap 0 reads t - 2, tap 4 reads t + 2.
        assert_eq!(tap_range(0, 2, 10), Some((2, 10)));
        assert_eq!(tap_range(2, 2, 10), Some((0, 10)));
        assert_eq!(tap_range(4, 2, 10), Some((0, 8)));
        assert_eq!(tap_range(4, 2, 1), None);
        assert_eq!(tap_range(2, 2, 1), Some((0, 1)));
    }
}
