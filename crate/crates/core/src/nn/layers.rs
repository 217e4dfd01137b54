//! Building blocks assembled from graph primitives.

use super::graph::{Graph, Var};

/// `x · w + b` for `x: T × in`, `w: in × out`, `b: 1 × out`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

/// Output length of a 1-D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    if len + 2 * pad < kernel {
        0
    } else {
        (len + 2 * pad - kernel) / stride + 1
    }
}

/// Row indices of an unfolded 1-D convolution input (`None` = zero pad).
pub fn unfold_index(len: usize, kernel: usize, stride: usize, pad: usize) -> Vec<Option<usize>> {
    let out = conv_out_len(len, kernel, stride, pad);
    let mut index = Vec::with_capacity(out * kernel);
    for o in 0..out {
        for k in 0..kernel {
            let pos = (o * stride + k) as isize - pad as isize;
            index.push((pos >= 0 && (pos as usize) < len).then_some(pos as usize));
        }
    }
    index
}

/// 1-D convolution over time. `x` is `T × C_in`, `w` is `(kernel·C_in) × C_out`
/// with taps ordered oldest first, `b` is `1 × C_out`.
pub fn conv1d(g: &mut Graph, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Var {
    let (len, _) = g.shape(x);
    let cols = g.gather(x, kernel, unfold_index(len, kernel, stride, pad));
    linear(g, cols, w, b)
}

/// Spatial geometry of a 2-D feature map stored as `(H·W) × C`, row-major over
/// positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Map2d {
    pub height: usize,
    pub width: usize,
}

/// 2-D convolution with square kernel and symmetric zero padding.
/// `w` is `(kernel²·C_in) × C_out`.
pub fn conv2d(
    g: &mut Graph,
    x: Var,
    map: Map2d,
    w: Var,
    b: Var,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Var, Map2d) {
    let oh = conv_out_len(map.height, kernel, stride, pad);
    let ow = conv_out_len(map.width, kernel, stride, pad);
    let mut index = Vec::with_capacity(oh * ow * kernel * kernel);
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    let xx = (ox * stride + kx) as isize - pad as isize;
                    let inside = y >= 0 && xx >= 0 && (y as usize) < map.height && (xx as usize) < map.width;
                    index.push(inside.then(|| y as usize * map.width + xx as usize));
                }
            }
        }
    }
    let cols = g.gather(x, kernel * kernel, index);
    (linear(g, cols, w, b), Map2d { height: oh, width: ow })
}

/// Reverses the time axis of a time-major `(T·B) × D` sequence.
pub fn reverse_time(g: &mut Graph, x: Var, batch: usize) -> Var {
    let (rows, _) = g.shape(x);
    let steps = rows / batch;
    let index = (0..steps)
        .rev()
        .flat_map(|t| (0..batch).map(move |b| Some(t * batch + b)))
        .collect();
    g.gather(x, 1, index)
}

/// Repeats row `i` of `x` `counts[i]` times.
pub fn repeat_rows(g: &mut Graph, x: Var, counts: &[usize]) -> Var {
    let index = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat(Some(i)).take(n))
        .collect();
    g.gather(x, 1, index)
}

/// Broadcasts a `1 × D` row to `T × D`.
pub fn broadcast_row(g: &mut Graph, row: Var, times: usize) -> Var {
    g.gather(row, 1, vec![Some(0); times])
}
