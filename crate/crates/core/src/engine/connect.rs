//! Per-layer connectivity compiled from a `LayerSpec`: sparse scatter of
//! presynaptic spikes with exact event counting, and dense analog forward
//! passes.

use crate::netspec::{LayerKind, LayerSpec, NetworkSpec};

#[derive(Debug, Clone)]
pub(crate) enum Connect {
    /// Transposed weights, `n_in × n_out`.
    Dense { w_t: Vec<f64>, n_in: usize, n_out: usize },
    /// Unmasked targets per presynaptic element.
    Local { targets: Vec<Vec<(u32, f64)>>, n_out: usize },
    Conv(ConvGeom),
    Pool(PoolGeom),
    Flatten { n: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    w: Vec<f64>,
    c_in: usize,
    h: usize,
    w_in: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct PoolGeom {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
}

/// Output positions along one axis whose window covers input position
/// `pos`, with the kernel tap index: `o·s + k - pad == pos`.
fn covering(pos: usize, out: usize, kernel: usize, stride: usize, pad: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..kernel).filter_map(move |k| {
        let num = pos as isize + pad as isize - k as isize;
        if num < 0 || !(num as usize).is_multiple_of(stride) {
            return None;
        }
        let o = num as usize / stride;
        (o < out).then_some((o, k))
    })
}

impl Connect {
    pub(crate) fn compile(net: &NetworkSpec, layer: &LayerSpec) -> Connect {
        let n_in = layer.input_shape.len();
        let n_out = layer.output_shape.len();
        let weights = || -> Vec<f64> {
            net.layer_weights(layer)
                .expect("validated weights")
                .iter()
                .map(|&v| v as f64)
                .collect()
        };
        match layer.kind {
            LayerKind::Dense | LayerKind::RecurrentDense => {
                let w = weights();
                let mut w_t = vec![0.0; n_in * n_out];
                for i in 0..n_out {
                    for j in 0..n_in {
                        w_t[j * n_out + i] = w[i * n_in + j];
                    }
                }
                Connect::Dense { w_t, n_in, n_out }
            }
            LayerKind::LocallyConnected => {
                let geo = layer.local_geometry().expect("validated geometry");
                let w = weights();
                let mut targets = vec![Vec::new(); n_in];
                for i in 0..n_out {
                    for (j, t) in targets.iter_mut().enumerate() {
                        if geo.contains(i, j) {
                            t.push((i as u32, w[i * n_in + j]));
                        }
                    }
                }
                Connect::Local { targets, n_out }
            }
            LayerKind::Conv2d => {
                let (c_in, h, w_in) = layer.input_shape.spatial().expect("spatial");
                let (c_out, oh, ow) = layer.output_shape.spatial().expect("spatial");
                let (kh, kw) = layer.kernel_or_unit();
                Connect::Conv(ConvGeom {
                    w: weights(),
                    c_in,
                    h,
                    w_in,
                    c_out,
                    oh,
                    ow,
                    kh,
                    kw,
                    sh: layer.stride.0,
                    sw: layer.stride.1,
                    pad: layer.padding.amount(),
                })
            }
            LayerKind::MaxPool2d => {
                let (c, h, w) = layer.input_shape.spatial().expect("spatial");
                let (_, oh, ow) = layer.output_shape.spatial().expect("spatial");
                let (kh, kw) = layer.kernel_or_unit();
                Connect::Pool(PoolGeom {
                    c,
                    h,
                    w,
                    oh,
                    ow,
                    kh,
                    kw,
                    sh: layer.stride.0,
                    sw: layer.stride.1,
                })
            }
            LayerKind::Flatten => Connect::Flatten { n: n_out },
        }
    }

    /// Adds the weights of presynaptic element `j` into `acc` and returns the
    /// number of synaptic events (realized connections) it triggered. For
    /// pooling, `acc` receives 1.0 at every window containing `j`.
    pub(crate) fn scatter(&self, j: usize, acc: &mut [f64]) -> u64 {
        match self {
            Connect::Dense { w_t, n_out, .. } => {
                let col = &w_t[j * n_out..(j + 1) * n_out];
                for (a, w) in acc.iter_mut().zip(col) {
                    *a += w;
                }
                *n_out as u64
            }
            Connect::Local { targets, .. } => {
                for &(i, w) in &targets[j] {
                    acc[i as usize] += w;
                }
                targets[j].len() as u64
            }
            Connect::Conv(g) => {
                let plane = g.h * g.w_in;
                let c = j / plane;
                let y = (j % plane) / g.w_in;
                let x = j % g.w_in;
                let mut events = 0;
                for (oy, ky) in covering(y, g.oh, g.kh, g.sh, g.pad) {
                    for (ox, kx) in covering(x, g.ow, g.kw, g.sw, g.pad) {
                        for co in 0..g.c_out {
                            let wi = ((co * g.c_in + c) * g.kh + ky) * g.kw + kx;
                            acc[(co * g.oh + oy) * g.ow + ox] += g.w[wi];
                        }
                        events += g.c_out as u64;
                    }
                }
                events
            }
            Connect::Pool(g) => {
                let plane = g.h * g.w;
                let c = j / plane;
                let y = (j % plane) / g.w;
                let x = j % g.w;
                let mut events = 0;
                for (oy, _) in covering(y, g.oh, g.kh, g.sh, 0) {
                    for (ox, _) in covering(x, g.ow, g.kw, g.sw, 0) {
                        acc[(c * g.oh + oy) * g.ow + ox] = 1.0;
                        events += 1;
                    }
                }
                events
            }
            Connect::Flatten { .. } => {
                acc[j] = 1.0;
                0
            }
        }
    }

    /// Dense forward pass over analog values. Pooling takes the window
    /// maximum; flatten copies.
    pub(crate) fn forward(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            Connect::Dense { w_t, n_in, n_out } => {
                for j in 0..*n_in {
                    if x[j] == 0.0 {
                        continue;
                    }
                    let col = &w_t[j * n_out..(j + 1) * n_out];
                    for (o, w) in out.iter_mut().zip(col) {
                        *o += w * x[j];
                    }
                }
            }
            Connect::Local { targets, .. } => {
                for (j, t) in targets.iter().enumerate() {
                    for &(i, w) in t {
                        out[i as usize] += w * x[j];
                    }
                }
            }
            Connect::Conv(g) => {
                for co in 0..g.c_out {
                    for oy in 0..g.oh {
                        for ox in 0..g.ow {
                            let mut s = 0.0;
                            for c in 0..g.c_in {
                                for ky in 0..g.kh {
                                    let y = (oy * g.sh + ky) as isize - g.pad as isize;
                                    if y < 0 || y as usize >= g.h {
                                        continue;
                                    }
                                    for kx in 0..g.kw {
                                        let xx = (ox * g.sw + kx) as isize - g.pad as isize;
                                        if xx < 0 || xx as usize >= g.w_in {
                                            continue;
                                        }
                                        let wi = ((co * g.c_in + c) * g.kh + ky) * g.kw + kx;
                                        s += g.w[wi] * x[(c * g.h + y as usize) * g.w_in + xx as usize];
                                    }
                                }
                            }
                            out[(co * g.oh + oy) * g.ow + ox] = s;
                        }
                    }
                }
            }
            Connect::Pool(g) => {
                for c in 0..g.c {
                    for oy in 0..g.oh {
                        for ox in 0..g.ow {
                            let mut m = f64::NEG_INFINITY;
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let y = oy * g.sh + ky;
                                    let xx = ox * g.sw + kx;
                                    m = m.max(x[(c * g.h + y) * g.w + xx]);
                                }
                            }
                            out[(c * g.oh + oy) * g.ow + ox] = m;
                        }
                    }
                }
            }
            Connect::Flatten { .. } => out.copy_from_slice(x),
        }
    }

    pub(crate) fn n_out(&self) -> usize {
        match self {
            Connect::Dense { n_out, .. } | Connect::Local { n_out, .. } => *n_out,
            Connect::Conv(g) => g.c_out * g.oh * g.ow,
            Connect::Pool(g) => g.c * g.oh * g.ow,
            Connect::Flatten { n } => *n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{Coding, NetworkBuilder, NeuronModelSpec, Padding, Shape};

    // Brute force: enumerate every (output, tap) pair and keep the ones that
    // land on input element j.
    fn conv_fanout_oracle(l: &LayerSpec, j: usize) -> u64 {
        let (_, h, w) = l.input_shape.spatial().unwrap();
        let (c_out, oh, ow) = l.output_shape.spatial().unwrap();
        let (kh, kw) = l.kernel.unwrap();
        let p = l.padding.amount() as isize;
        let (y, x) = ((j % (h * w)) / w, j % w);
        let mut n = 0;
        for _ in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * l.stride.0 + ky) as isize - p;
                            let ix = (ox * l.stride.1 + kx) as isize - p;
                            if iy == y as isize && ix == x as isize {
                                n += 1;
                            }
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn conv_scatter_matches_enumeration_and_forward() {
        for (k, s, p) in [(3, 1, 0), (3, 2, 0), (2, 2, 0), (3, 2, 1), (5, 2, 2)] {
            let net = NetworkBuilder::new(Shape::Spatial(2, 7, 6), Coding::Rate, 4)
                .seed(k as u64 * 31 + s as u64)
                .conv2d("c", 3, k, s, if p == 0 { Padding::Valid } else { Padding::Zero(p) }, NeuronModelSpec::ifl(1.0))
                .build()
                .unwrap();
            let l = &net.layers[0];
            let c = Connect::compile(&net, l);
            let n_in = l.input_shape.len();
            let mut total = 0;
            for j in 0..n_in {
                let mut acc = vec![0.0; c.n_out()];
                let ev = c.scatter(j, &mut acc);
                assert_eq!(ev, conv_fanout_oracle(l, j), "k={k} s={s} p={p} j={j}");
                total += ev;
                // scatter of a unit spike equals the forward pass of a one-hot input
                let mut x = vec![0.0; n_in];
                x[j] = 1.0;
                let mut fwd = vec![0.0; c.n_out()];
                c.forward(&x, &mut fwd);
                for (a, b) in acc.iter().zip(&fwd) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            assert_eq!(total, l.realized_connections());
        }
    }

    #[test]
    fn local_scatter_counts_field() {
        let net = NetworkBuilder::new(Shape::Spatial(1, 4, 4), Coding::Rate, 4)
            .locally_connected("l", 2, 2, 3, NeuronModelSpec::ifl(1.0))
            .build()
            .unwrap();
        let c = Connect::compile(&net, &net.layers[0]);
        let total: u64 = (0..16).map(|j| c.scatter(j, &mut [0.0; 12])).sum();
        assert_eq!(total, 12 * 4);
    }
}
