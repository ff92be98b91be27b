//! Deconvnet projection of single activations back to pixel space.
//!
//! A chosen activation is isolated (everything else zeroed) and pushed down
//! the network stage by stage: unpool through the forward pass's switches,
//! ReLU on the reconstructed signal, then the transposed convolution `Cᵀ`
//! without bias.

use std::path::Path;

use thiserror::Error;

use crate::data::{DataError, GrayImage};
use crate::layers::{maxpool_backward, relu_forward, LayerError};
use crate::model::{ForwardTrace, Network};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum DeconvError {
    #[error("trace does not belong to this network: {0}")]
    TraceMismatch(String),
    #[error("stage {stage} outside 1..={stages}")]
    Stage { stage: usize, stages: usize },
    #[error("map {map} outside 0..{maps}")]
    Map { map: usize, maps: usize },
    #[error("location ({row}, {col}) outside {height}×{width}")]
    Location {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A point in the network whose activations are probed: the output of conv
/// stage `stage` (1-based, post-ReLU), before or after its pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub stage: usize,
    pub pooled: bool,
}

impl Site {
    /// The deepest stage's rectified conv output, before pooling.
    pub fn last(net: &Network) -> Self {
        Self {
            stage: net.stages().len(),
            pooled: false,
        }
    }
}

/// Inclusive pixel rectangle: columns `x0..=x1`, rows `y0..=y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

fn site_shape(net: &Network, site: Site) -> Result<[usize; 3], DeconvError> {
    net.activation_shape(site.stage, site.pooled)
        .ok_or(DeconvError::Stage {
            stage: site.stage,
            stages: net.stages().len(),
        })
}

fn site_activation(trace: &ForwardTrace, site: Site) -> &Tensor {
    let st = &trace.stages[site.stage - 1];
    if site.pooled {
        st.output()
    } else {
        &st.activation
    }
}

fn check_trace(trace: &ForwardTrace, net: &Network) -> Result<(), DeconvError> {
    if trace.stages.len() != net.stages().len() {
        return Err(DeconvError::TraceMismatch(format!(
            "{} traced stages, network has {}",
            trace.stages.len(),
            net.stages().len()
        )));
    }
    if trace.input().shape() != net.input_shape() {
        return Err(DeconvError::TraceMismatch(format!(
            "input {:?}, network expects {:?}",
            trace.input().shape(),
            net.input_shape()
        )));
    }
    for (i, (st, stage)) in trace.stages.iter().zip(net.stages()).enumerate() {
        let shape = net.activation_shape(i + 1, false).expect("stage exists");
        if st.activation.shape() != shape || st.pooled.is_some() != stage.pool {
            return Err(DeconvError::TraceMismatch(format!(
                "stage {} activation {:?}, network produces {:?}",
                i + 1,
                st.activation.shape(),
                shape
            )));
        }
    }
    Ok(())
}

/// Projects the activation of `map` at `(row, col)` of `site` to pixel space.
pub fn project(
    trace: &ForwardTrace,
    net: &Network,
    site: Site,
    map: usize,
    location: (usize, usize),
) -> Result<Tensor, DeconvError> {
    let [c, h, w] = site_shape(net, site)?;
    check_trace(trace, net)?;
    let (row, col) = location;
    if map >= c {
        return Err(DeconvError::Map { map, maps: c });
    }
    if row >= h || col >= w {
        return Err(DeconvError::Location {
            row,
            col,
            height: h,
            width: w,
        });
    }
    let act = site_activation(trace, site);
    let idx = (map * h + row) * w + col;
    let mut x = Tensor::zeros(&[c, h, w]).expect("valid shape");
    x.data_mut()[idx] = act.data()[idx];
    project_tensor(trace, net, site, x)
}

/// Runs an arbitrary site-shaped signal down the deconvnet.
pub fn project_tensor(
    trace: &ForwardTrace,
    net: &Network,
    site: Site,
    signal: Tensor,
) -> Result<Tensor, DeconvError> {
    check_trace(trace, net)?;
    let shape = site_shape(net, site)?;
    if signal.shape() != shape {
        return Err(DeconvError::TraceMismatch(format!(
            "signal {:?} does not match site shape {shape:?}",
            signal.shape()
        )));
    }
    let mut x = signal;
    for s in (0..site.stage).rev() {
        let stage = &net.stages()[s];
        if s + 1 < site.stage || site.pooled {
            if let Some(sw) = trace.stages[s].switches() {
                x = maxpool_backward(&x, sw)?;
            }
        }
        if stage.relu {
            x = relu_forward(&x);
        }
        x = stage.conv.transpose(&x)?;
    }
    Ok(x)
}

/// Projects the strongest activation of `map`; ties resolve to the smallest
/// row-major location.
pub fn project_max(
    trace: &ForwardTrace,
    net: &Network,
    site: Site,
    map: usize,
) -> Result<(Tensor, (usize, usize), Real), DeconvError> {
    let [c, h, w] = site_shape(net, site)?;
    check_trace(trace, net)?;
    if map >= c {
        return Err(DeconvError::Map { map, maps: c });
    }
    let act = site_activation(trace, site);
    let plane = &act.data()[map * h * w..(map + 1) * h * w];
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    let loc = (best / w, best % w);
    Ok((project(trace, net, site, map, loc)?, loc, plane[best]))
}

/// Input interval reached from `[lo, hi]` along one axis of `site`. With
/// `clip`, the interval is kept inside every intermediate tensor's extent.
fn back_project(
    net: &Network,
    site: Site,
    mut lo: isize,
    mut hi: isize,
    clip: bool,
) -> (isize, isize) {
    let bound = |lo: isize, hi: isize, n: usize| {
        if clip {
            (lo.max(0), hi.min(n as isize - 1))
        } else {
            (lo, hi)
        }
    };
    for s in (0..site.stage).rev() {
        let stage = &net.stages()[s];
        if stage.pool && (s + 1 < site.stage || site.pooled) {
            let n = net.activation_shape(s + 1, false).expect("stage exists")[1];
            (lo, hi) = bound(2 * lo, 2 * hi + 1, n);
        }
        let p = stage.conv.padding() as isize;
        let n = if s == 0 {
            net.input_shape()[1]
        } else {
            net.activation_shape(s, true).expect("stage exists")[1]
        };
        (lo, hi) = bound(lo - p, hi + p, n);
    }
    (lo, hi)
}

/// Side length of the receptive field of any unit at `site`, before clipping.
pub fn receptive_field_size(net: &Network, site: Site) -> Result<usize, DeconvError> {
    site_shape(net, site)?;
    let (lo, hi) = back_project(net, site, 0, 0, false);
    Ok((hi - lo + 1) as usize)
}

/// Input rectangle that can influence the unit at `location` of `site`,
/// clipped to the image.
pub fn receptive_field(
    net: &Network,
    site: Site,
    location: (usize, usize),
) -> Result<Rect, DeconvError> {
    let [_, h, w] = site_shape(net, site)?;
    let (row, col) = location;
    if row >= h || col >= w {
        return Err(DeconvError::Location {
            row,
            col,
            height: h,
            width: w,
        });
    }
    let (y0, y1) = back_project(net, site, row as isize, row as isize, true);
    let (x0, x1) = back_project(net, site, col as isize, col as isize, true);
    Ok(Rect {
        x0: x0 as usize,
        y0: y0 as usize,
        x1: x1 as usize,
        y1: y1 as usize,
    })
}

fn crop_normalized(t: &Tensor, rf: Rect) -> Result<GrayImage, DeconvError> {
    let w = t.shape()[2];
    let mut values = Vec::with_capacity(rf.width() * rf.height());
    for y in rf.y0..=rf.y1 {
        for x in rf.x0..=rf.x1 {
            values.push(t.data()[y * w + x] as f64);
        }
    }
    Ok(GrayImage::from_normalized(
        rf.width(),
        rf.height(),
        &values,
    )?)
}

/// The network input and the projection cropped to `rf`, each min-max
/// normalised to 8 bits.
pub fn response_crops(
    projection: &Tensor,
    input: &Tensor,
    rf: Rect,
) -> Result<(GrayImage, GrayImage), DeconvError> {
    for t in [projection, input] {
        let s = t.shape();
        if s.len() != 3 || s[0] != 1 || rf.y1 >= s[1] || rf.x1 >= s[2] {
            return Err(DeconvError::TraceMismatch(format!(
                "cannot crop {rf:?} from a {s:?} image"
            )));
        }
    }
    Ok((
        crop_normalized(input, rf)?,
        crop_normalized(projection, rf)?,
    ))
}

/// Writes the original crop and the deconvolution crop.
pub fn render_response(
    projection: &Tensor,
    input: &Tensor,
    rf: Rect,
    original_path: &Path,
    deconv_path: &Path,
) -> Result<(), DeconvError> {
    let (orig, resp) = response_crops(projection, input, rf)?;
    orig.write(original_path)?;
    resp.write(deconv_path)?;
    Ok(())
}
