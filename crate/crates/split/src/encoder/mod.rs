//! Occupancy-grid feature encoder: a five-level stride-2 convolution
//! pyramid and point-kernel extraction of a pose-local geometric context
//! vector.
//!
//! The convolutions carry no bias, so empty space maps to exactly zero
//! features at every level. That makes the interior translation-equivariance
//! and locality properties of the context extractor exact rather than
//! approximate, which the tests rely on.

use nalgebra::Vector3;

use crate::autodiff::{conv3d_forward, gather_forward, Graph, NodeId, ParamStore, Scalar, Tensor};
use crate::scene::{GRID_DIM, WORKSPACE_EDGE};
use crate::se3::Pose;
use crate::{Error, Result};

/// Channel widths of the five convolution layers.
pub const CHANNELS: [usize; 5] = [8, 16, 32, 32, 32];

/// Indices of the retained pyramid levels among (input, c1..c5).
/// Channel counts of the retained levels, in order.
pub const LEVEL_CHANNELS: [usize; 5] = [1, 8, 16, 32, 32];

/// Downsampling factor of each retained level relative to the input grid.
pub const LEVEL_FACTORS: [usize; 5] = [1, 2, 4, 8, 32];

/// Total context length: 7 kernel points times summed retained channels.
pub const CONTEXT_DIM: usize = 7 * (1 + 8 + 16 + 32 + 32);

/// Displacement of the axis kernel points from the pose origin, meters.
pub const KERNEL_DISPLACEMENT: f64 = 0.08;

/// The 7-point sampling kernel in the pose frame: origin, then +/- each
/// principal axis at the configured displacement. The order is fixed and
/// part of the context layout.
pub fn kernel_points(d: f64) -> [Vector3<f64>; 7] {
    [
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(d, 0.0, 0.0),
        Vector3::new(-d, 0.0, 0.0),
        Vector3::new(0.0, d, 0.0),
        Vector3::new(0.0, -d, 0.0),
        Vector3::new(0.0, 0.0, d),
        Vector3::new(0.0, 0.0, -d),
    ]
}

fn conv_shape(i: usize) -> [usize; 5] {
    let c_in = if i == 0 { 1 } else { CHANNELS[i - 1] };
    [CHANNELS[i], c_in, 3, 3, 3]
}

/// Registers the five bias-free convolution weights, He-initialized.
pub fn init_encoder_params<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut impl rand::Rng,
) -> Result<()> {
    for i in 0..5 {
        let shape = conv_shape(i);
        let fan_in = (shape[1] * 27) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n)
            .map(|_| {
                let u: f64 = rand_distr::Distribution::sample(
                    &rand_distr::StandardNormal,
                    rng,
                );
                S::from_f64(u * std)
            })
            .collect();
        store.insert(&format!("enc.c{}.w", i + 1), Tensor::from_vec(shape.to_vec(), data))?;
    }
    Ok(())
}

pub fn encoder_param_names() -> [String; 5] {
    [1, 2, 3, 4, 5].map(|i| format!("enc.c{i}.w"))
}

/// Retained feature grids: input, conv outputs 1-3, and the final conv
/// output, shapes `[C, D, D, D]` with D = 64 / LEVEL_FACTORS[k].
#[derive(Clone, Debug)]
pub struct FeaturePyramid<S: Scalar> {
    pub levels: [Tensor<S>; 5],
}

fn check_grid_shape<S: Scalar>(grid: &Tensor<S>) -> Result<()> {
    if grid.shape() != [1, GRID_DIM, GRID_DIM, GRID_DIM] {
        return Err(Error::ShapeMismatch {
            op: "build_pyramid".into(),
            details: format!("want [1, 64, 64, 64], got {:?}", grid.shape()),
        });
    }
    Ok(())
}

fn relu_tensor<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|v| v.max(S::ZERO))
}

/// Inference-path pyramid: plain convolutions with no tape.
pub fn build_pyramid<S: Scalar>(
    grid: &Tensor<S>,
    weights: &[&Tensor<S>; 5],
) -> Result<FeaturePyramid<S>> {
    check_grid_shape(grid)?;
    let mut cur = grid.clone();
    let mut outs = Vec::with_capacity(5);
    for w in weights {
        let conv = conv3d_forward(&cur, w, 2, 1);
        cur = relu_tensor(&conv);
        outs.push(cur.clone());
    }
    let mut it = outs.into_iter();
    let c1 = it.next().unwrap();
    let c2 = it.next().unwrap();
    let c3 = it.next().unwrap();
    let _c4 = it.next().unwrap();
    let c5 = it.next().unwrap();
    Ok(FeaturePyramid { levels: [grid.clone(), c1, c2, c3, c5] })
}

/// Training-path pyramid on the tape; returns node ids of the retained
/// levels in order.
pub fn build_pyramid_graph<S: Scalar>(
    g: &mut Graph<S>,
    grid: NodeId,
    weights: &[NodeId; 5],
) -> Result<[NodeId; 5]> {
    check_grid_shape(g.value(grid))?;
    let mut cur = grid;
    let mut outs = Vec::with_capacity(5);
    for w in weights {
        let conv = g.conv3d(cur, *w, 2, 1)?;
        cur = g.relu(conv);
        outs.push(cur);
    }
    Ok([grid, outs[0], outs[1], outs[2], outs[4]])
}

/// World position -> continuous grid coordinates of a pyramid level whose
/// cells subdivide the workspace cube anchored at `origin`. Cell centers
/// sit at integer coordinates.
pub fn level_grid_coords(origin: &Pose, factor: usize, p_world: &Vector3<f64>) -> [f64; 3] {
    let local = origin.inverse_act(p_world);
    let cell = WORKSPACE_EDGE / (GRID_DIM / factor) as f64;
    [local.x / cell - 0.5, local.y / cell - 0.5, local.z / cell - 0.5]
}

/// Kernel-point world positions under the sample pose, plus whether any of
/// them left the workspace cube.
pub fn kernel_world_points(
    origin: &Pose,
    pose: &Pose,
    d: f64,
) -> ([Vector3<f64>; 7], bool) {
    let pts = kernel_points(d).map(|p| pose.act(&p));
    let mut outside = false;
    for p in &pts {
        let local = origin.inverse_act(p);
        for c in [local.x, local.y, local.z] {
            if !(0.0..=WORKSPACE_EDGE).contains(&c) {
                outside = true;
            }
        }
    }
    (pts, outside)
}

/// Samples every retained level at the 7 kernel points and concatenates in
/// level-major, point-minor, channel-minor order. Out-of-grid points are
/// clamped; the flag reports that any point left the workspace.
pub fn extract_local_context<S: Scalar>(
    pyr: &FeaturePyramid<S>,
    origin: &Pose,
    pose: &Pose,
    d: f64,
) -> (Vec<S>, bool) {
    let (world, outside) = kernel_world_points(origin, pose, d);
    let mut out = Vec::with_capacity(CONTEXT_DIM);
    for (level, factor) in pyr.levels.iter().zip(LEVEL_FACTORS) {
        let coords: Vec<[f64; 3]> =
            world.iter().map(|p| level_grid_coords(origin, factor, p)).collect();
        let sampled = gather_forward(level, &coords); // [7, C]
        out.extend_from_slice(sampled.data());
    }
    (out, outside)
}

/// Tape version of `extract_local_context`; gradients flow back into the
/// pyramid and from there into the convolution weights.
pub fn extract_local_context_graph<S: Scalar>(
    g: &mut Graph<S>,
    levels: &[NodeId; 5],
    origin: &Pose,
    pose: &Pose,
    d: f64,
) -> Result<(NodeId, bool)> {
    let (world, outside) = kernel_world_points(origin, pose, d);
    let mut parts = Vec::with_capacity(5);
    for (level, factor) in levels.iter().zip(LEVEL_FACTORS) {
        let coords: Vec<[f64; 3]> =
            world.iter().map(|p| level_grid_coords(origin, factor, p)).collect();
        let sampled = g.gather(*level, std::sync::Arc::new(coords))?; // [7, C]
        let c = g.value(sampled).shape()[1];
        parts.push(g.reshape(sampled, vec![7 * c])?);
    }
    let ctx = g.concat(&parts)?;
    Ok((ctx, outside))
}
