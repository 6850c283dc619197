//! Central finite-difference verification of recorded gradients.
//!
//! `build` must construct the same scalar loss from whatever input tensors
//! it is handed; it is evaluated once with gradients recorded and then
//! twice per input element with perturbed values.

use super::{Graph, NodeId, Tensor, TensorError};

/// Worst relative error per input tensor, in input order.
///
/// Relative error uses the denominator `max(1e-8, |analytic| + |numeric|)`,
/// so exactly-zero gradient pairs score zero rather than dividing by zero.
pub fn finite_diff_errors<F>(
    build: F,
    inputs: &[Tensor],
    eps: f64,
) -> Result<Vec<f64>, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let loss = build(&mut graph, &ids)?;
    graph.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| graph.grad(id).expect("leaf with requires_grad has a gradient"))
        .collect();

    let eval = |tensors: &[Tensor]| -> Result<f64, TensorError> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| graph.leaf(t.clone(), false)).collect();
        let loss = build(&mut graph, &ids)?;
        Ok(graph.value(loss).data()[0])
    };

    let mut worst = vec![0.0f64; inputs.len()];
    let mut work: Vec<Tensor> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].len() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[ti].data()[ei];
            let err = (exact - numeric).abs() / (1e-8f64).max(exact.abs() + numeric.abs());
            if err > worst[ti] {
                worst[ti] = err;
            }
        }
    }
    Ok(worst)
}

/// Max relative error over every element of every input tensor.
pub fn finite_diff_check<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let per_input = finite_diff_errors(build, inputs, eps)?;
    Ok(per_input.into_iter().fold(0.0, f64::max))
}
