//! Fixtures shared by the benchmarks.

use optlab::numerics::Matrix;
use optlab::problems::ProblemSpec;
use optlab::{BatchKey, ParamBlock, Problem, Rng};

/// Standard-normal `rows × cols` matrix from a fixed stream.
pub fn normal_matrix(rows: usize, cols: usize, stream: u64) -> Matrix {
    let mut rng = Rng::for_stream(0xbe4c, stream);
    Matrix::new(rows, cols, rng.normals(rows * cols)).expect("shape matches data")
}

/// MLP with an `hidden × hidden` matrix block, its initial parameters and
/// one gradient per block.
pub fn mlp_fixture(hidden: usize) -> (Box<dyn Problem>, Vec<ParamBlock>, Vec<Vec<f64>>) {
    let problem = ProblemSpec::mlp(hidden, hidden, 10, 256, 16)
        .build(1)
        .expect("valid mlp spec");
    let blocks = problem.initial_params();
    let grads = problem
        .loss_and_grad(&optlab::problems::block_views(&blocks), BatchKey::new(1, 0))
        .expect("finite gradient")
        .grads;
    (problem, blocks, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_gradients_match_blocks() {
        let (_, blocks, grads) = mlp_fixture(8);
        assert_eq!(blocks.len(), grads.len());
        assert!(blocks.iter().zip(&grads).all(|(b, g)| b.len() == g.len()));
    }
}
