//! Static adjacency learned from node embeddings, its smoothness/sparsity
//! regularizer, and the momentum-tracked copy of the embeddings used by the
//! dynamic graph.

use crate::error::{Error, Result};
use crate::numerics::{init_embedding, ParamId, ParamStore, RngState, Tensor, Var};

/// Tolerance on row sums of a learned adjacency.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyKind {
    Static,
    Dynamic,
}

/// Row-stochastic, strictly positive `N×N` dependency matrix. Row `i` is a
/// distribution over the nodes that feed node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    values: Tensor,
    kind: AdjacencyKind,
}

impl AdjacencyMatrix {
    /// Validates the softmax-range invariants.
    pub fn new(values: Tensor, kind: AdjacencyKind) -> Result<Self> {
        check_row_stochastic(&values)?;
        Ok(AdjacencyMatrix { values, kind })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn kind(&self) -> AdjacencyKind {
        self.kind
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}

/// Checks that `t` is `N×N` (or a batch `B×N×N`) with strictly positive
/// entries and rows summing to one within [`ROW_SUM_TOL`].
pub fn check_row_stochastic(t: &Tensor) -> Result<()> {
    let s = t.shape();
    let square = match s.len() {
        2 => s[0] == s[1],
        3 => s[1] == s[2],
        _ => false,
    };
    if !square {
        return Err(Error::shape("adjacency", format!("{s:?} is not square")));
    }
    let n = s[s.len() - 1];
    for (r, row) in t.data().chunks(n).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Contract(format!("adjacency row {r} sums to {sum}")));
        }
        if let Some(v) = row.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Contract(format!(
                "adjacency row {r} has non-positive entry {v}"
            )));
        }
    }
    Ok(())
}

/// `softmax(relu(M_s·M_sᵀ))`, row-wise.
pub fn build_static_graph<'t>(embeddings: Var<'t>) -> Result<Var<'t>> {
    let s = embeddings.shape();
    if s.len() != 2 || s[0] < 2 || s[1] < 1 {
        return Err(Error::shape(
            "build_static_graph",
            format!("embeddings {s:?}, need N≥2 × d≥1"),
        ));
    }
    if !embeddings.value().is_finite() {
        return Err(Error::NonFinite {
            context: "static node embeddings".into(),
        });
    }
    embeddings
        .matmul(embeddings.transpose()?)?
        .relu()?
        .softmax()
}

/// Graph regularizer for a batch `x: B×N×h` against `adj: N×N`:
///
/// `mean_b Σ_ij ‖x_i − x_j‖² · A_ij  +  γ‖A‖_F²`
pub fn graph_regularization_loss<'t>(x: Var<'t>, adj: Var<'t>, gamma: f64) -> Result<Var<'t>> {
    if !(gamma >= 0.0) {
        return Err(Error::config("gamma", format!("{gamma} must be ≥ 0")));
    }
    let xs = x.shape();
    let a = adj.shape();
    if xs.len() != 3 || a.len() != 2 || a[0] != a[1] || a[0] != xs[1] {
        return Err(Error::shape(
            "graph_regularization_loss",
            format!("batch {xs:?} vs adjacency {a:?}"),
        ));
    }
    let batch = xs[0] as f64;
    let smooth = x.pairwise_sq_dist()?.mul(adj)?.sum()?.scale(1.0 / batch)?;
    let sparsity = adj.mul(adj)?.sum()?.scale(gamma)?;
    smooth.add(sparsity)
}

/// `M_d ← p·M_d + (1−p)·M_s`, elementwise.
pub fn momentum_update(dynamic: &mut Tensor, stat: &Tensor, p: f64) -> Result<()> {
    validate_momentum(p)?;
    if dynamic.shape() != stat.shape() {
        return Err(Error::shape(
            "momentum_update",
            format!("{:?} vs {:?}", dynamic.shape(), stat.shape()),
        ));
    }
    for (d, &s) in dynamic.data_mut().iter_mut().zip(stat.data()) {
        *d = p * *d + (1.0 - p) * s;
    }
    Ok(())
}

pub fn validate_momentum(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config("momentum", format!("{p} not in [0, 1)")))
    }
}

/// The static dictionary `M_s` (a trainable parameter) and its momentum copy
/// `M_d`, which no optimizer ever touches.
#[derive(Clone, Debug)]
pub struct NodeEmbeddings {
    static_id: ParamId,
    dynamic: Tensor,
    momentum: f64,
}

impl NodeEmbeddings {
    /// Registers `M_s` as `node_embeddings.static` and initializes `M_d ← M_s`.
    pub fn new(
        params: &mut ParamStore,
        nodes: usize,
        dim: usize,
        momentum: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        validate_momentum(momentum)?;
        let ms = init_embedding(nodes, dim, rng);
        let dynamic = ms.clone();
        let static_id = params.add("node_embeddings.static", ms);
        Ok(NodeEmbeddings {
            static_id,
            dynamic,
            momentum,
        })
    }

    pub fn static_id(&self) -> ParamId {
        self.static_id
    }

    pub fn dynamic(&self) -> &Tensor {
        &self.dynamic
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub(crate) fn set_dynamic(&mut self, md: Tensor) -> Result<()> {
        if md.shape() != self.dynamic.shape() {
            return Err(Error::shape(
                "node_embeddings.dynamic",
                format!("{:?} vs {:?}", md.shape(), self.dynamic.shape()),
            ));
        }
        self.dynamic = md;
        Ok(())
    }

    /// Pulls `M_d` toward the current `M_s` held in `params`.
    pub fn momentum_update(&mut self, params: &ParamStore) -> Result<()> {
        momentum_update(&mut self.dynamic, params.get(self.static_id), self.momentum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn zero_embeddings_give_uniform_graph() {
        let tape = Tape::new();
        let a = build_static_graph(tape.constant(Tensor::zeros(&[4, 3])))
            .unwrap()
            .value();
        assert!(a.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn scaled_identity_is_diagonal_dominant() {
        let tape = Tape::new();
        let m = Tensor::eye(3).map(|v| 10.0 * v);
        let a = build_static_graph(tape.constant(m)).unwrap().value();
        for i in 0..3 {
            assert!(a.get(&[i, i]) > 0.999_999_999);
        }
        check_row_stochastic(&a).unwrap();
    }

    #[test]
    fn non_finite_embeddings_rejected() {
        let tape = Tape::new();
        let m = Tensor::new(&[2, 1], vec![1.0, f64::INFINITY]).unwrap();
        assert!(matches!(
            build_static_graph(tape.constant(m)),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn momentum_examples() {
        let ms = Tensor::ones(&[1, 1]);
        let mut md = Tensor::zeros(&[1, 1]);
        momentum_update(&mut md, &ms, 0.9).unwrap();
        assert!((md.item() - 0.1).abs() < 1e-15);

        let mut md = Tensor::full(&[2, 2], 5.0);
        momentum_update(&mut md, &ms.reshape(&[1, 1]).unwrap(), 0.0).unwrap_err();
        let ms = Tensor::full(&[2, 2], -3.0);
        momentum_update(&mut md, &ms, 0.0).unwrap();
        assert_eq!(md, ms);

        assert!(matches!(
            momentum_update(&mut md, &ms, 1.0),
            Err(Error::Config {
                field: "momentum",
                ..
            })
        ));
        assert!(momentum_update(&mut md, &ms, -0.1).is_err());
    }

    #[test]
    fn regularizer_rejects_mismatched_nodes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 4]));
        let a = tape.constant(Tensor::full(&[4, 4], 0.25));
        assert!(matches!(
            graph_regularization_loss(x, a, 0.1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn row_stochastic_check() {
        assert!(check_row_stochastic(&Tensor::full(&[3, 3], 1.0 / 3.0)).is_ok());
        assert!(check_row_stochastic(&Tensor::eye(3)).is_err());
        assert!(check_row_stochastic(&Tensor::full(&[2, 3], 0.5)).is_err());
    }
}
