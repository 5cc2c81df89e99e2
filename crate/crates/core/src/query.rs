//! Object query state shared by query initialization, attention, and the
//! decoder.

use crate::bev_init::BevGridSpec;
use crate::numerics::{Graph, LinearMap, ParamStore, Tensor, Var};

/// Queries inside one graph: features `[N, C]`, positional encodings
/// `[N, C]`, and metric reference centers in the current ego frame.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub features: Var,
    pub pos_enc: Var,
    pub centers: Vec<[f64; 3]>,
    /// Trailing entries that repeat earlier selections to fill the budget.
    pub padded: usize,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Graph-independent copy of a query set, as cached across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    pub features: Tensor,
    pub centers: Vec<[f64; 3]>,
}

impl QueryState {
    pub fn capture(g: &Graph, q: &QuerySet) -> Self {
        Self {
            features: g.value(q.features).clone(),
            centers: q.centers.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Linear encoding of query centers, normalized over the perception range.
/// With `bands > 0` each normalized coordinate `u` is followed by
/// `sin(2^k π u), cos(2^k π u)` for `k < bands` before the projection.
#[derive(Debug, Clone, Copy)]
pub struct PositionEncoder {
    pub map: LinearMap,
    pub range: BevGridSpec,
    pub bands: usize,
}

impl PositionEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        range: BevGridSpec,
        bands: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            map: LinearMap::new(store, name, 3 * (1 + 2 * bands), channels, true, rng),
            range,
            bands,
        }
    }

    pub fn normalized(&self, centers: &[[f64; 3]]) -> Tensor {
        let width = 3 * (1 + 2 * self.bands);
        let mut data = Vec::with_capacity(centers.len() * width);
        for c in centers {
            let u = self.range.normalize(*c);
            data.extend(u);
            for k in 0..self.bands {
                let w = std::f64::consts::PI * (1u64 << k) as f64;
                data.extend(u.iter().flat_map(|x| [(w * x).sin(), (w * x).cos()]));
            }
        }
        Tensor::new(&[centers.len(), width], data).expect("centers")
    }

    pub fn encode(&self, g: &mut Graph, centers: &[[f64; 3]]) -> Var {
        let x = g.constant(self.normalized(centers));
        self.map.forward(g, x)
    }
}
