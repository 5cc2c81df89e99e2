//! Scaled dot-product multi-head attention and temporal query fusion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{past_from_now, EgoPose};
use crate::numerics::{Graph, LinearMap, ParamStore, Var};
use crate::query::{PositionEncoder, QuerySet, QueryState};

#[derive(Debug, Clone, Copy)]
pub struct MhaWeights {
    pub heads: usize,
    pub channels: usize,
    pub q_proj: LinearMap,
    pub k_proj: LinearMap,
    pub v_proj: LinearMap,
    pub o_proj: LinearMap,
}

impl MhaWeights {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!("heads ({heads}) must divide channels ({channels})")));
        }
        Ok(Self {
            heads,
            channels,
            q_proj: LinearMap::new(store, &format!("{name}.q"), channels, channels, true, rng),
            k_proj: LinearMap::new(store, &format!("{name}.k"), channels, channels, true, rng),
            v_proj: LinearMap::new(store, &format!("{name}.v"), channels, channels, true, rng),
            o_proj: LinearMap::new(store, &format!("{name}.o"), channels, channels, true, rng),
        })
    }
}

/// `query [Nq, C]` attends over `key`/`value [Nk, C]`.
pub fn mha(g: &mut Graph, query: Var, key: Var, value: Var, w: &MhaWeights) -> Result<Var> {
    let c = w.channels;
    for (what, v) in [("query", query), ("key", key), ("value", value)] {
        if g.value(v).ndim() != 2 || g.value(v).last_dim() != c {
            return Err(Error::Shape(format!("mha {what} must be [N,{c}], got {:?}", g.shape(v))));
        }
    }
    if g.shape(key)[0] != g.shape(value)[0] {
        return Err(Error::Shape("mha key and value row counts differ".into()));
    }
    if g.shape(key)[0] == 0 {
        return Err(Error::Empty("mha keys"));
    }
    let dh = c / w.heads;
    let q = w.q_proj.forward(g, query);
    let k = w.k_proj.forward(g, key);
    let v = w.v_proj.forward(g, value);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kt = g.transpose(kh);
        let s = g.matmul(qh, kt);
        let s = g.scale(s, scale);
        let p = g.softmax(s);
        heads.push(g.matmul(p, vh));
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    Ok(w.o_proj.forward(g, cat))
}

/// Past queries brought into the current graph, with positional encodings
/// expressed in the current ego frame.
#[derive(Debug, Clone, Copy)]
pub struct TemporalQueries {
    pub features: Var,
    pub pos_enc: Var,
}

/// Re-encodes cached queries for fusion at `pose_now`. With `align`, their
/// centers are moved into the current ego frame first. A learned `lag`
/// vector scaled by the time gap is added to the encoding when given.
pub fn rectify_past_queries(
    g: &mut Graph,
    past: &QueryState,
    pose_now: &EgoPose,
    pose_past: &EgoPose,
    encoder: &PositionEncoder,
    lag: Option<Var>,
    align: bool,
) -> TemporalQueries {
    let centers: Vec<[f64; 3]> = if align {
        let now_from_past = past_from_now(pose_now, pose_past).inverse();
        past.centers.iter().map(|c| now_from_past.apply(*c)).collect()
    } else {
        past.centers.clone()
    };
    let features = g.constant(past.features.clone());
    let mut pos_enc = encoder.encode(g, &centers);
    if let Some(lag) = lag {
        let dt = pose_now.timestamp - pose_past.timestamp;
        let shift = g.scale(lag, dt);
        pos_enc = g.add_row(pos_enc, shift);
    }
    TemporalQueries { features, pos_enc }
}

/// Current queries attend over themselves and, when given, past queries.
/// Keys and values both carry positional encodings, so where a past query
/// sat reaches the output alongside what it saw.
pub fn temporal_self_attention(g: &mut Graph, now: &QuerySet, past: Option<&TemporalQueries>, w: &MhaWeights) -> Result<Var> {
    let q = g.add(now.features, now.pos_enc);
    let key = match past {
        None => q,
        Some(p) => {
            let kp = g.add(p.features, p.pos_enc);
            g.concat_rows(&[q, kp])
        }
    };
    mha(g, q, key, key, w)
}
