use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, Var};
use crate::query::{PositionEncoder, QuerySet};

use super::heatmap::Peak;

/// Where initial query features come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource {
    /// Nearest-cell lookup into `F_BEV` at each selected peak.
    Bev,
    /// A learned `[N_query, C]` embedding.
    Learned(ParamId),
}

/// Turns selected heatmap peaks into `n_query` object queries.
///
/// Centers are `(x, y, z_default)`; positional encodings come from
/// `pos_encoder`. When fewer than `n_query` peaks are available the list is
/// padded by cycling through the peaks from the highest score down, and
/// `padded` records how many entries were added.
pub fn init_queries(
    g: &mut Graph,
    selected: &[Peak],
    fbev: Var,
    pos_encoder: &PositionEncoder,
    z_default: f64,
    n_query: usize,
    features: FeatureSource,
) -> Result<QuerySet> {
    if selected.is_empty() {
        return Err(Error::Empty("selected peaks"));
    }
    let chosen: Vec<&Peak> = selected.iter().cycle().take(n_query).collect();
    let padded = n_query.saturating_sub(selected.len());
    let centers: Vec<[f64; 3]> = chosen.iter().map(|p| [p.xy[0], p.xy[1], z_default]).collect();
    let pos_enc = pos_encoder.encode(g, &centers);
    let feats = match features {
        FeatureSource::Bev => {
            let s = g.shape(fbev).to_vec();
            let (c, h, w) = (s[0], s[1], s[2]);
            let flat = g.reshape(fbev, &[c, h * w]);
            let rows = g.transpose(flat);
            g.gather_rows(rows, chosen.iter().map(|p| p.cell).collect())
        }
        FeatureSource::Learned(id) => {
            let emb = g.param(id);
            let rows = g.shape(emb)[0];
            if rows < n_query {
                return Err(Error::Shape(format!(
                    "query embedding has {rows} rows, need {n_query}"
                )));
            }
            g.gather_rows(emb, (0..n_query).collect())
        }
    };
    Ok(QuerySet {
        features: feats,
        pos_enc,
        centers,
        padded,
    })
}
