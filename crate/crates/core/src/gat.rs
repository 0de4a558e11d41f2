//! Sparse multi-head graph attention.
//!
//! For target node `i` and neighbor `j`, head `k` scores the edge as
//! `LeakyReLU(a_self . W h_i + a_nbr . W h_j)`, normalizes scores with a
//! softmax over `N(i)`, aggregates `sum_j alpha_ij W h_j` and applies
//! `LeakyReLU(0.2)`. Head outputs are concatenated.

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::init_matrix;
use crate::span_graph::{EdgeSelection, SpanGraph};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct GatConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_in: usize,
    /// Width of each head; `n_heads * d_out == d_in`.
    pub d_out: usize,
    pub leaky_slope: f64,
    pub include_self: bool,
}

impl GatConfig {
    /// Concatenated heads that preserve width `d`.
    pub fn for_width(d: usize, n_layers: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::config(format!("GAT width {d} is not divisible by {n_heads} heads")));
        }
        Ok(Self { n_layers, n_heads, d_in: d, d_out: d / n_heads, leaky_slope: LEAKY_SLOPE, include_self: true })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.n_heads * self.d_out != self.d_in {
            return Err(Error::config(format!(
                "GAT heads {} x width {} must equal input width {}",
                self.n_heads, self.d_out, self.d_in
            )));
        }
        Ok(())
    }
}

/// Directed edge lists grouped by target node, each group sorted by source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    targets: Vec<usize>,
    sources: Vec<usize>,
    /// Group `i` covers `offsets[i]..offsets[i + 1]`.
    offsets: Vec<usize>,
}

impl Adjacency {
    /// `neighbors[i]` lists `N(i)`; self loops are added when `include_self`.
    pub fn from_neighbors(neighbors: &[Vec<usize>], include_self: bool) -> Result<Self> {
        let n = neighbors.len();
        let mut targets = Vec::new();
        let mut sources = Vec::new();
        let mut offsets = vec![0];
        for (i, nbrs) in neighbors.iter().enumerate() {
            let mut group: Vec<usize> = nbrs.clone();
            if include_self {
                group.push(i);
            }
            group.sort_unstable();
            group.dedup();
            if group.is_empty() {
                return Err(Error::contract(format!("node {i} has no neighbors to attend to")));
            }
            if let Some(&bad) = group.iter().find(|&&j| j >= n) {
                return Err(Error::contract(format!("neighbor {bad} out of range for {n} nodes")));
            }
            targets.extend(std::iter::repeat(i).take(group.len()));
            sources.extend(group);
            offsets.push(sources.len());
        }
        Ok(Self { n, targets, sources, offsets })
    }

    /// Undirected edge list over `n` nodes.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], include_self: bool) -> Result<Self> {
        let mut nbrs = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::contract(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        Self::from_neighbors(&nbrs, include_self)
    }

    pub fn from_graph(graph: &SpanGraph, sel: EdgeSelection, include_self: bool) -> Result<Self> {
        Self::from_neighbors(&graph.neighbors(sel, false), include_self)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    /// `(source, target)` for each directed edge, in storage order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources.iter().copied().zip(self.targets.iter().copied())
    }

    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Attention coefficients for one head, aligned with `Adjacency::edges`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAttention {
    pub alpha: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GatOutput {
    pub hidden: Var,
    /// `attention[layer][head]`.
    pub attention: Vec<Vec<EdgeAttention>>,
}

fn head_prefix(layer: usize, head: usize) -> String {
    format!("gat.layer{layer}.head{head}")
}

pub fn init_gat<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &GatConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    for l in 0..cfg.n_layers {
        for h in 0..cfg.n_heads {
            let p = head_prefix(l, h);
            init_matrix(store, &format!("{p}.w"), cfg.d_in, cfg.d_out, rng)?;
            init_matrix(store, &format!("{p}.a_self"), cfg.d_out, 1, rng)?;
            init_matrix(store, &format!("{p}.a_nbr"), cfg.d_out, 1, rng)?;
        }
    }
    Ok(())
}

fn check_input(tape: &Tape, h: Var, adj: &Adjacency, cfg: &GatConfig) -> Result<()> {
    let shape = tape.shape(h);
    if shape != [adj.n, cfg.d_in] {
        return Err(Error::dim(format!("GAT input shape {shape:?} vs {} nodes of width {}", adj.n, cfg.d_in)));
    }
    Ok(())
}

/// One attention head: returns the aggregated `[n, d_out]` rows (before the
/// nonlinearity) and the edge coefficients.
fn head_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    h: Var,
    adj: &Adjacency,
    slope: f64,
) -> Result<(Var, Var)> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let a_self = tape.param(store, &format!("{prefix}.a_self"))?;
    let a_nbr = tape.param(store, &format!("{prefix}.a_nbr"))?;
    let wh = tape.matmul(h, w)?;
    let s_self = tape.matmul(wh, a_self)?;
    let s_nbr = tape.matmul(wh, a_nbr)?;
    let e_self = tape.gather_rows(s_self, &adj.targets)?;
    let e_nbr = tape.gather_rows(s_nbr, &adj.sources)?;
    let e = tape.add(e_self, e_nbr)?;
    let e = tape.leaky_relu(e, slope);
    let alpha = tape.segment_softmax(e, &adj.offsets)?;
    let msgs = tape.gather_rows(wh, &adj.sources)?;
    let msgs = tape.mul_col(msgs, alpha)?;
    let agg = tape.scatter_add_rows(msgs, &adj.targets, adj.n)?;
    Ok((agg, alpha))
}

/// Coefficients of every head of layer `layer` for node features `h`.
pub fn attention_coefficients(
    h: &Tensor,
    adj: &Adjacency,
    store: &ParamStore,
    cfg: &GatConfig,
    layer: usize,
) -> Result<Vec<EdgeAttention>> {
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    check_input(&tape, hv, adj, cfg)?;
    (0..cfg.n_heads)
        .map(|k| {
            let (_, alpha) = head_forward(&mut tape, store, &head_prefix(layer, k), hv, adj, cfg.leaky_slope)?;
            Ok(EdgeAttention { alpha: tape.value(alpha).data().to_vec() })
        })
        .collect()
}

/// A single layer: `[n, d_in] -> [n, n_heads * d_out]`.
pub fn gat_layer(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GatConfig,
    layer: usize,
    h: Var,
    adj: &Adjacency,
) -> Result<(Var, Vec<EdgeAttention>)> {
    check_input(tape, h, adj, cfg)?;
    let mut outs = Vec::with_capacity(cfg.n_heads);
    let mut attn = Vec::with_capacity(cfg.n_heads);
    for k in 0..cfg.n_heads {
        let (agg, alpha) = head_forward(tape, store, &head_prefix(layer, k), h, adj, cfg.leaky_slope)?;
        outs.push(tape.leaky_relu(agg, LEAKY_SLOPE));
        attn.push(EdgeAttention { alpha: tape.value(alpha).data().to_vec() });
    }
    let out = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((out, attn))
}

/// All configured layers in sequence.
pub fn gat_forward(tape: &mut Tape, store: &ParamStore, cfg: &GatConfig, h: Var, adj: &Adjacency) -> Result<GatOutput> {
    let mut x = h;
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (y, a) = gat_layer(tape, store, cfg, l, x, adj)?;
        attention.push(a);
        x = y;
    }
    Ok(GatOutput { hidden: x, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaky(x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            LEAKY_SLOPE * x
        }
    }

    #[test]
    fn singleton_neighborhood_has_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GatConfig::for_width(4, 1, 2).unwrap();
        let mut store = ParamStore::new();
        init_gat(&mut store, &cfg, &mut rng).unwrap();
        let adj = Adjacency::from_neighbors(&[vec![]], true).unwrap();
        let h = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let a = attention_coefficients(&h, &adj, &store, &cfg, 0).unwrap();
        assert_eq!(a[0].alpha, vec![1.0]);
    }

    #[test]
    fn identical_neighbors_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = GatConfig::for_width(4, 1, 1).unwrap();
        let mut store = ParamStore::new();
        init_gat(&mut store, &cfg, &mut rng).unwrap();
        let adj = Adjacency::from_neighbors(&[vec![1, 2], vec![], vec![]], false);
        assert!(matches!(adj, Err(Error::Contract(_))));
        let adj = Adjacency::from_neighbors(&[vec![1, 2], vec![0], vec![0]], false).unwrap();
        let h = Tensor::matrix(3, 4, vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -1.0, 0.0, 1.0, 1.0, -1.0, 0.0]).unwrap();
        let a = attention_coefficients(&h, &adj, &store, &cfg, 0).unwrap();
        assert!((a[0].alpha[0] - 0.5).abs() < 1e-15);
        assert!((a[0].alpha[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_weights_and_zero_attention_vector_give_leaky_relu() {
        let mut store = ParamStore::new();
        let cfg = GatConfig::for_width(3, 1, 1).unwrap();
        store
            .insert("gat.layer0.head0.w", Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap())
            .unwrap();
        store.insert("gat.layer0.head0.a_self", Tensor::zeros(&[3, 1])).unwrap();
        store.insert("gat.layer0.head0.a_nbr", Tensor::zeros(&[3, 1])).unwrap();
        let adj = Adjacency::from_neighbors(&[vec![]], true).unwrap();
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::matrix(1, 3, vec![1.5, -2.0, 0.0]).unwrap());
        let (out, _) = gat_layer(&mut tape, &store, &cfg, 0, h, &adj).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, -0.4, 0.0]);
    }

    #[test]
    fn zero_attention_vector_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GatConfig::for_width(4, 1, 2).unwrap();
        let mut store = ParamStore::new();
        init_gat(&mut store, &cfg, &mut rng).unwrap();
        for h in 0..2 {
            for a in ["a_self", "a_nbr"] {
                store.get_mut(&format!("gat.layer0.head{h}.{a}")).unwrap().value = Tensor::zeros(&[2, 1]);
            }
        }
        let adj = Adjacency::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2)], true).unwrap();
        let h = Tensor::uniform(&[4, 4], 1.0, &mut rng);
        for head in attention_coefficients(&h, &adj, &store, &cfg, 0).unwrap() {
            for (k, (_, t)) in adj.edges().enumerate() {
                assert_eq!(head.alpha[k], 1.0 / adj.neighbors_of(t).len() as f64);
            }
        }
    }

    /// Straight-line reference: dense score matrix with non-edges at -inf.
    fn dense_layer(h: &Tensor, nbrs: &[Vec<bool>], store: &ParamStore, cfg: &GatConfig) -> Vec<Vec<f64>> {
        let n = h.shape()[0];
        let mut out = vec![vec![0.0; cfg.n_heads * cfg.d_out]; n];
        for k in 0..cfg.n_heads {
            let p = head_prefix(0, k);
            let w = store.value(&format!("{p}.w")).unwrap();
            let a_s = store.value(&format!("{p}.a_self")).unwrap().data();
            let a_n = store.value(&format!("{p}.a_nbr")).unwrap().data();
            let wh: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..cfg.d_out)
                        .map(|c| (0..cfg.d_in).map(|r| h.row(i)[r] * w.data()[r * cfg.d_out + c]).sum())
                        .collect()
                })
                .collect();
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| if nbrs[i][j] { leaky(dot(&wh[i], a_s) + dot(&wh[j], a_n)) } else { f64::NEG_INFINITY })
                    .collect();
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = ex.iter().sum();
                for c in 0..cfg.d_out {
                    let agg: f64 = (0..n).map(|j| ex[j] / z * wh[j][c]).sum();
                    out[i][k * cfg.d_out + c] = leaky(agg);
                }
            }
        }
        out
    }

    #[test]
    fn path_graph_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = GatConfig::for_width(6, 1, 2).unwrap();
        let mut store = ParamStore::new();
        init_gat(&mut store, &cfg, &mut rng).unwrap();
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2)], true).unwrap();
        let mut dense = vec![vec![false; 3]; 3];
        for (s, t) in adj.edges() {
            dense[t][s] = true;
        }
        let h = Tensor::uniform(&[3, 6], 1.0, &mut rng);
        let mut tape = Tape::new();
        let hv = tape.leaf(h.clone());
        let (out, _) = gat_layer(&mut tape, &store, &cfg, 0, hv, &adj).unwrap();
        let expect = dense_layer(&h, &dense, &store, &cfg);
        for i in 0..3 {
            for (a, b) in tape.value(out).row(i).iter().zip(&expect[i]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_layers_reach_two_hops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = GatConfig::for_width(4, 2, 2).unwrap();
        let mut store = ParamStore::new();
        init_gat(&mut store, &cfg, &mut rng).unwrap();
        let adj = Adjacency::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], true).unwrap();
        let h = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let run = |layers: usize, h: &Tensor| {
            let mut c = cfg.clone();
            c.n_layers = layers;
            let mut tape = Tape::new();
            let hv = tape.leaf(h.clone());
            let o = gat_forward(&mut tape, &store, &c, hv, &adj).unwrap();
            tape.value(o.hidden).row(0).to_vec()
        };
        let mut bumped = h.clone();
        bumped.data_mut()[2 * 4] += 0.5;
        assert_eq!(run(1, &h), run(1, &bumped));
        let (base, moved) = (run(2, &h), run(2, &bumped));
        assert!(base.iter().zip(&moved).any(|(a, b)| (a - b).abs() > 1e-9));
    }
}
