//! Simplified SCM series sampler: random DAGs whose roots are realized from
//! kernel recipes (periodic, smoothed-noise and ramp components via spectral
//! or basis approximation) and whose children apply edge-specific
//! non-linear activations to their parents followed by random linear
//! aggregation. Every node is emitted as one series.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{znorm, DatagenError, SeriesRecord, NORM_EPS};

pub const MIN_LENGTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelComponent {
    /// Integer cycles over the series; realized as a pure sinusoid.
    Periodic { freq: u32, amp: f64, phase: f64 },
    /// Smooth stationary wiggle: Gaussian-window moving average of white
    /// noise, rescaled to unit std.
    Rbf { lengthscale: f64, amp: f64 },
    /// Centered linear ramp.
    Linear { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootRecipe {
    pub components: Vec<KernelComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeActivation {
    Tanh,
    Sin,
    Relu,
    Identity,
}

impl EdgeActivation {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Self::Tanh => v.tanh(),
            Self::Sin => v.sin(),
            Self::Relu => v.max(0.0),
            Self::Identity => v,
        }
    }
}

/// A structural causal graph over series-valued nodes. Parents of node i all
/// have index < i, which makes the graph acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmGraph {
    pub parents: Vec<Vec<usize>>,
    /// Kernel recipe for every root (node without parents).
    pub recipes: Vec<Option<RootRecipe>>,
    pub edge_activations: Vec<Vec<EdgeActivation>>,
    pub weights: Vec<Vec<f64>>,
}

impl ScmGraph {
    pub fn n_nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(DatagenError::Graph("graph has no nodes".into()));
        }
        if self.recipes.len() != n || self.edge_activations.len() != n || self.weights.len() != n {
            return Err(DatagenError::Graph("per-node arrays differ in length".into()));
        }
        let mut has_root = false;
        for (i, ps) in self.parents.iter().enumerate() {
            if ps.is_empty() {
                has_root = true;
                if self.recipes[i].is_none() {
                    return Err(DatagenError::Graph(format!("root {i} has no recipe")));
                }
            }
            for &p in ps {
                if p >= i {
                    return Err(DatagenError::Graph(format!(
                        "edge {p} -> {i} violates the constructive ordering (cycle)"
                    )));
                }
            }
            if self.edge_activations[i].len() != ps.len() || self.weights[i].len() != ps.len() {
                return Err(DatagenError::Graph(format!(
                    "node {i}: edge annotation counts do not match parent count"
                )));
            }
        }
        if !has_root {
            return Err(DatagenError::Graph("graph has no root node".into()));
        }
        Ok(())
    }
}

fn sample_recipe(rng: &mut ChaCha8Rng) -> RootRecipe {
    let n_comp = rng.random_range(1..=3);
    let components = (0..n_comp)
        .map(|_| match rng.random_range(0..3) {
            0 => KernelComponent::Periodic {
                freq: rng.random_range(1..=8),
                amp: 0.5 + rng.random::<f64>(),
                phase: rng.random::<f64>() * std::f64::consts::TAU,
            },
            1 => KernelComponent::Rbf {
                lengthscale: 2.0 + rng.random::<f64>() * 30.0,
                amp: 0.5 + rng.random::<f64>(),
            },
            _ => KernelComponent::Linear {
                slope: rng.random::<f64>() * 4.0 - 2.0,
            },
        })
        .collect();
    RootRecipe { components }
}

/// Sample a random DAG: node 0 is always a root, later nodes are roots with
/// probability 1/4, otherwise they draw 1..=3 parents among earlier nodes.
pub fn sample_graph(rng: &mut ChaCha8Rng) -> ScmGraph {
    let n = rng.random_range(1..=6);
    let mut parents = Vec::with_capacity(n);
    let mut recipes = Vec::with_capacity(n);
    let mut edge_activations = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let is_root = i == 0 || rng.random::<f64>() < 0.25;
        if is_root {
            parents.push(Vec::new());
            recipes.push(Some(sample_recipe(rng)));
            edge_activations.push(Vec::new());
            weights.push(Vec::new());
        } else {
            let k = rng.random_range(1..=i.min(3));
            let mut ps = Vec::with_capacity(k);
            while ps.len() < k {
                let cand = rng.random_range(0..i);
                if !ps.contains(&cand) {
                    ps.push(cand);
                }
            }
            ps.sort_unstable();
            let acts = (0..k)
                .map(|_| match rng.random_range(0..4) {
                    0 => EdgeActivation::Tanh,
                    1 => EdgeActivation::Sin,
                    2 => EdgeActivation::Relu,
                    _ => EdgeActivation::Identity,
                })
                .collect();
            let ws = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            parents.push(ps);
            recipes.push(None);
            edge_activations.push(acts);
            weights.push(ws);
        }
    }
    ScmGraph {
        parents,
        recipes,
        edge_activations,
        weights,
    }
}

/// Realize one root recipe as a length-T series.
pub fn realize_root(recipe: &RootRecipe, t_len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; t_len];
    for comp in &recipe.components {
        match comp {
            KernelComponent::Periodic { freq, amp, phase } => {
                for (t, o) in out.iter_mut().enumerate() {
                    *o += amp
                        * (std::f64::consts::TAU * *freq as f64 * t as f64 / t_len as f64 + phase)
                            .sin();
                }
            }
            KernelComponent::Rbf { lengthscale, amp } => {
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let white: Vec<f64> = (0..t_len).map(|_| normal.sample(rng)).collect();
                let radius = (3.0 * lengthscale).ceil() as i64;
                let window: Vec<f64> = (-radius..=radius)
                    .map(|j| (-0.5 * (j as f64 / lengthscale).powi(2)).exp())
                    .collect();
                let norm = window.iter().map(|w| w * w).sum::<f64>().sqrt();
                for (t, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (wi, w) in window.iter().enumerate() {
                        let src = t as i64 + wi as i64 - radius;
                        if src >= 0 && (src as usize) < t_len {
                            acc += w * white[src as usize];
                        }
                    }
                    *o += amp * acc / norm;
                }
            }
            KernelComponent::Linear { slope } => {
                for (t, o) in out.iter_mut().enumerate() {
                    *o += slope * (2.0 * t as f64 / (t_len - 1).max(1) as f64 - 1.0);
                }
            }
        }
    }
    out
}

/// Realize every node of the graph; children apply their edge activations to
/// z-scored parents and aggregate linearly.
pub fn realize_graph(
    graph: &ScmGraph,
    t_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, DatagenError> {
    graph.validate()?;
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(graph.n_nodes());
    for i in 0..graph.n_nodes() {
        if graph.parents[i].is_empty() {
            let recipe = graph.recipes[i].as_ref().expect("validated root recipe");
            series.push(realize_root(recipe, t_len, rng));
        } else {
            let mut child = vec![0.0; t_len];
            for ((&p, act), &w) in graph.parents[i]
                .iter()
                .zip(&graph.edge_activations[i])
                .zip(&graph.weights[i])
            {
                let (parent_z, _) = znorm(&series[p], NORM_EPS);
                for (c, v) in child.iter_mut().zip(&parent_z) {
                    *c += w * act.apply(*v);
                }
            }
            series.push(child);
        }
    }
    Ok(series)
}

/// Generate `count` series by sampling graphs until enough nodes have been
/// emitted. Deterministic under the seed.
pub fn cauker_lite(seed: u64, t_len: usize, count: usize) -> Result<Vec<SeriesRecord>, DatagenError> {
    if t_len < MIN_LENGTH {
        return Err(DatagenError::Config(format!(
            "cauker series length {t_len} must be >= {MIN_LENGTH}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5c);
    let mut records = Vec::with_capacity(count);
    let mut graph_idx = 0usize;
    while records.len() < count {
        let graph = sample_graph(&mut rng);
        let all = realize_graph(&graph, t_len, &mut rng)?;
        for (node, target) in all.into_iter().enumerate() {
            if records.len() >= count {
                break;
            }
            if !target.iter().all(|v| v.is_finite()) {
                return Err(DatagenError::NonFinite {
                    context: format!("cauker graph {graph_idx} node {node}"),
                });
            }
            // Near-constant children (e.g. relu of a negative signal) carry
            // no signal; keep them, normalization guards downstream.
            records.push(SeriesRecord {
                id: format!("cauker-{seed}-{graph_idx}-{node}"),
                freq: "H".to_string(),
                season_m: 1,
                target,
            });
        }
        graph_idx += 1;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::local_std;

    #[test]
    fn single_root_graph_emits_the_root_realization() {
        let recipe = RootRecipe {
            components: vec![KernelComponent::Periodic {
                freq: 3,
                amp: 1.0,
                phase: 0.0,
            }],
        };
        let graph = ScmGraph {
            parents: vec![vec![]],
            recipes: vec![Some(recipe.clone())],
            edge_activations: vec![vec![]],
            weights: vec![vec![]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = realize_graph(&graph, 64, &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let direct = realize_root(&recipe, 64, &mut rng2);
        assert_eq!(out[0], direct);
    }

    #[test]
    fn sampled_graphs_are_acyclic_for_many_seeds() {
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = sample_graph(&mut rng);
            g.validate().unwrap();
            for (i, ps) in g.parents.iter().enumerate() {
                for &p in ps {
                    assert!(p < i);
                }
            }
        }
    }

    #[test]
    fn cyclic_spec_is_rejected() {
        let graph = ScmGraph {
            parents: vec![vec![], vec![1]],
            recipes: vec![
                Some(RootRecipe {
                    components: vec![KernelComponent::Linear { slope: 1.0 }],
                }),
                None,
            ],
            edge_activations: vec![vec![], vec![EdgeActivation::Identity]],
            weights: vec![vec![], vec![1.0]],
        };
        assert!(matches!(
            graph.validate(),
            Err(DatagenError::Graph(_))
        ));
    }

    #[test]
    fn pure_periodic_root_has_dominant_bin_at_its_frequency() {
        // Straight-line DFT oracle over half the spectrum.
        let t_len = 512usize;
        for freq in [2u32, 5, 8] {
            let recipe = RootRecipe {
                components: vec![KernelComponent::Periodic {
                    freq,
                    amp: 1.0,
                    phase: 0.7,
                }],
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x = realize_root(&recipe, t_len, &mut rng);
            let mut best = (0usize, 0.0f64);
            for bin in 1..t_len / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let ang = std::f64::consts::TAU * bin as f64 * t as f64 / t_len as f64;
                    re += v * ang.cos();
                    im -= v * ang.sin();
                }
                let mag = (re * re + im * im).sqrt();
                if mag > best.1 {
                    best = (bin, mag);
                }
            }
            assert_eq!(best.0 as u32, freq, "dominant bin mismatch");
        }
    }

    #[test]
    fn cauker_lite_is_deterministic_and_sized() {
        let a = cauker_lite(9, 64, 10).unwrap();
        let b = cauker_lite(9, 64, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|r| r.target.len() == 64));
        let c = cauker_lite(10, 64, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_short_length_is_config_error() {
        assert!(cauker_lite(1, 8, 1).is_err());
    }

    #[test]
    fn rbf_roots_are_smooth() {
        let recipe = RootRecipe {
            components: vec![KernelComponent::Rbf {
                lengthscale: 16.0,
                amp: 1.0,
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = realize_root(&recipe, 256, &mut rng);
        let step_var = local_std(
            &x.windows(2).map(|w| w[1] - w[0]).collect::<Vec<f64>>(),
        );
        assert!(
            step_var < 0.5 * local_std(&x),
            "smoothed noise should vary slowly relative to its amplitude"
        );
    }
}
