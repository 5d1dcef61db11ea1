//! Depth-limited regression tree forest used as an ensemble member.
//!
//! Trees are grown on bootstrap row resamples with feature subsampling and
//! exact variance-reduction splits. Binary labels are handled as a
//! regression on {0,1}, so leaf means are probabilities.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; defaults to sqrt(p) when unset.
    pub mtry: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: 6,
            min_leaf: 5,
            mtry: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], cfg: &ForestConfig, seed: u64) -> Forest {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let p = xs[0].len();
        let mtry = cfg.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p);
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let sample: Vec<usize> = (0..xs.len()).map(|_| rng.gen_range(0..xs.len())).collect();
                let mut tree = Tree { nodes: Vec::new() };
                grow(&mut tree, xs, ys, sample, 0, cfg, mtry, &mut rng);
                tree
            })
            .collect();
        Forest { trees }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / self.trees.len() as f64
    }
}

fn grow(
    tree: &mut Tree,
    xs: &[Vec<f64>],
    ys: &[f64],
    rows: Vec<usize>,
    depth: usize,
    cfg: &ForestConfig,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let n = rows.len();
    let mean = rows.iter().map(|&i| ys[i]).sum::<f64>() / n as f64;
    let node_idx = tree.nodes.len();
    if depth >= cfg.max_depth || n < 2 * cfg.min_leaf {
        tree.nodes.push(Node::Leaf(mean));
        return node_idx;
    }

    let p = xs[0].len();
    let mut features: Vec<usize> = (0..p).collect();
    features.shuffle(rng);
    features.truncate(mtry);

    let total_sum: f64 = rows.iter().map(|&i| ys[i]).sum();
    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, score)
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in &features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (xs[i][f], ys[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += pairs[k].1;
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            if (k + 1) < cfg.min_leaf || (n - k - 1) < cfg.min_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            // variance reduction up to constants: sum_l^2/n_l + sum_r^2/n_r
            let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
            if best.map_or(true, |(_, _, s)| score > s) {
                let threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
                best = Some((f, threshold, score));
            }
        }
    }

    let Some((feature, threshold, _)) = best else {
        tree.nodes.push(Node::Leaf(mean));
        return node_idx;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&i| xs[i][feature] <= threshold);
    // placeholder, patched after children are grown
    tree.nodes.push(Node::Leaf(mean));
    let left = grow(tree, xs, ys, left_rows, depth + 1, cfg, mtry, rng);
    let right = grow(tree, xs, ys, right_rows, depth + 1, cfg, mtry, rng);
    tree.nodes[node_idx] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    node_idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_step_function() {
        let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] < 0.5 { 1.0 } else { 3.0 }).collect();
        let forest = Forest::fit(
            &xs,
            &ys,
            &ForestConfig {
                n_trees: 50,
                ..ForestConfig::default()
            },
            1,
        );
        assert!((forest.predict(&[0.2]) - 1.0).abs() < 0.2);
        assert!((forest.predict(&[0.8]) - 3.0).abs() < 0.2);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i as f64).sin(), (i as f64).cos()])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * 2.0 + x[1]).collect();
        let cfg = ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        };
        let f1 = Forest::fit(&xs, &ys, &cfg, 9);
        let f2 = Forest::fit(&xs, &ys, &cfg, 9);
        for row in &xs {
            assert_eq!(f1.predict(row), f2.predict(row));
        }
    }

    #[test]
    fn constant_labels_predict_the_constant() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let ys = vec![2.5; 40];
        let forest = Forest::fit(&xs, &ys, &ForestConfig::default(), 3);
        assert_eq!(forest.predict(&[17.0]), 2.5);
    }
}
