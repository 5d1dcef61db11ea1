//! Stacked ensemble with convex weights learned on cross-validated
//! predictions via projected gradient descent on the simplex.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::forest::{Forest, ForestConfig};
use super::glm::{fit_linear, fit_logistic, predict_linear, LogisticFit};
use crate::error::Result;

const PG_ITERATIONS: usize = 500;
const PG_STEP: f64 = 0.1;
const PRED_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind", content = "config")]
pub enum BaseLearner {
    Glm,
    Forest(ForestConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    LogLoss,
    Squared,
}

#[derive(Debug, Clone)]
pub enum MemberFit {
    Logistic(LogisticFit),
    Linear(Vec<f64>),
    Forest(Forest),
}

impl MemberFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            MemberFit::Logistic(fit) => fit.predict(row),
            MemberFit::Linear(coefs) => predict_linear(coefs, row),
            MemberFit::Forest(forest) => forest.predict(row),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackFit {
    pub members: Vec<MemberFit>,
    pub weights: Vec<f64>,
    /// Per-member cross-validated loss on the training criterion.
    pub cv_losses: Vec<f64>,
    pub stacked_cv_loss: f64,
    pub separation: bool,
}

impl StackFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.members
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| w * m.predict(row))
            .sum()
    }
}

fn fit_member(
    learner: &BaseLearner,
    rows: &[usize],
    xs: &[Vec<f64>],
    ys: &[f64],
    loss: Loss,
    seed: u64,
) -> Result<MemberFit> {
    match learner {
        BaseLearner::Glm => {
            let data: Vec<(Vec<f64>, f64, f64)> =
                rows.iter().map(|&i| (xs[i].clone(), ys[i], 1.0)).collect();
            match loss {
                Loss::LogLoss => Ok(MemberFit::Logistic(fit_logistic(&data)?)),
                Loss::Squared => Ok(MemberFit::Linear(fit_linear(&data)?)),
            }
        }
        BaseLearner::Forest(cfg) => {
            let sub_x: Vec<Vec<f64>> = rows.iter().map(|&i| xs[i].clone()).collect();
            let sub_y: Vec<f64> = rows.iter().map(|&i| ys[i]).collect();
            Ok(MemberFit::Forest(Forest::fit(&sub_x, &sub_y, cfg, seed)))
        }
    }
}

fn point_loss(pred: f64, y: f64, loss: Loss) -> f64 {
    match loss {
        Loss::Squared => {
            let r = pred - y;
            r * r
        }
        Loss::LogLoss => {
            let p = pred.clamp(PRED_CLIP, 1.0 - PRED_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

fn mean_loss(weights: &[f64], cv_preds: &[Vec<f64>], ys: &[f64], loss: Loss) -> f64 {
    let n = ys.len() as f64;
    ys.iter()
        .enumerate()
        .map(|(i, &y)| {
            let pred: f64 = weights
                .iter()
                .zip(cv_preds)
                .map(|(w, preds)| w * preds[i])
                .sum();
            point_loss(pred, y, loss)
        })
        .sum::<f64>()
        / n
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut rho = 0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        if u + (1.0 - cumsum) / (k + 1) as f64 > 0.0 {
            rho = k + 1;
        }
    }
    let theta = (sorted[..rho].iter().sum::<f64>() - 1.0) / rho as f64;
    v.iter().map(|&u| (u - theta).max(0.0)).collect()
}

fn loss_gradient(weights: &[f64], cv_preds: &[Vec<f64>], ys: &[f64], loss: Loss) -> Vec<f64> {
    let n = ys.len() as f64;
    let m = cv_preds.len();
    let mut grad = vec![0.0; m];
    for (i, &y) in ys.iter().enumerate() {
        let pred: f64 = weights
            .iter()
            .zip(cv_preds)
            .map(|(w, preds)| w * preds[i])
            .sum();
        let dpred = match loss {
            Loss::Squared => 2.0 * (pred - y),
            Loss::LogLoss => {
                let p = pred.clamp(PRED_CLIP, 1.0 - PRED_CLIP);
                (p - y) / (p * (1.0 - p))
            }
        };
        for (g, preds) in grad.iter_mut().zip(cv_preds) {
            *g += dpred * preds[i] / n;
        }
    }
    grad
}

/// Fits the stacking ensemble. `groups` carries the cluster index of each
/// row so cross-validation folds never split a cluster.
pub fn fit_stack(
    xs: &[Vec<f64>],
    ys: &[f64],
    groups: &[usize],
    members: &[BaseLearner],
    stack_folds: usize,
    loss: Loss,
    seed: u64,
) -> Result<StackFit> {
    assert!(!members.is_empty());
    assert!(stack_folds >= 2);
    assert!(xs.len() >= 2 * stack_folds, "need >= 2 * stack_folds rows");
    let n = xs.len();
    let m = members.len();

    // single member: weight 1, no CV needed beyond the diagnostic
    let all_rows: Vec<usize> = (0..n).collect();

    // cluster-level CV folds
    let mut unique_groups: Vec<usize> = {
        let mut g = groups.to_vec();
        g.sort_unstable();
        g.dedup();
        g
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique_groups.shuffle(&mut rng);
    let group_fold: std::collections::HashMap<usize, usize> = unique_groups
        .iter()
        .enumerate()
        .map(|(k, &g)| (g, k % stack_folds))
        .collect();
    let row_fold: Vec<usize> = groups.iter().map(|g| group_fold[g]).collect();

    let mut cv_preds = vec![vec![0.0; n]; m];
    for fold in 0..stack_folds {
        let train: Vec<usize> = (0..n).filter(|&i| row_fold[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| row_fold[i] == fold).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        for (k, learner) in members.iter().enumerate() {
            let fit = fit_member(
                learner,
                &train,
                xs,
                ys,
                loss,
                seed ^ ((fold * m + k + 1) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )?;
            for &i in &test {
                cv_preds[k][i] = fit.predict(&xs[i]);
            }
        }
    }

    let cv_losses: Vec<f64> = (0..m)
        .map(|k| {
            ys.iter()
                .enumerate()
                .map(|(i, &y)| point_loss(cv_preds[k][i], y, loss))
                .sum::<f64>()
                / n as f64
        })
        .collect();

    let weights = if m == 1 {
        vec![1.0]
    } else {
        // start from the best of {corners, uniform}; projected gradient can
        // only improve from there, so the stacked CV loss never exceeds the
        // best single member's
        let uniform = vec![1.0 / m as f64; m];
        let mut best_w = uniform.clone();
        let mut best_loss = mean_loss(&uniform, &cv_preds, ys, loss);
        let all_equal = cv_losses
            .windows(2)
            .all(|w| (w[0] - w[1]).abs() < 1e-12);
        if !all_equal {
            for k in 0..m {
                let mut corner = vec![0.0; m];
                corner[k] = 1.0;
                let l = cv_losses[k];
                if l < best_loss {
                    best_loss = l;
                    best_w = corner;
                }
            }
            let mut w = best_w.clone();
            let mut current = best_loss;
            for _ in 0..PG_ITERATIONS {
                let grad = loss_gradient(&w, &cv_preds, ys, loss);
                let mut step = PG_STEP;
                let mut accepted = false;
                for _ in 0..30 {
                    let trial: Vec<f64> =
                        w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
                    let trial = project_simplex(&trial);
                    let l = mean_loss(&trial, &cv_preds, ys, loss);
                    if l < current - 1e-15 {
                        w = trial;
                        current = l;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            best_w = w;
        }
        best_w
    };

    let stacked_cv_loss = mean_loss(&weights, &cv_preds, ys, loss);
    let mut fitted = Vec::with_capacity(m);
    let mut separation = false;
    for (k, learner) in members.iter().enumerate() {
        let fit = fit_member(
            learner,
            &all_rows,
            xs,
            ys,
            loss,
            seed ^ ((k + 7001) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        if let MemberFit::Logistic(l) = &fit {
            separation |= l.separation;
        }
        fitted.push(fit);
    }
    Ok(StackFit {
        members: fitted,
        weights,
        cv_losses,
        stacked_cv_loss,
        separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, (i as f64) / n as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[1] + 0.5).collect();
        let groups: Vec<usize> = (0..n).map(|i| i / 5).collect();
        (xs, ys, groups)
    }

    #[test]
    fn single_member_gets_weight_one() {
        let (xs, ys, groups) = linear_data(60);
        let fit = fit_stack(&xs, &ys, &groups, &[BaseLearner::Glm], 3, Loss::Squared, 11).unwrap();
        assert_eq!(fit.weights, vec![1.0]);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((fit.predict(x) - y).abs() < 1e-8);
        }
    }

    #[test]
    fn weight_concentrates_on_strictly_better_member() {
        // exactly linear labels: glm interpolates, a tiny forest cannot
        let (xs, ys, groups) = linear_data(100);
        let members = vec![
            BaseLearner::Glm,
            BaseLearner::Forest(ForestConfig {
                n_trees: 5,
                max_depth: 1,
                min_leaf: 10,
                mtry: None,
            }),
        ];
        let fit = fit_stack(&xs, &ys, &groups, &members, 4, Loss::Squared, 5).unwrap();
        assert!(fit.cv_losses[0] < fit.cv_losses[1]);
        assert!(fit.weights[0] >= 0.5, "weights {:?}", fit.weights);
    }

    #[test]
    fn stacked_cv_loss_beats_best_member() {
        let mut state = 19u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let n = 120;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, next() * 2.0 - 1.0]).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let p = crate::nuisance::glm::expit(0.5 + x[1]);
                if next() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let groups: Vec<usize> = (0..n).map(|i| i / 6).collect();
        let members = vec![
            BaseLearner::Glm,
            BaseLearner::Forest(ForestConfig {
                n_trees: 30,
                max_depth: 3,
                min_leaf: 5,
                mtry: None,
            }),
        ];
        let fit = fit_stack(&xs, &ys, &groups, &members, 4, Loss::LogLoss, 23).unwrap();
        let best = fit.cv_losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(fit.stacked_cv_loss <= best + 1e-6);
    }

    #[test]
    fn simplex_projection_properties() {
        let w = project_simplex(&[0.8, 0.5, -0.1]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
        // already on the simplex: unchanged
        let w2 = project_simplex(&[0.25, 0.75]);
        assert!((w2[0] - 0.25).abs() < 1e-12 && (w2[1] - 0.75).abs() < 1e-12);
    }
}
