use serde::{Deserialize, Serialize};

use super::net::EmbeddingNet;
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::ndcore::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Proto,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl HeadConfig {
    pub fn proto() -> Self {
        HeadConfig { kind: HeadKind::Proto, ridge_lambda: default_lambda() }
    }

    pub fn ridge(lambda: f64) -> Self {
        HeadConfig { kind: HeadKind::Ridge, ridge_lambda: lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == HeadKind::Ridge && !(self.ridge_lambda > 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "ridge_lambda must be > 0, got {}",
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Adapted {
    /// Class prototypes, n_way × d.
    Proto(NodeId),
    /// Ridge weights, d × n_way.
    Ridge(NodeId),
}

/// A classifier adapted to one episode's support set.
///
/// Owns the episode's computation graph, so losses computed through it can be
/// differentiated back to the embedding parameters.
pub struct AdaptedClassifier<'a> {
    net: &'a EmbeddingNet,
    graph: Graph,
    params: Vec<NodeId>,
    adapted: Adapted,
    n_way: usize,
}

/// Per-episode query metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    pub loss: f64,
    pub accuracy: f64,
    /// Mean over queries of `log(p_y / (1 - p_y))`.
    pub log_odds: f64,
}

/// Fits the head on support embeddings.
pub fn adapt<'a>(
    net: &'a EmbeddingNet,
    head: &HeadConfig,
    support: &Tensor,
    labels: &[usize],
    n_way: usize,
) -> Result<AdaptedClassifier<'a>> {
    head.validate()?;
    if support.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} support labels for {} support rows",
            labels.len(),
            support.rows()
        )));
    }
    let mut counts = vec![0usize; n_way];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| {
            Error::Contract(format!("support label {l} outside 0..{n_way}"))
        })? += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!("class {missing} has no support examples")));
    }

    let mut g = Graph::new();
    let params = net.register(&mut g);
    let x = g.constant(support.clone());
    let emb = net.forward(&mut g, &params, x)?;
    let n_s = labels.len();

    let adapted = match head.kind {
        HeadKind::Proto => {
            let mut avg = vec![0.0; n_way * n_s];
            for (i, &l) in labels.iter().enumerate() {
                avg[l * n_s + i] = 1.0 / counts[l] as f64;
            }
            let avg = g.constant(Tensor::new(vec![n_way, n_s], avg)?);
            Adapted::Proto(g.matmul(avg, emb)?)
        }
        HeadKind::Ridge => {
            let d = net.embed_dim();
            let mut onehot = vec![0.0; n_s * n_way];
            for (i, &l) in labels.iter().enumerate() {
                onehot[i * n_way + l] = 1.0;
            }
            let y = g.constant(Tensor::new(vec![n_s, n_way], onehot)?);
            let reg = g.constant(Tensor::identity(d).map(|v| v * head.ridge_lambda));
            let xt = g.transpose(emb)?;
            let gram = g.matmul(xt, emb)?;
            let a = g.add(gram, reg)?;
            let b = g.matmul(xt, y)?;
            Adapted::Ridge(g.linear_solve_spd(a, b)?)
        }
    };
    Ok(AdaptedClassifier {
        net,
        graph: g,
        params,
        adapted,
        n_way,
    })
}

/// Adapts on an episode's support set.
pub fn adapt_episode<'a>(
    net: &'a EmbeddingNet,
    head: &HeadConfig,
    episode: &Episode,
) -> Result<AdaptedClassifier<'a>> {
    adapt(
        net,
        head,
        &episode.support_features,
        &episode.support_labels,
        episode.n_way(),
    )
}

impl AdaptedClassifier<'_> {
    pub fn n_way(&self) -> usize {
        self.n_way
    }

    /// Prototypes (n_way × d) or ridge weights (d × n_way).
    pub fn head_value(&self) -> &Tensor {
        match self.adapted {
            Adapted::Proto(id) | Adapted::Ridge(id) => self.graph.value(id),
        }
    }

    /// Value of a node built through this classifier, such as [`Self::logits`].
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.graph.value(id)
    }

    /// Query logits: negative squared distance to prototypes, or `embedding · W`.
    pub fn logits(&mut self, query: &Tensor) -> Result<NodeId> {
        let q = self.graph.constant(query.clone());
        let emb = self.net.forward(&mut self.graph, &self.params, q)?;
        match self.adapted {
            Adapted::Proto(protos) => {
                let d = self.graph.squared_euclidean_pairwise(emb, protos)?;
                self.graph.scale(d, -1.0)
            }
            Adapted::Ridge(w) => self.graph.matmul(emb, w),
        }
    }

    fn check_labels(&self, query: &Tensor, labels: &[usize]) -> Result<()> {
        if query.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} query labels for {} query rows",
                labels.len(),
                query.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_way) {
            return Err(Error::Contract(format!(
                "query label {bad} outside 0..{}",
                self.n_way
            )));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over query examples; returns the loss node and value.
    pub fn episode_loss(&mut self, query: &Tensor, labels: &[usize]) -> Result<(NodeId, f64)> {
        self.check_labels(query, labels)?;
        let z = self.logits(query)?;
        let loss = self.graph.softmax_cross_entropy(z, labels)?;
        Ok((loss, self.graph.value(loss).item()?))
    }

    /// Fraction of queries whose argmax logit (lowest index on ties) equals the label.
    pub fn episode_accuracy(&mut self, query: &Tensor, labels: &[usize]) -> Result<f64> {
        self.check_labels(query, labels)?;
        let z = self.logits(query)?;
        Ok(accuracy_from_logits(self.graph.value(z), labels))
    }

    /// Loss, accuracy and log-odds from a single forward pass.
    pub fn score(&mut self, query: &Tensor, labels: &[usize]) -> Result<QueryScore> {
        self.check_labels(query, labels)?;
        let z = self.logits(query)?;
        let loss = self.graph.softmax_cross_entropy(z, labels)?;
        let logits = self.graph.value(z);
        Ok(QueryScore {
            loss: self.graph.value(loss).item()?,
            accuracy: accuracy_from_logits(logits, labels),
            log_odds: mean_log_odds(logits, labels),
        })
    }

    /// Gradients of `loss` for every embedding parameter, in `EmbeddingNet::params` order.
    pub fn gradients(&self, loss: NodeId) -> Result<Vec<Tensor>> {
        let grads = self.graph.backward(loss)?;
        Ok(self.params.iter().map(|&p| grads.get(p)).collect())
    }
}

pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax_lowest(logits.row(i)) == l)
        .count();
    correct as f64 / labels.len() as f64
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// `log p_y − log(1 − p_y)` = `z_y − logsumexp_{j≠y} z_j`, averaged over rows.
pub fn mean_log_odds(logits: &Tensor, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let row = logits.row(i);
            let others = row.iter().enumerate().filter(|&(j, _)| j != l).map(|(_, &v)| v);
            row[l] - log_sum_exp(others)
        })
        .sum();
    total / labels.len() as f64
}

/// Evaluation-only query metrics for one episode.
pub fn score_episode(net: &EmbeddingNet, head: &HeadConfig, episode: &Episode) -> Result<QueryScore> {
    let mut clf = adapt_episode(net, head, episode)?;
    clf.score(&episode.query_features, &episode.query_labels)
}

/// Query loss and its gradient with respect to every embedding parameter.
pub fn loss_and_gradients(
    net: &EmbeddingNet,
    head: &HeadConfig,
    episode: &Episode,
) -> Result<(f64, Vec<Tensor>)> {
    let mut clf = adapt_episode(net, head, episode)?;
    let (node, value) = clf.episode_loss(&episode.query_features, &episode.query_labels)?;
    Ok((value, clf.gradients(node)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(d: usize) -> EmbeddingNet {
        EmbeddingNet::from_layers(vec![(Tensor::identity(d), Tensor::zeros(&[d]))]).unwrap()
    }

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn prototype_is_class_mean() {
        let net = identity_net(2);
        let s = rows(&[vec![0., 0.], vec![5., 5.], vec![2., 2.]]);
        let clf = adapt(&net, &HeadConfig::proto(), &s, &[0, 1, 0], 2).unwrap();
        assert_eq!(clf.head_value().row(0), &[1., 1.]);
        assert_eq!(clf.head_value().row(1), &[5., 5.]);
    }

    #[test]
    fn ridge_closed_form_identity() {
        let net = identity_net(2);
        let clf = adapt(&net, &HeadConfig::ridge(1.0), &Tensor::identity(2), &[0, 1], 2).unwrap();
        assert!(clf.head_value().max_abs_diff(&Tensor::identity(2).map(|v| 0.5 * v)) < 1e-15);
    }

    #[test]
    fn ridge_large_lambda_shrinks_to_zero() {
        let net = identity_net(2);
        let s = rows(&[vec![1., 2.], vec![-3., 0.5]]);
        let clf = adapt(&net, &HeadConfig::ridge(1e12), &s, &[0, 1], 2).unwrap();
        assert!(clf.head_value().data().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn missing_support_class_rejected() {
        let net = identity_net(2);
        let s = rows(&[vec![0., 0.], vec![1., 1.]]);
        assert!(matches!(
            adapt(&net, &HeadConfig::proto(), &s, &[0, 0], 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn saturated_query_has_near_zero_loss() {
        let net = identity_net(2);
        let s = rows(&[vec![0., 0.], vec![100., 0.], vec![0., 100.]]);
        let mut clf = adapt(&net, &HeadConfig::proto(), &s, &[0, 1, 2], 3).unwrap();
        let (_, loss) = clf.episode_loss(&rows(&[vec![0., 0.]]), &[0]).unwrap();
        assert!(loss < 1e-12);
        assert_eq!(clf.episode_accuracy(&rows(&[vec![0., 0.]]), &[0]).unwrap(), 1.0);
    }

    #[test]
    fn equidistant_prototypes_give_ln_n() {
        let net = identity_net(2);
        let s: Vec<Vec<f64>> = (0..5)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let mut clf = adapt(&net, &HeadConfig::proto(), &rows(&s), &[0, 1, 2, 3, 4], 5).unwrap();
        let (_, loss) = clf.episode_loss(&rows(&[vec![0., 0.]]), &[3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_way_scalar_oracle() {
        // prototypes at 0 and 1, query at 0.25 with label 0
        let net = identity_net(2);
        let s = rows(&[vec![0., 0.], vec![1., 0.]]);
        let mut clf = adapt(&net, &HeadConfig::proto(), &s, &[0, 1], 2).unwrap();
        let (_, loss) = clf.episode_loss(&rows(&[vec![0.25, 0.]]), &[0]).unwrap();
        let (z0, z1) = (-0.0625f64, -0.5625f64);
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        assert!((loss - (-p0.ln())).abs() < 1e-15);
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let logits = Tensor::matrix(3, 2, vec![1., 1., 0., 2., 3., 1.]).unwrap();
        assert_eq!(accuracy_from_logits(&logits, &[0, 1, 0]), 1.0);
        assert_eq!(accuracy_from_logits(&logits, &[1, 0, 1]), 0.0);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            data.extend([1.0, 0.0]);
            labels.push(if i < 24 { 0 } else { 1 });
        }
        let z = Tensor::matrix(30, 2, data).unwrap();
        assert!((accuracy_from_logits(&z, &labels) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn query_label_out_of_range() {
        let net = identity_net(2);
        let s = rows(&[vec![0., 0.], vec![1., 0.]]);
        let mut clf = adapt(&net, &HeadConfig::proto(), &s, &[0, 1], 2).unwrap();
        assert!(matches!(
            clf.episode_loss(&rows(&[vec![0., 0.]]), &[2]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn log_odds_of_uniform_two_way_is_zero() {
        let z = Tensor::matrix(1, 2, vec![0.3, 0.3]).unwrap();
        assert!(mean_log_odds(&z, &[0]).abs() < 1e-15);
    }

    #[test]
    fn ridge_lambda_must_be_positive() {
        assert!(HeadConfig::ridge(0.0).validate().is_err());
        assert!(HeadConfig::ridge(-1.0).validate().is_err());
    }
}
