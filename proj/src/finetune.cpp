#include "langsg/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "langsg/errors.hpp"

namespace langsg {

template <typename T>
Heads<T>::Heads(int feature_dim, const HeadConfig& config, int num_objects, int num_predicates, Rng& rng)
    : object(MlpSpec::hidden_bn_relu({feature_dim, config.hidden, num_objects}), "head.object", rng),
      predicate(MlpSpec::hidden_bn_relu({feature_dim, config.hidden, num_predicates}), "head.predicate", rng) {}

Mat<double> classify_nodes(const Mat<double>& logits) {
  Mat<double> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Mat<double> classify_edges(const Mat<double>& logits) {
  // split by sign so large magnitudes never overflow exp
  return logits.unaryExpr([](double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
}

template <typename T>
template <typename U>
FinetuneModel<U> FinetuneModel<T>::cast() const {
  FinetuneModel<U> out;
  out.backbone = backbone.template cast<U>();
  out.heads.object = heads.object.template cast<U>();
  out.heads.predicate = heads.predicate.template cast<U>();
  out.has_projectors = has_projectors;
  if (has_projectors) {
    out.projectors.node = projectors.node.template cast<U>();
    out.projectors.edge = projectors.edge.template cast<U>();
    out.projectors.triplet = projectors.triplet.template cast<U>();
  }
  return out;
}

template <typename T>
FinetuneModel<T> make_finetune_model(const EncoderConfig& encoder, const HeadConfig& head,
                                     const LabelVocabulary& vocab, Rng& rng) {
  if (head.hidden < 1) throw ValidationError("head hidden width must be positive");
  if (vocab.num_objects() == 0 || vocab.num_predicates() == 0) throw ValidationError("empty vocabulary");
  FinetuneModel<T> m;
  m.backbone = Backbone<T>(encoder, rng);
  m.heads = Heads<T>(encoder.feature_dim, head, static_cast<int>(vocab.num_objects()),
                     static_cast<int>(vocab.num_predicates()), rng);
  return m;
}

GraphTargets build_targets(const PreparedGraph& graph, const LabelVocabulary& vocab) {
  GraphTargets t;
  for (const auto& label : graph.node_labels) t.node_classes.push_back(vocab.object_index(label));
  std::map<std::pair<int, int>, std::vector<int>> by_pair;
  for (const auto& r : graph.relationships) {
    by_pair[{r.subject_id, r.object_id}].push_back(vocab.predicate_index(r.predicate));
  }
  const auto p = static_cast<Eigen::Index>(vocab.num_predicates());
  t.edge_targets = Mat<double>::Zero(static_cast<Eigen::Index>(graph.edges.size()), p);
  const int neutral = vocab.neutral_index();
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto [i, j] = graph.edges[e];
    auto it = by_pair.find({graph.node_ids[i], graph.node_ids[j]});
    const auto row = static_cast<Eigen::Index>(e);
    if (it == by_pair.end()) {
      t.edge_targets(row, neutral) = 1.0;
    } else {
      for (int c : it->second) t.edge_targets(row, c) = 1.0;
    }
  }
  return t;
}

void FinetuneConfig::validate() const {
  if (lambda_obj < 0 || lambda_pred < 0) throw ValidationError("finetune: loss weights must be non-negative");
  if (!(lr > 0)) throw ValidationError("finetune: lr must be positive");
  if (batch_size < 1) throw ValidationError("finetune: batch_size must be >= 1");
  if (epochs < 1) throw ValidationError("finetune: epochs must be >= 1");
  if (head.hidden < 1) throw ValidationError("finetune: head hidden width must be positive");
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

// Mean cross-entropy over rows; optionally d/dlogits (scaled) into grad.
double cross_entropy(const Mat<double>& probs, const std::vector<int>& classes, Mat<double>* grad, double scale) {
  if (probs.rows() == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(probs.rows());
  double total = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = classes[static_cast<std::size_t>(r)];
    const double py = probs(r, y);
    total -= std::log(clamp_prob(py));
    if (grad && py > kProbabilityClamp) {
      grad->row(r) += scale * inv * probs.row(r);
      (*grad)(r, y) -= scale * inv;
    }
  }
  return total * inv;
}

double binary_cross_entropy(const Mat<double>& probs, const Mat<double>& targets, Mat<double>* grad, double scale) {
  if (probs.size() == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(probs.size());
  double total = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(r, c), y = targets(r, c);
      const double pc = clamp_prob(p);
      total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
      if (grad && p > kProbabilityClamp && p < 1.0 - kProbabilityClamp) (*grad)(r, c) += scale * inv * (p - y);
    }
  }
  return total * inv;
}

void check_targets(const Mat<double>& node_probs, const Mat<double>& edge_probs, const GraphTargets& t) {
  if (static_cast<std::size_t>(node_probs.rows()) != t.node_classes.size()) {
    throw ShapeError("finetune loss: node count does not match targets");
  }
  for (int c : t.node_classes) {
    if (c < 0 || c >= node_probs.cols()) throw ShapeError("finetune loss: node class out of range");
  }
  if (edge_probs.rows() != t.edge_targets.rows() || (edge_probs.rows() > 0 && edge_probs.cols() != t.edge_targets.cols())) {
    throw ShapeError("finetune loss: edge probabilities do not match targets");
  }
}

}  // namespace

FinetuneLoss finetune_loss(const Mat<double>& node_probs, const Mat<double>& edge_probs, const GraphTargets& targets,
                           const FinetuneConfig& config) {
  check_targets(node_probs, edge_probs, targets);
  FinetuneLoss l;
  l.ce = cross_entropy(node_probs, targets.node_classes, nullptr, 0);
  l.bce = binary_cross_entropy(edge_probs, targets.edge_targets, nullptr, 0);
  l.total = config.lambda_obj * l.ce + config.lambda_pred * l.bce;
  if (!std::isfinite(l.total)) throw TrainingError("fine-tuning loss is not finite");
  return l;
}

template <typename T>
FinetuneLoss finetune_objective(FinetuneModel<T>& model, std::span<const PreparedGraph* const> batch,
                                std::span<const GraphTargets> targets, const FinetuneConfig& config,
                                bool compute_grad) {
  if (batch.size() != targets.size()) throw ShapeError("finetune_objective: batch and targets differ in size");
  if (batch.empty()) throw std::invalid_argument("finetune_objective: empty batch");
  const std::size_t nb = batch.size();
  const double inv_batch = 1.0 / static_cast<double>(nb);
  const Eigen::Index f = model.backbone.feature_dim();

  std::vector<EncodeCache<T>> caches(nb);
  std::vector<Eigen::Index> node_off{0}, edge_off{0};
  std::vector<FeatureGraph<T>> feats;
  feats.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    feats.push_back(model.backbone.encode_train(*batch[b], caches[b]));
    node_off.push_back(node_off.back() + feats.back().nodes.rows());
    edge_off.push_back(edge_off.back() + feats.back().edges.rows());
  }
  Mat<T> all_nodes(node_off.back(), f), all_edges(edge_off.back(), f);
  for (std::size_t b = 0; b < nb; ++b) {
    all_nodes.middleRows(node_off[b], feats[b].nodes.rows()) = feats[b].nodes;
    all_edges.middleRows(edge_off[b], feats[b].edges.rows()) = feats[b].edges;
  }

  MlpCache<T> co, cp;
  const Mat<double> node_probs = classify_nodes(model.heads.object.forward_train(all_nodes, co).template cast<double>());
  const bool any_edges = edge_off.back() > 0;
  Mat<double> edge_probs;
  if (any_edges) edge_probs = classify_edges(model.heads.predicate.forward_train(all_edges, cp).template cast<double>());

  Mat<double> d_node_logits, d_edge_logits;
  if (compute_grad) {
    d_node_logits = Mat<double>::Zero(node_probs.rows(), node_probs.cols());
    if (any_edges) d_edge_logits = Mat<double>::Zero(edge_probs.rows(), edge_probs.cols());
  }

  FinetuneLoss loss;
  for (std::size_t b = 0; b < nb; ++b) {
    const Eigen::Index n = node_off[b + 1] - node_off[b], m = edge_off[b + 1] - edge_off[b];
    const Mat<double> np = node_probs.middleRows(node_off[b], n);
    const Mat<double> ep = m > 0 ? Mat<double>(edge_probs.middleRows(edge_off[b], m)) : Mat<double>();
    check_targets(np, ep, targets[b]);
    Mat<double> gn, ge;
    if (compute_grad) {
      gn = Mat<double>::Zero(n, np.cols());
      ge = Mat<double>::Zero(m, m > 0 ? ep.cols() : 0);
    }
    const double ce = cross_entropy(np, targets[b].node_classes, compute_grad ? &gn : nullptr,
                                    config.lambda_obj * inv_batch);
    const double bce = m > 0 ? binary_cross_entropy(ep, targets[b].edge_targets, compute_grad ? &ge : nullptr,
                                                    config.lambda_pred * inv_batch)
                             : 0.0;
    loss.ce += ce * inv_batch;
    loss.bce += bce * inv_batch;
    loss.total += (config.lambda_obj * ce + config.lambda_pred * bce) * inv_batch;
    if (compute_grad) {
      d_node_logits.middleRows(node_off[b], n) = gn;
      if (m > 0) d_edge_logits.middleRows(edge_off[b], m) = ge;
    }
  }
  if (!std::isfinite(loss.total)) throw TrainingError("fine-tuning loss is not finite");

  if (compute_grad) {
    const Mat<T> d_nodes = model.heads.object.backward(d_node_logits.template cast<T>(), co);
    Mat<T> d_edges = Mat<T>::Zero(all_edges.rows(), f);
    if (any_edges) d_edges = model.heads.predicate.backward(d_edge_logits.template cast<T>(), cp);
    if (!config.freeze_backbone) {
      for (std::size_t b = 0; b < nb; ++b) {
        const Eigen::Index n = node_off[b + 1] - node_off[b], m = edge_off[b + 1] - edge_off[b];
        model.backbone.backward(*batch[b], caches[b], d_nodes.middleRows(node_off[b], n),
                                d_edges.middleRows(edge_off[b], m));
      }
    }
  }
  return loss;
}

template <typename T>
Predictions predict(const FinetuneModel<T>& model, const PreparedGraph& graph) {
  const FeatureGraph<T> fg = model.backbone.encode(graph);
  Predictions p;
  p.node_probs = classify_nodes(model.heads.object.forward(fg.nodes).template cast<double>());
  if (fg.edges.rows() > 0) {
    p.edge_probs = classify_edges(model.heads.predicate.forward(fg.edges).template cast<double>());
  } else {
    p.edge_probs = Mat<double>(0, model.heads.predicate.spec().out_width());
  }
  return p;
}

FinetuneResult finetune(std::span<const PreparedGraph> data, const LabelVocabulary& vocab,
                        const EncoderConfig& encoder, const FinetuneConfig& config,
                        const PretrainModel<float>* pretrained, const FinetuneEpochCallback& on_epoch) {
  config.validate();
  encoder.validate();
  if (data.empty()) throw TrainingError("finetune: no training scenes");
  Rng init = Rng::derive(config.seed, "init");
  FinetuneResult result{make_finetune_model<float>(encoder, config.head, vocab, init), Adam<float>(config.adam), {}};
  if (pretrained) {
    if (pretrained->backbone.config().describe() != encoder.describe()) {
      throw CheckpointError("pre-trained backbone " + pretrained->backbone.config().describe() +
                            " does not match encoder " + encoder.describe());
    }
    result.model.backbone = pretrained->backbone;
    if (config.keep_projectors) {
      result.model.projectors = pretrained->projectors;
      result.model.has_projectors = true;
    }
  }
  result.model.zero_grad();

  std::vector<GraphTargets> all_targets;
  all_targets.reserve(data.size());
  for (const auto& g : data) all_targets.push_back(build_targets(g, vocab));

  std::vector<Param<float>*> params;
  if (config.freeze_backbone) {
    result.model.heads.for_each_param([&](Param<float>& p) { params.push_back(&p); });
  } else {
    result.model.for_each_param([&](Param<float>& p) { params.push_back(&p); });
  }

  Rng order_rng = Rng::derive(config.seed, "shuffle");
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order.begin(), order.end());
    FinetuneEpochLog log;
    log.epoch = epoch;
    log.lr = linear_lr(epoch, config.epochs, config.lr);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const PreparedGraph*> batch;
      std::vector<GraphTargets> targets;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&data[order[k]]);
        targets.push_back(all_targets[order[k]]);
      }
      result.model.zero_grad();
      const FinetuneLoss l = finetune_objective(result.model, std::span<const PreparedGraph* const>(batch),
                                                std::span<const GraphTargets>(targets), config, true);
      result.optimizer.step(params, log.lr);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(data.size());
      log.loss.total += l.total * w;
      log.loss.ce += l.ce * w;
      log.loss.bce += l.bce * w;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, result.model, result.optimizer);
  }
  return result;
}

#define LANGSG_INSTANTIATE(T)                                                                                    \
  template class Heads<T>;                                                                                       \
  template FinetuneModel<T> make_finetune_model<T>(const EncoderConfig&, const HeadConfig&, const LabelVocabulary&, \
                                                   Rng&);                                                        \
  template FinetuneLoss finetune_objective<T>(FinetuneModel<T>&, std::span<const PreparedGraph* const>,          \
                                              std::span<const GraphTargets>, const FinetuneConfig&, bool);       \
  template Predictions predict<T>(const FinetuneModel<T>&, const PreparedGraph&);

LANGSG_INSTANTIATE(float)
LANGSG_INSTANTIATE(double)
#undef LANGSG_INSTANTIATE

template FinetuneModel<double> FinetuneModel<float>::cast<double>() const;
template FinetuneModel<float> FinetuneModel<double>::cast<float>() const;

}  // namespace langsg
