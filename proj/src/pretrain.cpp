#include "langsg/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "langsg/errors.hpp"

namespace langsg {

template <typename T>
Projectors<T>::Projectors(int feature_dim, const ProjectorConfig& config, Rng& rng)
    : node(MlpSpec::hidden_relu({feature_dim, config.hidden, config.output_dim}), "proj.node", rng),
      edge(MlpSpec::hidden_relu({feature_dim, config.hidden, config.output_dim}), "proj.edge", rng),
      triplet(MlpSpec::hidden_relu({3 * feature_dim, config.hidden, config.output_dim}), "proj.triplet", rng) {}

template <typename T>
Mat<T> concat_triplets(const FeatureGraph<T>& graph) {
  const Eigen::Index f = graph.nodes.cols();
  const auto m = static_cast<Eigen::Index>(graph.edge_index.size());
  Mat<T> x(m, 3 * f);
  for (Eigen::Index e = 0; e < m; ++e) {
    const auto [i, j] = graph.edge_index[e];
    x.block(e, 0, 1, f) = graph.nodes.row(i);
    x.block(e, f, 1, f) = graph.edges.row(e);
    x.block(e, 2 * f, 1, f) = graph.nodes.row(j);
  }
  return x;
}

template <typename T>
ProjectedFeatures<T> project(const FeatureGraph<T>& graph, const Projectors<T>& projectors) {
  ProjectedFeatures<T> out;
  out.nodes = projectors.node.forward(graph.nodes);
  const int d = projectors.output_dim();
  if (graph.edge_index.empty()) {
    out.edges = Mat<T>(0, d);
    out.triplets = Mat<T>(0, d);
  } else {
    out.edges = projectors.edge.forward(graph.edges);
    out.triplets = projectors.triplet.forward(concat_triplets(graph));
  }
  return out;
}

namespace {

template <typename A, typename B>
double cosine_impl(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na += static_cast<double>(a[k]) * a[k];
    nb += static_cast<double>(b[k]) * b[k];
  }
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine similarity undefined for a zero vector");
  return dot / std::sqrt(na * nb);
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }
double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }

void ContrastiveConfig::validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("contrastive: tau must lie in [0, 1)");
  if (lambda_neg < 0) throw ValidationError("contrastive: lambda_neg must be non-negative");
  if (negatives < 0) throw ValidationError("contrastive: negatives must be non-negative");
  for (double w : stream_weights) {
    if (w < 0) throw ValidationError("contrastive: stream weights must be non-negative");
  }
}

namespace {

std::vector<std::vector<std::string>> singletons(const std::vector<std::string>& labels) {
  std::vector<std::vector<std::string>> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back({object_prompt(l)});
  return out;
}

std::vector<std::vector<std::string>> predicate_prompts(const std::vector<std::vector<std::string>>& edges) {
  std::vector<std::vector<std::string>> out;
  out.reserve(edges.size());
  for (const auto& ps : edges) {
    auto& v = out.emplace_back();
    for (const auto& p : ps) v.push_back(predicate_prompt(p));
  }
  return out;
}

std::vector<std::vector<std::string>> sentence_prompts(const std::vector<std::vector<Triple>>& triplets) {
  std::vector<std::vector<std::string>> out;
  out.reserve(triplets.size());
  for (const auto& ts : triplets) {
    auto& v = out.emplace_back();
    for (const auto& t : ts) v.push_back(relationship_prompt(t));
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::string>> PositiveKeySet::prompts(Stream s) const {
  switch (s) {
    case Stream::Node: return singletons(nodes);
    case Stream::Edge: return predicate_prompts(edges);
    case Stream::Triplet: return sentence_prompts(triplets);
  }
  return {};
}

std::vector<std::vector<std::string>> NegativeSet::prompts(Stream s) const {
  switch (s) {
    case Stream::Node: {
      std::vector<std::vector<std::string>> out;
      for (const auto& labels : nodes) {
        auto& v = out.emplace_back();
        for (const auto& l : labels) v.push_back(object_prompt(l));
      }
      return out;
    }
    case Stream::Edge: return predicate_prompts(edges);
    case Stream::Triplet: return sentence_prompts(triplets);
  }
  return {};
}

PositiveKeySet build_positive_keys(const PreparedGraph& graph) {
  std::map<std::pair<int, int>, std::vector<std::string>> by_pair;
  for (const auto& r : graph.relationships) by_pair[{r.subject_id, r.object_id}].push_back(r.predicate);
  PositiveKeySet keys;
  keys.nodes = graph.node_labels;
  for (const auto& [i, j] : graph.edges) {
    auto it = by_pair.find({graph.node_ids[i], graph.node_ids[j]});
    std::vector<std::string> preds;
    if (it == by_pair.end()) {
      preds.emplace_back(kNeutralPredicate);
    } else {
      preds = it->second;
      std::sort(preds.begin(), preds.end());
      preds.erase(std::unique(preds.begin(), preds.end()), preds.end());
    }
    auto& ts = keys.triplets.emplace_back();
    for (const auto& p : preds) ts.push_back({graph.node_labels[i], p, graph.node_labels[j]});
    keys.edges.push_back(std::move(preds));
  }
  return keys;
}

namespace {

template <typename V>
std::vector<V> choose(std::vector<V> pool, std::size_t k, Rng& rng) {
  if (k >= pool.size()) return pool;
  for (std::size_t a = 0; a < k; ++a) {
    const std::size_t b = a + static_cast<std::size_t>(rng.uniform_index(pool.size() - a));
    std::swap(pool[a], pool[b]);
  }
  pool.resize(k);
  return pool;
}

std::vector<Triple> triplet_negatives(const LabelVocabulary& vocab, const std::vector<Triple>& positives,
                                      std::size_t m, Rng& rng) {
  if (m == 0 || positives.empty()) return {};
  const std::set<Triple> pos(positives.begin(), positives.end());
  std::set<Triple> pool;
  for (const auto& t : positives) {
    for (const auto& o : vocab.object_labels()) {
      pool.insert({o, t.predicate, t.object});
      pool.insert({t.subject, t.predicate, o});
    }
    for (const auto& p : vocab.predicate_labels()) pool.insert({t.subject, p, t.object});
  }
  for (const auto& t : pos) pool.erase(t);
  if (pool.size() <= m) return {pool.begin(), pool.end()};

  std::vector<Triple> out;
  std::set<Triple> chosen;
  const std::size_t max_attempts = 100 * m;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < m; ++attempt) {
    Triple t = positives[rng.uniform_index(positives.size())];
    const auto slot = rng.uniform_index(3);
    const auto& labels = slot == 1 ? vocab.predicate_labels() : vocab.object_labels();
    std::string& field = slot == 0 ? t.subject : (slot == 1 ? t.predicate : t.object);
    if (labels.size() < 2) continue;
    // uniform over the labels other than the current one
    auto pick = rng.uniform_index(labels.size() - 1);
    const auto current = std::find(labels.begin(), labels.end(), field);
    if (current != labels.end() && pick >= static_cast<std::uint64_t>(current - labels.begin())) ++pick;
    field = labels[pick];
    if (pos.count(t) || chosen.count(t)) continue;
    chosen.insert(t);
    out.push_back(std::move(t));
  }
  for (auto it = pool.begin(); out.size() < m && it != pool.end(); ++it) {
    if (chosen.insert(*it).second) out.push_back(*it);
  }
  return out;
}

}  // namespace

NegativeSet sample_negatives(const LabelVocabulary& vocab, const PositiveKeySet& positives, int m, Rng& rng) {
  if (m < 0) throw std::invalid_argument("sample_negatives: m must be non-negative");
  const auto mm = static_cast<std::size_t>(m);
  NegativeSet out;
  for (const auto& label : positives.nodes) {
    std::vector<std::string> pool;
    for (const auto& o : vocab.object_labels()) {
      if (o != label) pool.push_back(o);
    }
    out.nodes.push_back(choose(std::move(pool), mm, rng));
  }
  for (const auto& preds : positives.edges) {
    const bool neutral_positive = std::find(preds.begin(), preds.end(), kNeutralPredicate) != preds.end();
    std::vector<std::string> pool;
    for (const auto& p : vocab.predicate_labels()) {
      if (p == kNeutralPredicate) continue;
      if (std::find(preds.begin(), preds.end(), p) == preds.end()) pool.push_back(p);
    }
    std::vector<std::string> chosen;
    if (!neutral_positive && mm > 0) {
      chosen.emplace_back(kNeutralPredicate);
      auto rest = choose(std::move(pool), mm - 1, rng);
      chosen.insert(chosen.end(), rest.begin(), rest.end());
    } else {
      chosen = choose(std::move(pool), mm, rng);
    }
    out.edges.push_back(std::move(chosen));
  }
  for (const auto& ts : positives.triplets) out.triplets.push_back(triplet_negatives(vocab, ts, mm, rng));
  return out;
}

namespace {

// Cosine between row r of `f` and a table vector; optionally its gradient.
template <typename T>
double row_cosine(const Mat<T>& f, Eigen::Index r, std::span<const float> t, RowVec<double>* grad) {
  const Eigen::Index d = f.cols();
  if (static_cast<Eigen::Index>(t.size()) != d) {
    throw ShapeError("feature dimension " + std::to_string(d) + " does not match embedding dimension " +
                     std::to_string(t.size()));
  }
  double dot = 0, nf2 = 0, nt2 = 0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double a = static_cast<double>(f(r, k));
    dot += a * t[k];
    nf2 += a * a;
    nt2 += static_cast<double>(t[k]) * t[k];
  }
  if (nf2 == 0.0 || nt2 == 0.0) throw std::domain_error("cosine similarity undefined for a zero feature vector");
  const double nf = std::sqrt(nf2), nt = std::sqrt(nt2);
  const double c = dot / (nf * nt);
  if (grad) {
    grad->resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      (*grad)(k) = t[k] / (nf * nt) - c * static_cast<double>(f(r, k)) / nf2;
    }
  }
  return c;
}

void check_rows(Eigen::Index rows, std::size_t items, const char* what) {
  if (static_cast<std::size_t>(rows) != items) {
    throw ShapeError(std::string(what) + ": " + std::to_string(rows) + " feature rows for " + std::to_string(items) +
                     " key lists");
  }
}

}  // namespace

template <typename T>
double positive_loss(const Mat<T>& features, const std::vector<std::vector<std::string>>& keys,
                     const EmbeddingTable& table, Mat<T>* grad, double scale) {
  check_rows(features.rows(), keys.size(), "positive_loss");
  double total = 0;
  RowVec<double> g;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) continue;
    const auto r = static_cast<Eigen::Index>(i);
    const double inv = 1.0 / static_cast<double>(keys[i].size());
    for (const auto& k : keys[i]) {
      const double c = row_cosine(features, r, table.lookup(k), grad ? &g : nullptr);
      total += inv * (1.0 - c);
      if (grad) grad->row(r) -= (g * (scale * inv)).template cast<T>();
    }
  }
  return total;
}

template <typename T>
double negative_loss(const Mat<T>& features, const std::vector<std::vector<std::string>>& negatives,
                     const EmbeddingTable& table, double tau, Mat<T>* grad, double scale) {
  check_rows(features.rows(), negatives.size(), "negative_loss");
  double total = 0;
  RowVec<double> g;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    if (negatives[i].empty()) continue;
    const auto r = static_cast<Eigen::Index>(i);
    const double inv = 1.0 / static_cast<double>(negatives[i].size());
    for (const auto& k : negatives[i]) {
      const double c = row_cosine(features, r, table.lookup(k), grad ? &g : nullptr);
      if (c > tau) {
        total += inv * (c - tau);
        if (grad) grad->row(r) += (g * (scale * inv)).template cast<T>();
      }
    }
  }
  return total;
}

template <typename T>
template <typename U>
PretrainModel<U> PretrainModel<T>::cast() const {
  PretrainModel<U> out;
  out.backbone = backbone.template cast<U>();
  out.projectors.node = projectors.node.template cast<U>();
  out.projectors.edge = projectors.edge.template cast<U>();
  out.projectors.triplet = projectors.triplet.template cast<U>();
  return out;
}

template <typename T>
PretrainModel<T> make_pretrain_model(const EncoderConfig& encoder, const ProjectorConfig& projector, Rng& rng) {
  if (projector.hidden < 1 || projector.output_dim < 1) throw ValidationError("projector widths must be positive");
  PretrainModel<T> m;
  m.backbone = Backbone<T>(encoder, rng);
  m.projectors = Projectors<T>(encoder.feature_dim, projector, rng);
  return m;
}

template <typename T>
PretrainLoss pretrain_objective(PretrainModel<T>& model, std::span<const PreparedGraph* const> batch,
                                std::span<const SceneTargets> targets, const EmbeddingTable& table,
                                const ContrastiveConfig& config, bool compute_grad) {
  if (batch.size() != targets.size()) throw ShapeError("pretrain_objective: batch and targets differ in size");
  if (batch.empty()) throw std::invalid_argument("pretrain_objective: empty batch");
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  PretrainLoss loss;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PreparedGraph& graph = *batch[b];
    EncodeCache<T> cache;
    const FeatureGraph<T> fg = model.backbone.encode_train(graph, cache);
    const bool has_edges = !graph.edges.empty();

    MlpCache<T> cn, ce, ct;
    Mat<T> triplet_in;
    std::array<Mat<T>, 3> f;
    f[0] = model.projectors.node.forward_train(fg.nodes, cn);
    if (has_edges) {
      triplet_in = concat_triplets(fg);
      f[1] = model.projectors.edge.forward_train(fg.edges, ce);
      f[2] = model.projectors.triplet.forward_train(triplet_in, ct);
    }

    std::array<Mat<T>, 3> df;
    for (int s = 0; s < 3; ++s) {
      const auto items = static_cast<std::size_t>(f[s].rows());
      if (items == 0) continue;
      const Stream stream = static_cast<Stream>(s);
      const double norm = inv_batch / static_cast<double>(items);
      const double w = config.stream_weights[s];
      if (compute_grad) df[s] = Mat<T>::Zero(f[s].rows(), f[s].cols());
      Mat<T>* g = compute_grad ? &df[s] : nullptr;
      const double pos = positive_loss(f[s], targets[b].positives.prompts(stream), table, g, w * norm);
      const double neg = negative_loss(f[s], targets[b].negatives.prompts(stream), table, config.tau, g,
                                       w * config.lambda_neg * norm);
      loss.positive[s] += pos * norm;
      loss.negative[s] += neg * norm;
      loss.total += w * (pos + config.lambda_neg * neg) * norm;
    }

    if (compute_grad) {
      Mat<T> d_nodes = model.projectors.node.backward(df[0], cn);
      Mat<T> d_edges = Mat<T>::Zero(fg.edges.rows(), fg.edges.cols());
      if (has_edges) {
        d_edges = model.projectors.edge.backward(df[1], ce);
        const Mat<T> d_trip = model.projectors.triplet.backward(df[2], ct);
        const Eigen::Index fd = fg.nodes.cols();
        for (Eigen::Index e = 0; e < d_trip.rows(); ++e) {
          const auto [i, j] = graph.edges[e];
          d_nodes.row(i) += d_trip.block(e, 0, 1, fd);
          d_edges.row(e) += d_trip.block(e, fd, 1, fd);
          d_nodes.row(j) += d_trip.block(e, 2 * fd, 1, fd);
        }
      }
      model.backbone.backward(graph, cache, std::move(d_nodes), std::move(d_edges));
    }
  }
  return loss;
}

template <typename T>
PretrainLoss pretrain_step(PretrainModel<T>& model, std::span<const PreparedGraph* const> batch,
                           const EmbeddingTable& table, const LabelVocabulary& vocab, const ContrastiveConfig& config,
                           Rng& rng) {
  std::vector<SceneTargets> targets;
  targets.reserve(batch.size());
  for (const PreparedGraph* g : batch) {
    SceneTargets t;
    t.positives = build_positive_keys(*g);
    t.negatives = sample_negatives(vocab, t.positives, config.negatives, rng);
    targets.push_back(std::move(t));
  }
  model.zero_grad();
  PretrainLoss loss = pretrain_objective(model, batch, std::span<const SceneTargets>(targets), table, config, true);
  if (!std::isfinite(loss.total)) throw TrainingError("pre-training loss is not finite");
  return loss;
}

void PretrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("pretrain: epochs must be >= 1");
  if (!(lr > 0)) throw ValidationError("pretrain: lr must be positive");
  if (batch_size < 1) throw ValidationError("pretrain: batch_size must be >= 1");
  encoder.validate();
  contrastive.validate();
  if (projector.hidden < 1 || projector.output_dim < 1) throw ValidationError("pretrain: projector widths must be positive");
}

PretrainResult pretrain(std::span<const PreparedGraph> data, const EmbeddingTable& table,
                        const LabelVocabulary& vocab, const PretrainConfig& config,
                        const PretrainEpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw TrainingError("pretrain: no training scenes");
  if (config.projector.output_dim != table.dim()) {
    throw ValidationError("pretrain: projector output dimension " + std::to_string(config.projector.output_dim) +
                          " does not match embedding dimension " + std::to_string(table.dim()));
  }
  Rng init = Rng::derive(config.seed, "init");
  PretrainResult result{make_pretrain_model<float>(config.encoder, config.projector, init), Adam<float>(config.adam),
                        {}};
  Rng order_rng = Rng::derive(config.seed, "shuffle");
  Rng neg_rng = Rng::derive(config.seed, "negatives");
  const auto params = result.model.params();

  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order.begin(), order.end());
    EpochLog log;
    log.epoch = epoch;
    log.lr = linear_lr(epoch, config.epochs, config.lr);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const PreparedGraph*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&data[order[k]]);
      const PretrainLoss l = pretrain_step(result.model, std::span<const PreparedGraph* const>(batch), table, vocab,
                                           config.contrastive, neg_rng);
      result.optimizer.step(params, log.lr);
      // accumulate as a per-scene average over the epoch
      const double wgt = static_cast<double>(batch.size()) / static_cast<double>(data.size());
      log.loss.total += l.total * wgt;
      for (int s = 0; s < 3; ++s) {
        log.loss.positive[s] += l.positive[s] * wgt;
        log.loss.negative[s] += l.negative[s] * wgt;
      }
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, result.model, result.optimizer);
  }
  return result;
}

#define LANGSG_INSTANTIATE(T)                                                                                       \
  template class Projectors<T>;                                                                                     \
  template Mat<T> concat_triplets<T>(const FeatureGraph<T>&);                                                       \
  template ProjectedFeatures<T> project<T>(const FeatureGraph<T>&, const Projectors<T>&);                           \
  template double positive_loss<T>(const Mat<T>&, const std::vector<std::vector<std::string>>&,                     \
                                   const EmbeddingTable&, Mat<T>*, double);                                         \
  template double negative_loss<T>(const Mat<T>&, const std::vector<std::vector<std::string>>&,                     \
                                   const EmbeddingTable&, double, Mat<T>*, double);                                 \
  template PretrainModel<T> make_pretrain_model<T>(const EncoderConfig&, const ProjectorConfig&, Rng&);             \
  template PretrainLoss pretrain_objective<T>(PretrainModel<T>&, std::span<const PreparedGraph* const>,             \
                                              std::span<const SceneTargets>, const EmbeddingTable&,                 \
                                              const ContrastiveConfig&, bool);                                      \
  template PretrainLoss pretrain_step<T>(PretrainModel<T>&, std::span<const PreparedGraph* const>,                  \
                                         const EmbeddingTable&, const LabelVocabulary&, const ContrastiveConfig&, \
                                         Rng&);

LANGSG_INSTANTIATE(float)
LANGSG_INSTANTIATE(double)
#undef LANGSG_INSTANTIATE

template PretrainModel<double> PretrainModel<float>::cast<double>() const;
template PretrainModel<float> PretrainModel<double>::cast<float>() const;
template PretrainModel<float> PretrainModel<float>::cast<float>() const;

}  // namespace langsg
