#include "langsg/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

#include "langsg/errors.hpp"

namespace langsg {

std::vector<int> top_k_classes(std::span<const double> scores, int k) {
  if (k < 1) throw std::invalid_argument("top-k: k must be >= 1");
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(kk);
  return idx;
}

namespace {

void check_inputs(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k) {
  if (k < 1) throw std::invalid_argument("recall: k must be >= 1");
  if (static_cast<std::size_t>(scores.rows()) != gt.size()) {
    throw ShapeError("recall: " + std::to_string(scores.rows()) + " score rows for " + std::to_string(gt.size()) +
                     " ground-truth entries");
  }
}

// Calls hit(class, found) for every (item, gt label) pair.
template <typename F>
void for_each_pair(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k, F&& hit) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const auto& labels = gt[static_cast<std::size_t>(r)];
    if (labels.empty()) continue;
    std::vector<double> row(scores.row(r).data(), scores.row(r).data() + scores.cols());
    const auto top = top_k_classes(row, k);
    for (int c : labels) {
      if (c < 0 || c >= scores.cols()) throw ShapeError("recall: gt class out of range");
      hit(c, std::find(top.begin(), top.end(), c) != top.end());
    }
  }
}

}  // namespace

double recall_at_k(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k) {
  check_inputs(scores, gt, k);
  std::size_t total = 0, hits = 0;
  for_each_pair(scores, gt, k, [&](int, bool found) {
    ++total;
    if (found) ++hits;
  });
  if (total == 0) throw std::domain_error("recall undefined: no ground-truth labels");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::map<int, double> per_class_recall(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k) {
  check_inputs(scores, gt, k);
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // hits, total
  for_each_pair(scores, gt, k, [&](int c, bool found) {
    auto& [h, t] = counts[c];
    ++t;
    if (found) ++h;
  });
  std::map<int, double> out;
  for (const auto& [c, ht] : counts) out[c] = static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return out;
}

double mean_recall_at_k(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k) {
  const auto pc = per_class_recall(scores, gt, k);
  if (pc.empty()) throw std::domain_error("mean recall undefined: no ground-truth labels");
  double sum = 0;
  for (const auto& [c, r] : pc) sum += r;
  return sum / static_cast<double>(pc.size());
}

namespace {

// Strict "ranks before" order: higher score, then lexicographic indices.
bool ranks_before(const ScoredTriplet& a, const ScoredTriplet& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.edge, a.subject_class, a.predicate_class, a.object_class) <
         std::tie(b.edge, b.subject_class, b.predicate_class, b.object_class);
}

}  // namespace

std::vector<ScoredTriplet> score_triplets(const Mat<double>& node_probs, const Mat<double>& edge_probs,
                                          const std::vector<std::pair<int, int>>& edges, int k,
                                          int excluded_predicate) {
  if (k < 1) throw std::invalid_argument("score_triplets: k must be >= 1");
  if (edge_probs.rows() != static_cast<Eigen::Index>(edges.size())) {
    throw ShapeError("score_triplets: edge probabilities do not match the edge list");
  }
  // max-heap on "ranks before" keeps the worst retained candidate on top
  std::priority_queue<ScoredTriplet, std::vector<ScoredTriplet>, decltype(&ranks_before)> heap(&ranks_before);
  const auto kk = static_cast<std::size_t>(k);
  const Eigen::Index nc = node_probs.cols(), np = edge_probs.cols();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    for (Eigen::Index a = 0; a < nc; ++a) {
      for (Eigen::Index p = 0; p < np; ++p) {
        if (p == excluded_predicate) continue;
        const double sp = node_probs(i, a) * edge_probs(static_cast<Eigen::Index>(e), p);
        for (Eigen::Index b = 0; b < nc; ++b) {
          ScoredTriplet t{static_cast<int>(e), i, j, static_cast<int>(a), static_cast<int>(p), static_cast<int>(b),
                          sp * node_probs(j, b)};
          if (heap.size() < kk) {
            heap.push(t);
          } else if (ranks_before(t, heap.top())) {
            heap.pop();
            heap.push(t);
          }
        }
      }
    }
  }
  std::vector<ScoredTriplet> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

double relationship_recall(std::span<const std::vector<ScoredTriplet>> ranked,
                           std::span<const std::vector<GtTriplet>> gt, int k) {
  if (k < 1) throw std::invalid_argument("relationship_recall: k must be >= 1");
  if (ranked.size() != gt.size()) throw ShapeError("relationship_recall: scene counts differ");
  double sum = 0;
  std::size_t scenes = 0;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    if (gt[s].empty()) continue;
    const auto limit = std::min(ranked[s].size(), static_cast<std::size_t>(k));
    std::size_t hits = 0;
    for (const auto& g : gt[s]) {
      for (std::size_t r = 0; r < limit; ++r) {
        const auto& t = ranked[s][r];
        if (t.subject_node == g.subject_node && t.object_node == g.object_node && t.subject_class == g.subject_class &&
            t.predicate_class == g.predicate_class && t.object_class == g.object_class) {
          ++hits;
          break;
        }
      }
    }
    sum += static_cast<double>(hits) / static_cast<double>(gt[s].size());
    ++scenes;
  }
  if (scenes == 0) throw std::domain_error("relationship recall undefined: no scene has relationships");
  return sum / static_cast<double>(scenes);
}

std::vector<GtTriplet> gt_triplets(const PreparedGraph& graph, const LabelVocabulary& vocab) {
  std::map<int, int> node_of;
  for (std::size_t n = 0; n < graph.node_ids.size(); ++n) node_of[graph.node_ids[n]] = static_cast<int>(n);
  std::vector<GtTriplet> out;
  for (const auto& r : graph.relationships) {
    const int i = node_of.at(r.subject_id), j = node_of.at(r.object_id);
    out.push_back({i, j, vocab.object_index(graph.node_labels[i]), vocab.predicate_index(r.predicate),
                   vocab.object_index(graph.node_labels[j])});
  }
  return out;
}

void EvalKs::validate() const {
  for (const auto* v : {&object, &predicate, &relationship}) {
    if (v->empty()) throw ValidationError("eval: k lists must be nonempty");
    for (int k : *v) {
      if (k < 1) throw ValidationError("eval: every k must be >= 1");
    }
  }
}

MetricsReport evaluate_predictions(std::span<const Predictions> predictions, std::span<const PreparedGraph> data,
                                   const LabelVocabulary& vocab, const EvalKs& ks) {
  ks.validate();
  if (predictions.size() != data.size()) throw ShapeError("evaluate: prediction and graph counts differ");
  if (data.empty()) throw std::domain_error("evaluate: empty dataset");
  MetricsReport rep;
  rep.object_classes = vocab.object_labels();
  rep.predicate_classes = vocab.predicate_labels();
  rep.scenes = data.size();

  Eigen::Index total_nodes = 0, total_edges = 0;
  for (const auto& g : data) {
    total_nodes += static_cast<Eigen::Index>(g.num_nodes());
    total_edges += static_cast<Eigen::Index>(g.num_edges());
  }
  Mat<double> node_scores(total_nodes, static_cast<Eigen::Index>(vocab.num_objects()));
  Mat<double> edge_scores(total_edges, static_cast<Eigen::Index>(vocab.num_predicates()));
  std::vector<std::vector<int>> node_gt, edge_gt;
  std::vector<std::vector<ScoredTriplet>> ranked;
  std::vector<std::vector<GtTriplet>> rel_gt;
  const int max_rel_k = *std::max_element(ks.relationship.begin(), ks.relationship.end());
  const int neutral = vocab.neutral_index();

  Eigen::Index no = 0, eo = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& g = data[s];
    const auto& p = predictions[s];
    if (p.node_probs.rows() != static_cast<Eigen::Index>(g.num_nodes()) ||
        p.edge_probs.rows() != static_cast<Eigen::Index>(g.num_edges())) {
      throw ShapeError("evaluate: predictions do not match graph '" + g.scene_id + "'");
    }
    node_scores.middleRows(no, p.node_probs.rows()) = p.node_probs;
    if (p.edge_probs.rows() > 0) edge_scores.middleRows(eo, p.edge_probs.rows()) = p.edge_probs;
    no += p.node_probs.rows();
    eo += p.edge_probs.rows();
    const GraphTargets t = build_targets(g, vocab);
    for (int c : t.node_classes) node_gt.push_back({c});
    for (Eigen::Index e = 0; e < t.edge_targets.rows(); ++e) {
      auto& labels = edge_gt.emplace_back();
      for (Eigen::Index c = 0; c < t.edge_targets.cols(); ++c) {
        if (t.edge_targets(e, c) > 0.5) labels.push_back(static_cast<int>(c));
      }
    }
    rel_gt.push_back(gt_triplets(g, vocab));
    rep.relationships += rel_gt.back().size();
    ranked.push_back(g.num_edges() > 0 ? score_triplets(p.node_probs, p.edge_probs, g.edges, max_rel_k, neutral)
                                       : std::vector<ScoredTriplet>{});
  }
  rep.nodes = static_cast<std::size_t>(total_nodes);
  rep.edges = static_cast<std::size_t>(total_edges);

  for (int k : ks.object) {
    rep.object_recall[k] = recall_at_k(node_scores, node_gt, k);
    rep.object_per_class[k] = per_class_recall(node_scores, node_gt, k);
    rep.object_mean_recall[k] = mean_recall_at_k(node_scores, node_gt, k);
  }
  if (total_edges > 0) {
    for (int k : ks.predicate) {
      rep.predicate_recall[k] = recall_at_k(edge_scores, edge_gt, k);
      rep.predicate_per_class[k] = per_class_recall(edge_scores, edge_gt, k);
      rep.predicate_mean_recall[k] = mean_recall_at_k(edge_scores, edge_gt, k);
    }
  }
  if (rep.relationships > 0) {
    for (int k : ks.relationship) {
      rep.relationship_recall[k] = relationship_recall(ranked, rel_gt, k);
    }
  }
  return rep;
}

MetricsReport evaluate(const FinetuneModel<float>& model, std::span<const PreparedGraph> data,
                       const LabelVocabulary& vocab, const EvalKs& ks) {
  std::vector<Predictions> preds;
  preds.reserve(data.size());
  for (const auto& g : data) preds.push_back(predict(model, g));
  return evaluate_predictions(preds, data, vocab, ks);
}

std::string MetricsReport::to_text() const {
  nlohmann::ordered_json j;
  auto put = [&](const char* prefix, const std::map<int, double>& m) {
    for (const auto& [k, v] : m) j[std::string(prefix) + "@" + std::to_string(k)] = v;
  };
  put("object_R", object_recall);
  put("object_mR", object_mean_recall);
  put("predicate_R", predicate_recall);
  put("predicate_mR", predicate_mean_recall);
  put("relationship_R", relationship_recall);
  j["scenes"] = scenes;
  j["nodes"] = nodes;
  j["edges"] = edges;
  j["relationships"] = relationships;
  return j.dump(2) + "\n";
}

std::string MetricsReport::per_class_csv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "kind,class,k,recall\n";
  auto emit = [&](const char* kind, const std::map<int, std::map<int, double>>& per_k,
                  const std::vector<std::string>& names) {
    for (const auto& [k, classes] : per_k) {
      for (const auto& [c, r] : classes) os << kind << "," << names.at(static_cast<std::size_t>(c)) << "," << k << "," << r << "\n";
    }
  };
  emit("object", object_per_class, object_classes);
  emit("predicate", predicate_per_class, predicate_classes);
  return os.str();
}

}  // namespace langsg
