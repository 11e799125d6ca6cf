#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "langsg/finetune.hpp"
#include "langsg/nn.hpp"

namespace langsg {

/// Class indices of the k best scores, best first; equal scores rank the
/// lower class index first.
std::vector<int> top_k_classes(std::span<const double> scores, int k);

/// Fraction of (item, gt label) pairs whose label is among the item's top-k
/// classes. Throws std::invalid_argument for k < 1 and std::domain_error
/// when there is no (item, label) pair to score.
double recall_at_k(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k);

/// Per-class recall@k; classes without gt occurrences are absent from the map.
std::map<int, double> per_class_recall(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k);

/// Unweighted mean of per_class_recall over the classes that occur.
double mean_recall_at_k(const Mat<double>& scores, const std::vector<std::vector<int>>& gt, int k);

struct ScoredTriplet {
  int edge = 0;  // index into the graph's edge list
  int subject_node = 0;
  int object_node = 0;
  int subject_class = 0;
  int predicate_class = 0;
  int object_class = 0;
  double score = 0.0;

  bool operator==(const ScoredTriplet&) const = default;
};

/// Product-rule ranking P_i(a) * P_ij(p) * P_j(b) over every edge and class
/// combination, descending, ties by (edge, subject, predicate, object).
/// Returns the best k. `excluded_predicate` (e.g. "and") is never a
/// candidate; pass -1 to keep every predicate.
std::vector<ScoredTriplet> score_triplets(const Mat<double>& node_probs, const Mat<double>& edge_probs,
                                          const std::vector<std::pair<int, int>>& edges, int k,
                                          int excluded_predicate);

struct GtTriplet {
  int subject_node = 0;
  int object_node = 0;
  int subject_class = 0;
  int predicate_class = 0;
  int object_class = 0;
};

/// Per scene, the fraction of gt triplets found in the first k ranked
/// entries (same node pair, classes and predicate), averaged over scenes
/// with at least one gt triplet. Throws std::domain_error when no scene has
/// one.
double relationship_recall(std::span<const std::vector<ScoredTriplet>> ranked,
                           std::span<const std::vector<GtTriplet>> gt, int k);

std::vector<GtTriplet> gt_triplets(const PreparedGraph& graph, const LabelVocabulary& vocab);

struct EvalKs {
  std::vector<int> object{1, 5, 10};
  std::vector<int> predicate{1, 3, 5};
  std::vector<int> relationship{50, 100};

  void validate() const;
};

struct MetricsReport {
  std::map<int, double> object_recall;
  std::map<int, double> object_mean_recall;
  std::map<int, double> predicate_recall;
  std::map<int, double> predicate_mean_recall;
  std::map<int, double> relationship_recall;
  // per class recall at each k; classes absent from gt are missing
  std::map<int, std::map<int, double>> object_per_class;
  std::map<int, std::map<int, double>> predicate_per_class;
  std::vector<std::string> object_classes;
  std::vector<std::string> predicate_classes;
  std::size_t scenes = 0;
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t relationships = 0;

  /// JSON object, one key per metric, e.g. "object_R@1".
  std::string to_text() const;
  /// kind,class,k,recall rows.
  std::string per_class_csv() const;
};

/// Object metrics over every node, predicate metrics over every edge (gt
/// {"and"} for relation-free edges), relationship recall over scenes with
/// relationships. Batch norm runs in evaluation mode.
MetricsReport evaluate(const FinetuneModel<float>& model, std::span<const PreparedGraph> data,
                       const LabelVocabulary& vocab, const EvalKs& ks = {});

/// Same metrics from precomputed predictions (one per graph).
MetricsReport evaluate_predictions(std::span<const Predictions> predictions, std::span<const PreparedGraph> data,
                                   const LabelVocabulary& vocab, const EvalKs& ks = {});

}  // namespace langsg
