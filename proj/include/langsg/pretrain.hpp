#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "langsg/graph_encoder.hpp"
#include "langsg/nn.hpp"
#include "langsg/text_embed.hpp"

namespace langsg {

struct ProjectorConfig {
  int hidden = 1024;
  int output_dim = 512;  // must equal the embedding table dimension
};

/// Three heads mapping backbone features into the text space: nodes,
/// edges, and concatenated (subject, edge, object) triplets.
template <typename T>
class Projectors {
 public:
  Projectors() = default;
  Projectors(int feature_dim, const ProjectorConfig& config, Rng& rng);

  Mlp<T> node;     // F -> hidden -> D
  Mlp<T> edge;     // F -> hidden -> D
  Mlp<T> triplet;  // 3F -> hidden -> D

  int output_dim() const { return node.spec().out_width(); }

  template <typename F>
  void for_each_param(F&& f) {
    node.for_each_param(f);
    edge.for_each_param(f);
    triplet.for_each_param(f);
  }
};

template <typename T>
struct ProjectedFeatures {
  Mat<T> nodes;     // f_n
  Mat<T> edges;     // f_p
  Mat<T> triplets;  // f_triplet
};

template <typename T>
ProjectedFeatures<T> project(const FeatureGraph<T>& graph, const Projectors<T>& projectors);

/// [nodes[i] | edges[e] | nodes[j]] per edge.
template <typename T>
Mat<T> concat_triplets(const FeatureGraph<T>& graph);

/// a.b / (|a||b|). Throws std::domain_error when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);
double cosine(std::span<const float> a, std::span<const float> b);

enum class Stream { Node = 0, Edge = 1, Triplet = 2 };
inline constexpr std::array<const char*, 3> kStreamNames{"node", "edge", "triplet"};

struct ContrastiveConfig {
  double tau = 0.5;         // negative margin
  double lambda_neg = 1.0;  // negative loss weight
  int negatives = 16;       // M, per stream
  std::array<double, 3> stream_weights{1.0, 1.0, 1.0};

  void validate() const;
};

/// Ground-truth text keys of a scene. Nodes map to one object label; edges
/// to their predicates, or {"and"} when unrelated; triplets to the matching
/// (subject, predicate, object) label triples.
struct PositiveKeySet {
  std::vector<std::string> nodes;
  std::vector<std::vector<std::string>> edges;
  std::vector<std::vector<Triple>> triplets;

  /// Prompt strings of one stream, one list per item.
  std::vector<std::vector<std::string>> prompts(Stream s) const;
};

PositiveKeySet build_positive_keys(const PreparedGraph& graph);

struct NegativeSet {
  std::vector<std::vector<std::string>> nodes;
  std::vector<std::vector<std::string>> edges;
  std::vector<std::vector<Triple>> triplets;

  std::vector<std::vector<std::string>> prompts(Stream s) const;
};

/// Node negatives: M other object labels. Edge negatives: M predicates not
/// among the positives, always including "and" when it is not a positive.
/// Triplet negatives: M triples that change exactly one slot of a positive
/// triple (slot and replacement drawn uniformly) and are not positives.
/// When fewer candidates exist than M, all of them are returned.
NegativeSet sample_negatives(const LabelVocabulary& vocab, const PositiveKeySet& positives, int m, Rng& rng);

/// sum_i 1/|K_i| sum_{k in K_i} (1 - cos(f_i, t_k)). When `grad` is
/// given, scale * d/df is added to it.
template <typename T>
double positive_loss(const Mat<T>& features, const std::vector<std::vector<std::string>>& keys,
                     const EmbeddingTable& table, Mat<T>* grad = nullptr, double scale = 1.0);

/// sum_i 1/|M_i| sum_{k in M_i} max(0, cos(f_i, t_k) - tau).
template <typename T>
double negative_loss(const Mat<T>& features, const std::vector<std::vector<std::string>>& negatives,
                     const EmbeddingTable& table, double tau, Mat<T>* grad = nullptr, double scale = 1.0);

template <typename T>
struct PretrainModel {
  Backbone<T> backbone;
  Projectors<T> projectors;

  template <typename F>
  void for_each_param(F&& f) {
    backbone.for_each_param(f);
    projectors.for_each_param(f);
  }
  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for_each_param([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }
  void zero_grad() {
    for_each_param([](Param<T>& p) { p.zero_grad(); });
  }
  template <typename U>
  PretrainModel<U> cast() const;
};

template <typename T>
PretrainModel<T> make_pretrain_model(const EncoderConfig& encoder, const ProjectorConfig& projector, Rng& rng);

/// Per-stream sums of the loss terms, averaged over scenes (and over items
/// within each scene).
struct PretrainLoss {
  double total = 0.0;
  std::array<double, 3> positive{0, 0, 0};
  std::array<double, 3> negative{0, 0, 0};
};

struct SceneTargets {
  PositiveKeySet positives;
  NegativeSet negatives;
};

/// L = mean over scenes of sum_streams w_s (L_pos,s + lambda_neg L_neg,s) / N_s.
/// With compute_grad, gradients are accumulated into the model parameters.
template <typename T>
PretrainLoss pretrain_objective(PretrainModel<T>& model, std::span<const PreparedGraph* const> batch,
                                std::span<const SceneTargets> targets, const EmbeddingTable& table,
                                const ContrastiveConfig& config, bool compute_grad);

/// Zeroes gradients, samples negatives and evaluates the objective with
/// gradients. Throws TrainingError on a non-finite loss.
template <typename T>
PretrainLoss pretrain_step(PretrainModel<T>& model, std::span<const PreparedGraph* const> batch,
                           const EmbeddingTable& table, const LabelVocabulary& vocab, const ContrastiveConfig& config,
                           Rng& rng);

struct PretrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 6;
  std::uint64_t seed = 0;
  AdamConfig adam;
  EncoderConfig encoder;
  ProjectorConfig projector;
  ContrastiveConfig contrastive;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  PretrainLoss loss;
};

struct PretrainResult {
  PretrainModel<float> model;
  Adam<float> optimizer;
  std::vector<EpochLog> log;
};

using PretrainEpochCallback = std::function<void(const EpochLog&, PretrainModel<float>&, const Adam<float>&)>;

/// Runs the full pre-training schedule from a model initialised with
/// config.seed. Deterministic for a fixed config and data order.
PretrainResult pretrain(std::span<const PreparedGraph> data, const EmbeddingTable& table,
                        const LabelVocabulary& vocab, const PretrainConfig& config,
                        const PretrainEpochCallback& on_epoch = {});

}  // namespace langsg
