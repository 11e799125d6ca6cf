#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "langsg/graph_encoder.hpp"
#include "langsg/nn.hpp"
#include "langsg/pretrain.hpp"
#include "langsg/scene.hpp"

namespace langsg {

inline constexpr double kProbabilityClamp = 1e-7;

struct HeadConfig {
  int hidden = 512;
};

/// Object and predicate classifiers: F -> hidden (BN, ReLU) -> classes.
template <typename T>
class Heads {
 public:
  Heads() = default;
  Heads(int feature_dim, const HeadConfig& config, int num_objects, int num_predicates, Rng& rng);

  Mlp<T> object;
  Mlp<T> predicate;

  template <typename F>
  void for_each_param(F&& f) {
    object.for_each_param(f);
    predicate.for_each_param(f);
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    object.for_each_buffer(f);
    predicate.for_each_buffer(f);
  }
};

/// Row-wise softmax of object logits.
Mat<double> classify_nodes(const Mat<double>& logits);
/// Elementwise sigmoid of predicate logits.
Mat<double> classify_edges(const Mat<double>& logits);

template <typename T>
struct FinetuneModel {
  Backbone<T> backbone;
  Heads<T> heads;
  // Frozen projectors carried over from pre-training for feature dumps.
  bool has_projectors = false;
  Projectors<T> projectors;

  template <typename F>
  void for_each_param(F&& f) {
    backbone.for_each_param(f);
    heads.for_each_param(f);
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    heads.for_each_buffer(f);
  }
  void zero_grad() {
    for_each_param([](Param<T>& p) { p.zero_grad(); });
  }
  template <typename U>
  FinetuneModel<U> cast() const;
};

template <typename T>
FinetuneModel<T> make_finetune_model(const EncoderConfig& encoder, const HeadConfig& head,
                                     const LabelVocabulary& vocab, Rng& rng);

/// Ground truth of one graph in vocabulary indices. Edge targets are
/// multi-hot; relation-free edges target the "and" class alone.
struct GraphTargets {
  std::vector<int> node_classes;
  Mat<double> edge_targets;  // edges x predicates, 0/1
};

GraphTargets build_targets(const PreparedGraph& graph, const LabelVocabulary& vocab);

struct FinetuneConfig {
  double lambda_obj = 0.1;
  double lambda_pred = 1.0;
  double lr = 1e-4;
  int batch_size = 4;
  int epochs = 20;
  bool freeze_backbone = false;
  bool keep_projectors = false;
  std::uint64_t seed = 0;
  AdamConfig adam;
  HeadConfig head;

  void validate() const;
};

struct FinetuneLoss {
  double total = 0.0;
  double ce = 0.0;   // mean over nodes
  double bce = 0.0;  // mean over edges and predicate classes
};

/// lambda_obj * CE + lambda_pred * BCE on probabilities, each clamped to
/// [eps, 1 - eps]. Throws TrainingError when the result is not finite.
FinetuneLoss finetune_loss(const Mat<double>& node_probs, const Mat<double>& edge_probs, const GraphTargets& targets,
                           const FinetuneConfig& config);

/// Batch objective: per-scene losses averaged over the batch. Node and edge
/// features of the whole batch pass through the heads together so batch
/// norm sees one batch. Accumulates gradients when compute_grad is set.
template <typename T>
FinetuneLoss finetune_objective(FinetuneModel<T>& model, std::span<const PreparedGraph* const> batch,
                                std::span<const GraphTargets> targets, const FinetuneConfig& config,
                                bool compute_grad);

struct Predictions {
  Mat<double> node_probs;  // nodes x object classes
  Mat<double> edge_probs;  // edges x predicate classes
};

/// Evaluation-mode inference.
template <typename T>
Predictions predict(const FinetuneModel<T>& model, const PreparedGraph& graph);

struct FinetuneEpochLog {
  int epoch = 0;
  double lr = 0.0;
  FinetuneLoss loss;
};

struct FinetuneResult {
  FinetuneModel<float> model;
  Adam<float> optimizer;
  std::vector<FinetuneEpochLog> log;
};

using FinetuneEpochCallback = std::function<void(const FinetuneEpochLog&, FinetuneModel<float>&, const Adam<float>&)>;

/// Heads are always fresh; the backbone comes from `pretrained` when given.
FinetuneResult finetune(std::span<const PreparedGraph> data, const LabelVocabulary& vocab,
                        const EncoderConfig& encoder, const FinetuneConfig& config,
                        const PretrainModel<float>* pretrained = nullptr,
                        const FinetuneEpochCallback& on_epoch = {});

}  // namespace langsg
