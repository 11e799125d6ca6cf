#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "langsg/nn.hpp"
#include "langsg/scene.hpp"

namespace langsg {

struct EncoderConfig {
  int gcn_layers = 4;
  int feature_dim = 256;
  std::vector<int> point_hidden{64, 128};  // per-point MLP hidden widths
  bool pair_mask = true;
  int max_instance_points = 512;
  int max_pair_points = 1024;
  std::uint64_t sample_seed = 0;

  int node_channels() const { return 6; }
  int edge_channels() const { return pair_mask ? 7 : 6; }
  /// Throws ValidationError (gcn_layers >= 1, positive widths and caps).
  void validate() const;
  /// Architecture summary used in checkpoint fingerprints.
  std::string describe() const;
};

/// Rows (x, y, z, r, g, b) of the instance's points, xyz relative to its
/// bbox center. Throws LookupError for an unknown id.
Mat<float> extract_instance_points(const Scene& scene, int instance_id);

/// Every scene point inside the box enclosing B_i and B_j, xyz relative to
/// that box's center, plus a mask channel: 1 for points of i, 2 for points
/// of j, 0 otherwise. Throws LookupError for unknown ids and
/// std::invalid_argument when i == j.
Mat<float> extract_pair_points(const Scene& scene, int subject_id, int object_id, bool with_mask = true);

/// Keeps at most `cap` rows, chosen uniformly without replacement and kept in
/// their original order.
Mat<float> subsample_rows(const Mat<float>& rows, int cap, Rng& rng);

/// Point sets of one scene, extracted once and reused across epochs.
struct PreparedGraph {
  std::string scene_id;
  std::vector<int> node_ids;  // instance ids, in node order
  std::vector<std::string> node_labels;
  std::vector<std::pair<int, int>> edges;  // (subject node, object node), all ordered pairs
  std::vector<Relationship> relationships;  // by instance id, as in the scene
  Mat<float> node_points;                  // stacked point sets
  std::vector<Eigen::Index> node_offsets;  // size nodes + 1
  Mat<float> edge_points;
  std::vector<Eigen::Index> edge_offsets;  // size edges + 1

  std::size_t num_nodes() const { return node_ids.size(); }
  std::size_t num_edges() const { return edges.size(); }
};

/// Nodes follow scene.instances order; edges enumerate (i, j), i != j, with
/// i major. Subsampling streams are keyed by instance ids.
PreparedGraph prepare_graph(const Scene& scene, const EncoderConfig& config);

template <typename T>
struct FeatureGraph {
  Mat<T> nodes;  // n x F
  Mat<T> edges;  // n(n-1) x F
  std::vector<std::pair<int, int>> edge_index;
  std::vector<int> node_ids;
};

/// Per-node average of the incident-edge messages. `messages` holds one
/// row per edge laid out as [psi_subject | edge | psi_object]; node i
/// collects the subject slot of edges it starts and the object slot of edges
/// it ends. counts[i] is the number of incident directed edges.
template <typename T>
void aggregate_messages(const Mat<T>& messages, const std::vector<std::pair<int, int>>& edge_index,
                        Eigen::Index num_nodes, Mat<T>& rho, std::vector<int>& counts);

template <typename T>
struct GcnLayer {
  Mlp<T> g1;  // 3F -> 3F, linear + ReLU
  Mlp<T> g2;  // F -> F, linear + ReLU

  GcnLayer() = default;
  GcnLayer(int feature_dim, const std::string& name, Rng& rng);

  template <typename F>
  void for_each_param(F&& f) {
    g1.for_each_param(f);
    g2.for_each_param(f);
  }
};

template <typename T>
struct GcnCache {
  MlpCache<T> g1;
  MlpCache<T> g2;
  Mat<T> messages;
  Mat<T> rho;
  std::vector<int> counts;
  std::vector<Eigen::Index> active;  // nodes with counts > 0
};

/// One message-passing step. Isolated nodes keep their features.
template <typename T>
FeatureGraph<T> gcn_layer(const FeatureGraph<T>& graph, const GcnLayer<T>& layer);
template <typename T>
FeatureGraph<T> gcn_layer_train(const FeatureGraph<T>& graph, GcnLayer<T>& layer, GcnCache<T>& cache);
/// Replaces (d_nodes, d_edges), the gradients w.r.t. the layer outputs, with
/// the gradients w.r.t. its inputs and accumulates parameter gradients.
template <typename T>
void gcn_layer_backward(GcnLayer<T>& layer, const GcnCache<T>& cache, const std::vector<std::pair<int, int>>& edges,
                        Mat<T>& d_nodes, Mat<T>& d_edges);

template <typename T>
struct EncodeCache {
  PointEncoderCache<T> nodes;
  PointEncoderCache<T> edges;
  std::vector<GcnCache<T>> layers;
};

/// Node and edge point encoders plus the stack of GCN layers.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  int feature_dim() const { return config_.feature_dim; }

  FeatureGraph<T> encode_initial(const PreparedGraph& graph) const;
  FeatureGraph<T> encode(const PreparedGraph& graph) const;
  FeatureGraph<T> encode_train(const PreparedGraph& graph, EncodeCache<T>& cache);
  /// Consumes gradients w.r.t. the final node and edge features.
  void backward(const PreparedGraph& graph, const EncodeCache<T>& cache, Mat<T> d_nodes, Mat<T> d_edges);

  PointEncoder<T>& node_encoder() { return node_encoder_; }
  PointEncoder<T>& edge_encoder() { return edge_encoder_; }
  std::vector<GcnLayer<T>>& layers() { return layers_; }
  const std::vector<GcnLayer<T>>& layers() const { return layers_; }

  template <typename F>
  void for_each_param(F&& f) {
    node_encoder_.for_each_param(f);
    edge_encoder_.for_each_param(f);
    for (auto& l : layers_) l.for_each_param(f);
  }

  template <typename U>
  Backbone<U> cast() const {
    Backbone<U> out;
    out.config_ = config_;
    out.node_encoder_ = node_encoder_.template cast<U>();
    out.edge_encoder_ = edge_encoder_.template cast<U>();
    for (const auto& l : layers_) {
      GcnLayer<U> c;
      c.g1 = l.g1.template cast<U>();
      c.g2 = l.g2.template cast<U>();
      out.layers_.push_back(std::move(c));
    }
    return out;
  }

 private:
  template <typename U>
  friend class Backbone;

  EncoderConfig config_;
  PointEncoder<T> node_encoder_;
  PointEncoder<T> edge_encoder_;
  std::vector<GcnLayer<T>> layers_;
};

}  // namespace langsg
