#include "langsg/graph_encoder.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace langsg {

void EncoderConfig::validate() const {
  if (gcn_layers < 1) throw ValidationError("encoder: gcn_layers must be >= 1");
  if (feature_dim < 1) throw ValidationError("encoder: feature_dim must be positive");
  for (int w : point_hidden) {
    if (w < 1) throw ValidationError("encoder: point_hidden widths must be positive");
  }
  if (max_instance_points < 1 || max_pair_points < 1) throw ValidationError("encoder: point caps must be positive");
}

std::string EncoderConfig::describe() const {
  std::ostringstream os;
  os << "k" << gcn_layers << "/F" << feature_dim << "/pe";
  for (int w : point_hidden) os << w << ",";
  os << "/mask" << (pair_mask ? 1 : 0);
  return os.str();
}

Mat<float> extract_instance_points(const Scene& scene, int instance_id) {
  const Instance* inst = scene.find_instance(instance_id);
  if (!inst) throw LookupError("unknown instance id " + std::to_string(instance_id));
  const auto c = inst->bbox.center();
  Mat<float> out(static_cast<Eigen::Index>(inst->point_indices.size()), 6);
  Eigen::Index r = 0;
  for (auto idx : inst->point_indices) {
    const Point& p = scene.points[idx];
    out.row(r++) << p.x - c[0], p.y - c[1], p.z - c[2], p.r, p.g, p.b;
  }
  return out;
}

Mat<float> extract_pair_points(const Scene& scene, int subject_id, int object_id, bool with_mask) {
  if (subject_id == object_id) throw std::invalid_argument("extract_pair_points: subject and object must differ");
  const Instance* a = scene.find_instance(subject_id);
  const Instance* b = scene.find_instance(object_id);
  if (!a) throw LookupError("unknown instance id " + std::to_string(subject_id));
  if (!b) throw LookupError("unknown instance id " + std::to_string(object_id));

  std::vector<std::uint8_t> mask(scene.points.size(), 0);
  for (auto idx : a->point_indices) mask[idx] = 1;
  for (auto idx : b->point_indices) mask[idx] = 2;

  const Aabb region = a->bbox.merged(b->bbox);
  const auto c = region.center();
  std::vector<std::size_t> inside;
  for (std::size_t k = 0; k < scene.points.size(); ++k) {
    const Point& p = scene.points[k];
    // member points are always included even if rounding puts them on the edge
    if (mask[k] != 0 || region.contains(p.x, p.y, p.z)) inside.push_back(k);
  }
  Mat<float> out(static_cast<Eigen::Index>(inside.size()), with_mask ? 7 : 6);
  Eigen::Index r = 0;
  for (auto k : inside) {
    const Point& p = scene.points[k];
    out(r, 0) = p.x - c[0];
    out(r, 1) = p.y - c[1];
    out(r, 2) = p.z - c[2];
    out(r, 3) = p.r;
    out(r, 4) = p.g;
    out(r, 5) = p.b;
    if (with_mask) out(r, 6) = static_cast<float>(mask[k]);
    ++r;
  }
  return out;
}

Mat<float> subsample_rows(const Mat<float>& rows, int cap, Rng& rng) {
  if (rows.rows() <= cap) return rows;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows.rows()));
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<Eigen::Index>(k);
  for (int k = 0; k < cap; ++k) {
    const auto j = k + static_cast<Eigen::Index>(rng.uniform_index(idx.size() - k));
    std::swap(idx[k], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  Mat<float> out(cap, rows.cols());
  for (int k = 0; k < cap; ++k) out.row(k) = rows.row(idx[k]);
  return out;
}

namespace {

void stack_sets(const std::vector<Mat<float>>& sets, int channels, Mat<float>& stacked,
                std::vector<Eigen::Index>& offsets) {
  offsets.assign(1, 0);
  Eigen::Index total = 0;
  for (const auto& s : sets) {
    total += s.rows();
    offsets.push_back(total);
  }
  stacked.resize(total, channels);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    stacked.middleRows(offsets[k], sets[k].rows()) = sets[k];
  }
}

}  // namespace

PreparedGraph prepare_graph(const Scene& scene, const EncoderConfig& config) {
  config.validate();
  PreparedGraph g;
  g.scene_id = scene.scene_id;
  g.relationships = scene.relationships;
  std::vector<Mat<float>> node_sets, edge_sets;
  for (const auto& inst : scene.instances) {
    g.node_ids.push_back(inst.id);
    g.node_labels.push_back(inst.label);
    Rng rng = Rng::derive(config.sample_seed, "inst:" + std::to_string(inst.id));
    node_sets.push_back(subsample_rows(extract_instance_points(scene, inst.id), config.max_instance_points, rng));
  }
  const int n = static_cast<int>(scene.instances.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const int a = scene.instances[i].id, b = scene.instances[j].id;
      g.edges.emplace_back(i, j);
      Rng rng = Rng::derive(config.sample_seed, "pair:" + std::to_string(a) + ":" + std::to_string(b));
      edge_sets.push_back(subsample_rows(extract_pair_points(scene, a, b, config.pair_mask), config.max_pair_points, rng));
    }
  }
  stack_sets(node_sets, config.node_channels(), g.node_points, g.node_offsets);
  stack_sets(edge_sets, config.edge_channels(), g.edge_points, g.edge_offsets);
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
void aggregate_messages(const Mat<T>& messages, const std::vector<std::pair<int, int>>& edge_index,
                        Eigen::Index num_nodes, Mat<T>& rho, std::vector<int>& counts) {
  const Eigen::Index f = messages.cols() / 3;
  rho = Mat<T>::Zero(num_nodes, f);
  counts.assign(static_cast<std::size_t>(num_nodes), 0);
  for (std::size_t e = 0; e < edge_index.size(); ++e) {
    const auto [i, j] = edge_index[e];
    const auto row = static_cast<Eigen::Index>(e);
    rho.row(i) += messages.block(row, 0, 1, f);
    rho.row(j) += messages.block(row, 2 * f, 1, f);
    ++counts[i];
    ++counts[j];
  }
  for (Eigen::Index i = 0; i < num_nodes; ++i) {
    if (counts[i] > 0) rho.row(i) /= static_cast<T>(counts[i]);
  }
}

template <typename T>
GcnLayer<T>::GcnLayer(int feature_dim, const std::string& name, Rng& rng)
    : g1(MlpSpec::all_relu({3 * feature_dim, 3 * feature_dim}), name + ".g1", rng),
      g2(MlpSpec::all_relu({feature_dim, feature_dim}), name + ".g2", rng) {}

namespace {

template <typename T>
Mat<T> gather_triplets(const FeatureGraph<T>& graph) {
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

template <typename T, typename G2>
FeatureGraph<T> finish_layer(const FeatureGraph<T>& graph, const Mat<T>& messages, const Mat<T>& rho,
                             const std::vector<Eigen::Index>& active, G2&& apply_g2) {
  const Eigen::Index f = graph.nodes.cols();
  FeatureGraph<T> out;
  out.edge_index = graph.edge_index;
  out.node_ids = graph.node_ids;
  out.edges = messages.middleCols(f, f);
  out.nodes = graph.nodes;
  if (!active.empty()) {
    Mat<T> rho_active(static_cast<Eigen::Index>(active.size()), f);
    for (std::size_t k = 0; k < active.size(); ++k) rho_active.row(static_cast<Eigen::Index>(k)) = rho.row(active[k]);
    Mat<T> update = apply_g2(rho_active);
    for (std::size_t k = 0; k < active.size(); ++k) out.nodes.row(active[k]) += update.row(static_cast<Eigen::Index>(k));
  }
  return out;
}

std::vector<Eigen::Index> active_nodes(const std::vector<int>& counts) {
  std::vector<Eigen::Index> active;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) active.push_back(static_cast<Eigen::Index>(i));
  }
  return active;
}

}  // namespace

template <typename T>
FeatureGraph<T> gcn_layer(const FeatureGraph<T>& graph, const GcnLayer<T>& layer) {
  if (graph.edge_index.empty()) return graph;
  Mat<T> messages = layer.g1.forward(gather_triplets(graph));
  Mat<T> rho;
  std::vector<int> counts;
  aggregate_messages(messages, graph.edge_index, graph.nodes.rows(), rho, counts);
  return finish_layer(graph, messages, rho, active_nodes(counts), [&](const Mat<T>& r) { return layer.g2.forward(r); });
}

template <typename T>
FeatureGraph<T> gcn_layer_train(const FeatureGraph<T>& graph, GcnLayer<T>& layer, GcnCache<T>& cache) {
  cache.active.clear();
  cache.counts.assign(static_cast<std::size_t>(graph.nodes.rows()), 0);
  if (graph.edge_index.empty()) return graph;
  cache.messages = layer.g1.forward_train(gather_triplets(graph), cache.g1);
  aggregate_messages(cache.messages, graph.edge_index, graph.nodes.rows(), cache.rho, cache.counts);
  cache.active = active_nodes(cache.counts);
  return finish_layer(graph, cache.messages, cache.rho, cache.active,
                      [&](const Mat<T>& r) { return layer.g2.forward_train(r, cache.g2); });
}

template <typename T>
void gcn_layer_backward(GcnLayer<T>& layer, const GcnCache<T>& cache, const std::vector<std::pair<int, int>>& edges,
                        Mat<T>& d_nodes, Mat<T>& d_edges) {
  if (edges.empty()) return;
  const Eigen::Index f = d_nodes.cols();
  // residual path: d_nodes already holds the identity contribution
  Mat<T> d_rho = Mat<T>::Zero(d_nodes.rows(), f);
  if (!cache.active.empty()) {
    Mat<T> d_update(static_cast<Eigen::Index>(cache.active.size()), f);
    for (std::size_t k = 0; k < cache.active.size(); ++k) {
      d_update.row(static_cast<Eigen::Index>(k)) = d_nodes.row(cache.active[k]);
    }
    Mat<T> d_rho_active = layer.g2.backward(d_update, cache.g2);
    for (std::size_t k = 0; k < cache.active.size(); ++k) {
      const Eigen::Index i = cache.active[k];
      d_rho.row(i) = d_rho_active.row(static_cast<Eigen::Index>(k)) / static_cast<T>(cache.counts[i]);
    }
  }
  const auto m = static_cast<Eigen::Index>(edges.size());
  Mat<T> d_messages(m, 3 * f);
  for (Eigen::Index e = 0; e < m; ++e) {
    const auto [i, j] = edges[e];
    d_messages.block(e, 0, 1, f) = d_rho.row(i);
    d_messages.block(e, f, 1, f) = d_edges.row(e);
    d_messages.block(e, 2 * f, 1, f) = d_rho.row(j);
  }
  Mat<T> d_triplets = layer.g1.backward(d_messages, cache.g1);
  for (Eigen::Index e = 0; e < m; ++e) {
    const auto [i, j] = edges[e];
    d_nodes.row(i) += d_triplets.block(e, 0, 1, f);
    d_nodes.row(j) += d_triplets.block(e, 2 * f, 1, f);
  }
  d_edges = d_triplets.middleCols(f, f);
}

// ---------------------------------------------------------------------------

template <typename T>
Backbone<T>::Backbone(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  std::vector<int> node_widths{config_.node_channels()};
  std::vector<int> edge_widths{config_.edge_channels()};
  for (int w : config_.point_hidden) {
    node_widths.push_back(w);
    edge_widths.push_back(w);
  }
  node_widths.push_back(config_.feature_dim);
  edge_widths.push_back(config_.feature_dim);
  node_encoder_ = PointEncoder<T>(node_widths, "backbone.node_encoder", rng);
  edge_encoder_ = PointEncoder<T>(edge_widths, "backbone.edge_encoder", rng);
  for (int l = 0; l < config_.gcn_layers; ++l) {
    layers_.emplace_back(config_.feature_dim, "backbone.gcn" + std::to_string(l), rng);
  }
}

template <typename T>
FeatureGraph<T> Backbone<T>::encode_initial(const PreparedGraph& graph) const {
  FeatureGraph<T> out;
  out.edge_index = graph.edges;
  out.node_ids = graph.node_ids;
  out.nodes = node_encoder_.forward_segments(graph.node_points.template cast<T>(), graph.node_offsets);
  if (graph.edges.empty()) {
    out.edges = Mat<T>(0, config_.feature_dim);
  } else {
    out.edges = edge_encoder_.forward_segments(graph.edge_points.template cast<T>(), graph.edge_offsets);
  }
  return out;
}

template <typename T>
FeatureGraph<T> Backbone<T>::encode(const PreparedGraph& graph) const {
  FeatureGraph<T> g = encode_initial(graph);
  for (const auto& layer : layers_) g = gcn_layer(g, layer);
  return g;
}

template <typename T>
FeatureGraph<T> Backbone<T>::encode_train(const PreparedGraph& graph, EncodeCache<T>& cache) {
  FeatureGraph<T> g;
  g.edge_index = graph.edges;
  g.node_ids = graph.node_ids;
  g.nodes = node_encoder_.forward_train(graph.node_points.template cast<T>(), graph.node_offsets, cache.nodes);
  if (graph.edges.empty()) {
    g.edges = Mat<T>(0, config_.feature_dim);
  } else {
    g.edges = edge_encoder_.forward_train(graph.edge_points.template cast<T>(), graph.edge_offsets, cache.edges);
  }
  cache.layers.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) g = gcn_layer_train(g, layers_[l], cache.layers[l]);
  return g;
}

template <typename T>
void Backbone<T>::backward(const PreparedGraph& graph, const EncodeCache<T>& cache, Mat<T> d_nodes, Mat<T> d_edges) {
  for (std::size_t l = layers_.size(); l-- > 0;) {
    gcn_layer_backward(layers_[l], cache.layers[l], graph.edges, d_nodes, d_edges);
  }
  node_encoder_.backward(d_nodes, cache.nodes);
  if (!graph.edges.empty()) edge_encoder_.backward(d_edges, cache.edges);
}

#define LANGSG_INSTANTIATE(T)                                                                               \
  template void aggregate_messages<T>(const Mat<T>&, const std::vector<std::pair<int, int>>&, Eigen::Index, \
                                      Mat<T>&, std::vector<int>&);                                          \
  template struct GcnLayer<T>;                                                                              \
  template FeatureGraph<T> gcn_layer<T>(const FeatureGraph<T>&, const GcnLayer<T>&);                        \
  template FeatureGraph<T> gcn_layer_train<T>(const FeatureGraph<T>&, GcnLayer<T>&, GcnCache<T>&);          \
  template void gcn_layer_backward<T>(GcnLayer<T>&, const GcnCache<T>&, const std::vector<std::pair<int, int>>&, \
                                      Mat<T>&, Mat<T>&);                                                    \
  template class Backbone<T>;

LANGSG_INSTANTIATE(float)
LANGSG_INSTANTIATE(double)
#undef LANGSG_INSTANTIATE

}  // namespace langsg
