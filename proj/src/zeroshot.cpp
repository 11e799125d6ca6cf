#include "langsg/zeroshot.hpp"

#include <cmath>
#include <stdexcept>

#include "langsg/errors.hpp"

namespace langsg {

void RoomQuerySet::validate() const {
  if (labels.size() < 2) throw ValidationError("room queries: need at least two");
  if (labels.size() != vectors.size()) throw ValidationError("room queries: labels and vectors differ in count");
  for (std::size_t q = 0; q < vectors.size(); ++q) {
    if (vectors[q].size() != vectors[0].size() || vectors[q].empty()) {
      throw ValidationError("room queries: inconsistent dimension for '" + labels[q] + "'");
    }
    double n2 = 0;
    for (float x : vectors[q]) n2 += static_cast<double>(x) * x;
    if (std::fabs(std::sqrt(n2) - 1.0) > kUnitNormTolerance) {
      throw ValidationError("room queries: '" + labels[q] + "' is not unit norm");
    }
  }
}

RoomQuerySet RoomQuerySet::from_table(const std::vector<std::string>& labels, const EmbeddingTable& table) {
  RoomQuerySet q;
  for (const auto& l : labels) {
    const auto v = table.lookup(l);
    q.labels.push_back(l);
    q.vectors.emplace_back(v.begin(), v.end());
  }
  q.validate();
  return q;
}

std::vector<float> room_query_vector(const std::vector<std::string>& members, const EmbeddingTable& table) {
  if (members.empty()) throw std::invalid_argument("room query needs at least one member label");
  std::vector<double> sum(static_cast<std::size_t>(table.dim()), 0.0);
  for (const auto& m : members) {
    const auto v = table.lookup(object_prompt(m));
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
  }
  double n2 = 0;
  for (double x : sum) n2 += x * x;
  if (n2 == 0.0) throw std::domain_error("room query vector is zero");
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<float> out(sum.size());
  for (std::size_t k = 0; k < sum.size(); ++k) out[k] = static_cast<float>(sum[k] * inv);
  return out;
}

std::map<std::string, std::vector<std::string>> default_rooms() {
  return {{"bathroom", {"toilet", "sink", "bathtub", "towel", "soap"}},
          {"kitchen", {"fridge", "oven", "table", "chair", "cup"}}};
}

void add_room_queries(EmbeddingTable& table, const std::map<std::string, std::vector<std::string>>& rooms) {
  for (const auto& [room, members] : rooms) table.insert(room, room_query_vector(members, table));
}

template <typename T>
std::vector<double> pool_graph(const Mat<T>& node_features) {
  if (node_features.rows() == 0) throw std::invalid_argument("pool_graph: graph has no nodes");
  std::vector<double> out(static_cast<std::size_t>(node_features.cols()), 0.0);
  for (Eigen::Index r = 0; r < node_features.rows(); ++r) {
    for (Eigen::Index c = 0; c < node_features.cols(); ++c) out[c] += static_cast<double>(node_features(r, c));
  }
  for (double& x : out) x /= static_cast<double>(node_features.rows());
  return out;
}

RoomPrediction classify_room(std::span<const double> pooled, const RoomQuerySet& queries) {
  queries.validate();
  RoomPrediction p;
  for (const auto& q : queries.vectors) {
    std::vector<double> qd(q.begin(), q.end());
    p.cosines.push_back(cosine(pooled, std::span<const double>(qd)));
  }
  p.index = 0;
  for (std::size_t q = 1; q < p.cosines.size(); ++q) {
    if (p.cosines[q] > p.cosines[static_cast<std::size_t>(p.index)]) p.index = static_cast<int>(q);
  }
  p.label = queries.labels[static_cast<std::size_t>(p.index)];
  const double mx = p.cosines[static_cast<std::size_t>(p.index)];
  double z = 0;
  for (double c : p.cosines) z += std::exp(c - mx);
  for (double c : p.cosines) p.softmax.push_back(std::exp(c - mx) / z);
  return p;
}

RoomPrediction zero_shot(const PretrainModel<float>& model, const PreparedGraph& graph, const RoomQuerySet& queries) {
  const FeatureGraph<float> fg = model.backbone.encode(graph);
  const Mat<float> fn = model.projectors.node.forward(fg.nodes);
  const auto pooled = pool_graph(fn);
  return classify_room(pooled, queries);
}

template std::vector<double> pool_graph<float>(const Mat<float>&);
template std::vector<double> pool_graph<double>(const Mat<double>&);

}  // namespace langsg
