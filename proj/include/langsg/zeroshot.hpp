#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "langsg/pretrain.hpp"
#include "langsg/text_embed.hpp"

namespace langsg {

struct RoomQuerySet {
  std::vector<std::string> labels;
  std::vector<std::vector<float>> vectors;  // unit norm, one per label

  /// Throws ValidationError unless there are >= 2 queries of equal
  /// dimension, each unit norm.
  void validate() const;
  /// Looks every label up in the table.
  static RoomQuerySet from_table(const std::vector<std::string>& labels, const EmbeddingTable& table);
};

/// Normalized sum of the members' object embeddings.
std::vector<float> room_query_vector(const std::vector<std::string>& members, const EmbeddingTable& table);

/// The two synthetic room types used for zero-shot checks, split over the
/// default object classes.
std::map<std::string, std::vector<std::string>> default_rooms();

/// Adds one entry per room, built with room_query_vector.
void add_room_queries(EmbeddingTable& table, const std::map<std::string, std::vector<std::string>>& rooms);

/// Elementwise mean over the rows. Throws std::invalid_argument when empty.
template <typename T>
std::vector<double> pool_graph(const Mat<T>& node_features);

struct RoomPrediction {
  int index = 0;
  std::string label;
  std::vector<double> cosines;
  std::vector<double> softmax;  // temperature 1, display only
};

/// argmax_q cos(f, q); ties go to the earlier query. Throws
/// std::domain_error for a zero pooled feature.
RoomPrediction classify_room(std::span<const double> pooled, const RoomQuerySet& queries);

/// Encodes the graph, projects nodes into text space, pools and classifies.
RoomPrediction zero_shot(const PretrainModel<float>& model, const PreparedGraph& graph, const RoomQuerySet& queries);

}  // namespace langsg
