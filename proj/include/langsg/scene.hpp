#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace langsg {

/// Predicate that encodes "no relationship" for an edge.
inline constexpr std::string_view kNeutralPredicate = "and";

struct Point {
  float x = 0, y = 0, z = 0;
  float r = 0, g = 0, b = 0;

  bool operator==(const Point&) const = default;
};

struct Aabb {
  std::array<float, 3> min{0, 0, 0};
  std::array<float, 3> max{0, 0, 0};

  std::array<float, 3> center() const;
  std::array<float, 3> extent() const;
  double volume() const;
  bool contains(float x, float y, float z) const;
  /// Smallest box enclosing both.
  Aabb merged(const Aabb& other) const;

  bool operator==(const Aabb&) const = default;
};

struct Instance {
  int id = 0;
  std::string label;
  std::vector<std::uint32_t> point_indices;  // sorted, unique
  Aabb bbox;                                 // derived from the points

  bool operator==(const Instance&) const = default;
};

struct Relationship {
  int subject_id = 0;
  int object_id = 0;
  std::string predicate;

  auto operator<=>(const Relationship&) const = default;
};

struct Scene {
  std::string scene_id;
  std::vector<Point> points;
  std::vector<Instance> instances;
  std::vector<Relationship> relationships;

  const Instance* find_instance(int id) const;
  bool operator==(const Scene&) const = default;
};

Aabb compute_bbox(const std::vector<Point>& points, const std::vector<std::uint32_t>& indices);

/// Recomputes every instance bbox, sorts instances by id and relationships
/// by (subject, object, predicate).
void canonicalize(Scene& scene);

/// Object and predicate class lists. Indices are positions in the lists.
class LabelVocabulary {
 public:
  LabelVocabulary() = default;
  /// Throws ValidationError on duplicates or when "and" is missing.
  LabelVocabulary(std::vector<std::string> object_labels, std::vector<std::string> predicate_labels);

  const std::vector<std::string>& object_labels() const { return objects_; }
  const std::vector<std::string>& predicate_labels() const { return predicates_; }
  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_predicates() const { return predicates_.size(); }

  std::optional<int> find_object(std::string_view label) const;
  std::optional<int> find_predicate(std::string_view label) const;
  /// Throw LookupError when absent.
  int object_index(std::string_view label) const;
  int predicate_index(std::string_view label) const;
  int neutral_index() const { return predicate_index(kNeutralPredicate); }

  bool operator==(const LabelVocabulary& o) const {
    return objects_ == o.objects_ && predicates_ == o.predicates_;
  }

 private:
  std::vector<std::string> objects_;
  std::vector<std::string> predicates_;
  std::unordered_map<std::string, int> object_index_;
  std::unordered_map<std::string, int> predicate_index_;
};

LabelVocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const LabelVocabulary& vocab, const std::filesystem::path& path);

/// Lists every violated invariant; empty means the scene is valid. When a
/// vocabulary is supplied, labels and predicates are checked against it.
std::vector<std::string> validate_scene(const Scene& scene, const LabelVocabulary* vocab = nullptr);

/// Reads the metadata document and its binary point file. Throws ParseError
/// or ValidationError.
Scene load_scene(const std::filesystem::path& path);

/// Writes canonical metadata to `path` and points to `<stem>.pts` next to it.
void save_scene(const Scene& scene, const std::filesystem::path& path);

/// Canonical metadata text for a scene whose point file is `points_file`.
std::string serialize_scene_metadata(const Scene& scene, const std::string& points_file);

std::vector<Point> load_points(const std::filesystem::path& path);
void save_points(const std::vector<Point>& points, const std::filesystem::path& path);

/// Cuts a scene into spatially coherent subscenes of at most `max_objects`
/// instances. Each split keeps the full point cloud and every relationship
/// whose endpoints both survive.
std::vector<Scene> split_scene(const Scene& scene, int max_objects, std::uint64_t rng_seed);

}  // namespace langsg
