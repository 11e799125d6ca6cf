#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "langsg/scene.hpp"

namespace langsg {

enum class Shape { Box, Cylinder, Sphere };

struct ObjectClass {
  std::string label;
  Shape shape = Shape::Box;
  std::array<float, 3> size_min{0.3f, 0.3f, 0.3f};  // meters (x, y, z)
  std::array<float, 3> size_max{0.6f, 0.6f, 0.6f};
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};
  bool can_support = false;  // other objects may be stacked on top
  bool stackable = false;    // may be placed on top of a supporting object
};

/// Geometric predicate rules. Every enabled rule contributes one predicate
/// name to the vocabulary.
struct PredicateRules {
  bool standing_on = true;
  bool supporting = true;
  bool close_by = true;
  bool bigger_than = true;
  bool smaller_than = true;
  bool same_as = true;

  float contact_tolerance = 0.01f;  // 1 cm between bottom and top faces
  float min_xy_overlap = 0.5f;      // fraction of the upper object's footprint
  float proximity = 0.5f;           // centroid distance for "close by"
  float volume_ratio = 2.0f;        // "bigger than" threshold

  /// Predicate names of the enabled rules, in a fixed order.
  std::vector<std::string> predicate_names() const;
};

struct GenConfig {
  std::uint64_t seed = 0;
  int min_objects = 4;
  int max_objects = 9;
  std::array<float, 2> room_extent{4.0f, 4.0f};  // meters, floor is [0,x]×[0,y]
  int min_points = 96;
  int max_points = 192;
  int floor_points = 400;  // unlabelled background points at z = 0
  float color_jitter = 0.03f;
  float stack_probability = 0.35f;
  int max_retries = 200;
  std::vector<ObjectClass> classes = default_object_classes();
  PredicateRules rules;

  /// Ten household classes spanning box, cylinder and sphere shapes.
  static std::vector<ObjectClass> default_object_classes();

  /// Throws ValidationError when ranges are empty or the room is degenerate.
  void validate() const;

  /// Object labels in class order and enabled predicates plus "and".
  LabelVocabulary vocabulary() const;
};

/// Synthesises a scene with collision-free placements and geometric
/// ground-truth relationships. Deterministic in config.seed.
Scene generate_scene(const GenConfig& config);

/// Relationships implied by the scene geometry under the given rules.
std::vector<Relationship> derive_predicates(const Scene& scene, const PredicateRules& rules);

}  // namespace langsg
