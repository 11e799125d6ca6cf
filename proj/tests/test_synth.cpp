#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "langsg/errors.hpp"
#include "langsg/synth.hpp"

using namespace langsg;

namespace {

// Adds an instance whose points are the corners of [lo, hi].
void add_box(Scene& s, int id, const std::string& label, std::array<float, 3> lo, std::array<float, 3> hi) {
  Instance inst;
  inst.id = id;
  inst.label = label;
  for (int c = 0; c < 8; ++c) {
    inst.point_indices.push_back(static_cast<std::uint32_t>(s.points.size()));
    s.points.push_back({c & 1 ? hi[0] : lo[0], c & 2 ? hi[1] : lo[1], c & 4 ? hi[2] : lo[2], 0.2f, 0.2f, 0.2f});
  }
  s.instances.push_back(std::move(inst));
}

bool has(const std::vector<Relationship>& rels, int s, int o, const std::string& p) {
  return std::find(rels.begin(), rels.end(), Relationship{s, o, p}) != rels.end();
}

}  // namespace

TEST_CASE("synth: same seed gives byte-identical scenes") {
  GenConfig c;
  c.seed = 7;
  const Scene a = generate_scene(c), b = generate_scene(c);
  CHECK(a == b);
  CHECK(serialize_scene_metadata(a, "x.pts") == serialize_scene_metadata(b, "x.pts"));
  c.seed = 8;
  CHECK_FALSE(generate_scene(c) == a);
}

TEST_CASE("synth: object count range is honoured") {
  GenConfig c;
  c.min_objects = c.max_objects = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    c.seed = seed;
    CHECK(generate_scene(c).instances.size() == 3);
  }
}

TEST_CASE("synth: generated scenes validate against the vocabulary") {
  GenConfig c;
  const LabelVocabulary vocab = c.vocabulary();
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    CHECK(validate_scene(s, &vocab).empty());
    CHECK(s.relationships == derive_predicates(s, c.rules));
  }
}

TEST_CASE("synth: placements do not interpenetrate") {
  GenConfig c;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    for (std::size_t a = 0; a < s.instances.size(); ++a) {
      for (std::size_t b = a + 1; b < s.instances.size(); ++b) {
        const Aabb& x = s.instances[a].bbox;
        const Aabb& y = s.instances[b].bbox;
        double overlap = 1.0;
        for (int k = 0; k < 3; ++k) {
          overlap *= std::max(0.0, static_cast<double>(std::min(x.max[k], y.max[k]) - std::max(x.min[k], y.min[k])));
        }
        CHECK(overlap < 1e-6);
      }
    }
  }
}

TEST_CASE("synth: vocabulary holds the enabled predicates and the neutral one") {
  GenConfig c;
  const auto v = c.vocabulary();
  CHECK(v.num_objects() == 10);
  CHECK(v.num_predicates() == 7);
  CHECK(v.find_predicate("and").has_value());
  c.rules.same_as = false;
  CHECK(c.vocabulary().num_predicates() == 6);
}

TEST_CASE("synth: invalid configs and impossible placements") {
  GenConfig c;
  c.min_objects = 5;
  c.max_objects = 4;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  GenConfig tight;
  tight.room_extent = {0.12f, 0.12f};
  tight.stack_probability = 0.0f;
  tight.min_objects = tight.max_objects = 9;
  tight.seed = 123;
  try {
    generate_scene(tight);
    FAIL("expected a generation error");
  } catch (const GenerationError& e) {
    CHECK(std::string(e.what()).find("123") != std::string::npos);
  }
}

TEST_CASE("derive_predicates: standing on within contact tolerance") {
  Scene s;
  add_box(s, 0, "table", {0, 0, 0}, {1, 1, 0.7f});
  add_box(s, 1, "cup", {0.2f, 0.2f, 0.705f}, {0.4f, 0.4f, 0.9f});
  canonicalize(s);
  const auto rels = derive_predicates(s, PredicateRules{});
  CHECK(has(rels, 1, 0, "standing on"));
  CHECK(has(rels, 0, 1, "supporting"));
  CHECK_FALSE(has(rels, 0, 1, "standing on"));
  CHECK_FALSE(has(rels, 0, 1, "close by"));

  Scene gap;
  add_box(gap, 0, "table", {0, 0, 0}, {1, 1, 0.7f});
  add_box(gap, 1, "cup", {0.2f, 0.2f, 0.75f}, {0.4f, 0.4f, 0.9f});
  canonicalize(gap);
  CHECK_FALSE(has(derive_predicates(gap, PredicateRules{}), 1, 0, "standing on"));
}

TEST_CASE("derive_predicates: standing on needs half the footprint") {
  Scene s;
  add_box(s, 0, "table", {0, 0, 0}, {1, 1, 0.7f});
  add_box(s, 1, "cup", {0.9f, 0.2f, 0.7f}, {1.3f, 0.4f, 0.9f});  // 25% overlap
  canonicalize(s);
  CHECK_FALSE(has(derive_predicates(s, PredicateRules{}), 1, 0, "standing on"));
}

TEST_CASE("derive_predicates: close by is symmetric") {
  Scene s;
  add_box(s, 0, "chair", {0, 0, 0}, {0.4f, 0.4f, 0.4f});
  add_box(s, 1, "chair", {0.45f, 0, 0}, {0.85f, 0.4f, 0.4f});  // centroids 0.45 m apart
  add_box(s, 2, "fridge", {3, 3, 0}, {3.4f, 3.4f, 0.4f});
  canonicalize(s);
  const auto rels = derive_predicates(s, PredicateRules{});
  CHECK(has(rels, 0, 1, "close by"));
  CHECK(has(rels, 1, 0, "close by"));
  CHECK_FALSE(has(rels, 0, 2, "close by"));
  CHECK(has(rels, 0, 1, "same as"));
  CHECK(has(rels, 1, 0, "same as"));
}

TEST_CASE("derive_predicates: volume ratio") {
  Scene s;
  add_box(s, 0, "fridge", {0, 0, 0}, {1, 1, 2});
  add_box(s, 1, "cup", {3, 3, 0}, {3.2f, 3.2f, 0.2f});
  add_box(s, 2, "oven", {2, 0, 0}, {3, 1, 1.5f});  // ratio 1.33 to the fridge
  canonicalize(s);
  const auto rels = derive_predicates(s, PredicateRules{});
  CHECK(has(rels, 0, 1, "bigger than"));
  CHECK(has(rels, 1, 0, "smaller than"));
  CHECK_FALSE(has(rels, 0, 2, "bigger than"));
  CHECK_FALSE(has(rels, 2, 0, "smaller than"));
}

TEST_CASE("derive_predicates: standing on is antisymmetric on generated data") {
  GenConfig c;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    std::set<std::pair<int, int>> on;
    for (const auto& r : s.relationships) {
      if (r.predicate == "standing on") on.insert({r.subject_id, r.object_id});
    }
    for (const auto& [a, b] : on) CHECK_FALSE(on.count({b, a}));
  }
}
