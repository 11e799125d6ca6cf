#include "langsg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "langsg/errors.hpp"
#include "langsg/rng.hpp"

namespace langsg {

namespace {

struct Placed {
  int class_index;
  Aabb box;
  int support = -1;  // index of the object it rests on, -1 for the floor
};

bool boxes_intersect(const Aabb& a, const Aabb& b) {
  // touching faces do not count as a collision
  for (int k = 0; k < 3; ++k) {
    if (a.max[k] <= b.min[k] || b.max[k] <= a.min[k]) return false;
  }
  return true;
}

double xy_overlap_area(const Aabb& a, const Aabb& b) {
  const double dx = std::min(a.max[0], b.max[0]) - std::max(a.min[0], b.min[0]);
  const double dy = std::min(a.max[1], b.max[1]) - std::max(a.min[1], b.min[1]);
  return (dx > 0 && dy > 0) ? dx * dy : 0.0;
}

double xy_area(const Aabb& a) {
  auto e = a.extent();
  return static_cast<double>(e[0]) * e[1];
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Surface samples for one object. Extreme points are always included so the
// bbox of the samples equals the nominal box.
std::vector<std::array<float, 3>> sample_surface(Shape shape, const Aabb& box, int count, Rng& rng) {
  std::vector<std::array<float, 3>> pts;
  const auto c = box.center();
  const auto e = box.extent();
  const float hx = 0.5f * e[0], hy = 0.5f * e[1], hz = 0.5f * e[2];

  switch (shape) {
    case Shape::Box: {
      for (int corner = 0; corner < 8; ++corner) {
        pts.push_back({(corner & 1) ? box.max[0] : box.min[0], (corner & 2) ? box.max[1] : box.min[1],
                       (corner & 4) ? box.max[2] : box.min[2]});
      }
      const double areas[3] = {static_cast<double>(e[1]) * e[2], static_cast<double>(e[0]) * e[2],
                               static_cast<double>(e[0]) * e[1]};
      const double total = 2 * (areas[0] + areas[1] + areas[2]);
      while (static_cast<int>(pts.size()) < count) {
        double pick = rng.uniform01() * total;
        int axis = 0;
        for (; axis < 2; ++axis) {
          if (pick < 2 * areas[axis]) break;
          pick -= 2 * areas[axis];
        }
        std::array<float, 3> p{};
        for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(rng.uniform(box.min[k], box.max[k]));
        p[axis] = rng.uniform01() < 0.5 ? box.min[axis] : box.max[axis];
        pts.push_back(p);
      }
      break;
    }
    case Shape::Cylinder: {
      // vertical axis, elliptic cross-section inscribed in the box footprint
      pts.push_back({c[0] + hx, c[1], box.min[2]});
      pts.push_back({c[0] - hx, c[1], box.min[2]});
      pts.push_back({c[0], c[1] + hy, box.max[2]});
      pts.push_back({c[0], c[1] - hy, box.max[2]});
      while (static_cast<int>(pts.size()) < count) {
        const double theta = rng.uniform(0, 2 * std::numbers::pi);
        const double u = rng.uniform01();
        if (u < 0.6) {
          pts.push_back({static_cast<float>(c[0] + hx * std::cos(theta)), static_cast<float>(c[1] + hy * std::sin(theta)),
                         static_cast<float>(rng.uniform(box.min[2], box.max[2]))});
        } else {
          const double rad = std::sqrt(rng.uniform01());
          pts.push_back({static_cast<float>(c[0] + hx * rad * std::cos(theta)),
                         static_cast<float>(c[1] + hy * rad * std::sin(theta)), u < 0.8 ? box.min[2] : box.max[2]});
        }
      }
      break;
    }
    case Shape::Sphere: {
      pts.push_back({box.min[0], c[1], c[2]});
      pts.push_back({box.max[0], c[1], c[2]});
      pts.push_back({c[0], box.min[1], c[2]});
      pts.push_back({c[0], box.max[1], c[2]});
      pts.push_back({c[0], c[1], box.min[2]});
      pts.push_back({c[0], c[1], box.max[2]});
      while (static_cast<int>(pts.size()) < count) {
        double v[3] = {rng.normal(), rng.normal(), rng.normal()};
        const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (norm < 1e-9) continue;
        pts.push_back({static_cast<float>(c[0] + hx * v[0] / norm), static_cast<float>(c[1] + hy * v[1] / norm),
                       static_cast<float>(c[2] + hz * v[2] / norm)});
      }
      break;
    }
  }
  // clamp rounding excursions so the bbox stays nominal
  for (auto& p : pts) {
    for (int k = 0; k < 3; ++k) p[k] = std::clamp(p[k], box.min[k], box.max[k]);
  }
  return pts;
}

}  // namespace

std::vector<std::string> PredicateRules::predicate_names() const {
  std::vector<std::string> names;
  if (standing_on) names.emplace_back("standing on");
  if (supporting) names.emplace_back("supporting");
  if (close_by) names.emplace_back("close by");
  if (bigger_than) names.emplace_back("bigger than");
  if (smaller_than) names.emplace_back("smaller than");
  if (same_as) names.emplace_back("same as");
  return names;
}

std::vector<ObjectClass> GenConfig::default_object_classes() {
  // label, shape, size min, size max, color, can_support, stackable
  return {
      {"toilet", Shape::Cylinder, {0.38f, 0.50f, 0.40f}, {0.45f, 0.70f, 0.50f}, {0.95f, 0.95f, 0.95f}, false, false},
      {"sink", Shape::Box, {0.45f, 0.35f, 0.80f}, {0.70f, 0.50f, 0.90f}, {0.80f, 0.85f, 0.90f}, true, false},
      {"bathtub", Shape::Box, {1.40f, 0.70f, 0.50f}, {1.70f, 0.80f, 0.60f}, {0.90f, 0.90f, 0.75f}, true, false},
      {"towel", Shape::Box, {0.30f, 0.20f, 0.04f}, {0.50f, 0.30f, 0.08f}, {0.20f, 0.50f, 0.90f}, false, true},
      {"soap", Shape::Sphere, {0.06f, 0.06f, 0.05f}, {0.10f, 0.10f, 0.08f}, {0.95f, 0.55f, 0.75f}, false, true},
      {"fridge", Shape::Box, {0.60f, 0.60f, 1.60f}, {0.80f, 0.75f, 1.90f}, {0.70f, 0.72f, 0.75f}, false, false},
      {"oven", Shape::Box, {0.55f, 0.55f, 0.80f}, {0.65f, 0.65f, 0.95f}, {0.15f, 0.15f, 0.15f}, true, false},
      {"table", Shape::Box, {0.90f, 0.70f, 0.70f}, {1.60f, 1.00f, 0.78f}, {0.55f, 0.35f, 0.20f}, true, false},
      {"chair", Shape::Box, {0.40f, 0.40f, 0.80f}, {0.50f, 0.50f, 1.00f}, {0.85f, 0.20f, 0.15f}, false, false},
      {"cup", Shape::Cylinder, {0.07f, 0.07f, 0.09f}, {0.10f, 0.10f, 0.12f}, {0.95f, 0.85f, 0.10f}, false, true},
  };
}

void GenConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects) throw ValidationError("generator: empty num_objects range");
  if (min_points < 8 || max_points < min_points) throw ValidationError("generator: empty points_per_object range");
  if (!(room_extent[0] > 0 && room_extent[1] > 0)) throw ValidationError("generator: room extent must be positive");
  if (classes.empty()) throw ValidationError("generator: object label pool is empty");
  for (const auto& c : classes) {
    for (int k = 0; k < 3; ++k) {
      if (!(c.size_min[k] > 0) || c.size_max[k] < c.size_min[k]) {
        throw ValidationError("generator: bad size range for class '" + c.label + "'");
      }
    }
  }
  if (floor_points < 0) throw ValidationError("generator: floor_points must be >= 0");
  if (max_retries < 1) throw ValidationError("generator: max_retries must be >= 1");
}

LabelVocabulary GenConfig::vocabulary() const {
  std::vector<std::string> objects;
  for (const auto& c : classes) objects.push_back(c.label);
  auto predicates = rules.predicate_names();
  predicates.emplace_back(kNeutralPredicate);
  return LabelVocabulary(std::move(objects), std::move(predicates));
}

Scene generate_scene(const GenConfig& config) {
  config.validate();
  Rng rng = Rng::derive(config.seed, "generate_scene");
  const int num_objects = rng.uniform_int(config.min_objects, config.max_objects);

  std::vector<Placed> placed;
  for (int obj = 0; obj < num_objects; ++obj) {
    bool ok = false;
    for (int attempt = 0; attempt < config.max_retries && !ok; ++attempt) {
      const int ci = static_cast<int>(rng.uniform_index(config.classes.size()));
      const ObjectClass& cls = config.classes[ci];
      std::array<float, 3> size{};
      for (int k = 0; k < 3; ++k) size[k] = static_cast<float>(rng.uniform(cls.size_min[k], cls.size_max[k]));

      Placed p{ci, {}, -1};
      std::vector<int> supports;
      if (cls.stackable) {
        for (int s = 0; s < static_cast<int>(placed.size()); ++s) {
          if (config.classes[placed[s].class_index].can_support) supports.push_back(s);
        }
      }
      if (!supports.empty() && rng.uniform01() < config.stack_probability) {
        const int s = supports[rng.uniform_index(supports.size())];
        const Aabb& base = placed[s].box;
        const auto be = base.extent();
        float lo[2], hi[2];
        for (int k = 0; k < 2; ++k) {
          // keep the footprint inside the supporting top face when it fits
          lo[k] = base.min[k];
          hi[k] = base.max[k] - size[k];
          if (hi[k] < lo[k]) lo[k] = hi[k] = base.min[k] + 0.5f * (be[k] - size[k]);
        }
        const float x0 = static_cast<float>(rng.uniform(lo[0], hi[0]));
        const float y0 = static_cast<float>(rng.uniform(lo[1], hi[1]));
        p.box.min = {x0, y0, base.max[2]};
        p.box.max = {x0 + size[0], y0 + size[1], base.max[2] + size[2]};
        p.support = s;
      } else {
        if (size[0] > config.room_extent[0] || size[1] > config.room_extent[1]) continue;
        const float x0 = static_cast<float>(rng.uniform(0.0, config.room_extent[0] - size[0]));
        const float y0 = static_cast<float>(rng.uniform(0.0, config.room_extent[1] - size[1]));
        p.box.min = {x0, y0, 0.0f};
        p.box.max = {x0 + size[0], y0 + size[1], size[2]};
      }
      ok = std::none_of(placed.begin(), placed.end(),
                        [&](const Placed& q) { return boxes_intersect(q.box, p.box); });
      if (ok) placed.push_back(p);
    }
    if (!ok) {
      throw GenerationError("generate_scene: placement failed after " + std::to_string(config.max_retries) +
                            " retries (seed " + std::to_string(config.seed) + ")");
    }
  }

  Scene scene;
  scene.scene_id = "synth_" + std::to_string(config.seed);
  // background floor points first; they belong to no instance
  for (int k = 0; k < config.floor_points; ++k) {
    const float g = clamp01(0.45 + config.color_jitter * rng.normal());
    scene.points.push_back({static_cast<float>(rng.uniform(0.0, config.room_extent[0])),
                            static_cast<float>(rng.uniform(0.0, config.room_extent[1])), 0.0f, g, g, g});
  }
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const ObjectClass& cls = config.classes[placed[i].class_index];
    const int count = rng.uniform_int(config.min_points, config.max_points);
    auto samples = sample_surface(cls.shape, placed[i].box, count, rng);
    // per-object tint around the class colour, then per-point jitter
    std::array<double, 3> tint{};
    for (int k = 0; k < 3; ++k) tint[k] = cls.color[k] + config.color_jitter * rng.normal();
    Instance inst;
    inst.id = static_cast<int>(i);
    inst.label = cls.label;
    for (const auto& s : samples) {
      inst.point_indices.push_back(static_cast<std::uint32_t>(scene.points.size()));
      scene.points.push_back({s[0], s[1], s[2], clamp01(tint[0] + config.color_jitter * rng.normal()),
                              clamp01(tint[1] + config.color_jitter * rng.normal()),
                              clamp01(tint[2] + config.color_jitter * rng.normal())});
    }
    scene.instances.push_back(std::move(inst));
  }
  canonicalize(scene);
  scene.relationships = derive_predicates(scene, config.rules);
  return scene;
}

std::vector<Relationship> derive_predicates(const Scene& scene, const PredicateRules& rules) {
  std::vector<const Instance*> insts;
  for (const auto& i : scene.instances) insts.push_back(&i);
  std::sort(insts.begin(), insts.end(), [](auto* a, auto* b) { return a->id < b->id; });

  // (upper, lower): upper rests on lower
  auto rests_on = [&](const Instance& upper, const Instance& lower) {
    const Aabb& u = upper.bbox;
    const Aabb& l = lower.bbox;
    if (std::fabs(u.min[2] - l.max[2]) > rules.contact_tolerance) return false;
    if (u.center()[2] <= l.center()[2]) return false;
    const double area = xy_area(u);
    return area > 0 && xy_overlap_area(u, l) >= rules.min_xy_overlap * area;
  };

  std::vector<Relationship> rels;
  for (const Instance* a : insts) {
    for (const Instance* b : insts) {
      if (a == b) continue;
      const bool a_on_b = rests_on(*a, *b);
      const bool b_on_a = rests_on(*b, *a);
      if (rules.standing_on && a_on_b) rels.push_back({a->id, b->id, "standing on"});
      if (rules.supporting && b_on_a) rels.push_back({a->id, b->id, "supporting"});
      if (rules.close_by && !a_on_b && !b_on_a) {
        const auto ca = a->bbox.center();
        const auto cb = b->bbox.center();
        const double d = std::hypot(ca[0] - cb[0], ca[1] - cb[1], ca[2] - cb[2]);
        if (d < rules.proximity) rels.push_back({a->id, b->id, "close by"});
      }
      const double va = a->bbox.volume();
      const double vb = b->bbox.volume();
      if (rules.bigger_than && va >= rules.volume_ratio * vb) rels.push_back({a->id, b->id, "bigger than"});
      if (rules.smaller_than && vb >= rules.volume_ratio * va) rels.push_back({a->id, b->id, "smaller than"});
      if (rules.same_as && a->label == b->label) rels.push_back({a->id, b->id, "same as"});
    }
  }
  std::sort(rels.begin(), rels.end());
  return rels;
}

}  // namespace langsg
