#include "langsg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "langsg/binio.hpp"
#include "langsg/errors.hpp"
#include "langsg/rng.hpp"

namespace langsg {

namespace {

constexpr char kPointsMagic[8] = {'L', '3', 'D', 'P', 'T', 'S', '1', '\0'};

using nlohmann::json;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ParseError(where + ": unknown key '" + it.key() + "'");
    }
  }
  for (auto key : allowed) {
    if (!obj.contains(std::string(key))) throw ParseError(where + ": missing key '" + std::string(key) + "'");
  }
}

}  // namespace

std::array<float, 3> Aabb::center() const {
  return {0.5f * (min[0] + max[0]), 0.5f * (min[1] + max[1]), 0.5f * (min[2] + max[2])};
}

std::array<float, 3> Aabb::extent() const {
  return {max[0] - min[0], max[1] - min[1], max[2] - min[2]};
}

double Aabb::volume() const {
  auto e = extent();
  return static_cast<double>(e[0]) * e[1] * e[2];
}

bool Aabb::contains(float x, float y, float z) const {
  return x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1] && z >= min[2] && z <= max[2];
}

Aabb Aabb::merged(const Aabb& other) const {
  Aabb out;
  for (int k = 0; k < 3; ++k) {
    out.min[k] = std::min(min[k], other.min[k]);
    out.max[k] = std::max(max[k], other.max[k]);
  }
  return out;
}

const Instance* Scene::find_instance(int id) const {
  for (const auto& inst : instances) {
    if (inst.id == id) return &inst;
  }
  return nullptr;
}

Aabb compute_bbox(const std::vector<Point>& points, const std::vector<std::uint32_t>& indices) {
  Aabb box;
  if (indices.empty()) return box;
  constexpr float inf = std::numeric_limits<float>::infinity();
  box.min = {inf, inf, inf};
  box.max = {-inf, -inf, -inf};
  for (auto idx : indices) {
    if (idx >= points.size()) continue;
    const Point& p = points[idx];
    const float c[3] = {p.x, p.y, p.z};
    for (int k = 0; k < 3; ++k) {
      box.min[k] = std::min(box.min[k], c[k]);
      box.max[k] = std::max(box.max[k], c[k]);
    }
  }
  return box;
}

void canonicalize(Scene& scene) {
  for (auto& inst : scene.instances) inst.bbox = compute_bbox(scene.points, inst.point_indices);
  std::sort(scene.instances.begin(), scene.instances.end(),
            [](const Instance& a, const Instance& b) { return a.id < b.id; });
  std::sort(scene.relationships.begin(), scene.relationships.end());
}

// ---------------------------------------------------------------------------
// Vocabulary

LabelVocabulary::LabelVocabulary(std::vector<std::string> object_labels,
                                 std::vector<std::string> predicate_labels)
    : objects_(std::move(object_labels)), predicates_(std::move(predicate_labels)) {
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    if (objects_[i].empty()) throw ValidationError("vocabulary: empty object label");
    if (!object_index_.emplace(objects_[i], static_cast<int>(i)).second) {
      throw ValidationError("vocabulary: duplicate object label '" + objects_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < predicates_.size(); ++i) {
    if (predicates_[i].empty()) throw ValidationError("vocabulary: empty predicate label");
    if (!predicate_index_.emplace(predicates_[i], static_cast<int>(i)).second) {
      throw ValidationError("vocabulary: duplicate predicate label '" + predicates_[i] + "'");
    }
  }
  if (!predicate_index_.contains(std::string(kNeutralPredicate))) {
    throw ValidationError("vocabulary: predicate list must contain the neutral predicate \"and\"");
  }
}

std::optional<int> LabelVocabulary::find_object(std::string_view label) const {
  auto it = object_index_.find(std::string(label));
  if (it == object_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> LabelVocabulary::find_predicate(std::string_view label) const {
  auto it = predicate_index_.find(std::string(label));
  if (it == predicate_index_.end()) return std::nullopt;
  return it->second;
}

int LabelVocabulary::object_index(std::string_view label) const {
  if (auto i = find_object(label)) return *i;
  throw LookupError("unknown object label '" + std::string(label) + "'");
}

int LabelVocabulary::predicate_index(std::string_view label) const {
  if (auto i = find_predicate(label)) return *i;
  throw LookupError("unknown predicate '" + std::string(label) + "'");
}

LabelVocabulary load_vocabulary(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  require_keys(doc, {"object_labels", "predicate_labels"}, path.string());
  try {
    return LabelVocabulary(doc.at("object_labels").get<std::vector<std::string>>(),
                           doc.at("predicate_labels").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_vocabulary(const LabelVocabulary& vocab, const std::filesystem::path& path) {
  json doc;
  doc["object_labels"] = vocab.object_labels();
  doc["predicate_labels"] = vocab.predicate_labels();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Validation

std::vector<std::string> validate_scene(const Scene& scene, const LabelVocabulary* vocab) {
  std::vector<std::string> issues;
  if (scene.instances.empty()) issues.emplace_back("instances: scene must contain at least one instance");

  std::set<int> ids;
  std::vector<int> owner(scene.points.size(), -1);
  for (const auto& inst : scene.instances) {
    const std::string where = "instances[id=" + std::to_string(inst.id) + "]";
    if (inst.id < 0) issues.push_back(where + ".id: negative instance id");
    if (!ids.insert(inst.id).second) issues.push_back(where + ".id: duplicate instance id");
    if (inst.label.empty()) issues.push_back(where + ".label: empty label");
    if (vocab && !inst.label.empty() && !vocab->find_object(inst.label)) {
      issues.push_back(where + ".label: '" + inst.label + "' not in object vocabulary");
    }
    if (inst.point_indices.empty()) issues.push_back(where + ".point_indices: empty");
    bool sorted = std::is_sorted(inst.point_indices.begin(), inst.point_indices.end()) &&
                  std::adjacent_find(inst.point_indices.begin(), inst.point_indices.end()) ==
                      inst.point_indices.end();
    if (!sorted) issues.push_back(where + ".point_indices: not sorted and unique");
    bool in_range = true;
    bool overlapping = false;
    for (auto idx : inst.point_indices) {
      if (idx >= scene.points.size()) {
        in_range = false;
        continue;
      }
      if (owner[idx] != -1 && owner[idx] != inst.id) overlapping = true;
      owner[idx] = inst.id;
    }
    if (!in_range) issues.push_back(where + ".point_indices: index out of range");
    if (overlapping) issues.push_back(where + ".point_indices: disjointness violated (point shared with another instance)");
    if (in_range && !inst.point_indices.empty() &&
        !(inst.bbox == compute_bbox(scene.points, inst.point_indices))) {
      issues.push_back(where + ".bbox: does not match instance points");
    }
  }

  for (const auto& rel : scene.relationships) {
    const std::string where = "relationships[" + std::to_string(rel.subject_id) + "," +
                              std::to_string(rel.object_id) + ",'" + rel.predicate + "']";
    if (!ids.contains(rel.subject_id)) issues.push_back(where + ".subject_id: dangling instance reference");
    if (!ids.contains(rel.object_id)) issues.push_back(where + ".object_id: dangling instance reference");
    if (rel.subject_id == rel.object_id) issues.push_back(where + ": self-relation (subject_id == object_id)");
    if (rel.predicate.empty()) issues.push_back(where + ".predicate: empty");
    if (vocab && !rel.predicate.empty() && !vocab->find_predicate(rel.predicate)) {
      issues.push_back(where + ".predicate: not in predicate vocabulary");
    }
  }
  return issues;
}

// ---------------------------------------------------------------------------
// Points file

std::vector<Point> load_points(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open point file " + path.string());
  try {
    std::string magic = binio::read_bytes(in, 8, "point magic");
    if (std::memcmp(magic.data(), kPointsMagic, 8) != 0) {
      throw ParseError(path.string() + ": bad point file magic");
    }
    auto n = binio::read_le<std::uint32_t>(in, "point count");
    std::vector<Point> pts(n);
    for (auto& p : pts) {
      p.x = binio::read_le<float>(in, "point");
      p.y = binio::read_le<float>(in, "point");
      p.z = binio::read_le<float>(in, "point");
      p.r = binio::read_le<float>(in, "point");
      p.g = binio::read_le<float>(in, "point");
      p.b = binio::read_le<float>(in, "point");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw ParseError(path.string() + ": trailing bytes after points");
    }
    return pts;
  } catch (const FormatError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_points(const std::vector<Point>& points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kPointsMagic, 8);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(points.size()));
  for (const auto& p : points) {
    for (float v : {p.x, p.y, p.z, p.r, p.g, p.b}) binio::write_le<float>(out, v);
  }
}

// ---------------------------------------------------------------------------
// Metadata document

std::string serialize_scene_metadata(const Scene& scene, const std::string& points_file) {
  std::vector<const Instance*> insts;
  for (const auto& i : scene.instances) insts.push_back(&i);
  std::sort(insts.begin(), insts.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::vector<Relationship> rels = scene.relationships;
  std::sort(rels.begin(), rels.end());

  std::ostringstream os;
  os << "{\n";
  os << "  \"scene_id\": " << json(scene.scene_id).dump() << ",\n";
  os << "  \"points_file\": " << json(points_file).dump() << ",\n";
  os << "  \"instances\": [";
  for (std::size_t k = 0; k < insts.size(); ++k) {
    const Instance& inst = *insts[k];
    os << (k ? ",\n" : "\n") << "    {\"id\": " << inst.id << ", \"label\": " << json(inst.label).dump()
       << ", \"point_indices\": [";
    for (std::size_t j = 0; j < inst.point_indices.size(); ++j) {
      if (j) os << ',';
      os << inst.point_indices[j];
    }
    os << "]}";
  }
  os << (insts.empty() ? "],\n" : "\n  ],\n");
  os << "  \"relationships\": [";
  for (std::size_t k = 0; k < rels.size(); ++k) {
    os << (k ? ",\n" : "\n") << "    {\"subject_id\": " << rels[k].subject_id
       << ", \"object_id\": " << rels[k].object_id << ", \"predicate\": " << json(rels[k].predicate).dump()
       << "}";
  }
  os << (rels.empty() ? "]\n" : "\n  ]\n");
  os << "}\n";
  return os.str();
}

Scene load_scene(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Scene scene;
  std::string points_file;
  try {
    require_keys(doc, {"scene_id", "points_file", "instances", "relationships"}, path.string());
    scene.scene_id = doc.at("scene_id").get<std::string>();
    points_file = doc.at("points_file").get<std::string>();
    for (const auto& ji : doc.at("instances")) {
      require_keys(ji, {"id", "label", "point_indices"}, path.string() + ": instance");
      Instance inst;
      inst.id = ji.at("id").get<int>();
      inst.label = ji.at("label").get<std::string>();
      inst.point_indices = ji.at("point_indices").get<std::vector<std::uint32_t>>();
      scene.instances.push_back(std::move(inst));
    }
    for (const auto& jr : doc.at("relationships")) {
      require_keys(jr, {"subject_id", "object_id", "predicate"}, path.string() + ": relationship");
      Relationship rel;
      rel.subject_id = jr.at("subject_id").get<int>();
      rel.object_id = jr.at("object_id").get<int>();
      rel.predicate = jr.at("predicate").get<std::string>();
      scene.relationships.push_back(std::move(rel));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  scene.points = load_points(path.parent_path() / points_file);
  canonicalize(scene);
  auto issues = validate_scene(scene);
  if (!issues.empty()) {
    std::string msg = path.string() + ": invalid scene:";
    for (const auto& s : issues) msg += "\n  " + s;
    throw ValidationError(msg);
  }
  return scene;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  const std::string points_file = path.stem().string() + ".pts";
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize_scene_metadata(scene, points_file);
  }
  save_points(scene.points, path.parent_path() / points_file);
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<Scene> split_scene(const Scene& scene, int max_objects, std::uint64_t rng_seed) {
  if (max_objects < 2) throw std::invalid_argument("split_scene: max_objects must be >= 2");
  const std::size_t n = scene.instances.size();
  if (n <= static_cast<std::size_t>(max_objects)) return {scene};

  // instances in id order so the result does not depend on input ordering
  std::vector<const Instance*> insts;
  for (const auto& i : scene.instances) insts.push_back(&i);
  std::sort(insts.begin(), insts.end(), [](auto* a, auto* b) { return a->id < b->id; });

  Rng rng = Rng::derive(rng_seed, "split_scene");
  std::vector<bool> covered(n, false);
  std::size_t remaining = n;
  std::vector<Scene> out;
  while (remaining > 0) {
    std::vector<std::size_t> uncovered;
    for (std::size_t k = 0; k < n; ++k) {
      if (!covered[k]) uncovered.push_back(k);
    }
    const std::size_t seed_idx = uncovered[rng.uniform_index(uncovered.size())];
    const auto c0 = insts[seed_idx]->bbox.center();
    std::vector<std::pair<double, std::size_t>> by_distance;
    for (std::size_t k = 0; k < n; ++k) {
      const auto c = insts[k]->bbox.center();
      const double d = std::hypot(c[0] - c0[0], c[1] - c0[1], c[2] - c0[2]);
      by_distance.emplace_back(k == seed_idx ? -1.0 : d, k);
    }
    std::sort(by_distance.begin(), by_distance.end());
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < static_cast<std::size_t>(max_objects) && k < n; ++k) {
      members.push_back(by_distance[k].second);
    }
    std::sort(members.begin(), members.end());

    Scene part;
    part.scene_id = scene.scene_id + "_split" + std::to_string(out.size());
    part.points = scene.points;
    std::set<int> kept;
    for (auto k : members) {
      part.instances.push_back(*insts[k]);
      kept.insert(insts[k]->id);
      if (!covered[k]) {
        covered[k] = true;
        --remaining;
      }
    }
    for (const auto& rel : scene.relationships) {
      if (kept.contains(rel.subject_id) && kept.contains(rel.object_id)) part.relationships.push_back(rel);
    }
    std::sort(part.relationships.begin(), part.relationships.end());
    out.push_back(std::move(part));
  }
  return out;
}

}  // namespace langsg
