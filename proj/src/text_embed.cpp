#include "langsg/text_embed.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "langsg/binio.hpp"
#include "langsg/errors.hpp"
#include "langsg/rng.hpp"

namespace langsg {

namespace {

constexpr char kTableMagic[8] = {'L', 'A', 'N', 'G', 'E', 'M', 'B', '1'};
constexpr std::string_view kPrefix = "A scene of a ";
constexpr std::string_view kIs = " is ";
constexpr std::string_view kArticle = " a ";

void require_nonempty(std::string_view s, const char* what) {
  if (s.empty()) throw std::invalid_argument(std::string(what) + " must be nonempty");
}

std::vector<double> base_direction(std::string_view label, std::uint64_t seed, int dim) {
  Rng rng(hash_string(label) ^ (seed * 0x9e3779b97f4a7c15ULL));
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<float> normalized(const std::vector<double>& v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

double norm_of(std::span<const float> v) {
  double n2 = 0;
  for (float x : v) n2 += static_cast<double>(x) * x;
  return std::sqrt(n2);
}

}  // namespace

std::string relationship_prompt(std::string_view subject, std::string_view predicate, std::string_view object) {
  require_nonempty(subject, "subject");
  require_nonempty(predicate, "predicate");
  require_nonempty(object, "object");
  std::string s(kPrefix);
  s.append(subject).append(kIs).append(predicate).append(kArticle).append(object);
  return s;
}

std::string relationship_prompt(const Triple& t) { return relationship_prompt(t.subject, t.predicate, t.object); }

std::string object_prompt(std::string_view label) {
  require_nonempty(label, "object label");
  return std::string(label);
}

std::string predicate_prompt(std::string_view label) {
  require_nonempty(label, "predicate label");
  return std::string(label);
}

bool parse_relationship_prompt(std::string_view prompt, Triple& out) {
  if (!prompt.starts_with(kPrefix)) return false;
  std::string_view rest = prompt.substr(kPrefix.size());
  const auto is_pos = rest.find(kIs);
  if (is_pos == std::string_view::npos || is_pos == 0) return false;
  std::string_view subject = rest.substr(0, is_pos);
  std::string_view tail = rest.substr(is_pos + kIs.size());
  const auto a_pos = tail.rfind(kArticle);
  if (a_pos == std::string_view::npos || a_pos == 0) return false;
  std::string_view predicate = tail.substr(0, a_pos);
  std::string_view object = tail.substr(a_pos + kArticle.size());
  if (object.empty()) return false;
  out = Triple{std::string(subject), std::string(predicate), std::string(object)};
  return true;
}

std::vector<float> stub_embed(std::string_view prompt, std::uint64_t seed, int dim) {
  if (dim < 2) throw std::invalid_argument("stub_embed: dimension must be >= 2");
  Triple t;
  if (parse_relationship_prompt(prompt, t)) {
    std::vector<double> sum(static_cast<std::size_t>(dim), 0.0);
    for (const std::string* part : {&t.subject, &t.predicate, &t.object}) {
      auto u = normalized(base_direction(*part, seed, dim));
      for (int i = 0; i < dim; ++i) sum[i] += u[i];
    }
    return normalized(sum);
  }
  return normalized(base_direction(prompt, seed, dim));
}

// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(int dim, std::string provenance) : dim_(dim), provenance_(std::move(provenance)) {
  if (dim < 1) throw FormatError("embedding table: dimension must be positive");
}

void EmbeddingTable::insert(std::string key, std::vector<float> vec) {
  if (static_cast<int>(vec.size()) != dim_) {
    throw FormatError("embedding table: entry '" + key + "' has dimension " + std::to_string(vec.size()) +
                      ", expected " + std::to_string(dim_));
  }
  const double n = norm_of(vec);
  if (!(std::fabs(n - 1.0) <= kUnitNormTolerance)) {
    throw FormatError("embedding table: entry '" + key + "' is not unit norm (|v| = " + std::to_string(n) + ")");
  }
  entries_.insert_or_assign(std::move(key), std::move(vec));
}

bool EmbeddingTable::contains(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::span<const float> EmbeddingTable::lookup(std::string_view key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw LookupError("embedding table has no entry for prompt '" + std::string(key) + "'");
  return it->second;
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embedding table " + path.string());
  std::string magic = binio::read_bytes(in, 8, "table magic");
  if (std::memcmp(magic.data(), kTableMagic, 8) != 0) throw FormatError(path.string() + ": bad LANGEMB1 magic");
  const auto count = binio::read_le<std::uint32_t>(in, "entry count");
  const auto dim = binio::read_le<std::uint32_t>(in, "dimension");
  if (dim == 0) throw FormatError(path.string() + ": zero dimension");
  EmbeddingTable table(static_cast<int>(dim), "langemb1");
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = binio::read_le<std::uint16_t>(in, "label length");
    std::string key = binio::read_bytes(in, len, "label");
    std::vector<float> vec(dim);
    for (auto& x : vec) x = binio::read_le<float>(in, "vector");
    if (table.contains(key)) throw FormatError(path.string() + ": duplicate entry '" + key + "'");
    table.insert(std::move(key), std::move(vec));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return table;
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kTableMagic, 8);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  for (const auto& [key, vec] : table.entries()) {
    if (key.size() > 0xFFFF) throw FormatError("embedding table: label too long: " + key.substr(0, 40));
    binio::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    for (float x : vec) binio::write_le<float>(out, x);
  }
}

std::set<Triple> required_triples(std::span<const Scene> scenes, const LabelVocabulary& vocab) {
  std::set<Triple> positives;
  for (const Scene& scene : scenes) {
    std::map<std::pair<int, int>, std::vector<std::string>> by_edge;
    for (const auto& r : scene.relationships) by_edge[{r.subject_id, r.object_id}].push_back(r.predicate);
    for (const auto& a : scene.instances) {
      for (const auto& b : scene.instances) {
        if (a.id == b.id) continue;
        auto it = by_edge.find({a.id, b.id});
        if (it == by_edge.end()) {
          positives.insert({a.label, std::string(kNeutralPredicate), b.label});
        } else {
          for (const auto& p : it->second) positives.insert({a.label, p, b.label});
        }
      }
    }
  }
  std::set<Triple> all = positives;
  for (const Triple& t : positives) {
    for (const auto& o : vocab.object_labels()) {
      all.insert({o, t.predicate, t.object});
      all.insert({t.subject, t.predicate, o});
    }
    for (const auto& p : vocab.predicate_labels()) all.insert({t.subject, p, t.object});
  }
  return all;
}

EmbeddingTable build_stub_table(const LabelVocabulary& vocab, const std::set<Triple>& triples, std::uint64_t seed,
                                int dim) {
  EmbeddingTable table(dim, "stub");
  for (const auto& o : vocab.object_labels()) table.insert(object_prompt(o), stub_embed(object_prompt(o), seed, dim));
  for (const auto& p : vocab.predicate_labels()) {
    table.insert(predicate_prompt(p), stub_embed(predicate_prompt(p), seed, dim));
  }
  for (const auto& t : triples) {
    auto prompt = relationship_prompt(t);
    table.insert(prompt, stub_embed(prompt, seed, dim));
  }
  return table;
}

}  // namespace langsg
