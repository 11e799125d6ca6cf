#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "langsg/scene.hpp"

namespace langsg {

enum class PromptKind { ObjectName, PredicateName, RelationshipSentence };

/// (subject label, predicate, object label)
struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  auto operator<=>(const Triple&) const = default;
};

/// "A scene of a {subject} is {predicate} a {object}". Throws
/// std::invalid_argument on an empty component.
std::string relationship_prompt(std::string_view subject, std::string_view predicate, std::string_view object);
std::string relationship_prompt(const Triple& t);
/// Raw labels; throw std::invalid_argument when empty.
std::string object_prompt(std::string_view label);
std::string predicate_prompt(std::string_view label);

/// Splits a relationship sentence back into its slots. Returns false when
/// the prompt does not follow the template.
bool parse_relationship_prompt(std::string_view prompt, Triple& out);

/// Deterministic stand-in for a frozen text encoder. Plain labels hash to a
/// Gaussian direction; relationship sentences are the normalised sum of the
/// embeddings of their three slots.
std::vector<float> stub_embed(std::string_view prompt, std::uint64_t seed, int dim);

inline constexpr double kUnitNormTolerance = 1e-5;

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(int dim, std::string provenance = "stub");

  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const std::string& provenance() const { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  /// Throws FormatError on a wrong dimension or a non-unit vector.
  void insert(std::string key, std::vector<float> vec);
  bool contains(std::string_view key) const;
  /// Throws LookupError naming the prompt.
  std::span<const float> lookup(std::string_view key) const;

  const std::map<std::string, std::vector<float>, std::less<>>& entries() const { return entries_; }

  bool operator==(const EmbeddingTable& o) const { return dim_ == o.dim_ && entries_ == o.entries_; }

 private:
  int dim_ = 0;
  std::string provenance_ = "stub";
  std::map<std::string, std::vector<float>, std::less<>> entries_;
};

/// LANGEMB1 reader/writer. Entries are written in key order.
EmbeddingTable load_table(const std::filesystem::path& path);
void save_table(const EmbeddingTable& table, const std::filesystem::path& path);

/// Relationship sentences a pre-training run can request for these scenes:
/// every ground-truth triple (with "and" for unrelated pairs) and every
/// one-slot substitution of it over the vocabulary.
std::set<Triple> required_triples(std::span<const Scene> scenes, const LabelVocabulary& vocab);

/// Table with every object label, every predicate and every listed triple,
/// embedded with the stub encoder.
EmbeddingTable build_stub_table(const LabelVocabulary& vocab, const std::set<Triple>& triples, std::uint64_t seed,
                                int dim);

}  // namespace langsg
