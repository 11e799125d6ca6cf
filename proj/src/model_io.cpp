#include "langsg/model_io.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "langsg/errors.hpp"

namespace langsg {

namespace {

constexpr const char* kMomentM = "adam.m/";
constexpr const char* kMomentV = "adam.v/";

int parse_int(std::string_view s, const std::string& context) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw CheckpointError("malformed architecture field '" + context + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

// "<prefix><int>"
int tagged_int(const std::string& part, char tag, const std::string& context) {
  if (part.empty() || part[0] != tag) throw CheckpointError("malformed architecture field '" + context + "'");
  return parse_int(std::string_view(part).substr(1), context);
}

Blob to_blob(const Mat<float>& m) {
  Blob b;
  b.rows = static_cast<std::uint32_t>(m.rows());
  b.cols = static_cast<std::uint32_t>(m.cols());
  b.data.assign(m.data(), m.data() + m.size());
  return b;
}

void from_blob(const Blob& b, Mat<float>& m, const std::string& name) {
  if (static_cast<Eigen::Index>(b.rows) != m.rows() || static_cast<Eigen::Index>(b.cols) != m.cols()) {
    throw CheckpointError("checkpoint tensor '" + name + "' has shape " + std::to_string(b.rows) + "x" +
                          std::to_string(b.cols) + ", expected " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
  }
  std::copy(b.data.begin(), b.data.end(), m.data());
}

template <typename Visit>
void export_with(Checkpoint& c, Visit&& visit) {
  visit([&](const std::string& name, Mat<float>& m) { c.blobs[name] = to_blob(m); });
}

template <typename Visit>
void import_with(const Checkpoint& c, Visit&& visit) {
  std::set<std::string> used;
  visit([&](const std::string& name, Mat<float>& m) {
    auto it = c.blobs.find(name);
    if (it == c.blobs.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    from_blob(it->second, m, name);
    used.insert(name);
  });
  for (const auto& [name, blob] : c.blobs) {
    if (name.starts_with(kMomentM) || name.starts_with(kMomentV)) continue;
    if (!used.count(name)) throw CheckpointError("checkpoint has unexpected tensor '" + name + "'");
  }
}

void export_optimizer(Checkpoint& c, const Adam<float>* opt) {
  if (!opt) return;
  c.optimizer_step = static_cast<std::uint64_t>(opt->steps());
  for (const auto& [name, mom] : opt->moments()) {
    c.blobs[kMomentM + name] = to_blob(mom.m);
    c.blobs[kMomentV + name] = to_blob(mom.v);
  }
}

template <typename Model>
auto pretrain_visitor(Model& model) {
  return [&model](auto&& f) {
    model.for_each_param([&](Param<float>& p) { f(p.name, p.value); });
  };
}

auto finetune_visitor(FinetuneModel<float>& model) {
  return [&model](auto&& f) {
    model.for_each_param([&](Param<float>& p) { f(p.name, p.value); });
    model.for_each_buffer([&](const std::string& name, Mat<float>& m) { f(name, m); });
    if (model.has_projectors) model.projectors.for_each_param([&](Param<float>& p) { f(p.name, p.value); });
  };
}

}  // namespace

std::string describe_projector(const ProjectorConfig& c) {
  return "h" + std::to_string(c.hidden) + "/D" + std::to_string(c.output_dim);
}

std::string describe_heads(const HeadConfig& c, const LabelVocabulary& vocab) {
  return "h" + std::to_string(c.hidden) + "/C" + std::to_string(vocab.num_objects()) + "/P" +
         std::to_string(vocab.num_predicates());
}

EncoderConfig parse_encoder(const std::string& describe, EncoderConfig base) {
  const auto parts = split(describe, '/');
  if (parts.size() != 4 || !parts[2].starts_with("pe") || !parts[3].starts_with("mask")) {
    throw CheckpointError("malformed backbone field '" + describe + "'");
  }
  base.gcn_layers = tagged_int(parts[0], 'k', describe);
  base.feature_dim = tagged_int(parts[1], 'F', describe);
  base.point_hidden.clear();
  for (const auto& w : split(parts[2].substr(2), ',')) {
    if (!w.empty()) base.point_hidden.push_back(parse_int(w, describe));
  }
  const int mask = parse_int(std::string_view(parts[3]).substr(4), describe);
  if (mask != 0 && mask != 1) throw CheckpointError("malformed backbone field '" + describe + "'");
  base.pair_mask = mask == 1;
  try {
    base.validate();
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("invalid backbone in checkpoint: ") + e.what());
  }
  return base;
}

ProjectorConfig parse_projector(const std::string& describe) {
  const auto parts = split(describe, '/');
  if (parts.size() != 2) throw CheckpointError("malformed projector field '" + describe + "'");
  ProjectorConfig c;
  c.hidden = tagged_int(parts[0], 'h', describe);
  c.output_dim = tagged_int(parts[1], 'D', describe);
  if (c.hidden < 1 || c.output_dim < 1) throw CheckpointError("malformed projector field '" + describe + "'");
  return c;
}

std::string pretrain_fingerprint(const EncoderConfig& encoder, const ProjectorConfig& projector) {
  return "phase=pretrain|backbone=" + encoder.describe() + "|projector=" + describe_projector(projector);
}

std::string finetune_fingerprint(const EncoderConfig& encoder, const HeadConfig& head, const LabelVocabulary& vocab,
                                 const ProjectorConfig* kept_projector) {
  return "phase=finetune|backbone=" + encoder.describe() + "|heads=" + describe_heads(head, vocab) +
         "|projector=" + (kept_projector ? describe_projector(*kept_projector) : std::string("none"));
}

Checkpoint to_checkpoint(PretrainModel<float>& model, const ProjectorConfig& projector, const Adam<float>* optimizer) {
  Checkpoint c;
  c.fingerprint = pretrain_fingerprint(model.backbone.config(), projector);
  export_with(c, pretrain_visitor(model));
  export_optimizer(c, optimizer);
  return c;
}

Checkpoint to_checkpoint(FinetuneModel<float>& model, const HeadConfig& head, const LabelVocabulary& vocab,
                         const ProjectorConfig* kept_projector, const Adam<float>* optimizer) {
  if (model.has_projectors != (kept_projector != nullptr)) {
    throw std::invalid_argument("to_checkpoint: projector description does not match the model");
  }
  Checkpoint c;
  c.fingerprint = finetune_fingerprint(model.backbone.config(), head, vocab, kept_projector);
  export_with(c, finetune_visitor(model));
  export_optimizer(c, optimizer);
  return c;
}

PretrainModel<float> load_pretrain_model(const Checkpoint& ckpt, const EncoderConfig& sampling) {
  const std::string phase = fingerprint_field(ckpt.fingerprint, "phase");
  if (phase != "pretrain") {
    throw CheckpointError("expected a pre-training checkpoint, got phase '" + phase + "'");
  }
  const EncoderConfig encoder = parse_encoder(fingerprint_field(ckpt.fingerprint, "backbone"), sampling);
  const ProjectorConfig projector = parse_projector(fingerprint_field(ckpt.fingerprint, "projector"));
  Rng rng(0);
  PretrainModel<float> model = make_pretrain_model<float>(encoder, projector, rng);
  import_with(ckpt, pretrain_visitor(model));
  return model;
}

FinetuneModel<float> load_finetune_model(const Checkpoint& ckpt, const LabelVocabulary& vocab,
                                         const EncoderConfig& sampling) {
  const std::string phase = fingerprint_field(ckpt.fingerprint, "phase");
  if (phase != "finetune") {
    throw CheckpointError("expected a fine-tuning checkpoint, got phase '" + phase + "'");
  }
  const EncoderConfig encoder = parse_encoder(fingerprint_field(ckpt.fingerprint, "backbone"), sampling);
  const auto head_parts = split(fingerprint_field(ckpt.fingerprint, "heads"), '/');
  if (head_parts.size() != 3) throw CheckpointError("malformed heads field in '" + ckpt.fingerprint + "'");
  HeadConfig head;
  head.hidden = tagged_int(head_parts[0], 'h', ckpt.fingerprint);
  const int classes = tagged_int(head_parts[1], 'C', ckpt.fingerprint);
  const int predicates = tagged_int(head_parts[2], 'P', ckpt.fingerprint);
  if (static_cast<std::size_t>(classes) != vocab.num_objects() ||
      static_cast<std::size_t>(predicates) != vocab.num_predicates()) {
    throw CheckpointError("checkpoint heads (" + std::to_string(classes) + " objects, " + std::to_string(predicates) +
                          " predicates) do not match the vocabulary");
  }
  Rng rng(0);
  FinetuneModel<float> model = make_finetune_model<float>(encoder, head, vocab, rng);
  const std::string proj = fingerprint_field(ckpt.fingerprint, "projector");
  if (!proj.empty() && proj != "none") {
    model.projectors = Projectors<float>(encoder.feature_dim, parse_projector(proj), rng);
    model.has_projectors = true;
  }
  import_with(ckpt, finetune_visitor(model));
  return model;
}

void load_optimizer(const Checkpoint& ckpt, Adam<float>& optimizer) {
  auto& moments = optimizer.moments();
  moments.clear();
  for (const auto& [name, blob] : ckpt.blobs) {
    const bool is_m = name.starts_with(kMomentM);
    if (!is_m && !name.starts_with(kMomentV)) continue;
    const std::string param = name.substr(std::string(is_m ? kMomentM : kMomentV).size());
    auto& mom = moments[param];
    Mat<float>& target = is_m ? mom.m : mom.v;
    target.resize(blob.rows, blob.cols);
    from_blob(blob, target, name);
  }
  for (const auto& [name, mom] : moments) {
    if (mom.m.size() == 0 && mom.v.size() == 0) continue;
    if (mom.m.rows() != mom.v.rows() || mom.m.cols() != mom.v.cols()) {
      throw CheckpointError("optimizer moments for '" + name + "' are incomplete");
    }
  }
  optimizer.set_steps(static_cast<std::int64_t>(ckpt.optimizer_step));
}

}  // namespace langsg
