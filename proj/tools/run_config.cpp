#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "langsg/errors.hpp"

namespace langsg::cli {

using nlohmann::json;

namespace {

// Reads the keys of one object and remembers which were consumed, so the
// leftovers can be reported as typos.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ParseError(where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = doc_.find(key);
    if (it == doc_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ParseError(where() + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return doc_.contains(key);
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    const auto it = doc_.find(key);
    if (it == doc_.end()) return std::nullopt;
    return Section(*it, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.count(key)) throw ParseError("unknown config key " + where() + "." + key);
    }
  }

 private:
  std::string where() const { return path_; }

  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_adam(Section& s, AdamConfig& a) {
  s.read("beta1", a.beta1);
  s.read("beta2", a.beta2);
  s.read("eps", a.eps);
  s.read("weight_decay", a.weight_decay);
  s.read("grad_clip", a.grad_clip);
}

json adam_json(const AdamConfig& a) {
  return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay},
          {"grad_clip", a.grad_clip}};
}

}  // namespace

void RunConfig::validate() const {
  generator.validate();
  encoder.validate();
  contrastive.validate();
  pretrain_config().validate();
  finetune_config().validate();
  ks.validate();
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ValidationError("test_fraction must be in [0, 1)");
  if (!(labeled_fraction > 0 && labeled_fraction <= 1)) throw ValidationError("labeled_fraction must be in (0, 1]");
  if (table_dim < 1) throw ValidationError("table_dim must be positive");
  if (projector.hidden < 1 || projector.output_dim < 1) throw ValidationError("projector widths must be positive");
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ValidationError("a seed is required (config \"seed\" or --seed)");
  return *seed;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig c = pretrain;
  c.encoder = encoder;
  c.projector = projector;
  c.contrastive = contrastive;
  if (seed) c.seed = *seed;
  return c;
}

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig c = finetune;
  if (seed) c.seed = *seed;
  return c;
}

RunConfig parse_run_config(const json& doc, RunConfig c) {
  Section root(doc, "config");
  if (root.has("seed") && !doc.at("seed").is_null()) {
    std::uint64_t s = 0;
    root.read("seed", s);
    c.seed = s;
  }
  root.read("dataset", c.dataset);
  root.read("table", c.table);
  root.read("out_dir", c.out_dir);
  root.read("pretrained", c.pretrained);
  root.read("checkpoint", c.checkpoint);
  root.read("table_dim", c.table_dim);
  root.read("checkpoint_history", c.checkpoint_history);

  if (auto s = root.child("generator")) {
    auto& g = c.generator;
    s->read("min_objects", g.min_objects);
    s->read("max_objects", g.max_objects);
    s->read("room_extent", g.room_extent);
    s->read("min_points", g.min_points);
    s->read("max_points", g.max_points);
    s->read("floor_points", g.floor_points);
    s->read("color_jitter", g.color_jitter);
    s->read("stack_probability", g.stack_probability);
    s->read("max_retries", g.max_retries);
    s->read("classes", c.classes);
    if (auto r = s->child("rules")) {
      auto& p = g.rules;
      r->read("standing_on", p.standing_on);
      r->read("supporting", p.supporting);
      r->read("close_by", p.close_by);
      r->read("bigger_than", p.bigger_than);
      r->read("smaller_than", p.smaller_than);
      r->read("same_as", p.same_as);
      r->read("contact_tolerance", p.contact_tolerance);
      r->read("min_xy_overlap", p.min_xy_overlap);
      r->read("proximity", p.proximity);
      r->read("volume_ratio", p.volume_ratio);
      r->finish();
    }
    s->finish();
  }
  if (auto s = root.child("split")) {
    s->read("test_fraction", c.test_fraction);
    s->read("labeled_fraction", c.labeled_fraction);
    s->finish();
  }
  if (auto s = root.child("encoder")) {
    auto& e = c.encoder;
    s->read("gcn_layers", e.gcn_layers);
    s->read("feature_dim", e.feature_dim);
    s->read("point_hidden", e.point_hidden);
    s->read("pair_mask", e.pair_mask);
    s->read("max_instance_points", e.max_instance_points);
    s->read("max_pair_points", e.max_pair_points);
    s->read("sample_seed", e.sample_seed);
    s->finish();
  }
  if (auto s = root.child("projector")) {
    s->read("hidden", c.projector.hidden);
    s->read("output_dim", c.projector.output_dim);
    s->finish();
  }
  if (auto s = root.child("contrastive")) {
    auto& k = c.contrastive;
    s->read("tau", k.tau);
    s->read("lambda_neg", k.lambda_neg);
    s->read("negatives", k.negatives);
    s->read("stream_weights", k.stream_weights);
    s->finish();
  }
  if (auto s = root.child("pretrain")) {
    auto& p = c.pretrain;
    s->read("epochs", p.epochs);
    s->read("lr", p.lr);
    s->read("batch_size", p.batch_size);
    if (auto a = s->child("adam")) {
      read_adam(*a, p.adam);
      a->finish();
    }
    s->finish();
  }
  if (auto s = root.child("finetune")) {
    auto& f = c.finetune;
    s->read("epochs", f.epochs);
    s->read("lr", f.lr);
    s->read("batch_size", f.batch_size);
    s->read("lambda_obj", f.lambda_obj);
    s->read("lambda_pred", f.lambda_pred);
    s->read("freeze_backbone", f.freeze_backbone);
    s->read("keep_projectors", f.keep_projectors);
    s->read("head_hidden", f.head.hidden);
    if (auto a = s->child("adam")) {
      read_adam(*a, f.adam);
      a->finish();
    }
    s->finish();
  }
  if (auto s = root.child("eval")) {
    s->read("object_ks", c.ks.object);
    s->read("predicate_ks", c.ks.predicate);
    s->read("relationship_ks", c.ks.relationship);
    s->finish();
  }
  root.finish();

  if (!c.classes.empty()) {
    std::vector<ObjectClass> kept;
    for (const auto& name : c.classes) {
      bool found = false;
      for (const auto& k : GenConfig::default_object_classes()) {
        if (k.label == name) {
          kept.push_back(k);
          found = true;
        }
      }
      if (!found) throw ValidationError("unknown object class '" + name + "' in generator.classes");
    }
    c.generator.classes = kept;
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["dataset"] = c.dataset;
  j["table"] = c.table;
  j["out_dir"] = c.out_dir;
  j["pretrained"] = c.pretrained;
  j["checkpoint"] = c.checkpoint;
  j["table_dim"] = c.table_dim;
  j["checkpoint_history"] = c.checkpoint_history;

  const auto& g = c.generator;
  std::vector<std::string> classes;
  for (const auto& k : g.classes) classes.push_back(k.label);
  const auto& r = g.rules;
  j["generator"] = {{"min_objects", g.min_objects},
                    {"max_objects", g.max_objects},
                    {"room_extent", g.room_extent},
                    {"min_points", g.min_points},
                    {"max_points", g.max_points},
                    {"floor_points", g.floor_points},
                    {"color_jitter", g.color_jitter},
                    {"stack_probability", g.stack_probability},
                    {"max_retries", g.max_retries},
                    {"classes", classes},
                    {"rules",
                     {{"standing_on", r.standing_on},
                      {"supporting", r.supporting},
                      {"close_by", r.close_by},
                      {"bigger_than", r.bigger_than},
                      {"smaller_than", r.smaller_than},
                      {"same_as", r.same_as},
                      {"contact_tolerance", r.contact_tolerance},
                      {"min_xy_overlap", r.min_xy_overlap},
                      {"proximity", r.proximity},
                      {"volume_ratio", r.volume_ratio}}}};
  j["split"] = {{"test_fraction", c.test_fraction}, {"labeled_fraction", c.labeled_fraction}};
  const auto& e = c.encoder;
  j["encoder"] = {{"gcn_layers", e.gcn_layers},
                  {"feature_dim", e.feature_dim},
                  {"point_hidden", e.point_hidden},
                  {"pair_mask", e.pair_mask},
                  {"max_instance_points", e.max_instance_points},
                  {"max_pair_points", e.max_pair_points},
                  {"sample_seed", e.sample_seed}};
  j["projector"] = {{"hidden", c.projector.hidden}, {"output_dim", c.projector.output_dim}};
  j["contrastive"] = {{"tau", c.contrastive.tau},
                      {"lambda_neg", c.contrastive.lambda_neg},
                      {"negatives", c.contrastive.negatives},
                      {"stream_weights", c.contrastive.stream_weights}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"adam", adam_json(c.pretrain.adam)}};
  const auto& f = c.finetune;
  j["finetune"] = {{"epochs", f.epochs},
                   {"lr", f.lr},
                   {"batch_size", f.batch_size},
                   {"lambda_obj", f.lambda_obj},
                   {"lambda_pred", f.lambda_pred},
                   {"freeze_backbone", f.freeze_backbone},
                   {"keep_projectors", f.keep_projectors},
                   {"head_hidden", f.head.hidden},
                   {"adam", adam_json(f.adam)}};
  j["eval"] = {{"object_ks", c.ks.object}, {"predicate_ks", c.ks.predicate}, {"relationship_ks", c.ks.relationship}};
  return j;
}

}  // namespace langsg::cli
