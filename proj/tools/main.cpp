// langsg: data generation, stub tables, training, evaluation, zero-shot
// room queries and feature dumps. Exit status 0 on success, 2 for bad
// input or configuration, 1 for anything else.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "langsg/checkpoint.hpp"
#include "langsg/errors.hpp"
#include "langsg/eval_metrics.hpp"
#include "langsg/model_io.hpp"
#include "langsg/zeroshot.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace langsg;
using langsg::cli::RunConfig;

namespace {

// ---------------------------------------------------------------------------
// datasets

struct Dataset {
  fs::path root;
  LabelVocabulary vocab;
  std::vector<Scene> scenes;
  std::vector<std::string> splits;

  std::vector<Scene> select(const std::string& split) const {
    std::vector<Scene> out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (split == "all" || splits[i] == split) out.push_back(scenes[i]);
    }
    if (out.empty()) throw ValidationError("dataset " + root.string() + " has no scenes in split '" + split + "'");
    return out;
  }
};

json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

Dataset load_dataset(const std::string& dir) {
  if (dir.empty()) throw ValidationError("a dataset directory is required (--dataset)");
  Dataset d;
  d.root = dir;
  if (!fs::is_directory(d.root)) throw ValidationError("dataset directory not found: " + dir);
  d.vocab = load_vocabulary(d.root / "vocab.json");
  const json manifest = read_json(d.root / "manifest.json");
  try {
    for (const auto& entry : manifest.at("scenes")) {
      d.scenes.push_back(load_scene(d.root / entry.at("file").get<std::string>()));
      d.splits.push_back(entry.at("split").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError((d.root / "manifest.json").string() + ": " + e.what());
  }
  for (const auto& s : d.scenes) {
    const auto problems = validate_scene(s, &d.vocab);
    if (!problems.empty()) throw ValidationError("scene " + s.scene_id + ": " + problems.front());
  }
  return d;
}

std::vector<PreparedGraph> prepare_all(const std::vector<Scene>& scenes, const EncoderConfig& enc) {
  std::vector<PreparedGraph> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(prepare_graph(s, enc));
  return out;
}

// ---------------------------------------------------------------------------
// run directories and logs

// LANGSG_OUT_DIR wins over the config and the flag.
fs::path resolve_out_dir(RunConfig& cfg, bool required) {
  if (const char* env = std::getenv("LANGSG_OUT_DIR"); env && *env) cfg.out_dir = env;
  if (cfg.out_dir.empty()) {
    if (required) throw ValidationError("an output directory is required (--out or LANGSG_OUT_DIR)");
    return {};
  }
  fs::create_directories(cfg.out_dir);
  return cfg.out_dir;
}

void write_snapshot(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "config.resolved.json", cli::to_json(cfg).dump(2) + "\n");
}

class JsonLog {
 public:
  explicit JsonLog(const fs::path& path) : out_(path, std::ios::binary | std::ios::app) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void write(json record) {
    record["time"] = std::chrono::duration<double>(clock::now() - start_).count();
    const std::string line = record.dump();
    out_ << line << '\n';
    out_.flush();
    std::cout << line << '\n' << std::flush;
  }

 private:
  using clock = std::chrono::steady_clock;
  std::ofstream out_;
  clock::time_point start_ = clock::now();
};

json loss_record(const PretrainLoss& l) {
  json pos, neg;
  for (std::size_t s = 0; s < 3; ++s) {
    pos[kStreamNames[s]] = l.positive[s];
    neg[kStreamNames[s]] = l.negative[s];
  }
  return {{"total", l.total}, {"positive", pos}, {"negative", neg}};
}

std::string checkpoint_name(const std::string& stage, int epoch, bool history) {
  if (!history) return stage + "_last.ckpt";
  std::ostringstream s;
  s << stage << "_epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
  return s.str();
}

void require_table_coverage(const EmbeddingTable& table, const LabelVocabulary& vocab, const std::vector<Scene>& scenes) {
  std::vector<std::string> missing;
  auto need = [&](const std::string& key) {
    if (!table.contains(key)) missing.push_back(key);
  };
  for (const auto& o : vocab.object_labels()) need(object_prompt(o));
  for (const auto& p : vocab.predicate_labels()) need(predicate_prompt(p));
  for (const auto& t : required_triples(scenes, vocab)) need(relationship_prompt(t));
  if (!missing.empty()) {
    throw ValidationError("embedding table lacks " + std::to_string(missing.size()) + " prompts, e.g. '" +
                          missing.front() + "'");
  }
}

// ---------------------------------------------------------------------------
// commands

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string dataset, table, out, checkpoint, pretrained;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : cli::load_run_config(c.config);
  if (c.seed) cfg.seed = c.seed;
  if (!c.dataset.empty()) cfg.dataset = c.dataset;
  if (!c.table.empty()) cfg.table = c.table;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.checkpoint.empty()) cfg.checkpoint = c.checkpoint;
  if (!c.pretrained.empty()) cfg.pretrained = c.pretrained;
  cfg.validate();
  return cfg;
}

void gen_synthetic(RunConfig cfg, int count) {
  const std::uint64_t seed = cfg.require_seed();
  if (count < 1) throw ValidationError("--count must be >= 1");
  const fs::path out = resolve_out_dir(cfg, true);
  fs::create_directories(out / "scenes");

  std::vector<std::size_t> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = Rng::derive(seed, "split");
  split_rng.shuffle(order.begin(), order.end());
  const auto tests = static_cast<std::size_t>(std::llround(cfg.test_fraction * count));
  std::vector<std::string> split(order.size(), "train");
  for (std::size_t k = 0; k < tests; ++k) split[order[k]] = "test";

  Rng scene_seeds = Rng::derive(seed, "scenes");
  json entries = json::array();
  for (int i = 0; i < count; ++i) {
    GenConfig g = cfg.generator;
    g.seed = scene_seeds.next_u64();
    Scene scene = generate_scene(g);
    std::ostringstream name;
    name << "scene_" << std::setw(4) << std::setfill('0') << i;
    scene.scene_id = name.str();
    save_scene(scene, out / "scenes" / (name.str() + ".json"));
    entries.push_back({{"id", scene.scene_id},
                       {"file", "scenes/" + name.str() + ".json"},
                       {"split", split[static_cast<std::size_t>(i)]},
                       {"generator_seed", g.seed},
                       {"objects", scene.instances.size()},
                       {"relationships", scene.relationships.size()}});
  }
  save_vocabulary(cfg.generator.vocabulary(), out / "vocab.json");
  write_text(out / "manifest.json", json{{"seed", seed}, {"count", count}, {"scenes", entries}}.dump(2) + "\n");
  write_snapshot(cfg, out);
  std::cout << "wrote " << count << " scenes (" << tests << " test) to " << out.string() << "\n";
}

void build_table(RunConfig cfg, const std::string& vocab_path, int dim, const std::string& out_path, bool rooms) {
  const std::uint64_t seed = cfg.require_seed();
  if (out_path.empty()) throw ValidationError("--out is required");
  const Dataset d = load_dataset(cfg.dataset);
  const LabelVocabulary vocab = vocab_path.empty() ? d.vocab : load_vocabulary(vocab_path);
  if (!(vocab == d.vocab)) throw ValidationError("vocabulary does not match the dataset's vocab.json");
  EmbeddingTable table = build_stub_table(vocab, required_triples(d.scenes, vocab), seed, dim > 0 ? dim : cfg.table_dim);
  if (rooms) {
    const auto all = default_rooms();
    for (const auto& [room, members] : all) {
      for (const auto& m : members) {
        if (!vocab.find_object(m)) throw ValidationError("room '" + room + "' needs object class '" + m + "'");
      }
    }
    add_room_queries(table, all);
  }
  const fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_table(table, out);
  std::cout << "wrote " << table.size() << " embeddings of dimension " << table.dim() << " to " << out.string() << "\n";
}

void run_pretrain(RunConfig cfg) {
  cfg.require_seed();
  if (cfg.table.empty()) throw ValidationError("an embedding table is required (--table)");
  const Dataset d = load_dataset(cfg.dataset);
  const auto train = d.select("train");
  const EmbeddingTable table = load_table(cfg.table);
  if (table.dim() != cfg.projector.output_dim) {
    throw ValidationError("table dimension " + std::to_string(table.dim()) + " differs from projector output_dim " +
                          std::to_string(cfg.projector.output_dim));
  }
  require_table_coverage(table, d.vocab, train);
  const fs::path out = resolve_out_dir(cfg, true);
  write_snapshot(cfg, out);

  const PretrainConfig pc = cfg.pretrain_config();
  const auto graphs = prepare_all(train, cfg.encoder);
  JsonLog log(out / "log.jsonl");
  log.write({{"event", "start"}, {"stage", "pretrain"}, {"scenes", graphs.size()}, {"table", table.provenance()}});
  const bool history = cfg.checkpoint_history;
  auto result = pretrain(graphs, table, d.vocab, pc, [&](const EpochLog& l, PretrainModel<float>& m, const Adam<float>& opt) {
    const auto ckpt = to_checkpoint(m, pc.projector, &opt);
    save_checkpoint(ckpt, out / checkpoint_name("pretrain", l.epoch, history));
    log.write({{"event", "epoch"}, {"stage", "pretrain"}, {"epoch", l.epoch}, {"lr", l.lr}, {"loss", loss_record(l.loss)}});
  });
  save_checkpoint(to_checkpoint(result.model, pc.projector, &result.optimizer), out / "pretrain.ckpt");
  log.write({{"event", "done"}, {"stage", "pretrain"}, {"checkpoint", (out / "pretrain.ckpt").string()}});
}

void run_finetune(RunConfig cfg) {
  cfg.require_seed();
  const Dataset d = load_dataset(cfg.dataset);
  auto train = d.select("train");
  const auto labeled = static_cast<std::size_t>(std::ceil(cfg.labeled_fraction * static_cast<double>(train.size())));
  train.resize(std::max<std::size_t>(1, labeled));

  const FinetuneConfig fc = cfg.finetune_config();
  std::optional<PretrainModel<float>> pre;
  std::optional<ProjectorConfig> kept;
  if (!cfg.pretrained.empty()) {
    const Checkpoint ckpt = load_checkpoint(cfg.pretrained);
    pre = load_pretrain_model(ckpt, cfg.encoder);
    if (fc.keep_projectors) kept = parse_projector(fingerprint_field(ckpt.fingerprint, "projector"));
  } else if (fc.keep_projectors) {
    throw ValidationError("keep_projectors needs a pre-trained checkpoint");
  }
  const fs::path out = resolve_out_dir(cfg, true);
  write_snapshot(cfg, out);

  const auto graphs = prepare_all(train, cfg.encoder);
  JsonLog log(out / "log.jsonl");
  log.write({{"event", "start"},
             {"stage", "finetune"},
             {"scenes", graphs.size()},
             {"init", cfg.pretrained.empty() ? std::string("random") : cfg.pretrained}});
  const ProjectorConfig* kp = kept ? &*kept : nullptr;
  const bool history = cfg.checkpoint_history;
  auto result = finetune(graphs, d.vocab, cfg.encoder, fc, pre ? &*pre : nullptr,
                         [&](const FinetuneEpochLog& l, FinetuneModel<float>& m, const Adam<float>& opt) {
                           save_checkpoint(to_checkpoint(m, fc.head, d.vocab, kp, &opt),
                                           out / checkpoint_name("finetune", l.epoch, history));
                           log.write({{"event", "epoch"},
                                      {"stage", "finetune"},
                                      {"epoch", l.epoch},
                                      {"lr", l.lr},
                                      {"loss", {{"total", l.loss.total}, {"ce", l.loss.ce}, {"bce", l.loss.bce}}}});
                         });
  save_checkpoint(to_checkpoint(result.model, fc.head, d.vocab, kp, &result.optimizer), out / "finetune.ckpt");
  log.write({{"event", "done"}, {"stage", "finetune"}, {"checkpoint", (out / "finetune.ckpt").string()}});
}

void run_eval(RunConfig cfg, const std::string& split) {
  if (cfg.checkpoint.empty()) throw ValidationError("eval needs a fine-tuned checkpoint (--checkpoint)");
  if (!fs::exists(cfg.checkpoint)) throw ValidationError("checkpoint not found: " + cfg.checkpoint);
  const Dataset d = load_dataset(cfg.dataset);
  const auto scenes = d.select(split);
  const auto model = load_finetune_model(load_checkpoint(cfg.checkpoint), d.vocab, cfg.encoder);
  const auto report = evaluate(model, prepare_all(scenes, model.backbone.config()), d.vocab, cfg.ks);
  const fs::path out = resolve_out_dir(cfg, false);
  if (!out.empty()) {
    write_snapshot(cfg, out);
    write_text(out / "metrics.json", report.to_text() + "\n");
    write_text(out / "per_class.csv", report.per_class_csv());
  }
  std::cout << report.to_text() << "\n";
}

void run_zero_shot(RunConfig cfg, const std::string& scene_path, std::vector<std::string> queries) {
  if (cfg.checkpoint.empty()) throw ValidationError("zero-shot needs a pre-training checkpoint (--checkpoint)");
  if (cfg.table.empty()) throw ValidationError("zero-shot needs an embedding table (--table)");
  const EmbeddingTable table = load_table(cfg.table);
  if (queries.empty()) {
    for (const auto& [room, members] : default_rooms()) queries.push_back(room);
  }
  const RoomQuerySet qs = RoomQuerySet::from_table(queries, table);
  const Scene scene = load_scene(scene_path);
  const auto model = load_pretrain_model(load_checkpoint(cfg.checkpoint), cfg.encoder);
  if (model.projectors.output_dim() != table.dim()) throw ValidationError("table dimension does not match the model");
  const auto p = zero_shot(model, prepare_graph(scene, model.backbone.config()), qs);

  std::cout << "scene " << scene.scene_id << ": " << p.label << "\n";
  std::cout << std::left << std::setw(16) << "query" << std::setw(12) << "cosine" << "softmax\n";
  json scores = json::array();
  for (std::size_t q = 0; q < qs.labels.size(); ++q) {
    std::cout << std::left << std::setw(16) << qs.labels[q] << std::setw(12) << std::fixed << std::setprecision(4)
              << p.cosines[q] << p.softmax[q] << "\n";
    scores.push_back({{"query", qs.labels[q]}, {"cosine", p.cosines[q]}, {"softmax", p.softmax[q]}});
  }
  const fs::path out = resolve_out_dir(cfg, false);
  if (!out.empty()) {
    write_snapshot(cfg, out);
    write_text(out / "zero_shot.json",
               json{{"scene", scene.scene_id}, {"prediction", p.label}, {"scores", scores}}.dump(2) + "\n");
  }
}

template <typename M>
void write_rows(std::ostream& os, const char* kind, const std::vector<std::string>& ids, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    os << kind << ',' << ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << m(r, c);
    os << '\n';
  }
}

void dump_features(RunConfig cfg, const std::string& scene_path, const std::string& out_path,
                   const std::string& space, const std::string& vocab_path) {
  if (cfg.checkpoint.empty()) throw ValidationError("dump-features needs a checkpoint (--checkpoint)");
  if (out_path.empty()) throw ValidationError("--out is required");
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
  const Scene scene = load_scene(scene_path);

  FeatureGraph<float> feats;
  std::optional<Projectors<float>> proj;
  if (fingerprint_field(ckpt.fingerprint, "phase") == "pretrain") {
    const auto model = load_pretrain_model(ckpt, cfg.encoder);
    feats = model.backbone.encode(prepare_graph(scene, model.backbone.config()));
    proj = model.projectors;
  } else {
    if (vocab_path.empty()) throw ValidationError("a fine-tuned checkpoint needs --vocab");
    const auto model = load_finetune_model(ckpt, load_vocabulary(vocab_path), cfg.encoder);
    feats = model.backbone.encode(prepare_graph(scene, model.backbone.config()));
    if (model.has_projectors) proj = model.projectors;
  }

  std::vector<std::string> node_ids, edge_ids;
  for (int id : feats.node_ids) node_ids.push_back(std::to_string(id));
  for (const auto& [i, j] : feats.edge_index) {
    edge_ids.push_back(std::to_string(feats.node_ids[static_cast<std::size_t>(i)]) + ":" +
                       std::to_string(feats.node_ids[static_cast<std::size_t>(j)]));
  }
  Mat<float> nodes = feats.nodes, edges = feats.edges;
  if (space == "projected") {
    if (!proj) throw ValidationError("checkpoint has no projectors; use --space backbone");
    const auto p = project(feats, *proj);
    nodes = p.nodes;
    edges = p.edges;
  }
  std::ofstream os(out_path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << "kind,id";
  for (Eigen::Index c = 0; c < nodes.cols(); ++c) os << ",f" << c;
  os << '\n' << std::setprecision(9);
  write_rows(os, "node", node_ids, nodes);
  write_rows(os, "edge", edge_ids, edges);
  std::cout << "wrote " << nodes.rows() << " node and " << edges.rows() << " edge rows to " << out_path << "\n";
}

void add_common(CLI::App* cmd, Common& c, bool dataset, bool table, bool checkpoint) {
  cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "global seed");
  if (dataset) cmd->add_option("--dataset", c.dataset, "dataset directory");
  if (table) cmd->add_option("--table", c.table, "LANGEMB1 embedding table");
  if (checkpoint) cmd->add_option("--checkpoint", c.checkpoint, "model checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"language-distilled 3D scene graph learning"};
  app.require_subcommand(1);

  Common c;
  int count = 0, dim = 0;
  bool rooms = false;
  std::string vocab, out_file, scene, split = "test", space = "backbone";
  std::vector<std::string> queries;

  auto* gen = app.add_subcommand("gen-synthetic", "generate synthetic scenes, manifest and vocabulary");
  add_common(gen, c, false, false, false);
  gen->add_option("--out", c.out, "output directory");
  gen->add_option("--count", count, "number of scenes")->required();

  auto* tab = app.add_subcommand("build-stub-table", "write a stub LANGEMB1 table for a dataset");
  add_common(tab, c, true, false, false);
  tab->add_option("--vocab", vocab, "vocabulary file (default: the dataset's)");
  tab->add_option("--dim", dim, "embedding dimension (default 512)");
  tab->add_option("--out", out_file, "table path")->required();
  tab->add_flag("--rooms", rooms, "add bathroom/kitchen room queries");

  auto* pre = app.add_subcommand("pretrain", "language-supervised pre-training");
  add_common(pre, c, true, true, false);
  pre->add_option("--out", c.out, "run directory");

  auto* fine = app.add_subcommand("finetune", "supervised fine-tuning");
  add_common(fine, c, true, false, false);
  fine->add_option("--pretrained", c.pretrained, "pre-training checkpoint (default: random init)");
  fine->add_option("--out", c.out, "run directory");

  auto* ev = app.add_subcommand("eval", "recall metrics of a fine-tuned checkpoint");
  add_common(ev, c, true, false, true);
  ev->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  ev->add_option("--out", c.out, "directory for metrics.json and per_class.csv");

  auto* zs = app.add_subcommand("zero-shot", "room type of a scene from text queries");
  add_common(zs, c, false, true, true);
  zs->add_option("--scene", scene, "scene metadata file")->required();
  zs->add_option("--queries", queries, "query keys in the table (default: bathroom,kitchen)")->delimiter(',');
  zs->add_option("--out", c.out, "directory for zero_shot.json");

  auto* dump = app.add_subcommand("dump-features", "node and edge features of one scene as CSV");
  add_common(dump, c, false, false, true);
  dump->add_option("--scene", scene, "scene metadata file")->required();
  dump->add_option("--out", out_file, "CSV path")->required();
  dump->add_option("--space", space, "backbone or projected")->check(CLI::IsMember({"backbone", "projected"}));
  dump->add_option("--vocab", vocab, "vocabulary, for fine-tuned checkpoints");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      gen_synthetic(resolve(c), count);
    } else if (tab->parsed()) {
      build_table(resolve(c), vocab, dim, out_file, rooms);
    } else if (pre->parsed()) {
      run_pretrain(resolve(c));
    } else if (fine->parsed()) {
      run_finetune(resolve(c));
    } else if (ev->parsed()) {
      run_eval(resolve(c), split);
    } else if (zs->parsed()) {
      run_zero_shot(resolve(c), scene, queries);
    } else if (dump->parsed()) {
      dump_features(resolve(c), scene, out_file, space, vocab);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
