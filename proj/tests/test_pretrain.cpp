#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "langsg/errors.hpp"
#include "langsg/pretrain.hpp"
#include "langsg/synth.hpp"

using namespace langsg;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.gcn_layers = 2;
  c.feature_dim = 4;
  c.point_hidden = {6};
  c.max_instance_points = 16;
  c.max_pair_points = 32;
  return c;
}

ProjectorConfig small_projector(int d) { return {8, d}; }

struct Toy {
  GenConfig gen;
  LabelVocabulary vocab;
  std::vector<Scene> scenes;
  std::vector<PreparedGraph> graphs;
  EmbeddingTable table;
};

Toy make_toy(int count, int objects, int dim) {
  Toy t;
  t.gen.min_objects = t.gen.max_objects = objects;
  t.gen.min_points = t.gen.max_points = 24;
  t.gen.floor_points = 40;
  t.vocab = t.gen.vocabulary();
  for (int s = 0; s < count; ++s) {
    t.gen.seed = 500 + static_cast<std::uint64_t>(s);
    t.scenes.push_back(generate_scene(t.gen));
    t.graphs.push_back(prepare_graph(t.scenes.back(), small_encoder()));
  }
  t.table = build_stub_table(t.vocab, required_triples(t.scenes, t.vocab), 3, dim);
  return t;
}

EmbeddingTable plane_table() {
  EmbeddingTable t(2);
  t.insert("x", {1, 0});
  t.insert("y", {0, 1});
  t.insert("d60", {0.5f, static_cast<float>(std::sqrt(3.0) / 2)});
  return t;
}

}  // namespace

TEST_CASE("cosine: examples and scale invariance") {
  const std::vector<double> v{1, 2, 3}, w{-2, 0.5, 4};
  CHECK(cosine(v, v) == doctest::Approx(1.0));
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  std::vector<double> sv = v;
  for (auto& x : sv) x *= 7.5;
  CHECK(cosine(sv, w) == doctest::Approx(cosine(v, w)).epsilon(1e-14));
  CHECK_THROWS_AS(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), std::domain_error);
  CHECK_THROWS_AS(cosine(std::vector<double>{1}, std::vector<double>{1, 0}), ShapeError);
}

TEST_CASE("positive_loss: examples") {
  const auto t = plane_table();
  Mat<double> f(1, 2);
  f << 3, 0;
  CHECK(positive_loss(f, {{"x"}}, t) == doctest::Approx(0.0));
  CHECK(positive_loss(f, {{"y"}}, t) == doctest::Approx(1.0));
  // cosines 1.0 and 0.5 averaged over the two keys
  CHECK(positive_loss(f, {{"x", "d60"}}, t) == doctest::Approx(0.25));
  CHECK_THROWS_AS(positive_loss(f, {{"missing"}}, t), LookupError);
}

TEST_CASE("negative_loss: hinge examples") {
  EmbeddingTable t(2);
  t.insert("x", {1, 0});
  const double c8 = 0.8, s8 = std::sqrt(1 - c8 * c8);
  Mat<double> f(2, 2);
  f << c8, s8, 0.4, std::sqrt(1 - 0.16);
  CHECK(negative_loss(Mat<double>(f.topRows(1)), {{"x"}}, t, 0.5) == doctest::Approx(0.3));
  CHECK(negative_loss(Mat<double>(f.bottomRows(1)), {{"x"}}, t, 0.5) == doctest::Approx(0.0));
  CHECK(negative_loss(f, {{"x"}, {"x"}}, t, 0.5) == doctest::Approx(0.3));
  CHECK(negative_loss(f, {{}, {}}, t, 0.5) == 0.0);
}

TEST_CASE("contrastive losses: bounds and gradients") {
  const auto toy = make_toy(1, 3, 6);
  Rng rng(1);
  const auto keys = build_positive_keys(toy.graphs[0]);
  const auto negs = sample_negatives(toy.vocab, keys, 16, rng);
  for (int s = 0; s < 3; ++s) {
    const auto stream = static_cast<Stream>(s);
    const auto pk = keys.prompts(stream), nk = negs.prompts(stream);
    Mat<double> f(static_cast<Eigen::Index>(pk.size()), 6);
    for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = rng.normal();
    const double n = static_cast<double>(pk.size());
    const double pos = positive_loss(f, pk, toy.table), neg = negative_loss(f, nk, toy.table, 0.5);
    CHECK(pos >= 0);
    CHECK(pos <= 2 * n);
    CHECK(neg >= 0);
    CHECK(neg <= 0.5 * n);

    Mat<double> g = Mat<double>::Zero(f.rows(), f.cols());
    positive_loss(f, pk, toy.table, &g, 1.0);
    negative_loss(f, nk, toy.table, 0.5, &g, 2.0);
    std::vector<GradCheckEntry> e{{"f", std::span<double>(f.data(), static_cast<std::size_t>(f.size())),
                                   std::span<const double>(g.data(), static_cast<std::size_t>(g.size()))}};
    auto loss = [&] { return positive_loss(f, pk, toy.table) + 2.0 * negative_loss(f, nk, toy.table, 0.5); };
    CHECK(grad_check(loss, e, 1e-4).max_rel_error < 1e-6);
  }
}

TEST_CASE("positive keys: nodes, edges and the neutral predicate") {
  Rng rng(2);
  Scene s = testutil::random_scene(3, 5, rng, {"chair", "table", "floor"});
  s.relationships = {{0, 2, "standing on"}, {0, 2, "close by"}};
  canonicalize(s);
  const auto g = prepare_graph(s, small_encoder());
  const auto k = build_positive_keys(g);
  CHECK(k.nodes == std::vector<std::string>{"chair", "table", "floor"});
  REQUIRE(k.edges.size() == 6);
  // edge (0,2) is the second in i-major order
  CHECK(k.edges[1] == std::vector<std::string>{"close by", "standing on"});
  CHECK(k.edges[0] == std::vector<std::string>{"and"});
  CHECK(k.triplets[1][1] == Triple{"chair", "standing on", "floor"});
  CHECK(k.prompts(Stream::Triplet)[1][1] == "A scene of a chair is standing on a floor");
  for (const auto& e : k.edges) CHECK_FALSE(e.empty());
}

TEST_CASE("sample_negatives: contract examples") {
  const LabelVocabulary vocab({"chair", "table", "floor", "lamp"}, {"standing on", "close by", "and"});
  PositiveKeySet pos;
  pos.nodes = {"chair"};
  pos.edges = {{"standing on"}, {"and"}};
  pos.triplets = {{{"chair", "standing on", "floor"}}, {{"floor", "and", "chair"}}};
  Rng rng(3);
  const auto n = sample_negatives(vocab, pos, 16, rng);
  // fewer candidates than M: everything available
  CHECK(std::set<std::string>(n.nodes[0].begin(), n.nodes[0].end()) == std::set<std::string>{"table", "floor", "lamp"});
  CHECK(std::find(n.edges[0].begin(), n.edges[0].end(), "and") != n.edges[0].end());
  CHECK(std::find(n.edges[1].begin(), n.edges[1].end(), "and") == n.edges[1].end());
  for (std::size_t e = 0; e < 2; ++e) {
    for (const auto& t : n.triplets[e]) {
      const auto& p = pos.triplets[e][0];
      const int diff = (t.subject != p.subject) + (t.predicate != p.predicate) + (t.object != p.object);
      CHECK(diff == 1);
    }
  }
  // with 3 + 2 + 3 one-slot variants available, M = 4 takes a subset
  Rng r2(4);
  const auto few = sample_negatives(vocab, pos, 4, r2);
  CHECK(few.triplets[0].size() == 4);
  CHECK(few.nodes[0].size() == 3);
  CHECK(few.edges[0].size() == 2);
  Rng r3(4);
  const auto again = sample_negatives(vocab, pos, 4, r3);
  CHECK(again.triplets == few.triplets);
  CHECK(again.edges == few.edges);

  Rng r4(5);
  const auto none = sample_negatives(vocab, pos, 0, r4);
  CHECK(none.nodes[0].empty());
  CHECK(none.edges[0].empty());
  CHECK(none.triplets[0].empty());
  CHECK_THROWS_AS(sample_negatives(vocab, pos, -1, r4), std::invalid_argument);
}

TEST_CASE("sample_negatives: one-slot rule holds under a full vocabulary") {
  const auto toy = make_toy(4, 4, 8);
  Rng rng(6);
  for (const auto& g : toy.graphs) {
    const auto keys = build_positive_keys(g);
    const auto negs = sample_negatives(toy.vocab, keys, 16, rng);
    for (std::size_t e = 0; e < keys.edges.size(); ++e) {
      CHECK(negs.triplets[e].size() == 16);
      const std::set<Triple> positives(keys.triplets[e].begin(), keys.triplets[e].end());
      for (const auto& t : negs.triplets[e]) {
        CHECK_FALSE(positives.count(t));
        bool one_slot = false;
        for (const auto& p : keys.triplets[e]) {
          one_slot |= (t.subject != p.subject) + (t.predicate != p.predicate) + (t.object != p.object) == 1;
        }
        CHECK(one_slot);
        CHECK(toy.table.contains(relationship_prompt(t)));
      }
    }
  }
}

TEST_CASE("positive_loss: zero when every feature points at its target") {
  const auto t = plane_table();
  Mat<float> f(2, 2);
  f << 2, 0, 0, 0.1f;
  CHECK(positive_loss(f, {{"x"}, {"y"}}, t) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("pretrain_objective: gradients match finite differences") {
  const auto toy = make_toy(2, 3, 6);
  ContrastiveConfig cfg;
  cfg.negatives = 4;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    Rng init(seed);
    auto model = make_pretrain_model<double>(small_encoder(), small_projector(6), init);
    Rng neg_rng(seed + 10);
    std::vector<SceneTargets> targets;
    std::vector<const PreparedGraph*> batch;
    for (const auto& g : toy.graphs) {
      SceneTargets st;
      st.positives = build_positive_keys(g);
      st.negatives = sample_negatives(toy.vocab, st.positives, cfg.negatives, neg_rng);
      targets.push_back(std::move(st));
      batch.push_back(&g);
    }
    model.zero_grad();
    const auto l = pretrain_objective<double>(model, batch, targets, toy.table, cfg, true);
    CHECK(l.total > 0);
    auto loss = [&] { return pretrain_objective<double>(model, batch, targets, toy.table, cfg, false).total; };
    auto entries = testutil::param_entries(model);
    const auto r = grad_check(loss, entries, 1e-4);
    INFO("worst tensor " << r.worst_tensor);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("pretrain_objective: stream weights scale their terms") {
  const auto toy = make_toy(1, 3, 6);
  Rng init(1);
  auto model = make_pretrain_model<double>(small_encoder(), small_projector(6), init);
  SceneTargets st;
  st.positives = build_positive_keys(toy.graphs[0]);
  Rng r(2);
  st.negatives = sample_negatives(toy.vocab, st.positives, 4, r);
  const PreparedGraph* g = &toy.graphs[0];
  ContrastiveConfig cfg;
  const auto base = pretrain_objective<double>(model, std::span(&g, 1), std::span(&st, 1), toy.table, cfg, false);
  double sum = 0;
  for (int s = 0; s < 3; ++s) sum += base.positive[s] + base.negative[s];
  CHECK(base.total == doctest::Approx(sum));
  cfg.stream_weights = {0, 1, 0};
  const auto edge_only = pretrain_objective<double>(model, std::span(&g, 1), std::span(&st, 1), toy.table, cfg, false);
  CHECK(edge_only.total == doctest::Approx(base.positive[1] + base.negative[1]));
}

TEST_CASE("pretrain: loss decreases, runs are deterministic, lookups resolve") {
  const auto toy = make_toy(4, 3, 8);
  PretrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 2;
  cfg.encoder = small_encoder();
  cfg.projector = small_projector(8);
  cfg.seed = 9;
  int calls = 0;
  const auto a = pretrain(toy.graphs, toy.table, toy.vocab, cfg,
                          [&](const EpochLog&, PretrainModel<float>&, const Adam<float>&) { ++calls; });
  CHECK(calls == 6);
  REQUIRE(a.log.size() == 6);
  CHECK(a.log.back().loss.total < a.log.front().loss.total);
  CHECK(a.log[0].lr == doctest::Approx(1e-3));
  const auto b = pretrain(toy.graphs, toy.table, toy.vocab, cfg);
  auto ma = a.model, mb = b.model;
  std::vector<Mat<float>> pa, pb;
  ma.for_each_param([&](Param<float>& p) { pa.push_back(p.value); });
  mb.for_each_param([&](Param<float>& p) { pb.push_back(p.value); });
  CHECK(pa == pb);
  cfg.seed = 10;
  auto mc = pretrain(toy.graphs, toy.table, toy.vocab, cfg).model;
  std::vector<Mat<float>> pc;
  mc.for_each_param([&](Param<float>& p) { pc.push_back(p.value); });
  CHECK_FALSE(pa == pc);
}

TEST_CASE("pretrain: configuration errors") {
  const auto toy = make_toy(1, 3, 8);
  PretrainConfig cfg;
  cfg.encoder = small_encoder();
  cfg.projector = small_projector(16);
  CHECK_THROWS_AS(pretrain(toy.graphs, toy.table, toy.vocab, cfg), ValidationError);
  cfg.projector = small_projector(8);
  CHECK_THROWS_AS(pretrain({}, toy.table, toy.vocab, cfg), TrainingError);
  cfg.contrastive.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  EmbeddingTable empty(8);
  cfg.contrastive.tau = 0.5;
  cfg.epochs = 1;
  CHECK_THROWS_AS(pretrain(toy.graphs, empty, toy.vocab, cfg), LookupError);
}
