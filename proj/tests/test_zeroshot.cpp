#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "langsg/errors.hpp"
#include "langsg/pretrain.hpp"
#include "langsg/synth.hpp"
#include "langsg/zeroshot.hpp"

using namespace langsg;

namespace {

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

EmbeddingTable room_table() {
  const auto vocab = GenConfig{}.vocabulary();
  auto t = build_stub_table(vocab, {}, 2, 64);
  add_room_queries(t, default_rooms());
  return t;
}

}  // namespace

TEST_CASE("pool_graph: mean of node rows") {
  Mat<float> one(1, 3);
  one << 1, -2, 3;
  CHECK(pool_graph(one) == std::vector<double>{1, -2, 3});
  Mat<double> twice(2, 2);
  twice << 0.5, 4, 0.5, 4;
  CHECK(pool_graph(twice) == std::vector<double>{0.5, 4});
  Mat<double> m(3, 2), p(3, 2);
  m << 1, 2, 3, 4, 5, 7;
  p << 5, 7, 1, 2, 3, 4;
  const auto a = pool_graph(m), b = pool_graph(p);
  for (int c = 0; c < 2; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-15));
  CHECK_THROWS_AS(pool_graph(Mat<double>(0, 2)), std::invalid_argument);
}

TEST_CASE("room queries: normalised sum of member embeddings") {
  const auto t = room_table();
  const auto rooms = default_rooms();
  REQUIRE(rooms.size() == 2);
  for (const auto& [room, members] : rooms) {
    CHECK(t.contains(room));
    std::vector<double> sum(64, 0.0);
    for (const auto& m : members) {
      const auto v = t.lookup(m);
      for (int k = 0; k < 64; ++k) sum[k] += v[k];
    }
    double n = 0;
    for (double x : sum) n += x * x;
    const auto q = t.lookup(room);
    for (int k = 0; k < 64; ++k) CHECK(q[k] == doctest::Approx(sum[k] / std::sqrt(n)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(room_query_vector({}, t), std::invalid_argument);
  CHECK_THROWS_AS(room_query_vector({"no such object"}, t), LookupError);
}

TEST_CASE("classify_room: exact match, scaling and ties") {
  const auto t = room_table();
  const auto q = RoomQuerySet::from_table({"bathroom", "kitchen"}, t);
  q.validate();
  auto f = to_double(t.lookup("kitchen"));
  auto r = classify_room(f, q);
  CHECK(r.label == "kitchen");
  CHECK(r.index == 1);
  CHECK(r.cosines[1] == doctest::Approx(1.0));
  CHECK(r.softmax[0] + r.softmax[1] == doctest::Approx(1.0));
  CHECK(r.softmax[1] > r.softmax[0]);
  for (double a : {1e-3, 0.5, 42.0}) {
    auto s = f;
    for (auto& x : s) x *= a;
    CHECK(classify_room(s, q).index == 1);
  }
  // identical queries tie toward the first
  RoomQuerySet same{{"a", "b"}, {q.vectors[0], q.vectors[0]}};
  CHECK(classify_room(f, same).index == 0);
  CHECK_THROWS_AS(classify_room(std::vector<double>(64, 0.0), q), std::domain_error);
  RoomQuerySet lonely{{"a"}, {q.vectors[0]}};
  CHECK_THROWS_AS(lonely.validate(), ValidationError);
}

TEST_CASE("classify_room: pooled member targets pick their room") {
  const auto t = room_table();
  const auto q = RoomQuerySet::from_table({"bathroom", "kitchen"}, t);
  for (const auto& [room, members] : default_rooms()) {
    Mat<double> nodes(static_cast<Eigen::Index>(members.size()), 64);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto v = t.lookup(members[i]);
      for (int k = 0; k < 64; ++k) nodes(static_cast<Eigen::Index>(i), k) = v[k];
    }
    CHECK(classify_room(pool_graph(nodes), q).label == room);
  }
}

TEST_CASE("zero_shot: runs end to end on a model") {
  GenConfig gen;
  gen.min_objects = gen.max_objects = 3;
  gen.min_points = gen.max_points = 24;
  gen.floor_points = 40;
  EncoderConfig enc;
  enc.gcn_layers = 1;
  enc.feature_dim = 4;
  enc.point_hidden = {6};
  const auto g = prepare_graph(generate_scene(gen), enc);
  Rng rng(3);
  const auto model = make_pretrain_model<float>(enc, ProjectorConfig{8, 64}, rng);
  const auto t = room_table();
  const auto r = zero_shot(model, g, RoomQuerySet::from_table({"bathroom", "kitchen"}, t));
  CHECK(r.cosines.size() == 2);
  CHECK((r.label == "bathroom" || r.label == "kitchen"));
}
