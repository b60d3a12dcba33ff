#include <doctest.h>

#include <cmath>
#include <limits>

#include <json.hpp>

#include "dne/error.hpp"
#include "dne/training.hpp"
#include "support.hpp"

using namespace dne;

namespace {

Classifier small_model(std::uint64_t seed, std::size_t rows = 10, std::size_t dim = 3,
                       Architecture arch = Architecture::Bow) {
  ClassifierConfig c;
  c.arch = arch;
  c.embed_dim = dim;
  c.hidden = 6;
  c.classes = 2;
  Rng rng(derive_seed(seed, "table"));
  return Classifier(c, testing::random_table(rows, dim, rng), seed);
}

void check_simplex(const SimplexPoint& p) {
  double total = 0.0;
  for (double b : p.beta) {
    REQUIRE(b >= 0.0);
    total += b;
  }
  REQUIRE(std::abs(total - 1.0) <= 1e-9);
}

void check_virtual(const VirtualSentence& vs) {
  REQUIRE(vs.ids.size() == vs.nbhs.size());
  REQUIRE(vs.ids.size() == vs.points.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    REQUIRE(vs.points[i].size() == vs.nbhs[i].size());
    check_simplex(vs.points[i]);
  }
}

/// Words 2..9; 2-3-4-5 form a chain, 6 and 7 are synonyms, 8 and 9 are isolated.
SynonymGraph toy_graph() {
  SynonymGraph g(10);
  g.add_edge(2, 3);
  g.add_edge(3, 4);
  g.add_edge(4, 5);
  g.add_edge(6, 7);
  g.symmetrize();
  return g;
}

Dataset random_dataset(std::size_t n, std::size_t rows, Rng& rng) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.ids.resize(1 + rng.index(5));
    for (auto& id : ex.ids) id = static_cast<TokenId>(2 + rng.index(rows - 2));
    ex.label = rng.index(2);
    d.examples.push_back(std::move(ex));
  }
  return d;
}

TrainConfig quick(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 3;
  cfg.batch = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 21;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.adv_epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.adv_steps = 0;
  CHECK_NOTHROW(cfg.validate());
  cfg = TrainConfig{};
  cfg.lambda = 0.6;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.mode = TrainMode::Orig;
  CHECK_NOTHROW(cfg.validate());
  CHECK(parse_train_mode("dne") == TrainMode::Dne);
  CHECK(to_string(TrainMode::Ran) == "ran");
  CHECK_THROWS_AS(parse_train_mode("adv"), ParameterError);
}

TEST_CASE("make_virtual examples") {
  const auto g = toy_graph();
  Rng rng(1);
  const std::vector<TokenId> ids{3, kPadId, 8, 6};
  const auto vs = make_virtual(ids, g, {0.1, 0.1}, true, rng);
  check_virtual(vs);
  CHECK(vs.points[0].size() == 4);  // 3, 2, 4 plus 5 at two hops
  CHECK(vs.nbhs[1].vertices() == std::vector<TokenId>{kPadId});
  CHECK(vs.points[1].beta == std::vector<double>{1.0});
  CHECK(vs.points[2].beta == std::vector<double>{1.0});
  CHECK(vs.points[3].size() == 2);

  Rng again(1);
  const auto replay = make_virtual(ids, g, {0.1, 0.1}, true, again);
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(replay.points[i].beta == vs.points[i].beta);

  Rng plain(1);
  CHECK(make_virtual(ids, g, {0.1, 0.1}, false, plain).points[0].size() == 3);

  SynonymGraph clique(12);
  for (TokenId a = 2; a < 7; ++a)
    for (TokenId b = 2; b < 7; ++b) clique.add_edge(a, b);
  Rng r5(2);
  const auto five = make_virtual(std::vector<TokenId>{4}, clique, {0.5, 0.1}, true, r5);
  CHECK(five.points[0].size() == 5);
  check_virtual(five);
}

TEST_CASE("loss examples") {
  auto m = small_model(1);
  for (double& v : m.params().get("output.weight")->value()) v = 0.0;
  const std::vector<TokenId> ids{2, 3};
  CHECK(discrete_loss(m, ids, 1)->scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  m.params().get("output.bias")->value() = {50.0, 0.0};
  CHECK(discrete_loss(m, ids, 0)->scalar() < 1e-20);
  CHECK(discrete_loss(m, ids, 1)->scalar() == doctest::Approx(50.0));
  CHECK_THROWS_AS(discrete_loss(m, ids, 2), ParameterError);
}

TEST_CASE("centered virtual loss equals discrete loss") {
  const auto g = toy_graph();
  Rng rng(derive_seed(3, "centered"));
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = small_model(300 + trial);
    std::vector<TokenId> ids(1 + rng.index(6));
    for (auto& id : ids) id = static_cast<TokenId>(2 + rng.index(8));
    std::vector<Neighborhood> nbhs;
    for (TokenId id : ids) nbhs.push_back(neighborhood(g, id, true));
    const auto vs = VirtualSentence::at_centers(ids, nbhs);
    for (std::size_t label : {0u, 1u}) {
      const double a = virtual_loss(m, vs, label)->scalar();
      const double b = discrete_loss(m, ids, label)->scalar();
      CHECK(std::abs(a - b) <= 1e-12);
    }
  }
}

TEST_CASE("search stops at a vanishing gradient") {
  auto m = small_model(2);
  for (double& v : m.params().get("output.weight")->value()) v = 0.0;
  const auto g = toy_graph();
  Rng rng(4);
  const auto start = make_virtual(std::vector<TokenId>{3, 6}, g, {1.0, 0.1}, true, rng);
  SearchOptions opts;
  CHECK(search_iterates(m, start, 0, opts).empty());
  const auto only = adversarial_search(m, start, 0, opts);
  REQUIRE(only.size() == 1);
  for (std::size_t i = 0; i < start.size(); ++i) CHECK(only[0].points[i].beta == start.points[i].beta);

  opts.steps = 0;
  CHECK_THROWS_AS(adversarial_search(m, start, 0, opts), ParameterError);
  CHECK(search_iterates(m, start, 0, opts).empty());
}

TEST_CASE("search moves weight toward the vertex that lowers the label score") {
  // One position over rows (1, 0) and (-1, 0); score_0 = x_0 + 100, score_1 = 0.
  EmbeddingMatrix table(4, 2);
  table.row(2)[0] = 1.0;
  table.row(3)[0] = -1.0;
  ClassifierConfig c;
  c.embed_dim = 2;
  c.hidden = 2;
  Classifier m(c, table, 1);
  m.params().get("hidden.weight")->value() = {1, 0, 0, 1};
  m.params().get("hidden.bias")->value() = {100, 100};
  m.params().get("output.weight")->value() = {1, 0, 0, 0};
  m.params().get("output.bias")->value() = {-100, 0};

  Neighborhood n{2, {2, 3}, {}};
  VirtualSentence start{{2}, {n}, {SimplexPoint::from_beta({0.9, 0.1})}};
  SearchOptions opts{4, 1.0, SearchUpdate::Normalized, SearchNorm::Global};
  const auto its = search_iterates(m, start, 0, opts);
  REQUIRE(its.size() == 4);
  double previous = start.points[0].beta[1];
  std::vector<double> eta = start.points[0].eta;
  for (const auto& it : its) {
    CHECK(it.points[0].beta[1] > previous);
    previous = it.points[0].beta[1];
    // g is proportional to (1, -1); a unit step subtracts (1, -1) / sqrt 2.
    eta[0] -= 1.0 / std::sqrt(2.0);
    eta[1] += 1.0 / std::sqrt(2.0);
    CHECK(it.points[0].eta[0] == doctest::Approx(eta[0]).epsilon(1e-12));
    CHECK(it.points[0].eta[1] == doctest::Approx(eta[1]).epsilon(1e-12));
  }
  const double lp_start = -virtual_loss(m, start, 0)->scalar();
  const double lp_end = -virtual_loss(m, its.back(), 0)->scalar();
  CHECK(lp_end < lp_start);

  opts.update = SearchUpdate::Raw;
  opts.steps = 1;
  const auto raw = search_iterates(m, start, 0, opts);
  // d log p0 / d eta = p1 * 2 * b1 * b2 * (1, -1).
  const double p1 = m.probabilities(std::vector<double>{0.8, 0.0}, 1)[1];
  const double step = p1 * 2.0 * 0.9 * 0.1;
  CHECK(raw[0].points[0].eta[0] == doctest::Approx(std::log(0.9) - step).epsilon(1e-9));
  CHECK(raw[0].points[0].eta[1] == doctest::Approx(std::log(0.1) + step).epsilon(1e-9));
}

TEST_CASE("per-position normalisation moves each position by epsilon") {
  const auto m = small_model(6);
  const auto g = toy_graph();
  Rng rng(7);
  const auto start = make_virtual(std::vector<TokenId>{3, 6}, g, {1.0, 0.1}, true, rng);
  SearchOptions opts{1, 0.5, SearchUpdate::Normalized, SearchNorm::PerPosition};
  const auto its = search_iterates(m, start, 1, opts);
  REQUIRE(its.size() == 1);
  for (std::size_t i = 0; i < start.size(); ++i) {
    double moved = 0.0;
    for (std::size_t j = 0; j < start.points[i].size(); ++j) {
      const double d = its[0].points[i].eta[j] - start.points[i].eta[j];
      moved += d * d;
    }
    CHECK(std::sqrt(moved) == doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("search iterates stay on the simplex and leave parameters untouched") {
  const auto g = toy_graph();
  Rng rng(derive_seed(8, "iterates"));
  for (int trial = 0; trial < 1000; ++trial) {
    auto m = small_model(1000 + trial, 10, 3, trial % 2 ? Architecture::Cnn : Architecture::Bow);
    std::vector<TokenId> ids(1 + rng.index(5));
    for (auto& id : ids) id = static_cast<TokenId>(rng.index(10));
    const double alpha = 0.05 + rng.uniform() * 2.0;
    const auto start = make_virtual(ids, g, {alpha, 0.1}, true, rng);
    const auto before = m.params().snapshot();
    SearchOptions opts{3, 0.1 + rng.uniform() * 20.0, SearchUpdate::Normalized, SearchNorm::Global};
    for (const auto& it : adversarial_search(m, start, rng.index(2), opts)) check_virtual(it);
    REQUIRE(m.params().snapshot() == before);
    for (const auto& p : m.params().all()) {
      REQUIRE(p.node->requires_grad());
      for (double x : p.node->grad()) REQUIRE(x == 0.0);
    }
  }
}

TEST_CASE("averaged log-probability never exceeds the log of averaged probability") {
  const auto g = toy_graph();
  Rng rng(derive_seed(9, "jensen"));
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = small_model(5000 + trial);
    std::vector<TokenId> ids(1 + rng.index(4));
    for (auto& id : ids) id = static_cast<TokenId>(2 + rng.index(8));
    const std::size_t label = rng.index(2);
    double mean_log = 0.0, mean_p = 0.0;
    for (int s = 0; s < 64; ++s) {
      const auto vs = make_virtual(ids, g, {0.1 + rng.uniform(), 0.1}, true, rng);
      const double lp = -virtual_loss(m, vs, label)->scalar();
      mean_log += lp / 64.0;
      mean_p += std::exp(lp) / 64.0;
    }
    REQUIRE(mean_log <= std::log(mean_p) + 1e-9);
  }
}

TEST_CASE("one step moves both hull rows only when coordinated") {
  SynonymGraph g(4);
  g.add_edge(2, 3);
  g.symmetrize();
  Neighborhood n{2, {2, 3}, {}};
  VirtualSentence vs{{2}, {n}, {SimplexPoint::from_beta({0.6, 0.4})}};
  for (bool coordinated : {true, false}) {
    auto m = small_model(11, 4);
    const auto before = m.embedding_matrix();
    Adam opt(5e-4, 0.0);
    m.params().zero_grad();
    ad::backward(virtual_loss(m, vs, 1, nullptr, coordinated));
    opt.step(m.params());
    const auto after = m.embedding_matrix();
    auto changed = [&](TokenId id) {
      for (std::size_t c = 0; c < 3; ++c)
        if (before.row(id)[c] != after.row(id)[c]) return true;
      return false;
    };
    CHECK(changed(2));
    CHECK(changed(3) == coordinated);
    CHECK_FALSE(changed(kPadId));
    CHECK_FALSE(changed(kUnkId));
  }
}

TEST_CASE("adam first step has magnitude lr") {
  ParameterRegistry reg;
  auto x = reg.add("x", {1, 3}, {1.0, -2.0, 0.0});
  x->grad() = {0.5, -3.0, 0.0};
  Adam opt(0.01);
  opt.step(reg);
  CHECK(x->value()[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(x->value()[1] == doctest::Approx(-1.99).epsilon(1e-9));
  CHECK(x->value()[2] == 0.0);
  CHECK(opt.steps() == 1);

  ParameterRegistry decayed;
  auto y = decayed.add("y", {1, 1}, {2.0});
  y->grad() = {0.0};
  Adam wd(0.01, 0.1);
  wd.step(decayed);
  CHECK(y->value()[0] == doctest::Approx(1.99).epsilon(1e-9));
}

TEST_CASE("random substitution draws from the substitution set") {
  const auto g = toy_graph();
  Rng rng(12);
  const std::vector<TokenId> ids{3, kPadId, 8, 6, 5};
  std::vector<std::size_t> hits(10, 0);
  for (int t = 0; t < 3000; ++t) {
    const auto out = random_substitution(ids, g, rng);
    REQUIRE(out.size() == ids.size());
    CHECK(out[1] == kPadId);
    CHECK(out[2] == 8);
    CHECK((out[0] == 2 || out[0] == 3 || out[0] == 4));
    CHECK((out[3] == 6 || out[3] == 7));
    ++hits[static_cast<std::size_t>(out[0])];
  }
  for (TokenId id : {2, 3, 4}) CHECK(std::abs(static_cast<double>(hits[static_cast<std::size_t>(id)]) - 1000.0) < 120.0);
}

TEST_CASE("dne over an isolated vocabulary replays orig") {
  Rng rng(13);
  const auto data = random_dataset(60, 10, rng);
  const SynonymGraph none(10);
  auto orig = small_model(14);
  auto dne = small_model(14);
  const auto a = train(orig, data, nullptr, none, quick(TrainMode::Orig));
  const auto b = train(dne, data, nullptr, none, quick(TrainMode::Dne));
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(std::abs(a.epochs[e].train_loss - b.epochs[e].train_loss) <= 1e-12);
    CHECK(a.epochs[e].train_acc == b.epochs[e].train_acc);
  }
  const auto pa = orig.params().snapshot(), pb = dne.params().snapshot();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pb[i]) <= 1e-12);
}

TEST_CASE("orig fits a separable toy set") {
  // Words 2..5 push toward class 1, 6..9 toward class 0; label is the majority.
  Rng rng(15);
  Dataset data;
  for (int i = 0; i < 200; ++i) {
    Example ex;
    int votes = 0;
    for (int t = 0; t < 3; ++t) {
      const auto id = static_cast<TokenId>(2 + rng.index(8));
      votes += id < 6 ? 1 : -1;
      ex.ids.push_back(id);
    }
    ex.label = votes > 0 ? 1 : 0;
    data.examples.push_back(std::move(ex));
  }
  auto m = small_model(16, 10, 4);
  auto cfg = quick(TrainMode::Orig);
  cfg.epochs = 20;
  cfg.lr = 0.01;
  const auto result = train(m, data, nullptr, SynonymGraph(10), cfg);
  CHECK_FALSE(result.diverged);
  CHECK(accuracy(m, data) == 1.0);
}

TEST_CASE("training is deterministic and keeps the best validation epoch") {
  const auto g = toy_graph();
  Rng rng(17);
  const auto data = random_dataset(80, 10, rng);
  const auto val = random_dataset(40, 10, rng);
  for (auto mode : {TrainMode::Orig, TrainMode::Ran, TrainMode::Dne}) {
    auto a = small_model(18), b = small_model(18);
    auto cfg = quick(mode);
    cfg.epochs = 4;
    const auto ra = train(a, data, &val, g, cfg);
    const auto rb = train(b, data, &val, g, cfg);
    CHECK(a.params().snapshot() == b.params().snapshot());
    REQUIRE(ra.epochs.size() == 4);
    for (std::size_t e = 0; e < 4; ++e) CHECK(ra.epochs[e].train_loss == rb.epochs[e].train_loss);
    CHECK(accuracy(a, val) == ra.best_val_acc);
    CHECK(ra.epochs[ra.best_epoch - 1].val_acc == ra.best_val_acc);
    for (const auto& e : ra.epochs) CHECK(e.val_acc <= ra.best_val_acc);
  }
}

TEST_CASE("non-finite loss aborts and flags divergence") {
  Rng rng(19);
  const auto data = random_dataset(20, 10, rng);
  auto m = small_model(20);
  for (double& v : m.params().get("output.bias")->value()) v = std::numeric_limits<double>::quiet_NaN();
  const auto before = m.params().snapshot();
  const auto r = train(m, data, nullptr, SynonymGraph(10), quick(TrainMode::Orig));
  CHECK(r.diverged);
  REQUIRE(r.epochs.size() == 1);
  CHECK(r.epochs[0].aborted);
  CHECK_THROWS_AS(train(m, Dataset{}, nullptr, SynonymGraph(10), quick(TrainMode::Orig)), ParameterError);
}

TEST_CASE("epoch metrics serialise as json lines") {
  EpochMetrics m;
  m.epoch = 2;
  m.mode = TrainMode::Dne;
  m.train_loss = 0.5;
  m.train_acc = 0.75;
  m.val_acc = 0.625;
  m.wall_ms = 12.0;
  const auto full = nlohmann::json::parse(to_json_line(m));
  CHECK(full["epoch"] == 2);
  CHECK(full["mode"] == "dne");
  CHECK(full["wall_ms"] == 12.0);
  const auto bare = nlohmann::json::parse(to_json_line(m, false));
  CHECK_FALSE(bare.contains("wall_ms"));
  CHECK(bare["val_acc"] == 0.625);
}
