// One line per acceptance criterion; exit status is the number of failures.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/support.hpp"
#include "dne/harness.hpp"
#include "dne/simplex.hpp"
#include "dne/smoothing.hpp"
#include "dne/training.hpp"

using namespace dne;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

std::string pct(double v) { return fmt(100.0 * v, 3); }

Outcome simplex_soundness() {
  const auto start = Clock::now();
  Rng rng(derive_seed(1, "A1"));
  std::size_t bad = 0;
  double worst = 0.0;
  for (int t = 0; t < 100000; ++t) {
    const std::size_t m = 1 + rng.index(20);
    ConcentrationVector conc;
    for (std::size_t j = 0; j < m; ++j) conc.values.push_back(0.05 + 1.95 * rng.uniform());
    const auto p = sample_dirichlet(conc, rng);
    double total = 0.0;
    for (double b : p.beta) {
      if (!(b >= 0.0)) ++bad;
      total += b;
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  const double secs = seconds_since(start);
  return {bad == 0 && worst <= 1e-9 && secs < 10.0,
          "negative=" + std::to_string(bad) + " max|sum-1|=" + fmt(worst) + " time=" + fmt(secs, 3) + "s"};
}

Outcome lambda_ratio() {
  // Center plus two one-hop and three two-hop vertices.
  const Neighborhood nbh{2, {2, 3, 4}, {5, 6, 7}};
  const auto conc = build_alpha(nbh, 0.1, 0.1);
  Rng rng(derive_seed(2, "A2"));
  double one = 0.0, two = 0.0;
  for (int t = 0; t < 100000; ++t) {
    const auto p = sample_dirichlet(conc, rng);
    for (std::size_t j = 0; j < 3; ++j) one += p.beta[j] / 3.0;
    for (std::size_t j = 3; j < 6; ++j) two += p.beta[j] / 3.0;
  }
  const double ratio = two / one;
  return {ratio >= 0.095 && ratio <= 0.105, "E[two-hop]/E[one-hop]=" + fmt(ratio)};
}

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  Rng rng(derive_seed(3, "A3"));
  double worst = 0.0;
  for (auto arch : {Architecture::Bow, Architecture::Cnn}) {
    for (int t = 0; t < 100; ++t) {
      const std::size_t rows = 9, dim = 2 + rng.index(3);
      ClassifierConfig c;
      c.arch = arch;
      c.embed_dim = dim;
      c.hidden = 2 + rng.index(4);
      c.classes = 2 + rng.index(2);
      Classifier m(c, testing::random_table(rows, dim, rng), rng.index(1u << 30));
      SynonymGraph g(rows);
      for (int e = 0; e < 8; ++e)
        g.add_edge(static_cast<TokenId>(2 + rng.index(rows - 2)), static_cast<TokenId>(2 + rng.index(rows - 2)));
      g.symmetrize();
      std::vector<TokenId> ids(1 + rng.index(4));
      for (auto& id : ids) id = static_cast<TokenId>(2 + rng.index(rows - 2));
      VirtualSentence vs{ids, {}, {}};
      for (TokenId id : ids) {
        vs.nbhs.push_back(neighborhood(g, id, true));
        std::vector<double> eta(vs.nbhs.back().size());
        for (double& e : eta) e = rng.normal();
        vs.points.push_back(reparameterize(eta));
      }
      const std::size_t label = rng.index(c.classes);
      auto emb = m.embed_virtual(vs, nullptr, true, true);
      const auto vertices = vs.vertex_lists();
      auto loss = [&] {
        return ad::pick(ad::log_softmax_rows(m.score(ad::mix(m.embedding(), vertices, emb.etas))), 0, label);
      };
      m.params().zero_grad();
      ad::backward(loss());
      auto value = [&] { return loss()->scalar(); };
      for (const auto& p : m.params().all())
        worst = std::max(worst, testing::gradient_check(p.node, value, p.node->grad()));
      for (const auto& e : emb.etas) worst = std::max(worst, testing::gradient_check(e, value, e->grad()));
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 120.0, "max relative error=" + fmt(worst) + " time=" + fmt(secs, 3) + "s"};
}

Outcome cbwd_oracle() {
  bool examples = cbwd_weight(std::vector<double>{0.5, 0.5}, 3) == 0.0 &&
                  std::abs(cbwd_weight(std::vector<double>{0.9, 0.1}, 3) - 0.512) <= 1e-15 &&
                  cbwd_weight(std::vector<double>{1.0, 0.0, 0.0}, 3) == 2.0;
  Rng rng(derive_seed(4, "A4"));
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t c = 2 + rng.index(9);
    std::vector<double> p(c);
    double total = 0.0;
    for (double& x : p) total += (x = -std::log(rng.uniform_open()));
    for (double& x : p) x /= total;
    const double r = 1.0 + rng.index(5);
    std::size_t y = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (p[j] > p[y]) y = j;
    double direct = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (j != y) direct += std::pow(p[y] - p[j], r);
    worst = std::max(worst, std::abs(direct - cbwd_weight(p, r)));
  }
  return {examples && worst <= 1e-12,
          std::string("examples ") + (examples ? "exact" : "WRONG") + ", max deviation=" + fmt(worst)};
}

Outcome vertex_equivalence() {
  SynonymGraph g(8);
  for (TokenId a : {2, 3, 4})
    for (TokenId b : {2, 3, 4}) g.add_edge(a, b);
  g.add_edge(5, 6);
  g.add_edge(6, 7);
  g.symmetrize();
  const std::vector<TokenId> words{2, 3, 4, 5, 6, 7};
  double worst = 0.0;
  std::size_t cases = 0;
  for (auto arch : {Architecture::Bow, Architecture::Cnn}) {
    Rng rng(derive_seed(7, "A7"));
    ClassifierConfig c;
    c.arch = arch;
    c.embed_dim = 3;
    c.hidden = 5;
    const Classifier m(c, testing::random_table(8, 3, rng), 7);
    for (std::size_t len = 1; len <= 3; ++len) {
      std::vector<std::size_t> digits(len, 0);
      do {
        std::vector<TokenId> ids;
        std::vector<Neighborhood> nbhs;
        for (auto d : digits) {
          ids.push_back(words[d]);
          nbhs.push_back(neighborhood(g, words[d], true));
        }
        std::vector<std::size_t> pick(len, 0);
        do {
          VirtualSentence vs{ids, nbhs, {}};
          std::vector<TokenId> sub;
          for (std::size_t i = 0; i < len; ++i) {
            vs.points.push_back(SimplexPoint::vertex(nbhs[i].size(), pick[i]));
            sub.push_back(nbhs[i].at(pick[i]));
          }
          const auto a = m.embed_virtual(vs).sequence;
          const auto b = m.embed_discrete(sub);
          for (std::size_t k = 0; k < a->value().size(); ++k)
            worst = std::max(worst, std::abs(a->value()[k] - b->value()[k]));
          const auto sa = m.score(a)->value(), sb = m.score(b)->value();
          for (std::size_t k = 0; k < sa.size(); ++k) worst = std::max(worst, std::abs(sa[k] - sb[k]));
          ++cases;
          std::size_t i = 0;
          while (i < len && ++pick[i] == nbhs[i].size()) pick[i++] = 0;
          if (i == len) break;
        } while (true);
        std::size_t i = 0;
        while (i < len && ++digits[i] == words.size()) digits[i++] = 0;
        if (i == len) break;
      } while (true);
    }
  }
  return {worst <= 1e-12, std::to_string(cases) + " vertex assignments, max deviation=" + fmt(worst)};
}

Outcome coordinated_update() {
  Neighborhood n{2, {2, 3}, {}};
  VirtualSentence vs{{2}, {n}, {SimplexPoint::from_beta({0.6, 0.4})}};
  std::size_t changed[2] = {0, 0};
  for (int coordinated = 1; coordinated >= 0; --coordinated) {
    Rng rng(derive_seed(8, "A8"));
    ClassifierConfig c;
    c.embed_dim = 4;
    c.hidden = 6;
    Classifier m(c, testing::random_table(5, 4, rng), 8);
    const auto before = m.embedding_matrix();
    Adam opt(5e-4, 0.0);
    m.params().zero_grad();
    ad::backward(virtual_loss(m, vs, 1, nullptr, coordinated == 1));
    opt.step(m.params());
    const auto after = m.embedding_matrix();
    for (TokenId id = 0; id < 5; ++id) {
      bool moved = false;
      for (std::size_t k = 0; k < 4; ++k) moved |= before.row(id)[k] != after.row(id)[k];
      changed[coordinated] += moved;
    }
  }
  return {changed[1] == 2 && changed[0] == 1, "rows changed: coordinated=" + std::to_string(changed[1]) +
                                                  " uncoordinated=" + std::to_string(changed[0])};
}

struct EndToEnd {
  std::vector<CellResult> comparison, ablation;
  double seconds = 0.0;
};

const CellResult* find(const std::vector<CellResult>& cells, const std::string& name) {
  for (const auto& c : cells)
    if (c.name == name) return &c;
  return nullptr;
}

Outcome trend(const EndToEnd& run) {
  const auto* orig = find(run.comparison, "orig");
  const auto* ran = find(run.comparison, "ran");
  const auto* dne = find(run.ablation, "DNE");
  if (!orig || !ran || !dne || !orig->ok || !ran->ok || !dne->ok || !orig->ga_acc || !ran->ga_acc || !dne->ga_acc)
    return {false, "a run failed"};
  const double o = *orig->ga_acc, r = *ran->ga_acc, d = *dne->ga_acc;
  const bool pass = d >= o + 0.20 && d >= r + 0.05 && dne->clean_acc >= orig->clean_acc - 0.05 &&
                    run.seconds < 900.0;
  return {pass, "GA orig=" + pct(o) + " ran=" + pct(r) + " dne=" + pct(d) + "; CLN orig=" + pct(orig->clean_acc) +
                    " dne=" + pct(dne->clean_acc) + "; time=" + fmt(run.seconds, 3) + "s"};
}

Outcome ablation(const EndToEnd& run) {
  const auto* full = find(run.ablation, "DNE");
  if (!full || !full->ok || run.ablation.size() != 5) return {false, "ablation did not produce 5 rows"};
  bool pass = true;
  std::string detail = "full " + pct(full->clean_acc) + "/" + pct(*full->ga_acc);
  for (std::size_t i = 1; i < run.ablation.size(); ++i) {
    const auto& row = run.ablation[i];
    if (!row.ok || !row.ga_acc) return {false, row.name + " failed: " + row.error};
    const double ga_margin = *full->ga_acc - *row.ga_acc;
    const double clean_drop = full->clean_acc - row.clean_acc;
    const bool ok = ga_margin > 0.0 && clean_drop <= 0.03;
    pass &= ok;
    detail += "; " + row.name + " " + pct(row.clean_acc) + "/" + pct(*row.ga_acc) + (ok ? "" : " (violates)");
  }
  return {pass, detail};
}

Outcome determinism(const ExperimentSpec& spec, const EndToEnd& run) {
  auto again = spec;
  again.train.mode = TrainMode::Dne;
  again.name = "DNE";
  again.output_dir = spec.output_dir / "replay";
  const auto replay = run_experiment(again);
  const auto* first = find(run.ablation, "DNE");
  if (!first || !replay.ok) return {false, "replay failed: " + replay.error};
  const bool same = replay.to_json().dump() == first->to_json().dump();
  const bool files = testing::read_file(again.output_dir / "attack_ga.json") ==
                     testing::read_file(spec.output_dir / "ablation" / "full" / "attack_ga.json");
  return {same && files, std::string("summary ") + (same ? "identical" : "differs") + ", GA report " +
                             (files ? "byte-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config = argc > 1 ? fs::path(argv[1]) : fs::path(DNE_DEFAULT_CONFIG);
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "dne_acceptance";
  int failures = 0;
  auto report = [&](const char* id, const char* title, const Outcome& o) {
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail << std::endl;
    failures += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what()};
    }
  };

  report("A1", "simplex soundness", guarded(simplex_soundness));
  report("A2", "two-hop weight ratio", guarded(lambda_ratio));
  report("A3", "gradient fidelity", guarded(gradient_fidelity));
  report("A4", "confidence weights", guarded(cbwd_oracle));

  EndToEnd run;
  ExperimentSpec spec;
  std::string setup_error;
  try {
    fs::remove_all(work);
    spec = load_spec(config, {"experiment.output_dir=" + work.string(), "data.dir=" + (work / "data").string(),
                              "attack.kinds=ga"});
    generate_synthetic(spec.corpus, spec.data.train.parent_path());
    const auto start = Clock::now();
    auto compare = spec;
    compare.output_dir = work / "compare";
    // DNE itself comes from the ablation's full row.
    for (TrainMode mode : {TrainMode::Orig, TrainMode::Ran}) {
      auto cell = compare;
      cell.train.mode = mode;
      cell.name = to_string(mode);
      cell.output_dir = compare.output_dir / to_string(mode);
      run.comparison.push_back(run_experiment(cell));
    }
    auto abl = spec;
    abl.output_dir = work / "ablation";
    run.ablation = run_ablation(abl);
    run.seconds = seconds_since(start);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  auto end_to_end = [&](const std::function<Outcome()>& f) {
    return setup_error.empty() ? guarded(f) : Outcome{false, "setup failed: " + setup_error};
  };
  report("A5", "robustness trend", end_to_end([&] { return trend(run); }));
  report("A6", "ablation direction", end_to_end([&] { return ablation(run); }));
  report("A7", "vertex equivalence", guarded(vertex_equivalence));
  report("A8", "coordinated update", guarded(coordinated_update));
  report("A9", "determinism", end_to_end([&] {
           auto s = spec;
           s.output_dir = work;
           return determinism(s, run);
         }));
  return failures;
}
