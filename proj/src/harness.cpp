#include "dne/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dne/error.hpp"
#include "dne/rng.hpp"

namespace dne {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

void CorpusSpec::validate() const {
  if (clusters < 2) throw ParameterError("corpus needs at least 2 clusters");
  if (cluster_size < 2) throw ParameterError("cluster_size must be at least 2");
  if (dim < 1) throw ParameterError("corpus dim must be positive");
  if (min_len < 1 || min_len > max_len) throw ParameterError("need 1 <= min_len <= max_len");
  if (!(head_rate >= 0.0 && head_rate <= 1.0)) throw ParameterError("head_rate must lie in [0, 1]");
  if (!(word_noise >= 0.0) || !(center_scale > 0.0)) throw ParameterError("bad corpus scales");
  if (topology != "chain" && topology != "clique")
    throw ParameterError("topology must be chain or clique");
}

CorpusFiles corpus_files(const fs::path& dir) {
  return {dir / "embeddings.txt", dir / "synonyms.tsv", dir / "train.tsv", dir / "val.tsv",
          dir / "test.tsv"};
}

namespace {

std::string word_name(std::size_t cluster, std::size_t member) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%02zus%zu", cluster, member);
  return buf;
}

void write_split(const fs::path& path, std::size_t count, const CorpusSpec& spec,
                 const std::vector<int>& polarity, Rng& rng) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t head = spec.cluster_size / 2;
  std::size_t quota[2] = {count - count / 2, count / 2};
  std::vector<std::size_t> members(spec.cluster_size - 1);
  while (quota[0] + quota[1] > 0) {
    const std::size_t len = spec.min_len + rng.index(spec.max_len - spec.min_len + 1);
    std::string text;
    long sum = 0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t c = rng.index(spec.clusters);
      std::size_t m = head;
      if (!rng.bernoulli(spec.head_rate)) {
        m = rng.index(spec.cluster_size - 1);
        if (m >= head) ++m;
      }
      sum += polarity[c];
      if (t) text += ' ';
      text += word_name(c, m);
    }
    if (sum == 0) continue;
    const std::size_t label = sum > 0 ? 1 : 0;
    if (quota[label] == 0) continue;
    --quota[label];
    out << label << '\t' << text << '\n';
  }
}

// Half the clusters positive, half negative; magnitudes 1 and 2 alternate
// so that sums near zero stay common.
std::vector<int> shuffled_polarity(const CorpusSpec& spec, Rng& rng) {
  std::vector<int> polarity(spec.clusters);
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    const int magnitude = (c / 2) % 2 == 0 ? 1 : 2;
    polarity[c] = c % 2 == 0 ? magnitude : -magnitude;
  }
  for (std::size_t i = polarity.size() - 1; i > 0; --i) std::swap(polarity[i], polarity[rng.index(i + 1)]);
  return polarity;
}

}  // namespace

std::vector<int> cluster_polarity(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "corpus"));
  return shuffled_polarity(spec, rng);
}

CorpusFiles generate_synthetic(const CorpusSpec& spec, const fs::path& dir) {
  spec.validate();
  fs::create_directories(dir);
  const CorpusFiles files = corpus_files(dir);
  Rng rng(derive_seed(spec.seed, "corpus"));
  const auto polarity = shuffled_polarity(spec, rng);

  std::vector<double> axis(spec.dim);
  double axis_norm = 0.0;
  for (double& x : axis) {
    x = rng.normal();
    axis_norm += x * x;
  }
  for (double& x : axis) x /= std::sqrt(axis_norm);

  {
    std::ofstream out(files.embeddings, std::ios::binary);
    if (!out) throw Error("cannot write " + files.embeddings.string());
    std::vector<double> center(spec.dim);
    char buf[32];
    for (std::size_t c = 0; c < spec.clusters; ++c) {
      for (std::size_t k = 0; k < spec.dim; ++k)
        center[k] = spec.center_scale * rng.normal() + spec.polarity_signal * polarity[c] * axis[k];
      for (std::size_t m = 0; m < spec.cluster_size; ++m) {
        out << word_name(c, m);
        for (double x : center) {
          std::snprintf(buf, sizeof buf, " %.6f", x + spec.word_noise * rng.normal());
          out << buf;
        }
        out << '\n';
      }
    }
  }

  {
    std::ofstream out(files.synonyms, std::ios::binary);
    if (!out) throw Error("cannot write " + files.synonyms.string());
    for (std::size_t c = 0; c < spec.clusters; ++c) {
      for (std::size_t m = 0; m < spec.cluster_size; ++m) {
        std::vector<std::size_t> linked;
        for (std::size_t o = 0; o < spec.cluster_size; ++o) {
          if (o == m) continue;
          if (spec.topology == "clique" || o + 1 == m || m + 1 == o) linked.push_back(o);
        }
        out << word_name(c, m) << '\t';
        for (std::size_t k = 0; k < linked.size(); ++k)
          out << (k ? "," : "") << word_name(c, linked[k]);
        out << '\n';
      }
    }
  }

  write_split(files.train, spec.train, spec, polarity, rng);
  write_split(files.val, spec.val, spec, polarity, rng);
  write_split(files.test, spec.test, spec, polarity, rng);
  return files;
}

std::string to_string(Deployment d) {
  switch (d) {
    case Deployment::Auto: return "auto";
    case Deployment::Base: return "base";
    case Deployment::Smoothed: return "smoothed";
  }
  return "auto";
}

Deployment parse_deployment(const std::string& name) {
  if (name == "auto") return Deployment::Auto;
  if (name == "base") return Deployment::Base;
  if (name == "smoothed") return Deployment::Smoothed;
  throw ParameterError("unknown deployment '" + name + "' (expected auto, base or smoothed)");
}

bool ExperimentSpec::smoothed() const {
  if (deploy == Deployment::Auto) return train.mode != TrainMode::Orig;
  return deploy == Deployment::Smoothed;
}

void ExperimentSpec::reseed() {
  corpus.seed = derive_seed(seed, "corpus");
  train.seed = derive_seed(seed, "train");
  ensemble.seed = derive_seed(seed, "ensemble");
  attack.seed = derive_seed(seed, "attack");
}

void ExperimentSpec::validate() const {
  corpus.validate();
  model.validate();
  train.validate();
  ensemble.validate();
  attack.validate();
  if (attacks.empty()) throw ParameterError("at least one attack kind is required");
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "experiment.name", "experiment.seed", "experiment.output_dir", "experiment.deploy",
      "data.dir", "data.embeddings", "data.synonyms", "data.train", "data.val", "data.test",
      "data.symmetrize",
      "corpus.clusters", "corpus.cluster_size", "corpus.dim", "corpus.train", "corpus.val",
      "corpus.test", "corpus.min_len", "corpus.max_len", "corpus.center_scale",
      "corpus.word_noise", "corpus.polarity_signal", "corpus.head_rate", "corpus.topology", "corpus.seed",
      "model.arch", "model.embed_dim", "model.hidden", "model.kernel", "model.classes",
      "model.dropout_embed", "model.max_len",
      "train.mode", "train.alpha", "train.lambda", "train.adv_steps", "train.adv_epsilon",
      "train.search_update", "train.search_norm", "train.lr", "train.weight_decay",
      "train.batch", "train.grad_clip", "train.epochs", "train.expand_hull",
      "train.coordinated_update",
      "ensemble.k", "ensemble.r", "ensemble.alpha",
      "attack.ratio", "attack.population", "attack.generations", "attack.mutation_rate",
      "attack.examples", "attack.kinds"};
  return keys;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParameterError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof()) throw ParameterError(key + ": bad number '" + v + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

SearchUpdate parse_update(const std::string& v) {
  if (v == "normalized") return SearchUpdate::Normalized;
  if (v == "raw") return SearchUpdate::Raw;
  throw ParameterError("train.search_update: expected normalized or raw");
}

SearchNorm parse_norm(const std::string& v) {
  if (v == "global") return SearchNorm::Global;
  if (v == "per_position") return SearchNorm::PerPosition;
  throw ParameterError("train.search_norm: expected global or per_position");
}

fs::path resolve_output(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("DNE_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return fs::absolute(p);
}

ExperimentSpec spec_from_tree(const pt::ptree& tree, const fs::path& base, bool require_seed) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ParameterError("config entry '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!known_keys().count(full)) throw ParameterError("unknown config key '" + full + "'");
      entries.emplace_back(full, value.data());
    }
  }
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    std::optional<std::string> found;
    for (const auto& [k, v] : entries)
      if (k == key) found = v;
    return found;
  };
  auto path_of = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : fs::absolute(base / p);
  };

  ExperimentSpec spec;
  const auto seed = get("experiment.seed");
  if (!seed && require_seed) throw ParameterError("experiment.seed is mandatory");
  if (seed) spec.seed = parse_number<std::uint64_t>("experiment.seed", *seed);
  spec.reseed();
  if (auto v = get("experiment.name")) spec.name = *v;
  if (auto v = get("experiment.deploy")) spec.deploy = parse_deployment(*v);
  spec.output_dir = resolve_output(get("experiment.output_dir").value_or("runs/" + spec.name));

  auto& c = spec.corpus;
  if (auto v = get("corpus.clusters")) c.clusters = parse_number<std::size_t>("corpus.clusters", *v);
  if (auto v = get("corpus.cluster_size")) c.cluster_size = parse_number<std::size_t>("corpus.cluster_size", *v);
  if (auto v = get("corpus.dim")) c.dim = parse_number<std::size_t>("corpus.dim", *v);
  if (auto v = get("corpus.train")) c.train = parse_number<std::size_t>("corpus.train", *v);
  if (auto v = get("corpus.val")) c.val = parse_number<std::size_t>("corpus.val", *v);
  if (auto v = get("corpus.test")) c.test = parse_number<std::size_t>("corpus.test", *v);
  if (auto v = get("corpus.min_len")) c.min_len = parse_number<std::size_t>("corpus.min_len", *v);
  if (auto v = get("corpus.max_len")) c.max_len = parse_number<std::size_t>("corpus.max_len", *v);
  if (auto v = get("corpus.center_scale")) c.center_scale = parse_number<double>("corpus.center_scale", *v);
  if (auto v = get("corpus.word_noise")) c.word_noise = parse_number<double>("corpus.word_noise", *v);
  if (auto v = get("corpus.polarity_signal")) c.polarity_signal = parse_number<double>("corpus.polarity_signal", *v);
  if (auto v = get("corpus.head_rate")) c.head_rate = parse_number<double>("corpus.head_rate", *v);
  if (auto v = get("corpus.topology")) c.topology = *v;
  if (auto v = get("corpus.seed")) c.seed = parse_number<std::uint64_t>("corpus.seed", *v);

  spec.data = corpus_files(fs::absolute(base / "data"));
  if (auto v = get("data.dir")) spec.data = corpus_files(path_of(*v));
  if (auto v = get("data.embeddings")) spec.data.embeddings = path_of(*v);
  if (auto v = get("data.synonyms")) spec.data.synonyms = path_of(*v);
  if (auto v = get("data.train")) spec.data.train = path_of(*v);
  if (auto v = get("data.val")) spec.data.val = path_of(*v);
  if (auto v = get("data.test")) spec.data.test = path_of(*v);
  if (auto v = get("data.symmetrize")) spec.symmetrize = parse_bool("data.symmetrize", *v);

  auto& m = spec.model;
  m.embed_dim = c.dim;
  m.max_len = c.max_len;
  if (auto v = get("model.arch")) m.arch = parse_architecture(*v);
  if (auto v = get("model.embed_dim")) m.embed_dim = parse_number<std::size_t>("model.embed_dim", *v);
  if (auto v = get("model.hidden")) m.hidden = parse_number<std::size_t>("model.hidden", *v);
  if (auto v = get("model.kernel")) m.kernel = parse_number<std::size_t>("model.kernel", *v);
  if (auto v = get("model.classes")) m.classes = parse_number<std::size_t>("model.classes", *v);
  if (auto v = get("model.dropout_embed")) m.dropout_embed = parse_number<double>("model.dropout_embed", *v);
  if (auto v = get("model.max_len")) m.max_len = parse_number<std::size_t>("model.max_len", *v);

  auto& t = spec.train;
  if (auto v = get("train.mode")) t.mode = parse_train_mode(*v);
  if (auto v = get("train.alpha")) t.alpha = parse_number<double>("train.alpha", *v);
  if (auto v = get("train.lambda")) t.lambda = parse_number<double>("train.lambda", *v);
  if (auto v = get("train.adv_steps")) t.adv_steps = parse_number<std::size_t>("train.adv_steps", *v);
  if (auto v = get("train.adv_epsilon")) t.adv_epsilon = parse_number<double>("train.adv_epsilon", *v);
  if (auto v = get("train.search_update")) t.search_update = parse_update(*v);
  if (auto v = get("train.search_norm")) t.search_norm = parse_norm(*v);
  if (auto v = get("train.lr")) t.lr = parse_number<double>("train.lr", *v);
  if (auto v = get("train.weight_decay")) t.weight_decay = parse_number<double>("train.weight_decay", *v);
  if (auto v = get("train.batch")) t.batch = parse_number<std::size_t>("train.batch", *v);
  if (auto v = get("train.grad_clip")) t.grad_clip = parse_number<double>("train.grad_clip", *v);
  if (auto v = get("train.epochs")) t.epochs = parse_number<std::size_t>("train.epochs", *v);
  if (auto v = get("train.expand_hull")) t.expand_hull = parse_bool("train.expand_hull", *v);
  if (auto v = get("train.coordinated_update")) t.coordinated_update = parse_bool("train.coordinated_update", *v);

  if (auto v = get("ensemble.k")) spec.ensemble.k = parse_number<std::size_t>("ensemble.k", *v);
  if (auto v = get("ensemble.r")) spec.ensemble.r = parse_number<double>("ensemble.r", *v);
  if (auto v = get("ensemble.alpha")) spec.ensemble.alpha = parse_number<double>("ensemble.alpha", *v);

  auto& a = spec.attack;
  if (auto v = get("attack.ratio")) a.max_substitution_ratio = parse_number<double>("attack.ratio", *v);
  if (auto v = get("attack.population")) a.ga_population = parse_number<std::size_t>("attack.population", *v);
  if (auto v = get("attack.generations")) a.ga_generations = parse_number<std::size_t>("attack.generations", *v);
  if (auto v = get("attack.mutation_rate")) a.ga_mutation_rate = parse_number<double>("attack.mutation_rate", *v);
  if (auto v = get("attack.examples")) spec.attack_examples = parse_number<std::size_t>("attack.examples", *v);
  if (auto v = get("attack.kinds")) {
    spec.attacks.clear();
    for (const auto& k : split_list(*v)) spec.attacks.push_back(parse_attack_kind(k));
  }

  spec.validate();
  return spec;
}

void apply_overrides(pt::ptree& tree, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || o.find('.') > eq)
      throw ParameterError("override '" + o + "' is not of the form section.key=value");
    tree.put(pt::ptree::path_type(o.substr(0, eq), '.'), o.substr(eq + 1));
  }
}

}  // namespace

ExperimentSpec load_spec(const fs::path& config, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    pt::read_ini(config.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw LoadError(e.message() + " in " + config.string(), e.line());
  }
  apply_overrides(tree, overrides);
  return spec_from_tree(tree, fs::absolute(config).parent_path(), true);
}

ExperimentSpec default_spec(const std::vector<std::string>& overrides) {
  pt::ptree tree;
  apply_overrides(tree, overrides);
  return spec_from_tree(tree, fs::current_path(), false);
}

namespace {

void save_spec(const ExperimentSpec& s, const fs::path& path) {
  pt::ptree tree;
  auto put = [&](const std::string& key, const auto& value) {
    std::ostringstream out;
    out.precision(17);
    out << value;
    tree.put(pt::ptree::path_type(key, '.'), out.str());
  };
  auto flag = [](bool b) { return b ? "true" : "false"; };
  put("experiment.name", s.name);
  put("experiment.seed", s.seed);
  put("experiment.output_dir", s.output_dir.string());
  put("experiment.deploy", to_string(s.deploy));
  put("data.embeddings", s.data.embeddings.string());
  put("data.synonyms", s.data.synonyms.string());
  put("data.train", s.data.train.string());
  put("data.val", s.data.val.string());
  put("data.test", s.data.test.string());
  put("data.symmetrize", flag(s.symmetrize));
  put("corpus.clusters", s.corpus.clusters);
  put("corpus.cluster_size", s.corpus.cluster_size);
  put("corpus.dim", s.corpus.dim);
  put("corpus.train", s.corpus.train);
  put("corpus.val", s.corpus.val);
  put("corpus.test", s.corpus.test);
  put("corpus.min_len", s.corpus.min_len);
  put("corpus.max_len", s.corpus.max_len);
  put("corpus.center_scale", s.corpus.center_scale);
  put("corpus.word_noise", s.corpus.word_noise);
  put("corpus.polarity_signal", s.corpus.polarity_signal);
  put("corpus.head_rate", s.corpus.head_rate);
  put("corpus.topology", s.corpus.topology);
  put("corpus.seed", s.corpus.seed);
  put("model.arch", to_string(s.model.arch));
  put("model.embed_dim", s.model.embed_dim);
  put("model.hidden", s.model.hidden);
  put("model.kernel", s.model.kernel);
  put("model.classes", s.model.classes);
  put("model.dropout_embed", s.model.dropout_embed);
  put("model.max_len", s.model.max_len);
  put("train.mode", to_string(s.train.mode));
  put("train.alpha", s.train.alpha);
  put("train.lambda", s.train.lambda);
  put("train.adv_steps", s.train.adv_steps);
  put("train.adv_epsilon", s.train.adv_epsilon);
  put("train.search_update", s.train.search_update == SearchUpdate::Raw ? "raw" : "normalized");
  put("train.search_norm", s.train.search_norm == SearchNorm::PerPosition ? "per_position" : "global");
  put("train.lr", s.train.lr);
  put("train.weight_decay", s.train.weight_decay);
  put("train.batch", s.train.batch);
  put("train.grad_clip", s.train.grad_clip);
  put("train.epochs", s.train.epochs);
  put("train.expand_hull", flag(s.train.expand_hull));
  put("train.coordinated_update", flag(s.train.coordinated_update));
  put("ensemble.k", s.ensemble.k);
  put("ensemble.r", s.ensemble.r);
  put("ensemble.alpha", s.ensemble.alpha);
  put("attack.ratio", s.attack.max_substitution_ratio);
  put("attack.population", s.attack.ga_population);
  put("attack.generations", s.attack.ga_generations);
  put("attack.mutation_rate", s.attack.ga_mutation_rate);
  put("attack.examples", s.attack_examples);
  std::string kinds;
  for (auto k : s.attacks) kinds += (kinds.empty() ? "" : ",") + to_string(k);
  put("attack.kinds", kinds);
  pt::write_ini(path.string(), tree);
}

}  // namespace

Workspace load_workspace(const ExperimentSpec& spec) {
  for (const auto& p : {spec.data.embeddings, spec.data.synonyms, spec.data.train, spec.data.val,
                        spec.data.test})
    if (!fs::exists(p)) throw LoadError("missing input file " + p.string());
  Workspace ws{load_lexicon(spec.data.embeddings, spec.data.synonyms, spec.model.embed_dim, spec.symmetrize),
               {}, {}, {}};
  const auto& m = spec.model;
  ws.train = ingest_tsv(spec.data.train, ws.lexicon.vocab, m.classes, m.max_len, "train");
  ws.val = ingest_tsv(spec.data.val, ws.lexicon.vocab, m.classes, m.max_len, "val");
  ws.test = ingest_tsv(spec.data.test, ws.lexicon.vocab, m.classes, m.max_len, "test");
  if (ws.train.empty() || ws.test.empty()) throw LoadError("train and test splits must be non-empty");
  return ws;
}

Classifier train_model(const ExperimentSpec& spec, const Workspace& ws, TrainResult* result) {
  fs::create_directories(spec.output_dir);
  Classifier model(spec.model, ws.lexicon.embeddings, derive_seed(spec.seed, "init"));
  std::ofstream metrics(spec.output_dir / "metrics.jsonl", std::ios::binary);
  std::ofstream log(spec.output_dir / "train.log", std::ios::binary);
  auto outcome = train(model, ws.train, ws.val.empty() ? nullptr : &ws.val, ws.lexicon.synonyms,
                       spec.train, [&](const EpochMetrics& m) {
                         metrics << to_json_line(m, false) << '\n';
                         log << to_json_line(m, true) << '\n';
                       });
  save_checkpoint(model, spec.output_dir / "model.ckpt");
  if (result) *result = std::move(outcome);
  return model;
}

ProbabilityFn deployed_predictor(const ExperimentSpec& spec, const Classifier& model,
                                 const SynonymGraph& graph, std::size_t example_index) {
  if (spec.smoothed())
    return smoothed_predictor(model, graph, spec.ensemble,
                              spec.ensemble.concentration(spec.train.dirichlet()), example_index);
  return base_predictor(model);
}

double evaluate_clean(const ExperimentSpec& spec, const Classifier& model, const Workspace& ws) {
  if (ws.test.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ws.test.size(); ++i) {
    const auto& ex = ws.test.examples[i];
    correct += argmax(deployed_predictor(spec, model, ws.lexicon.synonyms, i)(ex.ids)) == ex.label;
  }
  return static_cast<double>(correct) / static_cast<double>(ws.test.size());
}

std::vector<std::size_t> attack_indices(const ExperimentSpec& spec, std::size_t test_size) {
  std::vector<std::size_t> all(test_size);
  std::iota(all.begin(), all.end(), 0);
  const std::size_t n = std::min(spec.attack_examples, test_size);
  Rng rng(derive_seed(spec.seed, "attack-sample"));
  for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + rng.index(test_size - i)]);
  all.resize(n);
  std::sort(all.begin(), all.end());
  return all;
}

nlohmann::ordered_json CellResult::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["ok"] = ok;
  if (!ok) j["error"] = error;
  j["clean_acc"] = clean_acc;
  j["pwws_acc"] = pwws_acc ? nlohmann::ordered_json(*pwws_acc) : nlohmann::ordered_json(nullptr);
  j["ga_acc"] = ga_acc ? nlohmann::ordered_json(*ga_acc) : nlohmann::ordered_json(nullptr);
  j["best_epoch"] = best_epoch;
  j["attacked"] = attacked;
  return j;
}

CellResult attack_model(const ExperimentSpec& spec, const Classifier& model, const Workspace& ws) {
  fs::create_directories(spec.output_dir);
  CellResult cell;
  cell.name = spec.name;
  const auto indices = attack_indices(spec, ws.test.size());
  cell.attacked = indices.size();
  const auto& graph = ws.lexicon.synonyms;
  PredictorFactory factory = [&](std::size_t i) { return deployed_predictor(spec, model, graph, i); };
  for (AttackKind kind : spec.attacks) {
    const auto report = evaluate_robustness(factory, ws.test, indices, kind, graph, spec.attack);
    std::ofstream out(spec.output_dir / ("attack_" + to_string(kind) + ".json"), std::ios::binary);
    out << report.to_json(&ws.lexicon.vocab).dump(1) << '\n';
    cell.clean_acc = report.clean_acc;
    (kind == AttackKind::Pwws ? cell.pwws_acc : cell.ga_acc) = report.robust_acc;
  }
  cell.ok = true;
  return cell;
}

CellResult run_experiment(const ExperimentSpec& spec) {
  CellResult cell;
  cell.name = spec.name;
  try {
    spec.validate();
    fs::create_directories(spec.output_dir);
    save_spec(spec, spec.output_dir / "config.ini");
    const Workspace ws = load_workspace(spec);
    TrainResult trained;
    const Classifier model = train_model(spec, ws, &trained);
    cell = attack_model(spec, model, ws);
    cell.best_epoch = trained.best_epoch;
    if (trained.diverged) {
      cell.ok = false;
      cell.error = "training diverged";
    }
    std::ofstream out(spec.output_dir / "summary.json", std::ios::binary);
    out << cell.to_json().dump(1) << '\n';
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

namespace {

std::string number_label(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::vector<CellResult> run_cells(const std::vector<ExperimentSpec>& cells, const fs::path& root) {
  std::vector<CellResult> results;
  for (const auto& cell : cells) results.push_back(run_experiment(cell));
  write_summary(results, root);
  return results;
}

}  // namespace

std::vector<CellResult> run_sweep(const ExperimentSpec& spec, const std::vector<double>& alphas,
                                  const std::vector<double>& lambdas) {
  std::vector<ExperimentSpec> cells;
  for (double a : alphas) {
    for (double l : lambdas) {
      ExperimentSpec cell = spec;
      cell.train.alpha = a;
      cell.train.lambda = l;
      cell.name = "alpha=" + number_label(a) + " lambda=" + number_label(l);
      cell.output_dir = spec.output_dir / ("alpha_" + number_label(a) + "_lambda_" + number_label(l));
      cells.push_back(std::move(cell));
    }
  }
  return run_cells(cells, spec.output_dir);
}

std::vector<CellResult> run_ablation(const ExperimentSpec& spec) {
  ExperimentSpec base = spec;
  base.train.mode = TrainMode::Dne;
  std::vector<ExperimentSpec> cells(5, base);
  cells[0].name = "DNE";
  cells[1].name = "w/o EXPANSION";
  cells[1].train.expand_hull = false;
  cells[2].name = "w/o ADV-TRAIN";
  cells[2].train.adv_steps = 0;
  cells[3].name = "w/o COORD-UPD";
  cells[3].train.coordinated_update = false;
  cells[4].name = "w/o ENSEMBLE";
  cells[4].ensemble.k = 1;
  const char* dirs[] = {"full", "no_expansion", "no_adv_train", "no_coord_upd", "no_ensemble"};
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].output_dir = spec.output_dir / dirs[i];
  return run_cells(cells, spec.output_dir);
}

std::vector<CellResult> run_comparison(const ExperimentSpec& spec) {
  std::vector<ExperimentSpec> cells;
  for (TrainMode mode : {TrainMode::Orig, TrainMode::Ran, TrainMode::Dne}) {
    ExperimentSpec cell = spec;
    cell.train.mode = mode;
    cell.name = to_string(mode);
    cell.output_dir = spec.output_dir / to_string(mode);
    cells.push_back(std::move(cell));
  }
  return run_cells(cells, spec.output_dir);
}

std::string format_table(const std::vector<CellResult>& cells) {
  std::size_t width = 6;
  for (const auto& c : cells) width = std::max(width, c.name.size());
  auto pct = [](const std::optional<double>& v) {
    char buf[16];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
    return std::string(buf);
  };
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %7s %7s %7s\n", static_cast<int>(width), "config", "CLN", "PWWS", "GA");
  out << buf;
  for (const auto& c : cells) {
    if (!c.ok) {
      out << c.name << std::string(width - c.name.size() + 1, ' ') << "FAILED: " << c.error << '\n';
      continue;
    }
    std::snprintf(buf, sizeof buf, "%-*s %7s %7s %7s\n", static_cast<int>(width), c.name.c_str(),
                  pct(c.clean_acc).c_str(), pct(c.pwws_acc).c_str(), pct(c.ga_acc).c_str());
    out << buf;
  }
  return out.str();
}

void write_summary(const std::vector<CellResult>& cells, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : cells) j.push_back(c.to_json());
  std::ofstream(dir / "summary.json", std::ios::binary) << j.dump(1) << '\n';
  std::ofstream(dir / "summary.txt", std::ios::binary) << format_table(cells);
}

}  // namespace dne
