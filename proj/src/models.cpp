#include "dne/models.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dne/error.hpp"
#include "dne/simplex.hpp"

namespace dne {

std::string to_string(Architecture arch) { return arch == Architecture::Bow ? "bow" : "cnn"; }

Architecture parse_architecture(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "bow") return Architecture::Bow;
  if (lower == "cnn") return Architecture::Cnn;
  throw ParameterError("unknown architecture '" + name + "'");
}

void ClassifierConfig::validate() const {
  if (embed_dim == 0) throw ParameterError("embed_dim must be positive");
  if (hidden == 0) throw ParameterError("hidden must be positive");
  if (classes < 2) throw ParameterError("classes must be at least 2");
  if (arch == Architecture::Cnn && (kernel == 0 || kernel % 2 == 0))
    throw ParameterError("CNN kernel width must be odd");
  if (!(dropout_embed >= 0.0 && dropout_embed < 1.0)) throw ParameterError("dropout must lie in [0, 1)");
  if (max_len == 0) throw ParameterError("max_len must be positive");
}

ad::NodeRef ParameterRegistry::add(std::string name, ad::Shape shape, std::vector<double> init) {
  for (const auto& p : params_)
    if (p.name == name) throw ParameterError("duplicate parameter '" + name + "'");
  auto node = ad::variable(shape, std::move(init));
  params_.push_back({std::move(name), node});
  return node;
}

const ad::NodeRef& ParameterRegistry::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.node;
  throw ParameterError("no parameter named '" + name + "'");
}

void ParameterRegistry::zero_grad() {
  for (auto& p : params_) p.node->zero_grad();
}

std::vector<double> ParameterRegistry::snapshot() const {
  std::vector<double> out;
  for (const auto& p : params_) out.insert(out.end(), p.node->value().begin(), p.node->value().end());
  return out;
}

void ParameterRegistry::restore(const std::vector<double>& values) {
  std::size_t at = 0;
  for (auto& p : params_) {
    auto& v = p.node->value();
    if (at + v.size() > values.size()) throw ShapeError("parameter snapshot too short");
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(at), v.size(), v.begin());
    at += v.size();
  }
  if (at != values.size()) throw ShapeError("parameter snapshot too long");
}

namespace {

std::vector<double> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

}  // namespace

Classifier::Classifier(ClassifierConfig config, const EmbeddingMatrix& init, std::uint64_t seed)
    : config_(config) {
  if (config_.embed_dim == 0) config_.embed_dim = init.dim();
  config_.validate();
  if (init.dim() != config_.embed_dim)
    throw ParameterError("embedding table has dimension " + std::to_string(init.dim()) +
                         ", config expects " + std::to_string(config_.embed_dim));
  Rng rng(derive_seed(seed, "init"));
  const std::size_t d = config_.embed_dim, h = config_.hidden, c = config_.classes;
  embedding_ = params_.add("embedding", {init.rows(), d}, init.data());
  if (config_.arch == Architecture::Bow) {
    params_.add("hidden.weight", {d, h}, glorot(d, h, rng));
    params_.add("hidden.bias", {1, h}, std::vector<double>(h, 0.0));
  } else {
    const std::size_t k = config_.kernel;
    params_.add("conv.weight", {k * d, h}, glorot(k * d, h, rng));
    params_.add("conv.bias", {1, h}, std::vector<double>(h, 0.0));
  }
  params_.add("output.weight", {h, c}, glorot(h, c, rng));
  params_.add("output.bias", {1, c}, std::vector<double>(c, 0.0));
}

Classifier::Classifier(const Classifier& other) : config_(other.config_), training_(other.training_) {
  for (const auto& p : other.params_.all()) params_.add(p.name, p.node->shape(), p.node->value());
  embedding_ = params_.get("embedding");
}

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) *this = Classifier(other);
  return *this;
}

EmbeddingMatrix Classifier::embedding_matrix() const {
  EmbeddingMatrix out(embedding_->shape().rows, embedding_->shape().cols);
  out.data() = embedding_->value();
  return out;
}

ad::NodeRef Classifier::maybe_dropout(const ad::NodeRef& x, Rng* rng) const {
  if (!training_ || rng == nullptr || config_.dropout_embed == 0.0) return x;
  const double keep = 1.0 - config_.dropout_embed;
  std::vector<double> mask(x->value().size());
  for (double& m : mask) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return ad::apply_mask(x, std::move(mask));
}

ad::NodeRef Classifier::embed_discrete(std::span<const TokenId> ids, Rng* dropout_rng) const {
  if (ids.empty()) throw ParameterError("cannot embed an empty sequence");
  return maybe_dropout(ad::gather(embedding_, ids), dropout_rng);
}

Embedded Classifier::embed_virtual(const VirtualSentence& vs, Rng* dropout_rng, bool coordinated,
                                   bool eta_requires_grad) const {
  vs.validate();
  if (vs.size() == 0) throw ParameterError("cannot embed an empty sequence");
  Embedded out;
  out.etas.reserve(vs.size());
  for (const auto& p : vs.points) {
    const ad::Shape shape{1, p.eta.size()};
    out.etas.push_back(eta_requires_grad ? ad::variable(shape, p.eta) : ad::constant(shape, p.eta));
  }
  const auto verts = vs.vertex_lists();
  out.sequence = maybe_dropout(ad::mix(embedding_, verts, out.etas, coordinated), dropout_rng);
  return out;
}

ad::NodeRef Classifier::score(const ad::NodeRef& embedded) const {
  if (embedded->shape().rows == 0) throw ShapeError("score: empty sequence");
  if (config_.arch == Architecture::Bow) {
    auto pooled = ad::mean_rows(embedded);
    auto hidden = ad::relu(ad::add(ad::matmul(pooled, params_.get("hidden.weight")),
                                   params_.get("hidden.bias")));
    return ad::add(ad::matmul(hidden, params_.get("output.weight")), params_.get("output.bias"));
  }
  auto conv = ad::relu(ad::conv1d(embedded, params_.get("conv.weight"), params_.get("conv.bias"),
                                  config_.kernel));
  auto pooled = ad::max_rows(conv);
  return ad::add(ad::matmul(pooled, params_.get("output.weight")), params_.get("output.bias"));
}

std::vector<double> Classifier::probabilities(std::span<const double> rows, std::size_t length) const {
  const std::size_t d = config_.embed_dim, h = config_.hidden, c = config_.classes;
  if (length == 0 || rows.size() != length * d) throw ShapeError("probabilities: bad embedded input");
  std::vector<double> feat(h, 0.0);
  if (config_.arch == Architecture::Bow) {
    std::vector<double> pooled(d, 0.0);
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t k = 0; k < d; ++k) pooled[k] += rows[t * d + k];
    const double inv = 1.0 / static_cast<double>(length);
    for (double& v : pooled) v *= inv;
    const auto& w = params_.get("hidden.weight")->value();
    const auto& b = params_.get("hidden.bias")->value();
    std::copy(b.begin(), b.end(), feat.begin());
    for (std::size_t k = 0; k < d; ++k) {
      const double x = pooled[k];
      if (x == 0.0) continue;
      const double* wr = w.data() + k * h;
      for (std::size_t j = 0; j < h; ++j) feat[j] += x * wr[j];
    }
    for (double& v : feat) v = v > 0.0 ? v : 0.0;
  } else {
    const std::size_t width = config_.kernel;
    const auto half = static_cast<std::ptrdiff_t>(width / 2);
    const auto& w = params_.get("conv.weight")->value();
    const auto& b = params_.get("conv.bias")->value();
    std::vector<double> act(h);
    for (std::size_t t = 0; t < length; ++t) {
      std::copy(b.begin(), b.end(), act.begin());
      for (std::size_t k = 0; k < width; ++k) {
        const auto src = static_cast<std::ptrdiff_t>(t + k) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
        for (std::size_t ch = 0; ch < d; ++ch) {
          const double x = rows[static_cast<std::size_t>(src) * d + ch];
          if (x == 0.0) continue;
          const double* wr = w.data() + (k * d + ch) * h;
          for (std::size_t j = 0; j < h; ++j) act[j] += x * wr[j];
        }
      }
      for (std::size_t j = 0; j < h; ++j) {
        const double a = act[j] > 0.0 ? act[j] : 0.0;
        if (t == 0 || a > feat[j]) feat[j] = a;
      }
    }
  }
  const auto& w = params_.get("output.weight")->value();
  const auto& b = params_.get("output.bias")->value();
  std::vector<double> scores(b);
  for (std::size_t j = 0; j < h; ++j) {
    const double x = feat[j];
    if (x == 0.0) continue;
    for (std::size_t k = 0; k < c; ++k) scores[k] += x * w[j * c + k];
  }
  return softmax(scores);
}

std::vector<double> Classifier::probabilities(std::span<const TokenId> ids) const {
  if (ids.empty()) throw ParameterError("cannot score an empty sequence");
  const std::size_t d = config_.embed_dim;
  const auto& table = embedding_->value();
  std::vector<double> rows(ids.size() * d, 0.0);
  for (std::size_t t = 0; t < ids.size(); ++t)
    if (ids[t] != kPadId)
      std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[t]) * d), d,
                  rows.begin() + static_cast<std::ptrdiff_t>(t * d));
  return probabilities(rows, ids.size());
}

FrozenParameters::FrozenParameters(const Classifier& model) {
  for (const auto& p : model.params().all()) {
    nodes_.push_back(p.node);
    p.node->set_requires_grad(false);
  }
}

FrozenParameters::~FrozenParameters() {
  for (auto& n : nodes_) n->set_requires_grad(true);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 8> kMagic{'D', 'N', 'E', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  if constexpr (std::is_same_v<T, double>) {
    const auto bits = std::bit_cast<std::uint64_t>(value);
    for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  } else {
    const auto bits = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw LoadError("truncated checkpoint");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>)
    return std::bit_cast<double>(bits);
  else
    return static_cast<T>(bits);
}

}  // namespace

void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto& cfg = model.config();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, cfg.arch == Architecture::Bow ? 0 : 1);
  put<std::uint64_t>(out, cfg.embed_dim);
  put<std::uint64_t>(out, cfg.hidden);
  put<std::uint64_t>(out, cfg.kernel);
  put<std::uint64_t>(out, cfg.classes);
  put<std::uint64_t>(out, cfg.max_len);
  put<double>(out, cfg.dropout_embed);
  const auto& params = model.params().all();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint64_t>(out, p.node->shape().rows);
    put<std::uint64_t>(out, p.node->shape().cols);
  }
  for (const auto& p : params)
    for (double v : p.node->value()) put<double>(out, v);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw LoadError("not a checkpoint file: " + path.string());
  if (const auto version = get<std::uint32_t>(in); version != kVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  ClassifierConfig cfg;
  cfg.arch = get<std::uint32_t>(in) == 0 ? Architecture::Bow : Architecture::Cnn;
  cfg.embed_dim = get<std::uint64_t>(in);
  cfg.hidden = get<std::uint64_t>(in);
  cfg.kernel = get<std::uint64_t>(in);
  cfg.classes = get<std::uint64_t>(in);
  cfg.max_len = get<std::uint64_t>(in);
  cfg.dropout_embed = get<double>(in);
  const auto count = get<std::uint32_t>(in);

  struct Entry {
    std::string name;
    ad::Shape shape;
  };
  std::vector<Entry> table(count);
  for (auto& e : table) {
    const auto len = get<std::uint32_t>(in);
    e.name.resize(len);
    in.read(e.name.data(), len);
    e.shape.rows = get<std::uint64_t>(in);
    e.shape.cols = get<std::uint64_t>(in);
  }
  if (table.empty() || table.front().name != "embedding") throw LoadError("checkpoint lacks an embedding table");

  EmbeddingMatrix placeholder(table.front().shape.rows, table.front().shape.cols);
  Classifier model(cfg, placeholder, 0);
  for (const auto& e : table) {
    const auto& node = model.params().get(e.name);
    if (node->shape() != e.shape) throw LoadError("shape mismatch for parameter '" + e.name + "'");
    for (double& v : node->value()) v = get<double>(in);
  }
  if (table.size() != model.params().all().size()) throw LoadError("parameter count mismatch");
  return model;
}

}  // namespace dne
