#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dne/autodiff.hpp"
#include "dne/lexicon.hpp"
#include "dne/rng.hpp"
#include "dne/virtual_sentence.hpp"

namespace dne {

enum class Architecture { Bow, Cnn };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct ClassifierConfig {
  Architecture arch = Architecture::Bow;
  std::size_t embed_dim = 0;
  std::size_t hidden = 100;
  std::size_t kernel = 3;
  std::size_t classes = 2;
  double dropout_embed = 0.3;
  std::size_t max_len = 64;

  /// Throws ParameterError on an invalid combination.
  void validate() const;
};

struct Parameter {
  std::string name;
  ad::NodeRef node;
};

/// Named trainable tensors; each name appears once.
class ParameterRegistry {
 public:
  ad::NodeRef add(std::string name, ad::Shape shape, std::vector<double> init);
  const ad::NodeRef& get(const std::string& name) const;
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  void zero_grad();
  /// Concatenated values, for bitwise comparisons.
  std::vector<double> snapshot() const;
  void restore(const std::vector<double>& values);

 private:
  std::vector<Parameter> params_;
};

/// Embedded sentence plus the eta leaves that produced it (empty for the
/// discrete path).
struct Embedded {
  ad::NodeRef sequence;
  std::vector<ad::NodeRef> etas;
};

/// BOW or CNN scorer over a trainable embedding table.
///
/// BOW: mean over positions -> affine(hidden) -> relu -> affine(classes).
/// CNN: conv(hidden filters, width kernel, same padding) -> relu -> max over
/// positions -> affine(classes).
class Classifier {
 public:
  Classifier(ClassifierConfig config, const EmbeddingMatrix& init, std::uint64_t seed);
  /// Copies are deep: the copy owns fresh parameter nodes.
  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  const ClassifierConfig& config() const { return config_; }
  ParameterRegistry& params() { return params_; }
  const ParameterRegistry& params() const { return params_; }
  const ad::NodeRef& embedding() const { return embedding_; }
  /// Copy of the current embedding table.
  EmbeddingMatrix embedding_matrix() const;

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  /// Embedding rows of ids. Dropout is applied iff training() and a
  /// generator is supplied. Throws on an empty sequence.
  ad::NodeRef embed_discrete(std::span<const TokenId> ids, Rng* dropout_rng = nullptr) const;

  /// Weighted mixes of neighborhood rows. With eta_requires_grad the eta
  /// leaves are differentiable (adversarial search).
  Embedded embed_virtual(const VirtualSentence& vs, Rng* dropout_rng = nullptr,
                         bool coordinated = true, bool eta_requires_grad = false) const;

  /// Class scores, 1 x classes.
  ad::NodeRef score(const ad::NodeRef& embedded) const;

  /// softmax(score) without building a tape. Rows are embedding vectors.
  std::vector<double> probabilities(std::span<const double> embedded_rows, std::size_t length) const;
  std::vector<double> probabilities(std::span<const TokenId> ids) const;

 private:
  ad::NodeRef maybe_dropout(const ad::NodeRef& x, Rng* rng) const;

  ClassifierConfig config_;
  ParameterRegistry params_;
  ad::NodeRef embedding_;
  bool training_ = false;
};

/// Scope in which the model's parameters record no gradient. Gradients with
/// respect to other leaves (the etas during adversarial search) still flow.
class FrozenParameters {
 public:
  explicit FrozenParameters(const Classifier& model);
  ~FrozenParameters();
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<ad::NodeRef> nodes_;
};

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Writes config and parameters in the little-endian checkpoint layout:
///   magic "DNECKPT1" (8 bytes), u32 version = 1,
///   u32 arch, u64 embed_dim, hidden, kernel, classes, max_len, f64 dropout,
///   u32 parameter count, then per parameter: u32 name length, name bytes,
///   u64 rows, u64 cols; then every parameter's rows*cols f64 values in the
///   same order.
void save_checkpoint(const Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace dne
