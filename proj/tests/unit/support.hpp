#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "dne/autodiff.hpp"
#include "dne/lexicon.hpp"
#include "dne/models.hpp"
#include "dne/rng.hpp"

namespace testing {

/// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dne_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Embedding table with PAD zero and every other row drawn N(0, 1).
inline dne::EmbeddingMatrix random_table(std::size_t rows, std::size_t dim, dne::Rng& rng) {
  dne::EmbeddingMatrix m(rows, dim);
  for (std::size_t r = 1; r < rows; ++r)
    for (double& x : m.row(static_cast<dne::TokenId>(r))) x = rng.normal();
  return m;
}

/// |a - b| / max(1, |a|).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

/// Worst relative error between the analytic gradient of `leaf` and central
/// differences of `loss` with step h.
inline double gradient_check(const dne::ad::NodeRef& leaf, const std::function<double()>& loss,
                             const std::vector<double>& analytic, double h = 1e-5) {
  double worst = 0.0;
  auto& v = leaf->value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = loss();
    v[i] = keep - h;
    const double down = loss();
    v[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace testing
