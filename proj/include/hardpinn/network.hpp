#pragma once

#include "hardpinn/autodiff.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hardpinn::nn {

enum class Activation { tanh };

/// Layer widths of a fully-connected network, input first.
struct MlpSpec {
  std::vector<int> layer_widths;
  Activation activation = Activation::tanh;

  void validate() const;
  int input_width() const { return layer_widths.front(); }
  int output_width() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }
  std::size_t parameter_count() const;

  /// [in] + hidden + [out]
  static MlpSpec make(int in, const std::vector<int>& hidden, int out);
  bool operator==(const MlpSpec&) const = default;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter vector. Layer l stores its weights (out x in, row-major)
/// followed by its biases.
class MlpParams {
 public:
  MlpParams() = default;
  MlpParams(MlpSpec spec, std::vector<double> flat);

  const MlpSpec& spec() const { return spec_; }
  std::span<const double> flat() const { return flat_; }
  std::span<double> flat() { return flat_; }
  std::size_t size() const { return flat_.size(); }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const;

  Eigen::Map<const RowMatrix> weights(std::size_t layer) const;
  Eigen::Map<RowMatrix> weights(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);

 private:
  MlpSpec spec_;
  std::vector<double> flat_;
  std::vector<std::size_t> offsets_;
};

/// Glorot-uniform weights, zero biases.
MlpParams init(const MlpSpec& spec, std::uint64_t seed);

/// Scalar forward pass. `P` is the parameter scalar (double or ad::Var),
/// `T` the activation scalar (double, DualD, DualV, nested duals).
template <class P, class T>
std::vector<T> forward(const MlpSpec& spec, std::span<const P> flat, std::span<const T> inputs) {
  using std::tanh;
  if (static_cast<int>(inputs.size()) != spec.input_width()) {
    throw std::invalid_argument("mlp forward: expected " + std::to_string(spec.input_width()) +
                                " inputs, got " + std::to_string(inputs.size()));
  }
  if (flat.size() != spec.parameter_count()) {
    throw std::invalid_argument("mlp forward: parameter vector has wrong length");
  }
  std::vector<T> a(inputs.begin(), inputs.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto in = static_cast<std::size_t>(spec.layer_widths[l]);
    const auto out = static_cast<std::size_t>(spec.layer_widths[l + 1]);
    const std::size_t boff = off + in * out;
    std::vector<T> z;
    z.reserve(out);
    for (std::size_t i = 0; i < out; ++i) {
      T acc = flat[off + i * in] * a[0];
      for (std::size_t j = 1; j < in; ++j) acc = acc + flat[off + i * in + j] * a[j];
      acc = acc + flat[boff + i];
      const bool hidden = l + 1 < spec.layer_count();
      z.push_back(hidden ? tanh(acc) : acc);
    }
    a = std::move(z);
    off = boff + out;
  }
  return a;
}

template <class T>
std::vector<T> forward(const MlpParams& params, std::span<const T> inputs) {
  return forward<double, T>(params.spec(), params.flat(), inputs);
}

/// Outputs of a batched pass: value, first derivatives along each input
/// direction, and optionally the diagonal second derivatives. Stored as one
/// matrix of row count `width` with column blocks
/// [value | d_0 .. d_{K-1} | dd_0 .. dd_{K-1}], each block `points` wide.
struct BatchJet {
  Eigen::MatrixXd data;
  int points = 0;
  int directions = 0;
  int order = 1;

  int blocks() const { return 1 + directions * order; }
  auto value() { return data.middleCols(0, points); }
  auto value() const { return data.middleCols(0, points); }
  auto first(int k) { return data.middleCols((1 + k) * points, points); }
  auto first(int k) const { return data.middleCols((1 + k) * points, points); }
  auto second(int k) { return data.middleCols((1 + directions + k) * points, points); }
  auto second(int k) const { return data.middleCols((1 + directions + k) * points, points); }

  static BatchJet zeros(int width, int points, int directions, int order);
};

/// Cached intermediates for the reverse pass.
struct MlpTrace {
  std::vector<Eigen::MatrixXd> layer_inputs;  // jet entering each layer
  std::vector<Eigen::MatrixXd> pre_act;       // W * input jet (no bias), hidden layers
  std::vector<Eigen::ArrayXXd> act;           // tanh(z) value block, hidden layers
};

/// Evaluates the network at the columns of `inputs` (input_width x N) with
/// unit tangent seeds along every input coordinate. order 1 propagates first
/// derivatives, order 2 additionally the diagonal second derivatives.
BatchJet forward_batch(const MlpParams& params, const Eigen::MatrixXd& inputs, int order,
                       MlpTrace* trace = nullptr);

/// Accumulates into `grad` (laid out like MlpParams::flat) the gradient of a
/// scalar whose adjoints with respect to the jet entries are `adjoint`.
void backward_batch(const MlpParams& params, const MlpTrace& trace, const BatchJet& adjoint,
                    std::span<double> grad);

// Checkpoints: JSON with spec, seed and the flat parameters at 17
// significant digits (exact round trip).
nlohmann::json to_json(const MlpParams& params, std::uint64_t seed);
MlpParams params_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const MlpParams& params,
                     std::uint64_t seed);
MlpParams load_checkpoint(const std::filesystem::path& path);

}  // namespace hardpinn::nn
