#include "hardpinn/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace hardpinn::nn {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw std::invalid_argument("mlp spec: need at least 2 layer widths");
  for (int w : layer_widths) {
    if (w < 1) throw std::invalid_argument("mlp spec: layer widths must be >= 1");
  }
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
    const auto in = static_cast<std::size_t>(layer_widths[l]);
    const auto out = static_cast<std::size_t>(layer_widths[l + 1]);
    n += in * out + out;
  }
  return n;
}

MlpSpec MlpSpec::make(int in, const std::vector<int>& hidden, int out) {
  MlpSpec s;
  s.layer_widths.push_back(in);
  s.layer_widths.insert(s.layer_widths.end(), hidden.begin(), hidden.end());
  s.layer_widths.push_back(out);
  s.validate();
  return s;
}

MlpParams::MlpParams(MlpSpec spec, std::vector<double> flat)
    : spec_(std::move(spec)), flat_(std::move(flat)) {
  spec_.validate();
  if (flat_.size() != spec_.parameter_count()) {
    throw std::invalid_argument("mlp params: expected " + std::to_string(spec_.parameter_count()) +
                                " values, got " + std::to_string(flat_.size()));
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    offsets_.push_back(off);
    const auto in = static_cast<std::size_t>(spec_.layer_widths[l]);
    const auto out = static_cast<std::size_t>(spec_.layer_widths[l + 1]);
    off += in * out + out;
  }
}

std::size_t MlpParams::bias_offset(std::size_t layer) const {
  return offsets_[layer] + static_cast<std::size_t>(spec_.layer_widths[layer]) *
                               static_cast<std::size_t>(spec_.layer_widths[layer + 1]);
}

Eigen::Map<const RowMatrix> MlpParams::weights(std::size_t layer) const {
  return {flat_.data() + offsets_[layer], spec_.layer_widths[layer + 1], spec_.layer_widths[layer]};
}
Eigen::Map<RowMatrix> MlpParams::weights(std::size_t layer) {
  return {flat_.data() + offsets_[layer], spec_.layer_widths[layer + 1], spec_.layer_widths[layer]};
}
Eigen::Map<const Eigen::VectorXd> MlpParams::bias(std::size_t layer) const {
  return {flat_.data() + bias_offset(layer), spec_.layer_widths[layer + 1]};
}
Eigen::Map<Eigen::VectorXd> MlpParams::bias(std::size_t layer) {
  return {flat_.data() + bias_offset(layer), spec_.layer_widths[layer + 1]};
}

MlpParams init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<double> flat;
  flat.reserve(spec.parameter_count());
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (int i = 0; i < in * out; ++i) flat.push_back(dist(rng));
    for (int i = 0; i < out; ++i) flat.push_back(0.0);
  }
  return MlpParams(spec, std::move(flat));
}

BatchJet BatchJet::zeros(int width, int points, int directions, int order) {
  BatchJet j;
  j.points = points;
  j.directions = directions;
  j.order = order;
  j.data = Eigen::MatrixXd::Zero(width, static_cast<Eigen::Index>(points) * j.blocks());
  return j;
}

namespace {

// Views of one block of a jet matrix.
auto block(Eigen::MatrixXd& m, int b, int n) { return m.middleCols(static_cast<Eigen::Index>(b) * n, n); }
auto block(const Eigen::MatrixXd& m, int b, int n) {
  return m.middleCols(static_cast<Eigen::Index>(b) * n, n);
}

}  // namespace

BatchJet forward_batch(const MlpParams& params, const Eigen::MatrixXd& inputs, int order,
                       MlpTrace* trace) {
  const auto& spec = params.spec();
  if (inputs.rows() != spec.input_width()) {
    throw std::invalid_argument("mlp forward_batch: input row count does not match input width");
  }
  if (order != 1 && order != 2) throw std::invalid_argument("mlp forward_batch: order must be 1 or 2");
  const int n = static_cast<int>(inputs.cols());
  const int dirs = spec.input_width();

  BatchJet in = BatchJet::zeros(dirs, n, dirs, order);
  in.value() = inputs;
  for (int k = 0; k < dirs; ++k) in.first(k).row(k).setOnes();

  Eigen::MatrixXd a = std::move(in.data);
  if (trace != nullptr) {
    trace->layer_inputs.clear();
    trace->pre_act.clear();
    trace->act.clear();
  }
  const std::size_t layers = spec.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const RowMatrix w = params.weights(l);
    Eigen::MatrixXd z = w * a;
    block(z, 0, n).colwise() += params.bias(l);
    const bool hidden = l + 1 < layers;
    if (trace != nullptr) trace->layer_inputs.push_back(a);
    if (!hidden) {
      a = std::move(z);
      break;
    }
    const Eigen::ArrayXXd y = block(z, 0, n).array().tanh();
    const Eigen::ArrayXXd s1 = 1.0 - y.square();
    Eigen::MatrixXd next(z.rows(), z.cols());
    block(next, 0, n) = y.matrix();
    for (int k = 0; k < dirs; ++k) {
      block(next, 1 + k, n) = (s1 * block(z, 1 + k, n).array()).matrix();
    }
    if (order == 2) {
      const Eigen::ArrayXXd s2 = -2.0 * y * s1;
      for (int k = 0; k < dirs; ++k) {
        const auto zf = block(z, 1 + k, n).array();
        block(next, 1 + dirs + k, n) =
            (s2 * zf.square() + s1 * block(z, 1 + dirs + k, n).array()).matrix();
      }
    }
    if (trace != nullptr) {
      trace->pre_act.push_back(std::move(z));
      trace->act.push_back(y);
    }
    a = std::move(next);
  }

  BatchJet out;
  out.points = n;
  out.directions = dirs;
  out.order = order;
  out.data = std::move(a);
  return out;
}

void backward_batch(const MlpParams& params, const MlpTrace& trace, const BatchJet& adjoint,
                    std::span<double> grad) {
  const auto& spec = params.spec();
  if (grad.size() != params.size()) throw std::invalid_argument("mlp backward: gradient size mismatch");
  const std::size_t layers = spec.layer_count();
  if (trace.layer_inputs.size() != layers) throw std::invalid_argument("mlp backward: incomplete trace");
  const int n = adjoint.points;
  const int dirs = adjoint.directions;
  const int order = adjoint.order;

  Eigen::MatrixXd abar = adjoint.data;
  for (std::size_t li = layers; li-- > 0;) {
    const bool hidden = li + 1 < layers;
    Eigen::MatrixXd zbar;
    if (!hidden) {
      zbar = std::move(abar);
    } else {
      const auto& z = trace.pre_act[li];
      const auto& y = trace.act[li];
      const Eigen::ArrayXXd s1 = 1.0 - y.square();
      const Eigen::ArrayXXd s2 = -2.0 * y * s1;
      zbar.resize(abar.rows(), abar.cols());
      Eigen::ArrayXXd zv = block(abar, 0, n).array() * s1;
      for (int k = 0; k < dirs; ++k) {
        const auto zf = block(z, 1 + k, n).array();
        const auto af = block(abar, 1 + k, n).array();
        zv += af * s2 * zf;
        Eigen::ArrayXXd zfbar = af * s1;
        if (order == 2) {
          const Eigen::ArrayXXd s3 = s1 * (6.0 * y.square() - 2.0);
          const auto zs = block(z, 1 + dirs + k, n).array();
          const auto as = block(abar, 1 + dirs + k, n).array();
          zv += as * (s3 * zf.square() + s2 * zs);
          zfbar += as * 2.0 * s2 * zf;
          block(zbar, 1 + dirs + k, n) = (as * s1).matrix();
        }
        block(zbar, 1 + k, n) = zfbar.matrix();
      }
      block(zbar, 0, n) = zv.matrix();
    }
    const auto& a_in = trace.layer_inputs[li];
    const int out = spec.layer_widths[li + 1];
    const int in = spec.layer_widths[li];
    const RowMatrix gw = zbar * a_in.transpose();
    const Eigen::VectorXd gb = block(zbar, 0, n).rowwise().sum();
    Eigen::Map<RowMatrix>(grad.data() + params.weight_offset(li), out, in) += gw;
    Eigen::Map<Eigen::VectorXd>(grad.data() + params.bias_offset(li), out) += gb;
    if (li > 0) {
      const RowMatrix w = params.weights(li);
      abar.noalias() = w.transpose() * zbar;
    }
  }
}

nlohmann::json to_json(const MlpParams& params, std::uint64_t seed) {
  nlohmann::json j;
  j["layer_widths"] = params.spec().layer_widths;
  j["activation"] = "tanh";
  j["seed"] = seed;
  j["params"] = std::vector<double>(params.flat().begin(), params.flat().end());
  return j;
}

MlpParams params_from_json(const nlohmann::json& j) {
  MlpSpec spec;
  spec.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  if (j.at("activation").get<std::string>() != "tanh") {
    throw std::invalid_argument("checkpoint: unsupported activation");
  }
  return MlpParams(spec, j.at("params").get<std::vector<double>>());
}

void save_checkpoint(const std::filesystem::path& path, const MlpParams& params, std::uint64_t seed) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << to_json(params, seed).dump(1) << '\n';
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  return params_from_json(nlohmann::json::parse(is));
}

}  // namespace hardpinn::nn
