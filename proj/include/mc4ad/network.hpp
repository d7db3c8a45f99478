#pragma once

// Corrective force prediction network: a single-resolution sparse-voxel
// encoder / bottleneck / decoder with gated complementary skip fusion and a
// per-point MLP head emitting external and internal force vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "mc4ad/geometry.hpp"
#include "mc4ad/sparse_conv.hpp"

namespace mc4ad {

enum class Variant { full, pruned };

inline std::string to_string(Variant v) { return v == Variant::full ? "full" : "pruned"; }

inline Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "pruned") return Variant::pruned;
  throw ConfigError("network.variant must be \"full\" or \"pruned\", got \"" + s + "\"");
}

/// Per-voxel input channels fed to the first convolution.
enum class InputFeatures {
  occupancy,         // constant 1
  occupancy_offset,  // 1 plus the mean in-voxel offset of the member points, in voxel units
};

inline std::string to_string(InputFeatures f) {
  return f == InputFeatures::occupancy ? "occupancy" : "occupancy_offset";
}

enum class HeadInit {
  tied,         // internal half of the output layer starts as a copy of the external half
  independent,  // both halves drawn independently
};

inline std::string to_string(HeadInit h) { return h == HeadInit::tied ? "tied" : "independent"; }

inline HeadInit head_init_from_string(const std::string& s) {
  if (s == "tied") return HeadInit::tied;
  if (s == "independent") return HeadInit::independent;
  throw ConfigError("network.head_init must be \"tied\" or \"independent\", got \"" + s + "\"");
}

inline InputFeatures input_features_from_string(const std::string& s) {
  if (s == "occupancy") return InputFeatures::occupancy;
  if (s == "occupancy_offset") return InputFeatures::occupancy_offset;
  throw ConfigError("network.input_features must be \"occupancy\" or \"occupancy_offset\", got \"" + s + "\"");
}

struct NetworkConfig {
  Variant variant = Variant::full;
  int base_channels = 32;
  std::vector<int> decoder_channels{32, 32, 32, 16};
  std::vector<int> head_hidden{32, 16};
  double voxel_size = 0.03;
  int kernel_size = 3;
  InputFeatures input_features = InputFeatures::occupancy;
  HeadInit head_init = HeadInit::tied;

  int encoder_layers() const { return variant == Variant::full ? 2 : 1; }
  int bottleneck_layers() const { return variant == Variant::full ? 4 : 2; }
  int decoder_blocks() const { return variant == Variant::full ? 4 : 2; }
  int input_channels() const { return input_features == InputFeatures::occupancy ? 1 : 4; }

  /// Output widths of the decoder blocks in use; the pruned variant keeps the
  /// trailing entries of `decoder_channels`.
  std::vector<int> block_channels() const {
    const auto blocks = static_cast<std::size_t>(decoder_blocks());
    return {decoder_channels.end() - static_cast<std::ptrdiff_t>(blocks), decoder_channels.end()};
  }

  void validate() const {
    if (base_channels < 1) throw ConfigError("network.base_channels must be >= 1");
    if (decoder_channels.size() < static_cast<std::size_t>(decoder_blocks())) {
      throw ConfigError("network.decoder_channels needs at least " + std::to_string(decoder_blocks()) +
                        " entries for the " + to_string(variant) + " variant");
    }
    for (int c : decoder_channels) {
      if (c < 1) throw ConfigError("network.decoder_channels entries must be >= 1");
    }
    for (int c : head_hidden) {
      if (c < 1) throw ConfigError("network.head_hidden entries must be >= 1");
    }
    if (!(voxel_size > 0.0)) throw ConfigError("network.voxel_size must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("network.kernel_size must be odd and positive");
  }

  bool operator==(const NetworkConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"base_channels", c.base_channels},
                     {"decoder_channels", c.decoder_channels},
                     {"head_hidden", c.head_hidden},
                     {"voxel_size", c.voxel_size},
                     {"kernel_size", c.kernel_size},
                     {"input_features", to_string(c.input_features)},
                     {"head_init", to_string(c.head_init)}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") c.variant = variant_from_string(value.get<std::string>());
    else if (key == "base_channels") c.base_channels = value.get<int>();
    else if (key == "decoder_channels") c.decoder_channels = value.get<std::vector<int>>();
    else if (key == "head_hidden") c.head_hidden = value.get<std::vector<int>>();
    else if (key == "voxel_size") c.voxel_size = value.get<double>();
    else if (key == "kernel_size") c.kernel_size = value.get<int>();
    else if (key == "input_features") c.input_features = input_features_from_string(value.get<std::string>());
    else if (key == "head_init") c.head_init = head_init_from_string(value.get<std::string>());
    else throw ConfigError("unknown key network." + key);
  }
}

template <class T>
struct ForcePrediction {
  Matrix<T> external;   // n x 3
  Matrix<T> internal;   // n x 3
  Matrix<T> resultant;  // external + internal

  std::size_t size() const { return static_cast<std::size_t>(resultant.rows()); }
};

template <class T>
ForcePrediction<T> make_prediction(Matrix<T> external, Matrix<T> internal) {
  ForcePrediction<T> p;
  p.resultant = external + internal;
  p.external = std::move(external);
  p.internal = std::move(internal);
  return p;
}

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

/// Voxelization products reused by every convolution of one forward pass.
template <class T>
struct PreparedCloud {
  VoxelGrid grid;
  Rulebook rulebook;
  Matrix<T> input;  // n_v x input_channels
};

template <class T>
struct ForwardOptions {
  std::optional<T> gate_override;  // replaces every gate value when set
};

/// Activations recorded by a forward pass for the backward pass.
template <class T>
struct Tape {
  const PreparedCloud<T>* prepared = nullptr;
  std::vector<Matrix<T>> trunk;  // post-activation output of each encoder/bottleneck conv
  struct Block {
    Matrix<T> proj_decoder;
    Matrix<T> proj_skip;
    Matrix<T> alpha;  // n_v x 1
    Matrix<T> fused;
    Matrix<T> out;
  };
  std::vector<Block> blocks;
  std::vector<Matrix<T>> head;  // post-activation hidden outputs
  bool gate_overridden = false;
};

template <class T>
class Network {
 public:
  struct Conv {
    int weight = -1;
    int bias = -1;
  };
  struct Block {
    Conv proj_decoder;
    Conv proj_skip;
    Conv gate;
    Conv conv;
    int skip_feature = 0;  // index into the encoder/bottleneck feature list
  };

  Network() = default;

  /// Deterministic construction with fan-in scaled uniform initialization.
  static Network build(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Network net;
    net.config_ = config;
    std::mt19937_64 rng(seed);
    const int taps = config.kernel_size * config.kernel_size * config.kernel_size;
    const int c1 = config.base_channels;

    auto conv = [&](const std::string& name, int c_in, int c_out, bool gate) {
      const double fan_in = static_cast<double>(taps) * c_in;
      const double w_bound = gate ? std::sqrt(3.0 / fan_in) : std::sqrt(6.0 / fan_in);
      Conv c;
      c.weight = net.add_param(name + ".weight", taps * c_in, c_out, w_bound, rng);
      c.bias = net.add_param(name + ".bias", 1, c_out, 1.0 / std::sqrt(fan_in), rng);
      return c;
    };

    int channels = config.input_channels();
    for (int l = 0; l < config.encoder_layers(); ++l) {
      net.trunk_.push_back(conv("encoder." + std::to_string(l), channels, c1, false));
      channels = c1;
    }
    for (int l = 0; l < config.bottleneck_layers(); ++l) {
      net.trunk_.push_back(conv("bottleneck." + std::to_string(l), c1, c1, false));
    }
    const int features = 1 + config.bottleneck_layers();
    const auto widths = config.block_channels();
    int dec = c1;
    for (std::size_t j = 0; j < widths.size(); ++j) {
      const std::string prefix = "decoder." + std::to_string(j);
      const int w = widths[j];
      Block b;
      b.proj_decoder = conv(prefix + ".proj_decoder", dec, w, false);
      b.proj_skip = conv(prefix + ".proj_skip", c1, w, false);
      b.gate = conv(prefix + ".gate", w, 1, true);
      b.conv = conv(prefix + ".conv", w, w, false);
      b.skip_feature = features - 2 - static_cast<int>(j);
      net.blocks_.push_back(b);
      dec = w;
    }
    std::vector<int> head_widths = config.head_hidden;
    head_widths.push_back(6);
    for (std::size_t l = 0; l < head_widths.size(); ++l) {
      const std::string prefix = "head." + std::to_string(l);
      const double bound = 1.0 / std::sqrt(static_cast<double>(dec));
      Conv lin;
      lin.weight = net.add_param(prefix + ".weight", dec, head_widths[l], bound, rng);
      lin.bias = net.add_param(prefix + ".bias", 1, head_widths[l], bound, rng);
      net.head_.push_back(lin);
      dec = head_widths[l];
    }
    if (config.head_init == HeadInit::tied) {
      auto& w = net.params_[static_cast<std::size_t>(net.head_.back().weight)].value;
      auto& b = net.params_[static_cast<std::size_t>(net.head_.back().bias)].value;
      w.rightCols(3) = w.leftCols(3);
      b.rightCols(3) = b.leftCols(3);
    }
    return net;
  }

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.size();
    return total;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  /// Copies parameters into a network of another scalar type.
  template <class U>
  Network<U> cast() const {
    Network<U> other;
    other.config_ = config_;
    other.trunk_.clear();
    for (const auto& c : trunk_) other.trunk_.push_back({c.weight, c.bias});
    for (const auto& b : blocks_) {
      typename Network<U>::Block ob;
      ob.proj_decoder = {b.proj_decoder.weight, b.proj_decoder.bias};
      ob.proj_skip = {b.proj_skip.weight, b.proj_skip.bias};
      ob.gate = {b.gate.weight, b.gate.bias};
      ob.conv = {b.conv.weight, b.conv.bias};
      ob.skip_feature = b.skip_feature;
      other.blocks_.push_back(ob);
    }
    for (const auto& c : head_) other.head_.push_back({c.weight, c.bias});
    for (const auto& p : params_) {
      Parameter<U> q;
      q.name = p.name;
      q.value = p.value.template cast<U>();
      q.grad = Matrix<U>::Zero(p.value.rows(), p.value.cols());
      other.params_.push_back(std::move(q));
    }
    return other;
  }

  PreparedCloud<T> prepare(const PointCloud& cloud) const {
    if (cloud.size() == 0) throw DataError("forward: empty cloud");
    check_finite(cloud.points);
    PreparedCloud<T> prep;
    prep.grid = voxelize(cloud, config_.voxel_size);
    prep.rulebook = build_rulebook(prep.grid, config_.kernel_size);
    const auto nv = static_cast<Eigen::Index>(prep.grid.num_voxels());
    prep.input = Matrix<T>::Ones(nv, config_.input_channels());
    if (config_.input_features == InputFeatures::occupancy_offset) {
      const double s = config_.voxel_size;
      for (Eigen::Index v = 0; v < nv; ++v) {
        const auto& members = prep.grid.voxel_to_points[static_cast<std::size_t>(v)];
        const auto& c = prep.grid.voxel_coords[static_cast<std::size_t>(v)];
        Vec3 mean = Vec3::Zero();
        for (int i : members) mean += cloud.point(static_cast<std::size_t>(i));
        mean /= static_cast<double>(members.size());
        for (int k = 0; k < 3; ++k) prep.input(v, 1 + k) = static_cast<T>(mean[k] / s - c[k] - 0.5);
      }
    }
    return prep;
  }

  ForcePrediction<T> forward(const PointCloud& cloud) const { return forward(prepare(cloud)); }

  ForcePrediction<T> forward(const PreparedCloud<T>& prep, Tape<T>* tape = nullptr,
                             const ForwardOptions<T>& options = {}) const {
    const Rulebook& rb = prep.rulebook;
    Tape<T> local;
    Tape<T>& t = tape ? *tape : local;
    t = Tape<T>{};
    t.prepared = &prep;
    t.gate_overridden = options.gate_override.has_value();

    const Matrix<T>* x = &prep.input;
    for (const Conv& c : trunk_) {
      t.trunk.push_back(relu(conv_forward(rb, *x, c)));
      x = &t.trunk.back();
    }
    const int e = config_.encoder_layers();
    auto feature = [&](int f) -> const Matrix<T>& { return t.trunk[static_cast<std::size_t>(e - 1 + f)]; };

    for (const Block& b : blocks_) {
      typename Tape<T>::Block rec;
      rec.proj_decoder = relu(conv_forward(rb, *x, b.proj_decoder));
      rec.proj_skip = relu(conv_forward(rb, feature(b.skip_feature), b.proj_skip));
      if (options.gate_override) {
        rec.alpha = Matrix<T>::Constant(rec.proj_skip.rows(), 1, *options.gate_override);
      } else {
        rec.alpha = conv_forward(rb, rec.proj_skip, b.gate)
                        .unaryExpr([](T z) { return T(1) / (T(1) + std::exp(-z)); });
      }
      const auto a = rec.alpha.col(0).array();
      rec.fused = (rec.proj_decoder.array().colwise() * a + rec.proj_skip.array().colwise() * (T(1) - a)).matrix();
      rec.out = relu(conv_forward(rb, rec.fused, b.conv));
      t.blocks.push_back(std::move(rec));
      x = &t.blocks.back().out;
    }

    Matrix<T> h = *x;
    for (std::size_t l = 0; l + 1 < head_.size(); ++l) {
      Matrix<T> z = h * value(head_[l].weight);
      z.rowwise() += value(head_[l].bias).row(0);
      t.head.push_back(relu(z));
      h = t.head.back();
    }
    // The two force halves go through identical arithmetic so that equal
    // weights give bitwise equal forces.
    const auto& w_out = value(head_.back().weight);
    const auto& b_out = value(head_.back().bias);
    Matrix<T> external = h * w_out.leftCols(3);
    external.rowwise() += b_out.row(0).leftCols(3);
    Matrix<T> internal = h * w_out.rightCols(3);
    internal.rowwise() += b_out.row(0).rightCols(3);
    return make_prediction<T>(devoxelize(prep.grid, external), devoxelize(prep.grid, internal));
  }

  /// Accumulates parameter gradients of a scalar objective given its
  /// gradients with respect to the external and internal force fields.
  void backward(const Tape<T>& t, const Matrix<T>& grad_external, const Matrix<T>& grad_internal) {
    const PreparedCloud<T>& prep = *t.prepared;
    const Rulebook& rb = prep.rulebook;
    const auto nv = static_cast<Eigen::Index>(prep.grid.num_voxels());

    Matrix<T> grad_e = Matrix<T>::Zero(nv, 3);
    Matrix<T> grad_i = Matrix<T>::Zero(nv, 3);
    for (std::size_t i = 0; i < prep.grid.num_points(); ++i) {
      const auto v = prep.grid.point_to_voxel[i];
      const auto r = static_cast<Eigen::Index>(i);
      grad_e.row(v) += grad_external.row(r);
      grad_i.row(v) += grad_internal.row(r);
    }

    const Matrix<T>& decoder_out = blocks_.empty() ? t.trunk.back() : t.blocks.back().out;
    const std::size_t last = head_.size() - 1;
    const Matrix<T>& last_in = last == 0 ? decoder_out : t.head[last - 1];
    Matrix<T> grad;
    {
      auto& gw = grad_of(head_[last].weight);
      auto& gb = grad_of(head_[last].bias);
      const auto& w = value(head_[last].weight);
      gw.leftCols(3).noalias() += last_in.transpose() * grad_e;
      gw.rightCols(3).noalias() += last_in.transpose() * grad_i;
      gb.leftCols(3) += grad_e.colwise().sum();
      gb.rightCols(3) += grad_i.colwise().sum();
      Matrix<T> grad_in = grad_e * w.leftCols(3).transpose();
      grad_in.noalias() += grad_i * w.rightCols(3).transpose();
      grad = relu_backward(last_in, grad_in);
    }
    for (std::size_t l = last; l-- > 0;) {
      const Matrix<T>& in = l == 0 ? decoder_out : t.head[l - 1];
      grad_of(head_[l].weight).noalias() += in.transpose() * grad;
      grad_of(head_[l].bias) += grad.colwise().sum();
      Matrix<T> grad_in = grad * value(head_[l].weight).transpose();
      grad = relu_backward(in, grad_in);
    }
    // `grad` now holds d/d(pre-activation) of the decoder output.

    const int e = config_.encoder_layers();
    std::vector<Matrix<T>> grad_trunk(t.trunk.size());
    for (std::size_t l = 0; l < t.trunk.size(); ++l) grad_trunk[l] = Matrix<T>::Zero(nv, t.trunk[l].cols());

    for (std::size_t j = blocks_.size(); j-- > 0;) {
      const Block& b = blocks_[j];
      const auto& rec = t.blocks[j];
      const Matrix<T>& dec_in = j == 0 ? t.trunk.back() : t.blocks[j - 1].out;
      const auto skip_index = static_cast<std::size_t>(e - 1 + b.skip_feature);
      const Matrix<T>& skip_in = t.trunk[skip_index];

      const Matrix<T> grad_fused = conv_backward(rb, rec.fused, b.conv, grad);
      const auto a = rec.alpha.col(0).array();
      Matrix<T> grad_pd = (grad_fused.array().colwise() * a).matrix();
      Matrix<T> grad_ps = (grad_fused.array().colwise() * (T(1) - a)).matrix();
      if (!t.gate_overridden) {
        const Eigen::Array<T, Eigen::Dynamic, 1> grad_alpha =
            (grad_fused.array() * (rec.proj_decoder - rec.proj_skip).array()).rowwise().sum();
        const Matrix<T> grad_gate = (grad_alpha * a * (T(1) - a)).matrix();
        grad_ps += conv_backward(rb, rec.proj_skip, b.gate, grad_gate);
      }
      grad_trunk[skip_index] += conv_backward(rb, skip_in, b.proj_skip, relu_backward(rec.proj_skip, grad_ps));
      Matrix<T> grad_dec = conv_backward(rb, dec_in, b.proj_decoder, relu_backward(rec.proj_decoder, grad_pd));
      if (j == 0) {
        grad_trunk.back() += grad_dec;
      } else {
        grad = relu_backward(t.blocks[j - 1].out, grad_dec);
      }
    }
    if (blocks_.empty()) grad_trunk.back() += grad;  // unreachable for valid configs

    for (std::size_t l = trunk_.size(); l-- > 0;) {
      const Matrix<T> grad_pre = relu_backward(t.trunk[l], grad_trunk[l]);
      const Matrix<T>& in = l == 0 ? prep.input : t.trunk[l - 1];
      Matrix<T> grad_in = conv_backward(rb, in, trunk_[l], grad_pre, l > 0);
      if (l > 0) grad_trunk[l - 1] += grad_in;
    }
  }

  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  template <class U>
  friend class Network;

  template <class Rng>
  int add_param(const std::string& name, int rows, int cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Parameter<T> p;
    p.name = name;
    p.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
    p.grad = Matrix<T>::Zero(rows, cols);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  const Matrix<T>& value(int idx) const { return params_[static_cast<std::size_t>(idx)].value; }
  Matrix<T>& grad_of(int idx) { return params_[static_cast<std::size_t>(idx)].grad; }

  Matrix<T> conv_forward(const Rulebook& rb, const Matrix<T>& x, const Conv& c) const {
    return sparse_conv_forward<T>(rb, x, value(c.weight), value(c.bias));
  }

  Matrix<T> conv_backward(const Rulebook& rb, const Matrix<T>& x, const Conv& c, const Matrix<T>& grad_out,
                          bool need_input_grad = true) {
    return sparse_conv_backward<T>(rb, x, value(c.weight), grad_out, grad_of(c.weight), grad_of(c.bias),
                                   need_input_grad);
  }

  static Matrix<T> relu(Matrix<T> z) {
    z = z.cwiseMax(T(0));
    return z;
  }

  // Gradient through ReLU given its output.
  static Matrix<T> relu_backward(const Matrix<T>& activated, const Matrix<T>& grad) {
    return (activated.array() > T(0)).select(grad, T(0));
  }

  NetworkConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<Conv> trunk_;
  std::vector<Block> blocks_;
  std::vector<Conv> head_;
};

}  // namespace mc4ad
